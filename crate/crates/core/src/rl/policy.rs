//! Shared actor-critic network with attention pooling over intruders.
//!
//! ```text
//! own features ──► 2-layer tanh MLP ──► e_own ──┬──────────────► [e_own ; pooled] ──► tanh trunk ──► logits (3)
//!                                               │ query                                          └─► value (1)
//! intruder j   ──► 2-layer tanh MLP ──► e_j ────┴─ keys/values ─► softmax-attention ─► pooled
//! ```
//!
//! All weights live in one flat `Vec<f64>`; [`Layout`] names the slices.
//! Gradients are computed by an explicit backward pass over the same graph.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionMask, Features, INTRUDER_DIM, OWN_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub hidden: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        NetShape { hidden: 64 }
    }
}

/// Offsets of each weight block inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub hidden: usize,
    own_w1: usize,
    own_b1: usize,
    own_w2: usize,
    own_b2: usize,
    int_w1: usize,
    int_b1: usize,
    int_w2: usize,
    int_b2: usize,
    att_q: usize,
    att_k: usize,
    att_v: usize,
    trunk_w: usize,
    trunk_b: usize,
    pi_w: usize,
    pi_b: usize,
    v_w: usize,
    v_b: usize,
    len: usize,
}

impl Layout {
    pub fn new(shape: NetShape) -> Self {
        let h = shape.hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let own_w1 = take(h * OWN_DIM);
        let own_b1 = take(h);
        let own_w2 = take(h * h);
        let own_b2 = take(h);
        let int_w1 = take(h * INTRUDER_DIM);
        let int_b1 = take(h);
        let int_w2 = take(h * h);
        let int_b2 = take(h);
        let att_q = take(h * h);
        let att_k = take(h * h);
        let att_v = take(h * h);
        let trunk_w = take(h * 2 * h);
        let trunk_b = take(h);
        let pi_w = take(3 * h);
        let pi_b = take(3);
        let v_w = take(h);
        let v_b = take(1);
        Layout {
            hidden: h,
            own_w1,
            own_b1,
            own_w2,
            own_b2,
            int_w1,
            int_b1,
            int_w2,
            int_b2,
            att_q,
            att_k,
            att_v,
            trunk_w,
            trunk_b,
            pi_w,
            pi_b,
            v_w,
            v_b,
            len: at,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Learnable weights of the shared policy/value network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub shape: NetShape,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub logits: [f64; 3],
    /// Masked entries are exactly zero.
    pub probs: [f64; 3],
    /// Masked entries are `-inf`.
    pub log_probs: [f64; 3],
    pub value: f64,
}

impl PolicyOutput {
    /// Entropy of the masked distribution, nats.
    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .zip(&self.log_probs)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, lp)| -p * lp)
            .sum()
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    own_x: [f64; OWN_DIM],
    own_h: Vec<f64>,
    own_e: Vec<f64>,
    n_int: usize,
    int_x: Vec<[f64; INTRUDER_DIM]>,
    int_h: Vec<f64>,
    int_e: Vec<f64>,
    q: Vec<f64>,
    /// `Wkᵀ q`, so scores are `e_j · u / sqrt(H)`.
    u: Vec<f64>,
    alpha: Vec<f64>,
    /// `Σ α_j e_j`; pooled output is `Wv · e_bar`.
    e_bar: Vec<f64>,
    trunk_in: Vec<f64>,
    trunk: Vec<f64>,
    mask: ActionMask,
}

impl PolicyParams {
    pub fn layout(&self) -> Layout {
        Layout::new(self.shape)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Glorot-uniform weights, zero biases, and a near-uniform initial policy.
    pub fn init<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Self {
        let l = Layout::new(shape);
        let h = shape.hidden;
        let mut w = vec![0.0; l.len];
        let mut fill = |off: usize, rows: usize, cols: usize, gain: f64| {
            let bound = gain * (6.0 / (rows + cols) as f64).sqrt();
            for v in &mut w[off..off + rows * cols] {
                *v = rng.gen_range(-bound..bound);
            }
        };
        fill(l.own_w1, h, OWN_DIM, 1.0);
        fill(l.own_w2, h, h, 1.0);
        fill(l.int_w1, h, INTRUDER_DIM, 1.0);
        fill(l.int_w2, h, h, 1.0);
        fill(l.att_q, h, h, 1.0);
        fill(l.att_k, h, h, 1.0);
        fill(l.att_v, h, h, 1.0);
        fill(l.trunk_w, h, 2 * h, 1.0);
        fill(l.pi_w, 3, h, 0.01);
        fill(l.v_w, 1, h, 1.0);
        PolicyParams { shape, weights: w }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    /// Action distribution and state value. Errors on an all-false mask.
    pub fn forward(&self, features: &Features, mask: &ActionMask) -> Result<PolicyOutput> {
        let mut tape = Tape::default();
        self.forward_tape(features, mask, &mut tape)
    }

    pub fn forward_tape(
        &self,
        features: &Features,
        mask: &ActionMask,
        tape: &mut Tape,
    ) -> Result<PolicyOutput> {
        if !mask.iter().any(|&m| m) {
            return Err(Error::Contract("action mask allows no action".into()));
        }
        let l = self.layout();
        let h = l.hidden;
        let w = &self.weights;

        tape.own_x = features.own;
        tape.mask = *mask;
        dense_tanh(w, l.own_w1, l.own_b1, h, &features.own, &mut tape.own_h);
        let own_h = std::mem::take(&mut tape.own_h);
        dense_tanh(w, l.own_w2, l.own_b2, h, &own_h, &mut tape.own_e);
        tape.own_h = own_h;

        let n = features.intruders.len();
        tape.n_int = n;
        tape.int_x.clear();
        tape.int_x.extend_from_slice(&features.intruders);
        tape.int_h.resize(n * h, 0.0);
        tape.int_e.resize(n * h, 0.0);
        let mut buf = Vec::with_capacity(h);
        for j in 0..n {
            dense_tanh(w, l.int_w1, l.int_b1, h, &features.intruders[j], &mut buf);
            tape.int_h[j * h..(j + 1) * h].copy_from_slice(&buf);
            let mut e = Vec::with_capacity(h);
            dense_tanh(w, l.int_w2, l.int_b2, h, &buf, &mut e);
            tape.int_e[j * h..(j + 1) * h].copy_from_slice(&e);
        }

        // Attention pooling; empty intruder sets pool to zero.
        tape.trunk_in.clear();
        tape.trunk_in.extend_from_slice(&tape.own_e);
        tape.alpha.clear();
        if n == 0 {
            tape.q.clear();
            tape.u.clear();
            tape.e_bar.clear();
            tape.trunk_in.resize(2 * h, 0.0);
        } else {
            matvec(w, l.att_q, h, h, &tape.own_e, &mut tape.q);
            matvec_t(w, l.att_k, h, h, &tape.q, &mut tape.u);
            let scale = 1.0 / (h as f64).sqrt();
            let scores: Vec<f64> = (0..n)
                .map(|j| dot(&tape.int_e[j * h..(j + 1) * h], &tape.u) * scale)
                .collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            tape.alpha.extend(exps.iter().map(|e| e / z));
            tape.e_bar.clear();
            tape.e_bar.resize(h, 0.0);
            for j in 0..n {
                let a = tape.alpha[j];
                for (acc, e) in tape.e_bar.iter_mut().zip(&tape.int_e[j * h..(j + 1) * h]) {
                    *acc += a * e;
                }
            }
            let mut pooled = Vec::with_capacity(h);
            matvec(w, l.att_v, h, h, &tape.e_bar, &mut pooled);
            tape.trunk_in.extend_from_slice(&pooled);
        }

        dense_tanh(w, l.trunk_w, l.trunk_b, h, &tape.trunk_in, &mut tape.trunk);

        let mut logits = [0.0; 3];
        for (k, lg) in logits.iter_mut().enumerate() {
            *lg = w[l.pi_b + k] + dot(&w[l.pi_w + k * h..l.pi_w + (k + 1) * h], &tape.trunk);
        }
        let value = w[l.v_b] + dot(&w[l.v_w..l.v_w + h], &tape.trunk);
        let (probs, log_probs) = masked_softmax(&logits, mask);
        Ok(PolicyOutput {
            logits,
            probs,
            log_probs,
            value,
        })
    }

    /// Accumulates into `grad` the gradient of a scalar loss given its
    /// derivatives with respect to the logits and the value output.
    pub fn backward(&self, tape: &Tape, d_logits: &[f64; 3], d_value: f64, grad: &mut [f64]) {
        let l = self.layout();
        let h = l.hidden;
        let w = &self.weights;
        debug_assert_eq!(grad.len(), w.len());

        // Heads.
        let mut d_trunk = vec![0.0; h];
        for k in 0..3 {
            if !tape.mask[k] {
                continue;
            }
            let g = d_logits[k];
            grad[l.pi_b + k] += g;
            let row = l.pi_w + k * h;
            for i in 0..h {
                grad[row + i] += g * tape.trunk[i];
                d_trunk[i] += g * w[row + i];
            }
        }
        grad[l.v_b] += d_value;
        for i in 0..h {
            grad[l.v_w + i] += d_value * tape.trunk[i];
            d_trunk[i] += d_value * w[l.v_w + i];
        }

        let mut d_trunk_in = vec![0.0; 2 * h];
        dense_tanh_backward(
            w,
            grad,
            l.trunk_w,
            l.trunk_b,
            h,
            &tape.trunk_in,
            &tape.trunk,
            &d_trunk,
            &mut d_trunk_in,
        );

        let mut d_own_e = d_trunk_in[..h].to_vec();
        let n = tape.n_int;
        let mut d_int_e = vec![0.0; n * h];
        if n > 0 {
            let d_pooled = &d_trunk_in[h..];
            // pooled = Wv e_bar
            let mut d_ebar = vec![0.0; h];
            for r in 0..h {
                let g = d_pooled[r];
                let row = l.att_v + r * h;
                for c in 0..h {
                    grad[row + c] += g * tape.e_bar[c];
                    d_ebar[c] += g * w[row + c];
                }
            }
            // e_bar = Σ α_j e_j
            let d_alpha: Vec<f64> = (0..n)
                .map(|j| dot(&d_ebar, &tape.int_e[j * h..(j + 1) * h]))
                .collect();
            let mean: f64 = tape.alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
            let scale = 1.0 / (h as f64).sqrt();
            let mut d_u = vec![0.0; h];
            for j in 0..n {
                let a = tape.alpha[j];
                let d_score = a * (d_alpha[j] - mean);
                let e = &tape.int_e[j * h..(j + 1) * h];
                let de = &mut d_int_e[j * h..(j + 1) * h];
                for c in 0..h {
                    de[c] += a * d_ebar[c] + d_score * scale * tape.u[c];
                    d_u[c] += d_score * scale * e[c];
                }
            }
            // u = Wkᵀ q
            let mut d_q = vec![0.0; h];
            for r in 0..h {
                let row = l.att_k + r * h;
                let qr = tape.q[r];
                let mut acc = 0.0;
                for c in 0..h {
                    grad[row + c] += qr * d_u[c];
                    acc += w[row + c] * d_u[c];
                }
                d_q[r] = acc;
            }
            // q = Wq e_own
            for r in 0..h {
                let g = d_q[r];
                let row = l.att_q + r * h;
                for c in 0..h {
                    grad[row + c] += g * tape.own_e[c];
                    d_own_e[c] += g * w[row + c];
                }
            }
        }

        // Own encoder.
        let mut d_own_h = vec![0.0; h];
        dense_tanh_backward(
            w,
            grad,
            l.own_w2,
            l.own_b2,
            h,
            &tape.own_h,
            &tape.own_e,
            &d_own_e,
            &mut d_own_h,
        );
        let mut sink = vec![0.0; OWN_DIM];
        dense_tanh_backward(
            w,
            grad,
            l.own_w1,
            l.own_b1,
            h,
            &tape.own_x,
            &tape.own_h,
            &d_own_h,
            &mut sink,
        );

        // Intruder encoder, shared across intruders.
        let mut d_h = vec![0.0; h];
        let mut sink = vec![0.0; INTRUDER_DIM];
        for j in 0..n {
            let hj = &tape.int_h[j * h..(j + 1) * h];
            let ej = &tape.int_e[j * h..(j + 1) * h];
            d_h.iter_mut().for_each(|v| *v = 0.0);
            dense_tanh_backward(
                w,
                grad,
                l.int_w2,
                l.int_b2,
                h,
                hj,
                ej,
                &d_int_e[j * h..(j + 1) * h],
                &mut d_h,
            );
            sink.iter_mut().for_each(|v| *v = 0.0);
            dense_tanh_backward(
                w,
                grad,
                l.int_w1,
                l.int_b1,
                h,
                &tape.int_x[j],
                hj,
                &d_h,
                &mut sink,
            );
        }
    }
}

/// Softmax restricted to allowed actions.
pub fn masked_softmax(logits: &[f64; 3], mask: &ActionMask) -> ([f64; 3], [f64; 3]) {
    let m = (0..3)
        .filter(|&k| mask[k])
        .map(|k| logits[k])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut exps = [0.0; 3];
    for k in 0..3 {
        if mask[k] {
            exps[k] = (logits[k] - m).exp();
        }
    }
    let z: f64 = exps.iter().sum();
    let log_z = z.ln();
    let mut probs = [0.0; 3];
    let mut log_probs = [f64::NEG_INFINITY; 3];
    for k in 0..3 {
        if mask[k] {
            probs[k] = exps[k] / z;
            log_probs[k] = logits[k] - m - log_z;
        }
    }
    (probs, log_probs)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = W x` for a row-major `rows × cols` block at `off`.
fn matvec(w: &[f64], off: usize, rows: usize, cols: usize, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend((0..rows).map(|r| dot(&w[off + r * cols..off + (r + 1) * cols], x)));
}

/// `out = Wᵀ x` for a row-major `rows × cols` block at `off`.
fn matvec_t(w: &[f64], off: usize, rows: usize, cols: usize, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.resize(cols, 0.0);
    for r in 0..rows {
        let xr = x[r];
        for (o, wv) in out.iter_mut().zip(&w[off + r * cols..off + (r + 1) * cols]) {
            *o += xr * wv;
        }
    }
}

fn dense_tanh(w: &[f64], w_off: usize, b_off: usize, rows: usize, x: &[f64], out: &mut Vec<f64>) {
    let cols = x.len();
    out.clear();
    out.extend(
        (0..rows)
            .map(|r| (w[b_off + r] + dot(&w[w_off + r * cols..w_off + (r + 1) * cols], x)).tanh()),
    );
}

/// Backward of `y = tanh(W x + b)`; accumulates weight grads and adds `Wᵀ δ` into `dx`.
#[allow(clippy::too_many_arguments)]
fn dense_tanh_backward(
    w: &[f64],
    grad: &mut [f64],
    w_off: usize,
    b_off: usize,
    rows: usize,
    x: &[f64],
    y: &[f64],
    dy: &[f64],
    dx: &mut [f64],
) {
    let cols = x.len();
    for r in 0..rows {
        let delta = dy[r] * (1.0 - y[r] * y[r]);
        if delta == 0.0 {
            continue;
        }
        grad[b_off + r] += delta;
        let row = w_off + r * cols;
        for c in 0..cols {
            grad[row + c] += delta * x[c];
            dx[c] += delta * w[row + c];
        }
    }
}
