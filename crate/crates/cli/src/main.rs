//! `uam`: simulate, train, evaluate and sweep noise-aware altitude policies.
//!
//! Exit codes: 0 success, 1 invalid input, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use uam_core::eval::{
    self, environment, export_metrics, metrics_csv, read_trace, run_episode, sweep_rho,
    sweep_summary_csv, write_trace, zone_noise, zone_report_csv, Format, Policy, SweepPolicies,
};
use uam_core::mdp::RewardConfig;
use uam_core::network::{bundled, generate_scenario, load_network, Scenario};
use uam_core::noise::{fit_npd, Condition, NoiseSample, NpdModel};
use uam_core::rl::train::write_train_log;
use uam_core::rl::{train, Checkpoint, TrainConfig};
use uam_core::sim::SimConfig;
use uam_core::util::{fmt_sig6, read_to_string, write_atomic};
use uam_core::{Error, Result};

#[derive(Parser)]
#[command(name = "uam", version, about = "Noise-aware UAM altitude control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode under a checkpoint or the hold baseline.
    Simulate(SimulateArgs),
    /// Train a policy for one value of rho.
    Train(TrainArgs),
    /// Evaluate a checkpoint over several seeds.
    Eval(EvalArgs),
    /// Train (or load) one policy per rho and tabulate the tradeoff.
    Sweep(SweepArgs),
    /// Fit NPD regression coefficients to sample points.
    #[command(name = "fit-npd")]
    FitNpd(FitNpdArgs),
    /// Per-zone noise increase of a saved trace.
    #[command(name = "noise-report")]
    NoiseReport(NoiseReportArgs),
    /// Write a scenario with generated flights for a network file.
    Generate(GenerateArgs),
}

/// Simulator settings; every flag defaults to the built-in value.
#[derive(Args, Clone, Default)]
struct SimFlags {
    #[arg(long, visible_alias = "dt")]
    dt: Option<f64>,
    #[arg(long = "decision_interval", visible_alias = "decision-interval")]
    decision_interval: Option<f64>,
    #[arg(long = "cruise_speed", visible_alias = "cruise-speed")]
    cruise_speed: Option<f64>,
    #[arg(long = "climb_rate", visible_alias = "climb-rate")]
    climb_rate: Option<f64>,
    #[arg(long = "d_comm", visible_alias = "d-comm")]
    d_comm: Option<f64>,
    #[arg(long = "d_los", visible_alias = "d-los")]
    d_los: Option<f64>,
    #[arg(long = "max_episode_time", visible_alias = "max-episode-time")]
    max_episode_time: Option<f64>,
}

impl SimFlags {
    fn apply(&self, mut c: SimConfig) -> SimConfig {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut c.dt, self.dt);
        set(&mut c.decision_interval, self.decision_interval);
        set(&mut c.cruise_speed, self.cruise_speed);
        set(&mut c.climb_rate, self.climb_rate);
        set(&mut c.d_comm, self.d_comm);
        set(&mut c.d_los, self.d_los);
        set(&mut c.max_episode_time, self.max_episode_time);
        c
    }
}

/// PPO settings; every flag defaults to the built-in value.
#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "gae_lambda", visible_alias = "gae-lambda")]
    gae_lambda: Option<f64>,
    #[arg(long = "clip_eps", visible_alias = "clip-eps")]
    clip_eps: Option<f64>,
    #[arg(long = "learning_rate", visible_alias = "learning-rate")]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "minibatch_size", visible_alias = "minibatch-size")]
    minibatch_size: Option<usize>,
    /// Decision ticks per rollout; full episodes when omitted.
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long = "entropy_coef", visible_alias = "entropy-coef")]
    entropy_coef: Option<f64>,
    #[arg(long = "value_coef", visible_alias = "value-coef")]
    value_coef: Option<f64>,
    #[arg(long = "max_grad_norm", visible_alias = "max-grad-norm")]
    max_grad_norm: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Checkpoint every N iterations (0 disables).
    #[arg(long = "checkpoint_every", visible_alias = "checkpoint-every")]
    checkpoint_every: Option<u64>,
}

impl TrainFlags {
    fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            gamma,
            gae_lambda,
            clip_eps,
            learning_rate,
            epochs,
            minibatch_size,
            entropy_coef,
            value_coef,
            max_grad_norm,
            hidden,
            checkpoint_every
        );
        if self.horizon.is_some() {
            c.horizon = self.horizon;
        }
        c
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file, or `bundled:<name>`.
    #[arg(long)]
    scenario: String,
    /// Checkpoint path or `baseline:hold`.
    #[arg(long)]
    policy: String,
    #[arg(long)]
    seed: u64,
    /// Per-tick trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Metrics file; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sample actions from the policy instead of taking the argmax.
    #[arg(long)]
    sample: bool,
    /// Reward weight used to score the hold baseline.
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[command(flatten)]
    sim: SimFlags,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    rho: f64,
    #[arg(long)]
    iterations: u64,
    #[arg(long)]
    seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration metrics CSV; defaults to `<out>.metrics.csv`.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Separation penalty per same-level intruder.
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    sim: SimFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sample: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long, value_delimiter = ',', required = true)]
    rhos: Vec<f64>,
    #[arg(long)]
    iterations: u64,
    /// Evaluation seeds.
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long = "out-dir", visible_alias = "out_dir")]
    out_dir: PathBuf,
    /// Training seed; defaults to the first evaluation seed.
    #[arg(long = "train-seed", visible_alias = "train_seed")]
    train_seed: Option<u64>,
    /// Load `rho_<value>.json` checkpoints from this directory instead of training.
    #[arg(long = "checkpoint-dir", visible_alias = "checkpoint_dir")]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    sample: bool,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    sim: SimFlags,
}

#[derive(Args)]
struct FitNpdArgs {
    /// CSV with columns `distance_ft,level_db`.
    #[arg(long)]
    samples: PathBuf,
    /// Output NPD model file.
    #[arg(long)]
    out: PathBuf,
    /// Condition the fitted row replaces.
    #[arg(long, default_value = "L-Centerline")]
    condition: String,
    /// Model to start from; the built-in curves when omitted.
    #[arg(long)]
    base: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseReportArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Network file or `bundled:<name>`; any flights in it are ignored.
    #[arg(long)]
    network: String,
    #[arg(long)]
    aircraft: usize,
    /// Comma list of `ORIGIN:DESTINATION`.
    #[arg(long, value_delimiter = ',', required = true)]
    od: Vec<String>,
    #[arg(long, default_value_t = 60.0)]
    spacing: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load_scenario(spec: &str) -> Result<Arc<Scenario>> {
    let text = match spec {
        "bundled:south_austin" => bundled::SOUTH_AUSTIN.to_string(),
        "bundled:line3" => bundled::LINE3.to_string(),
        "bundled:toy_corridor" => bundled::TOY_CORRIDOR.to_string(),
        s if s.starts_with("bundled:") => {
            return Err(Error::validation(
                "scenario",
                format!("no bundled scenario {s:?}"),
            ))
        }
        path => read_to_string(Path::new(path))?,
    };
    Ok(Arc::new(Scenario::from_json(&text).map_err(
        |e| match e {
            Error::Parse { message, .. } => Error::parse(spec, message),
            other => other,
        },
    )?))
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::validation(
            "rho",
            format!("must lie in [0, 1], got {rho}"),
        ))
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let layers = scenario.network.layers.clone();
    let (policy, ck) = Policy::load(&a.policy)?;
    let (sim, reward) = match &ck {
        Some(ck) => {
            ck.check_layers(&layers)?;
            (a.sim.apply(ck.sim_config), ck.reward_config)
        }
        None => {
            check_rho(a.rho)?;
            let sim = a.sim.apply(SimConfig::default());
            (sim, RewardConfig::new(a.rho, &layers, sim.d_los))
        }
    };
    let env = environment(scenario, sim, reward)?;
    let (metrics, record) = run_episode(&env, &policy, a.seed, !a.sample)?;
    if let Some(path) = &a.trace {
        write_trace(path, &record.trace)?;
    }
    match &a.out {
        Some(path) => export_metrics(&[metrics], &layers, path, Format::from_path(path))?,
        None => print!("{}", metrics_csv(&[metrics], &layers)?),
    }
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    check_rho(a.rho)?;
    let scenario = load_scenario(&a.scenario)?;
    let layers = scenario.network.layers.clone();
    let sim = a.sim.apply(SimConfig::default());
    let mut reward = RewardConfig::new(a.rho, &layers, sim.d_los);
    if let Some(l) = a.lambda {
        reward.lambda = l;
    }
    let config = a.train.apply(TrainConfig {
        iterations: a.iterations,
        seed: a.seed,
        ..TrainConfig::default()
    });
    let env = environment(scenario, sim, reward)?;
    let out = a.out.clone();
    let every = config.checkpoint_every;
    let outcome = train(&env, &config, |row, params| {
        if every > 0 && row.iteration % every == 0 && row.iteration < config.iterations {
            let path = sibling(&out, &format!("iter{}.json", row.iteration));
            Checkpoint::new(
                params.clone(),
                row.iteration,
                config,
                reward,
                sim,
                layers.clone(),
            )
            .save(&path)?;
        }
        Ok(())
    })?;
    Checkpoint::new(
        outcome.params,
        config.iterations,
        config,
        reward,
        sim,
        layers,
    )
    .save(&a.out)?;
    let metrics = a.metrics.unwrap_or_else(|| sibling(&a.out, "metrics.csv"));
    write_train_log(&metrics, &outcome.log)
}

/// `dir/name.json` → `dir/name.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let layers = scenario.network.layers.clone();
    let ck = Checkpoint::load(&a.checkpoint)?;
    ck.check_layers(&layers)?;
    let env = environment(scenario, ck.sim_config, ck.reward_config)?;
    let policy = Policy::Learned(ck.params);
    let metrics = a
        .seeds
        .iter()
        .map(|&s| run_episode(&env, &policy, s, !a.sample).map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()?;
    export_metrics(&metrics, &layers, &a.out, Format::from_path(&a.out))
}

fn rho_file(dir: &Path, rho: f64) -> PathBuf {
    dir.join(format!("rho_{}.json", fmt_sig6(rho)))
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    for &r in &a.rhos {
        check_rho(r)?;
    }
    let scenario = load_scenario(&a.scenario)?;
    let layers = scenario.network.layers.clone();
    let sim = a.sim.apply(SimConfig::default());
    let config = a.train.apply(TrainConfig {
        iterations: a.iterations,
        seed: a.train_seed.unwrap_or(a.seeds[0]),
        ..TrainConfig::default()
    });
    let policies = match &a.checkpoint_dir {
        Some(dir) => SweepPolicies::Load(
            a.rhos
                .iter()
                .map(|&r| Checkpoint::load(&rho_file(dir, r)))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => SweepPolicies::Train(&config),
    };
    let sim = match &policies {
        SweepPolicies::Load(cks) => cks.first().map(|c| c.sim_config).unwrap_or(sim),
        SweepPolicies::Train(_) => sim,
    };
    let out = sweep_rho(scenario, sim, &a.rhos, &a.seeds, policies, !a.sample)?;
    if a.checkpoint_dir.is_none() {
        for (ck, &r) in out.checkpoints.iter().zip(&a.rhos) {
            ck.save(&rho_file(&a.out_dir, r))?;
        }
    }
    export_metrics(
        &out.result.cells,
        &layers,
        &a.out_dir.join("cells.csv"),
        Format::Csv,
    )?;
    write_atomic(
        &a.out_dir.join("sweep.csv"),
        sweep_summary_csv(&out.result.rows, &layers)?.as_bytes(),
    )?;
    print!("{}", sweep_summary_csv(&out.result.rows, &layers)?);
    Ok(())
}

fn run_fit(a: FitNpdArgs) -> Result<()> {
    let condition: Condition = a.condition.parse()?;
    let text = read_to_string(&a.samples)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let samples = reader
        .deserialize::<NoiseSample>()
        .map(|r| r.map_err(|e| Error::parse(a.samples.display().to_string(), e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_npd(&samples)?;
    let mut model = match &a.base {
        Some(p) => NpdModel::load(p)?,
        None => NpdModel::default(),
    };
    model.set_coefficients(condition, fit.coefficients);
    model.save(&a.out)?;
    let c = fit.coefficients;
    println!(
        "{condition}: c0={} c1={} c2={} rms={}",
        fmt_sig6(c.c0),
        fmt_sig6(c.c1),
        fmt_sig6(c.c2),
        fmt_sig6(fit.rms_residual)
    );
    Ok(())
}

fn run_noise_report(a: NoiseReportArgs) -> Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let trace = read_trace(&a.trace)?;
    let noise = zone_noise(&trace, &scenario.network, &NpdModel::default())?;
    let text = zone_report_csv(&noise, &scenario.network)?;
    write_atomic(&a.out, text.as_bytes())?;
    let means: Vec<f64> = noise.zones.iter().filter_map(|z| z.mean_db).collect();
    match eval::median(&means) {
        Some(m) => println!("median zone increase: {} dB", fmt_sig6(m)),
        None => println!("median zone increase: none (no aircraft overhead)"),
    }
    Ok(())
}

fn run_generate(a: GenerateArgs) -> Result<()> {
    let network = if a.network.starts_with("bundled:") {
        load_scenario(&a.network)?.network.clone()
    } else {
        Arc::new(load_network(Path::new(&a.network))?)
    };
    let od =
        a.od.iter()
            .map(|p| {
                p.split_once(':')
                    .map(|(o, d)| (o.trim().to_string(), d.trim().to_string()))
                    .ok_or_else(|| {
                        Error::validation("od", format!("expected ORIGIN:DESTINATION, got {p:?}"))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
    generate_scenario(network, a.aircraft, &od, a.spacing, a.seed)?.save(&a.out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::FitNpd(a) => run_fit(a),
        Command::NoiseReport(a) => run_noise_report(a),
        Command::Generate(a) => run_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
