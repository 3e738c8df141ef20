use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use hcn_core::catalog::{profile_for, zipf_popularity, CachePolicy};
use hcn_core::config::{load_config, NetworkConfig};
use hcn_core::link::BoundSide;
use hcn_core::qos::AnalyticModel;
use hcn_core::sim::{run_trials_multi, trial_outcomes, SimContext};
use hcn_core::sweep::{
    compare, run_sweep, write_comparison, Engines, Manifest, SweepParam, SweepSpec,
};
use hcn_core::{Error, Result};

#[derive(Parser)]
#[command(name = "hcn", version, about = "Cache-enabled hybrid mmWave / μWave network evaluator")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Report every violated configuration invariant.
    Validate(ConfigArg),
    /// Evaluate the analytic bounds at one configuration.
    Analytic(AnalyticArgs),
    /// Run the Monte Carlo simulator at one configuration.
    Simulate(SimulateArgs),
    /// Sweep one parameter and write CSVs plus a manifest.
    Sweep(SweepArgs),
    /// Sweep with both engines and report whether each bracket meets the
    /// simulator's confidence interval.
    Compare(SweepArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundArg {
    Lower,
    Upper,
    Both,
}

impl BoundArg {
    fn sides(self) -> Vec<BoundSide> {
        match self {
            BoundArg::Lower => vec![BoundSide::Lower],
            BoundArg::Upper => vec![BoundSide::Upper],
            BoundArg::Both => BoundSide::BOTH.to_vec(),
        }
    }
}

#[derive(Args)]
struct AnalyticArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, default_value = "mc")]
    policy: CachePolicy,
    #[arg(long, value_enum, default_value = "both")]
    bound: BoundArg,
    /// Seed for the random-caching profile.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, default_value = "mc")]
    policy: CachePolicy,
    #[arg(long, default_value_t = 20_000)]
    trials: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write one CSV row per trial.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Built-in sweep (fig1 ... fig7).
    #[arg(long)]
    preset: Option<String>,
    /// Swept parameter for a custom sweep.
    #[arg(long)]
    param: Option<SweepParam>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    values: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<CachePolicy>>,
    #[arg(long)]
    engines: Option<Engines>,
    #[arg(long, value_enum)]
    bound: Option<BoundArg>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Re-run exactly what a previous manifest describes.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        3
    } else {
        2
    }
}

fn emit(out: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn validate(a: &ConfigArg) -> Result<u8> {
    let cfg = load_config(a.config.as_deref())?;
    let diags = cfg.diagnostics();
    for d in &diags {
        println!("{d}");
    }
    if diags.is_empty() {
        println!("ok ({})", cfg.hash());
        Ok(0)
    } else {
        Ok(1)
    }
}

fn analytic(a: &AnalyticArgs) -> Result<u8> {
    let cfg = load_config(a.config.config.as_deref())?;
    let pop = zipf_popularity(cfg.f_count, cfg.upsilon)?;
    let profile = profile_for(&cfg, a.policy, a.seed)?;
    let model = AnalyticModel::new(&cfg)?;
    let reports = a
        .bound
        .sides()
        .into_iter()
        .map(|s| model.evaluate(&pop, &profile, s).map_err(|e| e.with_context(format!("policy {}", a.policy))))
        .collect::<Result<Vec<_>>>()?;
    emit(a.out.as_deref(), &serde_json::json!({
        "config_hash": cfg.hash(),
        "policy": a.policy,
        "reports": reports,
    }))?;
    Ok(0)
}

fn simulate(a: &SimulateArgs) -> Result<u8> {
    let cfg = load_config(a.config.config.as_deref())?;
    let pop = zipf_popularity(cfg.f_count, cfg.upsilon)?;
    let profile = profile_for(&cfg, a.policy, a.seed)?;
    let ctx = SimContext::new(&cfg, &pop, &profile)?;
    info!("simulating {} trials, seed {}", a.trials, a.seed);
    let rep = run_trials_multi(&ctx, a.trials, a.seed, &[cfg.n_retx])?;
    if let Some(path) = &a.dump {
        let rows = trial_outcomes(&ctx, a.trials, a.seed, cfg.n_retx)?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record(["seed", "trial", "file", "event", "distance", "attempts", "delivered", "delay"])?;
        for o in rows {
            w.write_record([
                a.seed.to_string(),
                o.trial.to_string(),
                (o.file + 1).to_string(),
                o.event.name().to_string(),
                o.distance.to_string(),
                o.attempts(cfg.n_retx).to_string(),
                o.delivered(cfg.n_retx).to_string(),
                o.delay(cfg.n_retx).to_string(),
            ])?;
        }
        w.flush()?;
    }
    emit(a.out.as_deref(), &serde_json::json!({
        "config_hash": cfg.hash(),
        "policy": a.policy,
        "report": rep,
    }))?;
    Ok(0)
}

fn sweep_inputs(a: &SweepArgs) -> Result<(NetworkConfig, SweepSpec)> {
    if let Some(m) = &a.manifest {
        let m = Manifest::load(m)?;
        m.config.validate()?;
        return Ok((m.config, m.spec));
    }
    let cfg = load_config(a.config.config.as_deref())?;
    let mut spec = match (&a.preset, a.param) {
        (Some(p), None) => SweepSpec::preset(p)?,
        (None, Some(param)) => {
            let mut s = SweepSpec::preset("fig1")?;
            s.name = format!("sweep_{param}");
            s.param = param;
            s.series = vec![hcn_core::sweep::SeriesSpec::plain(vec![cfg.n_retx])];
            s.values = vec![];
            s
        }
        (Some(_), Some(_)) => {
            return Err(Error::InvalidArgument("give either --preset or --param, not both".into()))
        }
        (None, None) => return Err(Error::InvalidArgument("one of --preset or --param is required".into())),
    };
    if let Some(v) = &a.values {
        spec.values = v.clone();
    }
    if let Some(p) = &a.policies {
        spec.policies = p.clone();
    }
    if let Some(e) = a.engines {
        spec.engines = e;
    }
    if let Some(b) = a.bound {
        spec.sides = b.sides();
    }
    if let Some(t) = a.trials {
        spec.trials = t;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.check()?;
    Ok((cfg, spec))
}

fn sweep(a: &SweepArgs) -> Result<u8> {
    let (cfg, spec) = sweep_inputs(a)?;
    info!("sweep {} over {} values", spec.name, spec.values.len());
    let m = run_sweep(&cfg, &spec, &a.out)?;
    for f in &m.files {
        println!("{}", a.out.join(&f.path).display());
    }
    Ok(0)
}

fn compare_cmd(a: &SweepArgs) -> Result<u8> {
    let (cfg, spec) = sweep_inputs(a)?;
    let rows = compare(&cfg, &spec)?;
    fs::create_dir_all(&a.out)?;
    let path = a.out.join(format!("{}_compare.csv", spec.name));
    write_comparison(&path, &rows)?;
    let asp = rows.iter().filter(|r| r.asp_contained).count();
    let lat = rows.iter().filter(|r| r.latency_contained).count();
    println!("{}", path.display());
    println!("asp bracket meets CI: {asp}/{}", rows.len());
    println!("latency bracket meets CI: {lat}/{}", rows.len());
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match &cli.cmd {
        Cmd::Validate(a) => validate(a),
        Cmd::Analytic(a) => analytic(a),
        Cmd::Simulate(a) => simulate(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::Compare(a) => compare_cmd(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
