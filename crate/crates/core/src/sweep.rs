//! Parameter sweeps over both engines and their CSV / manifest output.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{profile_for, zipf_popularity, CachePolicy};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::link::BoundSide;
use crate::qos::AnalyticModel;
use crate::sim::{run_trials_multi, SimContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Upsilon,
    C1,
    /// mmWave cache size; the μWave cache keeps its offset from the base
    /// config, capped at the catalog size.
    CacheSize,
    FCount,
    Nu,
    Beta,
    NRetx,
}

impl SweepParam {
    pub fn label(self) -> &'static str {
        match self {
            SweepParam::Upsilon => "upsilon",
            SweepParam::C1 => "c1",
            SweepParam::CacheSize => "cache_size",
            SweepParam::FCount => "f_count",
            SweepParam::Nu => "nu",
            SweepParam::Beta => "beta",
            SweepParam::NRetx => "n_retx",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "upsilon" | "skewness" => SweepParam::Upsilon,
            "c1" | "backhaul" => SweepParam::C1,
            "cache_size" | "cache" | "caches" => SweepParam::CacheSize,
            "f_count" | "files" => SweepParam::FCount,
            "nu" | "rate" => SweepParam::Nu,
            "beta" => SweepParam::Beta,
            "n_retx" | "n" => SweepParam::NRetx,
            other => return Err(Error::invalid(format!("unknown sweep parameter '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engines {
    Analytic,
    Simulate,
    Both,
}

impl Engines {
    pub fn analytic(self) -> bool {
        self != Engines::Simulate
    }

    pub fn simulate(self) -> bool {
        self != Engines::Analytic
    }
}

impl FromStr for Engines {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "analytic" => Engines::Analytic,
            "simulate" | "sim" => Engines::Simulate,
            "both" => Engines::Both,
            other => return Err(Error::invalid(format!("unknown engine selection '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Asp,
    Latency,
    BackhaulLoad,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::Asp => "asp",
            Metric::Latency => "latency",
            Metric::BackhaulLoad => "backhaul_load",
        }
    }
}

/// A curve family inside a sweep: optional overrides plus the retransmission
/// limits reported from the same evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSpec {
    /// (C_mu, C_m)
    pub caches: Option<(usize, usize)>,
    pub beta: Option<f64>,
    pub nt_mu: Option<u32>,
    pub n_retx: Vec<u32>,
}

impl SeriesSpec {
    pub fn plain(n_retx: Vec<u32>) -> Self {
        SeriesSpec {
            caches: None,
            beta: None,
            nt_mu: None,
            n_retx,
        }
    }

    fn label(&self, n: u32) -> String {
        let mut parts = vec![];
        if let Some((cmu, cm)) = self.caches {
            parts.push(format!("c_mu={cmu} c_m={cm}"));
        }
        if let Some(b) = self.beta {
            parts.push(format!("beta={b}"));
        }
        if let Some(t) = self.nt_mu {
            parts.push(format!("nt_mu={t}"));
        }
        parts.push(format!("N={n}"));
        parts.join(" ")
    }

    fn apply(&self, cfg: &mut NetworkConfig) {
        if let Some((cmu, cm)) = self.caches {
            cfg.c_mu = cmu;
            cfg.c_m = cm;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(t) = self.nt_mu {
            cfg.nt_mu = t;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub name: String,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub policies: Vec<CachePolicy>,
    pub engines: Engines,
    pub sides: Vec<BoundSide>,
    pub trials: u64,
    pub seed: u64,
    pub series: Vec<SeriesSpec>,
    pub metrics: Vec<Metric>,
}

pub const PRESETS: [&str; 7] = ["fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7"];

fn upsilon_grid() -> Vec<f64> {
    (1..=15).map(|k| k as f64 / 10.0).collect()
}

fn cache_series(pairs: &[(usize, usize)], ns: &[u32]) -> Vec<SeriesSpec> {
    pairs
        .iter()
        .map(|&p| SeriesSpec {
            caches: Some(p),
            ..SeriesSpec::plain(ns.to_vec())
        })
        .collect()
}

impl SweepSpec {
    /// Built-in figure families on the default config.
    pub fn preset(name: &str) -> Result<Self> {
        use CachePolicy::*;
        let base = |param, values: Vec<f64>, policies: Vec<CachePolicy>, series, metric| SweepSpec {
            name: name.to_string(),
            param,
            values,
            policies,
            engines: Engines::Both,
            sides: BoundSide::BOTH.to_vec(),
            trials: 20_000,
            seed: 42,
            series,
            metrics: vec![metric],
        };
        let c1_grid = vec![5.0, 10.0, 20.0, 40.0, 60.0, 100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0];
        Ok(match name {
            "fig1" => base(
                SweepParam::Upsilon,
                upsilon_grid(),
                vec![Mc, Uc, NoCache],
                cache_series(&[(3, 2)], &[1, 3, 5]),
                Metric::Asp,
            ),
            "fig2" => base(
                SweepParam::C1,
                c1_grid,
                vec![Mc, Uc, Rc, NoCache],
                cache_series(&[(3, 2), (10, 8)], &[1, 3]),
                Metric::Asp,
            ),
            "fig3" => {
                let mut s = base(
                    SweepParam::CacheSize,
                    (2..=15).map(f64::from).collect(),
                    vec![Mc, Uc, Rc, NoCache],
                    cache_series(&[(3, 2)], &[1]),
                    Metric::BackhaulLoad,
                );
                s.sides = vec![BoundSide::Lower];
                s
            }
            "fig4" => base(
                SweepParam::FCount,
                (1..=10).map(|k| 10.0 * k as f64).collect(),
                vec![Mc, Uc, Rc, NoCache],
                cache_series(&[(10, 8)], &[1]),
                Metric::Asp,
            ),
            "fig5" => base(
                SweepParam::Nu,
                vec![1e5, 2e5, 5e5, 1e6, 2e6, 5e6, 1e7, 2e7, 5e7, 1e8],
                vec![Mc, Uc, NoCache],
                [0.004, 0.008, 0.016]
                    .iter()
                    .map(|&b| SeriesSpec {
                        beta: Some(b),
                        ..SeriesSpec::plain(vec![1])
                    })
                    .collect(),
                Metric::Asp,
            ),
            "fig6" => base(
                SweepParam::C1,
                vec![5.0, 10.0, 20.0, 40.0, 60.0, 100.0, 200.0, 500.0, 1000.0],
                vec![Mc, Uc, Rc, NoCache],
                [100, 150, 200]
                    .iter()
                    .map(|&t| SeriesSpec {
                        nt_mu: Some(t),
                        ..SeriesSpec::plain(vec![1])
                    })
                    .collect(),
                Metric::Latency,
            ),
            "fig7" => base(
                SweepParam::Upsilon,
                upsilon_grid(),
                vec![Mc, Uc, NoCache],
                cache_series(&[(3, 2), (10, 8)], &[1, 3, 5]),
                Metric::Latency,
            ),
            other => {
                return Err(Error::invalid(format!(
                    "unknown preset '{other}' (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    pub fn check(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("sweep value list is empty"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sweep values must be finite"));
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("sweep values must be strictly increasing"));
        }
        if self.policies.is_empty() {
            return Err(Error::invalid("no cache policies selected"));
        }
        if self.engines.analytic() && self.sides.is_empty() {
            return Err(Error::invalid("no bound sides selected"));
        }
        if self.engines.simulate() && self.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if self.series.is_empty() || self.series.iter().any(|s| s.n_retx.is_empty() || s.n_retx.contains(&0)) {
            return Err(Error::invalid("every series needs retransmission limits >= 1"));
        }
        if self.metrics.is_empty() {
            return Err(Error::invalid("no output metrics selected"));
        }
        Ok(())
    }
}

/// Configuration at one sweep point. Also returns the retransmission limits
/// to report, which the n_retx sweep overrides.
pub fn point_config(
    base: &NetworkConfig,
    param: SweepParam,
    value: f64,
    series: &SeriesSpec,
) -> Result<(NetworkConfig, Vec<u32>)> {
    let mut cfg = base.clone();
    series.apply(&mut cfg);
    let mut ns = series.n_retx.clone();
    let as_count = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::invalid(format!("{param} needs a non-negative integer (got {v})")))
        }
    };
    match param {
        SweepParam::Upsilon => cfg.upsilon = value,
        SweepParam::C1 => cfg.c1 = value,
        SweepParam::CacheSize => {
            let offset = cfg.c_mu as i64 - cfg.c_m as i64;
            let cm = as_count(value)?;
            cfg.c_m = cm;
            cfg.c_mu = (cm as i64 + offset).clamp(0, cfg.f_count as i64) as usize;
        }
        SweepParam::FCount => {
            let f = as_count(value)?;
            cfg.set_f_count(f);
            cfg.c_m = cfg.c_m.min(f);
            cfg.c_mu = cfg.c_mu.min(f);
        }
        SweepParam::Nu => cfg.set_uniform_rate(value),
        SweepParam::Beta => cfg.beta = value,
        SweepParam::NRetx => {
            let n = as_count(value)?;
            ns = vec![n as u32];
        }
    }
    if let Some(&n) = ns.first() {
        cfg.n_retx = n;
    }
    cfg.validate()
        .map_err(|e| Error::Config(format!("{param} = {value}: {e}")))?;
    Ok((cfg, ns))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub swept_value: f64,
    pub policy: CachePolicy,
    pub engine: &'static str,
    pub bound_side: Option<BoundSide>,
    pub asp: f64,
    pub asp_ci: Option<(f64, f64)>,
    pub latency: f64,
    pub latency_ci: Option<(f64, f64)>,
    pub backhaul_load: f64,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub series: String,
    pub n_retx: u32,
    pub config_hash: String,
}

pub const CSV_HEADER: [&str; 16] = [
    "swept_value",
    "policy",
    "engine",
    "bound_side",
    "asp",
    "asp_ci_lo",
    "asp_ci_hi",
    "latency",
    "latency_ci_lo",
    "latency_ci_hi",
    "backhaul_load",
    "trials",
    "seed",
    "series",
    "n_retx",
    "config_hash",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Row {
    fn record(&self) -> Vec<String> {
        vec![
            self.swept_value.to_string(),
            self.policy.label().to_string(),
            self.engine.to_string(),
            opt(self.bound_side.map(|s| s.label())),
            self.asp.to_string(),
            opt(self.asp_ci.map(|c| c.0)),
            opt(self.asp_ci.map(|c| c.1)),
            self.latency.to_string(),
            opt(self.latency_ci.map(|c| c.0)),
            opt(self.latency_ci.map(|c| c.1)),
            self.backhaul_load.to_string(),
            opt(self.trials),
            opt(self.seed),
            self.series.clone(),
            self.n_retx.to_string(),
            self.config_hash.clone(),
        ]
    }
}

/// Rows of one (sweep value, series) pair across policies and engines.
fn point_rows(
    base: &NetworkConfig,
    spec: &SweepSpec,
    value: f64,
    series: &SeriesSpec,
) -> Result<Vec<Row>> {
    let (cfg, ns) = point_config(base, spec.param, value, series)?;
    let hash = cfg.hash();
    let pop = zipf_popularity(cfg.f_count, cfg.upsilon)?;
    let model = if spec.engines.analytic() {
        Some(AnalyticModel::new(&cfg)?)
    } else {
        None
    };
    let mut rows = vec![];
    for &policy in &spec.policies {
        let ctx_err = |e: Error| e.with_context(format!("policy {policy}, {} = {value}", spec.param));
        let profile = profile_for(&cfg, policy, spec.seed).map_err(ctx_err)?;
        if let Some(m) = &model {
            for &side in &spec.sides {
                for &n in &ns {
                    let r = m.evaluate_n(&pop, &profile, side, n).map_err(ctx_err)?;
                    rows.push(Row {
                        swept_value: value,
                        policy,
                        engine: "analytic",
                        bound_side: Some(side),
                        asp: r.asp,
                        asp_ci: None,
                        latency: r.latency,
                        latency_ci: None,
                        backhaul_load: r.backhaul_load,
                        trials: None,
                        seed: None,
                        series: series.label(n),
                        n_retx: n,
                        config_hash: hash.clone(),
                    });
                }
            }
        }
        if spec.engines.simulate() {
            let ctx = SimContext::new(&cfg, &pop, &profile).map_err(ctx_err)?;
            let rep = run_trials_multi(&ctx, spec.trials, spec.seed, &ns).map_err(ctx_err)?;
            for m in &rep.metrics {
                rows.push(Row {
                    swept_value: value,
                    policy,
                    engine: "simulate",
                    bound_side: None,
                    asp: m.asp.mean,
                    asp_ci: Some((m.asp.ci_lo, m.asp.ci_hi)),
                    latency: m.latency.mean,
                    latency_ci: Some((m.latency.ci_lo, m.latency.ci_hi)),
                    backhaul_load: m.backhaul_load.mean,
                    trials: Some(spec.trials),
                    seed: Some(spec.seed),
                    series: series.label(m.n_retx),
                    n_retx: m.n_retx,
                    config_hash: hash.clone(),
                });
            }
        }
    }
    Ok(rows)
}

/// Evaluates every sweep point. Points run in parallel; rows come back in
/// value, series, policy order.
pub fn sweep_rows(base: &NetworkConfig, spec: &SweepSpec) -> Result<Vec<Row>> {
    spec.check()?;
    let tasks: Vec<(f64, &SeriesSpec)> = spec
        .values
        .iter()
        .flat_map(|&v| spec.series.iter().map(move |s| (v, s)))
        .collect();
    let parts: Vec<Result<Vec<Row>>> = tasks
        .par_iter()
        .map(|&(v, s)| point_rows(base, spec, v, s))
        .collect();
    let mut rows = vec![];
    for p in parts {
        rows.extend(p?);
    }
    Ok(rows)
}

fn write_csv(path: &Path, rows: &[&Row]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(vec![]);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    fs::write(path, &bytes)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub metric: Metric,
    pub policy: CachePolicy,
    pub rows: usize,
    pub sha256: String,
}

/// Everything needed to re-run a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub spec: SweepSpec,
    pub config: NetworkConfig,
    pub config_hash: String,
    pub files: Vec<ManifestFile>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn manifest_path(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(format!("{name}_manifest.json"))
}

/// Runs the sweep and writes one CSV per (metric, policy) plus a manifest.
pub fn run_sweep(base: &NetworkConfig, spec: &SweepSpec, out_dir: &Path) -> Result<Manifest> {
    let rows = sweep_rows(base, spec)?;
    fs::create_dir_all(out_dir)?;
    let mut files = vec![];
    for &metric in &spec.metrics {
        for &policy in &spec.policies {
            let sel: Vec<&Row> = rows.iter().filter(|r| r.policy == policy).collect();
            let name = format!("{}_{}_{}.csv", spec.name, metric.label(), policy.label());
            let sha256 = write_csv(&out_dir.join(&name), &sel)?;
            files.push(ManifestFile {
                path: name,
                metric,
                policy,
                rows: sel.len(),
                sha256,
            });
        }
    }
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        spec: spec.clone(),
        config: base.clone(),
        config_hash: base.hash(),
        files,
    };
    fs::write(
        manifest_path(out_dir, &spec.name),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

/// Analytic bracket against the simulator at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub swept_value: f64,
    pub policy: CachePolicy,
    pub series: String,
    pub n_retx: u32,
    pub asp_lower: f64,
    pub asp_upper: f64,
    pub asp_sim: f64,
    pub asp_ci: (f64, f64),
    pub asp_contained: bool,
    pub latency_lower: f64,
    pub latency_upper: f64,
    pub latency_sim: f64,
    pub latency_ci: (f64, f64),
    pub latency_contained: bool,
    pub config_hash: String,
}

fn meets(ci: (f64, f64), a: f64, b: f64) -> bool {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    ci.0 <= hi && ci.1 >= lo
}

/// Runs both engines and pairs each simulator row with its bracket.
pub fn compare(base: &NetworkConfig, spec: &SweepSpec) -> Result<Vec<Comparison>> {
    let mut s = spec.clone();
    s.engines = Engines::Both;
    s.sides = BoundSide::BOTH.to_vec();
    let rows = sweep_rows(base, &s)?;
    let find = |sim: &Row, side: BoundSide| {
        rows.iter().find(|r| {
            r.engine == "analytic"
                && r.bound_side == Some(side)
                && r.policy == sim.policy
                && r.series == sim.series
                && r.swept_value.to_bits() == sim.swept_value.to_bits()
        })
    };
    let mut out = vec![];
    for r in rows.iter().filter(|r| r.engine == "simulate") {
        let (Some(lo), Some(up)) = (find(r, BoundSide::Lower), find(r, BoundSide::Upper)) else {
            continue;
        };
        let aci = r.asp_ci.unwrap_or((r.asp, r.asp));
        let lci = r.latency_ci.unwrap_or((r.latency, r.latency));
        out.push(Comparison {
            swept_value: r.swept_value,
            policy: r.policy,
            series: r.series.clone(),
            n_retx: r.n_retx,
            asp_lower: lo.asp,
            asp_upper: up.asp,
            asp_sim: r.asp,
            asp_ci: aci,
            asp_contained: meets(aci, lo.asp, up.asp),
            latency_lower: lo.latency,
            latency_upper: up.latency,
            latency_sim: r.latency,
            latency_ci: lci,
            latency_contained: meets(lci, lo.latency, up.latency),
            config_hash: r.config_hash.clone(),
        });
    }
    Ok(out)
}

pub fn write_comparison(path: &Path, rows: &[Comparison]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record([
        "swept_value",
        "policy",
        "series",
        "n_retx",
        "asp_lower",
        "asp_upper",
        "asp_sim",
        "asp_ci_lo",
        "asp_ci_hi",
        "asp_contained",
        "latency_lower",
        "latency_upper",
        "latency_sim",
        "latency_ci_lo",
        "latency_ci_hi",
        "latency_contained",
        "config_hash",
    ])?;
    for c in rows {
        w.write_record([
            c.swept_value.to_string(),
            c.policy.label().to_string(),
            c.series.clone(),
            c.n_retx.to_string(),
            c.asp_lower.to_string(),
            c.asp_upper.to_string(),
            c.asp_sim.to_string(),
            c.asp_ci.0.to_string(),
            c.asp_ci.1.to_string(),
            c.asp_contained.to_string(),
            c.latency_lower.to_string(),
            c.latency_upper.to_string(),
            c.latency_sim.to_string(),
            c.latency_ci.0.to_string(),
            c.latency_ci.1.to_string(),
            c.latency_contained.to_string(),
            c.config_hash.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
