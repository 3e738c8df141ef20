//! Network configuration: built-in defaults, flat TOML loading, environment
//! overrides and invariant diagnostics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::QuadratureSpec;

/// Prefix for environment overrides, e.g. `HCN_CFG_BETA=0.01`.
pub const ENV_PREFIX: &str = "HCN_CFG_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServedUsers {
    /// Tagged and other cells serve `n_rf` (mmWave) and `nt_mu` (μWave) users.
    Full,
    /// Served users are the capped mean association load.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceExclusion {
    /// Interferers of link state j lie outside the radius at which they would
    /// have won the association, R^(alpha_s/alpha_j).
    Association,
    /// Only same-state interferers of the serving cache class are excluded
    /// inside R; every other thinned process starts at the origin.
    CacheClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessTime {
    /// One access attempt takes S / nu_i.
    TargetRate,
    /// μWave attempts take S / mean rate at the serving distance; mmWave
    /// attempts keep S / nu_i.
    MeanRate,
}

/// Resolved configuration in linear SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub lambda_mu: f64,
    pub lambda_m: f64,
    pub lambda_u: f64,
    pub lambda_g: f64,
    /// Watts.
    pub p_mu_tx: f64,
    pub p_m_tx: f64,
    pub nt_mu: u32,
    pub nt_m: u32,
    pub nr_mu: u32,
    pub nr_m: u32,
    pub n_rf: u32,
    pub w_mu: f64,
    pub w_m: f64,
    pub f_count: usize,
    /// Per-file target rate, length `f_count`.
    pub nu: Vec<f64>,
    pub upsilon: f64,
    pub c_mu: usize,
    pub c_m: usize,
    pub c1: f64,
    pub c2: f64,
    pub n_retx: u32,
    pub beta: f64,
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    pub alpha_mu: f64,
    pub b_mu: f64,
    pub b_m: f64,
    pub rho_ue: f64,
    pub rho_bs: f64,
    pub eta_los: u32,
    pub eta_nlos: u32,
    pub relay_r: f64,
    pub k1: f64,
    pub k2: f64,
    pub a_proc: f64,
    pub omega_proc: f64,
    pub s_file: f64,
    /// Watts.
    pub sigma2_m: f64,
    pub sigma2_mu: f64,
    pub served_users: ServedUsers,
    pub interference_exclusion: InterferenceExclusion,
    pub access_time: AccessTime,
    pub quad: QuadratureSpec,
    /// Simulation window half-width in units of 1/sqrt(pi lambda_mu).
    pub window_scale: f64,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Thermal noise power over bandwidth `w` Hz at -174 dBm/Hz.
pub fn thermal_noise_watts(w: f64) -> f64 {
    dbm_to_watts(-174.0 + 10.0 * w.log10())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateSpec {
    Uniform(f64),
    PerFile(Vec<f64>),
}

/// On-disk representation. Every key is optional and has a built-in default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub lambda_mu: f64,
    pub lambda_m: f64,
    pub lambda_u: f64,
    pub lambda_g: f64,
    pub p_mu_tx_dbm: f64,
    pub p_m_tx_dbm: f64,
    pub nt_mu: u32,
    pub nt_m: u32,
    pub nr_mu: u32,
    pub nr_m: u32,
    pub n_rf: u32,
    pub w_mu: f64,
    pub w_m: f64,
    pub f_count: usize,
    pub nu: RateSpec,
    pub upsilon: f64,
    pub c_mu: usize,
    pub c_m: usize,
    pub c1: f64,
    pub c2: f64,
    pub n_retx: u32,
    pub beta: f64,
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    pub alpha_mu: f64,
    pub b_mu: f64,
    pub b_m: f64,
    pub rho_ue: f64,
    pub rho_bs: f64,
    pub eta_los: u32,
    pub eta_nlos: u32,
    pub relay_r: f64,
    pub k1: f64,
    pub k2: f64,
    pub a_proc: f64,
    pub omega_proc: f64,
    pub s_file: f64,
    pub sigma2_m_dbm: Option<f64>,
    pub sigma2_mu_dbm: Option<f64>,
    pub served_users: ServedUsers,
    pub interference_exclusion: InterferenceExclusion,
    pub access_time: AccessTime,
    pub quad_rel_tol: f64,
    pub quad_abs_tol: f64,
    pub quad_truncation_radius: f64,
    pub quad_max_subdivisions: usize,
    pub window_scale: f64,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let q = QuadratureSpec::default();
        ConfigFile {
            lambda_mu: 5e-6,
            lambda_m: 1e-5,
            lambda_u: 8e-5,
            lambda_g: 5e-7,
            p_mu_tx_dbm: 46.0,
            p_m_tx_dbm: 30.0,
            nt_mu: 100,
            nt_m: 256,
            nr_mu: 1,
            nr_m: 16,
            n_rf: 10,
            w_mu: 200e6,
            w_m: 1e9,
            f_count: 20,
            nu: RateSpec::Uniform(1e6),
            upsilon: 0.8,
            c_mu: 10,
            c_m: 8,
            c1: 60.0,
            c2: 0.0,
            n_retx: 1,
            beta: 0.008,
            alpha_los: 2.0,
            alpha_nlos: 4.0,
            alpha_mu: 3.5,
            b_mu: 1.0,
            b_m: 0.5,
            rho_ue: 0.5,
            rho_bs: 0.5,
            eta_los: 3,
            eta_nlos: 5,
            relay_r: 200.0,
            k1: 10.0,
            k2: 1.0,
            a_proc: 1e-5,
            omega_proc: 1e-8,
            s_file: 1e6,
            sigma2_m_dbm: None,
            sigma2_mu_dbm: None,
            served_users: ServedUsers::Full,
            interference_exclusion: InterferenceExclusion::Association,
            access_time: AccessTime::TargetRate,
            quad_rel_tol: q.rel_tol,
            quad_abs_tol: q.abs_tol,
            quad_truncation_radius: q.truncation_radius,
            quad_max_subdivisions: q.max_subdivisions,
            window_scale: 5.0,
        }
    }
}

impl ConfigFile {
    pub fn resolve(self) -> Result<NetworkConfig> {
        let nu = match self.nu {
            RateSpec::Uniform(v) => vec![v; self.f_count],
            RateSpec::PerFile(v) => {
                if v.len() != self.f_count {
                    return Err(Error::Config(format!(
                        "field `nu`: {} rates given for f_count = {}",
                        v.len(),
                        self.f_count
                    )));
                }
                v
            }
        };
        let sigma2_m = self
            .sigma2_m_dbm
            .map(dbm_to_watts)
            .unwrap_or_else(|| thermal_noise_watts(self.w_m));
        let sigma2_mu = self
            .sigma2_mu_dbm
            .map(dbm_to_watts)
            .unwrap_or_else(|| thermal_noise_watts(self.w_mu));
        Ok(NetworkConfig {
            lambda_mu: self.lambda_mu,
            lambda_m: self.lambda_m,
            lambda_u: self.lambda_u,
            lambda_g: self.lambda_g,
            p_mu_tx: dbm_to_watts(self.p_mu_tx_dbm),
            p_m_tx: dbm_to_watts(self.p_m_tx_dbm),
            nt_mu: self.nt_mu,
            nt_m: self.nt_m,
            nr_mu: self.nr_mu,
            nr_m: self.nr_m,
            n_rf: self.n_rf,
            w_mu: self.w_mu,
            w_m: self.w_m,
            f_count: self.f_count,
            nu,
            upsilon: self.upsilon,
            c_mu: self.c_mu,
            c_m: self.c_m,
            c1: self.c1,
            c2: self.c2,
            n_retx: self.n_retx,
            beta: self.beta,
            alpha_los: self.alpha_los,
            alpha_nlos: self.alpha_nlos,
            alpha_mu: self.alpha_mu,
            b_mu: self.b_mu,
            b_m: self.b_m,
            rho_ue: self.rho_ue,
            rho_bs: self.rho_bs,
            eta_los: self.eta_los,
            eta_nlos: self.eta_nlos,
            relay_r: self.relay_r,
            k1: self.k1,
            k2: self.k2,
            a_proc: self.a_proc,
            omega_proc: self.omega_proc,
            s_file: self.s_file,
            sigma2_m,
            sigma2_mu,
            served_users: self.served_users,
            interference_exclusion: self.interference_exclusion,
            access_time: self.access_time,
            quad: QuadratureSpec {
                rel_tol: self.quad_rel_tol,
                abs_tol: self.quad_abs_tol,
                truncation_radius: self.quad_truncation_radius,
                max_subdivisions: self.quad_max_subdivisions,
            },
            window_scale: self.window_scale,
        })
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        ConfigFile::default()
            .resolve()
            .expect("built-in defaults resolve")
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Probe {
        v: toml::Value,
    }
    match toml::from_str::<Probe>(&format!("v = {raw}")) {
        Ok(p) => p.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Collect `HCN_CFG_<KEY>=<value>` pairs from an iterator of env vars.
pub fn env_overrides<I>(vars: I) -> BTreeMap<String, toml::Value>
where
    I: IntoIterator<Item = (String, String)>,
{
    vars.into_iter()
        .filter_map(|(k, v)| {
            k.strip_prefix(ENV_PREFIX)
                .map(|key| (key.to_ascii_lowercase(), parse_env_value(&v)))
        })
        .collect()
}

/// Parse TOML text, apply overrides, and resolve. Parse errors carry the
/// line/column and field reported by the TOML parser.
pub fn parse_config(
    text: &str,
    overrides: &BTreeMap<String, toml::Value>,
) -> Result<NetworkConfig> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for (k, v) in overrides {
        table.insert(k.clone(), v.clone());
    }
    let file: ConfigFile = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
        // the merged table has no spans; re-parse the text alone for a located message
        match toml::from_str::<ConfigFile>(text) {
            Err(located) if located.span().is_some() => Error::Config(located.to_string()),
            _ => Error::Config(e.to_string()),
        }
    })?;
    file.resolve()
}

/// Load a config file (or the built-in defaults when `path` is None), applying
/// environment overrides from the process environment.
pub fn load_config(path: Option<&Path>) -> Result<NetworkConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    parse_config(&text, &env_overrides(std::env::vars()))
}

impl NetworkConfig {
    /// One message per violated invariant; empty when the config is usable.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut d = Vec::new();
        let positive = [
            ("lambda_mu", self.lambda_mu),
            ("lambda_m", self.lambda_m),
            ("lambda_u", self.lambda_u),
            ("lambda_g", self.lambda_g),
            ("p_mu_tx", self.p_mu_tx),
            ("p_m_tx", self.p_m_tx),
            ("w_mu", self.w_mu),
            ("w_m", self.w_m),
            ("relay_r", self.relay_r),
            ("s_file", self.s_file),
            ("sigma2_m", self.sigma2_m),
            ("sigma2_mu", self.sigma2_mu),
            ("b_mu", self.b_mu),
            ("b_m", self.b_m),
            ("alpha_los", self.alpha_los),
            ("alpha_nlos", self.alpha_nlos),
            ("window_scale", self.window_scale),
            ("quad_rel_tol", self.quad.rel_tol),
            ("quad_abs_tol", self.quad.abs_tol),
            ("quad_truncation_radius", self.quad.truncation_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                d.push(format!("{name} must be positive and finite (got {v})"));
            }
        }
        if !(self.lambda_u > self.lambda_m && self.lambda_m > self.lambda_mu) {
            d.push(format!(
                "density ordering lambda_u > lambda_m > lambda_mu violated ({} , {} , {})",
                self.lambda_u, self.lambda_m, self.lambda_mu
            ));
        }
        if self.f_count == 0 {
            d.push("f_count must be at least 1".into());
        }
        if self.c_m > self.f_count {
            d.push(format!("c_m = {} exceeds f_count = {}", self.c_m, self.f_count));
        }
        if self.c_mu > self.f_count {
            d.push(format!("c_mu = {} exceeds f_count = {}", self.c_mu, self.f_count));
        }
        if self.c_m >= self.c_mu {
            d.push(format!(
                "cache sizes must satisfy c_m < c_mu (got c_m = {}, c_mu = {})",
                self.c_m, self.c_mu
            ));
        }
        if !(self.alpha_mu > 2.0) {
            d.push(format!(
                "alpha_mu = {} must exceed 2, otherwise the mean interference (Campbell) integral diverges",
                self.alpha_mu
            ));
        }
        if !(self.rho_ue > 0.0 && self.rho_ue < 1.0) {
            d.push(format!("rho_ue = {} must lie in (0, 1)", self.rho_ue));
        }
        if !(self.rho_bs > 0.0 && self.rho_bs < 1.0) {
            d.push(format!("rho_bs = {} must lie in (0, 1)", self.rho_bs));
        }
        if self.eta_los == 0 || self.eta_los >= self.eta_nlos {
            d.push(format!(
                "path counts must satisfy 1 <= eta_los < eta_nlos (got {}, {})",
                self.eta_los, self.eta_nlos
            ));
        }
        if self.n_retx == 0 {
            d.push("n_retx must be at least 1".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            d.push(format!("beta = {} must be nonnegative", self.beta));
        }
        if !(self.upsilon >= 0.0 && self.upsilon.is_finite()) {
            d.push(format!("upsilon = {} must be nonnegative", self.upsilon));
        }
        if self.nu.len() != self.f_count {
            d.push(format!(
                "nu has {} entries for f_count = {}",
                self.nu.len(),
                self.f_count
            ));
        }
        if self.nu.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            d.push("every target rate nu_i must be positive".into());
        }
        for (name, v) in [
            ("nt_mu", self.nt_mu),
            ("nt_m", self.nt_m),
            ("nr_mu", self.nr_mu),
            ("nr_m", self.nr_m),
            ("n_rf", self.n_rf),
        ] {
            if v == 0 {
                d.push(format!("{name} must be at least 1"));
            }
        }
        if self.n_rf > self.nt_m {
            d.push(format!(
                "n_rf = {} exceeds the mmWave antenna count nt_m = {}",
                self.n_rf, self.nt_m
            ));
        }
        for (name, v) in [
            ("c1", self.c1),
            ("c2", self.c2),
            ("k1", self.k1),
            ("k2", self.k2),
            ("a_proc", self.a_proc),
            ("omega_proc", self.omega_proc),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                d.push(format!("{name} must be nonnegative (got {v})"));
            }
        }
        if self.quad.max_subdivisions == 0 {
            d.push("quad_max_subdivisions must be at least 1".into());
        }
        d
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.diagnostics();
        if d.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(d.join("; ")))
        }
    }

    /// Short stable digest of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn set_uniform_rate(&mut self, nu: f64) {
        self.nu = vec![nu; self.f_count];
    }

    /// Change the catalog size keeping a uniform rate (first entry).
    pub fn set_f_count(&mut self, f: usize) {
        let nu = self.nu.first().copied().unwrap_or(1e6);
        self.f_count = f;
        self.nu = vec![nu; f];
    }

    pub fn window_half_width(&self) -> f64 {
        self.window_scale / (std::f64::consts::PI * self.lambda_mu).sqrt()
    }
}
