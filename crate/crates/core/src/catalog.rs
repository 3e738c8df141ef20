//! Popularity, cache placement and backhaul capacity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Popularity {
    pub f: Vec<f64>,
}

impl Popularity {
    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// Cumulative distribution, last entry forced to 1.
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut c: Vec<f64> = self
            .f
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect();
        if let Some(last) = c.last_mut() {
            *last = 1.0;
        }
        c
    }
}

pub fn zipf_popularity(f_count: usize, upsilon: f64) -> Result<Popularity> {
    if f_count == 0 {
        return Err(Error::invalid("f_count must be at least 1"));
    }
    if !(upsilon >= 0.0 && upsilon.is_finite()) {
        return Err(Error::invalid(format!("upsilon must be >= 0 (got {upsilon})")));
    }
    let w: Vec<f64> = (1..=f_count).map(|i| (i as f64).powf(-upsilon)).collect();
    // sum smallest first
    let total: f64 = w.iter().rev().sum();
    Ok(Popularity {
        f: w.into_iter().map(|x| x / total).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CachePolicy {
    /// Uniform caching.
    #[serde(rename = "UC")]
    Uc,
    /// Most popular content.
    #[serde(rename = "MC")]
    Mc,
    /// Random caching.
    #[serde(rename = "RC")]
    Rc,
    #[serde(rename = "NoCache")]
    NoCache,
}

impl CachePolicy {
    pub const ALL: [CachePolicy; 4] = [
        CachePolicy::Mc,
        CachePolicy::Uc,
        CachePolicy::Rc,
        CachePolicy::NoCache,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CachePolicy::Uc => "UC",
            CachePolicy::Mc => "MC",
            CachePolicy::Rc => "RC",
            CachePolicy::NoCache => "NoCache",
        }
    }
}

impl std::fmt::Display for CachePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for CachePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uc" => Ok(CachePolicy::Uc),
            "mc" => Ok(CachePolicy::Mc),
            "rc" => Ok(CachePolicy::Rc),
            "nocache" | "none" | "no-cache" => Ok(CachePolicy::NoCache),
            _ => Err(Error::invalid(format!("unknown cache policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Mm,
    Mu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheProfile {
    pub policy: CachePolicy,
    pub p_m: Vec<f64>,
    pub p_mu: Vec<f64>,
}

impl CacheProfile {
    pub fn tier(&self, tier: Tier) -> &[f64] {
        match tier {
            Tier::Mm => &self.p_m,
            Tier::Mu => &self.p_mu,
        }
    }

    pub fn len(&self) -> usize {
        self.p_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_m.is_empty()
    }
}

/// Random-caching vector: uniform draws scaled by min(1, 2C/F), clipped to
/// [0, 1], then rescaled to sum C if they overshoot.
fn random_vector(rng: &mut ChaCha8Rng, c: usize, f_count: usize) -> Vec<f64> {
    let scale = (2.0 * c as f64 / f_count as f64).min(1.0);
    let mut p: Vec<f64> = (0..f_count)
        .map(|_| (rng.gen::<f64>() * scale).clamp(0.0, 1.0))
        .collect();
    let sum: f64 = p.iter().sum();
    if sum > c as f64 {
        let k = c as f64 / sum;
        p.iter_mut().for_each(|x| *x *= k);
    }
    p
}

/// Build per-tier caching probabilities. RC draws the mmWave vector first and
/// then the μWave vector from one `ChaCha8Rng::seed_from_u64(seed)` stream.
pub fn make_cache_profile(
    policy: CachePolicy,
    c_m: usize,
    c_mu: usize,
    f_count: usize,
    rng_seed: Option<u64>,
) -> Result<CacheProfile> {
    if f_count == 0 {
        return Err(Error::invalid("f_count must be at least 1"));
    }
    if c_m > f_count || c_mu > f_count {
        return Err(Error::invalid(format!(
            "cache sizes ({c_m}, {c_mu}) exceed catalog size {f_count}"
        )));
    }
    match (policy, rng_seed) {
        (CachePolicy::Rc, None) => {
            return Err(Error::invalid("random caching requires a seed"));
        }
        (p, Some(_)) if p != CachePolicy::Rc => {
            return Err(Error::invalid(format!("policy {p} takes no seed")));
        }
        _ => {}
    }
    let (p_m, p_mu) = match policy {
        CachePolicy::Uc => (
            vec![c_m as f64 / f_count as f64; f_count],
            vec![c_mu as f64 / f_count as f64; f_count],
        ),
        CachePolicy::Mc => {
            let ind = |c: usize| (0..f_count).map(|i| if i < c { 1.0 } else { 0.0 }).collect();
            (ind(c_m), ind(c_mu))
        }
        CachePolicy::Rc => {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed.expect("checked above"));
            let m = random_vector(&mut rng, c_m, f_count);
            let mu = random_vector(&mut rng, c_mu, f_count);
            (m, mu)
        }
        CachePolicy::NoCache => (vec![0.0; f_count], vec![0.0; f_count]),
    };
    Ok(CacheProfile { policy, p_m, p_mu })
}

/// Profile for `policy` at the config's cache sizes; RC uses `seed`.
pub fn profile_for(cfg: &NetworkConfig, policy: CachePolicy, seed: u64) -> Result<CacheProfile> {
    let s = (policy == CachePolicy::Rc).then_some(seed);
    make_cache_profile(policy, cfg.c_m, cfg.c_mu, cfg.f_count, s)
}

/// C_b = c1 / (lambda_m + lambda_mu) + c2, in bits/s.
pub fn backhaul_capacity(cfg: &NetworkConfig) -> Result<f64> {
    let dens = cfg.lambda_m + cfg.lambda_mu;
    if !(dens > 0.0) {
        return Err(Error::invalid("lambda_m + lambda_mu must be positive"));
    }
    // per-km² arithmetic: densities given as whole numbers per km² stay exact
    let km2 = 1e6;
    Ok(cfg.c1 * km2 / (cfg.lambda_m * km2 + cfg.lambda_mu * km2) + cfg.c2)
}

pub fn hit_probability(pop: &Popularity, profile: &CacheProfile, tier: Tier) -> Result<f64> {
    let p = profile.tier(tier);
    if p.len() != pop.f.len() {
        return Err(Error::invalid(format!(
            "profile length {} does not match popularity length {}",
            p.len(),
            pop.f.len()
        )));
    }
    let h: f64 = pop.f.iter().zip(p).map(|(f, p)| f * p).sum();
    Ok(h.clamp(0.0, 1.0))
}
