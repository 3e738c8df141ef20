//! Blockage, association probabilities, serving-distance densities and
//! per-cell user loads.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config::{NetworkConfig, ServedUsers};
use crate::error::{Error, Result};
use crate::numerics::integrate;

/// Events with probability below this carry zero weight downstream.
pub const DEGENERATE_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssociationEvent {
    MmHitLos,
    MmHitNlos,
    MmMissLos,
    MmMissNlos,
    MuHit,
    MuMiss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkState {
    Los,
    Nlos,
}

/// Geometric family of an event, ignoring the cache split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    MmLos,
    MmNlos,
    Mu,
}

impl AssociationEvent {
    pub const ALL: [AssociationEvent; 6] = [
        AssociationEvent::MmHitLos,
        AssociationEvent::MmHitNlos,
        AssociationEvent::MmMissLos,
        AssociationEvent::MmMissNlos,
        AssociationEvent::MuHit,
        AssociationEvent::MuMiss,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_mm(self) -> bool {
        !matches!(self, AssociationEvent::MuHit | AssociationEvent::MuMiss)
    }

    pub fn is_hit(self) -> bool {
        matches!(
            self,
            AssociationEvent::MmHitLos | AssociationEvent::MmHitNlos | AssociationEvent::MuHit
        )
    }

    pub fn state(self) -> Option<LinkState> {
        match self {
            AssociationEvent::MmHitLos | AssociationEvent::MmMissLos => Some(LinkState::Los),
            AssociationEvent::MmHitNlos | AssociationEvent::MmMissNlos => Some(LinkState::Nlos),
            _ => None,
        }
    }

    pub fn family(self) -> Family {
        match self.state() {
            Some(LinkState::Los) => Family::MmLos,
            Some(LinkState::Nlos) => Family::MmNlos,
            None => Family::Mu,
        }
    }

    pub fn from_parts(family: Family, hit: bool) -> Self {
        match (family, hit) {
            (Family::MmLos, true) => AssociationEvent::MmHitLos,
            (Family::MmLos, false) => AssociationEvent::MmMissLos,
            (Family::MmNlos, true) => AssociationEvent::MmHitNlos,
            (Family::MmNlos, false) => AssociationEvent::MmMissNlos,
            (Family::Mu, true) => AssociationEvent::MuHit,
            (Family::Mu, false) => AssociationEvent::MuMiss,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AssociationEvent::MmHitLos => "mm_hit_los",
            AssociationEvent::MmHitNlos => "mm_hit_nlos",
            AssociationEvent::MmMissLos => "mm_miss_los",
            AssociationEvent::MmMissNlos => "mm_miss_nlos",
            AssociationEvent::MuHit => "mu_hit",
            AssociationEvent::MuMiss => "mu_miss",
        }
    }
}

impl std::fmt::Display for AssociationEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl LinkState {
    pub fn alpha(self, cfg: &NetworkConfig) -> f64 {
        match self {
            LinkState::Los => cfg.alpha_los,
            LinkState::Nlos => cfg.alpha_nlos,
        }
    }

    pub fn eta(self, cfg: &NetworkConfig) -> u32 {
        match self {
            LinkState::Los => cfg.eta_los,
            LinkState::Nlos => cfg.eta_nlos,
        }
    }

    /// Probability that a link of length r is in this state.
    pub fn prob(self, r: f64, beta: f64) -> f64 {
        match self {
            LinkState::Los => (-beta * r).exp(),
            LinkState::Nlos => -(-beta * r).exp_m1(),
        }
    }
}

pub fn blockage_probs(r: f64, beta: f64) -> Result<(f64, f64)> {
    if !(r >= 0.0) || !(beta >= 0.0) {
        return Err(Error::invalid(format!(
            "blockage needs r >= 0 and beta >= 0 (got {r}, {beta})"
        )));
    }
    let x = -beta * r;
    Ok((x.exp(), -x.exp_m1()))
}

// Σ_{n>=3} (-1)^n (n-1) x^n / n!
fn tail3(x: f64) -> f64 {
    let mut term = x * x / 2.0; // x^n / n! at n = 2
    let mut sum = 0.0;
    for n in 3..60 {
        term *= x / n as f64;
        let t = if n % 2 == 0 { 1.0 } else { -1.0 } * (n - 1) as f64 * term;
        sum += t;
        if t.abs() <= 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// Z(R) = ∫_0^R r e^{-βr} dr. At β = 0 this is R²/2.
pub fn aux_z(r: f64, beta: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    if beta == 0.0 {
        return 0.5 * r * r;
    }
    let x = beta * r;
    let h = if x < 1.0 {
        0.5 * x * x + tail3(x)
    } else {
        -(-x).exp_m1() - x * (-x).exp()
    };
    h / (beta * beta)
}

/// Ẑ(R) = R²/2 − Z(R) = ∫_0^R r (1 − e^{-βr}) dr.
pub fn aux_zhat(r: f64, beta: f64) -> f64 {
    if r <= 0.0 || beta == 0.0 {
        return 0.0;
    }
    let x = beta * r;
    if x < 1.0 {
        -tail3(x) / (beta * beta)
    } else {
        0.5 * r * r - aux_z(r, beta)
    }
}

/// Unnormalised joint density of "served by a BS of this family at distance
/// D", before the cache split (multiply by p or 1 − p for hit or miss).
pub fn geometric_density(family: Family, d: f64, cfg: &NetworkConfig) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    let lm = cfg.lambda_m;
    let lmu = cfg.lambda_mu;
    let beta = cfg.beta;
    let (al, an, amu) = (cfg.alpha_los, cfg.alpha_nlos, cfg.alpha_mu);
    let expo;
    let lead;
    match family {
        Family::MmLos => {
            let r2_mu = (cfg.b_mu * d.powf(al) / cfg.b_m).powf(2.0 / amu);
            expo = -PI * lmu * r2_mu
                - 2.0 * PI * lm * aux_z(d, beta)
                - 2.0 * PI * lm * aux_zhat(d.powf(al / an), beta);
            lead = 2.0 * PI * lm * d * (-beta * d).exp();
        }
        Family::MmNlos => {
            let r2_mu = (cfg.b_mu * d.powf(an) / cfg.b_m).powf(2.0 / amu);
            expo = -PI * lmu * r2_mu
                - 2.0 * PI * lm * aux_z(d.powf(an / al), beta)
                - 2.0 * PI * lm * aux_zhat(d, beta);
            lead = 2.0 * PI * lm * d * (-(-beta * d).exp_m1());
        }
        Family::Mu => {
            let base = cfg.b_m * d.powf(amu) / cfg.b_mu;
            expo = -PI * lmu * d * d
                - 2.0 * PI * lm * aux_z(base.powf(1.0 / al), beta)
                - 2.0 * PI * lm * aux_zhat(base.powf(1.0 / an), beta);
            lead = 2.0 * PI * lmu * d;
        }
    }
    if lead == 0.0 {
        0.0
    } else {
        lead * expo.exp()
    }
}

/// Total mass of each geometric family; independent of caching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricWeights {
    pub mm_los: f64,
    pub mm_nlos: f64,
    pub mu: f64,
}

impl GeometricWeights {
    pub fn compute(cfg: &NetworkConfig) -> Result<Self> {
        let q = &cfg.quad;
        let g = |fam: Family| -> Result<f64> {
            integrate(|d| geometric_density(fam, d, cfg), 0.0, f64::INFINITY, q)
                .map(|i| i.value)
                .map_err(|e| e.with_context(format!("association integral {fam:?}")))
        };
        Ok(GeometricWeights {
            mm_los: g(Family::MmLos)?,
            mm_nlos: g(Family::MmNlos)?,
            mu: g(Family::Mu)?,
        })
    }

    pub fn get(&self, family: Family) -> f64 {
        match family {
            Family::MmLos => self.mm_los,
            Family::MmNlos => self.mm_nlos,
            Family::Mu => self.mu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationProbabilities {
    /// Indexed by `AssociationEvent::index`.
    pub values: [f64; 6],
    pub p_am: f64,
    pub p_amu: f64,
}

impl AssociationProbabilities {
    pub fn from_weights(w: &GeometricWeights, p_m_i: f64, p_mu_i: f64) -> Self {
        let values = [
            p_m_i * w.mm_los,
            p_m_i * w.mm_nlos,
            (1.0 - p_m_i) * w.mm_los,
            (1.0 - p_m_i) * w.mm_nlos,
            p_mu_i * w.mu,
            (1.0 - p_mu_i) * w.mu,
        ];
        AssociationProbabilities {
            values,
            p_am: w.mm_los + w.mm_nlos,
            p_amu: w.mu,
        }
    }

    pub fn get(&self, ev: AssociationEvent) -> f64 {
        self.values[ev.index()]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in [0, 1] (got {p})")))
    }
}

pub fn association_probabilities(
    cfg: &NetworkConfig,
    p_m_i: f64,
    p_mu_i: f64,
) -> Result<AssociationProbabilities> {
    check_prob("p_m_i", p_m_i)?;
    check_prob("p_mu_i", p_mu_i)?;
    let w = GeometricWeights::compute(cfg)?;
    Ok(AssociationProbabilities::from_weights(&w, p_m_i, p_mu_i))
}

fn split(ev: AssociationEvent, p_m_i: f64, p_mu_i: f64) -> f64 {
    let p = if ev.is_mm() { p_m_i } else { p_mu_i };
    if ev.is_hit() {
        p
    } else {
        1.0 - p
    }
}

/// Conditional serving-distance density for `ev`, normalised by the event
/// probability.
pub fn distance_pdf(
    ev: AssociationEvent,
    d: f64,
    cfg: &NetworkConfig,
    p_m_i: f64,
    p_mu_i: f64,
) -> Result<f64> {
    check_prob("p_m_i", p_m_i)?;
    check_prob("p_mu_i", p_mu_i)?;
    if !(d >= 0.0) {
        return Err(Error::invalid(format!("distance must be >= 0 (got {d})")));
    }
    let w = GeometricWeights::compute(cfg)?;
    DistancePdf::new(ev, &w, p_m_i, p_mu_i)?.eval(d, cfg)
}

/// Reusable normalised density for one event.
#[derive(Debug, Clone, Copy)]
pub struct DistancePdf {
    pub event: AssociationEvent,
    /// Cache-split factor times the inverse event probability.
    scale: f64,
}

impl DistancePdf {
    pub fn new(ev: AssociationEvent, w: &GeometricWeights, p_m_i: f64, p_mu_i: f64) -> Result<Self> {
        let s = split(ev, p_m_i, p_mu_i);
        let prob = s * w.get(ev.family());
        if !(prob > DEGENERATE_PROBABILITY) {
            return Err(Error::DegenerateEvent {
                event: ev.name().to_string(),
                probability: prob,
            });
        }
        Ok(DistancePdf {
            event: ev,
            scale: s / prob,
        })
    }

    pub fn eval(&self, d: f64, cfg: &NetworkConfig) -> Result<f64> {
        Ok(self.scale * geometric_density(self.event.family(), d, cfg))
    }

    pub fn value(&self, d: f64, cfg: &NetworkConfig) -> f64 {
        self.scale * geometric_density(self.event.family(), d, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierLoad {
    pub n_assoc_tagged_m: f64,
    pub n_assoc_tagged_mu: f64,
    pub n_assoc_other_m: f64,
    pub n_assoc_other_mu: f64,
    /// Served users of the tagged cell.
    pub u_m: f64,
    pub u_mu: f64,
    /// Served users of every other cell.
    pub u_hat_m: f64,
    pub u_hat_mu: f64,
}

pub fn tier_loads(cfg: &NetworkConfig, assoc: &AssociationProbabilities) -> TierLoad {
    let n_tm = 1.0 + 1.28 * cfg.lambda_u * assoc.p_am / cfg.lambda_m;
    let n_tmu = 1.0 + 1.28 * cfg.lambda_u * assoc.p_amu / cfg.lambda_mu;
    let n_om = cfg.lambda_u * assoc.p_am / cfg.lambda_m;
    let n_omu = cfg.lambda_u * assoc.p_amu / cfg.lambda_mu;
    let cap_m = cfg.n_rf as f64;
    let cap_mu = cfg.nt_mu as f64;
    let (u_m, u_mu, u_hat_m, u_hat_mu) = match cfg.served_users {
        ServedUsers::Full => (cap_m, cap_mu, cap_m, cap_mu),
        ServedUsers::Mean => (
            cap_m.min(n_tm),
            cap_mu.min(n_tmu),
            cap_m.min(n_om),
            cap_mu.min(n_omu),
        ),
    };
    TierLoad {
        n_assoc_tagged_m: n_tm,
        n_assoc_tagged_mu: n_tmu,
        n_assoc_other_m: n_om,
        n_assoc_other_mu: n_omu,
        u_m,
        u_mu,
        u_hat_m,
        u_hat_mu,
    }
}

/// Association probabilities and loads for a config; the loads do not depend
/// on caching, so this is computed once per configuration.
pub fn loads_for(cfg: &NetworkConfig) -> Result<(GeometricWeights, TierLoad)> {
    let w = GeometricWeights::compute(cfg)?;
    let a = AssociationProbabilities::from_weights(&w, 0.5, 0.5);
    Ok((w, tier_loads(cfg, &a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::QuadratureSpec;
    use approx::assert_relative_eq;

    #[test]
    fn blockage() {
        assert_eq!(blockage_probs(0.0, 0.008).unwrap(), (1.0, 0.0));
        let (l, n) = blockage_probs(100.0, 0.008).unwrap();
        assert_relative_eq!(l, 0.449328964117221591, max_relative = 1e-15);
        assert_relative_eq!(l + n, 1.0, max_relative = 1e-15);
        assert!(blockage_probs(-1.0, 0.1).is_err());
    }

    #[test]
    fn z_values() {
        assert_eq!(aux_z(0.0, 0.008), 0.0);
        assert_eq!(aux_zhat(0.0, 0.008), 0.0);
        assert_relative_eq!(aux_z(100.0, 0.008), 2987.62288420314274, max_relative = 1e-14);
        assert_relative_eq!(aux_z(500.0, 0.008), 14194.0907118176422, max_relative = 1e-14);
        let q = integrate(|r| r * (-0.008 * r).exp(), 0.0, 500.0, &QuadratureSpec::default())
            .unwrap();
        assert_relative_eq!(aux_z(500.0, 0.008), q.value, max_relative = 1e-10);
        for &r in &[0.01, 1.0, 50.0, 124.9, 125.1, 1e4] {
            assert_relative_eq!(aux_z(r, 0.008) + aux_zhat(r, 0.008), r * r / 2.0, max_relative = 1e-12);
        }
        assert_eq!(aux_z(10.0, 0.0), 50.0);
        assert_eq!(aux_zhat(10.0, 0.0), 0.0);
    }

    #[test]
    fn z_continuous_across_series_switch() {
        let beta = 0.01;
        let below = aux_z(99.999999, beta);
        let above = aux_z(100.000001, beta);
        assert!((above - below).abs() < 1e-2 * 1e-4 * 200.0);
        let zb = aux_zhat(99.999999, beta);
        let za = aux_zhat(100.000001, beta);
        assert!((za - zb).abs() < 1e-3);
    }

    #[test]
    fn six_events_sum_to_one() {
        let cfg = NetworkConfig::default();
        let a = association_probabilities(&cfg, 0.5, 0.5).unwrap();
        assert!((a.total() - 1.0).abs() < 1e-6, "{a:?}");
        assert!((a.p_am + a.p_amu - 1.0).abs() < 1e-6);
        let z = association_probabilities(&cfg, 0.0, 0.3).unwrap();
        assert_eq!(z.get(AssociationEvent::MmHitLos), 0.0);
        assert_eq!(z.get(AssociationEvent::MmHitNlos), 0.0);
    }

    #[test]
    fn no_small_cells() {
        let mut cfg = NetworkConfig::default();
        cfg.lambda_m = 1e-12;
        let a = association_probabilities(&cfg, 0.5, 0.5).unwrap();
        assert!((a.p_amu - 1.0).abs() < 1e-4);
    }

    #[test]
    fn pdf_normalised_and_zero_at_origin() {
        let cfg = NetworkConfig::default();
        let w = GeometricWeights::compute(&cfg).unwrap();
        for ev in AssociationEvent::ALL {
            let pdf = DistancePdf::new(ev, &w, 0.5, 0.5).unwrap();
            assert_eq!(pdf.value(0.0, &cfg), 0.0);
            let m = integrate(|d| pdf.value(d, &cfg), 0.0, f64::INFINITY, &cfg.quad).unwrap();
            assert!((m.value - 1.0).abs() < 1e-5, "{ev}: {}", m.value);
        }
        assert!(matches!(
            distance_pdf(AssociationEvent::MmHitLos, 10.0, &cfg, 0.0, 0.5),
            Err(Error::DegenerateEvent { .. })
        ));
    }

    #[test]
    fn loads() {
        let mut cfg = NetworkConfig::default();
        cfg.served_users = ServedUsers::Mean;
        let a = association_probabilities(&cfg, 0.5, 0.5).unwrap();
        let l = tier_loads(&cfg, &a);
        assert_relative_eq!(l.n_assoc_tagged_mu, 1.0 + 1.28 * 8e-5 * a.p_amu / 5e-6, max_relative = 1e-14);
        assert_eq!(l.u_mu, l.n_assoc_tagged_mu.min(100.0));
        let zero = AssociationProbabilities {
            values: [0.0; 6],
            p_am: 0.0,
            p_amu: 1.0,
        };
        assert_eq!(tier_loads(&cfg, &zero).n_assoc_tagged_m, 1.0);
        let mut dense = cfg.clone();
        dense.lambda_u = 1e-3;
        let l = tier_loads(&dense, &a);
        assert!(l.n_assoc_tagged_m >= 10.0 / 1.28);
        assert_eq!(l.u_m, 10.0);
        let full = tier_loads(&NetworkConfig::default(), &a);
        assert_eq!((full.u_m, full.u_mu), (10.0, 100.0));
    }
}
