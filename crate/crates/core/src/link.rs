//! Single-attempt success probabilities for the access and backhaul links.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};
use statrs::function::factorial::{binomial, ln_binomial};
use statrs::function::gamma::ln_gamma;

use crate::catalog::{backhaul_capacity, Tier};
use crate::config::{InterferenceExclusion, NetworkConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    geometric_density, AssociationEvent, Family, GeometricWeights, LinkState, TierLoad,
};
use crate::numerics::{find_root_bisect, integrate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    Lower,
    Upper,
}

impl BoundSide {
    pub const BOTH: [BoundSide; 2] = [BoundSide::Lower, BoundSide::Upper];

    pub fn label(self) -> &'static str {
        match self {
            BoundSide::Lower => "lower",
            BoundSide::Upper => "upper",
        }
    }
}

impl std::fmt::Display for BoundSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Derived per-evaluation scalars, reported for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConstants {
    pub q_i: f64,
    pub g_gain: f64,
    /// Laplace argument; negative, -q / (g R^-alpha).
    pub s_lap: f64,
    pub c1_mimo: f64,
    pub c2_mimo: f64,
    pub c3p: f64,
    pub c3pp: f64,
    pub n_b: u64,
    pub r_star: Option<f64>,
}

/// 2^(nu U / W) − 1.
pub fn sinr_threshold(nu: f64, u: f64, w: f64) -> f64 {
    (LN_2 * nu * u / w).exp_m1()
}

pub fn zf_penalty(nr: u32, u: f64) -> f64 {
    (1.0 - 1.0 / nr as f64).powf(u - 1.0)
}

/// Composite mmWave serving gain (P/U)(n_r n_t / eta).
pub fn mm_gain(cfg: &NetworkConfig, u: f64, state: LinkState) -> f64 {
    cfg.p_m_tx / u * (cfg.nr_m as f64 * cfg.nt_m as f64) / state.eta(cfg) as f64
}

fn pgfl_kernel(x: f64, e: f64) -> f64 {
    // 1 − (1 + x)^(−e)
    -(-e * x.ln_1p()).exp_m1()
}

struct MmLaplace<'a> {
    cfg: &'a NetworkConfig,
    theta: f64,
    side: BoundSide,
}

impl MmLaplace<'_> {
    /// ∫_lo^∞ [1 − (1 + θ P n_r n_t w r^-α_j)^-e] 2πλ_m p_j(r) r dr
    fn integral(&self, j: LinkState, lo: f64, hi: f64) -> Result<f64> {
        if !(hi > lo) {
            return Ok(0.0);
        }
        let cfg = self.cfg;
        let (w, e) = match self.side {
            BoundSide::Lower => (1.0, j.eta(cfg) as f64),
            BoundSide::Upper => ((cfg.rho_bs * cfg.rho_ue).powi(2), 1.0),
        };
        let amp = self.theta * cfg.p_m_tx * cfg.nr_m as f64 * cfg.nt_m as f64 * w;
        let alpha = j.alpha(cfg);
        let beta = cfg.beta;
        let lam = 2.0 * PI * cfg.lambda_m;
        let f = |r: f64| {
            if r <= 0.0 {
                return 0.0;
            }
            let x = amp * r.powf(-alpha);
            pgfl_kernel(x, e) * lam * j.prob(r, beta) * r
        };
        integrate(f, lo, hi, &cfg.quad).map(|i| i.value)
    }
}

fn other(s: LinkState) -> LinkState {
    match s {
        LinkState::Los => LinkState::Nlos,
        LinkState::Nlos => LinkState::Los,
    }
}

/// Conditional single-attempt success probability of a mmWave link at
/// serving distance `r`.
pub fn mm_conditional_asp(
    ev: AssociationEvent,
    r: f64,
    nu_i: f64,
    cfg: &NetworkConfig,
    loads: &TierLoad,
    p_m_i: f64,
    side: BoundSide,
) -> Result<f64> {
    let s = ev
        .state()
        .ok_or_else(|| Error::invalid(format!("{ev} is not a mmWave event")))?;
    if !(r > 0.0) {
        return Err(Error::invalid(format!("serving distance must be > 0 (got {r})")));
    }
    if !(nu_i > 0.0) {
        return Err(Error::invalid(format!("target rate must be > 0 (got {nu_i})")));
    }
    let u = loads.u_m;
    if !(u >= 1.0) {
        return Err(Error::invalid(format!("served mmWave users must be >= 1 (got {u})")));
    }
    let p_zf = zf_penalty(cfg.nr_m, u);
    let q = sinr_threshold(nu_i, u, cfg.w_m);
    let g = mm_gain(cfg, u, s);
    let theta = q * r.powf(s.alpha(cfg)) / g;
    if theta == 0.0 {
        return Ok(p_zf.clamp(0.0, 1.0));
    }
    let noise = -theta * cfg.sigma2_m;
    let lap = MmLaplace { cfg, theta, side };
    let inf = f64::INFINITY;
    let a_s = s.alpha(cfg);
    let mut expo = 0.0;
    match cfg.interference_exclusion {
        InterferenceExclusion::Association => {
            for j in [LinkState::Los, LinkState::Nlos] {
                let lo = r.powf(a_s / j.alpha(cfg));
                expo += lap.integral(j, lo, inf)?;
            }
        }
        InterferenceExclusion::CacheClass => {
            let ps = if ev.is_hit() { p_m_i } else { 1.0 - p_m_i };
            // same state: serving class excluded inside R, the other class from 0
            let inner = lap.integral(s, 0.0, r)?;
            let outer = lap.integral(s, r, inf)?;
            expo += outer + (1.0 - ps) * inner;
            expo += lap.integral(other(s), 0.0, inf)?;
        }
    }
    let v = p_zf * (noise - expo).exp();
    Ok(v.clamp(0.0, 1.0))
}

/// (C1, C2, C3', C3'') of the μWave mean-rate approximation.
pub fn mu_constants(
    hit: bool,
    cfg: &NetworkConfig,
    loads: &TierLoad,
    p_mu_i: f64,
) -> Result<(f64, f64, f64, f64)> {
    let u = loads.u_mu;
    let n = cfg.nt_mu as f64;
    if !(u >= 1.0) {
        return Err(Error::invalid(format!("served μWave users must be >= 1 (got {u})")));
    }
    if n < u {
        return Err(Error::invalid(format!(
            "nt_mu = {n} is smaller than the served users {u}"
        )));
    }
    let k = n - u + 1.0;
    let pu = cfg.p_mu_tx / u;
    let c1 = pu * (2.0 * (ln_gamma(k + 0.5) - ln_gamma(k))).exp();
    let c2 = pu * k - c1;
    let camp = cfg.p_mu_tx * 2.0 * PI * cfg.lambda_mu / (cfg.alpha_mu - 2.0);
    let (own, rest) = if hit {
        (p_mu_i, 1.0 - p_mu_i)
    } else {
        (1.0 - p_mu_i, p_mu_i)
    };
    Ok((c1, c2, camp * own, camp * rest))
}

fn mu_rate_with(consts: (f64, f64, f64, f64), r: f64, cfg: &NetworkConfig, u: f64) -> f64 {
    let (c1, c2, c3p, c3pp) = consts;
    let ra = r.powf(-cfg.alpha_mu);
    let sinr = c1 * ra / (c2 * ra + c3p * ra * r * r + c3pp + cfg.sigma2_mu);
    cfg.w_mu / u * sinr.ln_1p() / LN_2
}

/// Mean μWave rate at serving distance r (r > 0; the analytic model uses
/// r >= 1).
pub fn mu_rate_at(
    hit: bool,
    r: f64,
    cfg: &NetworkConfig,
    loads: &TierLoad,
    p_mu_i: f64,
) -> Result<f64> {
    let c = mu_constants(hit, cfg, loads, p_mu_i)?;
    Ok(mu_rate_with(c, r, cfg, loads.u_mu))
}

pub fn mu_mean_rate(
    hit: bool,
    r: f64,
    cfg: &NetworkConfig,
    loads: &TierLoad,
    p_mu_i: f64,
) -> Result<f64> {
    if !(r >= 1.0) {
        return Err(Error::invalid(format!("mean rate needs r >= 1 (got {r})")));
    }
    mu_rate_at(hit, r, cfg, loads, p_mu_i)
}

/// Distance below which the mean rate meets `nu_i`. `Ok(None)` if even r = 1
/// falls short, `Ok(Some(inf))` if the rate stays above at the truncation
/// radius.
pub fn mu_critical_radius(
    hit: bool,
    nu_i: f64,
    cfg: &NetworkConfig,
    loads: &TierLoad,
    p_mu_i: f64,
) -> Result<Option<f64>> {
    let c = mu_constants(hit, cfg, loads, p_mu_i)?;
    let u = loads.u_mu;
    let g = |r: f64| mu_rate_with(c, r, cfg, u) - nu_i;
    if g(1.0) < 0.0 {
        return Ok(None);
    }
    let t = cfg.quad.truncation_radius;
    if g(t) >= 0.0 {
        return Ok(Some(f64::INFINITY));
    }
    find_root_bisect(g, 1.0, t, 1e-9).map(Some)
}

/// Conditional μWave success probability: mass of the serving-distance PDF on
/// [1, floor R*] (lower) or [1, ceil R*] (upper).
pub fn mu_conditional_asp_with(
    hit: bool,
    nu_i: f64,
    cfg: &NetworkConfig,
    loads: &TierLoad,
    weights: &GeometricWeights,
    p_mu_i: f64,
    side: BoundSide,
) -> Result<f64> {
    let r_star = match mu_critical_radius(hit, nu_i, cfg, loads, p_mu_i)? {
        None => return Ok(0.0),
        Some(r) => r,
    };
    let hi = if r_star.is_infinite() {
        f64::INFINITY
    } else {
        match side {
            BoundSide::Lower => r_star.floor(),
            BoundSide::Upper => r_star.ceil(),
        }
    };
    if hi <= 1.0 {
        return Ok(0.0);
    }
    let norm = weights.mu;
    if !(norm > 0.0) {
        return Ok(0.0);
    }
    let m = integrate(|d| geometric_density(Family::Mu, d, cfg), 1.0, hi, &cfg.quad)?;
    Ok((m.value / norm).clamp(0.0, 1.0))
}

pub fn mu_conditional_asp(
    hit: bool,
    nu_i: f64,
    cfg: &NetworkConfig,
    loads: &TierLoad,
    p_mu_i: f64,
    side: BoundSide,
) -> Result<f64> {
    let w = GeometricWeights::compute(cfg)?;
    mu_conditional_asp_with(hit, nu_i, cfg, loads, &w, p_mu_i, side)
}

/// floor(C_b / nu_i).
pub fn backhaul_budget(cfg: &NetworkConfig, nu_i: f64) -> Result<u64> {
    if !(nu_i > 0.0) {
        return Err(Error::invalid(format!("target rate must be > 0 (got {nu_i})")));
    }
    let cb = backhaul_capacity(cfg)?;
    if !(cb >= 0.0) {
        return Err(Error::invalid(format!("backhaul capacity must be >= 0 (got {cb})")));
    }
    let x = cb / nu_i;
    // absorb rounding in C_b so exact multiples are not floored down
    Ok((x * (1.0 + 4.0 * f64::EPSILON)).floor().min(u64::MAX as f64) as u64)
}

/// Σ_{n=0}^{U−1} C(U−1, n) p^(U−1−n) (1−p)^n min(1, N_b/(n+1)).
pub fn backhaul_asp_exact(u: u64, p_hit: f64, n_b: u64) -> f64 {
    let u = u.max(1);
    if n_b >= u {
        return 1.0;
    }
    let m = u - 1;
    let q = 1.0 - p_hit;
    let share = |n: u64| (n_b as f64 / (n as f64 + 1.0)).min(1.0);
    let mut acc = 0.0;
    if m <= 1000 {
        // direct products stay finite here and keep small cases exact
        for n in 0..=m {
            let w = binomial(m, n) * p_hit.powi((m - n) as i32) * q.powi(n as i32);
            acc += w * share(n);
        }
    } else {
        let (lp, lq) = (p_hit.ln(), q.ln());
        for n in 0..=m {
            let mut lw = ln_binomial(m, n);
            if m > n {
                lw += (m - n) as f64 * lp;
            }
            if n > 0 {
                lw += n as f64 * lq;
            }
            acc += lw.exp() * share(n);
        }
    }
    acc.clamp(0.0, 1.0)
}

/// Served users of the tagged cell, rounded to an integer >= 1.
pub fn served_users(tier: Tier, loads: &TierLoad) -> u64 {
    let u = match tier {
        Tier::Mm => loads.u_m,
        Tier::Mu => loads.u_mu,
    };
    u.round().max(1.0) as u64
}

pub fn backhaul_asp(
    tier: Tier,
    nu_i: f64,
    cfg: &NetworkConfig,
    loads: &TierLoad,
    p_hit: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_hit) {
        return Err(Error::invalid(format!("p_hit must lie in [0, 1] (got {p_hit})")));
    }
    let n_b = backhaul_budget(cfg, nu_i)?;
    Ok(backhaul_asp_exact(served_users(tier, loads), p_hit, n_b))
}

/// Collect the derived constants for one (event, distance) pair.
pub fn link_constants(
    ev: AssociationEvent,
    r: f64,
    nu_i: f64,
    cfg: &NetworkConfig,
    loads: &TierLoad,
    p_mu_i: f64,
) -> Result<LinkConstants> {
    let n_b = backhaul_budget(cfg, nu_i)?;
    match ev.state() {
        Some(s) => {
            let q = sinr_threshold(nu_i, loads.u_m, cfg.w_m);
            let g = mm_gain(cfg, loads.u_m, s);
            Ok(LinkConstants {
                q_i: q,
                g_gain: g,
                s_lap: -q * r.powf(s.alpha(cfg)) / g,
                c1_mimo: 0.0,
                c2_mimo: 0.0,
                c3p: 0.0,
                c3pp: 0.0,
                n_b,
                r_star: None,
            })
        }
        None => {
            let hit = ev.is_hit();
            let (c1, c2, c3p, c3pp) = mu_constants(hit, cfg, loads, p_mu_i)?;
            let q = sinr_threshold(nu_i, loads.u_mu, cfg.w_mu);
            Ok(LinkConstants {
                q_i: q,
                g_gain: cfg.p_mu_tx / loads.u_mu,
                s_lap: 0.0,
                c1_mimo: c1,
                c2_mimo: c2,
                c3p,
                c3pp,
                n_b,
                r_star: mu_critical_radius(hit, nu_i, cfg, loads, p_mu_i)?,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::loads_for;
    use approx::assert_relative_eq;

    fn setup() -> (NetworkConfig, GeometricWeights, TierLoad) {
        let cfg = NetworkConfig::default();
        let (w, l) = loads_for(&cfg).unwrap();
        (cfg, w, l)
    }

    #[test]
    fn zero_rate_gives_zf_penalty() {
        let (cfg, _, l) = setup();
        for ev in [AssociationEvent::MmHitLos, AssociationEvent::MmMissNlos] {
            for side in BoundSide::BOTH {
                let v = mm_conditional_asp(ev, 50.0, 1e-300, &cfg, &l, 0.5, side).unwrap();
                assert_eq!(v, (15.0f64 / 16.0).powi(9));
                assert_relative_eq!(v, 0.559424506718642078, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn far_link_dies() {
        let (cfg, _, l) = setup();
        let v = mm_conditional_asp(AssociationEvent::MmHitNlos, 1e4, 1e8, &cfg, &l, 0.5, BoundSide::Upper)
            .unwrap();
        assert!(v < 1e-6);
    }

    #[test]
    fn lower_below_upper() {
        let (cfg, _, l) = setup();
        for ev in [
            AssociationEvent::MmHitLos,
            AssociationEvent::MmHitNlos,
            AssociationEvent::MmMissLos,
            AssociationEvent::MmMissNlos,
        ] {
            for &r in &[5.0, 50.0, 150.0] {
                for &nu in &[1e5, 1e7, 1e8] {
                    let lo = mm_conditional_asp(ev, r, nu, &cfg, &l, 0.5, BoundSide::Lower).unwrap();
                    let up = mm_conditional_asp(ev, r, nu, &cfg, &l, 0.5, BoundSide::Upper).unwrap();
                    assert!(lo <= up, "{ev} r={r} nu={nu}: {lo} > {up}");
                }
            }
        }
    }

    #[test]
    fn mimo_constants_at_full_load() {
        let (cfg, _, l) = setup();
        let (c1, c2, _, _) = mu_constants(true, &cfg, &l, 0.5).unwrap();
        let pu = cfg.p_mu_tx / 100.0;
        assert_relative_eq!(c1, pu * std::f64::consts::FRAC_PI_4, max_relative = 1e-13);
        assert_relative_eq!(c2, pu * (1.0 - std::f64::consts::FRAC_PI_4), max_relative = 1e-12);
        let (_, _, _, c3pp) = mu_constants(true, &cfg, &l, 1.0).unwrap();
        assert_eq!(c3pp, 0.0);
    }

    #[test]
    fn mean_rate_decreasing() {
        let (cfg, _, l) = setup();
        let mut prev = f64::INFINITY;
        for k in 0..=300 {
            let r = 10f64.powf(k as f64 / 100.0);
            let v = mu_mean_rate(true, r, &cfg, &l, 0.5).unwrap();
            assert!(v < prev, "r={r}");
            prev = v;
        }
        assert!(mu_mean_rate(true, 0.5, &cfg, &l, 0.5).is_err());
    }

    #[test]
    fn mu_asp_limits() {
        let (cfg, w, l) = setup();
        let rate1 = mu_mean_rate(true, 1.0, &cfg, &l, 0.5).unwrap();
        for side in BoundSide::BOTH {
            assert_eq!(mu_conditional_asp_with(true, rate1 * 1.01, &cfg, &l, &w, 0.5, side).unwrap(), 0.0);
            let all = mu_conditional_asp_with(true, 1e-9, &cfg, &l, &w, 0.5, side).unwrap();
            let m = integrate(|d| geometric_density(Family::Mu, d, &cfg), 1.0, f64::INFINITY, &cfg.quad)
                .unwrap()
                .value
                / w.mu;
            assert!((all - m).abs() < 1e-5);
        }
        let lo = mu_conditional_asp_with(true, 1e6, &cfg, &l, &w, 0.5, BoundSide::Lower).unwrap();
        let up = mu_conditional_asp_with(true, 1e6, &cfg, &l, &w, 0.5, BoundSide::Upper).unwrap();
        assert!(lo <= up);
    }

    #[test]
    fn backhaul_examples() {
        assert_eq!(backhaul_asp_exact(3, 0.5, 1), 7.0 / 12.0);
        let big = backhaul_asp_exact(2000, 0.9, 150);
        assert!(big > 0.0 && big < 1.0);
        assert_eq!(backhaul_asp_exact(10, 1.0, 1), 1.0);
        assert_eq!(backhaul_asp_exact(10, 0.3, 10), 1.0);
        assert_eq!(backhaul_asp_exact(1, 0.0, 0), 0.0);
        let (cfg, _, l) = setup();
        // C_b = 4e6, nu = 1e6 -> N_b = 4
        assert_eq!(backhaul_budget(&cfg, 1e6).unwrap(), 4);
        let v = backhaul_asp(Tier::Mm, 1e6, &cfg, &l, 0.5).unwrap();
        assert!(v > 0.0 && v < 1.0);
    }
}
