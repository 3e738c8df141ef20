//! Retransmission ASP, average latency and backhaul load.

use std::cell::RefCell;
use std::collections::HashMap;

use serde::Serialize;

use crate::catalog::{hit_probability, CacheProfile, Popularity, Tier};
use crate::config::{AccessTime, InterferenceExclusion, NetworkConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    geometric_density, loads_for, AssociationEvent, AssociationProbabilities, Family,
    GeometricWeights, LinkState, TierLoad, DEGENERATE_PROBABILITY,
};
use crate::link::{
    backhaul_asp, mm_conditional_asp, mu_conditional_asp_with, mu_rate_at, BoundSide,
};
use crate::numerics::integrate;

#[derive(Debug, Clone, Serialize)]
pub struct EventBreakdown {
    pub event: AssociationEvent,
    /// Popularity-weighted association probability.
    pub probability: f64,
    /// ASP conditioned on the event.
    pub asp: f64,
    /// Latency conditioned on the event, seconds.
    pub latency: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileBreakdown {
    pub popularity: f64,
    pub p_m: f64,
    pub p_mu: f64,
    pub asp: f64,
    pub latency: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QosReport {
    pub side: BoundSide,
    pub n_retx: u32,
    pub asp: f64,
    pub latency: f64,
    pub backhaul_load: f64,
    pub per_event: Vec<EventBreakdown>,
    pub per_file: Vec<FileBreakdown>,
}

/// S / rate; infinite for a zero rate.
pub fn t0_access(mean_rate: f64, s_file: f64) -> f64 {
    if mean_rate > 0.0 {
        s_file / mean_rate
    } else {
        f64::INFINITY
    }
}

/// Backhaul transfer plus processing delay for a file fetched by tier `tier`.
pub fn backhaul_delay(tier: Tier, cfg: &NetworkConfig, nu_i: f64) -> f64 {
    let lam_j = match tier {
        Tier::Mm => cfg.lambda_m,
        Tier::Mu => cfg.lambda_mu,
    };
    let hops = lam_j / cfg.lambda_g * cfg.k1
        + (1.0 / (cfg.relay_r * (2.0 * cfg.lambda_g).sqrt()) - 1.0) * cfg.k2;
    cfg.s_file / nu_i + hops * (cfg.a_proc + cfg.s_file * cfg.omega_proc)
}

/// Σ_k<N (1 − x)^k, i.e. (1 − (1 − x)^N)/x capped at N.
fn attempts_factor(x: f64, n: u32) -> f64 {
    let q = 1.0 - x.clamp(0.0, 1.0);
    let mut acc = 0.0;
    let mut t = 1.0;
    for _ in 0..n {
        acc += t;
        t *= q;
    }
    acc
}

fn retx(x: f64, n: u32) -> f64 {
    let q = 1.0 - x.clamp(0.0, 1.0);
    1.0 - q.powi(n as i32)
}

/// Unconstrained backhaul traffic per unit area, bits/s/m².
pub fn backhaul_load_density(
    cfg: &NetworkConfig,
    pop: &Popularity,
    profile: &CacheProfile,
    p_am: f64,
) -> Result<f64> {
    if profile.len() != pop.len() || cfg.nu.len() != pop.len() {
        return Err(Error::invalid("popularity, profile and rate vector lengths differ"));
    }
    let mut acc = 0.0;
    for i in 0..pop.len() {
        let nu = cfg.nu[i];
        acc += pop.f[i]
            * ((1.0 - profile.p_m[i]) * cfg.lambda_u * p_am * nu
                + (1.0 - profile.p_mu[i]) * cfg.lambda_u * (1.0 - p_am) * nu);
    }
    Ok(acc.max(0.0))
}

type CondKey = (u8, u64, u64, u8, u64);
type OuterKey = (u8, u64, u64, u32, u8, u64, bool);

/// Analytic engine for one configuration. Conditional link results are
/// memoized, so repeated evaluations over files, N and bound sides share work.
pub struct AnalyticModel {
    cfg: NetworkConfig,
    weights: GeometricWeights,
    loads: TierLoad,
    mm_cond: RefCell<HashMap<CondKey, f64>>,
    mm_outer: RefCell<HashMap<OuterKey, (f64, f64)>>,
    mu_cond: RefCell<HashMap<(bool, u64, u64, u8), f64>>,
    mu_t0: RefCell<HashMap<(bool, u64, u64), f64>>,
}

fn side_key(side: BoundSide) -> u8 {
    match side {
        BoundSide::Lower => 0,
        BoundSide::Upper => 1,
    }
}

impl AnalyticModel {
    pub fn new(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let (weights, loads) = loads_for(cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            weights,
            loads,
            mm_cond: RefCell::default(),
            mm_outer: RefCell::default(),
            mu_cond: RefCell::default(),
            mu_t0: RefCell::default(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &GeometricWeights {
        &self.weights
    }

    pub fn loads(&self) -> &TierLoad {
        &self.loads
    }

    /// Fraction of users served by the mmWave tier.
    pub fn p_am(&self) -> f64 {
        let w = &self.weights;
        w.mm_los + w.mm_nlos
    }

    fn class_p(&self, p_m: f64) -> u64 {
        match self.cfg.interference_exclusion {
            InterferenceExclusion::Association => 0,
            InterferenceExclusion::CacheClass => p_m.to_bits(),
        }
    }

    fn mm_cond(&self, ev: AssociationEvent, r: f64, nu: f64, p_m: f64, side: BoundSide) -> Result<f64> {
        let class = self.class_p(p_m);
        let k = (ev.index() as u8, nu.to_bits(), r.to_bits(), side_key(side), class);
        if let Some(v) = self.mm_cond.borrow().get(&k) {
            return Ok(*v);
        }
        // under association exclusion hit and miss share the same conditional value
        let ev_eff = match self.cfg.interference_exclusion {
            InterferenceExclusion::Association => match ev.state() {
                Some(LinkState::Los) => AssociationEvent::MmHitLos,
                _ => AssociationEvent::MmHitNlos,
            },
            InterferenceExclusion::CacheClass => ev,
        };
        let k = (ev_eff.index() as u8, k.1, k.2, k.3, k.4);
        if let Some(v) = self.mm_cond.borrow().get(&k) {
            return Ok(*v);
        }
        let v = mm_conditional_asp(ev_eff, r, nu, &self.cfg, &self.loads, p_m, side)?;
        self.mm_cond.borrow_mut().insert(k, v);
        Ok(v)
    }

    /// (retransmission ASP, attempts factor) of a mmWave event averaged over
    /// the serving distance.
    fn mm_event(
        &self,
        ev: AssociationEvent,
        nu: f64,
        p_m: f64,
        b: f64,
        n: u32,
        side: BoundSide,
    ) -> Result<(f64, f64)> {
        let class = self.class_p(p_m);
        let key = (ev.family() as u8, nu.to_bits(), b.to_bits(), n, side_key(side), class, ev.is_hit());
        if let Some(v) = self.mm_outer.borrow().get(&key) {
            return Ok(*v);
        }
        let fam = ev.family();
        let norm = self.weights.get(fam);
        let cfg = &self.cfg;
        let mut fail: Option<Error> = None;
        let mut eval = |r: f64, g: &dyn Fn(f64) -> f64| -> f64 {
            if fail.is_some() {
                return 0.0;
            }
            let dens = geometric_density(fam, r, cfg) / norm;
            if dens == 0.0 {
                return 0.0;
            }
            match self.mm_cond(ev, r, nu, p_m, side) {
                Ok(p) => g(p * b) * dens,
                Err(e) => {
                    fail = Some(e);
                    0.0
                }
            }
        };
        let a = integrate(|r| eval(r, &|x| retx(x, n)), 0.0, f64::INFINITY, &cfg.quad)?;
        let l = integrate(|r| eval(r, &|x| attempts_factor(x, n)), 0.0, f64::INFINITY, &cfg.quad)?;
        if let Some(e) = fail {
            return Err(e);
        }
        let v = (a.value.clamp(0.0, 1.0), l.value.clamp(1.0, n as f64));
        self.mm_outer.borrow_mut().insert(key, v);
        Ok(v)
    }

    fn mu_cond(&self, hit: bool, nu: f64, p_mu: f64, side: BoundSide) -> Result<f64> {
        let k = (hit, nu.to_bits(), p_mu.to_bits(), side_key(side));
        if let Some(v) = self.mu_cond.borrow().get(&k) {
            return Ok(*v);
        }
        let v = mu_conditional_asp_with(hit, nu, &self.cfg, &self.loads, &self.weights, p_mu, side)?;
        self.mu_cond.borrow_mut().insert(k, v);
        Ok(v)
    }

    /// Access time of one attempt on the μWave tier.
    fn mu_access(&self, hit: bool, nu: f64, p_mu: f64) -> Result<f64> {
        let cfg = &self.cfg;
        match cfg.access_time {
            AccessTime::TargetRate => Ok(t0_access(nu, cfg.s_file)),
            AccessTime::MeanRate => {
                let k = (hit, nu.to_bits(), p_mu.to_bits());
                if let Some(v) = self.mu_t0.borrow().get(&k) {
                    return Ok(*v);
                }
                let norm = self.weights.mu;
                let mut fail = None;
                let i = integrate(
                    |r| {
                        let dens = geometric_density(Family::Mu, r, cfg) / norm;
                        if dens == 0.0 {
                            return 0.0;
                        }
                        match mu_rate_at(hit, r, cfg, &self.loads, p_mu) {
                            Ok(rate) => t0_access(rate, cfg.s_file).min(f64::MAX) * dens,
                            Err(e) => {
                                fail = Some(e);
                                0.0
                            }
                        }
                    },
                    0.0,
                    f64::INFINITY,
                    &cfg.quad,
                )?;
                if let Some(e) = fail {
                    return Err(e);
                }
                self.mu_t0.borrow_mut().insert(k, i.value);
                Ok(i.value)
            }
        }
    }

    /// Retransmission ASP and mean latency of one (file, event) pair.
    pub fn event_metrics(
        &self,
        ev: AssociationEvent,
        nu: f64,
        p_m: f64,
        p_mu: f64,
        tier_hit: (f64, f64),
        n: u32,
        side: BoundSide,
    ) -> Result<(f64, f64)> {
        let cfg = &self.cfg;
        let tier = if ev.is_mm() { Tier::Mm } else { Tier::Mu };
        // other users' requests follow the popularity, not the typical user's file
        let p_hit = if ev.is_mm() { tier_hit.0 } else { tier_hit.1 };
        let b = if ev.is_hit() {
            1.0
        } else {
            backhaul_asp(tier, nu, cfg, &self.loads, p_hit)?
        };
        let extra = if ev.is_hit() { 0.0 } else { backhaul_delay(tier, cfg, nu) };
        if ev.is_mm() {
            let t0 = t0_access(nu, cfg.s_file) + extra;
            let (a, f) = self.mm_event(ev, nu, p_m, b, n, side)?;
            Ok((a, t0 * f))
        } else {
            let p = self.mu_cond(ev.is_hit(), nu, p_mu, side)?;
            let t0 = self.mu_access(ev.is_hit(), nu, p_mu)? + extra;
            Ok((retx(p * b, n), t0 * attempts_factor(p * b, n)))
        }
    }

    /// Full report at retransmission limit `n`.
    pub fn evaluate_n(
        &self,
        pop: &Popularity,
        profile: &CacheProfile,
        side: BoundSide,
        n: u32,
    ) -> Result<QosReport> {
        let cfg = &self.cfg;
        if n == 0 {
            return Err(Error::invalid("retransmission limit must be >= 1"));
        }
        if pop.len() != profile.len() || pop.len() != cfg.nu.len() {
            return Err(Error::invalid(format!(
                "popularity ({}), profile ({}) and rate ({}) lengths differ",
                pop.len(),
                profile.len(),
                cfg.nu.len()
            )));
        }
        let tier_hit = hit_probabilities(pop, profile)?;
        let mut ev_prob = [0.0; 6];
        let mut ev_asp = [0.0; 6];
        let mut ev_lat = [0.0; 6];
        let mut per_file = Vec::with_capacity(pop.len());
        let mut asp = 0.0;
        let mut lat = 0.0;
        for i in 0..pop.len() {
            let (pm, pmu, nu) = (profile.p_m[i], profile.p_mu[i], cfg.nu[i]);
            let assoc = AssociationProbabilities::from_weights(&self.weights, pm, pmu);
            let mut fa = 0.0;
            let mut fl = 0.0;
            for ev in AssociationEvent::ALL {
                let w = assoc.get(ev);
                if w <= DEGENERATE_PROBABILITY {
                    continue;
                }
                let (a, l) = self
                    .event_metrics(ev, nu, pm, pmu, tier_hit, n, side)
                    .map_err(|e| e.with_context(format!("event {ev}, file {}", i + 1)))?;
                fa += w * a;
                fl += w * l;
                let k = ev.index();
                ev_prob[k] += pop.f[i] * w;
                ev_asp[k] += pop.f[i] * w * a;
                ev_lat[k] += pop.f[i] * w * l;
            }
            asp += pop.f[i] * fa;
            lat += pop.f[i] * fl;
            per_file.push(FileBreakdown {
                popularity: pop.f[i],
                p_m: pm,
                p_mu: pmu,
                asp: fa,
                latency: fl,
            });
        }
        let per_event = AssociationEvent::ALL
            .iter()
            .map(|&ev| {
                let k = ev.index();
                let p = ev_prob[k];
                let (a, l) = if p > 0.0 {
                    (ev_asp[k] / p, ev_lat[k] / p)
                } else {
                    (0.0, 0.0)
                };
                EventBreakdown {
                    event: ev,
                    probability: p,
                    asp: a,
                    latency: l,
                }
            })
            .collect();
        Ok(QosReport {
            side,
            n_retx: n,
            asp: asp.clamp(0.0, 1.0),
            latency: lat,
            backhaul_load: backhaul_load_density(cfg, pop, profile, self.p_am())?,
            per_event,
            per_file,
        })
    }

    pub fn evaluate(&self, pop: &Popularity, profile: &CacheProfile, side: BoundSide) -> Result<QosReport> {
        self.evaluate_n(pop, profile, side, self.cfg.n_retx)
    }
}

pub fn retransmission_asp(
    cfg: &NetworkConfig,
    pop: &Popularity,
    profile: &CacheProfile,
    side: BoundSide,
) -> Result<f64> {
    Ok(AnalyticModel::new(cfg)?.evaluate(pop, profile, side)?.asp)
}

pub fn average_latency(
    cfg: &NetworkConfig,
    pop: &Popularity,
    profile: &CacheProfile,
    side: BoundSide,
) -> Result<f64> {
    Ok(AnalyticModel::new(cfg)?.evaluate(pop, profile, side)?.latency)
}

/// Average hit probabilities (mmWave, μWave) of a profile.
pub fn hit_probabilities(pop: &Popularity, profile: &CacheProfile) -> Result<(f64, f64)> {
    Ok((
        hit_probability(pop, profile, Tier::Mm)?,
        hit_probability(pop, profile, Tier::Mu)?,
    ))
}
