//! Monte Carlo simulator.
//!
//! Every trial owns a ChaCha8 stream derived from `(seed, trial)`, and trials
//! are reduced in fixed-size chunks merged in index order, so results do not
//! depend on the number of worker threads.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::{hit_probability, CacheProfile, Popularity, Tier};
use crate::config::{AccessTime, NetworkConfig};
use crate::error::{Error, Result};
use crate::geometry::{loads_for, AssociationEvent, Family, LinkState, TierLoad};
use crate::link::{
    backhaul_budget, mm_gain, mu_rate_at, served_users, sinr_threshold, zf_penalty,
};
use crate::qos::{backhaul_delay, t0_access};

pub const CHUNK: usize = 1024;
const Z95: f64 = 1.959963984540054;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for substream `(seed, stream, index)`.
pub fn substream(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let s = splitmix(splitmix(splitmix(seed) ^ stream) ^ index);
    ChaCha8Rng::seed_from_u64(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MmPoint {
    pub x: f64,
    pub y: f64,
    pub r: f64,
    pub state: LinkState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuPoint {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Realization {
    pub half_width: f64,
    pub mm: Vec<MmPoint>,
    pub mu: Vec<MuPoint>,
    /// `cache_mm[b][i]`: mmWave BS b holds file i.
    pub cache_mm: Vec<Vec<bool>>,
    pub cache_mu: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Serving {
    Mm(usize),
    Mu(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Association {
    pub event: AssociationEvent,
    pub serving: Serving,
    pub distance: f64,
}

fn poisson_count<R: Rng>(rng: &mut R, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as usize).unwrap_or(0)
}

fn sample_points<R: Rng>(
    cfg: &NetworkConfig,
    half_width: f64,
    rng: &mut R,
) -> (Vec<MmPoint>, Vec<MuPoint>) {
    let area = 4.0 * half_width * half_width;
    let n_m = poisson_count(rng, cfg.lambda_m * area);
    let mut mm = Vec::with_capacity(n_m);
    for _ in 0..n_m {
        let x = rng.gen_range(-half_width..half_width);
        let y = rng.gen_range(-half_width..half_width);
        let r = x.hypot(y);
        let state = if rng.gen::<f64>() < (-cfg.beta * r).exp() {
            LinkState::Los
        } else {
            LinkState::Nlos
        };
        mm.push(MmPoint { x, y, r, state });
    }
    let n_mu = poisson_count(rng, cfg.lambda_mu * area);
    let mut mu = Vec::with_capacity(n_mu);
    for _ in 0..n_mu {
        let x = rng.gen_range(-half_width..half_width);
        let y = rng.gen_range(-half_width..half_width);
        mu.push(MuPoint { x, y, r: x.hypot(y) });
    }
    (mm, mu)
}

/// Draws one network realization in a square window centred on the typical
/// user, including the full per-BS cache matrix.
pub fn sample_realization(
    cfg: &NetworkConfig,
    profile: &CacheProfile,
    half_width: f64,
    seed: u64,
) -> Result<Realization> {
    if !(half_width > 0.0) {
        return Err(Error::invalid(format!("window half-width must be > 0 (got {half_width})")));
    }
    let mut rng = substream(seed, 0, 0);
    let (mm, mu) = sample_points(cfg, half_width, &mut rng);
    let bits = |rng: &mut ChaCha8Rng, p: &[f64]| -> Vec<bool> {
        p.iter().map(|&q| rng.gen::<f64>() < q).collect()
    };
    let cache_mm = (0..mm.len()).map(|_| bits(&mut rng, &profile.p_m)).collect();
    let cache_mu = (0..mu.len()).map(|_| bits(&mut rng, &profile.p_mu)).collect();
    Ok(Realization {
        half_width,
        mm,
        mu,
        cache_mm,
        cache_mu,
    })
}

/// Strongest biased path loss; ignores caches.
fn best_candidate(cfg: &NetworkConfig, mm: &[MmPoint], mu: &[MuPoint]) -> Option<(Serving, f64)> {
    let mut best: Option<(Serving, f64, f64)> = None;
    let lbm = cfg.b_m.ln();
    let lbmu = cfg.b_mu.ln();
    for (k, p) in mm.iter().enumerate() {
        let score = lbm - p.state.alpha(cfg) * p.r.ln();
        if best.is_none_or(|b| score > b.2) {
            best = Some((Serving::Mm(k), p.r, score));
        }
    }
    for (k, p) in mu.iter().enumerate() {
        let score = lbmu - cfg.alpha_mu * p.r.ln();
        if best.is_none_or(|b| score > b.2) {
            best = Some((Serving::Mu(k), p.r, score));
        }
    }
    best.map(|b| (b.0, b.1))
}

fn classify(serving: Serving, mm: &[MmPoint], hit: bool) -> AssociationEvent {
    let fam = match serving {
        Serving::Mm(k) => match mm[k].state {
            LinkState::Los => Family::MmLos,
            LinkState::Nlos => Family::MmNlos,
        },
        Serving::Mu(_) => Family::Mu,
    };
    AssociationEvent::from_parts(fam, hit)
}

/// Least-biased-path-loss association for file `file`. `None` for an empty
/// window.
pub fn associate(real: &Realization, cfg: &NetworkConfig, file: usize) -> Option<Association> {
    let (serving, distance) = best_candidate(cfg, &real.mm, &real.mu)?;
    let hit = match serving {
        Serving::Mm(k) => real.cache_mm[k].get(file).copied().unwrap_or(false),
        Serving::Mu(k) => real.cache_mu[k].get(file).copied().unwrap_or(false),
    };
    Some(Association {
        event: classify(serving, &real.mm, hit),
        serving,
        distance,
    })
}

fn cn<R: Rng>(rng: &mut R) -> (f64, f64) {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    (a * FRAC_1_SQRT_2, b * FRAC_1_SQRT_2)
}

/// Beam-pattern parameters of the interference model.
#[derive(Debug, Clone, Copy)]
struct Beam {
    u_hat: usize,
    rho_rho: f64,
    /// probability a (path, user) slot differs from the both-misaligned default
    p_nd: f64,
    ln_keep: f64,
    /// cumulative split of non-default slots: UE aligned only, BS aligned only
    c_ue: f64,
    c_bs: f64,
    g_ue_only: f64,
    g_bs_only: f64,
}

impl Beam {
    fn new(cfg: &NetworkConfig, loads: &TierLoad) -> Self {
        let a_ue = 1.0 / cfg.nr_m as f64;
        let a_bs = 1.0 / cfg.nt_m as f64;
        let p_nd = 1.0 - (1.0 - a_ue) * (1.0 - a_bs);
        Beam {
            u_hat: loads.u_hat_m.round().max(1.0) as usize,
            rho_rho: cfg.rho_bs * cfg.rho_ue,
            p_nd,
            ln_keep: (1.0 - p_nd).ln(),
            c_ue: a_ue * (1.0 - a_bs) / p_nd,
            c_bs: (a_ue * (1.0 - a_bs) + (1.0 - a_ue) * a_bs) / p_nd,
            g_ue_only: cfg.rho_bs,
            g_bs_only: cfg.rho_ue,
        }
    }

    /// Σ_u |Σ_k X_k γ_ku|² for one interfering BS with `eta` paths.
    fn power<R: Rng>(&self, rng: &mut R, eta: usize) -> f64 {
        let mut arr = [(0.0, 0.0); 16];
        let mut heap;
        let xs: &mut [(f64, f64)] = if eta <= arr.len() {
            &mut arr[..eta]
        } else {
            heap = vec![(0.0, 0.0); eta];
            &mut heap
        };
        let (mut s0r, mut s0i) = (0.0, 0.0);
        for x in xs.iter_mut() {
            *x = cn(rng);
            s0r += x.0;
            s0i += x.1;
        }
        let base = self.rho_rho;
        let default = base * base * (s0r * s0r + s0i * s0i);
        let slots = self.u_hat * eta;
        let mut total = default * self.u_hat as f64;
        if self.p_nd <= 0.0 {
            return total;
        }
        let mut idx = self.skip(rng);
        let mut cur_u = usize::MAX;
        let (mut ar, mut ai) = (0.0, 0.0);
        while idx < slots {
            let u = idx / eta;
            let k = idx % eta;
            if u != cur_u {
                if cur_u != usize::MAX {
                    total += ar * ar + ai * ai - default;
                }
                cur_u = u;
                ar = base * s0r;
                ai = base * s0i;
            }
            let v: f64 = rng.gen();
            let g = if v < self.c_ue {
                self.g_ue_only
            } else if v < self.c_bs {
                self.g_bs_only
            } else {
                1.0
            };
            ar += (g - base) * xs[k].0;
            ai += (g - base) * xs[k].1;
            idx += 1 + self.skip(rng);
        }
        if cur_u != usize::MAX {
            total += ar * ar + ai * ai - default;
        }
        total.max(0.0)
    }

    fn skip<R: Rng>(&self, rng: &mut R) -> usize {
        if self.p_nd >= 1.0 {
            return 0;
        }
        let u: f64 = rng.gen();
        let s = ((1.0 - u).ln() / self.ln_keep).floor();
        if s > 1e12 {
            usize::MAX / 2
        } else {
            s as usize
        }
    }
}

fn interferer_amp(cfg: &NetworkConfig, beam: &Beam, p: &MmPoint) -> f64 {
    let eta = p.state.eta(cfg) as f64;
    cfg.p_m_tx / beam.u_hat as f64 * (cfg.nr_m as f64 * cfg.nt_m as f64) / eta
        * p.r.powf(-p.state.alpha(cfg))
}

fn mm_interference<R: Rng>(
    rng: &mut R,
    cfg: &NetworkConfig,
    beam: &Beam,
    mm: &[MmPoint],
    skip: Option<usize>,
    limit: f64,
) -> f64 {
    let mut total = 0.0;
    for (k, p) in mm.iter().enumerate() {
        if Some(k) == skip {
            continue;
        }
        let amp = interferer_amp(cfg, beam, p);
        total += amp * beam.power(rng, p.state.eta(cfg) as usize);
        if total > limit {
            break;
        }
    }
    total
}

/// One SINR draw of the mmWave link to `serving`: fresh ZF penalty, serving
/// path gain and interferer fading/beam alignment.
pub fn mm_sinr_sample<R: Rng>(
    real: &Realization,
    serving: usize,
    cfg: &NetworkConfig,
    loads: &TierLoad,
    rng: &mut R,
) -> Result<f64> {
    let s = real
        .mm
        .get(serving)
        .ok_or_else(|| Error::invalid(format!("no mmWave point with index {serving}")))?;
    let beam = Beam::new(cfg, loads);
    let u = loads.u_m;
    let z = rng.gen::<f64>() < zf_penalty(cfg.nr_m, u);
    let x2: f64 = rng.sample(Exp1);
    let signal = if z {
        mm_gain(cfg, u, s.state) * x2 * s.r.powf(-s.state.alpha(cfg))
    } else {
        0.0
    };
    let i = mm_interference(rng, cfg, &beam, &real.mm, Some(serving), f64::INFINITY);
    Ok(signal / (i + cfg.sigma2_m))
}

/// Mean-field μWave rate at the serving distance.
pub fn mu_rate_sample(
    real: &Realization,
    serving: usize,
    cfg: &NetworkConfig,
    loads: &TierLoad,
    hit: bool,
    p_mu_i: f64,
) -> Result<f64> {
    let s = real
        .mu
        .get(serving)
        .ok_or_else(|| Error::invalid(format!("no μWave point with index {serving}")))?;
    mu_rate_at(hit, s.r, cfg, loads, p_mu_i)
}

/// (serving, interferer) μWave channel gains: Gamma(n_t − U + 1) and
/// Gamma(Û).
pub fn mu_gain_sample<R: Rng>(rng: &mut R, cfg: &NetworkConfig, loads: &TierLoad) -> Result<(f64, f64)> {
    let k = cfg.nt_mu as f64 - loads.u_mu + 1.0;
    let ub = loads.u_hat_mu.round().max(1.0);
    let g1 = Gamma::new(k, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let g2 = Gamma::new(ub, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((g1.sample(rng), g2.sample(rng)))
}

/// Wilson score interval at 95%.
pub fn wilson(successes: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let den = 1.0 + z2 / n;
    let c = (p + z2 / (2.0 * n)) / den;
    let h = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    ((c - h).max(0.0), (c + h).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: u64,
}

impl Estimate {
    fn proportion(k: u64, n: u64) -> Self {
        let (lo, hi) = wilson(k, n);
        Estimate {
            mean: if n > 0 { k as f64 / n as f64 } else { 0.0 },
            ci_lo: lo,
            ci_hi: hi,
            n,
        }
    }

    fn normal(sum: f64, sumsq: f64, n: u64) -> Self {
        if n == 0 {
            return Estimate {
                mean: 0.0,
                ci_lo: 0.0,
                ci_hi: 0.0,
                n,
            };
        }
        let nf = n as f64;
        let m = sum / nf;
        let var = if n > 1 {
            ((sumsq - nf * m * m) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        let h = Z95 * (var / nf).sqrt();
        Estimate {
            mean: m,
            ci_lo: m - h,
            ci_hi: m + h,
            n,
        }
    }

    /// Whether the interval meets `[lo, hi]`.
    pub fn meets(&self, lo: f64, hi: f64) -> bool {
        self.ci_lo <= hi && self.ci_hi >= lo
    }
}

/// One simulated request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: u64,
    pub file: usize,
    pub event: AssociationEvent,
    pub distance: f64,
    /// 1-based attempt of the first success within the largest N simulated.
    pub first_success: Option<u32>,
    /// Per-attempt time T0 of this request, seconds.
    pub t0: f64,
    /// Rate the request puts on the backhaul, bits/s (zero for hits).
    pub backhaul_rate: f64,
    /// Window redraws caused by empty realizations.
    pub resampled: u32,
}

impl TrialOutcome {
    pub fn delivered(&self, n: u32) -> bool {
        self.first_success.is_some_and(|k| k <= n)
    }

    pub fn attempts(&self, n: u32) -> u32 {
        self.first_success.map_or(n, |k| k.min(n))
    }

    pub fn delay(&self, n: u32) -> f64 {
        self.attempts(n) as f64 * self.t0
    }
}

struct FileConsts {
    nu: f64,
    q_m: f64,
    n_b: u64,
    delay_m: f64,
    delay_mu: f64,
}

/// Pre-computed quantities shared by all trials of one run.
pub struct SimContext<'a> {
    cfg: &'a NetworkConfig,
    profile: &'a CacheProfile,
    loads: TierLoad,
    cdf: Vec<f64>,
    files: Vec<FileConsts>,
    beam: Beam,
    half_width: f64,
    p_zf: f64,
    u_mm: u64,
    u_mu: u64,
    hit_mm: f64,
    hit_mu: f64,
}

impl<'a> SimContext<'a> {
    pub fn new(cfg: &'a NetworkConfig, pop: &Popularity, profile: &'a CacheProfile) -> Result<Self> {
        cfg.validate()?;
        if pop.len() != profile.len() || pop.len() != cfg.nu.len() {
            return Err(Error::invalid("popularity, profile and rate vector lengths differ"));
        }
        let (_, loads) = loads_for(cfg)?;
        let files = cfg
            .nu
            .iter()
            .map(|&nu| {
                Ok(FileConsts {
                    nu,
                    q_m: sinr_threshold(nu, loads.u_m, cfg.w_m),
                    n_b: backhaul_budget(cfg, nu)?,
                    delay_m: backhaul_delay(Tier::Mm, cfg, nu),
                    delay_mu: backhaul_delay(Tier::Mu, cfg, nu),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimContext {
            cfg,
            profile,
            beam: Beam::new(cfg, &loads),
            p_zf: zf_penalty(cfg.nr_m, loads.u_m),
            u_mm: served_users(Tier::Mm, &loads),
            u_mu: served_users(Tier::Mu, &loads),
            hit_mm: hit_probability(pop, profile, Tier::Mm)?,
            hit_mu: hit_probability(pop, profile, Tier::Mu)?,
            loads,
            cdf: pop.cdf(),
            files,
            half_width: cfg.window_half_width(),
        })
    }

    /// Replace the simulation window half-width.
    pub fn with_half_width(mut self, hw: f64) -> Self {
        self.half_width = hw;
        self
    }

    pub fn loads(&self) -> &TierLoad {
        &self.loads
    }

    fn draw_file<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    fn admitted<R: Rng>(&self, rng: &mut R, u: u64, p_hit: f64, n_b: u64) -> bool {
        if n_b >= u {
            return true;
        }
        let others = if u > 1 {
            Binomial::new(u - 1, (1.0 - p_hit).clamp(0.0, 1.0))
                .map(|d| d.sample(rng))
                .unwrap_or(0)
        } else {
            0
        };
        let share = (n_b as f64 / (others as f64 + 1.0)).min(1.0);
        share >= 1.0 || rng.gen::<f64>() < share
    }

    /// Simulates one request with up to `n_max` attempts.
    pub fn trial(&self, seed: u64, index: u64, n_max: u32) -> TrialOutcome {
        let cfg = self.cfg;
        let mut rng = substream(seed, 1, index);
        let file = self.draw_file(&mut rng);
        let fc = &self.files[file];
        let mut resampled = 0;
        let (mm, serving, distance) = loop {
            let (mm, mu) = sample_points(cfg, self.half_width, &mut rng);
            if let Some((s, d)) = best_candidate(cfg, &mm, &mu) {
                break (mm, s, d);
            }
            resampled += 1;
        };
        let (p_hit, tier) = match serving {
            Serving::Mm(_) => (self.profile.p_m[file], Tier::Mm),
            Serving::Mu(_) => (self.profile.p_mu[file], Tier::Mu),
        };
        let hit = rng.gen::<f64>() < p_hit;
        let event = classify(serving, &mm, hit);
        let access = match (serving, cfg.access_time) {
            (Serving::Mu(_), AccessTime::MeanRate) => {
                let rate = mu_rate_at(hit, distance, cfg, &self.loads, p_hit).unwrap_or(0.0);
                t0_access(rate, cfg.s_file)
            }
            _ => t0_access(fc.nu, cfg.s_file),
        };
        let extra = match (hit, tier) {
            (true, _) => 0.0,
            (false, Tier::Mm) => fc.delay_m,
            (false, Tier::Mu) => fc.delay_mu,
        };
        let (u_tier, p_others) = match tier {
            Tier::Mm => (self.u_mm, self.hit_mm),
            Tier::Mu => (self.u_mu, self.hit_mu),
        };
        let mu_ok = match serving {
            Serving::Mu(_) => {
                distance >= 1.0
                    && mu_rate_at(hit, distance, cfg, &self.loads, p_hit).unwrap_or(0.0) >= fc.nu
            }
            Serving::Mm(_) => false,
        };
        let mut first_success = None;
        for attempt in 1..=n_max {
            let ok = match serving {
                Serving::Mu(_) => {
                    mu_ok && (hit || self.admitted(&mut rng, u_tier, p_others, fc.n_b))
                }
                Serving::Mm(k) => {
                    let z = rng.gen::<f64>() < self.p_zf;
                    let adm = hit || self.admitted(&mut rng, u_tier, p_others, fc.n_b);
                    if z && adm {
                        let s = &mm[k];
                        let x2: f64 = rng.sample(Exp1);
                        let sig = mm_gain(cfg, self.loads.u_m, s.state)
                            * x2
                            * s.r.powf(-s.state.alpha(cfg));
                        let budget = sig / fc.q_m - cfg.sigma2_m;
                        budget >= 0.0
                            && mm_interference(&mut rng, cfg, &self.beam, &mm, Some(k), budget)
                                <= budget
                    } else {
                        false
                    }
                }
            };
            if ok {
                first_success = Some(attempt);
                break;
            }
        }
        TrialOutcome {
            trial: index,
            file,
            event,
            distance,
            first_success,
            t0: access + extra,
            backhaul_rate: if hit { 0.0 } else { fc.nu },
            resampled,
        }
    }
}

/// Empirical metrics at one retransmission limit.
#[derive(Debug, Clone, Serialize)]
pub struct SimMetrics {
    pub n_retx: u32,
    pub asp: Estimate,
    pub latency: Estimate,
    pub backhaul_load: Estimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub trials: u64,
    pub seed: u64,
    pub resampled: u64,
    pub metrics: Vec<SimMetrics>,
    /// Per-event share of trials.
    pub event_counts: [u64; 6],
    /// Per-event first-attempt successes.
    pub event_first_success: [u64; 6],
}

impl SimReport {
    pub fn at(&self, n: u32) -> Option<&SimMetrics> {
        self.metrics.iter().find(|m| m.n_retx == n)
    }

    pub fn event_frequency(&self, ev: AssociationEvent) -> Estimate {
        Estimate::proportion(self.event_counts[ev.index()], self.trials)
    }

    /// Single-attempt ASP conditioned on the event.
    pub fn event_asp(&self, ev: AssociationEvent) -> Estimate {
        let k = ev.index();
        Estimate::proportion(self.event_first_success[k], self.event_counts[k])
    }
}

#[derive(Clone)]
struct Acc {
    delivered: Vec<u64>,
    delay: Vec<f64>,
    delay2: Vec<f64>,
    load: f64,
    load2: f64,
    resampled: u64,
    events: [u64; 6],
    first: [u64; 6],
}

impl Acc {
    fn new(k: usize) -> Self {
        Acc {
            delivered: vec![0; k],
            delay: vec![0.0; k],
            delay2: vec![0.0; k],
            load: 0.0,
            load2: 0.0,
            resampled: 0,
            events: [0; 6],
            first: [0; 6],
        }
    }

    fn push(&mut self, o: &TrialOutcome, ns: &[u32], lambda_u: f64) {
        for (j, &n) in ns.iter().enumerate() {
            if o.delivered(n) {
                self.delivered[j] += 1;
            }
            let d = o.delay(n);
            self.delay[j] += d;
            self.delay2[j] += d * d;
        }
        let l = o.backhaul_rate * lambda_u;
        self.load += l;
        self.load2 += l * l;
        self.resampled += o.resampled as u64;
        let e = o.event.index();
        self.events[e] += 1;
        if o.first_success == Some(1) {
            self.first[e] += 1;
        }
    }

    fn merge(&mut self, o: &Acc) {
        for j in 0..self.delivered.len() {
            self.delivered[j] += o.delivered[j];
            self.delay[j] += o.delay[j];
            self.delay2[j] += o.delay2[j];
        }
        self.load += o.load;
        self.load2 += o.load2;
        self.resampled += o.resampled;
        for e in 0..6 {
            self.events[e] += o.events[e];
            self.first[e] += o.first[e];
        }
    }
}

fn check_trials(trials: u64, ns: &[u32]) -> Result<()> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::invalid("retransmission limits must be >= 1"));
    }
    Ok(())
}

/// Runs `trials` requests and reports metrics at each limit in `ns` from the
/// same sample paths.
pub fn run_trials_multi(
    ctx: &SimContext<'_>,
    trials: u64,
    seed: u64,
    ns: &[u32],
) -> Result<SimReport> {
    check_trials(trials, ns)?;
    let n_max = *ns.iter().max().unwrap_or(&1);
    let chunks = trials.div_ceil(CHUNK as u64);
    let lambda_u = ctx.cfg.lambda_u;
    let parts: Vec<Acc> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Acc::new(ns.len());
            let lo = c * CHUNK as u64;
            let hi = (lo + CHUNK as u64).min(trials);
            for t in lo..hi {
                acc.push(&ctx.trial(seed, t, n_max), ns, lambda_u);
            }
            acc
        })
        .collect();
    let mut total = Acc::new(ns.len());
    for p in &parts {
        total.merge(p);
    }
    let metrics = ns
        .iter()
        .enumerate()
        .map(|(j, &n)| SimMetrics {
            n_retx: n,
            asp: Estimate::proportion(total.delivered[j], trials),
            latency: Estimate::normal(total.delay[j], total.delay2[j], trials),
            backhaul_load: Estimate::normal(total.load, total.load2, trials),
        })
        .collect();
    Ok(SimReport {
        trials,
        seed,
        resampled: total.resampled,
        metrics,
        event_counts: total.events,
        event_first_success: total.first,
    })
}

pub fn run_trials(
    cfg: &NetworkConfig,
    pop: &Popularity,
    profile: &CacheProfile,
    trials: u64,
    seed: u64,
) -> Result<SimReport> {
    let ctx = SimContext::new(cfg, pop, profile)?;
    run_trials_multi(&ctx, trials, seed, &[cfg.n_retx])
}

/// Per-trial outcomes, in trial order.
pub fn trial_outcomes(
    ctx: &SimContext<'_>,
    trials: u64,
    seed: u64,
    n_max: u32,
) -> Result<Vec<TrialOutcome>> {
    check_trials(trials, &[n_max])?;
    Ok((0..trials)
        .into_par_iter()
        .map(|t| ctx.trial(seed, t, n_max))
        .collect())
}

/// Single-attempt success of a mmWave link in state `state` at fixed serving
/// distance `r`, averaged over interferer drops consistent with that
/// association. Each drop contributes its exact conditional success
/// probability given the interference, which keeps the variance low.
pub fn conditioned_mm_asp(
    cfg: &NetworkConfig,
    loads: &TierLoad,
    state: LinkState,
    r: f64,
    nu_i: f64,
    drops: u64,
    seed: u64,
) -> Result<Estimate> {
    if drops == 0 {
        return Err(Error::invalid("drops must be >= 1"));
    }
    if !(r > 0.0) {
        return Err(Error::invalid(format!("serving distance must be > 0 (got {r})")));
    }
    let beam = Beam::new(cfg, loads);
    let p_zf = zf_penalty(cfg.nr_m, loads.u_m);
    let q = sinr_threshold(nu_i, loads.u_m, cfg.w_m);
    let theta = q * r.powf(state.alpha(cfg)) / mm_gain(cfg, loads.u_m, state);
    let radius = cfg.window_half_width().max(4.0 * r);
    let a_s = state.alpha(cfg);
    let excl_los = r.powf(a_s / cfg.alpha_los);
    let excl_nlos = r.powf(a_s / cfg.alpha_nlos);
    let vals: Vec<f64> = (0..drops)
        .into_par_iter()
        .map(|d| {
            let mut rng = substream(seed, 2, d);
            let n = poisson_count(&mut rng, cfg.lambda_m * PI * radius * radius);
            let mut i = 0.0;
            for _ in 0..n {
                let rr = radius * rng.gen::<f64>().sqrt();
                let st = if rng.gen::<f64>() < (-cfg.beta * rr).exp() {
                    LinkState::Los
                } else {
                    LinkState::Nlos
                };
                let excl = match st {
                    LinkState::Los => excl_los,
                    LinkState::Nlos => excl_nlos,
                };
                if rr < excl {
                    continue;
                }
                let p = MmPoint {
                    x: rr,
                    y: 0.0,
                    r: rr,
                    state: st,
                };
                i += interferer_amp(cfg, &beam, &p) * beam.power(&mut rng, st.eta(cfg) as usize);
            }
            p_zf * (-theta * (i + cfg.sigma2_m)).exp()
        })
        .collect();
    let (s, s2) = vals.iter().fold((0.0, 0.0), |a, &v| (a.0 + v, a.1 + v * v));
    Ok(Estimate::normal(s, s2, drops))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{make_cache_profile, zipf_popularity, CachePolicy};

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson(50, 100);
        assert!(lo < 0.5 && hi > 0.5);
        assert_eq!(wilson(0, 0), (0.0, 1.0));
        let (lo, _) = wilson(0, 100);
        assert!(lo < 1e-15);
    }

    #[test]
    fn single_los_bs_with_file() {
        let cfg = NetworkConfig::default();
        let real = Realization {
            half_width: 100.0,
            mm: vec![MmPoint {
                x: 30.0,
                y: 40.0,
                r: 50.0,
                state: LinkState::Los,
            }],
            mu: vec![],
            cache_mm: vec![vec![true; 20]],
            cache_mu: vec![],
        };
        let a = associate(&real, &cfg, 3).unwrap();
        assert_eq!(a.event, AssociationEvent::MmHitLos);
        assert_eq!(a.distance, 50.0);
    }

    #[test]
    fn determinism() {
        let cfg = NetworkConfig::default();
        let pop = zipf_popularity(cfg.f_count, cfg.upsilon).unwrap();
        let prof = make_cache_profile(CachePolicy::Mc, cfg.c_m, cfg.c_mu, cfg.f_count, None).unwrap();
        let a = sample_realization(&cfg, &prof, 500.0, 9).unwrap();
        let b = sample_realization(&cfg, &prof, 500.0, 9).unwrap();
        assert_eq!(a, b);
        let ctx = SimContext::new(&cfg, &pop, &prof).unwrap();
        let r1 = run_trials_multi(&ctx, 3000, 5, &[1, 3]).unwrap();
        let r2 = run_trials_multi(&ctx, 3000, 5, &[1, 3]).unwrap();
        assert_eq!(format!("{r1:?}"), format!("{r2:?}"));
        assert!(r1.at(3).unwrap().asp.mean >= r1.at(1).unwrap().asp.mean);
    }

    #[test]
    fn no_interference_closed_form() {
        let mut cfg = NetworkConfig::default();
        cfg.nr_m = 1_000_000;
        let (_, loads) = loads_for(&cfg).unwrap();
        let real = Realization {
            half_width: 100.0,
            mm: vec![MmPoint {
                x: 50.0,
                y: 0.0,
                r: 50.0,
                state: LinkState::Los,
            }],
            mu: vec![],
            cache_mm: vec![vec![true; 20]],
            cache_mu: vec![],
        };
        let mut rng = substream(1, 0, 0);
        let mut best = 0.0f64;
        for _ in 0..50 {
            best = best.max(mm_sinr_sample(&real, 0, &cfg, &loads, &mut rng).unwrap());
        }
        let g = mm_gain(&cfg, loads.u_m, LinkState::Los) * 50f64.powi(-2) / cfg.sigma2_m;
        // X² ~ Exp(1): the maximum over 50 draws sits a few units above 1
        assert!(best > g && best < 10.0 * g);
    }
}
