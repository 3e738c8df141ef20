//! Acceptance suite: one PASS/FAIL line per criterion.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hcn_core::catalog::{
    backhaul_capacity, make_cache_profile, profile_for, zipf_popularity, CachePolicy, CacheProfile, Tier,
};
use hcn_core::config::NetworkConfig;
use hcn_core::geometry::{
    association_probabilities, geometric_density, loads_for, AssociationEvent, DistancePdf, Family,
    GeometricWeights, LinkState,
};
use hcn_core::link::{
    backhaul_asp_exact, mm_conditional_asp, mu_conditional_asp_with, mu_critical_radius, BoundSide,
};
use hcn_core::numerics::integrate;
use hcn_core::qos::{backhaul_delay, backhaul_load_density, AnalyticModel};
use hcn_core::sim::{conditioned_mm_asp, trial_outcomes, wilson, SimContext};

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(t: Instant, limit_s: u64) -> (bool, Duration) {
    let e = t.elapsed();
    (e <= Duration::from_secs(limit_s), e)
}

fn perturbed(rng: &mut ChaCha8Rng) -> NetworkConfig {
    let mut c = NetworkConfig::default();
    let scale = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| lo * (hi / lo).powf(rng.gen::<f64>());
    c.lambda_mu *= scale(rng, 0.5, 2.0);
    c.lambda_m = c.lambda_mu * scale(rng, 1.2, 4.0);
    c.lambda_u = c.lambda_u.max(2.0 * c.lambda_m.max(c.lambda_mu));
    c.beta = scale(rng, 0.002, 0.03);
    c.alpha_los = rng.gen_range(1.8..2.6);
    c.alpha_nlos = rng.gen_range(3.0..4.8);
    c.alpha_mu = rng.gen_range(2.8..4.5);
    c.b_m = scale(rng, 0.05, 5.0);
    c
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_sum: f64 = 0.0;
    let mut worst_pdf: f64 = 0.0;
    for _ in 0..50 {
        let cfg = perturbed(&mut rng);
        assert!(cfg.diagnostics().is_empty(), "{:?}", cfg.diagnostics());
        let pm: f64 = rng.gen();
        let pmu: f64 = rng.gen();
        let a = association_probabilities(&cfg, pm, pmu).unwrap();
        worst_sum = worst_sum.max((a.total() - 1.0).abs());
        let w = GeometricWeights::compute(&cfg).unwrap();
        for ev in AssociationEvent::ALL {
            let Ok(pdf) = DistancePdf::new(ev, &w, pm, pmu) else { continue };
            let m = integrate(|d| pdf.value(d, &cfg), 0.0, f64::INFINITY, &cfg.quad).unwrap();
            worst_pdf = worst_pdf.max((m.value - 1.0).abs());
        }
    }
    let (fast, e) = within(t, 60);
    Outcome {
        pass: worst_sum <= 1e-6 && worst_pdf <= 1e-5 && fast,
        detail: format!("max |Σp − 1| = {worst_sum:.2e}, max |∫pdf − 1| = {worst_pdf:.2e}, {e:.1?}"),
    }
}

fn half_profile(f: usize) -> CacheProfile {
    CacheProfile {
        policy: CachePolicy::Uc,
        p_m: vec![0.5; f],
        p_mu: vec![0.5; f],
    }
}

/// Serving distances of μWave-associated drops, used again by criterion 3.
struct Drops {
    mu_distances: Vec<f64>,
}

fn criterion_2() -> (Outcome, Drops) {
    let t = Instant::now();
    let cfg = NetworkConfig::default();
    let pop = zipf_popularity(cfg.f_count, cfg.upsilon).unwrap();
    let prof = half_profile(cfg.f_count);
    let ctx = SimContext::new(&cfg, &pop, &prof).unwrap();
    let n = 100_000u64;
    let outs = trial_outcomes(&ctx, n, 2024, 1).unwrap();
    let assoc = association_probabilities(&cfg, 0.5, 0.5).unwrap();
    let mut counts = [0u64; 6];
    for o in &outs {
        counts[o.event.index()] += 1;
    }
    let mut freq_ok = true;
    let mut worst_z: f64 = 0.0;
    for ev in AssociationEvent::ALL {
        let p = assoc.get(ev);
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        let z = (counts[ev.index()] as f64 / n as f64 - p).abs() / sd;
        worst_z = worst_z.max(z);
        freq_ok &= z <= 3.0;
    }
    // KS on MmHitLos distances against the analytic conditional CDF
    let mut xs: Vec<f64> = outs
        .iter()
        .filter(|o| o.event == AssociationEvent::MmHitLos)
        .map(|o| o.distance)
        .collect();
    xs.sort_by(f64::total_cmp);
    let w = GeometricWeights::compute(&cfg).unwrap();
    let dens = |d: f64| geometric_density(Family::MmLos, d, &cfg) / w.mm_los;
    let m = xs.len() as f64;
    let mut cdf = 0.0;
    let mut prev = 0.0;
    let mut d_ks: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        cdf += integrate(dens, prev, x, &cfg.quad).unwrap().value;
        prev = x;
        d_ks = d_ks.max((cdf - i as f64 / m).abs()).max(((i + 1) as f64 / m - cdf).abs());
    }
    let crit = 1.6276 / m.sqrt();
    let mu_distances = outs.iter().filter(|o| !o.event.is_mm()).map(|o| o.distance).collect();
    let (fast, e) = within(t, 300);
    (
        Outcome {
            pass: freq_ok && d_ks < crit && fast,
            detail: format!(
                "max |z| = {worst_z:.2} (limit 3), KS D = {d_ks:.4} vs {crit:.4} on {} distances, {e:.1?}",
                xs.len()
            ),
        },
        Drops { mu_distances },
    )
}

fn criterion_3(drops: &Drops) -> Outcome {
    let t = Instant::now();
    let cfg = NetworkConfig::default();
    let (w, loads) = loads_for(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = vec![];
    let mut checked = 0;
    for k in 0..20u64 {
        let r = rng.gen_range(5.0..150.0);
        let nu_mm = 10f64.powf(rng.gen_range(5.0..7.5));
        let p_m: f64 = rng.gen();
        for state in [LinkState::Los, LinkState::Nlos] {
            let est = conditioned_mm_asp(&cfg, &loads, state, r, nu_mm, 4000, 100 + k).unwrap();
            for hit in [true, false] {
                let fam = match state {
                    LinkState::Los => Family::MmLos,
                    LinkState::Nlos => Family::MmNlos,
                };
                let ev = AssociationEvent::from_parts(fam, hit);
                let lo = mm_conditional_asp(ev, r, nu_mm, &cfg, &loads, p_m, BoundSide::Lower).unwrap();
                let up = mm_conditional_asp(ev, r, nu_mm, &cfg, &loads, p_m, BoundSide::Upper).unwrap();
                checked += 1;
                if !est.meets(lo, up) {
                    failures.push(format!(
                        "{ev} r={r:.1} nu={nu_mm:.3e}: [{lo:.5}, {up:.5}] vs ({:.5}, {:.5})",
                        est.ci_lo, est.ci_hi
                    ));
                }
            }
        }
        let nu_mu = 10f64.powf(rng.gen_range(5.0..6.5));
        let p_mu: f64 = rng.gen();
        for hit in [true, false] {
            let ev = AssociationEvent::from_parts(Family::Mu, hit);
            let lo = mu_conditional_asp_with(hit, nu_mu, &cfg, &loads, &w, p_mu, BoundSide::Lower).unwrap();
            let up = mu_conditional_asp_with(hit, nu_mu, &cfg, &loads, &w, p_mu, BoundSide::Upper).unwrap();
            let r_star = mu_critical_radius(hit, nu_mu, &cfg, &loads, p_mu).unwrap().unwrap_or(0.0);
            let ok = drops
                .mu_distances
                .iter()
                .filter(|&&d| d >= 1.0 && d <= r_star)
                .count() as u64;
            let (ci_lo, ci_hi) = wilson(ok, drops.mu_distances.len() as u64);
            checked += 1;
            if !(ci_lo <= up && ci_hi >= lo) {
                failures.push(format!(
                    "{ev} nu={nu_mu:.3e}: [{lo:.5}, {up:.5}] vs ({ci_lo:.5}, {ci_hi:.5})"
                ));
            }
        }
    }
    let (fast, e) = within(t, 600);
    Outcome {
        pass: failures.is_empty() && fast,
        detail: if failures.is_empty() {
            format!("{checked}/{checked} brackets meet the 95% CI, {e:.1?}")
        } else {
            format!("{} of {checked} missed: {}", failures.len(), failures.join("; "))
        },
    }
}

fn criterion_4() -> Outcome {
    let cfg = NetworkConfig::default();
    let (_, loads) = loads_for(&cfg).unwrap();
    let zf = (1.0f64 - 1.0 / 16.0).powi(9);
    let mut ok_nu = true;
    for ev in AssociationEvent::ALL.iter().filter(|e| e.is_mm()) {
        for side in BoundSide::BOTH {
            ok_nu &= mm_conditional_asp(*ev, 40.0, 1e-300, &cfg, &loads, 0.5, side).unwrap() == zf;
        }
    }
    let bh = backhaul_asp_exact(3, 0.5, 1);
    let delay = backhaul_delay(Tier::Mm, &cfg, 1e6);
    let cap = backhaul_capacity(&cfg).unwrap();
    Outcome {
        pass: ok_nu && bh == 7.0 / 12.0 && (delay - 3.042).abs() <= 1e-3 && cap == 4.0e6,
        detail: format!("ν→0 ASP exact: {ok_nu}, backhaul ASP = {bh}, delay = {delay} s, C_b = {cap}"),
    }
}

fn upsilons() -> Vec<f64> {
    (1..=15).map(|k| k as f64 / 10.0).collect()
}

fn with_caches(c_mu: usize, c_m: usize) -> NetworkConfig {
    let mut c = NetworkConfig::default();
    c.c_mu = c_mu;
    c.c_m = c_m;
    c
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let mut problems = vec![];
    for u in upsilons() {
        let mut cfg = with_caches(3, 2);
        cfg.upsilon = u;
        let pop = zipf_popularity(cfg.f_count, u).unwrap();
        let m = AnalyticModel::new(&cfg).unwrap();
        let mut by_policy = vec![];
        for pol in [CachePolicy::NoCache, CachePolicy::Uc, CachePolicy::Mc] {
            let prof = profile_for(&cfg, pol, 0).unwrap();
            let v: Vec<f64> = [1, 3, 5]
                .iter()
                .map(|&n| m.evaluate_n(&pop, &prof, BoundSide::Lower, n).unwrap().asp)
                .collect();
            if !(v[0] <= v[1] && v[1] <= v[2]) {
                problems.push(format!("{pol} υ={u}: not nondecreasing in N {v:?}"));
            }
            by_policy.push(v);
        }
        for j in 0..3 {
            if !(by_policy[0][j] <= by_policy[1][j] && by_policy[1][j] <= by_policy[2][j]) {
                problems.push(format!("υ={u} N-index {j}: NoCache/UC/MC order broken"));
            }
        }
    }
    let (fast, e) = within(t, 120);
    Outcome {
        pass: problems.is_empty() && fast,
        detail: if problems.is_empty() {
            format!("NoCache ≤ UC ≤ MC and N-monotone at all 15 υ, {e:.1?}")
        } else {
            problems.join("; ")
        },
    }
}

fn criterion_6() -> Outcome {
    let c1s = [5.0, 10.0, 20.0, 40.0, 60.0, 100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0];
    let mut mc = vec![];
    let mut first = vec![];
    for (k, &c1) in c1s.iter().enumerate() {
        let mut cfg = NetworkConfig::default();
        cfg.c1 = c1;
        let pop = zipf_popularity(cfg.f_count, cfg.upsilon).unwrap();
        let m = AnalyticModel::new(&cfg).unwrap();
        for pol in [CachePolicy::Mc, CachePolicy::Uc, CachePolicy::Rc, CachePolicy::NoCache] {
            let prof = profile_for(&cfg, pol, 42).unwrap();
            let v = m.evaluate(&pop, &prof, BoundSide::Lower).unwrap().asp;
            if pol == CachePolicy::Mc {
                mc.push(v);
            }
            if k == 0 {
                first.push((pol, v));
            }
        }
    }
    let mono = mc.windows(2).all(|w| w[1] >= w[0]);
    let sat = (mc[mc.len() - 1] - mc[mc.len() - 2]).abs() < 1e-3;
    let nc = first.iter().find(|p| p.0 == CachePolicy::NoCache).unwrap().1;
    let below = first.iter().filter(|p| p.0 != CachePolicy::NoCache).all(|p| nc < p.1);
    Outcome {
        pass: mono && sat && below,
        detail: format!(
            "MC nondecreasing: {mono}, top-two gap {:.2e}, NoCache {nc:.4} below {:?} at c1 = 5",
            (mc[mc.len() - 1] - mc[mc.len() - 2]).abs(),
            first.iter().filter(|p| p.0 != CachePolicy::NoCache).map(|p| format!("{}={:.4}", p.0, p.1)).collect::<Vec<_>>()
        ),
    }
}

/// Term-by-term oracle independent of the library's Zipf and profile code.
fn load_oracle(cfg: &NetworkConfig, c_mu: usize, c_m: usize, p_am: f64) -> f64 {
    let f = cfg.f_count;
    let norm: f64 = (1..=f).map(|j| (j as f64).powf(-cfg.upsilon)).sum();
    (1..=f)
        .map(|i| {
            let fi = (i as f64).powf(-cfg.upsilon) / norm;
            let pm = if i <= c_m { 1.0 } else { 0.0 };
            let pmu = if i <= c_mu { 1.0 } else { 0.0 };
            fi * ((1.0 - pm) * cfg.lambda_u * p_am * cfg.nu[i - 1]
                + (1.0 - pmu) * cfg.lambda_u * (1.0 - p_am) * cfg.nu[i - 1])
        })
        .sum()
}

fn criterion_7() -> Outcome {
    let cfg = NetworkConfig::default();
    let pop = zipf_popularity(cfg.f_count, cfg.upsilon).unwrap();
    let w = GeometricWeights::compute(&cfg).unwrap();
    let p_am = w.mm_los + w.mm_nlos;
    let load = |policy, c_mu, c_m| {
        let prof = make_cache_profile(policy, c_m, c_mu, cfg.f_count, None).unwrap();
        backhaul_load_density(&cfg, &pop, &prof, p_am).unwrap()
    };
    let big = load(CachePolicy::Mc, 17, 15);
    let small = load(CachePolicy::Mc, 3, 2);
    let none = load(CachePolicy::NoCache, 0, 0);
    let oracle_ok = [(big, 17, 15), (small, 3, 2), (none, 0, 0)]
        .iter()
        .all(|&(v, a, b)| (v - load_oracle(&cfg, a, b, p_am)).abs() <= 1e-12 * v.abs().max(1.0));
    Outcome {
        pass: big < small && small < none && oracle_ok,
        detail: format!("MC(17,15) = {big:.6} < MC(3,2) = {small:.6} < NoCache = {none:.6}; oracle match: {oracle_ok}"),
    }
}

fn criterion_8() -> Outcome {
    let mut problems = vec![];
    for (c_mu, c_m) in [(3, 2), (10, 8)] {
        for side in BoundSide::BOTH {
            let mut prev_mc = f64::INFINITY;
            for u in upsilons() {
                let mut cfg = with_caches(c_mu, c_m);
                cfg.upsilon = u;
                let pop = zipf_popularity(cfg.f_count, u).unwrap();
                let m = AnalyticModel::new(&cfg).unwrap();
                let lat = |pol| {
                    let prof = profile_for(&cfg, pol, 0).unwrap();
                    [1, 3, 5].map(|n| m.evaluate_n(&pop, &prof, side, n).unwrap().latency)
                };
                let mc = lat(CachePolicy::Mc);
                let nc = lat(CachePolicy::NoCache);
                let uc = lat(CachePolicy::Uc);
                for v in [&mc, &nc, &uc] {
                    if !(v[0] <= v[1] && v[1] <= v[2]) {
                        problems.push(format!("({c_mu},{c_m}) {side} υ={u}: not nondecreasing in N"));
                    }
                }
                for j in 0..3 {
                    if mc[j] > nc[j] {
                        problems.push(format!("({c_mu},{c_m}) {side} υ={u}: MC above NoCache"));
                    }
                }
                if !(mc[0] < prev_mc) {
                    problems.push(format!("({c_mu},{c_m}) {side} υ={u}: MC latency not decreasing"));
                }
                prev_mc = mc[0];
            }
        }
    }
    Outcome {
        pass: problems.is_empty(),
        detail: if problems.is_empty() {
            "MC latency strictly decreasing in υ, N-monotone, MC ≤ NoCache (caches (3,2), (10,8); both sides)".into()
        } else {
            problems.join("; ")
        },
    }
}

fn run_fig1(workers: &str, out: &Path) -> Result<(), String> {
    let st = Command::new(env!("CARGO_BIN_EXE_hcn"))
        .args(["--workers", workers, "sweep", "--preset", "fig1", "--trials", "20000", "--seed", "42", "--out"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if st.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&st.stderr).into_owned())
    }
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if let Err(e) = run_fig1("1", a.path()).and_then(|_| run_fig1("3", b.path())) {
        return Outcome {
            pass: false,
            detail: format!("sweep failed: {e}"),
        };
    }
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n.to_string_lossy().ends_with(".csv"))
        .collect();
    names.sort();
    let same = !names.is_empty()
        && names
            .iter()
            .all(|n| fs::read(a.path().join(n)).ok() == fs::read(b.path().join(n)).ok());
    Outcome {
        pass: same,
        detail: format!("{} CSVs byte-identical across 1 and 3 workers: {same}, {:.1?}", names.len(), t.elapsed()),
    }
}

fn main() {
    // `cargo test -- --list` and filters: run only when no filter excludes us
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut results = vec![];
    results.push((1, criterion_1()));
    let (c2, drops) = criterion_2();
    results.push((2, c2));
    results.push((3, criterion_3(&drops)));
    results.push((4, criterion_4()));
    results.push((5, criterion_5()));
    results.push((6, criterion_6()));
    results.push((7, criterion_7()));
    results.push((8, criterion_8()));
    results.push((9, criterion_9()));
    let mut all = true;
    for (k, o) in &results {
        all &= o.pass;
        println!("criterion {k}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if !all {
        std::process::exit(1);
    }
}
