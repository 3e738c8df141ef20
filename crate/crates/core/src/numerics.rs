//! Adaptive Gauss–Kronrod quadrature and bisection.

use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Finite stand-in for an infinite upper limit.
    pub truncation_radius: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            truncation_radius: 1e5,
            max_subdivisions: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

// 21-point Kronrod nodes on [0, 1]; odd indices are the 10-point Gauss nodes.
const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077600525706436,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn qk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<Segment> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resg = 0.0;
    let mut resk = fc * WGK[10];
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    if !resk.is_finite() {
        return Err(Error::NumericFailure {
            message: format!("integrand not finite on [{a:e}, {b:e}]"),
            partial: f64::NAN,
            error: f64::INFINITY,
        });
    }
    let reskh = resk * 0.5;
    let mut resasc = WGK[10] * (fc - reskh).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - reskh).abs() + (fv2[j] - reskh).abs());
    }
    let value = resk * half;
    resabs *= half.abs();
    resasc *= half.abs();
    let mut error = ((resk - resg) * half).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * resabs);
    }
    Ok(Segment { a, b, value, error })
}

/// Initial breakpoints: the endpoints plus any decade in (lo, hi).
fn initial_points(lo: f64, hi: f64) -> Vec<f64> {
    let mut pts = vec![lo];
    for e in -2..=4 {
        let x = 10f64.powi(e);
        if x > lo && x < hi {
            pts.push(x);
        }
    }
    pts.push(hi);
    pts
}

fn adaptive<F: FnMut(f64) -> f64>(
    f: &mut F,
    points: &[f64],
    spec: &QuadratureSpec,
    extra_abs: f64,
) -> Result<Integral> {
    let mut heap = BinaryHeap::new();
    for w in points.windows(2) {
        if w[1] > w[0] {
            heap.push(qk21(f, w[0], w[1])?);
        }
    }
    let total = |h: &BinaryHeap<Segment>| -> (f64, f64) {
        h.iter().fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.error))
    };
    let mut splits = 0usize;
    loop {
        let (value, error) = total(&heap);
        let tol = spec.abs_tol.max(spec.rel_tol * (value + extra_abs).abs());
        if error <= tol {
            return Ok(Integral { value, error });
        }
        let worst = heap.pop().expect("at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        let too_small = (worst.b - worst.a).abs()
            <= 1e3 * f64::EPSILON * worst.a.abs().max(worst.b.abs()).max(f64::MIN_POSITIVE);
        if splits >= spec.max_subdivisions || too_small {
            heap.push(worst);
            let (value, error) = total(&heap);
            return Err(Error::NumericFailure {
                message: format!(
                    "quadrature did not reach tolerance {tol:e} after {splits} subdivisions"
                ),
                partial: value,
                error,
            });
        }
        heap.push(qk21(f, worst.a, mid)?);
        heap.push(qk21(f, mid, worst.b)?);
        splits += 1;
    }
}

/// Integrate `f` over [lo, hi]; `hi` may be `f64::INFINITY`.
///
/// An infinite upper limit is replaced by `spec.truncation_radius`. If the
/// integrand at the truncation point is not below `abs_tol / T`, the tail is
/// integrated as well through the map r = T / t.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    spec: &QuadratureSpec,
) -> Result<Integral> {
    if !(lo.is_finite()) || hi.is_nan() || !(lo < hi) {
        if lo == hi {
            return Ok(Integral {
                value: 0.0,
                error: 0.0,
            });
        }
        return Err(Error::invalid(format!(
            "integration limits must satisfy lo < hi (got {lo}, {hi})"
        )));
    }
    if hi.is_finite() {
        return adaptive(&mut f, &initial_points(lo, hi), spec, 0.0);
    }
    let t = spec.truncation_radius.max(lo);
    let body = if t > lo {
        adaptive(&mut f, &initial_points(lo, t), spec, 0.0)?
    } else {
        Integral {
            value: 0.0,
            error: 0.0,
        }
    };
    let ft = f(t);
    if ft.is_finite() && ft.abs() * t < spec.abs_tol {
        return Ok(body);
    }
    // ∫_T^∞ f(r) dr = ∫_0^1 f(T/u) T/u² du
    let mut g = |u: f64| {
        if u <= 0.0 {
            0.0
        } else {
            f(t / u) * t / (u * u)
        }
    };
    let tail = adaptive(&mut g, &[0.0, 1e-3, 1e-2, 0.1, 1.0], spec, body.value)?;
    Ok(Integral {
        value: body.value + tail.value,
        error: body.error + tail.error,
    })
}

/// Bisection on a sign change of `g`; returns the bracket midpoint once the
/// bracket is narrower than `tol`.
pub fn find_root_bisect<G: FnMut(f64) -> f64>(
    mut g: G,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64> {
    if !(lo <= hi) || !(tol > 0.0) {
        return Err(Error::invalid(format!(
            "bisection needs lo <= hi and tol > 0 (got {lo}, {hi}, {tol})"
        )));
    }
    let (mut a, mut b) = (lo, hi);
    let mut ga = g(a);
    let gb = g(b);
    if ga == 0.0 {
        return Ok(a);
    }
    if gb == 0.0 {
        return Ok(b);
    }
    if !(ga.signum() != gb.signum()) || ga.is_nan() || gb.is_nan() {
        return Err(Error::BracketFailure {
            lo,
            hi,
            g_lo: ga,
            g_hi: gb,
        });
    }
    for _ in 0..2000 {
        if b - a <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let gm = g(m);
        if gm == 0.0 {
            return Ok(m);
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}
