use hcn_core::numerics::{find_root_bisect, integrate, QuadratureSpec};
use proptest::prelude::*;

fn smooth(k: usize, x: f64) -> f64 {
    match k % 4 {
        0 => (-x).exp(),
        1 => x.sin() + 2.0,
        2 => 1.0 / (1.0 + x * x),
        _ => x * x * (-0.5 * x).exp(),
    }
}

proptest! {
    #[test]
    fn integrate_is_linear(a in -5.0f64..5.0, b in -5.0f64..5.0, i in 0usize..4, j in 0usize..4, hi in 0.5f64..20.0) {
        let spec = QuadratureSpec::default();
        let fa = integrate(|x| smooth(i, x), 0.0, hi, &spec).unwrap();
        let fb = integrate(|x| smooth(j, x), 0.0, hi, &spec).unwrap();
        let mix = integrate(|x| a * smooth(i, x) + b * smooth(j, x), 0.0, hi, &spec).unwrap();
        let want = a * fa.value + b * fb.value;
        let tol = 10.0 * (spec.rel_tol * want.abs().max(1.0) + spec.abs_tol);
        prop_assert!((mix.value - want).abs() <= tol, "{} vs {want}", mix.value);
    }

    #[test]
    fn tighter_tolerance_never_reports_more_error(i in 0usize..4, hi in 0.5f64..50.0, rel in 1e-10f64..1e-4) {
        let loose = QuadratureSpec { rel_tol: rel, ..QuadratureSpec::default() };
        let tight = QuadratureSpec { rel_tol: rel / 2.0, ..QuadratureSpec::default() };
        let a = integrate(|x| smooth(i, x), 0.0, hi, &loose).unwrap();
        let b = integrate(|x| smooth(i, x), 0.0, hi, &tight).unwrap();
        prop_assert!(b.error <= a.error, "{} > {}", b.error, a.error);
    }

    #[test]
    fn bisection_finds_shifted_root(c in -100.0f64..100.0) {
        let x = find_root_bisect(|x| c - x, -200.0, 200.0, 1e-10).unwrap();
        prop_assert!((x - c).abs() <= 1e-10);
    }
}

#[test]
fn semi_infinite_exponential() {
    let v = integrate(|x| (-x).exp(), 0.0, f64::INFINITY, &QuadratureSpec::default()).unwrap();
    assert!((v.value - 1.0).abs() < 1e-10);
    // slow tail beyond the truncation radius
    let v = integrate(|x| 1.0 / (1.0 + x * x), 0.0, f64::INFINITY, &QuadratureSpec::default()).unwrap();
    assert!((v.value - std::f64::consts::FRAC_PI_2).abs() < 1e-8, "{}", v.value);
}

#[test]
fn root_of_square() {
    let x = find_root_bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap();
    assert!((x - std::f64::consts::SQRT_2).abs() < 1e-12);
    assert!(find_root_bisect(|x| x * x + 1.0, 0.0, 2.0, 1e-12).is_err());
}
