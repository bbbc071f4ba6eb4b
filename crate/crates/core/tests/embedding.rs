use std::f64::consts::PI;

use qagf::quadrature::integrate_1d;
use qagf::{
    build_cutoffs, derive, embed_compact, integrate, pair, reference_pairing, Distribution, DomainBox, Expr,
    Mollifier, MultiIndex, QuadOptions, SmoothMap, Window,
};

fn x() -> Expr {
    Expr::var(0)
}

fn unit() -> DomainBox {
    DomainBox::interval(-1.0, 1.0)
}

#[test]
fn quadrature_matches_closed_forms() {
    let gauss = SmoothMap::scalar((-(x() * x())).exp(), DomainBox::interval(-8.0, 8.0)).unwrap();
    let r = integrate(&gauss, gauss.domain(), 1e-13).unwrap();
    assert!((r.value - PI.sqrt()).abs() <= 1e-12, "{}", r.value);
    let quintic = integrate_1d(|t| t.powi(5), 0.0, 1.0, &[], QuadOptions::new(1e-14));
    assert!((quintic.value - 1.0 / 6.0).abs() <= 1e-14);
    let kink = integrate_1d(|t| t.abs(), -1.0, 2.0, &[0.0], QuadOptions::new(1e-14));
    assert!((kink.value - 2.5).abs() <= 1e-14);
}

#[test]
fn embedded_delta_is_the_scaled_mollifier() {
    let m = Mollifier::build(1, 4).unwrap();
    let t = Distribution::delta(unit(), vec![0.25], MultiIndex(vec![0])).unwrap();
    let e = embed_compact(&t, &m).unwrap();
    for n in [2u64, 16, 256] {
        for p in [-0.5, 0.0, 0.25, 0.3, 0.9] {
            let nf = n as f64;
            let expected = nf * m.value(&[nf * (p - 0.25)]);
            let got = e.gfunc.eval_level_scalar(n, &[p]).unwrap();
            assert!((got - expected).abs() <= 1e-12 * (1.0 + expected.abs()), "n={n} x={p}: {got} vs {expected}");
        }
    }
}

#[test]
fn embedded_heaviside_is_the_integrated_mollifier() {
    let m = Mollifier::build(1, 4).unwrap();
    let t = Distribution::heaviside(unit(), 0.0, 0).unwrap();
    let e = embed_compact(&t, &m).unwrap();
    let n = 8u64;
    for p in [-0.3, -0.05, 0.0, 0.1, 0.4] {
        let nf = n as f64;
        let expected = integrate_1d(|s| nf * m.profile(nf * s), -20.0, p, &[0.0], QuadOptions::new(1e-14)).value;
        let got = e.gfunc.eval_level_scalar(n, &[p]).unwrap();
        assert!((got - expected).abs() <= 1e-10, "x={p}: {got} vs {expected}");
    }
}

#[test]
fn derivative_of_embedded_heaviside_is_embedded_delta() {
    let m = Mollifier::build(1, 4).unwrap();
    let h = embed_compact(&Distribution::heaviside(unit(), 0.0, 0).unwrap(), &m).unwrap();
    let d = embed_compact(&Distribution::delta(unit(), vec![0.0], MultiIndex(vec![0])).unwrap(), &m).unwrap();
    let dh = derive(&h.gfunc, &MultiIndex(vec![1])).unwrap();
    for n in [4u64, 64] {
        for p in [-0.2, 0.0, 0.01, 0.15] {
            let (a, b) = (dh.eval_level_scalar(n, &[p]).unwrap(), d.gfunc.eval_level_scalar(n, &[p]).unwrap());
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "n={n} x={p}: {a} vs {b}");
        }
    }
}

#[test]
fn pairing_with_delta_prime_is_minus_the_derivative() {
    let phi_expr = (x() * 1.2).bump() * (x() * 3.0).sin();
    let phi = SmoothMap::scalar(phi_expr.clone(), unit()).unwrap();
    let t = Distribution::delta(unit(), vec![0.1], MultiIndex(vec![1])).unwrap();
    let oracle = -phi_expr.diff(&MultiIndex(vec![1])).eval(&[0.1]).unwrap();
    assert!((reference_pairing(&t, &phi).unwrap() - oracle).abs() <= 1e-13);
    let m = Mollifier::build(1, 4).unwrap();
    let rep = pair(&embed_compact(&t, &m).unwrap(), &phi, &Window::doubling(2, 4096).unwrap()).unwrap();
    assert!((rep.limit - oracle).abs() <= 1e-6, "{} vs {oracle}", rep.limit);
}

#[test]
fn cutoffs_form_a_partition_of_unity() {
    let u = DomainBox::interval(-2.0, 2.0);
    let w = DomainBox::interval(-1.0, 1.0);
    for pieces in [1, 2, 3] {
        let cs = build_cutoffs(&u, &w, pieces).unwrap();
        assert!(cs.partition_deviation(200).unwrap() <= 1e-12);
    }
    let u2 = DomainBox::cube(2, -2.0, 2.0);
    let w2 = DomainBox::cube(2, -1.0, 1.0);
    assert!(build_cutoffs(&u2, &w2, 2).unwrap().partition_deviation(40).unwrap() <= 1e-12);
}

#[test]
fn mollifier_moments_vanish() {
    for k in 1..=2 {
        for d in [2, 4, 6, 8] {
            let m = Mollifier::build(k, d).unwrap();
            let q = m.axis_moments(d as u32).unwrap();
            assert!((q[0].value - 1.0).abs() <= 1e-10, "k={k} d={d}");
            assert!(q[1..].iter().all(|r| r.value.abs() <= 1e-8), "k={k} d={d}");
        }
    }
    assert!(Mollifier::build(1, 3).is_err());
    assert!(Mollifier::build(4, 2).is_err());
}
