use proptest::prelude::*;

use qagf::dist::Base;
use qagf::geometry::{on_l, retract_point};
use qagf::net::INVERT_FLOOR_EXPONENT;
use qagf::{
    classify, compare, invert, parse_distribution, parse_expr, reference_pairing, Comparison, Distribution, DomainBox,
    Expr, Func, GenScalar, Jet, Mollifier, MultiIndex, ScaleTag, SmoothMap, Term, Verdict, Window,
};

const A: ScaleTag = ScaleTag::Asy;

fn power_net(c: f64, p: f64) -> GenScalar {
    GenScalar::from_fn(move |n| c * (n as f64).powf(p), A)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

fn expr_strategy() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        Just(Expr::var(0)),
        Just(Expr::var(1)),
        (-4i32..=4).prop_map(|k| Expr::constant(k as f64 * 0.5)),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            inner.clone().prop_map(|a| -a),
            inner.clone().prop_map(Expr::sin),
            inner.clone().prop_map(Expr::cos),
            inner.clone().prop_map(Expr::gauss),
            (inner, 0i32..=3).prop_map(|(a, p)| a.powi(p)),
        ]
    })
}

fn point_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 2)
}

fn jets_close(a: &Jet, b: &Jet) -> bool {
    a.coeffs().iter().zip(b.coeffs()).all(|(&u, &v)| close(u, v, 1e-9))
}

fn point_term_strategy() -> impl Strategy<Value = (f64, bool, u32, f64)> {
    (
        prop_oneof![(-8i32..=8).prop_filter("nonzero", |k| *k != 0).prop_map(|k| k as f64 * 0.25), -10.0f64..10.0],
        any::<bool>(),
        0u32..=3,
        -0.75f64..0.75,
    )
}

fn point_term((coeff, is_delta, order, at): (f64, bool, u32, f64)) -> Term {
    let base = if is_delta { Base::PointMass { at: vec![at] } } else { Base::Heaviside { at } };
    Term::new(coeff, MultiIndex(vec![order]), base)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn net_arithmetic_is_levelwise(c1 in -5.0f64..5.0, p1 in -3.0f64..3.0, c2 in -5.0f64..5.0, p2 in -3.0f64..3.0, n in 2u64..1_000_000) {
        let (a, b) = (power_net(c1, p1), power_net(c2, p2));
        let (x, y) = (a.re(n), b.re(n));
        prop_assert_eq!(a.add(&b).unwrap().re(n), x + y);
        prop_assert_eq!(a.sub(&b).unwrap().re(n), x - y);
        prop_assert_eq!(a.mul(&b).unwrap().re(n), x * y);
        prop_assert_eq!(a.neg().re(n), -x);
    }

    #[test]
    fn ring_laws_hold_levelwise(c in prop::collection::vec(-5.0f64..5.0, 3), p in prop::collection::vec(-2.0f64..2.0, 3), n in 2u64..100_000) {
        let a = power_net(c[0], p[0]);
        let b = power_net(c[1], p[1]);
        let d = power_net(c[2], p[2]);
        prop_assert_eq!(a.add(&b).unwrap().re(n), b.add(&a).unwrap().re(n));
        prop_assert_eq!(a.mul(&b).unwrap().re(n), b.mul(&a).unwrap().re(n));
        let lhs = a.mul(&b.add(&d).unwrap()).unwrap().re(n);
        let rhs = a.mul(&b).unwrap().add(&a.mul(&d).unwrap()).unwrap().re(n);
        let mag = a.re(n).abs() * (b.re(n).abs() + d.re(n).abs());
        prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * mag.max(f64::MIN_POSITIVE));
        prop_assert_eq!(a.sub(&a).unwrap().re(n), 0.0);
    }

    #[test]
    fn compare_is_antisymmetric(c1 in -5.0f64..5.0, p1 in -2.0f64..2.0, c2 in -5.0f64..5.0, p2 in -2.0f64..2.0) {
        let w = Window::default();
        let (a, b) = (power_net(c1, p1), power_net(c2, p2));
        let forward = compare(&a, &b, &w).unwrap();
        let backward = compare(&b, &a, &w).unwrap();
        let expected = match forward {
            Comparison::EventuallyLess => Comparison::EventuallyGreater,
            Comparison::EventuallyGreater => Comparison::EventuallyLess,
            other => other,
        };
        prop_assert_eq!(backward, expected);
        prop_assert_eq!(compare(&a, &a, &w).unwrap(), Comparison::EventuallyEqual);
    }

    #[test]
    fn classification_is_consistent(c in 0.1f64..10.0, p in -3.0f64..3.0, damp in any::<bool>(), rho in any::<bool>()) {
        let w = Window::default();
        let scale = if rho { ScaleTag::Rho } else { A };
        let a = if damp {
            GenScalar::from_fn(move |n| c * (n as f64).powf(p) * (-(n as f64)).exp(), A)
        } else {
            power_net(c, p)
        };
        let r1 = classify(&a, scale, &w).unwrap();
        let r2 = classify(&a, scale, &w).unwrap();
        prop_assert_eq!(r1.verdict, r2.verdict);
        prop_assert_eq!(r1.fitted_exponent.to_bits(), r2.fitted_exponent.to_bits());
        prop_assert!(!r1.negligible || r1.moderate);
        prop_assert!(r1.moderate);
        prop_assert_eq!(r1.verdict == Verdict::Negligible, damp);
    }

    #[test]
    fn power_nets_stay_moderate_under_products(c1 in 0.1f64..10.0, p1 in -3.0f64..3.0, c2 in 0.1f64..10.0, p2 in -3.0f64..3.0) {
        let w = Window::default();
        let prod = power_net(c1, p1).mul(&power_net(c2, p2)).unwrap();
        prop_assert!(classify(&prod, A, &w).unwrap().moderate);
    }

    #[test]
    fn inverse_is_exact_where_representable(c in prop_oneof![0.01f64..100.0, -100.0f64..-0.01], p in -2.0f64..2.0) {
        let w = Window::default();
        let a = power_net(c, p);
        let b = invert(&a, INVERT_FLOOR_EXPONENT, &w).unwrap();
        for &n in w.indices() {
            let (x, y) = (a.re(n), b.re(n));
            let r = 1.0 / x;
            if [r, r.next_up(), r.next_down()].iter().any(|&v| x * v == 1.0) {
                prop_assert_eq!(x * y, 1.0);
            } else {
                prop_assert!((x * y - 1.0).abs() <= f64::EPSILON);
            }
        }
    }

    #[test]
    fn jet_constant_term_is_the_value(e in expr_strategy(), x in point_strategy()) {
        let v = e.eval(&x).unwrap();
        let j = e.jet_at(&x, 3).unwrap();
        prop_assert!(close(j.value(), v, 1e-12) || (v.is_nan() && j.value().is_nan()));
    }

    #[test]
    fn jets_of_products_follow_leibniz(f in expr_strategy(), g in expr_strategy(), x in point_strategy()) {
        let order = 3;
        let lhs = (f.clone() * g.clone()).jet_at(&x, order).unwrap();
        let rhs = f.jet_at(&x, order).unwrap().mul(&g.jet_at(&x, order).unwrap());
        prop_assume!(lhs.is_finite() && rhs.is_finite());
        prop_assert!(jets_close(&lhs, &rhs), "{lhs:?} vs {rhs:?}");
    }

    #[test]
    fn jets_of_compositions_follow_the_chain_rule(f in expr_strategy(), x in point_strategy(), which in 0usize..3) {
        let order = 3;
        let (func, composed) = match which {
            0 => (Func::Sin, f.clone().sin()),
            1 => (Func::Cos, f.clone().cos()),
            _ => (Func::Gauss, f.clone().gauss()),
        };
        let inner = f.jet_at(&x, order).unwrap();
        let taylor = func.taylor(inner.value(), order).unwrap();
        let lhs = composed.jet_at(&x, order).unwrap();
        let rhs = inner.compose_univariate(&taylor);
        prop_assume!(lhs.is_finite() && rhs.is_finite());
        prop_assert!(jets_close(&lhs, &rhs), "{lhs:?} vs {rhs:?}");
    }

    #[test]
    fn jet_derivatives_match_symbolic_derivatives(f in expr_strategy(), x in point_strategy()) {
        let j = f.jet_at(&x, 2).unwrap();
        for alpha in MultiIndex::all_up_to(2, 2) {
            let d = f.diff(&alpha).eval(&x).unwrap();
            let from_jet = j.derivative(&alpha);
            prop_assume!(d.is_finite() && from_jet.is_finite());
            prop_assert!(close(d, from_jet, 1e-9), "{alpha}: {d} vs {from_jet}");
        }
    }

    #[test]
    fn printed_expressions_parse_back(e in expr_strategy(), x in point_strategy()) {
        let text = e.to_string();
        let back = parse_expr(&text).unwrap();
        prop_assert_eq!(back.to_string(), text.clone());
        let (u, v) = (e.eval(&x).unwrap(), back.eval(&x).unwrap());
        prop_assert!(close(u, v, 1e-12) || (u.is_nan() && v.is_nan()), "{text}: {u} vs {v}");
    }

    #[test]
    fn printed_distributions_parse_back(terms in prop::collection::vec(point_term_strategy(), 1..5)) {
        let u = DomainBox::interval(-1.0, 1.0);
        let t = Distribution::new(u.clone(), terms.into_iter().map(point_term).collect()).unwrap();
        let text = t.to_string();
        prop_assert_eq!(parse_distribution(&text).unwrap(), t);
    }

    #[test]
    fn pairing_is_linear(s in point_term_strategy(), r in point_term_strategy(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let u = DomainBox::interval(-1.0, 1.0);
        let t1 = Distribution::new(u.clone(), vec![point_term(s)]).unwrap();
        let t2 = Distribution::new(u.clone(), vec![point_term(r)]).unwrap();
        let phi = SmoothMap::scalar((Expr::var(0) * 1.1).bump() * (Expr::var(0) + 0.3).sin(), u.clone()).unwrap();
        let combo = t1.scaled(a).add(&t2.scaled(b)).unwrap();
        let lhs = reference_pairing(&combo, &phi).unwrap();
        let rhs = a * reference_pairing(&t1, &phi).unwrap() + b * reference_pairing(&t2, &phi).unwrap();
        prop_assert!(close(lhs, rhs, 1e-9), "{lhs} vs {rhs}");
    }

    #[test]
    fn derivative_moves_to_the_test_function(s in point_term_strategy(), order in 1u32..=2) {
        let u = DomainBox::interval(-1.0, 1.0);
        let t = Distribution::new(u.clone(), vec![point_term(s)]).unwrap();
        let phi_expr = (Expr::var(0) * 1.1).bump() * (Expr::var(0) * 2.0).cos();
        let phi = SmoothMap::scalar(phi_expr.clone(), u.clone()).unwrap();
        let alpha = MultiIndex(vec![order]);
        let dphi = SmoothMap::scalar(phi_expr.diff(&alpha), u).unwrap();
        let lhs = reference_pairing(&t.derive(&alpha), &phi).unwrap();
        let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
        let rhs = sign * reference_pairing(&t, &dphi).unwrap();
        prop_assert!(close(lhs, rhs, 1e-9), "{lhs} vs {rhs}");
    }

    #[test]
    fn retraction_lands_on_l_and_is_idempotent(k in 1usize..=2, x in prop::collection::vec(0.0f64..=1.0, 3)) {
        let x = &x[..k + 1];
        let p = retract_point(k, x).unwrap();
        prop_assert!(p.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        let clamped: Vec<f64> = p.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let near_l = clamped[k] <= 1e-12 || clamped[..k].iter().any(|&v| v <= 1e-12 || v >= 1.0 - 1e-12);
        prop_assert!(near_l, "{p:?}");
        let pp = retract_point(k, &clamped).unwrap();
        for (a, b) in pp.iter().zip(&clamped) {
            prop_assert!((a - b).abs() <= 1e-12, "{pp:?} vs {p:?}");
        }
        if on_l(k, x) {
            prop_assert_eq!(p, x.to_vec());
        }
    }

    #[test]
    fn mollifier_is_even(u in -20.0f64..20.0, d in prop::sample::select(vec![2usize, 4, 6, 8])) {
        let m = Mollifier::build(1, d).unwrap();
        prop_assert_eq!(m.profile(u), m.profile(-u));
    }
}
