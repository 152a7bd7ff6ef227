mod common;

use common::algebra::poly;
use common::config;
use proptest::prelude::*;
use sds_core::expr::{simplify, Bindings, Expr, Function, SampleBox, ScalarExpr, ZeroStatus, ZeroTester};

fn expr_tree() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        prop::sample::select(vec!["x", "y", "z"]).prop_map(Expr::var),
        (-4i64..=4).prop_map(Expr::int),
        Just(Expr::Pi),
    ];
    leaf.prop_recursive(6, 48, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 2..4).prop_map(Expr::Add),
            prop::collection::vec(inner.clone(), 2..3).prop_map(Expr::Mul),
            (inner.clone(), 0i32..3).prop_map(|(b, k)| b.pow(k)),
            inner.clone().prop_map(|a| Expr::call(Function::Sin, a)),
            inner.clone().prop_map(|a| Expr::call(Function::Cos, a)),
            inner.prop_map(|a| Expr::call(Function::Exp, Expr::call(Function::Sin, a))),
        ]
    })
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [-1.5f64..1.5, -1.5f64..1.5, -1.5f64..1.5]
}

fn bind(p: &[f64; 3]) -> Bindings {
    Bindings::from_pairs(&[("x", p[0]), ("y", p[1]), ("z", p[2])])
}

proptest! {
    #![proptest_config(config(1000, 31))]

    #[test]
    fn simplify_is_idempotent(e in expr_tree()) {
        let once = simplify(&e).unwrap();
        let twice = simplify(&once).unwrap();
        prop_assert_eq!(&twice, &once);
    }
}

proptest! {
    #![proptest_config(config(1000, 32))]

    // Relative tolerance is taken against the magnitude of the expanded
    // terms, since cancellation between them is exact symbolically but
    // not in floating point.
    #[test]
    fn simplify_preserves_values(e in expr_tree(), pts in prop::collection::vec(point(), 10)) {
        let s = e.to_scalar().unwrap();
        for p in &pts {
            let b = bind(p);
            let raw = e.eval(&b).unwrap();
            let (canon, scale) = s.eval_with_scale(&b).unwrap();
            let via_tree = simplify(&e).unwrap().eval(&b).unwrap();
            let tol = 1e-12 * raw.abs().max(scale).max(1.0);
            prop_assert!((raw - canon).abs() <= tol, "{} vs {} at {:?}", raw, canon, p);
            prop_assert!((raw - via_tree).abs() <= tol, "{} vs {} at {:?}", raw, via_tree, p);
        }
    }
}

proptest! {
    #![proptest_config(config(300, 33))]

    #[test]
    fn product_rule(f in poly(3, 4), g in poly(3, 4), which in 0usize..3) {
        let c = ["x", "y", "z"][which];
        let lhs = f.mul(&g).diff(c);
        let rhs = f.diff(c).mul(&g).add(&f.mul(&g.diff(c)));
        prop_assert!(lhs.sub(&rhs).is_zero());
    }

    #[test]
    fn symbolic_zero_is_never_claimed_for_nonzero_values(e in expr_tree(), pts in prop::collection::vec(point(), 5)) {
        let s = e.to_scalar().unwrap();
        let domain = SampleBox::new(vec![("x".into(), -1.5, 1.5), ("y".into(), -1.5, 1.5), ("z".into(), -1.5, 1.5)]);
        let v = ZeroTester::default().is_zero(&s, &domain).unwrap();
        if v.status == ZeroStatus::SymbolicZero {
            for p in &pts {
                let value = e.eval(&bind(p)).unwrap();
                prop_assert!(value.abs() <= 1e-6, "{} at {:?}", value, p);
            }
        }
        let shifted = s.add(&ScalarExpr::ratio(1, 1000));
        if s.is_zero() {
            prop_assert_ne!(ZeroTester::default().is_zero(&shifted, &domain).unwrap().status, ZeroStatus::SymbolicZero);
        }
    }
}
