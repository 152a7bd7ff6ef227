mod common;

use common::algebra::{field, plane, planar_sds, poly, tester};
use common::config;
use proptest::prelude::*;
use sds_core::expr::{Bindings, ScalarExpr};
use sds_core::geometry::{Sds, VectorField};
use sds_core::operator::{generator, DiffOp};
use sds_core::symbol::{ellipticity_check, laplace_beltrami, metric_from_elliptic, principal_symbol, span_at};

fn at(x: &[f64]) -> Bindings {
    Bindings::from_pairs(&[("x", x[0]), ("y", x[1])])
}

/// Elliptic systems: noise `∂_x + a ∂_y` and `∂_y`, so the diffusion
/// matrix has determinant one everywhere.
fn elliptic_sds() -> impl Strategy<Value = Sds> {
    (field(plane()), poly(2, 2)).prop_map(|(d, a)| {
        let ch = plane();
        let n1 = VectorField::new(&ch, vec![ScalarExpr::one(), a]).unwrap();
        let n2 = VectorField::basis(&ch, "y").unwrap();
        Sds::new(d, vec![n1, n2]).unwrap()
    })
}

proptest! {
    #![proptest_config(config(100, 41))]

    #[test]
    fn generator_symbol_is_half_sum_of_squares(
        x in planar_sds(),
        pts in prop::collection::vec(([-2.0f64..2.0, -2.0f64..2.0], [-2.0f64..2.0, -2.0f64..2.0]), 100),
    ) {
        let s = principal_symbol(&generator(&x));
        let b = Bindings::default();
        for (q, p) in &pts {
            let got = s.eval(q, p, &b).unwrap();
            let want: f64 = x.noise.iter().map(|v| {
                let v = v.eval_at(q, &at(q)).unwrap();
                0.5 * (p[0] * v[0] + p[1] * v[1]).powi(2)
            }).sum();
            prop_assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()), "{} vs {}", got, want);
        }
    }

    #[test]
    fn metric_data_reassembles_the_operator(x in elliptic_sds()) {
        let a = generator(&x);
        let m = metric_from_elliptic(&a, &tester()).unwrap();
        let lb = laplace_beltrami(&a.chart, &m.inverse_metric).unwrap();
        let back = lb.scale(&ScalarExpr::ratio(1, 2)).add(&DiffOp::from_field(&m.drift)).unwrap();
        prop_assert!(back.sub(&a).unwrap().zero_verdict(&tester()).unwrap().is_symbolic());
    }

    #[test]
    fn span_dimension_matches_ellipticity(x in planar_sds(), keep in 1usize..=2, q in [-2.0f64..2.0, -2.0f64..2.0]) {
        let x = Sds::new(x.drift.clone(), x.noise[..keep].to_vec()).unwrap();
        let a = generator(&x);
        let b = Bindings::default();
        let span = span_at(&a, &q, &b).unwrap();
        prop_assert!(span.dim <= keep);
        let elliptic = ellipticity_check(&[a], &[1.0], &q, &b).unwrap();
        prop_assert_eq!(span.dim == 2, elliptic);
    }
}
