mod common;

use common::algebra::tester;
use common::config;
use proptest::prelude::*;
use sds_core::expr::ScalarExpr;
use sds_core::geometry::{Chart, ScalarField, VectorField};
use sds_core::integrability::{
    classify_point, normal_form, promote_and_verify, verify_sds_integrable, verify_system, IntegrableSystem,
};
use sds_core::operator::{diffusion_equivalent, generator, DiffOp};
use sds_core::reduction::builtins::{damped_oscillator, polar_chart, to_polar};

/// Polynomials of degree at most 2 in one coordinate.
fn profile(name: &'static str) -> BoxedStrategy<ScalarExpr> {
    prop::collection::vec(-2i64..=2, 3)
        .prop_map(move |c| {
            let v = ScalarExpr::coord(name);
            c.iter().rev().fold(ScalarExpr::zero(), |acc, k| acc.mul(&v).add(&ScalarExpr::int(*k)))
        })
        .boxed()
}

/// Rotation-invariant operators on the polar chart paired with `∂_θ`.
fn polar_system() -> BoxedStrategy<IntegrableSystem> {
    prop::collection::vec(profile("r"), 5)
        .prop_map(|cs| {
            let ch = polar_chart();
            let idx = [vec![1, 0], vec![2, 0], vec![0, 1], vec![1, 1], vec![0, 2]];
            let op = DiffOp::from_terms(&ch, idx.iter().cloned().zip(cs)).unwrap();
            let z = VectorField::basis(&ch, "theta").unwrap();
            IntegrableSystem::new("s", &ch, vec![op], vec![z], vec![]).unwrap()
        })
        .boxed()
}

fn space() -> std::sync::Arc<Chart> {
    Chart::euclidean("R3", &["x", "y", "z"])
}

/// Type (0,2,1): two fields along y and z with x-dependent coefficients,
/// and the function x.
fn shear_system() -> BoxedStrategy<(Vec<VectorField>, ScalarField)> {
    prop::collection::vec(profile("x"), 4)
        .prop_map(|cs| {
            let ch = space();
            let z1 = VectorField::new(&ch, vec![ScalarExpr::zero(), cs[0].clone(), cs[1].clone()]).unwrap();
            let z2 = VectorField::new(&ch, vec![ScalarExpr::zero(), cs[2].clone(), cs[3].clone()]).unwrap();
            (vec![z1, z2], ScalarField::new(&ch, ScalarExpr::coord("x")).unwrap())
        })
        .boxed()
}

proptest! {
    #![proptest_config(config(24, 61))]

    #[test]
    fn passing_systems_have_involutive_symbols(sys in polar_system()) {
        let rep = verify_system(&sys, 16, &tester()).unwrap();
        prop_assert!(rep.commutators.iter().all(|c| c.verdict.holds()));
        if rep.pass {
            prop_assert!(rep.poisson.iter().all(|p| p.verdict.holds()));
            let (promoted, again) = promote_and_verify(&sys, 16, &tester()).unwrap();
            prop_assert_eq!(promoted.kind(), (2, 0, 0));
            prop_assert!(again.pass);
            prop_assert!(again.poisson.iter().all(|p| p.verdict.holds()));
        }
    }

    #[test]
    fn classification_ignores_member_order(
        (fields, f) in shear_system(),
        pts in prop::collection::vec([-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0], 8),
    ) {
        let ch = space();
        let a = IntegrableSystem::new("a", &ch, vec![], fields.clone(), vec![f.clone()]).unwrap();
        let b = IntegrableSystem::new("b", &ch, vec![], fields.into_iter().rev().collect(), vec![f]).unwrap();
        for p in &pts {
            prop_assert_eq!(classify_point(&a, p, &tester()).unwrap(), classify_point(&b, p, &tester()).unwrap());
        }
        if let Ok((pa, _)) = promote_and_verify(&a, 8, &tester()) {
            let mut ops = pa.operators.clone();
            ops.reverse();
            let pb = IntegrableSystem::new("b", &ch, ops, vec![], vec![]).unwrap();
            for p in &pts {
                prop_assert_eq!(classify_point(&pa, p, &tester()).unwrap(), classify_point(&pb, p, &tester()).unwrap());
            }
        }
    }

    #[test]
    fn normal_forms_are_equivalent_and_angle_free(f in profile("r"), angle in -3i64..=3) {
        let x = to_polar(&damped_oscillator(&f).unwrap()).unwrap();
        let z = VectorField::basis(&x.chart, "theta").unwrap();
        let sys = IntegrableSystem::new("s", &x.chart, vec![generator(&x)], vec![z], vec![]).unwrap();
        prop_assert!(verify_sds_integrable(&x, &sys, 16, &tester()).unwrap().pass);
        let y = normal_form(&x, &[("theta", ScalarExpr::int(angle))], &tester()).unwrap();
        prop_assert!(diffusion_equivalent(&x, &y, &tester()).unwrap().holds());
        let free = |v: &VectorField| v.components.iter().all(|c| c.diff("theta").is_zero());
        prop_assert!(free(&y.drift));
        prop_assert!(y.noise.iter().all(free));
    }
}
