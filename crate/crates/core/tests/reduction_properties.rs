mod common;

use common::algebra::{field, plane, poly, tester};
use common::config;
use proptest::prelude::*;
use sds_core::dsl::parse;
use sds_core::expr::ScalarExpr;
use sds_core::geometry::{Sds, VectorField};
use sds_core::operator::{diffusion_equivalent, generator};
use sds_core::reduction::builtins::{
    bessel, brownian, damped_oscillator, energy_map, radial_map, so2_polar, so_n_action, to_polar,
};
use sds_core::reduction::{
    diffusion_invariance, morphism_check, project_generator, radial_angular_decompose, realize_sds,
    strict_invariance,
};

/// Damping profiles `c0 + c1 r^2` with integer coefficients.
fn damping() -> impl Strategy<Value = ScalarExpr> {
    (-3i64..=3, -2i64..=2).prop_map(|(c0, c1)| {
        let r = ScalarExpr::coord("r");
        ScalarExpr::int(c0).add(&ScalarExpr::int(c1).mul(&r.mul(&r)))
    })
}

proptest! {
    #![proptest_config(config(32, 51))]

    #[test]
    fn projections_are_diffusion_morphisms(f in damping(), energy in any::<bool>()) {
        let x = damped_oscillator(&f).unwrap();
        let map = if energy { energy_map() } else { radial_map(2).unwrap() };
        let a = generator(&x);
        let p = project_generator(&a, &map, 16, &tester()).unwrap();
        let b = p.reduced.expect("symbolic reduction");
        prop_assert!(morphism_check(&a, &b, &map, &tester()).unwrap().holds());
    }

    #[test]
    fn realized_systems_reproduce_their_operator(d in field(plane()), a in poly(2, 2)) {
        let ch = plane();
        let n1 = VectorField::new(&ch, vec![ScalarExpr::one(), a]).unwrap();
        let x = Sds::new(d, vec![n1, VectorField::basis(&ch, "y").unwrap()]).unwrap();
        let op = generator(&x);
        let y = realize_sds(&op, &tester()).unwrap();
        prop_assert!(generator(&y).sub(&op).unwrap().zero_verdict(&tester()).unwrap().holds());
    }

    #[test]
    fn radial_and_angular_parts_add_up(f in damping()) {
        let x = to_polar(&damped_oscillator(&f).unwrap()).unwrap();
        let (rad, ang) = radial_angular_decompose(&x, &so2_polar(), &tester()).unwrap();
        let sum = generator(&rad).add(&generator(&ang)).unwrap().sub(&generator(&x)).unwrap();
        prop_assert!(sum.zero_verdict(&tester()).unwrap().is_symbolic());
    }
}

#[test]
fn brownian_reduces_to_bessel_exactly() {
    for n in 2..=5 {
        let map = radial_map(n).unwrap();
        let b = project_generator(&generator(&brownian(n).unwrap()), &map, 16, &tester())
            .unwrap()
            .reduced
            .unwrap();
        let r = ScalarExpr::coord("r");
        assert!(b.coefficient(&[1]).sub(&ScalarExpr::ratio(n as i64 - 1, 2).mul(&r.recip().unwrap())).is_zero());
        assert!(b.coefficient(&[2]).sub(&ScalarExpr::ratio(1, 2)).is_zero());
        let y = realize_sds(&b, &tester()).unwrap();
        assert!(diffusion_equivalent(&y, &bessel(n).unwrap(), &tester()).unwrap().is_symbolic());
    }
}

#[test]
fn strict_invariance_implies_diffusion_invariance() {
    let docs = [
        include_str!("../documents/bessel.sds"),
        include_str!("../documents/brownian_n.sds"),
        include_str!("../documents/damped_oscillator.sds"),
        include_str!("../documents/example22.sds"),
    ];
    let mut checked = 0;
    for src in docs {
        let doc = parse(src).unwrap();
        for sds in doc.sds.values() {
            for act in doc.actions.values() {
                if act.action.chart.same_as(&sds.sds.chart).is_err() {
                    continue;
                }
                let strict = strict_invariance(&sds.sds, &act.action, &tester()).unwrap();
                let diff = diffusion_invariance(&sds.sds, &act.action, &tester()).unwrap();
                if strict.iter().all(|e| e.verdict.holds()) {
                    assert!(diff.iter().all(|v| v.holds()));
                    checked += 1;
                }
            }
        }
    }
    assert!(checked >= 1, "{checked}");
    let g = so_n_action(3).unwrap();
    assert!(diffusion_invariance(&brownian(3).unwrap(), &g, &tester()).unwrap().iter().all(|v| v.is_symbolic()));
}
