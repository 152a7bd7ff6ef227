use std::sync::Arc;

use proptest::prelude::*;
use sds_core::expr::{ScalarExpr, ZeroTester};
use sds_core::geometry::{lie_bracket, Chart, ScalarField, Sds, VectorField};
use sds_core::operator::{
    commutator, compose, diffusion_equivalent, generator, strong_first_integral, weak_first_integral, DiffOp,
    IntegralMode,
};

pub fn plane() -> Arc<Chart> {
    Chart::euclidean("R2", &["x", "y"])
}

pub fn tester() -> ZeroTester {
    ZeroTester::default()
}

fn monomial(exps: &[u32]) -> ScalarExpr {
    let names = ["x", "y", "z"];
    exps.iter().enumerate().fold(ScalarExpr::one(), |acc, (i, k)| {
        acc.mul(&ScalarExpr::coord(names[i]).powi(*k as i32).expect("nonnegative power"))
    })
}

/// Polynomials in the first `dim` of x, y, z with up to `terms` terms of
/// degree at most 2 per variable.
pub fn poly(dim: usize, terms: usize) -> BoxedStrategy<ScalarExpr> {
    prop::collection::vec((-3i64..=3, prop::collection::vec(0u32..=2, dim)), 1..=terms)
        .prop_map(|ts| {
            ts.iter()
                .fold(ScalarExpr::zero(), |acc, (c, e)| acc.add(&monomial(e).mul(&ScalarExpr::int(*c))))
        })
        .boxed()
}

pub fn field(chart: Arc<Chart>) -> BoxedStrategy<VectorField> {
    let dim = chart.dim();
    prop::collection::vec(poly(dim, 3), dim)
        .prop_map(move |c| VectorField::new(&chart, c).expect("arity"))
        .boxed()
}

/// Operators of order at most two on the plane with polynomial coefficients.
pub fn op2() -> BoxedStrategy<DiffOp> {
    let idx = [vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]];
    prop::collection::vec(poly(2, 2), 6)
        .prop_map(move |cs| DiffOp::from_terms(&plane(), idx.iter().cloned().zip(cs)).expect("well formed"))
        .boxed()
}

/// Exact rotations `(c, s)` with `c^2 + s^2 = 1` from Pythagorean triples.
pub fn rotation() -> BoxedStrategy<(ScalarExpr, ScalarExpr)> {
    prop::sample::select(vec![(3, 4, 5), (5, 12, 13), (8, 15, 17), (7, 24, 25), (0, 1, 1)])
        .prop_flat_map(|(a, b, h)| {
            (prop::bool::ANY, prop::bool::ANY).prop_map(move |(sa, sb)| {
                let c = ScalarExpr::ratio(if sa { a } else { -a }, h);
                let s = ScalarExpr::ratio(if sb { b } else { -b }, h);
                (c, s)
            })
        })
        .boxed()
}

/// Replaces the first two noise fields `(V1, V2)` by `(cV1 - sV2, sV1 + cV2)`.
pub fn rotate_noise(x: &Sds, rot: &(ScalarExpr, ScalarExpr)) -> Sds {
    let (c, s) = rot;
    let (v1, v2) = (&x.noise[0], &x.noise[1]);
    let w1 = v1.scale(c).sub(&v2.scale(s)).unwrap();
    let w2 = v1.scale(s).add(&v2.scale(c)).unwrap();
    let mut noise = vec![w1, w2];
    noise.extend(x.noise[2..].iter().cloned());
    Sds::new(x.drift.clone(), noise).unwrap()
}

/// Random planar system with two noise fields.
pub fn planar_sds() -> BoxedStrategy<Sds> {
    (field(plane()), field(plane()), field(plane()))
        .prop_map(|(d, a, b)| Sds::new(d, vec![a, b]).unwrap())
        .boxed()
}

/// Systems built from the rotation field `R` and the Euler field `E`,
/// with radial profiles in `ρ = x² + y²`, so that `ρ` is sometimes a
/// first integral and sometimes not.
pub fn radial_family() -> BoxedStrategy<Sds> {
    let profile = prop::collection::vec(-2i64..=2, 2);
    (profile.clone(), profile.clone(), profile, prop::collection::vec(0i64..=1, 3))
        .prop_map(|(p0, p1, p2, eps)| {
            let ch = plane();
            let (x, y) = (ScalarExpr::coord("x"), ScalarExpr::coord("y"));
            let rho = x.mul(&x).add(&y.mul(&y));
            let prof = |p: &[i64]| ScalarExpr::int(p[0]).add(&ScalarExpr::int(p[1]).mul(&rho));
            let rot = VectorField::new(&ch, vec![y.neg(), x.clone()]).unwrap();
            let euler = VectorField::new(&ch, vec![x.clone(), y.clone()]).unwrap();
            let mk = |p: &[i64], e: i64| rot.scale(&prof(p)).add(&euler.scale(&ScalarExpr::int(e))).unwrap();
            Sds::new(mk(&p0, eps[0]), vec![mk(&p1, eps[1]), mk(&p2, eps[2])]).unwrap()
        })
        .boxed()
}

pub fn integral_candidate() -> BoxedStrategy<ScalarExpr> {
    let (x, y) = (ScalarExpr::coord("x"), ScalarExpr::coord("y"));
    let rho = x.mul(&x).add(&y.mul(&y));
    prop_oneof![Just(x), Just(rho.clone()), Just(rho.mul(&rho)), poly(2, 3)].boxed()
}

fn check(v: sds_core::expr::ZeroVerdict, what: &str) -> Result<(), TestCaseError> {
    prop_assert!(v.holds(), "{what}: {v:?}");
    Ok(())
}

pub fn bracket_antisymmetry(v: &VectorField, w: &VectorField) -> Result<(), TestCaseError> {
    let s = lie_bracket(v, w).unwrap().add(&lie_bracket(w, v).unwrap()).unwrap();
    prop_assert!(s.components.iter().all(ScalarExpr::is_zero));
    Ok(())
}

pub fn field_jacobi(u: &VectorField, v: &VectorField, w: &VectorField) -> Result<(), TestCaseError> {
    let b = |a: &VectorField, c: &VectorField| lie_bracket(a, c).unwrap();
    let s = b(u, &b(v, w)).add(&b(v, &b(w, u))).unwrap().add(&b(w, &b(u, v))).unwrap();
    check(s.zero_verdict(&tester()).unwrap(), "Jacobi")
}

pub fn bracket_leibniz(v: &VectorField, w: &VectorField, f: &ScalarExpr) -> Result<(), TestCaseError> {
    let lhs = lie_bracket(v, w).unwrap().apply(f);
    let rhs = v.apply(&w.apply(f)).sub(&w.apply(&v.apply(f)));
    prop_assert!(lhs.equivalent(&rhs));
    Ok(())
}

pub fn commutator_bilinear(a: &DiffOp, b: &DiffOp, c: &DiffOp, k: i64) -> Result<(), TestCaseError> {
    let kk = ScalarExpr::int(k);
    let lhs = commutator(&a.scale(&kk).add(b).unwrap(), c).unwrap();
    let rhs = commutator(a, c).unwrap().scale(&kk).add(&commutator(b, c).unwrap()).unwrap();
    check(lhs.sub(&rhs).unwrap().zero_verdict(&tester()).unwrap(), "left linearity")?;
    let lhs = commutator(c, &a.add(b).unwrap()).unwrap();
    let rhs = commutator(c, a).unwrap().add(&commutator(c, b).unwrap()).unwrap();
    check(lhs.sub(&rhs).unwrap().zero_verdict(&tester()).unwrap(), "right linearity")
}

pub fn commutator_jacobi(a: &DiffOp, b: &DiffOp, c: &DiffOp) -> Result<(), TestCaseError> {
    let k = |p: &DiffOp, q: &DiffOp| commutator(p, q).unwrap();
    let s = k(a, &k(b, c)).add(&k(b, &k(c, a))).unwrap().add(&k(c, &k(a, b))).unwrap();
    check(s.zero_verdict(&tester()).unwrap(), "operator Jacobi")
}

pub fn composition_associative(a: &DiffOp, b: &DiffOp, c: &DiffOp) -> Result<(), TestCaseError> {
    let l = compose(&compose(a, b).unwrap(), c).unwrap();
    let r = compose(a, &compose(b, c).unwrap()).unwrap();
    check(l.sub(&r).unwrap().zero_verdict(&tester()).unwrap(), "associativity")
}

pub fn generator_has_no_potential(x: &Sds) -> Result<(), TestCaseError> {
    prop_assert!(generator(x).zeroth_order().is_zero());
    prop_assert!(generator(x).order() <= 2);
    Ok(())
}

pub fn equivalence_laws(
    x: &Sds,
    other: &Sds,
    a: &(ScalarExpr, ScalarExpr),
    b: &(ScalarExpr, ScalarExpr),
) -> Result<(), TestCaseError> {
    let t = tester();
    prop_assert!(diffusion_equivalent(x, x, &t).unwrap().is_symbolic(), "reflexive");
    let y = rotate_noise(x, a);
    let z = rotate_noise(&y, b);
    let xy = diffusion_equivalent(x, &y, &t).unwrap();
    let yx = diffusion_equivalent(&y, x, &t).unwrap();
    prop_assert!(xy.is_symbolic() && yx.is_symbolic(), "rotated noise is equivalent");
    prop_assert!(diffusion_equivalent(&y, &z, &t).unwrap().is_symbolic());
    prop_assert!(diffusion_equivalent(x, &z, &t).unwrap().is_symbolic(), "transitive");
    let xo = diffusion_equivalent(x, other, &t).unwrap();
    let ox = diffusion_equivalent(other, x, &t).unwrap();
    prop_assert_eq!(xo.status, ox.status, "symmetric");
    Ok(())
}

/// First integrals agree across a diffusion-equivalence class.
pub fn integrals_are_class_invariants(
    x: &Sds,
    rot: &(ScalarExpr, ScalarExpr),
    f: &ScalarExpr,
) -> Result<(), TestCaseError> {
    let t = tester();
    let y = rotate_noise(x, rot);
    prop_assert!(diffusion_equivalent(x, &y, &t).unwrap().is_symbolic());
    let f = ScalarField::new(&x.chart, f.clone()).unwrap();
    let sx = strong_first_integral(x, &f, IntegralMode::ByCommutator, &t).unwrap();
    let sy = strong_first_integral(&y, &f, IntegralMode::ByCommutator, &t).unwrap();
    prop_assert_eq!(sx.holds(), sy.holds(), "strong");
    let wx = weak_first_integral(x, &f, &t).unwrap();
    let wy = weak_first_integral(&y, &f, &t).unwrap();
    prop_assert_eq!(wx.holds(), wy.holds(), "weak");
    let fx = strong_first_integral(x, &f, IntegralMode::ByFields, &t).unwrap();
    prop_assert_eq!(fx.holds(), sx.holds(), "modes");
    Ok(())
}
