//! Ready-made systems, actions and maps.

use std::sync::Arc;

use crate::expr::ScalarExpr;
use crate::geometry::{Chart, Coordinate, GroupAction, Sds, VectorField};

use super::{change_chart, QuotientMap, ReductionError};

/// Coordinate names for `ℝⁿ`: `x, y, z` up to three, `x1..xn` beyond.
pub fn euclidean_names(n: usize) -> Vec<String> {
    if n <= 3 {
        ["x", "y", "z"][..n].iter().map(|s| s.to_string()).collect()
    } else {
        (1..=n).map(|i| format!("x{i}")).collect()
    }
}

pub fn euclidean_chart(n: usize) -> Result<Arc<Chart>, ReductionError> {
    if n < 1 {
        return Err(ReductionError::BadDimension);
    }
    let names = euclidean_names(n);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Ok(Chart::euclidean(&format!("R{n}"), &refs))
}

/// Standard Brownian motion: zero drift, one unit noise field per axis.
pub fn brownian(n: usize) -> Result<Sds, ReductionError> {
    let chart = euclidean_chart(n)?;
    let noise = chart
        .names()
        .iter()
        .map(|c| VectorField::basis(&chart, c))
        .collect::<Result<_, _>>()?;
    Ok(Sds::new(VectorField::zero(&chart), noise)?)
}

/// Rotation generators `x_i ∂_j − x_j ∂_i`, `i < j`.
pub fn so_n_action(n: usize) -> Result<GroupAction, ReductionError> {
    let chart = euclidean_chart(n)?;
    let names = chart.names();
    let mut gens = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let mut comps = vec![ScalarExpr::zero(); n];
            comps[j] = ScalarExpr::coord(&names[i]);
            comps[i] = ScalarExpr::coord(&names[j]).neg();
            gens.push(VectorField::new(&chart, comps)?);
        }
    }
    if gens.is_empty() {
        return Err(ReductionError::BadDimension);
    }
    Ok(GroupAction::new(&format!("SO({n})"), gens)?)
}

/// Half-line with coordinate `name > 0`.
pub fn half_line(name: &str) -> Arc<Chart> {
    Chart::new("Rplus", vec![Coordinate::positive(name)]).expect("one coordinate")
}

/// `r = |x|` from `ℝⁿ` onto the half-line.
pub fn radial_map(n: usize) -> Result<QuotientMap, ReductionError> {
    let chart = euclidean_chart(n)?;
    let sq = chart
        .names()
        .iter()
        .fold(ScalarExpr::zero(), |acc, c| acc.add(&ScalarExpr::coord(c).powi(2).unwrap()));
    QuotientMap::new("r", &chart, &half_line("r"), vec![sq.sqrt()])
}

/// Bessel process of dimension `n`: drift `(n−1)/(2r) ∂_r`, noise `∂_r`.
pub fn bessel(n: usize) -> Result<Sds, ReductionError> {
    if n < 1 {
        return Err(ReductionError::BadDimension);
    }
    let chart = half_line("r");
    let r = ScalarExpr::coord("r");
    let drift = ScalarExpr::ratio(n as i64 - 1, 2).mul(&r.recip().expect("nonzero"));
    Ok(Sds::new(
        VectorField::new(&chart, vec![drift])?,
        vec![VectorField::basis(&chart, "r")?],
    )?)
}

fn planar_radius() -> ScalarExpr {
    let x = ScalarExpr::coord("x");
    let y = ScalarExpr::coord("y");
    x.mul(&x).add(&y.mul(&y)).sqrt()
}

/// Rotation plus radial damping `−f(r)(x∂_x + y∂_y)` plus planar noise.
/// `f` is written in a coordinate named `r`.
pub fn damped_oscillator(f: &ScalarExpr) -> Result<Sds, ReductionError> {
    let chart = euclidean_chart(2)?;
    let x = ScalarExpr::coord("x");
    let y = ScalarExpr::coord("y");
    let radius = planar_radius();
    let fr = f.substitute(&|c: &str| (c == "r").then(|| radius.clone()));
    let drift = VectorField::new(
        &chart,
        vec![y.neg().sub(&fr.mul(&x)), x.sub(&fr.mul(&y))],
    )?;
    Ok(Sds::new(drift, brownian(2)?.noise)?)
}

/// Energy `h = (x² + y²)/2` onto the half-line.
pub fn energy_map() -> QuotientMap {
    let chart = euclidean_chart(2).expect("n = 2");
    let x = ScalarExpr::coord("x");
    let y = ScalarExpr::coord("y");
    let h = x.mul(&x).add(&y.mul(&y)).mul(&ScalarExpr::ratio(1, 2));
    QuotientMap::new("h", &chart, &half_line("h"), vec![h]).expect("well formed")
}

/// Polar coordinates `(r, theta)`, `r > 0`, `theta` mod `2π`.
pub fn polar_chart() -> Arc<Chart> {
    let two_pi = ScalarExpr::int(2).mul(&ScalarExpr::pi());
    Chart::new(
        "polar",
        vec![Coordinate::positive("r"), Coordinate::periodic("theta", two_pi)],
    )
    .expect("valid chart")
}

/// Moves a planar system in `(x, y)` to the polar chart.
pub fn to_polar(x: &Sds) -> Result<Sds, ReductionError> {
    let polar = polar_chart();
    let r = ScalarExpr::coord("r");
    let th = ScalarExpr::coord("theta");
    let old = [r.mul(&th.cos()), r.mul(&th.sin())];
    let drift = change_chart(&x.drift, &polar, &old)?;
    let noise = x
        .noise
        .iter()
        .map(|v| change_chart(v, &polar, &old))
        .collect::<Result<_, _>>()?;
    Ok(Sds::new(drift, noise)?)
}

/// Rotations acting on the polar chart: the single generator `∂_theta`.
pub fn so2_polar() -> GroupAction {
    let polar = polar_chart();
    GroupAction::new("SO(2)", vec![VectorField::basis(&polar, "theta").expect("coordinate")])
        .expect("one generator")
}

/// Rotation drift `x∂_y − y∂_x` with unit noise along both axes.
pub fn rotation_with_noise() -> Sds {
    let chart = euclidean_chart(2).expect("n = 2");
    let x = ScalarExpr::coord("x");
    let y = ScalarExpr::coord("y");
    let drift = VectorField::new(&chart, vec![y.neg(), x]).expect("arity");
    Sds::new(drift, brownian(2).expect("n = 2").noise).expect("same chart")
}

fn phase_names(n: usize) -> Vec<String> {
    (1..=n)
        .map(|i| format!("x{i}"))
        .chain((1..=n).map(|i| format!("y{i}")))
        .collect()
}

fn phase_space(n: usize) -> Result<Arc<Chart>, ReductionError> {
    if n < 1 {
        return Err(ReductionError::BadDimension);
    }
    let names = phase_names(n);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    Ok(Chart::euclidean(&format!("R{}", 2 * n), &refs))
}

fn harmonic_flow(n: usize) -> Result<VectorField, ReductionError> {
    let chart = phase_space(n)?;
    let mut comps = vec![ScalarExpr::zero(); 2 * n];
    for i in 0..n {
        comps[i] = ScalarExpr::coord(&format!("y{}", i + 1)).neg();
        comps[n + i] = ScalarExpr::coord(&format!("x{}", i + 1));
    }
    Ok(VectorField::new(&chart, comps)?)
}

/// Isotropic oscillator flow on `ℝ²ⁿ` with unit noise along every axis.
pub fn harmonic_hamiltonian(n: usize) -> Result<Sds, ReductionError> {
    let chart = phase_space(n)?;
    let noise = chart
        .names()
        .iter()
        .map(|c| VectorField::basis(&chart, c))
        .collect::<Result<_, _>>()?;
    Ok(Sds::new(harmonic_flow(n)?, noise)?)
}

/// The circle action generated by the oscillator flow.
pub fn harmonic_circle_action(n: usize) -> Result<GroupAction, ReductionError> {
    Ok(GroupAction::new("T1", vec![harmonic_flow(n)?])?)
}

/// `sin(2π θ₁) ∂_{θ₂}` on the unit torus with the projection to `θ₂`.
pub fn torus_counterexample() -> (Sds, QuotientMap) {
    let one = ScalarExpr::one();
    let torus = Chart::new(
        "T2",
        vec![Coordinate::periodic("theta1", one.clone()), Coordinate::periodic("theta2", one.clone())],
    )
    .expect("valid chart");
    let circle = Chart::new("T1", vec![Coordinate::periodic("theta2", one)]).expect("valid chart");
    let angle = ScalarExpr::int(2).mul(&ScalarExpr::pi()).mul(&ScalarExpr::coord("theta1"));
    let x = VectorField::new(&torus, vec![ScalarExpr::zero(), angle.sin()]).expect("arity");
    let map = QuotientMap::new("theta2", &torus, &circle, vec![ScalarExpr::coord("theta2")]).expect("valid map");
    (Sds::deterministic(x), map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors() {
        assert!(brownian(0).is_err());
        let b1 = brownian(1).unwrap();
        assert!(b1.drift.is_zero());
        assert_eq!(b1.noise.len(), 1);
        assert_eq!(so_n_action(4).unwrap().generators.len(), 6);
        let b3 = bessel(3).unwrap();
        assert!(b3.drift.components[0].equivalent(&ScalarExpr::coord("r").recip().unwrap()));
        assert_eq!(harmonic_hamiltonian(2).unwrap().noise.len(), 4);
    }

    #[test]
    fn polar_form_of_rotation() {
        let x = to_polar(&rotation_with_noise()).unwrap();
        assert!(x.drift.components[0].is_zero(), "{}", x.drift);
        assert!(x.drift.components[1].is_one());
    }
}
