//! Charts, vector fields, SDS records and infinitesimal group actions.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Bindings, ExprError, Q, SampleBox, ScalarExpr, ZeroTester, ZeroVerdict};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("chart mismatch: expected `{expected}`, found `{found}`")]
    ChartMismatch { expected: String, found: String },
    #[error("duplicate coordinate `{0}`")]
    DuplicateCoordinate(String),
    #[error("period of `{0}` must be a positive constant")]
    BadPeriod(String),
    #[error("bounds of `{0}` are inconsistent")]
    InconsistentBounds(String),
    #[error("expression refers to `{coord}`, which is not a coordinate of chart `{chart}`")]
    ForeignCoordinate { coord: String, chart: String },
    #[error("field has {found} components, chart has dimension {expected}")]
    WrongArity { expected: usize, found: usize },
    #[error("group action `{0}` has no generators")]
    EmptyAction(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// One chart coordinate with its optional periodicity and strict bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct Coordinate {
    pub name: String,
    pub period: Option<ScalarExpr>,
    pub lower: Option<Q>,
    pub upper: Option<Q>,
}

impl Coordinate {
    pub fn free(name: &str) -> Self {
        Coordinate {
            name: name.to_string(),
            period: None,
            lower: None,
            upper: None,
        }
    }

    pub fn periodic(name: &str, period: ScalarExpr) -> Self {
        Coordinate {
            period: Some(period),
            ..Coordinate::free(name)
        }
    }

    pub fn positive(name: &str) -> Self {
        Coordinate {
            lower: Some(Q::zero()),
            ..Coordinate::free(name)
        }
    }

    pub fn period_value(&self) -> Option<f64> {
        self.period
            .as_ref()
            .and_then(|p| p.eval(&Bindings::default()).ok())
    }

    fn lower_f64(&self) -> Option<f64> {
        self.lower.as_ref().map(q_f64)
    }

    fn upper_f64(&self) -> Option<f64> {
        self.upper.as_ref().map(q_f64)
    }

    /// Default sampling interval for zero tests.
    pub fn sample_interval(&self) -> (f64, f64) {
        if let Some(p) = self.period_value() {
            return (0.0, p);
        }
        match (self.lower_f64(), self.upper_f64()) {
            (Some(lo), Some(hi)) => {
                let pad = (0.05 * (hi - lo)).min(0.1);
                (lo + pad, hi - pad)
            }
            (Some(lo), None) => (lo + 0.1, lo + 3.0),
            (None, Some(hi)) => (hi - 3.0, hi - 0.1),
            (None, None) => (-2.0, 2.0),
        }
    }

    pub fn admits(&self, v: f64) -> bool {
        self.lower_f64().is_none_or(|lo| v > lo) && self.upper_f64().is_none_or(|hi| v < hi)
    }
}

fn q_f64(q: &Q) -> f64 {
    use num_traits::ToPrimitive;
    q.to_f64().unwrap_or(f64::NAN)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub name: String,
    pub coords: Vec<Coordinate>,
}

impl Chart {
    pub fn new(name: &str, coords: Vec<Coordinate>) -> Result<Arc<Chart>, GeometryError> {
        let mut seen = HashSet::new();
        for c in &coords {
            if !seen.insert(c.name.clone()) {
                return Err(GeometryError::DuplicateCoordinate(c.name.clone()));
            }
            if c.period.is_some() {
                match c.period_value() {
                    Some(p) if p > 0.0 => {}
                    _ => return Err(GeometryError::BadPeriod(c.name.clone())),
                }
            }
            if let (Some(lo), Some(hi)) = (&c.lower, &c.upper) {
                if lo >= hi {
                    return Err(GeometryError::InconsistentBounds(c.name.clone()));
                }
            }
            if c.period.is_some() && (c.lower.is_some() || c.upper.is_some()) {
                return Err(GeometryError::InconsistentBounds(c.name.clone()));
            }
        }
        Ok(Arc::new(Chart {
            name: name.to_string(),
            coords,
        }))
    }

    /// Unconstrained chart on the given names.
    pub fn euclidean(name: &str, names: &[&str]) -> Arc<Chart> {
        Chart::new(name, names.iter().map(|n| Coordinate::free(n)).collect())
            .expect("euclidean chart with duplicate names")
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.coords.iter().map(|c| c.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c.name == name)
    }

    pub fn coordinate(&self, name: &str) -> Option<&Coordinate> {
        self.coords.iter().find(|c| c.name == name)
    }

    pub fn sample_box(&self) -> SampleBox {
        SampleBox::new(
            self.coords
                .iter()
                .map(|c| {
                    let (lo, hi) = c.sample_interval();
                    (c.name.clone(), lo, hi)
                })
                .collect(),
        )
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim() && self.coords.iter().zip(point).all(|(c, v)| c.admits(*v))
    }

    /// Reduces periodic coordinates into `[0, period)`.
    pub fn wrap(&self, point: &mut [f64]) {
        for (c, v) in self.coords.iter().zip(point.iter_mut()) {
            if let Some(p) = c.period_value() {
                *v = v.rem_euclid(p);
            }
        }
    }

    pub fn bindings(&self, point: &[f64]) -> Bindings {
        let mut b = Bindings::default();
        for (c, v) in self.coords.iter().zip(point) {
            b.set(&c.name, *v);
        }
        b
    }

    /// Checks that every coordinate of `e` belongs to this chart.
    pub fn check_expr(&self, e: &ScalarExpr) -> Result<(), GeometryError> {
        for c in e.free_coords() {
            if self.index_of(&c).is_none() {
                return Err(GeometryError::ForeignCoordinate {
                    coord: c,
                    chart: self.name.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn same_as(&self, other: &Chart) -> Result<(), GeometryError> {
        if self == other {
            Ok(())
        } else {
            Err(GeometryError::ChartMismatch {
                expected: self.name.clone(),
                found: other.name.clone(),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub chart: Arc<Chart>,
    pub value: ScalarExpr,
}

impl ScalarField {
    pub fn new(chart: &Arc<Chart>, value: ScalarExpr) -> Result<Self, GeometryError> {
        chart.check_expr(&value)?;
        Ok(ScalarField {
            chart: chart.clone(),
            value,
        })
    }
}

/// Components indexed by chart coordinate order.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub chart: Arc<Chart>,
    pub components: Vec<ScalarExpr>,
}

impl VectorField {
    pub fn new(chart: &Arc<Chart>, components: Vec<ScalarExpr>) -> Result<Self, GeometryError> {
        if components.len() != chart.dim() {
            return Err(GeometryError::WrongArity {
                expected: chart.dim(),
                found: components.len(),
            });
        }
        for c in &components {
            chart.check_expr(c)?;
        }
        Ok(VectorField {
            chart: chart.clone(),
            components,
        })
    }

    /// Builds a field from `(coordinate, component)` pairs; missing
    /// coordinates get zero and repeated ones accumulate.
    pub fn from_pairs(chart: &Arc<Chart>, pairs: &[(&str, ScalarExpr)]) -> Result<Self, GeometryError> {
        let mut comps = vec![ScalarExpr::zero(); chart.dim()];
        for (name, e) in pairs {
            let i = chart.index_of(name).ok_or_else(|| GeometryError::ForeignCoordinate {
                coord: name.to_string(),
                chart: chart.name.clone(),
            })?;
            comps[i] = comps[i].add(e);
        }
        VectorField::new(chart, comps)
    }

    pub fn zero(chart: &Arc<Chart>) -> Self {
        VectorField {
            chart: chart.clone(),
            components: vec![ScalarExpr::zero(); chart.dim()],
        }
    }

    /// The coordinate field `d/d<name>`.
    pub fn basis(chart: &Arc<Chart>, name: &str) -> Result<Self, GeometryError> {
        VectorField::from_pairs(chart, &[(name, ScalarExpr::one())])
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(ScalarExpr::is_zero)
    }

    pub fn component(&self, name: &str) -> Option<&ScalarExpr> {
        self.chart.index_of(name).map(|i| &self.components[i])
    }

    /// Directional derivative `Σ V^j ∂_j e`.
    pub fn apply(&self, e: &ScalarExpr) -> ScalarExpr {
        let mut acc = ScalarExpr::zero();
        for (c, v) in self.chart.coords.iter().zip(&self.components) {
            if v.is_zero() {
                continue;
            }
            let d = e.diff(&c.name);
            if !d.is_zero() {
                acc = acc.add(&v.mul(&d));
            }
        }
        acc
    }

    pub fn add(&self, other: &VectorField) -> Result<VectorField, GeometryError> {
        self.chart.same_as(&other.chart)?;
        Ok(VectorField {
            chart: self.chart.clone(),
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.add(b))
                .collect(),
        })
    }

    pub fn sub(&self, other: &VectorField) -> Result<VectorField, GeometryError> {
        self.add(&other.scale(&ScalarExpr::int(-1)))
    }

    /// Pointwise multiplication by a function.
    pub fn scale(&self, f: &ScalarExpr) -> VectorField {
        VectorField {
            chart: self.chart.clone(),
            components: self.components.iter().map(|c| c.mul(f)).collect(),
        }
    }

    pub fn map_components(&self, f: impl Fn(&ScalarExpr) -> ScalarExpr) -> VectorField {
        VectorField {
            chart: self.chart.clone(),
            components: self.components.iter().map(f).collect(),
        }
    }

    pub fn eval_at(&self, point: &[f64], funcs: &Bindings) -> Result<Vec<f64>, ExprError> {
        let mut b = funcs.clone();
        for (c, v) in self.chart.coords.iter().zip(point) {
            b.set(&c.name, *v);
        }
        self.components.iter().map(|c| c.eval(&b)).collect()
    }

    /// Zero test of every component, labelled by basis vector.
    pub fn zero_verdict(&self, tester: &ZeroTester) -> Result<ZeroVerdict, ExprError> {
        let boxed = self.chart.sample_box();
        tester.all_zero(
            self.chart
                .coords
                .iter()
                .zip(&self.components)
                .map(|(c, e)| (format!("d/d{}", c.name), e)),
            &boxed,
        )
    }
}

impl fmt::Display for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (c, e) in self.chart.coords.iter().zip(&self.components) {
            if e.is_zero() {
                continue;
            }
            if !first {
                f.write_str(" + ")?;
            }
            first = false;
            if e.is_one() {
                write!(f, "d/d{}", c.name)?;
            } else {
                write!(f, "({e})*d/d{}", c.name)?;
            }
        }
        if first {
            write!(f, "0*d/d{}", self.chart.coords.first().map(|c| c.name.as_str()).unwrap_or("x"))?;
        }
        Ok(())
    }
}

/// `V(F)` for a vector field and scalar field on a shared chart.
pub fn apply_field(v: &VectorField, f: &ScalarField) -> Result<ScalarExpr, GeometryError> {
    v.chart.same_as(&f.chart)?;
    Ok(v.apply(&f.value))
}

/// Lie bracket `[V, W]` with components `V(W^j) - W(V^j)`.
pub fn lie_bracket(v: &VectorField, w: &VectorField) -> Result<VectorField, GeometryError> {
    v.chart.same_as(&w.chart)?;
    let components = v
        .components
        .iter()
        .zip(&w.components)
        .map(|(vj, wj)| v.apply(wj).sub(&w.apply(vj)))
        .collect();
    Ok(VectorField {
        chart: v.chart.clone(),
        components,
    })
}

/// Hamiltonian field `X_H^i = Σ_j Π^{ij} ∂_j H` of a Poisson tensor.
pub fn hamiltonian_field(
    chart: &Arc<Chart>,
    poisson: &[Vec<ScalarExpr>],
    h: &ScalarExpr,
) -> Result<VectorField, GeometryError> {
    let names = chart.names();
    let grad: Vec<ScalarExpr> = names.iter().map(|c| h.diff(c)).collect();
    let comps = poisson
        .iter()
        .map(|row| {
            row.iter()
                .zip(&grad)
                .fold(ScalarExpr::zero(), |acc, (p, g)| acc.add(&p.mul(g)))
        })
        .collect();
    VectorField::new(chart, comps)
}

/// Stratonovich stochastic dynamical system: drift plus noise fields.
#[derive(Clone, Debug, PartialEq)]
pub struct Sds {
    pub chart: Arc<Chart>,
    pub drift: VectorField,
    pub noise: Vec<VectorField>,
}

impl Sds {
    pub fn new(drift: VectorField, noise: Vec<VectorField>) -> Result<Self, GeometryError> {
        for n in &noise {
            drift.chart.same_as(&n.chart)?;
        }
        Ok(Sds {
            chart: drift.chart.clone(),
            drift,
            noise,
        })
    }

    pub fn deterministic(drift: VectorField) -> Self {
        Sds {
            chart: drift.chart.clone(),
            drift,
            noise: Vec::new(),
        }
    }

    /// Drift followed by the noise fields.
    pub fn fields(&self) -> impl Iterator<Item = &VectorField> {
        std::iter::once(&self.drift).chain(self.noise.iter())
    }
}

/// Infinitesimal generators of a connected group action.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupAction {
    pub name: String,
    pub chart: Arc<Chart>,
    pub generators: Vec<VectorField>,
}

/// Bracket-closure residuals of an action's generators.
#[derive(Clone, Debug, Serialize)]
pub struct ClosureReport {
    /// Largest least-squares residual of a bracket against the generator span.
    pub max_residual: f64,
    pub closed: bool,
    pub worst_pair: Option<(usize, usize)>,
}

impl GroupAction {
    pub fn new(name: &str, generators: Vec<VectorField>) -> Result<Self, GeometryError> {
        let first = generators
            .first()
            .ok_or_else(|| GeometryError::EmptyAction(name.to_string()))?;
        for g in &generators {
            first.chart.same_as(&g.chart)?;
        }
        Ok(GroupAction {
            name: name.to_string(),
            chart: first.chart.clone(),
            generators,
        })
    }

    /// Samples brackets of generator pairs and measures their distance from
    /// the pointwise span of the generators.
    pub fn closure_report(&self, tester: &ZeroTester) -> Result<ClosureReport, GeometryError> {
        let boxed = self.chart.sample_box();
        let mut rng = ChaCha8Rng::seed_from_u64(tester.seed);
        let k = self.generators.len();
        let n = self.chart.dim();
        let mut brackets = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                brackets.push(((i, j), lie_bracket(&self.generators[i], &self.generators[j])?));
            }
        }
        let funcs = Bindings::new(tester.functions.clone());
        let mut max_residual: f64 = 0.0;
        let mut worst = None;
        let mut tries = 0;
        let mut accepted = 0;
        while accepted < tester.samples.min(16) && tries < 400 {
            tries += 1;
            let point = boxed.sample(&mut rng);
            let mut cols = Vec::with_capacity(k);
            let mut ok = true;
            for g in &self.generators {
                match g.eval_at(&point, &funcs) {
                    Ok(v) => cols.push(v),
                    Err(_) => ok = false,
                }
            }
            if !ok {
                continue;
            }
            let m = DMatrix::from_fn(n, k, |r, c| cols[c][r]);
            let svd = m.clone().svd(true, true);
            for ((i, j), b) in &brackets {
                let Ok(v) = b.eval_at(&point, &funcs) else { continue };
                let rhs = DVector::from_vec(v);
                let coef = svd.solve(&rhs, 1e-12).unwrap_or_else(|_| DVector::zeros(k));
                let res = (&m * coef - &rhs).norm() / (1.0 + rhs.norm());
                if res > max_residual {
                    max_residual = res;
                    worst = Some((*i, *j));
                }
            }
            accepted += 1;
        }
        Ok(ClosureReport {
            max_residual,
            closed: max_residual <= 1e-8,
            worst_pair: if max_residual > 1e-8 { worst } else { None },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane() -> Arc<Chart> {
        Chart::euclidean("R2", &["x", "y"])
    }

    fn x() -> ScalarExpr {
        ScalarExpr::coord("x")
    }

    fn y() -> ScalarExpr {
        ScalarExpr::coord("y")
    }

    fn rotation(c: &Arc<Chart>) -> VectorField {
        VectorField::from_pairs(c, &[("y", x()), ("x", y().neg())]).unwrap()
    }

    #[test]
    fn apply_field_examples() {
        let c = plane();
        let r2 = ScalarField::new(&c, x() * x() + y() * y()).unwrap();
        assert!(apply_field(&rotation(&c), &r2).unwrap().is_zero());
        let dx = VectorField::basis(&c, "x").unwrap();
        assert_eq!(apply_field(&dx, &r2).unwrap(), ScalarExpr::int(2) * x());

        let line = Chart::new("R+", vec![Coordinate::positive("r")]).unwrap();
        let r = ScalarExpr::coord("r");
        let v = VectorField::new(
            &line,
            vec![(ScalarExpr::int(2) * r.clone()).recip().unwrap() - r.clone()],
        )
        .unwrap();
        let f = ScalarField::new(&line, ScalarExpr::ratio(1, 2) * r.clone() * r.clone()).unwrap();
        let got = apply_field(&v, &f).unwrap();
        assert_eq!(got, ScalarExpr::ratio(1, 2) - r.clone() * r);
        assert_eq!(got.eval(&Bindings::from_pairs(&[("r", 1.0)])).unwrap(), -0.5);
    }

    #[test]
    fn bracket_examples() {
        let c = plane();
        let dx = VectorField::basis(&c, "x").unwrap();
        let dy = VectorField::basis(&c, "y").unwrap();
        assert!(lie_bracket(&dx, &dy).unwrap().is_zero());
        let x_dx = dx.scale(&x());
        assert_eq!(lie_bracket(&dx, &x_dx).unwrap(), dx);
        assert_eq!(lie_bracket(&rotation(&c), &dx).unwrap(), dy.scale(&ScalarExpr::int(-1)));
        assert_eq!(lie_bracket(&dx, &rotation(&c)).unwrap(), dy);
    }

    #[test]
    fn chart_mismatch_is_reported() {
        let a = plane();
        let b = Chart::euclidean("Q", &["x", "y"]);
        let e = lie_bracket(&VectorField::zero(&a), &VectorField::zero(&b));
        assert!(matches!(e, Err(GeometryError::ChartMismatch { .. })));
    }

    #[test]
    fn chart_validation() {
        assert!(matches!(
            Chart::new("C", vec![Coordinate::free("x"), Coordinate::free("x")]),
            Err(GeometryError::DuplicateCoordinate(_))
        ));
        assert!(matches!(
            Chart::new("C", vec![Coordinate::periodic("t", ScalarExpr::int(-1))]),
            Err(GeometryError::BadPeriod(_))
        ));
        let polar = Chart::new(
            "P",
            vec![
                Coordinate::positive("r"),
                Coordinate::periodic("theta", ScalarExpr::int(2) * ScalarExpr::pi()),
            ],
        )
        .unwrap();
        let b = polar.sample_box();
        assert_eq!(b.coords[0], ("r".to_string(), 0.1, 3.0));
        assert!((b.coords[1].2 - 2.0 * std::f64::consts::PI).abs() < 1e-15);
        let mut p = [1.0, 7.0];
        polar.wrap(&mut p);
        assert!((p[1] - (7.0 - 2.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert!(!polar.contains(&[-1.0, 0.0]));
    }

    #[test]
    fn rotation_generators_close() {
        let c = Chart::euclidean("R3", &["x", "y", "z"]);
        let z = ScalarExpr::coord("z");
        let gens = vec![
            VectorField::from_pairs(&c, &[("y", x()), ("x", y().neg())]).unwrap(),
            VectorField::from_pairs(&c, &[("z", y()), ("y", z.neg())]).unwrap(),
            VectorField::from_pairs(&c, &[("x", z), ("z", x().neg())]).unwrap(),
        ];
        let g = GroupAction::new("SO3", gens).unwrap();
        assert!(g.closure_report(&ZeroTester::default()).unwrap().closed);
        let bad = GroupAction::new(
            "bad",
            vec![
                VectorField::basis(&c, "x").unwrap(),
                VectorField::from_pairs(&c, &[("y", x()), ("z", ScalarExpr::one())]).unwrap(),
            ],
        )
        .unwrap();
        assert!(!bad.closure_report(&ZeroTester::default()).unwrap().closed);
    }
}
