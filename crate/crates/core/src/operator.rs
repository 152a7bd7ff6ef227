//! Linear differential operators with symbolic coefficients.
//!
//! A [`DiffOp`] stores one coefficient per multi-index over the chart
//! coordinates, so compositions and commutators of any order stay exact.
//! Generators of Stratonovich systems are built here, with each noise field
//! squared as an operator.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Bindings, ExprError, ScalarExpr, ZeroTester, ZeroVerdict};
use crate::geometry::{Chart, GeometryError, ScalarField, Sds, VectorField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("integrals and values differ in length ({0} vs {1})")]
    LevelSetArity(usize, usize),
    #[error("no point on the level set was found after {0} attempts")]
    LevelSetNotFound(usize),
    #[error("sample count must be at least 1")]
    NoSamples,
}

pub type MultiIndex = Vec<u32>;

#[derive(Clone, Debug, PartialEq)]
pub struct DiffOp {
    pub chart: Arc<Chart>,
    coeffs: BTreeMap<MultiIndex, ScalarExpr>,
}

fn binomial(n: u32, k: u32) -> i64 {
    let mut r: i64 = 1;
    for i in 0..k {
        r = r * (n - i) as i64 / (i + 1) as i64;
    }
    r
}

/// Enumerates all multi-indices `g <= a` componentwise.
fn sub_indices(a: &[u32]) -> Vec<MultiIndex> {
    let mut out = vec![Vec::with_capacity(a.len())];
    for &ai in a {
        let mut next = Vec::with_capacity(out.len() * (ai as usize + 1));
        for prefix in &out {
            for g in 0..=ai {
                let mut p = prefix.clone();
                p.push(g);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

fn derivative(e: &ScalarExpr, chart: &Chart, alpha: &[u32]) -> ScalarExpr {
    let mut d = e.clone();
    for (c, &k) in chart.coords.iter().zip(alpha) {
        for _ in 0..k {
            if d.is_zero() {
                return d;
            }
            d = d.diff(&c.name);
        }
    }
    d
}

pub fn index_label(chart: &Chart, alpha: &[u32]) -> String {
    let parts: Vec<String> = chart
        .coords
        .iter()
        .zip(alpha)
        .filter(|(_, k)| **k > 0)
        .map(|(c, k)| {
            if *k == 1 {
                format!("d/d{}", c.name)
            } else {
                format!("d/d{}^{k}", c.name)
            }
        })
        .collect();
    if parts.is_empty() {
        "Id".into()
    } else {
        parts.join("*")
    }
}

impl DiffOp {
    pub fn zero(chart: &Arc<Chart>) -> Self {
        DiffOp {
            chart: chart.clone(),
            coeffs: BTreeMap::new(),
        }
    }

    pub fn from_terms(
        chart: &Arc<Chart>,
        terms: impl IntoIterator<Item = (MultiIndex, ScalarExpr)>,
    ) -> Result<Self, GeometryError> {
        let mut op = DiffOp::zero(chart);
        for (alpha, c) in terms {
            if alpha.len() != chart.dim() {
                return Err(GeometryError::WrongArity {
                    expected: chart.dim(),
                    found: alpha.len(),
                });
            }
            chart.check_expr(&c)?;
            op.add_term(alpha, &c);
        }
        Ok(op)
    }

    fn add_term(&mut self, alpha: MultiIndex, c: &ScalarExpr) {
        if c.is_zero() {
            return;
        }
        let slot = self.coeffs.entry(alpha).or_insert_with(ScalarExpr::zero);
        *slot = slot.add(c);
        self.coeffs.retain(|_, v| !v.is_zero());
    }

    /// Multiplication by a function.
    pub fn multiplication(chart: &Arc<Chart>, f: &ScalarExpr) -> Self {
        let mut op = DiffOp::zero(chart);
        op.add_term(vec![0; chart.dim()], f);
        op
    }

    pub fn identity(chart: &Arc<Chart>) -> Self {
        DiffOp::multiplication(chart, &ScalarExpr::one())
    }

    /// A vector field as a first-order operator.
    pub fn from_field(v: &VectorField) -> Self {
        let n = v.chart.dim();
        let mut op = DiffOp::zero(&v.chart);
        for (j, c) in v.components.iter().enumerate() {
            let mut alpha = vec![0; n];
            alpha[j] = 1;
            op.add_term(alpha, c);
        }
        op
    }

    /// `Σ a^{jk} ∂_j ∂_k + Σ b^j ∂_j` from a symmetric matrix and a vector.
    pub fn second_order(
        chart: &Arc<Chart>,
        a: &[Vec<ScalarExpr>],
        b: &[ScalarExpr],
    ) -> Self {
        let n = chart.dim();
        let mut op = DiffOp::zero(chart);
        for j in 0..n {
            for k in 0..n {
                let mut alpha = vec![0; n];
                alpha[j] += 1;
                alpha[k] += 1;
                op.add_term(alpha, &a[j][k]);
            }
            let mut alpha = vec![0; n];
            alpha[j] = 1;
            op.add_term(alpha, &b[j]);
        }
        op
    }

    pub fn coefficients(&self) -> impl Iterator<Item = (&MultiIndex, &ScalarExpr)> {
        self.coeffs.iter()
    }

    pub fn coefficient(&self, alpha: &[u32]) -> ScalarExpr {
        self.coeffs.get(alpha).cloned().unwrap_or_else(ScalarExpr::zero)
    }

    /// Coefficient of the product of the named partial derivatives.
    pub fn coefficient_of(&self, names: &[&str]) -> Option<ScalarExpr> {
        let mut alpha = vec![0; self.chart.dim()];
        for n in names {
            alpha[self.chart.index_of(n)?] += 1;
        }
        Some(self.coefficient(&alpha))
    }

    pub fn order(&self) -> u32 {
        self.coeffs.keys().map(|a| a.iter().sum()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn zeroth_order(&self) -> ScalarExpr {
        self.coefficient(&vec![0; self.chart.dim()])
    }

    /// First-order coefficients as a vector field.
    pub fn first_order(&self) -> VectorField {
        let n = self.chart.dim();
        VectorField {
            chart: self.chart.clone(),
            components: (0..n)
                .map(|j| {
                    let mut alpha = vec![0; n];
                    alpha[j] = 1;
                    self.coefficient(&alpha)
                })
                .collect(),
        }
    }

    /// Symmetric matrix `a` with `Σ a^{jk} ∂_j ∂_k` equal to the second-order part.
    pub fn second_order_matrix(&self) -> Vec<Vec<ScalarExpr>> {
        let n = self.chart.dim();
        let half = ScalarExpr::ratio(1, 2);
        let mut a = vec![vec![ScalarExpr::zero(); n]; n];
        for j in 0..n {
            for k in j..n {
                let mut alpha = vec![0; n];
                alpha[j] += 1;
                alpha[k] += 1;
                let c = self.coefficient(&alpha);
                if j == k {
                    a[j][j] = c;
                } else {
                    let h = c.mul(&half);
                    a[j][k] = h.clone();
                    a[k][j] = h;
                }
            }
        }
        a
    }

    /// Terms of exactly the given order.
    pub fn homogeneous_part(&self, order: u32) -> DiffOp {
        DiffOp {
            chart: self.chart.clone(),
            coeffs: self
                .coeffs
                .iter()
                .filter(|(a, _)| a.iter().sum::<u32>() == order)
                .map(|(a, c)| (a.clone(), c.clone()))
                .collect(),
        }
    }

    pub fn apply(&self, f: &ScalarExpr) -> ScalarExpr {
        let mut acc = ScalarExpr::zero();
        for (alpha, c) in &self.coeffs {
            let d = derivative(f, &self.chart, alpha);
            if !d.is_zero() {
                acc = acc.add(&c.mul(&d));
            }
        }
        acc
    }

    pub fn apply_field(&self, f: &ScalarField) -> Result<ScalarExpr, OperatorError> {
        self.chart.same_as(&f.chart)?;
        Ok(self.apply(&f.value))
    }

    pub fn add(&self, other: &DiffOp) -> Result<DiffOp, OperatorError> {
        self.chart.same_as(&other.chart)?;
        let mut out = self.clone();
        for (a, c) in &other.coeffs {
            out.add_term(a.clone(), c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &DiffOp) -> Result<DiffOp, OperatorError> {
        self.add(&other.scale(&ScalarExpr::int(-1)))
    }

    /// Left multiplication by a function.
    pub fn scale(&self, f: &ScalarExpr) -> DiffOp {
        let mut out = DiffOp::zero(&self.chart);
        for (a, c) in &self.coeffs {
            out.add_term(a.clone(), &c.mul(f));
        }
        out
    }

    pub fn map_coefficients(&self, f: impl Fn(&ScalarExpr) -> ScalarExpr) -> DiffOp {
        let mut out = DiffOp::zero(&self.chart);
        for (a, c) in &self.coeffs {
            out.add_term(a.clone(), &f(c));
        }
        out
    }

    /// Coefficient-wise zero test, each coefficient labelled by its monomial.
    pub fn zero_verdict(&self, tester: &ZeroTester) -> Result<ZeroVerdict, ExprError> {
        let boxed = self.chart.sample_box();
        tester.all_zero(
            self.coeffs.iter().map(|(a, c)| (index_label(&self.chart, a), c)),
            &boxed,
        )
    }

    /// Numeric value of `Σ c_α ∂^α f` from precomputed derivative values.
    pub fn eval_weighted(
        &self,
        f: &ScalarExpr,
        point: &[f64],
        funcs: &Bindings,
    ) -> Result<f64, ExprError> {
        let mut b = funcs.clone();
        for (c, v) in self.chart.coords.iter().zip(point) {
            b.set(&c.name, *v);
        }
        let mut acc = 0.0;
        for (alpha, c) in &self.coeffs {
            acc += c.eval(&b)? * derivative(f, &self.chart, alpha).eval(&b)?;
        }
        Ok(acc)
    }
}

impl fmt::Display for DiffOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            return f.write_str("0");
        }
        for (i, (alpha, c)) in self.coeffs.iter().rev().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            let label = index_label(&self.chart, alpha);
            if label == "Id" {
                write!(f, "({c})")?;
            } else if c.is_one() {
                f.write_str(&label)?;
            } else {
                write!(f, "({c})*{label}")?;
            }
        }
        Ok(())
    }
}

/// Operator product `A ∘ B` by the Leibniz expansion.
pub fn compose(a: &DiffOp, b: &DiffOp) -> Result<DiffOp, OperatorError> {
    a.chart.same_as(&b.chart)?;
    let mut out = DiffOp::zero(&a.chart);
    for (alpha, ca) in &a.coeffs {
        for gamma in sub_indices(alpha) {
            let weight: i64 = alpha.iter().zip(&gamma).map(|(a, g)| binomial(*a, *g)).product();
            let rest: Vec<u32> = alpha.iter().zip(&gamma).map(|(a, g)| a - g).collect();
            for (beta, cb) in &b.coeffs {
                let d = derivative(cb, &a.chart, &gamma);
                if d.is_zero() {
                    continue;
                }
                let idx: MultiIndex = rest.iter().zip(beta).map(|(r, b)| r + b).collect();
                out.add_term(idx, &ca.mul(&d).mul(&ScalarExpr::int(weight)));
            }
        }
    }
    Ok(out)
}

/// `A ∘ B − B ∘ A`.
pub fn commutator(a: &DiffOp, b: &DiffOp) -> Result<DiffOp, OperatorError> {
    compose(a, b)?.sub(&compose(b, a)?)
}

/// Generator `X_0 + ½ Σ X_i ∘ X_i` of a Stratonovich system.
pub fn generator(x: &Sds) -> DiffOp {
    let mut op = DiffOp::from_field(&x.drift);
    let half = ScalarExpr::ratio(1, 2);
    for v in &x.noise {
        let f = DiffOp::from_field(v);
        let sq = compose(&f, &f).expect("fields of one system share a chart");
        op = op.add(&sq.scale(&half)).expect("same chart");
    }
    op
}

pub fn diffusion_equivalent(x: &Sds, y: &Sds, tester: &ZeroTester) -> Result<ZeroVerdict, OperatorError> {
    x.chart.same_as(&y.chart)?;
    Ok(generator(x).sub(&generator(y))?.zero_verdict(tester)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum IntegralMode {
    ByFields,
    ByCommutator,
}

/// Strong first integral: every field annihilates `F` (by fields), or `F`
/// commutes with the generator as a multiplication operator (by commutator).
pub fn strong_first_integral(
    x: &Sds,
    f: &ScalarField,
    mode: IntegralMode,
    tester: &ZeroTester,
) -> Result<ZeroVerdict, OperatorError> {
    x.chart.same_as(&f.chart)?;
    let boxed = x.chart.sample_box();
    match mode {
        IntegralMode::ByFields => {
            let values: Vec<(String, ScalarExpr)> = x
                .fields()
                .enumerate()
                .map(|(i, v)| (format!("X{i}(F)"), v.apply(&f.value)))
                .collect();
            Ok(tester.all_zero(values.iter().map(|(l, e)| (l.clone(), e)), &boxed)?)
        }
        IntegralMode::ByCommutator => {
            let m = DiffOp::multiplication(&x.chart, &f.value);
            Ok(commutator(&generator(x), &m)?.zero_verdict(tester)?)
        }
    }
}

/// Weak first integral: the generator annihilates `F`.
pub fn weak_first_integral(x: &Sds, f: &ScalarField, tester: &ZeroTester) -> Result<ZeroVerdict, OperatorError> {
    x.chart.same_as(&f.chart)?;
    let a = generator(x).apply(&f.value);
    Ok(tester.is_zero(&a, &x.chart.sample_box())?.with_label("A(F)"))
}

#[derive(Clone, Debug, Serialize)]
pub struct TangencyWitness {
    pub point: Vec<f64>,
    /// Index into drift-then-noise order.
    pub field: usize,
    pub integral: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelSetReport {
    pub pass: bool,
    pub points_checked: usize,
    pub max_pairing: f64,
    pub witness: Option<TangencyWitness>,
}

/// Newton projection onto `{F_j = c_j}`; `None` if it fails to converge.
pub(crate) fn project_to_level(
    chart: &Chart,
    values: &[ScalarExpr],
    grads: &[Vec<ScalarExpr>],
    targets: &[f64],
    start: &[f64],
    funcs: &Bindings,
    tol: f64,
) -> Option<Vec<f64>> {
    let n = chart.dim();
    let m = values.len();
    let mut x = start.to_vec();
    for _ in 0..100 {
        let b = {
            let mut b = funcs.clone();
            for (c, v) in chart.coords.iter().zip(&x) {
                b.set(&c.name, *v);
            }
            b
        };
        let mut res = DVector::zeros(m);
        for j in 0..m {
            res[j] = values[j].eval(&b).ok()? - targets[j];
        }
        if res.amax() <= tol {
            return chart.contains(&x).then_some(x);
        }
        let mut jac = DMatrix::zeros(m, n);
        for j in 0..m {
            for k in 0..n {
                jac[(j, k)] = grads[j][k].eval(&b).ok()?;
            }
        }
        let step = jac.svd(true, true).solve(&res, 1e-14).ok()?;
        for k in 0..n {
            x[k] -= step[k];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    None
}

/// Checks that every field of `x` is tangent to the level set of the
/// integrals at sampled points of that level set.
pub fn invariant_level_set(
    x: &Sds,
    integrals: &[ScalarField],
    values: &[f64],
    samples: usize,
    tester: &ZeroTester,
) -> Result<LevelSetReport, OperatorError> {
    if samples == 0 {
        return Err(OperatorError::NoSamples);
    }
    if integrals.len() != values.len() {
        return Err(OperatorError::LevelSetArity(integrals.len(), values.len()));
    }
    for f in integrals {
        x.chart.same_as(&f.chart)?;
    }
    let chart = &x.chart;
    let names = chart.names();
    let exprs: Vec<ScalarExpr> = integrals.iter().map(|f| f.value.clone()).collect();
    let grads: Vec<Vec<ScalarExpr>> = exprs
        .iter()
        .map(|e| names.iter().map(|c| e.diff(c)).collect())
        .collect();
    let funcs = Bindings::new(tester.functions.clone());
    let boxed = chart.sample_box();
    let mut rng = ChaCha8Rng::seed_from_u64(tester.seed);
    let budget = 50 * samples;
    let mut checked = 0;
    let mut max_pairing: f64 = 0.0;
    let mut attempts = 0;
    while checked < samples {
        if attempts >= budget {
            if checked == 0 {
                return Err(OperatorError::LevelSetNotFound(attempts));
            }
            break;
        }
        attempts += 1;
        let seed_point = boxed.sample(&mut rng);
        let Some(p) = project_to_level(chart, &exprs, &grads, values, &seed_point, &funcs, 1e-12) else {
            continue;
        };
        let mut b = funcs.clone();
        for (c, v) in names.iter().zip(&p) {
            b.set(c, *v);
        }
        let mut ok = true;
        let mut fields_at = Vec::new();
        for v in x.fields() {
            match v.eval_at(&p, &funcs) {
                Ok(vals) => fields_at.push(vals),
                Err(_) => ok = false,
            }
        }
        let mut grads_at = Vec::new();
        for g in &grads {
            let vals: Result<Vec<f64>, _> = g.iter().map(|e| e.eval(&b)).collect();
            match vals {
                Ok(v) => grads_at.push(v),
                Err(_) => ok = false,
            }
        }
        if !ok {
            continue;
        }
        checked += 1;
        for (i, fv) in fields_at.iter().enumerate() {
            for (j, gv) in grads_at.iter().enumerate() {
                let pairing: f64 = fv.iter().zip(gv).map(|(a, b)| a * b).sum();
                max_pairing = max_pairing.max(pairing.abs());
                if pairing.abs() > 1e-8 {
                    return Ok(LevelSetReport {
                        pass: false,
                        points_checked: checked,
                        max_pairing,
                        witness: Some(TangencyWitness {
                            point: p,
                            field: i,
                            integral: j,
                            value: pairing,
                        }),
                    });
                }
            }
        }
    }
    Ok(LevelSetReport {
        pass: true,
        points_checked: checked,
        max_pairing,
        witness: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::ZeroStatus;
    use crate::geometry::hamiltonian_field;

    fn plane() -> Arc<Chart> {
        Chart::euclidean("R2", &["x", "y"])
    }

    fn x() -> ScalarExpr {
        ScalarExpr::coord("x")
    }

    fn y() -> ScalarExpr {
        ScalarExpr::coord("y")
    }

    fn d(c: &Arc<Chart>, n: &str) -> VectorField {
        VectorField::basis(c, n).unwrap()
    }

    fn brownian(c: &Arc<Chart>) -> Sds {
        Sds::new(VectorField::zero(c), vec![d(c, "x"), d(c, "y")]).unwrap()
    }

    fn rotation(c: &Arc<Chart>) -> VectorField {
        VectorField::from_pairs(c, &[("y", x()), ("x", y().neg())]).unwrap()
    }

    fn half_laplacian(c: &Arc<Chart>) -> DiffOp {
        DiffOp::from_terms(
            c,
            [(vec![2, 0], ScalarExpr::ratio(1, 2)), (vec![0, 2], ScalarExpr::ratio(1, 2))],
        )
        .unwrap()
    }

    #[test]
    fn generator_examples() {
        let line = Chart::euclidean("R", &["x"]);
        let g = generator(&Sds::new(VectorField::zero(&line), vec![d(&line, "x")]).unwrap());
        assert_eq!(g, DiffOp::from_terms(&line, [(vec![2], ScalarExpr::ratio(1, 2))]).unwrap());

        let c = plane();
        assert_eq!(generator(&brownian(&c)), half_laplacian(&c));

        // Damped oscillator in Cartesian form.
        let r = (x() * x() + y() * y()).sqrt();
        let f = ScalarExpr::func("f", 0, &r);
        let damping = VectorField::from_pairs(&c, &[("x", (x() * f.clone()).neg()), ("y", (y() * f.clone()).neg())]).unwrap();
        let drift = rotation(&c).add(&damping).unwrap();
        let sds = Sds::new(drift.clone(), vec![d(&c, "x"), d(&c, "y")]).unwrap();
        let expected = DiffOp::from_field(&drift).add(&half_laplacian(&c)).unwrap();
        assert_eq!(generator(&sds), expected);
    }

    #[test]
    fn noise_squares_carry_first_order_terms() {
        let c = plane();
        let sds = Sds::new(VectorField::zero(&c), vec![d(&c, "x").scale(&x())]).unwrap();
        let g = generator(&sds);
        assert_eq!(g.coefficient(&[2, 0]), ScalarExpr::ratio(1, 2) * x() * x());
        assert_eq!(g.coefficient(&[1, 0]), ScalarExpr::ratio(1, 2) * x());
        assert!(g.zeroth_order().is_zero());
    }

    #[test]
    fn compose_examples() {
        let line = Chart::euclidean("R", &["x"]);
        let dx = DiffOp::from_field(&d(&line, "x"));
        assert_eq!(compose(&dx, &dx).unwrap(), DiffOp::from_terms(&line, [(vec![2], ScalarExpr::one())]).unwrap());

        let xid = DiffOp::multiplication(&line, &x());
        let expected = DiffOp::from_terms(&line, [(vec![1], x()), (vec![0], ScalarExpr::one())]).unwrap();
        assert_eq!(compose(&dx, &xid).unwrap(), expected);

        // (x d/dx)^2 x^k = k^2 x^k, so the square is x^2 d^2 + x d.
        let euler = DiffOp::from_field(&d(&line, "x").scale(&x()));
        let sq = compose(&euler, &euler).unwrap();
        assert_eq!(sq, DiffOp::from_terms(&line, [(vec![2], x() * x()), (vec![1], x())]).unwrap());
        for k in 0..6 {
            let xk = x().powi(k).unwrap();
            assert_eq!(sq.apply(&xk), xk.mul(&ScalarExpr::int((k * k) as i64)));
        }
    }

    #[test]
    fn commutator_examples() {
        let c = plane();
        let a = half_laplacian(&c);
        assert!(commutator(&a, &a).unwrap().is_zero());

        let line = Chart::euclidean("R", &["x"]);
        let half_d2 = DiffOp::from_terms(&line, [(vec![2], ScalarExpr::ratio(1, 2))]).unwrap();
        let xid = DiffOp::multiplication(&line, &x());
        assert_eq!(commutator(&half_d2, &xid).unwrap(), DiffOp::from_field(&d(&line, "x")));

        let rot = DiffOp::from_field(&rotation(&c));
        assert!(commutator(&a, &rot).unwrap().is_zero());
    }

    #[test]
    fn applying_matches_weighted_sum_numerically() {
        let c = plane();
        let op = DiffOp::from_terms(
            &c,
            [
                (vec![2, 1], x() * y()),
                (vec![1, 0], y().sin()),
                (vec![0, 0], ScalarExpr::int(3)),
            ],
        )
        .unwrap();
        let f = (x() * y()).exp() + x().powi(3).unwrap();
        let sym = op.apply(&f);
        for p in [[0.3, -0.7], [1.1, 0.4]] {
            let b = Bindings::from_pairs(&[("x", p[0]), ("y", p[1])]);
            let lhs = sym.eval(&b).unwrap();
            let rhs = op.eval_weighted(&f, &p, &Bindings::default()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn equivalence_examples() {
        let c = plane();
        let t = ScalarExpr::ratio(3, 10);
        let (cs, sn) = (t.cos(), t.sin());
        let rotated = Sds::new(
            VectorField::zero(&c),
            vec![
                VectorField::from_pairs(&c, &[("x", cs.clone()), ("y", sn.clone())]).unwrap(),
                VectorField::from_pairs(&c, &[("x", sn.neg()), ("y", cs)]).unwrap(),
            ],
        )
        .unwrap();
        let tester = ZeroTester::default();
        let bm = brownian(&c);
        assert!(diffusion_equivalent(&bm, &rotated, &tester).unwrap().is_symbolic());
        assert!(diffusion_equivalent(&bm, &bm, &tester).unwrap().is_symbolic());
        let drifted = Sds::new(d(&c, "x"), bm.noise.clone()).unwrap();
        let v = diffusion_equivalent(&bm, &drifted, &tester).unwrap();
        assert_eq!(v.status, ZeroStatus::NonZero);
        assert_eq!(v.witness.unwrap().label.as_deref(), Some("d/dx"));
    }

    #[test]
    fn first_integral_examples() {
        let c = plane();
        let tester = ZeroTester::default();
        let r2 = ScalarField::new(&c, x() * x() + y() * y()).unwrap();
        let ex22 = Sds::new(rotation(&c), vec![d(&c, "x"), d(&c, "y")]).unwrap();
        for mode in [IntegralMode::ByFields, IntegralMode::ByCommutator] {
            let v = strong_first_integral(&ex22, &r2, mode, &tester).unwrap();
            assert_eq!(v.status, ZeroStatus::NonZero);
            let det = Sds::deterministic(rotation(&c));
            assert!(strong_first_integral(&det, &r2, mode, &tester).unwrap().is_symbolic());
            let k = ScalarField::new(&c, ScalarExpr::int(7)).unwrap();
            assert!(strong_first_integral(&ex22, &k, mode, &tester).unwrap().is_symbolic());
        }
        let bm = brownian(&c);
        let fx = ScalarField::new(&c, x()).unwrap();
        assert!(weak_first_integral(&bm, &fx, &tester).unwrap().is_symbolic());
        assert_eq!(weak_first_integral(&bm, &r2, &tester).unwrap().status, ZeroStatus::NonZero);
        assert_eq!(generator(&bm).apply(&r2.value), ScalarExpr::int(2));
    }

    #[test]
    fn level_set_examples() {
        let c = plane();
        let tester = ZeroTester::default();
        let r2 = ScalarField::new(&c, x() * x() + y() * y()).unwrap();
        let det = Sds::deterministic(rotation(&c));
        let rep = invariant_level_set(&det, &[r2.clone()], &[1.0], 16, &tester).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.points_checked, 16);
        let rep = invariant_level_set(&brownian(&c), &[r2], &[1.0], 16, &tester).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.witness.unwrap().field, 1);
    }

    #[test]
    fn hamiltonian_noise_preserves_casimir_levels() {
        let c = Chart::euclidean("R3", &["x", "y", "z"]);
        let z = ScalarExpr::coord("z");
        let zero = ScalarExpr::zero();
        let poisson = vec![
            vec![zero.clone(), z.clone(), zero.clone()],
            vec![z.neg(), zero.clone(), zero.clone()],
            vec![zero.clone(), zero.clone(), zero],
        ];
        let h0 = x() * x() + y() * y() + z.clone() * z.clone();
        let h1 = x() * y() + z.sin();
        let sds = Sds::new(
            hamiltonian_field(&c, &poisson, &h0).unwrap(),
            vec![hamiltonian_field(&c, &poisson, &h1).unwrap()],
        )
        .unwrap();
        let tester = ZeroTester::default();
        let cas = ScalarField::new(&c, z).unwrap();
        assert!(strong_first_integral(&sds, &cas, IntegralMode::ByFields, &tester).unwrap().is_symbolic());
        assert!(invariant_level_set(&sds, &[cas], &[1.0], 8, &tester).unwrap().pass);
    }
}
