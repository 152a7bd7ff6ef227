//! Principal symbols on the cotangent bundle and what can be read off them.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Bindings, ExprError, ScalarExpr, ZeroTester, ZeroVerdict};
use crate::geometry::{Chart, GeometryError, VectorField};
use crate::operator::{DiffOp, MultiIndex};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymbolError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("operator has order {0}, at most 2 is supported here")]
    OrderTooHigh(u32),
    #[error("expected {expected} entries, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("weights must be positive")]
    NonPositiveWeight,
    #[error("second-order coefficient matrix is singular")]
    Singular,
    #[error("second-order coefficient matrix is not positive definite at {0:?}")]
    Indefinite(Vec<f64>),
    #[error("operator has a zeroth-order term")]
    ZerothOrder,
}

/// Polynomial in the momenta with coefficients on the base chart.
#[derive(Clone, Debug, PartialEq)]
pub struct CotangentPoly {
    pub chart: Arc<Chart>,
    terms: BTreeMap<MultiIndex, ScalarExpr>,
}

fn momentum_name(c: &str) -> String {
    format!("p_{c}")
}

impl CotangentPoly {
    pub fn zero(chart: &Arc<Chart>) -> Self {
        CotangentPoly {
            chart: chart.clone(),
            terms: BTreeMap::new(),
        }
    }

    pub fn from_terms(chart: &Arc<Chart>, terms: impl IntoIterator<Item = (MultiIndex, ScalarExpr)>) -> Self {
        let mut p = CotangentPoly::zero(chart);
        for (a, c) in terms {
            p.add_term(a, &c);
        }
        p
    }

    /// A base function, constant along the fibres.
    pub fn base(chart: &Arc<Chart>, f: &ScalarExpr) -> Self {
        CotangentPoly::from_terms(chart, [(vec![0; chart.dim()], f.clone())])
    }

    /// The momentum conjugate to the named coordinate.
    pub fn momentum(chart: &Arc<Chart>, name: &str) -> Option<Self> {
        let mut a = vec![0; chart.dim()];
        a[chart.index_of(name)?] = 1;
        Some(CotangentPoly::from_terms(chart, [(a, ScalarExpr::one())]))
    }

    /// Fibrewise-linear function `Σ V^j p_j` of a vector field.
    pub fn of_field(v: &VectorField) -> Self {
        let n = v.chart.dim();
        CotangentPoly::from_terms(
            &v.chart,
            v.components.iter().enumerate().map(|(j, c)| {
                let mut a = vec![0; n];
                a[j] = 1;
                (a, c.clone())
            }),
        )
    }

    fn add_term(&mut self, a: MultiIndex, c: &ScalarExpr) {
        if c.is_zero() {
            return;
        }
        let slot = self.terms.entry(a.clone()).or_insert_with(ScalarExpr::zero);
        *slot = slot.add(c);
        if slot.is_zero() {
            self.terms.remove(&a);
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &ScalarExpr)> {
        self.terms.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Highest momentum degree present.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|a| a.iter().sum()).max().unwrap_or(0)
    }

    pub fn add(&self, other: &CotangentPoly) -> Result<CotangentPoly, SymbolError> {
        self.chart.same_as(&other.chart)?;
        let mut out = self.clone();
        for (a, c) in &other.terms {
            out.add_term(a.clone(), c);
        }
        Ok(out)
    }

    pub fn mul(&self, other: &CotangentPoly) -> Result<CotangentPoly, SymbolError> {
        self.chart.same_as(&other.chart)?;
        let mut out = CotangentPoly::zero(&self.chart);
        for (a, c) in &self.terms {
            for (b, d) in &other.terms {
                let idx = a.iter().zip(b).map(|(x, y)| x + y).collect();
                out.add_term(idx, &c.mul(d));
            }
        }
        Ok(out)
    }

    pub fn scale(&self, f: &ScalarExpr) -> CotangentPoly {
        let mut out = CotangentPoly::zero(&self.chart);
        for (a, c) in &self.terms {
            out.add_term(a.clone(), &c.mul(f));
        }
        out
    }

    /// `∂/∂x_j` of the polynomial.
    pub fn diff_base(&self, j: usize) -> CotangentPoly {
        let name = &self.chart.coords[j].name;
        let mut out = CotangentPoly::zero(&self.chart);
        for (a, c) in &self.terms {
            out.add_term(a.clone(), &c.diff(name));
        }
        out
    }

    /// `∂/∂p_j` of the polynomial.
    pub fn diff_momentum(&self, j: usize) -> CotangentPoly {
        let mut out = CotangentPoly::zero(&self.chart);
        for (a, c) in &self.terms {
            if a[j] == 0 {
                continue;
            }
            let mut b = a.clone();
            b[j] -= 1;
            out.add_term(b, &c.mul(&ScalarExpr::int(a[j] as i64)));
        }
        out
    }

    /// Value at a cotangent point.
    pub fn eval(&self, x: &[f64], p: &[f64], funcs: &Bindings) -> Result<f64, ExprError> {
        let mut b = funcs.clone();
        for (c, v) in self.chart.coords.iter().zip(x) {
            b.set(&c.name, *v);
        }
        let mut acc = 0.0;
        for (a, c) in &self.terms {
            let mono: f64 = a.iter().zip(p).map(|(k, v)| v.powi(*k as i32)).product();
            acc += c.eval(&b)? * mono;
        }
        Ok(acc)
    }

    /// Coefficient-wise zero test.
    pub fn zero_verdict(&self, tester: &ZeroTester) -> Result<ZeroVerdict, ExprError> {
        let boxed = self.chart.sample_box();
        tester.all_zero(
            self.terms.iter().map(|(a, c)| (self.monomial_label(a), c)),
            &boxed,
        )
    }

    fn monomial_label(&self, a: &[u32]) -> String {
        let parts: Vec<String> = self
            .chart
            .coords
            .iter()
            .zip(a)
            .filter(|(_, k)| **k > 0)
            .map(|(c, k)| {
                if *k == 1 {
                    momentum_name(&c.name)
                } else {
                    format!("{}^{k}", momentum_name(&c.name))
                }
            })
            .collect();
        if parts.is_empty() {
            "1".into()
        } else {
            parts.join("*")
        }
    }
}

impl fmt::Display for CotangentPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        for (i, (a, c)) in self.terms.iter().rev().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            let label = self.monomial_label(a);
            if label == "1" {
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

/// Top-order coefficients as a momentum polynomial.
pub fn principal_symbol(a: &DiffOp) -> CotangentPoly {
    let top = a.order();
    CotangentPoly::from_terms(
        &a.chart,
        a.coefficients()
            .filter(|(alpha, _)| alpha.iter().sum::<u32>() == top)
            .map(|(alpha, c)| (alpha.clone(), c.clone())),
    )
}

/// Canonical bracket `Σ_j ∂P/∂p_j ∂Q/∂x_j − ∂P/∂x_j ∂Q/∂p_j`.
pub fn poisson_bracket(p: &CotangentPoly, q: &CotangentPoly) -> Result<CotangentPoly, SymbolError> {
    p.chart.same_as(&q.chart)?;
    let mut out = CotangentPoly::zero(&p.chart);
    for j in 0..p.chart.dim() {
        let a = p.diff_momentum(j).mul(&q.diff_base(j))?;
        let b = p.diff_base(j).mul(&q.diff_momentum(j))?;
        out = out.add(&a)?.add(&b.scale(&ScalarExpr::int(-1)))?;
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct RankReport {
    pub expected: usize,
    pub max_rank: usize,
    /// Cotangent point `(x, p)` where the maximum was attained.
    pub witness: Option<(Vec<f64>, Vec<f64>)>,
    pub singular_values: Vec<f64>,
    pub samples: usize,
}

impl RankReport {
    pub fn full(&self) -> bool {
        self.max_rank == self.expected
    }
}

fn numeric_rank(m: &DMatrix<f64>) -> (usize, Vec<f64>) {
    if m.nrows() == 0 || m.ncols() == 0 {
        return (0, Vec::new());
    }
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let rank = sv.iter().filter(|s| **s > 1e-8 * smax && **s > 0.0).count();
    let mut v: Vec<f64> = sv.iter().cloned().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    (rank, v)
}

/// Numeric Jacobian rank of the symbols with respect to `(x, p)` at random
/// cotangent points.
pub fn independence_rank(
    symbols: &[CotangentPoly],
    samples: usize,
    tester: &ZeroTester,
) -> Result<RankReport, SymbolError> {
    let expected = symbols.len();
    let Some(first) = symbols.first() else {
        return Ok(RankReport {
            expected,
            max_rank: 0,
            witness: None,
            singular_values: Vec::new(),
            samples: 0,
        });
    };
    let chart = first.chart.clone();
    for s in symbols {
        chart.same_as(&s.chart)?;
    }
    let n = chart.dim();
    let grads: Vec<Vec<CotangentPoly>> = symbols
        .iter()
        .map(|s| {
            (0..n)
                .map(|j| s.diff_base(j))
                .chain((0..n).map(|j| s.diff_momentum(j)))
                .collect()
        })
        .collect();
    let boxed = chart.sample_box();
    let funcs = tester.bindings_for(symbols.iter().flat_map(|s| s.terms().map(|(_, c)| c)));
    let mut rng = ChaCha8Rng::seed_from_u64(tester.seed);
    let mut best = RankReport {
        expected,
        max_rank: 0,
        witness: None,
        singular_values: Vec::new(),
        samples: 0,
    };
    let mut attempts = 0;
    while best.samples < samples.max(1) && attempts < 20 * samples.max(1) {
        attempts += 1;
        let x = boxed.sample(&mut rng);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut jac = DMatrix::zeros(expected, 2 * n);
        let mut ok = true;
        'fill: for (i, row) in grads.iter().enumerate() {
            for (k, g) in row.iter().enumerate() {
                match g.eval(&x, &p, &funcs) {
                    Ok(v) => jac[(i, k)] = v,
                    Err(_) => {
                        ok = false;
                        break 'fill;
                    }
                }
            }
        }
        if !ok {
            continue;
        }
        best.samples += 1;
        let (rank, sv) = numeric_rank(&jac);
        if rank > best.max_rank || best.witness.is_none() {
            best.max_rank = rank;
            best.witness = Some((x, p));
            best.singular_values = sv;
        }
        if best.max_rank == expected {
            break;
        }
    }
    Ok(best)
}

/// Rank of the symbols restricted to the fibre over `x`, viewed as vectors of
/// momentum-monomial coefficients.
pub fn fibre_linear_rank(symbols: &[CotangentPoly], x: &[f64], funcs: &Bindings) -> Result<usize, SymbolError> {
    let Some(first) = symbols.first() else { return Ok(0) };
    let mut monos: Vec<MultiIndex> = Vec::new();
    for s in symbols {
        first.chart.same_as(&s.chart)?;
        for (a, _) in s.terms() {
            if !monos.contains(a) {
                monos.push(a.clone());
            }
        }
    }
    let b = {
        let mut b = funcs.clone();
        for (c, v) in first.chart.coords.iter().zip(x) {
            b.set(&c.name, *v);
        }
        b
    };
    let mut m = DMatrix::zeros(symbols.len(), monos.len());
    for (i, s) in symbols.iter().enumerate() {
        for (a, c) in s.terms() {
            let k = monos.iter().position(|m| m == a).expect("collected above");
            m[(i, k)] = c.eval(&b)?;
        }
    }
    Ok(numeric_rank(&m).0)
}

fn matrix_at(a: &[Vec<ScalarExpr>], chart: &Chart, x: &[f64], funcs: &Bindings) -> Result<DMatrix<f64>, SymbolError> {
    let n = chart.dim();
    if x.len() != n {
        return Err(SymbolError::DimensionMismatch { expected: n, found: x.len() });
    }
    let mut b = funcs.clone();
    for (c, v) in chart.coords.iter().zip(x) {
        b.set(&c.name, *v);
    }
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            m[(j, k)] = a[j][k].eval(&b)?;
        }
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Span {
    pub dim: usize,
    pub basis: Vec<Vec<f64>>,
}

/// Range of the second-order coefficient matrix at a point.
pub fn span_at(a: &DiffOp, x: &[f64], funcs: &Bindings) -> Result<Span, SymbolError> {
    if a.order() > 2 {
        return Err(SymbolError::OrderTooHigh(a.order()));
    }
    let m = matrix_at(&a.second_order_matrix(), &a.chart, x, funcs)?;
    let eig = SymmetricEigen::new(m);
    let lmax = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut basis = Vec::new();
    for (i, l) in eig.eigenvalues.iter().enumerate() {
        if lmax > 0.0 && l.abs() > 1e-8 * lmax {
            basis.push(eig.eigenvectors.column(i).iter().cloned().collect());
        }
    }
    Ok(Span { dim: basis.len(), basis })
}

/// Cholesky factorisation that fails on any pivot at or below `tol`.
pub fn cholesky_with_tolerance(m: &DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Positive definiteness of `Σ w_i a_i(x)`.
pub fn ellipticity_check(ops: &[DiffOp], weights: &[f64], x: &[f64], funcs: &Bindings) -> Result<bool, SymbolError> {
    if ops.len() != weights.len() {
        return Err(SymbolError::DimensionMismatch {
            expected: ops.len(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(SymbolError::NonPositiveWeight);
    }
    let Some(first) = ops.first() else { return Ok(false) };
    let n = first.chart.dim();
    let mut total = DMatrix::zeros(n, n);
    for (op, w) in ops.iter().zip(weights) {
        first.chart.same_as(&op.chart)?;
        if op.order() > 2 {
            return Err(SymbolError::OrderTooHigh(op.order()));
        }
        total += matrix_at(&op.second_order_matrix(), &op.chart, x, funcs)? * *w;
    }
    Ok(cholesky_with_tolerance(&total, 1e-12).is_some())
}

/// Symbolic determinant by cofactor expansion.
pub fn determinant(m: &[Vec<ScalarExpr>]) -> ScalarExpr {
    let n = m.len();
    match n {
        0 => ScalarExpr::one(),
        1 => m[0][0].clone(),
        _ => {
            let mut acc = ScalarExpr::zero();
            for col in 0..n {
                if m[0][col].is_zero() {
                    continue;
                }
                let minor: Vec<Vec<ScalarExpr>> = m[1..]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|(k, _)| *k != col)
                            .map(|(_, v)| v.clone())
                            .collect()
                    })
                    .collect();
                let term = m[0][col].mul(&determinant(&minor));
                acc = if col % 2 == 0 { acc.add(&term) } else { acc.sub(&term) };
            }
            acc
        }
    }
}

/// Symbolic inverse through the adjugate.
pub fn inverse(m: &[Vec<ScalarExpr>]) -> Option<Vec<Vec<ScalarExpr>>> {
    let n = m.len();
    let det = determinant(m);
    let inv_det = det.recip()?;
    let mut out = vec![vec![ScalarExpr::zero(); n]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            let minor: Vec<Vec<ScalarExpr>> = m
                .iter()
                .enumerate()
                .filter(|(r, _)| *r != j)
                .map(|(_, row)| {
                    row.iter()
                        .enumerate()
                        .filter(|(c, _)| *c != i)
                        .map(|(_, v)| v.clone())
                        .collect()
                })
                .collect();
            let c = determinant(&minor).mul(&inv_det);
            *slot = if (i + j) % 2 == 0 { c } else { c.neg() };
        }
    }
    Some(out)
}

/// Laplace–Beltrami operator of the metric with inverse `g^{jk}`.
pub fn laplace_beltrami(chart: &Arc<Chart>, g_inv: &[Vec<ScalarExpr>]) -> Option<DiffOp> {
    let n = chart.dim();
    let names = chart.names();
    let d = determinant(g_inv);
    let inv_d = d.recip()?;
    let mut b = vec![ScalarExpr::zero(); n];
    for (k, bk) in b.iter_mut().enumerate() {
        for (j, name) in names.iter().enumerate() {
            let t = g_inv[j][k]
                .diff(name)
                .sub(&g_inv[j][k].mul(&d.diff(name)).mul(&inv_d).mul(&ScalarExpr::ratio(1, 2)));
            *bk = bk.add(&t);
        }
    }
    Some(DiffOp::second_order(chart, g_inv, &b))
}

/// Riemannian data read off an elliptic operator `A = ½Δ_g + V`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricData {
    /// `g^{jk} = 2 a^{jk}`.
    pub inverse_metric: Vec<Vec<ScalarExpr>>,
    pub metric: Vec<Vec<ScalarExpr>>,
    pub drift: VectorField,
}

pub fn metric_from_elliptic(a: &DiffOp, tester: &ZeroTester) -> Result<MetricData, SymbolError> {
    if a.order() > 2 {
        return Err(SymbolError::OrderTooHigh(a.order()));
    }
    if !a.zeroth_order().is_zero() {
        return Err(SymbolError::ZerothOrder);
    }
    let chart = a.chart.clone();
    let two = ScalarExpr::int(2);
    let g_inv: Vec<Vec<ScalarExpr>> = a
        .second_order_matrix()
        .iter()
        .map(|row| row.iter().map(|v| v.mul(&two)).collect())
        .collect();
    let boxed = chart.sample_box();
    let funcs = tester.bindings_for(g_inv.iter().flatten());
    let mut rng = ChaCha8Rng::seed_from_u64(tester.seed);
    for _ in 0..tester.samples.min(16) {
        let x = boxed.sample(&mut rng);
        let Ok(m) = matrix_at(&g_inv, &chart, &x, &funcs) else { continue };
        if cholesky_with_tolerance(&m, 1e-12).is_none() {
            return Err(SymbolError::Indefinite(x));
        }
    }
    let metric = inverse(&g_inv).ok_or(SymbolError::Singular)?;
    let lb = laplace_beltrami(&chart, &g_inv).ok_or(SymbolError::Singular)?;
    let rest = a
        .sub(&lb.scale(&ScalarExpr::ratio(1, 2)))
        .map_err(|e| match e {
            crate::operator::OperatorError::Geometry(g) => SymbolError::Geometry(g),
            crate::operator::OperatorError::Expr(x) => SymbolError::Expr(x),
            _ => SymbolError::Singular,
        })?;
    Ok(MetricData {
        inverse_metric: g_inv,
        metric,
        drift: rest.first_order(),
    })
}
