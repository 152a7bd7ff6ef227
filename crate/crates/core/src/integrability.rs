//! Integrable systems of type (p, q, r): commuting diffusion operators,
//! vector fields and functions, their verification, point classification,
//! promotion to pure diffusion type, torus invariance and normal forms.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Bindings, ExprError, ScalarExpr, ZeroStatus, ZeroTester, ZeroVerdict};
use crate::geometry::{Chart, GeometryError, ScalarField, Sds, VectorField};
use crate::operator::{commutator, compose, diffusion_equivalent, generator, DiffOp, OperatorError};
use crate::symbol::{
    fibre_linear_rank, independence_rank, poisson_bracket, principal_symbol, span_at, CotangentPoly, RankReport,
    SymbolError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrabilityError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("type ({p},{q},{r}) does not add up to the chart dimension {dim}")]
    WrongCount { p: usize, q: usize, r: usize, dim: usize },
    #[error("a system with no operators and no fields cannot be promoted")]
    Trivial,
    #[error("operator {0} is not shaped like a diffusion generator")]
    NotDiffusionShaped(String),
    #[error("`{0}` is not a coordinate of the chart")]
    UnknownCoordinate(String),
    #[error("field is not of the form Σ a_i ∂_angle_i with angle-free coefficients: {0}")]
    NotAngleField(String),
    #[error("coefficients satisfy the integer relation {0:?}")]
    Commensurable(Vec<i64>),
    #[error("non-constant coefficients need an incommensurability attestation")]
    Unattested,
    #[error("integer-relation search supports at most 4 angles, got {0}")]
    TooManyAngles(usize),
    #[error("generator depends on the angle coordinates: {0}")]
    NotTorusInvariant(String),
    #[error("normal form is not diffusion equivalent to its input")]
    NotEquivalent,
}

/// `p` diffusion operators, `q` vector fields and `r` functions on one chart.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegrableSystem {
    pub name: String,
    pub chart: Arc<Chart>,
    pub operators: Vec<DiffOp>,
    pub fields: Vec<VectorField>,
    pub functions: Vec<ScalarField>,
}

impl IntegrableSystem {
    pub fn new(
        name: &str,
        chart: &Arc<Chart>,
        operators: Vec<DiffOp>,
        fields: Vec<VectorField>,
        functions: Vec<ScalarField>,
    ) -> Result<Self, IntegrabilityError> {
        let (p, q, r) = (operators.len(), fields.len(), functions.len());
        if p + q + r != chart.dim() {
            return Err(IntegrabilityError::WrongCount { p, q, r, dim: chart.dim() });
        }
        for (i, op) in operators.iter().enumerate() {
            chart.same_as(&op.chart)?;
            if op.order() > 2 || !op.zeroth_order().is_zero() {
                return Err(IntegrabilityError::NotDiffusionShaped(format!("L{}", i + 1)));
            }
        }
        for v in &fields {
            chart.same_as(&v.chart)?;
        }
        for f in &functions {
            chart.same_as(&f.chart)?;
        }
        Ok(IntegrableSystem {
            name: name.to_string(),
            chart: chart.clone(),
            operators,
            fields,
            functions,
        })
    }

    pub fn kind(&self) -> (usize, usize, usize) {
        (self.operators.len(), self.fields.len(), self.functions.len())
    }

    /// Every member as a labelled operator: `L1.. Z1.. F1..`.
    pub fn members(&self) -> Vec<(String, DiffOp)> {
        let mut out = Vec::new();
        for (i, op) in self.operators.iter().enumerate() {
            out.push((format!("L{}", i + 1), op.clone()));
        }
        for (i, v) in self.fields.iter().enumerate() {
            out.push((format!("Z{}", i + 1), DiffOp::from_field(v)));
        }
        for (i, f) in self.functions.iter().enumerate() {
            out.push((format!("F{}", i + 1), DiffOp::multiplication(&self.chart, &f.value)));
        }
        out
    }

    pub fn symbols(&self) -> Vec<CotangentPoly> {
        self.members().iter().map(|(_, op)| principal_symbol(op)).collect()
    }

    fn all_exprs(&self) -> Vec<ScalarExpr> {
        let mut out: Vec<ScalarExpr> = self
            .operators
            .iter()
            .flat_map(|op| op.coefficients().map(|(_, c)| c.clone()).collect::<Vec<_>>())
            .collect();
        out.extend(self.fields.iter().flat_map(|v| v.components.clone()));
        out.extend(self.functions.iter().map(|f| f.value.clone()));
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairVerdict {
    pub first: String,
    pub second: String,
    pub verdict: ZeroVerdict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PointClass {
    Regular,
    SemiRegular,
    Singular,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassifiedPoint {
    pub point: Vec<f64>,
    pub class: PointClass,
}

#[derive(Clone, Debug, Serialize)]
pub struct IntegrabilityReport {
    pub kind: (usize, usize, usize),
    pub commutators: Vec<PairVerdict>,
    pub poisson: Vec<PairVerdict>,
    pub rank: RankReport,
    /// Linear rank of the symbols on the fibre over the rank witness.
    pub fibre_rank: Option<usize>,
    pub points: Vec<ClassifiedPoint>,
    pub pass: bool,
}

fn pairwise<T>(
    items: &[(String, T)],
    f: impl Fn(&T, &T) -> Result<ZeroVerdict, IntegrabilityError>,
) -> Result<Vec<PairVerdict>, IntegrabilityError> {
    let mut out = Vec::new();
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            out.push(PairVerdict {
                first: items[i].0.clone(),
                second: items[j].0.clone(),
                verdict: f(&items[i].1, &items[j].1)?,
            });
        }
    }
    Ok(out)
}

/// Pairwise commutation, symbol independence and sampled point classes.
pub fn verify_system(
    sys: &IntegrableSystem,
    samples: usize,
    tester: &ZeroTester,
) -> Result<IntegrabilityReport, IntegrabilityError> {
    let members = sys.members();
    let commutators = pairwise(&members, |a, b| Ok(commutator(a, b)?.zero_verdict(tester)?))?;
    let symbols: Vec<(String, CotangentPoly)> = members
        .iter()
        .map(|(l, op)| (l.clone(), principal_symbol(op)))
        .collect();
    let poisson = pairwise(&symbols, |a, b| Ok(poisson_bracket(a, b)?.zero_verdict(tester)?))?;
    let plain: Vec<CotangentPoly> = symbols.iter().map(|(_, s)| s.clone()).collect();
    let rank = independence_rank(&plain, samples, tester)?;
    let funcs = tester.bindings_for(&sys.all_exprs());
    let fibre_rank = match &rank.witness {
        Some((x, _)) => fibre_linear_rank(&plain, x, &funcs).ok(),
        None => None,
    };
    let boxed = sys.chart.sample_box();
    let mut rng = ChaCha8Rng::seed_from_u64(tester.seed);
    let mut points = Vec::new();
    for _ in 0..samples.min(8) {
        let x = boxed.sample(&mut rng);
        if let Ok(class) = classify_with(sys, &x, &funcs) {
            points.push(ClassifiedPoint { point: x, class });
        }
    }
    let pass = commutators.iter().all(|c| c.verdict.holds()) && rank.full();
    Ok(IntegrabilityReport {
        kind: sys.kind(),
        commutators,
        poisson,
        rank,
        fibre_rank,
        points,
        pass,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SdsIntegrabilityReport {
    pub system: IntegrabilityReport,
    /// `[A_X, member]` for every member.
    pub generator: Vec<PairVerdict>,
    pub pass: bool,
}

/// The system must be integrable and every member must commute with `A_X`.
pub fn verify_sds_integrable(
    x: &Sds,
    sys: &IntegrableSystem,
    samples: usize,
    tester: &ZeroTester,
) -> Result<SdsIntegrabilityReport, IntegrabilityError> {
    x.chart.same_as(&sys.chart)?;
    let system = verify_system(sys, samples, tester)?;
    let a = generator(x);
    let mut gen = Vec::new();
    for (label, op) in sys.members() {
        gen.push(PairVerdict {
            first: "A".into(),
            second: label,
            verdict: commutator(&a, &op)?.zero_verdict(tester)?,
        });
    }
    let pass = system.pass && gen.iter().all(|v| v.verdict.holds());
    Ok(SdsIntegrabilityReport {
        system,
        generator: gen,
        pass,
    })
}

/// Type (p+q+r, 0, 0) system: `½Z_i²` for each field, then `F_i² L_1`, or
/// `½(F_i Z_1)²` when there are no operators.
pub fn promote_to_p00(sys: &IntegrableSystem) -> Result<IntegrableSystem, IntegrabilityError> {
    let (p, q, _) = sys.kind();
    if p == 0 && q == 0 {
        return Err(IntegrabilityError::Trivial);
    }
    let half = ScalarExpr::ratio(1, 2);
    let square = |v: &VectorField| -> Result<DiffOp, IntegrabilityError> {
        let f = DiffOp::from_field(v);
        Ok(compose(&f, &f)?.scale(&half))
    };
    let mut ops = sys.operators.clone();
    for v in &sys.fields {
        ops.push(square(v)?);
    }
    for f in &sys.functions {
        if p >= 1 {
            ops.push(sys.operators[0].scale(&f.value.mul(&f.value)));
        } else {
            ops.push(square(&sys.fields[0].scale(&f.value))?);
        }
    }
    IntegrableSystem::new(&sys.name, &sys.chart, ops, Vec::new(), Vec::new())
}

/// Promotion followed by verification of the result.
pub fn promote_and_verify(
    sys: &IntegrableSystem,
    samples: usize,
    tester: &ZeroTester,
) -> Result<(IntegrableSystem, IntegrabilityReport), IntegrabilityError> {
    let out = promote_to_p00(sys)?;
    let report = verify_system(&out, samples, tester)?;
    Ok((out, report))
}

fn rank_of(rows: &[Vec<f64>], n: usize) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let m = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    let sv = m.singular_values();
    let top = sv.max();
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > 1e-8 * top).count()
}

fn classify_with(sys: &IntegrableSystem, x: &[f64], funcs: &Bindings) -> Result<PointClass, IntegrabilityError> {
    let n = sys.chart.dim();
    let names = sys.chart.names();
    let mut b = funcs.clone();
    for (c, v) in names.iter().zip(x) {
        b.set(c, *v);
    }
    let grads: Vec<Vec<f64>> = sys
        .functions
        .iter()
        .map(|f| names.iter().map(|c| f.value.diff(c).eval(&b)).collect())
        .collect::<Result<_, _>>()?;
    let r = grads.len();
    if rank_of(&grads, n) < r {
        return Ok(PointClass::Singular);
    }
    let fields: Vec<Vec<f64>> = sys
        .fields
        .iter()
        .map(|v| v.eval_at(x, funcs))
        .collect::<Result<_, _>>()?;
    let mut spanning = fields.clone();
    for op in &sys.operators {
        spanning.extend(span_at(op, x, funcs)?.basis);
    }
    let grad_scale = grads
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for v in &spanning {
        let len = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for g in &grads {
            let pairing: f64 = g.iter().zip(v).map(|(a, b)| a * b).sum();
            if pairing.abs() > 1e-8 * (1.0 + len * grad_scale) {
                return Ok(PointClass::Singular);
            }
        }
    }
    if rank_of(&spanning, n) < n - r {
        return Ok(PointClass::Singular);
    }
    if rank_of(&fields, n) < fields.len() {
        return Ok(PointClass::SemiRegular);
    }
    Ok(PointClass::Regular)
}

/// Regular, semi-regular or singular, by ranks of the differentials of the
/// functions, of the fields, and of the operator spans.
pub fn classify_point(sys: &IntegrableSystem, x: &[f64], tester: &ZeroTester) -> Result<PointClass, IntegrabilityError> {
    classify_with(sys, x, &tester.bindings_for(&sys.all_exprs()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Incommensurability {
    /// No integer relation with entries bounded by 20 exists.
    Checked,
    /// Supplied by the caller for non-constant coefficients.
    Attested,
}

#[derive(Clone, Debug, Serialize)]
pub struct TorusReport {
    pub incommensurability: Incommensurability,
    /// `Z∘Λ − Λ∘Z`.
    pub lie_derivative: ZeroVerdict,
    /// Whether the invariance hypothesis held, so the conclusion was tested.
    pub applicable: bool,
    /// Coefficients of `Λ` that depend on an angle despite the hypothesis.
    pub violations: Vec<PairVerdict>,
    pub pass: bool,
}

fn integer_relation(values: &[f64], bound: i64, tol: f64) -> Option<Vec<i64>> {
    let p = values.len();
    let mut k = vec![-bound; p];
    loop {
        if k.iter().any(|v| *v != 0) {
            let s: f64 = k.iter().zip(values).map(|(a, b)| *a as f64 * b).sum();
            if s.abs() <= tol {
                return Some(k);
            }
        }
        let mut i = 0;
        loop {
            if i == p {
                return None;
            }
            k[i] += 1;
            if k[i] > bound {
                k[i] = -bound;
                i += 1;
            } else {
                break;
            }
        }
    }
}

/// Invariance of `Λ` under the torus when it commutes with a field winding
/// along the angle coordinates.
pub fn torus_invariance_check(
    lambda: &DiffOp,
    z: &VectorField,
    angles: &[&str],
    attested: bool,
    tester: &ZeroTester,
) -> Result<TorusReport, IntegrabilityError> {
    lambda.chart.same_as(&z.chart)?;
    let chart = &lambda.chart;
    let idx: Vec<usize> = angles
        .iter()
        .map(|a| chart.index_of(a).ok_or_else(|| IntegrabilityError::UnknownCoordinate(a.to_string())))
        .collect::<Result<_, _>>()?;
    for (k, c) in z.components.iter().enumerate() {
        if !idx.contains(&k) && !c.is_zero() {
            return Err(IntegrabilityError::NotAngleField(format!("component along {}", chart.names()[k])));
        }
        if angles.iter().any(|a| c.depends_on(a)) {
            return Err(IntegrabilityError::NotAngleField(format!("{c} depends on an angle")));
        }
    }
    let coeffs: Vec<&ScalarExpr> = idx.iter().map(|k| &z.components[*k]).collect();
    let constants: Option<Vec<f64>> = coeffs
        .iter()
        .map(|c| {
            if c.free_coords().is_empty() && c.uninterpreted_functions().is_empty() {
                c.eval(&Bindings::default()).ok()
            } else {
                None
            }
        })
        .collect();
    let incommensurability = match constants {
        Some(values) => {
            if values.len() > 4 {
                return Err(IntegrabilityError::TooManyAngles(values.len()));
            }
            if let Some(k) = integer_relation(&values, 20, 1e-9) {
                return Err(IntegrabilityError::Commensurable(k));
            }
            Incommensurability::Checked
        }
        None if attested => Incommensurability::Attested,
        None => return Err(IntegrabilityError::Unattested),
    };
    let lie_derivative = commutator(&DiffOp::from_field(z), lambda)?.zero_verdict(tester)?;
    if !lie_derivative.holds() {
        return Ok(TorusReport {
            incommensurability,
            lie_derivative,
            applicable: false,
            violations: Vec::new(),
            pass: false,
        });
    }
    let boxed = chart.sample_box();
    let mut violations = Vec::new();
    for (alpha, c) in lambda.coefficients() {
        for a in angles {
            let v = tester.is_zero(&c.diff(a), &boxed)?;
            if v.status == ZeroStatus::NonZero {
                violations.push(PairVerdict {
                    first: crate::operator::index_label(chart, alpha),
                    second: a.to_string(),
                    verdict: v,
                });
            }
        }
    }
    let pass = violations.is_empty();
    Ok(TorusReport {
        incommensurability,
        lie_derivative,
        applicable: true,
        violations,
        pass,
    })
}

/// Noise fields frozen at an angle section, drift `A_X − ½ΣY_i²`.
pub fn normal_form(
    x: &Sds,
    section: &[(&str, ScalarExpr)],
    tester: &ZeroTester,
) -> Result<Sds, IntegrabilityError> {
    let chart = &x.chart;
    for (a, _) in section {
        if chart.index_of(a).is_none() {
            return Err(IntegrabilityError::UnknownCoordinate(a.to_string()));
        }
    }
    let a = generator(x);
    let boxed = chart.sample_box();
    for (alpha, c) in a.coefficients() {
        for (angle, _) in section {
            let v = tester.is_zero(&c.diff(angle), &boxed)?;
            if !v.holds() {
                return Err(IntegrabilityError::NotTorusInvariant(format!(
                    "coefficient of {} varies with {angle}",
                    crate::operator::index_label(chart, alpha)
                )));
            }
        }
    }
    let freeze = |e: &ScalarExpr| {
        e.substitute(&|c: &str| section.iter().find(|(n, _)| *n == c).map(|(_, v)| v.clone()))
    };
    let noise: Vec<VectorField> = x.noise.iter().map(|v| v.map_components(freeze)).collect();
    let mut rest = a.clone();
    let half = ScalarExpr::ratio(1, 2);
    for y in &noise {
        let f = DiffOp::from_field(y);
        rest = rest.sub(&compose(&f, &f)?.scale(&half))?;
    }
    let y = Sds::new(rest.first_order(), noise)?;
    if !diffusion_equivalent(x, &y, tester)?.holds() {
        return Err(IntegrabilityError::NotEquivalent);
    }
    Ok(y)
}
