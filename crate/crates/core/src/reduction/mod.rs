//! Symmetry reduction: invariance checks, projection of generators through
//! quotient maps, realization of reduced operators as systems, and
//! projectability tests with fibre-pair witnesses.

pub mod builtins;
mod rewrite;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Atom, Bindings, ExprError, ScalarExpr, ZeroStatus, ZeroTester, ZeroVerdict};
use crate::geometry::{lie_bracket, Chart, GeometryError, GroupAction, Sds, VectorField};
use crate::operator::{commutator, compose, generator, DiffOp, MultiIndex, OperatorError};
use crate::symbol::inverse;

use rewrite::FiberSampler;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReductionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("map has {found} components, target chart has dimension {expected}")]
    MapArity { expected: usize, found: usize },
    #[error("not projectable: {0}")]
    NotProjectable(FiberWitness),
    #[error("could not sample two distinct points on a common fibre")]
    FiberSampling,
    #[error("operator of order {0} is not the generator of a system")]
    OrderTooHigh(u32),
    #[error("operator has a nonzero zeroth-order term")]
    ZerothOrder,
    #[error("diffusion matrix is not positive semidefinite at {0:?}")]
    Indefinite(Vec<(String, f64)>),
    #[error("no symbolic square root of the diffusion matrix was found")]
    NoSquareRoot,
    #[error("deterministic projectability needs a system without noise")]
    NotDeterministic,
    #[error("system is not diffusion invariant under generator {0}")]
    NotInvariant(usize),
    #[error("diffusion couples orbit and transverse directions")]
    MixedDiffusion,
    #[error("dimension must be at least 1")]
    BadDimension,
}

/// A smooth map between charts, given by its components over the source.
#[derive(Clone, Debug, PartialEq)]
pub struct QuotientMap {
    pub name: String,
    pub source: Arc<Chart>,
    pub target: Arc<Chart>,
    pub components: Vec<ScalarExpr>,
}

impl QuotientMap {
    pub fn new(
        name: &str,
        source: &Arc<Chart>,
        target: &Arc<Chart>,
        components: Vec<ScalarExpr>,
    ) -> Result<Self, ReductionError> {
        if components.len() != target.dim() {
            return Err(ReductionError::MapArity {
                expected: target.dim(),
                found: components.len(),
            });
        }
        for c in &components {
            source.check_expr(c)?;
        }
        Ok(QuotientMap {
            name: name.to_string(),
            source: source.clone(),
            target: target.clone(),
            components,
        })
    }

    pub fn identity(chart: &Arc<Chart>) -> Self {
        QuotientMap {
            name: "id".into(),
            source: chart.clone(),
            target: chart.clone(),
            components: chart.names().iter().map(|n| ScalarExpr::coord(n)).collect(),
        }
    }

    /// `f ∘ Φ` for `f` over the target chart.
    pub fn pullback(&self, f: &ScalarExpr) -> ScalarExpr {
        let names = self.target.names();
        f.substitute(&|c: &str| names.iter().position(|n| n == c).map(|j| self.components[j].clone()))
    }

    /// Smallest numerical rank of the Jacobian over sampled source points.
    pub fn submersion_rank(&self, tester: &ZeroTester) -> Result<usize, ReductionError> {
        let names = self.source.names();
        let grads: Vec<Vec<ScalarExpr>> = self
            .components
            .iter()
            .map(|c| names.iter().map(|n| c.diff(n)).collect())
            .collect();
        let funcs = tester.bindings_for(&self.components);
        let boxed = self.source.sample_box();
        let mut rng = ChaCha8Rng::seed_from_u64(tester.seed);
        let mut min_rank = usize::MAX;
        let mut seen = 0;
        for _ in 0..(4 * tester.samples + 4) {
            if seen == tester.samples {
                break;
            }
            let b = bind(&funcs, &names, &boxed.sample(&mut rng));
            let mut jac = DMatrix::zeros(grads.len(), names.len());
            let mut ok = true;
            for (j, row) in grads.iter().enumerate() {
                for (k, g) in row.iter().enumerate() {
                    match g.eval(&b) {
                        Ok(v) => jac[(j, k)] = v,
                        Err(_) => ok = false,
                    }
                }
            }
            if !ok {
                continue;
            }
            seen += 1;
            let sv = jac.singular_values();
            let top = sv.max();
            min_rank = min_rank.min(sv.iter().filter(|s| **s > 1e-8 * top.max(1e-300)).count());
        }
        if seen == 0 {
            return Err(ExprError::EmptyDomain.into());
        }
        Ok(min_rank)
    }
}

fn bind(funcs: &Bindings, names: &[String], x: &[f64]) -> Bindings {
    let mut b = funcs.clone();
    for (n, v) in names.iter().zip(x) {
        b.set(n, *v);
    }
    b
}

fn labelled(names: &[String], x: &[f64]) -> Vec<(String, f64)> {
    names.iter().cloned().zip(x.iter().copied()).collect()
}

/// Two source points on one fibre where a quantity differs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberWitness {
    pub quantity: String,
    pub first: Vec<(String, f64)>,
    pub second: Vec<(String, f64)>,
    pub values: [f64; 2],
}

impl fmt::Display for FiberWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |p: &[(String, f64)]| {
            p.iter()
                .map(|(n, v)| format!("{n}={v:.6}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        write!(
            f,
            "{} takes {:.6} at ({}) and {:.6} at ({})",
            self.quantity,
            self.values[0],
            show(&self.first),
            self.values[1],
            show(&self.second)
        )
    }
}

/// Outcome of checking that quantities are constant along fibres.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberReport {
    /// Every quantity was rewritten in target coordinates.
    pub symbolic: bool,
    pub pairs: usize,
    pub max_deviation: f64,
    pub witness: Option<FiberWitness>,
}

impl FiberReport {
    pub fn pass(&self) -> bool {
        self.witness.is_none()
    }
}

/// Symbolic rewriting first; on failure, comparison at sampled fibre pairs.
fn fiber_test(
    quantities: &[(String, ScalarExpr)],
    map: &QuotientMap,
    samples: usize,
    tester: &ZeroTester,
) -> Result<(FiberReport, Option<Vec<ScalarExpr>>), ReductionError> {
    let rewritten: Option<Vec<ScalarExpr>> = quantities
        .iter()
        .map(|(_, q)| rewrite::rewrite_in_target(q, map))
        .collect();
    if let Some(r) = rewritten {
        let report = FiberReport {
            symbolic: true,
            pairs: 0,
            max_deviation: 0.0,
            witness: None,
        };
        return Ok((report, Some(r)));
    }
    if samples == 0 {
        return Err(OperatorError::NoSamples.into());
    }
    let funcs = tester.bindings_for(quantities.iter().map(|(_, q)| q).chain(&map.components));
    let sampler = FiberSampler::new(map, funcs.clone());
    let names = map.source.names();
    let mut rng = ChaCha8Rng::seed_from_u64(tester.seed);
    let mut budget = 200usize.max(8 * samples);
    let mut report = FiberReport {
        symbolic: false,
        pairs: 0,
        max_deviation: 0.0,
        witness: None,
    };
    let mut first = sampler.corner_pair();
    let mut misses = 0;
    while report.pairs < samples && budget > 0 && misses < 20 * samples + 20 {
        let pair = match first.take() {
            Some(p) => Some(p),
            None => sampler.random_pair(&mut rng, &mut budget),
        };
        let Some((x, y)) = pair else {
            misses += 1;
            continue;
        };
        let bx = bind(&funcs, &names, &x);
        let by = bind(&funcs, &names, &y);
        report.pairs += 1;
        for (label, q) in quantities {
            let (Ok(a), Ok(b)) = (q.eval(&bx), q.eval(&by)) else {
                continue;
            };
            let dev = (a - b).abs();
            report.max_deviation = report.max_deviation.max(dev);
            if dev > 1e-6 * (1.0 + a.abs() + b.abs()) {
                report.witness = Some(FiberWitness {
                    quantity: label.clone(),
                    first: labelled(&names, &x),
                    second: labelled(&names, &y),
                    values: [a, b],
                });
                return Ok((report, None));
            }
        }
    }
    if report.pairs == 0 {
        return Err(ReductionError::FiberSampling);
    }
    Ok((report, None))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InvarianceEntry {
    pub generator: usize,
    /// Index in drift-then-noise order.
    pub field: usize,
    pub verdict: ZeroVerdict,
}

/// Brackets of every group generator with every field of the system.
pub fn strict_invariance(
    x: &Sds,
    g: &GroupAction,
    tester: &ZeroTester,
) -> Result<Vec<InvarianceEntry>, ReductionError> {
    x.chart.same_as(&g.chart)?;
    let mut out = Vec::new();
    for (gi, v) in g.generators.iter().enumerate() {
        for (fi, field) in x.fields().enumerate() {
            let verdict = lie_bracket(v, field)?.zero_verdict(tester)?;
            out.push(InvarianceEntry {
                generator: gi,
                field: fi,
                verdict,
            });
        }
    }
    Ok(out)
}

/// Commutator of each group generator with the generator of the system.
pub fn diffusion_invariance(x: &Sds, g: &GroupAction, tester: &ZeroTester) -> Result<Vec<ZeroVerdict>, ReductionError> {
    x.chart.same_as(&g.chart)?;
    let a = generator(x);
    g.generators
        .iter()
        .map(|v| Ok(commutator(&DiffOp::from_field(v), &a)?.zero_verdict(tester)?))
        .collect()
}

/// A generator pushed through a map.
#[derive(Clone, Debug)]
pub struct Projection {
    /// The operator on the target chart; `None` when the coefficients were
    /// found constant on fibres numerically but not rewritten symbolically.
    pub reduced: Option<DiffOp>,
    pub fiber: FiberReport,
}

fn unit_index(n: usize, j: usize, k: Option<usize>) -> MultiIndex {
    let mut alpha = vec![0; n];
    alpha[j] += 1;
    if let Some(k) = k {
        alpha[k] += 1;
    }
    alpha
}

/// Coefficients of the projected operator, over the source chart, in the
/// order zeroth, first (per target coordinate), then second (`j ≤ k`).
fn projected_coefficients(a: &DiffOp, map: &QuotientMap) -> Vec<(String, MultiIndex, ScalarExpr)> {
    let m = map.target.dim();
    let t = map.target.names();
    let phi = &map.components;
    let c = a.zeroth_order();
    let image: Vec<ScalarExpr> = phi.iter().map(|p| a.apply(p)).collect();
    let mut out = Vec::new();
    if !c.is_zero() {
        out.push(("c".to_string(), vec![0; m], c.clone()));
    }
    for j in 0..m {
        let b = image[j].sub(&c.mul(&phi[j]));
        out.push((format!("b^{}", t[j]), unit_index(m, j, None), b));
    }
    for j in 0..m {
        for k in j..m {
            let pj_pk = phi[j].mul(&phi[k]);
            let gamma = a
                .apply(&pj_pk)
                .sub(&phi[j].mul(&image[k]))
                .sub(&phi[k].mul(&image[j]))
                .add(&c.mul(&pj_pk));
            let coef = if j == k {
                gamma.mul(&ScalarExpr::ratio(1, 2))
            } else {
                gamma
            };
            out.push((format!("a^{}{}", t[j], t[k]), unit_index(m, j, Some(k)), coef));
        }
    }
    out
}

/// Projects a generator through `map` via the carré du champ.
pub fn project_generator(
    a: &DiffOp,
    map: &QuotientMap,
    samples: usize,
    tester: &ZeroTester,
) -> Result<Projection, ReductionError> {
    a.chart.same_as(&map.source)?;
    if a.order() > 2 {
        return Err(ReductionError::OrderTooHigh(a.order()));
    }
    let coeffs = projected_coefficients(a, map);
    let quantities: Vec<(String, ScalarExpr)> = coeffs.iter().map(|(l, _, e)| (l.clone(), e.clone())).collect();
    let (fiber, rewritten) = fiber_test(&quantities, map, samples, tester)?;
    if let Some(w) = &fiber.witness {
        return Err(ReductionError::NotProjectable(w.clone()));
    }
    let reduced = match rewritten {
        Some(r) => Some(DiffOp::from_terms(
            &map.target,
            coeffs.iter().zip(r).map(|((_, alpha, _), e)| (alpha.clone(), e)),
        )?),
        None => None,
    };
    Ok(Projection { reduced, fiber })
}

/// `A(Φ*f) − Φ*(B f)` for target monomials `f` of degree at most 3.
pub fn morphism_check(
    a: &DiffOp,
    reduced: &DiffOp,
    map: &QuotientMap,
    tester: &ZeroTester,
) -> Result<ZeroVerdict, ReductionError> {
    let names = map.target.names();
    let mut monomials = vec![ScalarExpr::one()];
    let mut frontier = vec![(ScalarExpr::one(), 0usize)];
    for _ in 0..3 {
        let mut next = Vec::new();
        for (f, start) in &frontier {
            for (j, n) in names.iter().enumerate().skip(*start) {
                let g = f.mul(&ScalarExpr::coord(n));
                monomials.push(g.clone());
                next.push((g, j));
            }
        }
        frontier = next;
    }
    let boxed = map.source.sample_box();
    let residues: Vec<(String, ScalarExpr)> = monomials
        .iter()
        .map(|f| {
            let lhs = a.apply(&map.pullback(f));
            let rhs = map.pullback(&reduced.apply(f));
            (format!("f = {f}"), lhs.sub(&rhs))
        })
        .collect();
    Ok(tester.all_zero(residues.iter().map(|(l, e)| (l.clone(), e)), &boxed)?)
}

fn check_psd(m: &[Vec<ScalarExpr>], chart: &Chart, tester: &ZeroTester) -> Result<(), ReductionError> {
    let n = m.len();
    let funcs = tester.bindings_for(m.iter().flatten());
    let names = chart.names();
    let boxed = chart.sample_box();
    let mut rng = ChaCha8Rng::seed_from_u64(tester.seed);
    for _ in 0..tester.samples {
        let x = boxed.sample(&mut rng);
        let b = bind(&funcs, &names, &x);
        let mut mat = DMatrix::zeros(n, n);
        let mut ok = true;
        for j in 0..n {
            for k in 0..n {
                match m[j][k].eval(&b) {
                    Ok(v) => mat[(j, k)] = v,
                    Err(_) => ok = false,
                }
            }
        }
        if !ok {
            continue;
        }
        let scale = mat.amax();
        let lowest = mat.symmetric_eigenvalues().min();
        if lowest < -1e-9 * (1.0 + scale) {
            return Err(ReductionError::Indefinite(labelled(&names, &x)));
        }
    }
    Ok(())
}

/// Columns `L` with `L Lᵀ = m`, computed symbolically.
fn symbolic_cholesky(m: &[Vec<ScalarExpr>]) -> Result<Vec<Vec<ScalarExpr>>, ReductionError> {
    let n = m.len();
    let diagonal = (0..n).all(|j| (0..n).all(|k| j == k || m[j][k].is_zero()));
    if diagonal {
        return Ok((0..n)
            .filter(|j| !m[*j][*j].is_zero())
            .map(|j| {
                let mut col = vec![ScalarExpr::zero(); n];
                col[j] = m[j][j].sqrt_up_to_sign();
                col
            })
            .collect());
    }
    let mut l = vec![vec![ScalarExpr::zero(); n]; n];
    let mut cols = Vec::new();
    for j in 0..n {
        let mut pivot = m[j][j].clone();
        for k in 0..j {
            pivot = pivot.sub(&l[j][k].mul(&l[j][k]));
        }
        let below: Vec<ScalarExpr> = (j + 1..n)
            .map(|i| {
                let mut v = m[i][j].clone();
                for k in 0..j {
                    v = v.sub(&l[i][k].mul(&l[j][k]));
                }
                v
            })
            .collect();
        if pivot.is_zero() {
            if below.iter().all(|v| v.is_zero()) {
                continue;
            }
            return Err(ReductionError::NoSquareRoot);
        }
        let root = pivot.sqrt_up_to_sign();
        let inv = root.recip().ok_or(ReductionError::NoSquareRoot)?;
        l[j][j] = root;
        for (off, v) in below.into_iter().enumerate() {
            l[j + 1 + off][j] = v.mul(&inv);
        }
        cols.push(j);
    }
    Ok(cols.into_iter().map(|j| (0..n).map(|i| l[i][j].clone()).collect()).collect())
}

/// An SDS whose generator is `a`: noise from a square root of the
/// second-order part, drift absorbing the Stratonovich correction.
pub fn realize_sds(a: &DiffOp, tester: &ZeroTester) -> Result<Sds, ReductionError> {
    if a.order() > 2 {
        return Err(ReductionError::OrderTooHigh(a.order()));
    }
    let chart = &a.chart;
    let c = a.zeroth_order();
    if !c.is_zero() && !tester.is_zero(&c, &chart.sample_box())?.holds() {
        return Err(ReductionError::ZerothOrder);
    }
    let two = ScalarExpr::int(2);
    let doubled: Vec<Vec<ScalarExpr>> = a
        .second_order_matrix()
        .iter()
        .map(|row| row.iter().map(|v| v.mul(&two)).collect())
        .collect();
    check_psd(&doubled, chart, tester)?;
    let noise: Vec<VectorField> = symbolic_cholesky(&doubled)?
        .into_iter()
        .map(|col| VectorField::new(chart, col))
        .collect::<Result<_, _>>()?;
    let mut correction = DiffOp::zero(chart);
    for y in &noise {
        let f = DiffOp::from_field(y);
        correction = correction.add(&compose(&f, &f)?)?;
    }
    let rest = a.sub(&correction.scale(&ScalarExpr::ratio(1, 2)))?;
    let drift = rest.first_order();
    let sds = Sds::new(drift, noise)?;
    if !generator(&sds).sub(a)?.zero_verdict(tester)?.holds() {
        return Err(ReductionError::NoSquareRoot);
    }
    Ok(sds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProjectabilityMode {
    Strict,
    Diffusion,
    Deterministic,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectabilityReport {
    pub mode: ProjectabilityMode,
    pub pass: bool,
    pub fiber: FiberReport,
}

/// Whether the fields (strict, deterministic) or the generator (diffusion)
/// descend through `map`.
pub fn projectability_check(
    x: &Sds,
    map: &QuotientMap,
    mode: ProjectabilityMode,
    samples: usize,
    tester: &ZeroTester,
) -> Result<ProjectabilityReport, ReductionError> {
    x.chart.same_as(&map.source)?;
    let targets = map.target.names();
    let pushforward = |fields: Vec<(usize, &VectorField)>| -> Vec<(String, ScalarExpr)> {
        let mut q = Vec::new();
        for (i, v) in fields {
            for (j, phi) in map.components.iter().enumerate() {
                q.push((format!("X{i}({})", targets[j]), v.apply(phi)));
            }
        }
        q
    };
    let quantities = match mode {
        ProjectabilityMode::Strict => pushforward(x.fields().enumerate().collect()),
        ProjectabilityMode::Deterministic => {
            if !x.noise.is_empty() {
                return Err(ReductionError::NotDeterministic);
            }
            pushforward(vec![(0, &x.drift)])
        }
        ProjectabilityMode::Diffusion => projected_coefficients(&generator(x), map)
            .into_iter()
            .map(|(l, _, e)| (l, e))
            .collect(),
    };
    let (fiber, _) = fiber_test(&quantities, map, samples, tester)?;
    Ok(ProjectabilityReport {
        mode,
        pass: fiber.pass(),
        fiber,
    })
}

/// Splits a system on a chart adapted to the group (orbit coordinates plus
/// transverse coordinates) into a transverse part and an orbit part.
pub fn radial_angular_decompose(
    x: &Sds,
    g: &GroupAction,
    tester: &ZeroTester,
) -> Result<(Sds, Sds), ReductionError> {
    for (i, v) in diffusion_invariance(x, g, tester)?.iter().enumerate() {
        if v.status == ZeroStatus::NonZero {
            return Err(ReductionError::NotInvariant(i));
        }
    }
    let n = x.chart.dim();
    let orbit: Vec<bool> = (0..n)
        .map(|k| g.generators.iter().any(|v| !v.components[k].is_zero()))
        .collect();
    let a = generator(x);
    let boxed = x.chart.sample_box();
    let mut radial = Vec::new();
    let mut angular = Vec::new();
    for (alpha, c) in a.coefficients() {
        let touches_orbit = alpha.iter().zip(&orbit).any(|(e, o)| *e > 0 && *o);
        let touches_rest = alpha.iter().zip(&orbit).any(|(e, o)| *e > 0 && !*o);
        match (touches_orbit, touches_rest) {
            (true, true) => {
                if !tester.is_zero(c, &boxed)?.holds() {
                    return Err(ReductionError::MixedDiffusion);
                }
            }
            (true, false) => angular.push((alpha.clone(), c.clone())),
            (false, true) => radial.push((alpha.clone(), c.clone())),
            (false, false) => {
                if !tester.is_zero(c, &boxed)?.holds() {
                    return Err(ReductionError::ZerothOrder);
                }
            }
        }
    }
    let radial = realize_sds(&DiffOp::from_terms(&x.chart, radial)?, tester)?;
    let angular = realize_sds(&DiffOp::from_terms(&x.chart, angular)?, tester)?;
    Ok((radial, angular))
}

/// Rewrites `sqrt(m)` as a power product when `m` is a monomial in
/// coordinates bounded below by zero.
pub fn positive_roots(e: &ScalarExpr, chart: &Chart) -> ScalarExpr {
    let positive = |name: &str| {
        chart
            .coordinate(name)
            .and_then(|c| c.lower.as_ref())
            .is_some_and(|lo| *lo >= crate::expr::Q::from_integer(0.into()))
    };
    e.map_atoms(&|atom: &Atom| {
        let Atom::Sqrt(u) = atom else { return None };
        if u.has_denominator() {
            return None;
        }
        let mut terms = u.terms();
        let (m, c) = terms.next()?;
        if terms.next().is_some() || *c <= crate::expr::Q::from_integer(0.into()) {
            return None;
        }
        let all_positive = m
            .factors()
            .iter()
            .all(|(a, _)| matches!(a, Atom::Coord(n) if positive(n)));
        all_positive.then(|| positive_roots(&u.sqrt_up_to_sign(), chart))
    })
}

/// Re-expresses a field in a new chart, where `old_in_new` gives each old
/// coordinate as a function of the new ones.
pub fn change_chart(
    v: &VectorField,
    new_chart: &Arc<Chart>,
    old_in_new: &[ScalarExpr],
) -> Result<VectorField, ReductionError> {
    let old = v.chart.names();
    if old_in_new.len() != old.len() {
        return Err(ReductionError::MapArity {
            expected: old.len(),
            found: old_in_new.len(),
        });
    }
    let new = new_chart.names();
    let jac: Vec<Vec<ScalarExpr>> = old_in_new
        .iter()
        .map(|o| new.iter().map(|n| o.diff(n)).collect())
        .collect();
    let inv = inverse(&jac).ok_or(ReductionError::MapArity {
        expected: new.len(),
        found: old.len(),
    })?;
    let moved: Vec<ScalarExpr> = v
        .components
        .iter()
        .map(|c| c.substitute(&|name: &str| old.iter().position(|o| o == name).map(|k| old_in_new[k].clone())))
        .collect();
    let comps = inv
        .iter()
        .map(|row| {
            let s = row
                .iter()
                .zip(&moved)
                .fold(ScalarExpr::zero(), |acc, (a, b)| acc.add(&a.mul(b)));
            positive_roots(&s, new_chart)
        })
        .collect();
    Ok(VectorField::new(new_chart, comps)?)
}

/// Everything learned from reducing one system through one map.
#[derive(Clone, Debug, Serialize)]
pub struct ReductionReport {
    pub map: String,
    pub strict: Vec<InvarianceEntry>,
    pub diffusion: Vec<ZeroVerdict>,
    pub fiber: Option<FiberReport>,
    pub submersion_rank: Option<usize>,
    /// Rendered reduced operator.
    pub reduced_operator: Option<String>,
    pub morphism: Option<ZeroVerdict>,
    /// Generator of the realized system minus the reduced operator.
    pub realization: Option<ZeroVerdict>,
    pub error: Option<String>,
    #[serde(skip)]
    pub reduced: Option<DiffOp>,
    #[serde(skip)]
    pub realized: Option<Sds>,
}

/// Invariance checks, projection, morphism identity and realization in one pass.
pub fn reduce(
    x: &Sds,
    group: Option<&GroupAction>,
    map: &QuotientMap,
    samples: usize,
    tester: &ZeroTester,
) -> Result<ReductionReport, ReductionError> {
    let (strict, diffusion) = match group {
        Some(g) => (strict_invariance(x, g, tester)?, diffusion_invariance(x, g, tester)?),
        None => (Vec::new(), Vec::new()),
    };
    let mut report = ReductionReport {
        map: map.name.clone(),
        strict,
        diffusion,
        fiber: None,
        submersion_rank: map.submersion_rank(tester).ok(),
        reduced_operator: None,
        morphism: None,
        realization: None,
        error: None,
        reduced: None,
        realized: None,
    };
    let a = generator(x);
    match project_generator(&a, map, samples, tester) {
        Ok(p) => {
            report.fiber = Some(p.fiber);
            report.reduced = p.reduced;
        }
        Err(ReductionError::NotProjectable(w)) => {
            report.fiber = Some(FiberReport {
                symbolic: false,
                pairs: 0,
                max_deviation: (w.values[0] - w.values[1]).abs(),
                witness: Some(w.clone()),
            });
            report.error = Some(ReductionError::NotProjectable(w).to_string());
            return Ok(report);
        }
        Err(e) => return Err(e),
    }
    if let Some(b) = report.reduced.clone() {
        report.reduced_operator = Some(b.to_string());
        report.morphism = Some(morphism_check(&a, &b, map, tester)?);
        match realize_sds(&b, tester) {
            Ok(y) => {
                report.realization = Some(generator(&y).sub(&b)?.zero_verdict(tester)?);
                report.realized = Some(y);
            }
            Err(e) => report.error = Some(e.to_string()),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::builtins::*;
    use super::*;

    fn t() -> ZeroTester {
        ZeroTester::default()
    }

    #[test]
    fn bessel_from_brownian() {
        for n in 2..=5 {
            let x = brownian(n).unwrap();
            let map = radial_map(n).unwrap();
            let p = project_generator(&generator(&x), &map, 16, &t()).unwrap();
            assert!(p.fiber.symbolic);
            let b = p.reduced.unwrap();
            let drift = ScalarExpr::ratio(n as i64 - 1, 2).mul(&ScalarExpr::coord("r").recip().unwrap());
            assert!(b.coefficient(&[1]).equivalent(&drift), "n={n}: {b}");
            assert!(b.coefficient(&[2]).equivalent(&ScalarExpr::ratio(1, 2)));
            let y = realize_sds(&b, &t()).unwrap();
            assert!(diffusion_equivalent_to(&y, &bessel(n).unwrap()));
        }
    }

    fn diffusion_equivalent_to(x: &Sds, y: &Sds) -> bool {
        crate::operator::diffusion_equivalent(x, y, &t()).unwrap().is_symbolic()
    }

    #[test]
    fn damped_oscillator_through_energy() {
        let f = ScalarExpr::func("f", 0, &ScalarExpr::coord("r"));
        let x = damped_oscillator(&f).unwrap();
        let map = energy_map();
        let p = project_generator(&generator(&x), &map, 16, &t()).unwrap();
        let b = p.reduced.unwrap();
        let h = ScalarExpr::coord("h");
        let fh = ScalarExpr::func("f", 0, &h.mul(&ScalarExpr::int(2)).sqrt());
        let two_hf = ScalarExpr::int(2).mul(&h).mul(&fh);
        assert!(b.coefficient(&[1]).equivalent(&ScalarExpr::one().sub(&two_hf)), "{b}");
        assert!(b.coefficient(&[2]).equivalent(&h));
        let y = realize_sds(&b, &t()).unwrap();
        let noise = &y.noise[0].components[0];
        assert!(noise.mul(noise).equivalent(&h.mul(&ScalarExpr::int(2))), "{noise}");
        assert!(y.drift.components[0].equivalent(&ScalarExpr::ratio(1, 2).sub(&two_hf)));
    }

    #[test]
    fn damped_constant_in_radius() {
        let x = damped_oscillator(&ScalarExpr::int(3)).unwrap();
        let map = radial_map(2).unwrap();
        let p = project_generator(&generator(&x), &map, 16, &t()).unwrap();
        let y = realize_sds(&p.reduced.unwrap(), &t()).unwrap();
        let r = ScalarExpr::coord("r");
        let want = r.recip().unwrap().mul(&ScalarExpr::ratio(1, 2)).sub(&r.mul(&ScalarExpr::int(3)));
        assert!(y.drift.components[0].equivalent(&want));
        assert!(y.noise[0].components[0].is_one());
    }

    #[test]
    fn torus_is_not_projectable() {
        let (x, map) = torus_counterexample();
        let rep = projectability_check(&x, &map, ProjectabilityMode::Deterministic, 16, &t()).unwrap();
        assert!(!rep.pass);
        let w = rep.fiber.witness.unwrap();
        assert_eq!(w.first[0].1, 0.0);
        assert!((w.second[0].1 - 0.25).abs() < 1e-12);
        let err = project_generator(&generator(&x), &map, 16, &t()).unwrap_err();
        assert!(matches!(err, ReductionError::NotProjectable(_)));
    }

    #[test]
    fn identity_map_always_projects() {
        let (x, _) = torus_counterexample();
        let id = QuotientMap::identity(&x.chart);
        for mode in [ProjectabilityMode::Strict, ProjectabilityMode::Deterministic, ProjectabilityMode::Diffusion] {
            assert!(projectability_check(&x, &id, mode, 8, &t()).unwrap().pass);
        }
        let b = brownian(3).unwrap();
        let id = QuotientMap::identity(&b.chart);
        for mode in [ProjectabilityMode::Strict, ProjectabilityMode::Diffusion] {
            assert!(projectability_check(&b, &id, mode, 8, &t()).unwrap().pass);
        }
    }

    #[test]
    fn brownian_radius_projectability() {
        let x = brownian(3).unwrap();
        let map = radial_map(3).unwrap();
        assert!(projectability_check(&x, &map, ProjectabilityMode::Diffusion, 16, &t()).unwrap().pass);
        let strict = projectability_check(&x, &map, ProjectabilityMode::Strict, 16, &t()).unwrap();
        assert!(!strict.pass);
    }

    #[test]
    fn invariance_of_rotation_example() {
        let x = rotation_with_noise();
        let g = so_n_action(2).unwrap();
        let strict = strict_invariance(&x, &g, &t()).unwrap();
        assert!(strict[0].verdict.is_symbolic());
        assert_eq!(strict[1].verdict.status, ZeroStatus::NonZero);
        assert!(diffusion_invariance(&x, &g, &t()).unwrap()[0].is_symbolic());
        let b3 = brownian(3).unwrap();
        let g3 = so_n_action(3).unwrap();
        assert_eq!(g3.generators.len(), 3);
        assert!(diffusion_invariance(&b3, &g3, &t()).unwrap().iter().all(|v| v.is_symbolic()));
        let chart = brownian(2).unwrap().chart;
        let pushed = Sds::new(
            VectorField::basis(&chart, "x").unwrap(),
            brownian(2).unwrap().noise,
        )
        .unwrap();
        assert_eq!(diffusion_invariance(&pushed, &g, &t()).unwrap()[0].status, ZeroStatus::NonZero);
    }

    #[test]
    fn polar_decomposition_of_damped_oscillator() {
        let f = ScalarExpr::func("f", 0, &ScalarExpr::coord("r"));
        let x = to_polar(&damped_oscillator(&f).unwrap()).unwrap();
        let g = so2_polar();
        let (rad, ang) = radial_angular_decompose(&x, &g, &t()).unwrap();
        let r = ScalarExpr::coord("r");
        let fr = ScalarExpr::func("f", 0, &r);
        let want = r.recip().unwrap().mul(&ScalarExpr::ratio(1, 2)).sub(&r.mul(&fr));
        assert!(rad.drift.components[0].equivalent(&want), "{}", rad.drift);
        assert!(rad.drift.components[1].is_zero());
        assert!(rad.noise[0].components[0].is_one());
        assert!(ang.drift.components[1].is_one(), "{}", ang.drift);
        assert!(ang.noise[0].components[1].equivalent(&r.recip().unwrap()));
        let mut sum = generator(&rad).add(&generator(&ang)).unwrap();
        sum = sum.sub(&generator(&x)).unwrap();
        assert!(sum.zero_verdict(&t()).unwrap().is_symbolic());
    }

    #[test]
    fn realize_plain_laplacian() {
        let x = brownian(2).unwrap();
        let y = realize_sds(&generator(&x), &t()).unwrap();
        assert!(y.drift.is_zero());
        assert_eq!(y.noise.len(), 2);
    }

    #[test]
    fn realize_rejects_indefinite() {
        let chart = Chart::euclidean("R1", &["x"]);
        let a = DiffOp::from_terms(&chart, [(vec![2], ScalarExpr::int(-1))]).unwrap();
        assert!(matches!(realize_sds(&a, &t()), Err(ReductionError::Indefinite(_))));
    }

    #[test]
    fn realize_full_matrix_by_cholesky() {
        let chart = Chart::euclidean("R2", &["x", "y"]);
        let a = DiffOp::from_terms(
            &chart,
            [
                (vec![2, 0], ScalarExpr::int(1)),
                (vec![1, 1], ScalarExpr::int(1)),
                (vec![0, 2], ScalarExpr::int(1)),
            ],
        )
        .unwrap();
        let y = realize_sds(&a, &t()).unwrap();
        assert!(generator(&y).sub(&a).unwrap().zero_verdict(&t()).unwrap().holds());
    }

    #[test]
    fn morphism_identity_for_bessel() {
        let x = brownian(3).unwrap();
        let map = radial_map(3).unwrap();
        let rep = reduce(&x, Some(&so_n_action(3).unwrap()), &map, 16, &t()).unwrap();
        assert!(rep.morphism.unwrap().holds());
        assert!(rep.realization.unwrap().holds());
        assert_eq!(rep.submersion_rank, Some(1));
    }
}
