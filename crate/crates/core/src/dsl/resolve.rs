//! Name resolution: turns parsed statements into a checked [`SystemDoc`].

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::parser::{Body, CoordDecl, Name, Node, Stmt, Term};
use super::{closest, ActionDef, DefKind, ParseError, SdsDef, SourceSpan, SystemDef, SystemDoc};
use crate::expr::ScalarExpr;
use crate::geometry::{Chart, Coordinate, GroupAction, ScalarField, Sds, VectorField};
use crate::integrability::IntegrableSystem;
use crate::operator::{generator, DiffOp};
use crate::reduction::QuotientMap;

const BUILTINS: &[&str] = &["sin", "cos", "exp", "sqrt"];

/// `None` marks a failure already reported elsewhere (a dependency that did
/// not resolve), so it is not reported twice.
type Res<T> = Result<T, Option<ParseError>>;

struct Resolver<'a> {
    src: &'a str,
    doc: SystemDoc,
    /// Every name declared per kind, with the span of its first declaration.
    declared: HashMap<(DefKind, String), usize>,
    failed: HashSet<(DefKind, String)>,
    errors: Vec<ParseError>,
}

fn kind_of(body: &Body) -> DefKind {
    match body {
        Body::Chart(_) => DefKind::Chart,
        Body::Scalar { .. } => DefKind::Scalar,
        Body::Field { .. } => DefKind::Field,
        Body::Sds { .. } => DefKind::Sds,
        Body::Action { .. } => DefKind::Action,
        Body::Map { .. } => DefKind::Map,
        Body::Op { .. } | Body::OpGenerator { .. } => DefKind::Operator,
        Body::System { .. } => DefKind::System,
    }
}

pub(crate) fn resolve(src: &str, stmts: &[Stmt], errors: &mut Vec<ParseError>) -> SystemDoc {
    let mut r = Resolver {
        src,
        doc: SystemDoc::new(),
        declared: HashMap::new(),
        failed: HashSet::new(),
        errors: Vec::new(),
    };
    let mut unique = Vec::new();
    for s in stmts {
        let key = (kind_of(&s.body), s.name.text.clone());
        if let Some(&first) = r.declared.get(&key) {
            let line = src[..first].matches('\n').count() + 1;
            r.errors.push(ParseError::at(
                src,
                s.name.start,
                s.name.end,
                format!("duplicate {} `{}` (first defined on line {line})", key.0, key.1),
                vec![],
            ));
        } else {
            r.declared.insert(key, s.name.start);
            unique.push(s);
        }
    }
    // Later kinds only refer to earlier ones, so resolving kind by kind
    // lets definitions appear in any order in the file.
    let order = [
        DefKind::Chart,
        DefKind::Scalar,
        DefKind::Field,
        DefKind::Sds,
        DefKind::Action,
        DefKind::Map,
        DefKind::Operator,
        DefKind::System,
    ];
    for kind in order {
        for s in unique.iter().filter(|s| kind_of(&s.body) == kind) {
            if let Err(e) = r.statement(s) {
                r.failed.insert((kind, s.name.text.clone()));
                if let Some(e) = e {
                    r.errors.push(e);
                }
            }
        }
    }
    errors.append(&mut r.errors);
    r.doc
}

/// Converts a standalone expression over `chart`; names may also refer to
/// the scalars of `doc` on that chart.
pub(crate) fn resolve_expression(src: &str, node: &Node, chart: &Arc<Chart>, doc: &SystemDoc) -> Result<ScalarExpr, ParseError> {
    let r = Resolver {
        src,
        doc: doc.clone(),
        declared: HashMap::new(),
        failed: HashSet::new(),
        errors: Vec::new(),
    };
    r.expr(node, Some(chart)).map_err(|e| e.expect("no dependencies can fail"))
}

impl<'a> Resolver<'a> {
    fn err(&self, start: usize, end: usize, msg: String) -> Option<ParseError> {
        Some(ParseError::at(self.src, start, end, msg, vec![]))
    }

    fn err_at(&self, n: &Name, msg: String) -> Option<ParseError> {
        self.err(n.start, n.end, msg)
    }

    fn span(&self, n: &Name) -> SourceSpan {
        let e = ParseError::at(self.src, n.start, n.end, String::new(), vec![]);
        SourceSpan {
            start: e.start,
            end: e.end,
            line: e.line,
            column: e.column,
        }
    }

    /// Reports an unknown name, or stays silent if it was declared but failed.
    fn missing<T>(&self, kind: DefKind, n: &Name, keys: Vec<&str>) -> Res<T> {
        if self.failed.contains(&(kind, n.text.clone())) {
            return Err(None);
        }
        let e = ParseError::at(self.src, n.start, n.end, format!("unknown {kind} `{}`", n.text), vec![])
            .with_suggestion(closest(&n.text, keys));
        Err(Some(e))
    }

    fn chart(&self, n: &Name) -> Res<Arc<Chart>> {
        match self.doc.charts.get(&n.text) {
            Some(c) => Ok(c.clone()),
            None => self.missing(DefKind::Chart, n, self.doc.charts.keys().map(String::as_str).collect()),
        }
    }

    fn field_on(&self, n: &Name, chart: &Arc<Chart>) -> Res<VectorField> {
        match self.doc.fields.get(&n.text) {
            Some(v) if v.chart == *chart => Ok(v.clone()),
            Some(v) => Err(self.err_at(n, format!("field `{}` is defined on chart `{}`, not `{}`", n.text, v.chart.name, chart.name))),
            None => self.missing(DefKind::Field, n, self.doc.fields.keys().map(String::as_str).collect()),
        }
    }

    fn statement(&mut self, s: &Stmt) -> Res<()> {
        let name = s.name.text.clone();
        let kind = kind_of(&s.body);
        match &s.body {
            Body::Chart(decls) => {
                let coords = decls.iter().map(|d| self.coordinate(d)).collect::<Res<Vec<_>>>()?;
                let chart = Chart::new(&name, coords).map_err(|e| self.err_at(&s.name, format!("invalid chart: {e}")))?;
                self.doc.charts.insert(name.clone(), chart);
            }
            Body::Scalar { chart, value } => {
                let c = self.chart(chart)?;
                let value = self.expr(value, Some(&c))?;
                self.doc.scalars.insert(name.clone(), ScalarField { chart: c, value });
            }
            Body::Field { chart, terms } => {
                let c = self.chart(chart)?;
                let v = self.field(&c, terms)?;
                self.doc.fields.insert(name.clone(), v);
            }
            Body::Op { chart, terms } => {
                let c = self.chart(chart)?;
                let op = self.operator(&c, terms)?;
                self.doc.operators.insert(name.clone(), op);
            }
            Body::OpGenerator { chart, sds } => {
                let c = self.chart(chart)?;
                let x = match self.doc.sds.get(&sds.text) {
                    Some(d) if d.sds.chart == c => d.sds.clone(),
                    Some(d) => {
                        return Err(self.err_at(sds, format!("sds `{}` is defined on chart `{}`, not `{}`", sds.text, d.sds.chart.name, c.name)))
                    }
                    None => return self.missing(DefKind::Sds, sds, self.doc.sds.keys().map(String::as_str).collect()),
                };
                self.doc.operators.insert(name.clone(), generator(&x));
            }
            Body::Sds { chart, drift, noise } => {
                let c = self.chart(chart)?;
                let mut total = VectorField::zero(&c);
                for d in drift {
                    total = total.add(&self.field_on(d, &c)?).expect("same chart");
                }
                let fields = noise.iter().map(|n| self.field_on(n, &c)).collect::<Res<Vec<_>>>()?;
                let sds = Sds::new(total, fields).expect("fields share the chart");
                self.doc.sds.insert(
                    name.clone(),
                    SdsDef {
                        drift: drift.iter().map(|n| n.text.clone()).collect(),
                        noise: noise.iter().map(|n| n.text.clone()).collect(),
                        sds,
                    },
                );
            }
            Body::Action { chart, generators } => {
                let c = self.chart(chart)?;
                let gens = generators.iter().map(|n| self.field_on(n, &c)).collect::<Res<Vec<_>>>()?;
                let action = GroupAction::new(&name, gens).map_err(|e| self.err_at(&s.name, e.to_string()))?;
                self.doc.actions.insert(
                    name.clone(),
                    ActionDef {
                        generators: generators.iter().map(|n| n.text.clone()).collect(),
                        action,
                    },
                );
            }
            Body::Map { source, target, components } => {
                let src = self.chart(source)?;
                let tgt = self.chart(target)?;
                let mut slots: Vec<Option<ScalarExpr>> = vec![None; tgt.dim()];
                for (coord, e) in components {
                    let Some(i) = tgt.index_of(&coord.text) else {
                        let e = ParseError::at(
                            self.src,
                            coord.start,
                            coord.end,
                            format!("`{}` is not a coordinate of chart `{}`", coord.text, tgt.name),
                            vec![],
                        )
                        .with_suggestion(closest(&coord.text, tgt.coords.iter().map(|c| c.name.as_str())));
                        return Err(Some(e));
                    };
                    if slots[i].is_some() {
                        return Err(self.err_at(coord, format!("component `{}` given twice", coord.text)));
                    }
                    slots[i] = Some(self.expr(e, Some(&src))?);
                }
                if let Some(i) = slots.iter().position(Option::is_none) {
                    return Err(self.err_at(&s.name, format!("map `{name}` has no component for `{}`", tgt.coords[i].name)));
                }
                let comps = slots.into_iter().map(Option::unwrap).collect();
                let map = QuotientMap::new(&name, &src, &tgt, comps).map_err(|e| self.err_at(&s.name, e.to_string()))?;
                self.doc.maps.insert(name.clone(), map);
            }
            Body::System { chart, lambda, z, f } => {
                let c = self.chart(chart)?;
                let mut ops = Vec::new();
                for n in lambda {
                    match self.doc.operators.get(&n.text) {
                        Some(op) => ops.push(op.clone()),
                        None => return self.missing(DefKind::Operator, n, self.doc.operators.keys().map(String::as_str).collect()),
                    }
                }
                let fields = z.iter().map(|n| self.field_on(n, &c)).collect::<Res<Vec<_>>>()?;
                let mut funcs = Vec::new();
                for n in f {
                    match self.doc.scalars.get(&n.text) {
                        Some(v) => funcs.push(v.clone()),
                        None => return self.missing(DefKind::Scalar, n, self.doc.scalars.keys().map(String::as_str).collect()),
                    }
                }
                let system = IntegrableSystem::new(&name, &c, ops, fields, funcs)
                    .map_err(|e| self.err_at(&s.name, format!("invalid system: {e}")))?;
                let names = |v: &[Name]| v.iter().map(|n| n.text.clone()).collect();
                self.doc.systems.insert(
                    name.clone(),
                    SystemDef {
                        operators: names(lambda),
                        fields: names(z),
                        functions: names(f),
                        system,
                    },
                );
            }
        }
        let span = self.span(&s.name);
        self.doc.spans.insert((kind, name), span);
        Ok(())
    }

    fn coordinate(&self, d: &CoordDecl) -> Res<Coordinate> {
        let period = d.period.as_ref().map(|p| self.expr(p, None)).transpose()?;
        Ok(Coordinate {
            name: d.name.text.clone(),
            period,
            lower: d.lower.clone(),
            upper: d.upper.clone(),
        })
    }

    fn coefficient(&self, t: &Term, chart: &Arc<Chart>) -> Res<ScalarExpr> {
        let c = match &t.coef {
            Some(n) => self.expr(n, Some(chart))?,
            None => ScalarExpr::one(),
        };
        Ok(if t.negate { c.neg() } else { c })
    }

    fn coord_index(&self, n: &Name, chart: &Chart) -> Res<usize> {
        chart.index_of(&n.text).ok_or_else(|| {
            Some(
                ParseError::at(
                    self.src,
                    n.start,
                    n.end,
                    format!("`{}` is not a coordinate of chart `{}`", n.text, chart.name),
                    vec![],
                )
                .with_suggestion(closest(&n.text, chart.coords.iter().map(|c| c.name.as_str()))),
            )
        })
    }

    fn field(&self, chart: &Arc<Chart>, terms: &[Term]) -> Res<VectorField> {
        if terms.len() == 1 && terms[0].derivs.is_empty() && terms[0].coef.as_ref().is_some_and(Node::is_literal_zero) {
            return Ok(VectorField::zero(chart));
        }
        let mut comps = vec![ScalarExpr::zero(); chart.dim()];
        for t in terms {
            if t.derivs.len() != 1 {
                let end = t.derivs.last().map_or(t.start + 1, |d| d.end);
                return Err(self.err(t.start, end, "each term of a vector field needs exactly one d/dNAME".into()));
            }
            let j = self.coord_index(&t.derivs[0], chart)?;
            comps[j] = comps[j].add(&self.coefficient(t, chart)?);
        }
        Ok(VectorField::new(chart, comps).expect("arity matches"))
    }

    fn operator(&self, chart: &Arc<Chart>, terms: &[Term]) -> Res<DiffOp> {
        let mut out = Vec::new();
        for t in terms {
            let mut alpha = vec![0u32; chart.dim()];
            for d in &t.derivs {
                alpha[self.coord_index(d, chart)?] += 1;
            }
            out.push((alpha, self.coefficient(t, chart)?));
        }
        Ok(DiffOp::from_terms(chart, out).expect("coefficients checked against the chart"))
    }

    /// Converts an expression; `chart = None` allows only constants.
    fn expr(&self, n: &Node, chart: Option<&Arc<Chart>>) -> Res<ScalarExpr> {
        Ok(match n {
            Node::Num(q) => ScalarExpr::constant(q.clone()),
            Node::Name(name) => self.name_value(name, chart)?,
            Node::Neg(a) => self.expr(a, chart)?.neg(),
            Node::Add(a, b) => self.expr(a, chart)?.add(&self.expr(b, chart)?),
            Node::Sub(a, b) => self.expr(a, chart)?.sub(&self.expr(b, chart)?),
            Node::Mul(a, b) => self.expr(a, chart)?.mul(&self.expr(b, chart)?),
            Node::Div(a, b, at) => self.expr(a, chart)?.mul(&self.reciprocal(b, chart, *at)?),
            Node::Pow(b, k, at) => {
                let base = self.expr(b, chart)?;
                base.powi(*k).ok_or_else(|| self.err(*at, at + 1, "negative power of zero".into()))?
            }
            Node::Call(f, arg) => {
                let a = self.expr(arg, chart)?;
                let base = f.text.trim_end_matches('\'');
                let order = (f.text.len() - base.len()) as u32;
                match (base, order) {
                    ("sin", 0) => a.sin(),
                    ("cos", 0) => a.cos(),
                    ("exp", 0) => a.exp(),
                    ("sqrt", 0) => a.sqrt(),
                    (b, o) if BUILTINS.contains(&b) => {
                        return Err(self.err_at(f, format!("`{b}` cannot carry {o} prime(s); write the derivative out")))
                    }
                    (b, o) => ScalarExpr::func(b, o, &a),
                }
            }
        })
    }

    /// `1/n`, inverting products and powers factor by factor so a
    /// rendered denominator like `(1 + x^2)^2` keeps its factored form.
    fn reciprocal(&self, n: &Node, chart: Option<&Arc<Chart>>, at: usize) -> Res<ScalarExpr> {
        let zero = || self.err(at, at + 1, "division by zero".into());
        Ok(match n {
            Node::Mul(a, b) => self.reciprocal(a, chart, at)?.mul(&self.reciprocal(b, chart, at)?),
            Node::Pow(b, k, _) => self.reciprocal(b, chart, at)?.powi(*k).ok_or_else(zero)?,
            _ => self.expr(n, chart)?.recip().ok_or_else(zero)?,
        })
    }

    fn name_value(&self, n: &Name, chart: Option<&Arc<Chart>>) -> Res<ScalarExpr> {
        if let Some(c) = chart {
            if c.index_of(&n.text).is_some() {
                return Ok(ScalarExpr::coord(&n.text));
            }
        }
        if n.text == "pi" {
            return Ok(ScalarExpr::pi());
        }
        let mut candidates = vec!["pi".to_string()];
        if let Some(c) = chart {
            if let Some(s) = self.doc.scalars.get(&n.text) {
                if s.chart == *c {
                    return Ok(s.value.clone());
                }
                return Err(self.err_at(n, format!("scalar `{}` is defined on chart `{}`, not `{}`", n.text, s.chart.name, c.name)));
            }
            let key = (DefKind::Scalar, n.text.clone());
            if self.failed.contains(&key) {
                return Err(None);
            }
            if self.declared.contains_key(&key) {
                return Err(self.err_at(n, format!("scalar `{}` is used before its definition", n.text)));
            }
            candidates.extend(c.names());
            candidates.extend(self.doc.scalars.iter().filter(|(_, s)| s.chart == *c).map(|(k, _)| k.clone()));
            let e = ParseError::at(
                self.src,
                n.start,
                n.end,
                format!("unknown name `{}` on chart `{}`", n.text, c.name),
                vec![],
            )
            .with_suggestion(closest(&n.text, candidates.iter().map(String::as_str)));
            return Err(Some(e));
        }
        Err(self.err_at(n, format!("`{}` is not a constant", n.text)))
    }
}
