//! The `.sds` definition language: charts, fields, systems, actions, maps,
//! operators and integrable systems, with spans on every definition.
//!
//! ```text
//! chart P { r > 0, theta mod 2*pi }
//! field B on P = d/dr
//! sds X on P = 0 + [B]
//! ```

mod lexer;
mod parser;
mod resolve;
mod serialize;

use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use crate::expr::ScalarExpr;
use crate::geometry::{Chart, GroupAction, ScalarField, Sds, VectorField};
use crate::integrability::IntegrableSystem;
use crate::operator::DiffOp;
use crate::reduction::QuotientMap;

pub use serialize::serialize;

/// A diagnostic with its location in the source text.
#[derive(Clone, Debug, PartialEq, Serialize, Error)]
pub struct ParseError {
    pub message: String,
    /// 1-based line and column (in characters).
    pub line: usize,
    pub column: usize,
    /// Byte range into the source.
    pub start: usize,
    pub end: usize,
    /// The offending source line.
    pub excerpt: String,
    pub expected: Vec<String>,
    pub suggestion: Option<String>,
}

impl ParseError {
    pub(crate) fn at(src: &str, start: usize, end: usize, message: String, expected: Vec<String>) -> Self {
        let start = floor_boundary(src, start.min(src.len()));
        let end = floor_boundary(src, end.clamp(start, src.len()));
        let line_start = src[..start].rfind('\n').map_or(0, |i| i + 1);
        let line_end = src[start..].find('\n').map_or(src.len(), |i| start + i);
        ParseError {
            message,
            line: src[..start].matches('\n').count() + 1,
            column: src[line_start..start].chars().count() + 1,
            start,
            end,
            excerpt: src[line_start..line_end].to_string(),
            expected,
            suggestion: None,
        }
    }

    pub(crate) fn with_suggestion(mut self, s: Option<String>) -> Self {
        self.suggestion = s;
        self
    }
}

fn floor_boundary(src: &str, mut i: usize) -> usize {
    while !src.is_char_boundary(i) {
        i -= 1;
    }
    i
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)?;
        if let Some(s) = &self.suggestion {
            write!(f, " (did you mean `{s}`?)")?;
        }
        let pad: String = self
            .excerpt
            .chars()
            .take(self.column - 1)
            .map(|c| if c == '\t' { '\t' } else { ' ' })
            .collect();
        write!(f, "\n  | {}\n  | {pad}^", self.excerpt)
    }
}

/// Kinds of named definitions; names are unique within a kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum DefKind {
    Chart,
    Scalar,
    Field,
    Sds,
    Action,
    Map,
    Operator,
    System,
}

impl fmt::Display for DefKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DefKind::Chart => "chart",
            DefKind::Scalar => "scalar",
            DefKind::Field => "field",
            DefKind::Sds => "sds",
            DefKind::Action => "action",
            DefKind::Map => "map",
            DefKind::Operator => "op",
            DefKind::System => "system",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SourceSpan {
    pub start: usize,
    pub end: usize,
    pub line: usize,
    pub column: usize,
}

/// An SDS together with the names of the fields it was assembled from.
#[derive(Clone, Debug, PartialEq)]
pub struct SdsDef {
    /// Drift is the sum of these fields (zero when empty).
    pub drift: Vec<String>,
    pub noise: Vec<String>,
    pub sds: Sds,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionDef {
    pub generators: Vec<String>,
    pub action: GroupAction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemDef {
    pub operators: Vec<String>,
    pub fields: Vec<String>,
    pub functions: Vec<String>,
    pub system: IntegrableSystem,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DocError {
    #[error("{kind} `{name}` is already defined")]
    Duplicate { kind: DefKind, name: String },
    #[error("a different chart named `{0}` is already defined")]
    ChartConflict(String),
    #[error("unknown {kind} `{name}`{}", .suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    Unknown {
        kind: DefKind,
        name: String,
        suggestion: Option<String>,
    },
    #[error("`{0}` is not a valid name")]
    BadName(String),
}

/// A fully resolved document. Equality ignores source spans.
#[derive(Clone, Debug, Default)]
pub struct SystemDoc {
    pub charts: IndexMap<String, Arc<Chart>>,
    pub scalars: IndexMap<String, ScalarField>,
    pub fields: IndexMap<String, VectorField>,
    pub sds: IndexMap<String, SdsDef>,
    pub actions: IndexMap<String, ActionDef>,
    pub maps: IndexMap<String, QuotientMap>,
    pub operators: IndexMap<String, DiffOp>,
    pub systems: IndexMap<String, SystemDef>,
    pub spans: IndexMap<(DefKind, String), SourceSpan>,
}

impl PartialEq for SystemDoc {
    fn eq(&self, other: &Self) -> bool {
        self.charts == other.charts
            && self.scalars == other.scalars
            && self.fields == other.fields
            && self.sds == other.sds
            && self.actions == other.actions
            && self.maps == other.maps
            && self.operators == other.operators
            && self.systems == other.systems
    }
}

/// Parses and resolves a document, or returns every diagnostic found.
pub fn parse(text: &str) -> Result<SystemDoc, Vec<ParseError>> {
    let (stmts, mut errors) = parser::parse_statements(text);
    let doc = resolve::resolve(text, &stmts, &mut errors);
    if errors.is_empty() {
        Ok(doc)
    } else {
        errors.sort_by_key(|e| e.start);
        Err(errors)
    }
}

/// Parses one expression over `chart`. Names resolve to its coordinates,
/// `pi`, and scalars of `doc` defined on the same chart.
pub fn parse_expression(text: &str, chart: &Arc<Chart>, doc: &SystemDoc) -> Result<ScalarExpr, Vec<ParseError>> {
    let node = parser::parse_expression(text)?;
    resolve::resolve_expression(text, &node, chart, doc).map_err(|e| vec![e])
}

pub(crate) fn closest<'a>(name: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<String> {
    candidates
        .into_iter()
        .map(|c| (strsim::levenshtein(name, c), c))
        .filter(|(d, c)| *d <= 2 && *c != name)
        .min()
        .map(|(_, c)| c.to_string())
}

fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !parser::KEYWORDS.contains(&name)
}

fn fresh(map_has: impl Fn(&str) -> bool, base: &str) -> String {
    if !map_has(base) {
        return base.to_string();
    }
    (2..).map(|i| format!("{base}_{i}")).find(|n| !map_has(n)).expect("unbounded")
}

impl SystemDoc {
    pub fn new() -> Self {
        Self::default()
    }

    fn unknown<T>(kind: DefKind, name: &str, keys: impl Iterator<Item = String>) -> Result<T, DocError> {
        let keys: Vec<String> = keys.collect();
        Err(DocError::Unknown {
            kind,
            name: name.to_string(),
            suggestion: closest(name, keys.iter().map(String::as_str)),
        })
    }

    pub fn chart(&self, name: &str) -> Result<&Arc<Chart>, DocError> {
        match self.charts.get(name) {
            Some(c) => Ok(c),
            None => Self::unknown(DefKind::Chart, name, self.charts.keys().cloned()),
        }
    }

    pub fn scalar(&self, name: &str) -> Result<&ScalarField, DocError> {
        match self.scalars.get(name) {
            Some(c) => Ok(c),
            None => Self::unknown(DefKind::Scalar, name, self.scalars.keys().cloned()),
        }
    }

    pub fn field(&self, name: &str) -> Result<&VectorField, DocError> {
        match self.fields.get(name) {
            Some(c) => Ok(c),
            None => Self::unknown(DefKind::Field, name, self.fields.keys().cloned()),
        }
    }

    pub fn get_sds(&self, name: &str) -> Result<&Sds, DocError> {
        match self.sds.get(name) {
            Some(c) => Ok(&c.sds),
            None => Self::unknown(DefKind::Sds, name, self.sds.keys().cloned()),
        }
    }

    pub fn action(&self, name: &str) -> Result<&GroupAction, DocError> {
        match self.actions.get(name) {
            Some(c) => Ok(&c.action),
            None => Self::unknown(DefKind::Action, name, self.actions.keys().cloned()),
        }
    }

    pub fn map(&self, name: &str) -> Result<&QuotientMap, DocError> {
        match self.maps.get(name) {
            Some(c) => Ok(c),
            None => Self::unknown(DefKind::Map, name, self.maps.keys().cloned()),
        }
    }

    pub fn operator(&self, name: &str) -> Result<&DiffOp, DocError> {
        match self.operators.get(name) {
            Some(c) => Ok(c),
            None => Self::unknown(DefKind::Operator, name, self.operators.keys().cloned()),
        }
    }

    pub fn system(&self, name: &str) -> Result<&IntegrableSystem, DocError> {
        match self.systems.get(name) {
            Some(c) => Ok(&c.system),
            None => Self::unknown(DefKind::System, name, self.systems.keys().cloned()),
        }
    }

    fn check_new(&self, kind: DefKind, name: &str, taken: bool) -> Result<(), DocError> {
        if !valid_name(name) {
            return Err(DocError::BadName(name.to_string()));
        }
        if taken {
            return Err(DocError::Duplicate {
                kind,
                name: name.to_string(),
            });
        }
        Ok(())
    }

    /// Registers a chart under its own name; re-adding an identical chart is a no-op.
    pub fn add_chart(&mut self, chart: &Arc<Chart>) -> Result<(), DocError> {
        match self.charts.get(&chart.name) {
            Some(c) if **c == **chart => Ok(()),
            Some(_) => Err(DocError::ChartConflict(chart.name.clone())),
            None => {
                self.check_new(DefKind::Chart, &chart.name, false)?;
                for c in &chart.coords {
                    if !valid_name(&c.name) {
                        return Err(DocError::BadName(c.name.clone()));
                    }
                }
                self.charts.insert(chart.name.clone(), chart.clone());
                Ok(())
            }
        }
    }

    pub fn add_scalar(&mut self, name: &str, f: ScalarField) -> Result<(), DocError> {
        self.check_new(DefKind::Scalar, name, self.scalars.contains_key(name))?;
        self.add_chart(&f.chart)?;
        self.scalars.insert(name.to_string(), f);
        Ok(())
    }

    pub fn add_field(&mut self, name: &str, v: VectorField) -> Result<(), DocError> {
        self.check_new(DefKind::Field, name, self.fields.contains_key(name))?;
        self.add_chart(&v.chart)?;
        self.fields.insert(name.to_string(), v);
        Ok(())
    }

    fn add_fresh_field(&mut self, base: &str, v: &VectorField) -> Result<String, DocError> {
        let name = fresh(|n| self.fields.contains_key(n), base);
        self.add_field(&name, v.clone())?;
        Ok(name)
    }

    /// Adds an SDS, creating fields `NAME_drift` and `NAME_noiseK` for its parts.
    pub fn add_sds(&mut self, name: &str, x: &Sds) -> Result<(), DocError> {
        self.check_new(DefKind::Sds, name, self.sds.contains_key(name))?;
        self.add_chart(&x.chart)?;
        let drift = if x.drift.is_zero() {
            vec![]
        } else {
            vec![self.add_fresh_field(&format!("{name}_drift"), &x.drift)?]
        };
        let noise = x
            .noise
            .iter()
            .enumerate()
            .map(|(i, v)| self.add_fresh_field(&format!("{name}_noise{}", i + 1), v))
            .collect::<Result<_, _>>()?;
        self.sds.insert(
            name.to_string(),
            SdsDef {
                drift,
                noise,
                sds: x.clone(),
            },
        );
        Ok(())
    }

    pub fn add_action(&mut self, name: &str, g: &GroupAction) -> Result<(), DocError> {
        self.check_new(DefKind::Action, name, self.actions.contains_key(name))?;
        let generators = g
            .generators
            .iter()
            .enumerate()
            .map(|(i, v)| self.add_fresh_field(&format!("{name}_gen{}", i + 1), v))
            .collect::<Result<_, _>>()?;
        let action = GroupAction {
            name: name.to_string(),
            ..g.clone()
        };
        self.actions.insert(name.to_string(), ActionDef { generators, action });
        Ok(())
    }

    pub fn add_map(&mut self, map: &QuotientMap) -> Result<(), DocError> {
        self.check_new(DefKind::Map, &map.name, self.maps.contains_key(&map.name))?;
        self.add_chart(&map.source)?;
        self.add_chart(&map.target)?;
        self.maps.insert(map.name.clone(), map.clone());
        Ok(())
    }

    pub fn add_operator(&mut self, name: &str, op: DiffOp) -> Result<(), DocError> {
        self.check_new(DefKind::Operator, name, self.operators.contains_key(name))?;
        self.add_chart(&op.chart)?;
        self.operators.insert(name.to_string(), op);
        Ok(())
    }

    pub fn add_system(&mut self, sys: &IntegrableSystem) -> Result<(), DocError> {
        let name = sys.name.as_str();
        self.check_new(DefKind::System, name, self.systems.contains_key(name))?;
        self.add_chart(&sys.chart)?;
        let mut operators = Vec::new();
        for (i, op) in sys.operators.iter().enumerate() {
            let n = fresh(|n| self.operators.contains_key(n), &format!("{name}_L{}", i + 1));
            self.add_operator(&n, op.clone())?;
            operators.push(n);
        }
        let fields = sys
            .fields
            .iter()
            .enumerate()
            .map(|(i, v)| self.add_fresh_field(&format!("{name}_Z{}", i + 1), v))
            .collect::<Result<_, _>>()?;
        let mut functions = Vec::new();
        for (i, f) in sys.functions.iter().enumerate() {
            let n = fresh(|n| self.scalars.contains_key(n), &format!("{name}_F{}", i + 1));
            self.add_scalar(&n, f.clone())?;
            functions.push(n);
        }
        self.systems.insert(
            name.to_string(),
            SystemDef {
                operators,
                fields,
                functions,
                system: sys.clone(),
            },
        );
        Ok(())
    }

    /// Number of definitions of each kind, in declaration order of kinds.
    pub fn counts(&self) -> [(DefKind, usize); 8] {
        [
            (DefKind::Chart, self.charts.len()),
            (DefKind::Scalar, self.scalars.len()),
            (DefKind::Field, self.fields.len()),
            (DefKind::Sds, self.sds.len()),
            (DefKind::Action, self.actions.len()),
            (DefKind::Map, self.maps.len()),
            (DefKind::Operator, self.operators.len()),
            (DefKind::System, self.systems.len()),
        ]
    }
}

#[cfg(test)]
mod tests;
