//! Canonical text for a [`SystemDoc`]; parsing the output gives back an equal document.

use std::fmt::Write as _;

use super::SystemDoc;
use crate::expr::ScalarExpr;
use crate::geometry::{Chart, VectorField};
use crate::operator::DiffOp;

fn coefficient(c: &ScalarExpr) -> String {
    format!("({c})")
}

pub(crate) fn field_text(v: &VectorField) -> String {
    let terms: Vec<String> = v
        .chart
        .coords
        .iter()
        .zip(&v.components)
        .filter(|(_, c)| !c.is_zero())
        .map(|(x, c)| {
            if c.is_one() {
                format!("d/d{}", x.name)
            } else {
                format!("{}*d/d{}", coefficient(c), x.name)
            }
        })
        .collect();
    if terms.is_empty() {
        "0".into()
    } else {
        terms.join(" + ")
    }
}

pub(crate) fn operator_text(op: &DiffOp) -> String {
    let terms: Vec<String> = op
        .coefficients()
        .map(|(alpha, c)| {
            let derivs: Vec<String> = op
                .chart
                .coords
                .iter()
                .zip(alpha)
                .flat_map(|(x, &k)| std::iter::repeat_n(format!("d/d{}", x.name), k as usize))
                .collect();
            match (derivs.is_empty(), c.is_one()) {
                (true, _) => coefficient(c),
                (false, true) => derivs.join("*"),
                (false, false) => format!("{}*{}", coefficient(c), derivs.join("*")),
            }
        })
        .collect();
    if terms.is_empty() {
        "0".into()
    } else {
        terms.join(" + ")
    }
}

fn chart_text(c: &Chart) -> String {
    let coords: Vec<String> = c
        .coords
        .iter()
        .map(|x| {
            let mut s = x.name.clone();
            if let Some(p) = &x.period {
                let _ = write!(s, " mod {p}");
            }
            if let Some(lo) = &x.lower {
                let _ = write!(s, " > {lo}");
            }
            if let Some(hi) = &x.upper {
                let _ = write!(s, " < {hi}");
            }
            s
        })
        .collect();
    format!("chart {} {{ {} }}", c.name, coords.join(", "))
}

/// Canonical rendering: one statement per line, grouped by kind.
pub fn serialize(doc: &SystemDoc) -> String {
    let mut out = String::new();
    for c in doc.charts.values() {
        let _ = writeln!(out, "{}", chart_text(c));
    }
    for (n, s) in &doc.scalars {
        let _ = writeln!(out, "scalar {n} on {} = {}", s.chart.name, s.value);
    }
    for (n, v) in &doc.fields {
        let _ = writeln!(out, "field {n} on {} = {}", v.chart.name, field_text(v));
    }
    for (n, d) in &doc.sds {
        let drift = if d.drift.is_empty() { "0".to_string() } else { d.drift.join(" + ") };
        let _ = writeln!(out, "sds {n} on {} = {drift} + [{}]", d.sds.chart.name, d.noise.join(", "));
    }
    for (n, a) in &doc.actions {
        let _ = writeln!(out, "action {n} on {} generators [{}]", a.action.chart.name, a.generators.join(", "));
    }
    for (n, m) in &doc.maps {
        let comps: Vec<String> = m
            .target
            .coords
            .iter()
            .zip(&m.components)
            .map(|(x, e)| format!("{} = {e}", x.name))
            .collect();
        let _ = writeln!(out, "map {n} : {} -> {} {{ {} }}", m.source.name, m.target.name, comps.join(", "));
    }
    for (n, op) in &doc.operators {
        let _ = writeln!(out, "op {n} on {} = {}", op.chart.name, operator_text(op));
    }
    for (n, s) in &doc.systems {
        let _ = writeln!(
            out,
            "system {n} on {} {{ lambda [{}] z [{}] f [{}] }}",
            s.system.chart.name,
            s.operators.join(", "),
            s.fields.join(", "),
            s.functions.join(", ")
        );
    }
    out
}
