use std::path::Path;
use std::sync::Arc;

use sds_core::dsl::{self, DocError, ParseError, SystemDoc};
use sds_core::expr::{ExprError, FunctionTable, ScalarExpr, ZeroTester};
use sds_core::geometry::{lie_bracket, Chart, GeometryError, ScalarField, Sds};
use sds_core::integrability::{
    normal_form, promote_and_verify, verify_sds_integrable, verify_system, IntegrabilityError, IntegrabilityReport,
};
use sds_core::operator::{
    diffusion_equivalent, generator, strong_first_integral, weak_first_integral, IntegralMode as Mode,
    OperatorError,
};
use sds_core::reduction::{diffusion_invariance, reduce, strict_invariance, ReductionError};
use sds_core::sim::SimError;
use serde_json::{json, Value};
use thiserror::Error;

use crate::report::{Report, Verdict};
use crate::{Check, Cli, Command, Global, Integrability, IntegralMode, InvarianceMode, Outcome};

/// Anything that stops a command before it reaches a verdict.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{} parse error(s)", .0.len())]
    Parse(Vec<ParseError>),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Doc(#[from] DocError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Integrability(#[from] IntegrabilityError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

pub type CliResult<T> = Result<T, CliError>;

/// Shared state of one invocation.
pub struct Ctx<'a> {
    pub global: &'a Global,
    pub report: Report,
    pub table: Option<String>,
    pub text: Option<String>,
    pub funcs: FunctionTable,
    pub tester: ZeroTester,
}

impl Ctx<'_> {
    pub fn load(&mut self, path: &Path) -> CliResult<SystemDoc> {
        let shown = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|source| CliError::Io { path: shown.clone(), source })?;
        self.report.document(&shown, &bytes);
        let text = String::from_utf8_lossy(&bytes);
        dsl::parse(&text).map_err(CliError::Parse)
    }

    /// A scalar named in the document, or an expression over `chart`.
    pub fn scalar(&self, doc: &SystemDoc, chart: &Arc<Chart>, text: &str) -> CliResult<ScalarField> {
        if let Some(f) = doc.scalars.get(text) {
            return Ok(f.clone());
        }
        let e = dsl::parse_expression(text, chart, doc).map_err(CliError::Parse)?;
        Ok(ScalarField::new(chart, e)?)
    }

    pub fn sds<'d>(&self, doc: &'d SystemDoc, name: &str) -> CliResult<&'d Sds> {
        Ok(doc.get_sds(name)?)
    }
}

fn function_table(defines: &[String]) -> CliResult<FunctionTable> {
    let mut table = FunctionTable::new();
    for d in defines {
        let (name, coeffs) = d
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--define expects NAME=COEFFS, got `{d}`")))?;
        let coeffs = coeffs
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Usage(format!("--define {name}: {e}")))?;
        table.insert_polynomial(name.trim(), coeffs);
    }
    Ok(table)
}

fn command_name(c: &Command) -> String {
    match c {
        Command::Check(Check::Equivalence { .. }) => "check equivalence",
        Command::Check(Check::Integral { .. }) => "check integral",
        Command::Check(Check::Invariance { .. }) => "check invariance",
        Command::Reduce { .. } => "reduce",
        Command::Integrability(Integrability::Verify { .. }) => "integrability verify",
        Command::Integrability(Integrability::Promote { .. }) => "integrability promote",
        Command::Integrability(Integrability::NormalForm { .. }) => "integrability normal-form",
        Command::Sim(s) => return format!("sim {}", s.name()),
        Command::Parse { .. } => "parse",
    }
    .to_string()
}

pub fn dispatch(cli: &Cli) -> Outcome {
    let g = &cli.global;
    let mut ctx = Ctx {
        global: g,
        report: Report::new(&command_name(&cli.command), g.seed),
        table: None,
        text: None,
        funcs: FunctionTable::new(),
        tester: ZeroTester::default(),
    };
    ctx.report.param("samples", g.samples);
    if g.symbolic {
        ctx.report.param("symbolic", true);
    }
    if !g.defines.is_empty() {
        ctx.report.param("define", &g.defines);
    }
    let result = function_table(&g.defines).and_then(|funcs| {
        ctx.funcs = funcs.clone();
        ctx.tester = ZeroTester {
            samples: g.samples,
            seed: g.seed,
            functions: funcs,
            ..ZeroTester::default()
        };
        run_command(&mut ctx, &cli.command)
    });
    match result {
        Ok(()) => ctx.report.settle(),
        Err(CliError::Parse(diags)) => {
            ctx.report.diagnostics = diags;
            ctx.report.fail_with("parse error".into());
        }
        Err(e) => {
            let mut msg = e.to_string();
            if msg.contains("no numeric definition") {
                msg.push_str("; supply one with --define NAME=COEFFS");
            }
            ctx.report.fail_with(msg)
        }
    }
    Outcome {
        report: ctx.report,
        table: ctx.table,
        text: ctx.text,
    }
}

fn run_command(ctx: &mut Ctx, c: &Command) -> CliResult<()> {
    match c {
        Command::Check(Check::Equivalence { doc, first, second }) => equivalence(ctx, doc, first, second),
        Command::Check(Check::Integral { doc, sds, scalar, mode }) => integral(ctx, doc, sds, scalar, *mode),
        Command::Check(Check::Invariance { doc, sds, group, mode }) => invariance(ctx, doc, sds, group, *mode),
        Command::Reduce { doc, sds, map, group } => reduction(ctx, doc, sds, map, group.as_deref()),
        Command::Integrability(Integrability::Verify { doc, system, sds }) => verify(ctx, doc, system, sds.as_deref()),
        Command::Integrability(Integrability::Promote { doc, system }) => promote(ctx, doc, system),
        Command::Integrability(Integrability::NormalForm { doc, sds, chart, sections }) => {
            normal(ctx, doc, sds, chart, sections)
        }
        Command::Sim(s) => crate::sim::run(ctx, s),
        Command::Parse { file, canonical } => parse(ctx, file, *canonical),
    }
}

fn equivalence(ctx: &mut Ctx, path: &Path, first: &str, second: &str) -> CliResult<()> {
    let doc = ctx.load(path)?;
    ctx.report.param("first", first).param("second", second);
    let (x, y) = (ctx.sds(&doc, first)?, ctx.sds(&doc, second)?);
    let v = diffusion_equivalent(x, y, &ctx.tester)?;
    ctx.report.push(Verdict::zero(format!("A_{first} = A_{second}"), &v, ctx.global.symbolic));
    ctx.report.result = json!({
        "generators": { first: generator(x).to_string(), second: generator(y).to_string() },
    });
    Ok(())
}

fn integral(ctx: &mut Ctx, path: &Path, name: &str, scalar: &str, mode: IntegralMode) -> CliResult<()> {
    let doc = ctx.load(path)?;
    ctx.report.param("sds", name).param("scalar", scalar);
    let x = ctx.sds(&doc, name)?;
    let f = ctx.scalar(&doc, &x.chart, scalar)?;
    let sym = ctx.global.symbolic;
    match mode {
        IntegralMode::Strong => {
            ctx.report.param("mode", "strong");
            let fields = strong_first_integral(x, &f, Mode::ByFields, &ctx.tester)?;
            let comm = strong_first_integral(x, &f, Mode::ByCommutator, &ctx.tester)?;
            ctx.report.result = json!({ "modes_agree": fields.holds() == comm.holds() });
            ctx.report.push(Verdict::zero("every field annihilates F", &fields, sym));
            ctx.report.push(Verdict::zero(format!("[A_{name}, F] = 0"), &comm, sym));
        }
        IntegralMode::Weak => {
            ctx.report.param("mode", "weak");
            let v = weak_first_integral(x, &f, &ctx.tester)?;
            ctx.report.push(Verdict::zero(format!("A_{name}(F) = 0"), &v, sym));
        }
    }
    Ok(())
}

fn field_labels(doc: &SystemDoc, name: &str) -> Vec<String> {
    let def = &doc.sds[name];
    let drift = if def.drift.is_empty() { "0".to_string() } else { def.drift.join(" + ") };
    std::iter::once(drift).chain(def.noise.iter().cloned()).collect()
}

fn invariance(ctx: &mut Ctx, path: &Path, name: &str, group: &str, mode: InvarianceMode) -> CliResult<()> {
    let doc = ctx.load(path)?;
    ctx.report.param("sds", name).param("group", group);
    let x = ctx.sds(&doc, name)?;
    let g = doc.action(group)?;
    let gens = &doc.actions[group].generators;
    let sym = ctx.global.symbolic;
    match mode {
        InvarianceMode::Strict => {
            ctx.report.param("mode", "strict");
            let labels = field_labels(&doc, name);
            let fields: Vec<_> = x.fields().collect();
            for e in strict_invariance(x, g, &ctx.tester)? {
                let claim = format!("[{}, {}] = 0", gens[e.generator], labels[e.field]);
                let mut v = Verdict::zero(claim, &e.verdict, sym);
                if !e.verdict.holds() {
                    let bracket = lie_bracket(&g.generators[e.generator], fields[e.field])?;
                    let mut w = v.witness.take().unwrap_or(Value::Null);
                    w["bracket"] = json!(bracket.to_string());
                    v = v.with_witness(w);
                }
                ctx.report.push(v);
            }
        }
        InvarianceMode::Diffusion => {
            ctx.report.param("mode", "diffusion");
            for (i, v) in diffusion_invariance(x, g, &ctx.tester)?.iter().enumerate() {
                ctx.report.push(Verdict::zero(format!("[{}, A_{name}] = 0", gens[i]), v, sym));
            }
        }
    }
    Ok(())
}

/// The document holding just `x` under `name`, rendered.
fn as_document(name: &str, x: &Sds) -> CliResult<String> {
    let mut d = SystemDoc::new();
    d.add_sds(name, x)?;
    Ok(dsl::serialize(&d))
}

fn reduction(ctx: &mut Ctx, path: &Path, name: &str, map: &str, group: Option<&str>) -> CliResult<()> {
    let doc = ctx.load(path)?;
    ctx.report.param("sds", name).param("map", map);
    if let Some(g) = group {
        ctx.report.param("group", g);
    }
    let x = ctx.sds(&doc, name)?;
    let phi = doc.map(map)?;
    let g = group.map(|g| doc.action(g)).transpose()?;
    let rep = reduce(x, g, phi, ctx.global.samples, &ctx.tester)?;
    let sym = ctx.global.symbolic;
    let fiber = rep.fiber.as_ref();
    let mut v = Verdict::new(
        format!("A_{name} is constant on the fibres of {map}"),
        fiber.is_some_and(|f| f.pass()),
    );
    if let Some(w) = fiber.and_then(|f| f.witness.as_ref()) {
        v = v.with_witness(json!(w));
    }
    ctx.report.push(v.with_detail(json!(fiber)));
    if fiber.is_some_and(|f| f.pass()) {
        let mut v = Verdict::new("reduced operator rewritten in target coordinates", true);
        if rep.reduced.is_none() {
            v.status = crate::report::Status::Inconclusive;
        }
        ctx.report.push(v);
    }
    if let Some(m) = &rep.morphism {
        ctx.report.push(Verdict::zero(format!("A_{name}(f o {map}) = (B f) o {map}"), m, sym));
    }
    if let Some(r) = &rep.realization {
        ctx.report.push(Verdict::zero("realized system generates the reduced operator", r, sym));
    }
    if let (Some(_), None) = (&rep.reduced, &rep.realized) {
        let why = rep.error.clone().unwrap_or_default();
        ctx.report.push(Verdict::new("reduced operator is realized by a system", false).with_witness(json!(why)));
    }
    let realized = match &rep.realized {
        Some(y) => json!({
            "drift": y.drift.components.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "noise": y.noise.iter().map(|n| n.components.iter().map(|c| c.to_string()).collect::<Vec<_>>()).collect::<Vec<_>>(),
            "document": as_document(&format!("{name}_reduced"), y)?,
        }),
        None => Value::Null,
    };
    ctx.report.result = json!({ "reduction": rep, "realized": realized });
    ctx.text = None;
    Ok(())
}

fn push_integrability(ctx: &mut Ctx, rep: &IntegrabilityReport) {
    let sym = ctx.global.symbolic;
    for c in &rep.commutators {
        ctx.report.push(Verdict::zero(format!("[{}, {}] = 0", c.first, c.second), &c.verdict, sym));
    }
    let mut rank = Verdict::new(
        format!("symbols are independent (rank {} of {})", rep.rank.max_rank, rep.rank.expected),
        rep.rank.full(),
    );
    if let Some((x, p)) = &rep.rank.witness {
        rank = rank.with_witness(json!({ "x": x, "p": p, "singular_values": rep.rank.singular_values }));
    }
    ctx.report.push(rank);
}

fn verify(ctx: &mut Ctx, path: &Path, system: &str, sds: Option<&str>) -> CliResult<()> {
    let doc = ctx.load(path)?;
    ctx.report.param("system", system);
    let sys = doc.system(system)?;
    let n = ctx.global.samples;
    match sds {
        Some(name) => {
            ctx.report.param("sds", name);
            let x = ctx.sds(&doc, name)?;
            let rep = verify_sds_integrable(x, sys, n, &ctx.tester)?;
            push_integrability(ctx, &rep.system);
            for c in &rep.generator {
                let claim = format!("[A_{name}, {}] = 0", c.second);
                ctx.report.push(Verdict::zero(claim, &c.verdict, ctx.global.symbolic));
            }
            ctx.report.result = json!(rep);
        }
        None => {
            let rep = verify_system(sys, n, &ctx.tester)?;
            push_integrability(ctx, &rep);
            ctx.report.result = json!(rep);
        }
    }
    Ok(())
}

fn promote(ctx: &mut Ctx, path: &Path, system: &str) -> CliResult<()> {
    let doc = ctx.load(path)?;
    ctx.report.param("system", system);
    let sys = doc.system(system)?;
    let (promoted, rep) = promote_and_verify(sys, ctx.global.samples, &ctx.tester)?;
    push_integrability(ctx, &rep);
    let mut d = SystemDoc::new();
    let mut sys2 = promoted.clone();
    sys2.name = format!("{system}_promoted");
    d.add_system(&sys2)?;
    ctx.report.result = json!({
        "kind": promoted.kind(),
        "operators": promoted.operators.iter().map(|o| o.to_string()).collect::<Vec<_>>(),
        "document": dsl::serialize(&d),
        "report": rep,
    });
    Ok(())
}

fn normal(ctx: &mut Ctx, path: &Path, name: &str, chart: &str, sections: &[String]) -> CliResult<()> {
    let doc = ctx.load(path)?;
    ctx.report.param("sds", name).param("chart", chart).param("section", sections);
    let x = ctx.sds(&doc, name)?;
    let c = doc.chart(chart)?;
    if x.chart.same_as(c).is_err() {
        return Err(CliError::Usage(format!("{name} lives on chart {}, not {chart}", x.chart.name)));
    }
    let mut section = Vec::new();
    for s in sections {
        let (angle, value) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--section expects ANGLE=VALUE, got `{s}`")))?;
        let e = dsl::parse_expression(value.trim(), c, &doc).map_err(CliError::Parse)?;
        section.push((angle.trim().to_string(), e));
    }
    let pairs: Vec<(&str, ScalarExpr)> = section.iter().map(|(a, e)| (a.as_str(), e.clone())).collect();
    let y = match normal_form(x, &pairs, &ctx.tester) {
        Ok(y) => y,
        Err(e @ (IntegrabilityError::NotTorusInvariant(_) | IntegrabilityError::NotEquivalent)) => {
            ctx.report.push(Verdict::new("generator admits a normal form", false).with_witness(json!(e.to_string())));
            return Ok(());
        }
        Err(e) => return Err(e.into()),
    };
    let eq = diffusion_equivalent(x, &y, &ctx.tester)?;
    ctx.report.push(Verdict::zero(format!("normal form is diffusion equivalent to {name}"), &eq, ctx.global.symbolic));
    let angles: Vec<&str> = pairs.iter().map(|(a, _)| *a).collect();
    let free = y
        .fields()
        .all(|v| v.components.iter().all(|c| angles.iter().all(|a| !c.depends_on(a))));
    ctx.report.push(Verdict::new("normal form coefficients are free of the section angles", free));
    ctx.report.result = json!({ "document": as_document(&format!("{name}_normal"), &y)? });
    Ok(())
}

fn parse(ctx: &mut Ctx, path: &Path, canonical: bool) -> CliResult<()> {
    let doc = ctx.load(path)?;
    let counts: serde_json::Map<String, Value> =
        doc.counts().iter().map(|(k, n)| (k.to_string(), json!(n))).collect();
    ctx.report.result = json!({ "definitions": counts });
    if canonical {
        ctx.text = Some(dsl::serialize(&doc));
    }
    Ok(())
}
