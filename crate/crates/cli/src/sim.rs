use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use sds_core::sim::{
    canonical_symplectic, empirical_generator, ks_compare, martingale_test, mean_frequency, stationary_density_1d,
    symplectic_convergence, tensor_preservation, DensityOptions, EnsembleStats, GeneratorOptions, Integrator,
    RngConfig, SimError, StepPolicy,
};
use serde_json::json;

use crate::commands::{CliError, CliResult, Ctx};
use crate::report::Verdict;

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    Uniform,
    Graded,
    Guarded,
}

#[derive(Args, Debug, Clone)]
pub struct Stepping {
    #[arg(long, default_value_t = 1e-2)]
    pub dt: f64,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, value_enum, default_value_t = Policy::Uniform)]
    pub policy: Policy,
    /// Graded steps are `factor * |x|^2`, capped by `--dt`.
    #[arg(long, default_value_t = 0.01)]
    pub step_factor: f64,
    /// Shortest step of the guarded policy.
    #[arg(long, default_value_t = 1e-8)]
    pub min_step: f64,
}

impl Stepping {
    fn policy(&self) -> StepPolicy {
        match self.policy {
            Policy::Uniform => StepPolicy::Uniform,
            Policy::Graded => StepPolicy::Graded { factor: self.step_factor },
            Policy::Guarded => StepPolicy::Guarded {
                factor: self.step_factor,
                min_step: self.min_step,
            },
        }
    }

    fn record(&self, ctx: &mut Ctx) {
        ctx.report
            .param("dt", self.dt)
            .param("horizon", self.horizon)
            .param("paths", self.paths)
            .param("policy", self.policy());
    }
}

#[derive(Subcommand, Debug)]
pub enum Sim {
    /// Integrate paths; one path gives the trajectory, more give endpoint statistics.
    #[command(allow_negative_numbers = true)]
    Run {
        doc: PathBuf,
        sds: String,
        #[arg(long, value_delimiter = ',', required = true)]
        start: Vec<f64>,
        #[command(flatten)]
        step: Stepping,
    },
    /// Small-time Monte Carlo estimate of the generator applied to a scalar.
    #[command(allow_negative_numbers = true)]
    Generator {
        doc: PathBuf,
        sds: String,
        scalar: String,
        #[arg(long, value_delimiter = ',', required = true)]
        at: Vec<f64>,
        #[arg(long, default_value_t = 1e-3)]
        t: f64,
        #[arg(long, default_value_t = 20_000)]
        paths: usize,
        #[arg(long, default_value_t = 10)]
        substeps: usize,
    },
    /// Long-run histogram of a one-dimensional system against its stationary density.
    #[command(allow_negative_numbers = true)]
    Density {
        doc: PathBuf,
        sds: String,
        #[arg(long)]
        lo: f64,
        #[arg(long)]
        hi: f64,
        #[arg(long, default_value_t = 30)]
        bins: usize,
        #[arg(long)]
        start: f64,
        #[arg(long, default_value_t = 5.0)]
        burn_in: f64,
        #[arg(long, default_value_t = 1.0)]
        spacing: f64,
        #[arg(long, default_value_t = 20)]
        samples_per_path: usize,
        #[arg(long, default_value_t = 3)]
        mode_window: usize,
        /// Largest accepted sup distance between histogram and density.
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        #[command(flatten)]
        step: Stepping,
    },
    /// Whether an observable minus `rate * t` has mean-zero increments.
    #[command(allow_negative_numbers = true)]
    Martingale {
        doc: PathBuf,
        sds: String,
        #[arg(long, value_delimiter = ',', required = true)]
        start: Vec<f64>,
        /// Lifted polar angle of this coordinate pair, e.g. `x,y`.
        #[arg(long, value_delimiter = ',', conflicts_with = "observable")]
        angle: Vec<String>,
        /// Any scalar (a name or an expression).
        #[arg(long)]
        observable: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        #[arg(long, default_value_t = 10)]
        windows: usize,
        /// Record every `stride`-th grid point.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[command(flatten)]
        step: Stepping,
    },
    /// Two-sample Kolmogorov-Smirnov test between observables of two systems at the horizon.
    #[command(allow_negative_numbers = true)]
    Ks {
        doc: PathBuf,
        first: String,
        second: String,
        #[arg(long, value_delimiter = ',', required = true)]
        start_first: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        start_second: Vec<f64>,
        /// Defaults to the first coordinate.
        #[arg(long)]
        observe_first: Option<String>,
        #[arg(long)]
        observe_second: Option<String>,
        #[command(flatten)]
        step: Stepping,
    },
    /// Preservation of the canonical symplectic form by the stochastic flow.
    #[command(allow_negative_numbers = true)]
    Tensor {
        doc: PathBuf,
        sds: String,
        #[arg(long, value_delimiter = ',', required = true)]
        start: Vec<f64>,
        #[arg(long, default_value_t = 4e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 50)]
        paths: usize,
        /// Step halvings in the convergence study.
        #[arg(long, default_value_t = 4)]
        levels: usize,
        #[arg(long, default_value_t = 0.9)]
        min_order: f64,
    },
}

impl Sim {
    pub fn name(&self) -> &'static str {
        match self {
            Sim::Run { .. } => "run",
            Sim::Generator { .. } => "generator",
            Sim::Density { .. } => "density",
            Sim::Martingale { .. } => "martingale",
            Sim::Ks { .. } => "ks",
            Sim::Tensor { .. } => "tensor",
        }
    }
}

fn csv_row(values: impl IntoIterator<Item = String>) -> String {
    let mut s = values.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

pub fn run(ctx: &mut Ctx, s: &Sim) -> CliResult<()> {
    let rng = RngConfig::new(ctx.global.seed);
    match s {
        Sim::Run { doc, sds, start, step } => run_paths(ctx, doc, sds, start, step, &rng),
        Sim::Generator { doc, sds, scalar, at, t, paths, substeps } => {
            let d = ctx.load(doc)?;
            ctx.report
                .param("sds", sds)
                .param("scalar", scalar)
                .param("at", at)
                .param("t", t)
                .param("paths", paths)
                .param("substeps", substeps);
            let x = ctx.sds(&d, sds)?;
            let f = ctx.scalar(&d, &x.chart, scalar)?;
            let opts = GeneratorOptions {
                t: *t,
                paths: *paths,
                substeps: *substeps,
                ..GeneratorOptions::default()
            };
            let e = empirical_generator(x, &f, &ctx.funcs, at, &opts, &rng)?;
            let claim = format!("estimate within 3 stderr + {} t of A_{sds}(F)", opts.bias_constant);
            let mut v = Verdict::new(claim, e.pass);
            if !e.pass {
                v = v.with_witness(json!({ "estimate": e.estimate, "symbolic": e.symbolic, "stderr": e.stderr }));
            }
            ctx.report.push(v);
            ctx.table = Some(
                "t,estimate,stderr,symbolic,paths,truncated\n".to_string()
                    + &csv_row([e.t, e.estimate, e.stderr, e.symbolic].map(|v| v.to_string()).into_iter().chain([
                        e.paths.to_string(),
                        e.truncated.to_string(),
                    ])),
            );
            ctx.report.result = json!(e);
            Ok(())
        }
        Sim::Density {
            doc,
            sds,
            lo,
            hi,
            bins,
            start,
            burn_in,
            spacing,
            samples_per_path,
            mode_window,
            tol,
            step,
        } => {
            let d = ctx.load(doc)?;
            step.record(ctx);
            ctx.report.param("sds", sds).param("tol", tol);
            let x = ctx.sds(&d, sds)?;
            let opts = DensityOptions {
                lo: *lo,
                hi: *hi,
                bins: *bins,
                start: *start,
                dt: step.dt,
                burn_in: *burn_in,
                spacing: *spacing,
                samples_per_path: *samples_per_path,
                paths: step.paths,
                mode_window: *mode_window,
                policy: step.policy(),
            };
            ctx.report.param("density", opts);
            match stationary_density_1d(x, &ctx.funcs, &opts, &rng) {
                Ok(rep) => {
                    let worst = rep
                        .z_scores
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                        .map(|(i, z)| json!({ "bin": i, "center": rep.histogram.center(i), "z": z }));
                    let mut v = Verdict::new(format!("sup distance to the stationary density <= {tol}"), rep.sup_distance <= *tol)
                        .with_detail(json!({ "sup_distance": rep.sup_distance }));
                    if rep.sup_distance > *tol {
                        v = v.with_witness(worst.unwrap_or_default());
                    }
                    ctx.report.push(v);
                    ctx.table = Some(rep.to_csv());
                    ctx.report.result = json!(rep);
                }
                Err(e @ (SimError::Nonstationary { .. } | SimError::MostlyTruncated { .. })) => {
                    ctx.report.push(Verdict::new("ensemble reached a stationary state", false).with_witness(json!(e.to_string())));
                }
                Err(e) => return Err(e.into()),
            }
            Ok(())
        }
        Sim::Martingale { doc, sds, start, angle, observable, rate, windows, stride, step } => {
            let d = ctx.load(doc)?;
            step.record(ctx);
            ctx.report
                .param("sds", sds)
                .param("start", start)
                .param("rate", rate)
                .param("windows", windows)
                .param("stride", stride);
            let x = ctx.sds(&d, sds)?;
            let integ = Integrator::new(x, &ctx.funcs)?;
            let steps = (step.horizon / step.dt).round() as usize;
            let series: Vec<Option<Vec<f64>>> = match (angle.as_slice(), observable) {
                ([a, b], None) => {
                    let pair = [a.clone(), b.clone()];
                    ctx.report.param("angle", &pair);
                    let index = |n: &str| {
                        x.chart.index_of(n).ok_or_else(|| CliError::Usage(format!("`{n}` is not a coordinate of {}", x.chart.name)))
                    };
                    let pair = (index(&pair[0])?, index(&pair[1])?);
                    integ.lifted_angle_paths(start, pair, step.dt, step.horizon, step.paths, *stride, &rng, step.policy())?
                }
                ([], Some(obs)) => {
                    ctx.report.param("observable", obs);
                    let f = ctx.scalar(&d, &x.chart, obs)?.value.compile(&x.chart.names(), &ctx.funcs)?;
                    if *stride == 0 {
                        return Err(CliError::Usage("--stride must be positive".into()));
                    }
                    if !x.chart.contains(start) {
                        return Err(SimError::OutOfDomain(start.clone()).into());
                    }
                    (0..step.paths)
                        .map(|p| {
                            let mut r = rng.stream(p as u64);
                            let mut out = Vec::new();
                            integ
                                .run(start, step.dt, steps, &mut r, step.policy(), |k, _, s| {
                                    if k % stride == 0 || k == steps {
                                        out.push(f.eval(s))
                                    }
                                })
                                .map(|_| out)
                        })
                        .collect()
                }
                _ => return Err(CliError::Usage("give either --angle with two coordinates or --observable".into())),
            };
            let kept: Vec<Vec<f64>> = series.iter().flatten().cloned().collect();
            let truncated = series.len() - kept.len();
            let time = |i: usize| (i * stride).min(steps) as f64 * step.dt;
            let shifted: Vec<Vec<f64>> = kept
                .iter()
                .map(|s| s.iter().enumerate().map(|(i, v)| v - rate * time(i)).collect())
                .collect();
            let rep = martingale_test(&shifted, *windows)?;
            let (freq, freq_se) = mean_frequency(&kept, step.horizon);
            let mut v = Verdict::new(format!("increments minus {rate} t have mean zero in every window"), rep.pass)
                .with_detail(json!({ "max_abs_z": rep.max_abs_z }));
            if let Some(w) = rep.windows.iter().find(|w| w.z.abs() >= 3.0) {
                v = v.with_witness(json!(w));
            }
            ctx.report.push(v);
            let mut table = String::from("from,to,mean,stderr,z\n");
            for w in &rep.windows {
                table += &csv_row([time(w.from), time(w.to), w.mean, w.stderr, w.z].map(|v| v.to_string()));
            }
            ctx.table = Some(table);
            ctx.report.result = json!({
                "martingale": rep,
                "truncated": truncated,
                "mean_rate": freq,
                "mean_rate_stderr": freq_se,
            });
            Ok(())
        }
        Sim::Ks {
            doc,
            first,
            second,
            start_first,
            start_second,
            observe_first,
            observe_second,
            step,
        } => {
            let d = ctx.load(doc)?;
            step.record(ctx);
            ctx.report.param("first", first).param("second", second);
            let mut samples = Vec::new();
            for (k, (name, start, obs)) in
                [(first, start_first, observe_first), (second, start_second, observe_second)].into_iter().enumerate()
            {
                let x = ctx.sds(&d, name)?;
                let names = x.chart.names();
                let text = obs.clone().unwrap_or_else(|| names[0].clone());
                ctx.report.param(&format!("observe_{}", ["first", "second"][k]), &text);
                let f = ctx.scalar(&d, &x.chart, &text)?.value.compile(&names, &ctx.funcs)?;
                let integ = Integrator::new(x, &ctx.funcs)?;
                let ends = integ.endpoints(start, step.dt, step.horizon, step.paths, &rng.derive(k as u64 + 1), step.policy())?;
                let (values, lost) = sds_core::sim::observe_endpoints(&f, &ends);
                samples.push((values, lost));
            }
            let ks = ks_compare(&samples[0].0, &samples[1].0)?;
            let mut v = Verdict::new(format!("{first} and {second} agree in law at the horizon (1% level)"), ks.pass);
            if !ks.pass {
                v = v.with_witness(json!({ "statistic": ks.statistic, "critical": ks.critical }));
            }
            ctx.report.push(v);
            ctx.table = Some(
                "statistic,critical,n_first,n_second\n".to_string()
                    + &csv_row([ks.statistic.to_string(), ks.critical.to_string(), ks.n_a.to_string(), ks.n_b.to_string()]),
            );
            ctx.report.result = json!({ "ks": ks, "truncated": [samples[0].1, samples[1].1] });
            Ok(())
        }
        Sim::Tensor { doc, sds, start, dt, horizon, paths, levels, min_order } => {
            let d = ctx.load(doc)?;
            ctx.report
                .param("sds", sds)
                .param("start", start)
                .param("dt", dt)
                .param("horizon", horizon)
                .param("paths", paths)
                .param("levels", levels);
            let x = ctx.sds(&d, sds)?;
            let n = x.chart.dim();
            if n % 2 != 0 {
                return Err(CliError::Usage(format!("chart {} has odd dimension {n}", x.chart.name)));
            }
            let omega = canonical_symplectic(n / 2);
            let single = match tensor_preservation(x, &ctx.funcs, &omega, start, *dt, *horizon, &rng, 0, &[]) {
                Ok(t) => t,
                Err(SimError::NotHamiltonian { field, component, value, point }) => {
                    let w = json!({ "field": field, "component": component, "value": value, "point": point });
                    ctx.report.push(Verdict::new("every field is Hamiltonian", false).with_witness(w));
                    return Ok(());
                }
                Err(e) => return Err(e.into()),
            };
            ctx.report.push(Verdict::new("every field is Hamiltonian", true));
            let conv = symplectic_convergence(x, &ctx.funcs, &omega, start, *dt, *levels, *horizon, *paths, &rng)?;
            let mut v = Verdict::new(format!("deviation from the form shrinks at order >= {min_order}"), conv.order >= *min_order)
                .with_detail(json!({ "order": conv.order }));
            if conv.order < *min_order {
                v = v.with_witness(json!(conv.levels));
            }
            ctx.report.push(v);
            let mut table = String::from("dt,mean_deviation,stderr\n");
            for l in &conv.levels {
                table += &csv_row([l.dt, l.mean_deviation, l.stderr].map(|v| v.to_string()));
            }
            ctx.table = Some(table);
            ctx.report.result = json!({
                "single_path": { "max_deviation": single.max_deviation, "final_deviation": single.final_deviation },
                "convergence": conv,
            });
            Ok(())
        }
    }
}

fn run_paths(ctx: &mut Ctx, doc: &Path, name: &str, start: &[f64], step: &Stepping, rng: &RngConfig) -> CliResult<()> {
    let d = ctx.load(doc)?;
    step.record(ctx);
    ctx.report.param("sds", name).param("start", start);
    let x = ctx.sds(&d, name)?;
    let integ = Integrator::new(x, &ctx.funcs)?;
    let names = x.chart.names();
    if step.paths == 1 {
        let t = sds_core::sim::integrate_with(&integ, start, step.dt, step.horizon, rng, 0)?;
        let mut v = Verdict::new("path stays in the chart domain", !t.is_truncated());
        if let Some(k) = t.truncated_at {
            v = v.with_witness(json!({ "step": k, "last_state": t.states.last() }));
        }
        ctx.report.push(v);
        ctx.table = Some(t.to_csv());
        ctx.report.result = json!({ "trajectory": t });
        return Ok(());
    }
    let ends = integ.endpoints(start, step.dt, step.horizon, step.paths, rng, step.policy())?;
    let kept: Vec<&Vec<f64>> = ends.iter().flatten().collect();
    let lost = ends.len() - kept.len();
    let mut v = Verdict::new("at most half of the paths leave the chart domain", 2 * lost <= ends.len());
    if let Some(p) = ends.iter().position(Option::is_none) {
        v = v.with_witness(json!({ "first_truncated_path": p, "truncated": lost }));
    }
    ctx.report.push(v);
    let mut table = format!("path,{}\n", names.join(","));
    for (p, e) in ends.iter().enumerate() {
        if let Some(e) = e {
            table += &csv_row(std::iter::once(p.to_string()).chain(e.iter().map(|v| v.to_string())));
        }
    }
    ctx.table = Some(table);
    let cols: Vec<Vec<f64>> = (0..names.len()).map(|k| kept.iter().map(|e| e[k]).collect()).collect();
    let stats = EnsembleStats::new(&names, &cols, lost).ok();
    ctx.report.result = json!({ "stats": stats });
    Ok(())
}
