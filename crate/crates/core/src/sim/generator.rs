use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::stats::mean_var;
use super::{grid_steps, Integrator, Result, RngConfig, SimError, StepPolicy};
use crate::expr::FunctionTable;
use crate::geometry::{ScalarField, Sds};
use crate::operator::generator;

/// Settings for a small-time estimate of the generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeneratorOptions {
    pub t: f64,
    /// Number of paths; used in antithetic pairs, so rounded up to even.
    pub paths: usize,
    /// Heun steps per path.
    pub substeps: usize,
    /// Slope `C` of the allowed discretisation bias `C t`.
    pub bias_constant: f64,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        GeneratorOptions {
            t: 1e-3,
            paths: 20_000,
            substeps: 10,
            bias_constant: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorEstimate {
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// The generator applied to `f`, evaluated at the point.
    pub symbolic: f64,
    pub bias_allowance: f64,
    pub paths: usize,
    pub truncated: usize,
    pub pass: bool,
}

/// Monte Carlo estimate of `(E[f(x_t)] - f(x)) / t`. Paths come in
/// antithetic pairs driven by `W` and `-W`, which cancels the leading
/// `O(t^{-1/2})` noise term; the standard error is taken over pair means.
pub fn empirical_generator(
    x: &Sds,
    f: &ScalarField,
    funcs: &FunctionTable,
    point: &[f64],
    opts: &GeneratorOptions,
    rng: &RngConfig,
) -> Result<GeneratorEstimate> {
    x.chart.same_as(&f.chart)?;
    if opts.paths < 100 {
        return Err(SimError::TooFewSamples {
            needed: 100,
            found: opts.paths,
        });
    }
    if opts.substeps == 0 {
        return Err(SimError::InvalidArgument("substeps must be positive".into()));
    }
    let integ = Integrator::new(x, funcs)?;
    integ.check_start(point)?;
    let names = x.chart.names();
    let fc = f.value.compile(&names, funcs)?;
    let symbolic = generator(x).apply_field(f)?.compile(&names, funcs)?.eval(point);
    let dt = opts.t / opts.substeps as f64;
    let steps = grid_steps(dt, opts.t)?;
    let f0 = fc.eval(point);
    let pairs = opts.paths.div_ceil(2);

    let means: Vec<Option<f64>> = (0..pairs)
        .into_par_iter()
        .map(|p| {
            let mut r = rng.stream(p as u64);
            let draws: Vec<f64> = (0..steps * integ.noise_count()).map(|_| StandardNormal.sample(&mut r)).collect();
            let mut ends = [0.0; 2];
            for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
                let mut chunks = draws.chunks(integ.noise_count().max(1));
                let normals = |z: &mut [f64]| {
                    if let Some(c) = chunks.next() {
                        for (v, w) in z.iter_mut().zip(c) {
                            *v = sign * w;
                        }
                    }
                };
                let end = integ.run_with(point, dt, steps, StepPolicy::Uniform, normals, |_, _, _| {})?;
                ends[k] = fc.eval(&end);
            }
            Some(0.5 * (ends[0] + ends[1]))
        })
        .collect();
    let kept: Vec<f64> = means.iter().flatten().copied().collect();
    let truncated = pairs - kept.len();
    if 2 * truncated > pairs || kept.len() < 2 {
        return Err(SimError::MostlyTruncated {
            truncated: 2 * truncated,
            total: 2 * pairs,
        });
    }
    let (m, v) = mean_var(&kept);
    let estimate = (m - f0) / opts.t;
    let stderr = (v / kept.len() as f64).sqrt() / opts.t;
    let bias_allowance = opts.bias_constant * opts.t;
    Ok(GeneratorEstimate {
        t: opts.t,
        estimate,
        stderr,
        symbolic,
        bias_allowance,
        paths: 2 * pairs,
        truncated: 2 * truncated,
        pass: (estimate - symbolic).abs() <= 3.0 * stderr + bias_allowance,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasLevel {
    pub t: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub bias: f64,
}

/// Estimates at each `t` in `ts` with a common seed, reporting
/// `estimate - symbolic` as the bias.
pub fn generator_bias_study(
    x: &Sds,
    f: &ScalarField,
    funcs: &FunctionTable,
    point: &[f64],
    ts: &[f64],
    opts: &GeneratorOptions,
    rng: &RngConfig,
) -> Result<Vec<BiasLevel>> {
    ts.iter()
        .map(|&t| {
            let e = empirical_generator(x, f, funcs, point, &GeneratorOptions { t, ..*opts }, rng)?;
            Ok(BiasLevel {
                t,
                estimate: e.estimate,
                stderr: e.stderr,
                bias: e.estimate - e.symbolic,
            })
        })
        .collect()
}
