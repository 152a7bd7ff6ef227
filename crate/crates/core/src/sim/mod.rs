//! Stratonovich Heun integration, ensembles and the Monte Carlo checks built on them.
//!
//! Every path draws from its own ChaCha stream (`stream = path index` under a
//! master seed), and ensembles are collected in path order, so results are
//! bit-identical however rayon schedules the work.

mod density;
mod generator;
mod stats;
mod tensor;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Compiled, ExprError, FunctionTable, ScalarExpr};
use crate::geometry::{GeometryError, Sds};
use crate::operator::OperatorError;

pub use density::{
    adaptive_simpson, stationary_density_1d, DensityOptions, DensityReport, FokkerPlanckOracle, STATIONARITY_LIMIT,
};
pub use generator::{empirical_generator, generator_bias_study, BiasLevel, GeneratorEstimate, GeneratorOptions};
pub use stats::{
    ks_compare, martingale_test, mean_frequency, mean_var, median, unwrap_angle, EnsembleStats, Histogram, KsReport,
    MartingaleReport, ObservableStats, WindowStat, KS_C_01, MIN_MARTINGALE_PATHS,
};
pub use tensor::{
    basis_probes, canonical_symplectic, check_hamiltonian, symplectic_convergence, tensor_preservation,
    ConvergenceLevel, ConvergenceReport, TensorReport,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("horizon must be nonnegative and finite, got {0}")]
    BadHorizon(f64),
    #[error("initial point has {found} coordinates, chart has {expected}")]
    WrongDimension { expected: usize, found: usize },
    #[error("initial point {0:?} lies outside the chart domain")]
    OutOfDomain(Vec<f64>),
    #[error("{truncated} of {total} paths left the chart domain")]
    MostlyTruncated { truncated: usize, total: usize },
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("expected a one-dimensional chart, got dimension {0}")]
    NotOneDimensional(usize),
    #[error("noise coefficient vanishes or is undefined at {0}")]
    DegenerateNoise(f64),
    #[error("burn-in looks insufficient: the mean drifts between halves of the run (z = {z:.2})")]
    Nonstationary { z: f64 },
    #[error("field {field} is not Hamiltonian: d(i_X omega) has component {component} = {value:e} at {point:?}")]
    NotHamiltonian {
        field: usize,
        component: String,
        value: f64,
        point: Vec<f64>,
    },
    #[error("structure matrix must be square, antisymmetric and of the chart dimension")]
    BadStructure,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Master seed; path `i` draws from ChaCha stream `i` under it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RngConfig {
    pub seed: u64,
}

impl RngConfig {
    pub fn new(seed: u64) -> Self {
        RngConfig { seed }
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    /// A decorrelated configuration for an independent experiment.
    pub fn derive(&self, salt: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ salt.rotate_left(32));
        rng.set_stream(u64::MAX - salt);
        RngConfig {
            seed: rand::Rng::random(&mut rng),
        }
    }
}

/// How the time axis is stepped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum StepPolicy {
    Uniform,
    /// Steps of `min(dt, factor * |x|^2)`, for paths near a singular point
    /// at the origin. Away from it this is the uniform grid again; the
    /// state is still observed on the uniform grid only.
    Graded { factor: f64 },
    /// Graded steps no shorter than `min_step`, with states that cross a
    /// coordinate bound mirrored back into the domain (the predictor
    /// included). For processes that approach a polar boundary point
    /// arbitrarily closely without reaching it, where graded steps alone
    /// shrink without bound.
    Guarded { factor: f64, min_step: f64 },
}

impl StepPolicy {
    fn step_size(self, remaining: f64, x: &[f64]) -> f64 {
        let r2 = || x.iter().map(|v| v * v).sum::<f64>();
        match self {
            StepPolicy::Uniform => remaining,
            StepPolicy::Graded { factor } => remaining.min((factor * r2()).max(1e-30)),
            StepPolicy::Guarded { factor, min_step } => remaining.min((factor * r2()).max(min_step)),
        }
    }
}

/// An SDS compiled for fast numeric evaluation.
#[derive(Clone, Debug)]
pub struct Integrator {
    names: Vec<String>,
    drift: Vec<Compiled>,
    noise: Vec<Vec<Compiled>>,
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
    periods: Vec<Option<f64>>,
}

fn q_f64(q: &crate::expr::Q) -> f64 {
    use num_traits::ToPrimitive;
    q.to_f64().unwrap_or(f64::NAN)
}

fn compile_all(es: &[ScalarExpr], names: &[String], funcs: &FunctionTable) -> Result<Vec<Compiled>> {
    es.iter()
        .map(|e| if e.is_zero() { Ok(Compiled::constant(0.0)) } else { Ok(e.compile(names, funcs)?) })
        .collect()
}

impl Integrator {
    /// `funcs` gives numeric meaning to uninterpreted function symbols.
    pub fn new(x: &Sds, funcs: &FunctionTable) -> Result<Self> {
        let names = x.chart.names();
        Ok(Integrator {
            drift: compile_all(&x.drift.components, &names, funcs)?,
            noise: x
                .noise
                .iter()
                .map(|v| compile_all(&v.components, &names, funcs))
                .collect::<Result<_>>()?,
            lower: x.chart.coords.iter().map(|c| c.lower.as_ref().map(q_f64)).collect(),
            upper: x.chart.coords.iter().map(|c| c.upper.as_ref().map(q_f64)).collect(),
            periods: x.chart.coords.iter().map(|c| c.period_value()).collect(),
            names,
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn noise_count(&self) -> usize {
        self.noise.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn periods(&self) -> &[Option<f64>] {
        &self.periods
    }

    /// True if `x` satisfies the strict coordinate bounds and is finite.
    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, v)| {
            v.is_finite() && self.lower[i].is_none_or(|lo| *v > lo) && self.upper[i].is_none_or(|hi| *v < hi)
        })
    }

    fn check_start(&self, x0: &[f64]) -> Result<()> {
        if x0.len() != self.dim() {
            return Err(SimError::WrongDimension {
                expected: self.dim(),
                found: x0.len(),
            });
        }
        if !self.in_domain(x0) {
            return Err(SimError::OutOfDomain(x0.to_vec()));
        }
        Ok(())
    }

    /// Evaluates the drift and the noise fields at `x`.
    fn fields(&self, x: &[f64], drift: &mut [f64], noise: &mut [f64]) {
        let n = self.dim();
        for (d, c) in drift.iter_mut().zip(&self.drift) {
            *d = if c.is_zero() { 0.0 } else { c.eval(x) };
        }
        for (k, field) in self.noise.iter().enumerate() {
            for (j, c) in field.iter().enumerate() {
                noise[k * n + j] = if c.is_zero() { 0.0 } else { c.eval(x) };
            }
        }
    }

    /// Mirrors coordinates that crossed a bound back inside it.
    fn reflect(&self, x: &mut [f64]) {
        for (j, v) in x.iter_mut().enumerate() {
            if let Some(lo) = self.lower[j] {
                if *v <= lo {
                    *v = 2.0 * lo - *v;
                }
            }
            if let Some(hi) = self.upper[j] {
                if *v >= hi {
                    *v = 2.0 * hi - *v;
                }
            }
        }
    }

    /// One Heun step from `x` in place.
    pub fn step(&self, x: &mut [f64], dt: f64, dw: &[f64], work: &mut Workspace) {
        self.heun(x, dt, dw, work, false);
    }

    fn heun(&self, x: &mut [f64], dt: f64, dw: &[f64], work: &mut Workspace, reflect: bool) {
        let n = self.dim();
        self.fields(x, &mut work.drift, &mut work.noise);
        for j in 0..n {
            let mut v = x[j] + work.drift[j] * dt;
            for (k, w) in dw.iter().enumerate() {
                v += work.noise[k * n + j] * w;
            }
            work.pred[j] = v;
        }
        if reflect {
            self.reflect(&mut work.pred);
        }
        self.fields(&work.pred, &mut work.drift2, &mut work.noise2);
        for j in 0..n {
            let mut v = 0.5 * (work.drift[j] + work.drift2[j]) * dt;
            for (k, w) in dw.iter().enumerate() {
                v += 0.5 * (work.noise[k * n + j] + work.noise2[k * n + j]) * w;
            }
            x[j] += v;
        }
        if reflect {
            self.reflect(x);
        }
    }

    pub fn workspace(&self) -> Workspace {
        let n = self.dim();
        let m = self.noise_count();
        Workspace {
            drift: vec![0.0; n],
            drift2: vec![0.0; n],
            noise: vec![0.0; n * m],
            noise2: vec![0.0; n * m],
            pred: vec![0.0; n],
        }
    }

    /// Runs a path, calling `observe(step_index, time, state)` on the
    /// uniform grid. Returns the final state, or `None` if the path left
    /// the domain. Periodic coordinates are not wrapped here.
    pub fn run(
        &self,
        x0: &[f64],
        dt: f64,
        steps: usize,
        rng: &mut ChaCha8Rng,
        policy: StepPolicy,
        observe: impl FnMut(usize, f64, &[f64]),
    ) -> Option<Vec<f64>> {
        let normals = |z: &mut [f64]| {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
        };
        self.run_with(x0, dt, steps, policy, normals, observe)
    }

    /// As [`Integrator::run`], with standard normal draws supplied by
    /// `normals` (one slice per step, one entry per noise field).
    pub fn run_with(
        &self,
        x0: &[f64],
        dt: f64,
        steps: usize,
        policy: StepPolicy,
        normals: impl FnMut(&mut [f64]),
        observe: impl FnMut(usize, f64, &[f64]),
    ) -> Option<Vec<f64>> {
        self.run_core(x0, dt, steps, policy, normals, |_| {}, observe)
    }

    /// `substep` sees the state after every internal step, including the
    /// graded ones between grid points.
    #[allow(clippy::too_many_arguments)]
    fn run_core(
        &self,
        x0: &[f64],
        dt: f64,
        steps: usize,
        policy: StepPolicy,
        mut normals: impl FnMut(&mut [f64]),
        mut substep: impl FnMut(&[f64]),
        mut observe: impl FnMut(usize, f64, &[f64]),
    ) -> Option<Vec<f64>> {
        let mut x = x0.to_vec();
        let mut work = self.workspace();
        let mut dw = vec![0.0; self.noise_count()];
        observe(0, 0.0, &x);
        let mut t = 0.0;
        for i in 1..=steps {
            let target = i as f64 * dt;
            loop {
                let remaining = target - t;
                if remaining <= 1e-12 * dt {
                    break;
                }
                let h = policy.step_size(remaining, &x);
                normals(&mut dw);
                let sd = h.sqrt();
                dw.iter_mut().for_each(|w| *w *= sd);
                self.heun(&mut x, h, &dw, &mut work, matches!(policy, StepPolicy::Guarded { .. }));
                if !self.in_domain(&x) {
                    return None;
                }
                substep(&x);
                t += h;
            }
            t = target;
            observe(i, target, &x);
        }
        Some(x)
    }

    /// Final states of `paths` independent paths, in path order. Paths
    /// that left the domain are `None`.
    pub fn endpoints(
        &self,
        x0: &[f64],
        dt: f64,
        horizon: f64,
        paths: usize,
        rng: &RngConfig,
        policy: StepPolicy,
    ) -> Result<Vec<Option<Vec<f64>>>> {
        let steps = grid_steps(dt, horizon)?;
        self.check_start(x0)?;
        Ok((0..paths)
            .into_par_iter()
            .map(|p| {
                let mut r = rng.stream(p as u64);
                self.run(x0, dt, steps, &mut r, policy, |_, _, _| {})
            })
            .collect())
    }

    /// Polar angle of the coordinate pair `(i, j)` lifted to the real line,
    /// sampled at every `stride`-th grid point and at the horizon, for each
    /// of `paths` paths (in path order).
    /// Unwrapping follows the nearest branch after every internal step, so
    /// a graded policy keeps it reliable close to the origin. Paths that
    /// left the domain are `None`.
    #[allow(clippy::too_many_arguments)]
    pub fn lifted_angle_paths(
        &self,
        x0: &[f64],
        pair: (usize, usize),
        dt: f64,
        horizon: f64,
        paths: usize,
        stride: usize,
        rng: &RngConfig,
        policy: StepPolicy,
    ) -> Result<Vec<Option<Vec<f64>>>> {
        use std::f64::consts::{PI, TAU};
        let steps = grid_steps(dt, horizon)?;
        if stride == 0 {
            return Err(SimError::InvalidArgument("stride must be positive".into()));
        }
        self.check_start(x0)?;
        let (i, j) = pair;
        Ok((0..paths)
            .into_par_iter()
            .map(|p| {
                let mut r = rng.stream(p as u64);
                let normals = |z: &mut [f64]| {
                    for v in z.iter_mut() {
                        *v = StandardNormal.sample(&mut r);
                    }
                };
                let raw0 = x0[j].atan2(x0[i]);
                let lifted = std::cell::Cell::new((raw0, raw0));
                let track = |s: &[f64]| {
                    let (raw, acc) = lifted.get();
                    let now = s[j].atan2(s[i]);
                    lifted.set((now, acc + (now - raw + PI).rem_euclid(TAU) - PI));
                };
                let mut out = Vec::with_capacity(steps / stride + 2);
                self.run_core(x0, dt, steps, policy, normals, track, |k, _, _| {
                    if k % stride == 0 || k == steps {
                        out.push(lifted.get().1)
                    }
                })?;
                Some(out)
            })
            .collect())
    }
}

/// Scratch buffers for [`Integrator::step`].
#[derive(Clone, Debug)]
pub struct Workspace {
    drift: Vec<f64>,
    drift2: Vec<f64>,
    noise: Vec<f64>,
    noise2: Vec<f64>,
    pred: Vec<f64>,
}

fn grid_steps(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::NonPositiveStep(dt));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(SimError::BadHorizon(horizon));
    }
    Ok((horizon / dt).round() as usize)
}

/// A sampled path on the uniform grid `t_k = k dt`.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub dt: f64,
    pub horizon: f64,
    pub names: Vec<String>,
    /// States with periodic coordinates accumulated on the real line.
    pub states: Vec<Vec<f64>>,
    /// Flow Jacobians `∂x_t/∂x_0`, row-major, when the variational
    /// equation was integrated alongside.
    pub jacobians: Option<Vec<Vec<f64>>>,
    /// Step index of the first exit from the domain, if any; `states`
    /// stops just before it.
    pub truncated_at: Option<usize>,
    pub seed: u64,
    pub stream: u64,
    #[serde(skip)]
    periods: Vec<Option<f64>>,
}

impl Trajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(|k| k as f64 * self.dt)
    }

    /// State `k` with periodic coordinates reduced to `[0, period)`.
    pub fn wrapped(&self, k: usize) -> Vec<f64> {
        self.states[k]
            .iter()
            .zip(&self.periods)
            .map(|(v, p)| p.map_or(*v, |p| v.rem_euclid(p)))
            .collect()
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated_at.is_some()
    }

    /// CSV with a header `t,<coords>`; periodic coordinates wrapped.
    pub fn to_csv(&self) -> String {
        let mut out = format!("t,{}\n", self.names.join(","));
        for (k, t) in self.times().enumerate() {
            let row: Vec<String> = self.wrapped(k).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{t},{}", row.join(","));
        }
        out
    }
}

/// Integrates one path of `x` from `x0` on the grid `k dt`, `k ≤ T/dt`.
pub fn integrate(
    x: &Sds,
    funcs: &FunctionTable,
    x0: &[f64],
    dt: f64,
    horizon: f64,
    rng: &RngConfig,
    stream: u64,
) -> Result<Trajectory> {
    let integ = Integrator::new(x, funcs)?;
    integrate_with(&integ, x0, dt, horizon, rng, stream)
}

pub fn integrate_with(
    integ: &Integrator,
    x0: &[f64],
    dt: f64,
    horizon: f64,
    rng: &RngConfig,
    stream: u64,
) -> Result<Trajectory> {
    let steps = grid_steps(dt, horizon)?;
    integ.check_start(x0)?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut r = rng.stream(stream);
    let end = integ.run(x0, dt, steps, &mut r, StepPolicy::Uniform, |_, _, s| states.push(s.to_vec()));
    let truncated_at = end.is_none().then_some(states.len());
    Ok(Trajectory {
        dt,
        horizon: steps as f64 * dt,
        names: integ.names.clone(),
        states,
        jacobians: None,
        truncated_at,
        seed: rng.seed,
        stream,
        periods: integ.periods.clone(),
    })
}

/// Values of `f` at the ends of an ensemble, and how many paths were lost.
pub fn observe_endpoints(
    f: &Compiled,
    ends: &[Option<Vec<f64>>],
) -> (Vec<f64>, usize) {
    let mut values = Vec::with_capacity(ends.len());
    let mut lost = 0;
    for e in ends {
        match e {
            Some(x) => values.push(f.eval(x)),
            None => lost += 1,
        }
    }
    (values, lost)
}
