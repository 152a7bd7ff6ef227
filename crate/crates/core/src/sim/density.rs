use rayon::prelude::*;
use serde::Serialize;

use super::stats::{mean_var, median, Histogram};
use super::{Integrator, Result, RngConfig, SimError, StepPolicy};
use crate::expr::{Compiled, FunctionTable};
use crate::geometry::Sds;
use crate::operator::generator;

/// Adaptive Simpson quadrature of `f` on `[a, b]`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Zero-flux stationary density of a one-dimensional generator
/// `a(r) d²/dr² + b(r) d/dr`, namely `p ∝ exp(∫ b/a) / a`, normalised on
/// a range.
#[derive(Clone, Debug)]
pub struct FokkerPlanckOracle {
    diffusion: Compiled,
    drift: Compiled,
    lo: f64,
    hi: f64,
    reference: f64,
    norm: f64,
}

impl FokkerPlanckOracle {
    pub fn new(x: &Sds, funcs: &FunctionTable, lo: f64, hi: f64) -> Result<Self> {
        if x.chart.dim() != 1 {
            return Err(SimError::NotOneDimensional(x.chart.dim()));
        }
        if !(lo < hi) {
            return Err(SimError::InvalidArgument(format!("empty range [{lo}, {hi}]")));
        }
        let l = generator(x);
        let names = x.chart.names();
        let mut o = FokkerPlanckOracle {
            diffusion: l.coefficient(&[2]).compile(&names, funcs)?,
            drift: l.coefficient(&[1]).compile(&names, funcs)?,
            lo,
            hi,
            reference: 0.5 * (lo + hi),
            norm: 1.0,
        };
        for r in (1..64).map(|i| lo + (hi - lo) * i as f64 / 64.0) {
            let a = o.diffusion.eval(&[r]);
            if !(a.is_finite() && a > 0.0) {
                return Err(SimError::DegenerateNoise(r));
            }
        }
        o.norm = o.raw_mass(lo, hi);
        Ok(o)
    }

    fn log_unnormalised(&self, r: f64) -> f64 {
        let a = self.diffusion.eval(&[r]);
        let ratio = |s: f64| self.drift.eval(&[s]) / self.diffusion.eval(&[s]);
        let integral = if r >= self.reference {
            adaptive_simpson(&ratio, self.reference, r, 1e-11)
        } else {
            -adaptive_simpson(&ratio, r, self.reference, 1e-11)
        };
        integral - a.ln()
    }

    fn unnormalised(&self, r: f64) -> f64 {
        let v = self.log_unnormalised(r).exp();
        if v.is_finite() {
            v
        } else {
            0.0
        }
    }

    /// Endpoints are nudged inwards so a singular boundary is never evaluated.
    fn raw_mass(&self, a: f64, b: f64) -> f64 {
        let eps = 1e-9 * (self.hi - self.lo);
        adaptive_simpson(&|r| self.unnormalised(r), a.max(self.lo + eps), b.min(self.hi - eps), 1e-10)
    }

    pub fn density(&self, r: f64) -> f64 {
        if r <= self.lo || r >= self.hi {
            return 0.0;
        }
        self.unnormalised(r) / self.norm
    }

    /// Probability of `[a, b]` under the normalised density.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        self.raw_mass(a, b) / self.norm
    }

    /// Total mass recomputed by composite Simpson on a fine grid: an
    /// independent check on the normalisation.
    pub fn normalization_check(&self) -> f64 {
        let n = 20_000;
        let h = (self.hi - self.lo) / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * self.density(self.lo + h * i as f64);
        }
        s * h / 3.0
    }

    pub fn mean(&self) -> f64 {
        let eps = 1e-9 * (self.hi - self.lo);
        adaptive_simpson(&|r| r * self.density(r), self.lo + eps, self.hi - eps, 1e-10)
    }
}

/// Settings for a long-run density estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DensityOptions {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    pub start: f64,
    pub dt: f64,
    pub burn_in: f64,
    /// Time between recorded samples on each path.
    pub spacing: f64,
    pub samples_per_path: usize,
    pub paths: usize,
    /// Bins on each side of the fullest one used to fit the mode.
    pub mode_window: usize,
    pub policy: StepPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityReport {
    pub histogram: Histogram,
    /// Oracle mass of each bin divided by the bin width.
    pub oracle: Vec<f64>,
    pub sup_distance: f64,
    pub z_scores: Vec<f64>,
    pub samples: usize,
    pub truncated: usize,
    pub mean: f64,
    /// Computed from per-path means, so correlation along a path is honoured.
    pub mean_stderr: f64,
    pub median: f64,
    pub mode: f64,
    pub oracle_mean: f64,
    pub normalization: f64,
    /// z-score of the difference between first-half and second-half means.
    pub stationarity_z: f64,
}

impl DensityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lo,hi,count,density,oracle,z\n");
        let h = &self.histogram;
        for (i, d) in h.density().iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                h.edges[i],
                h.edges[i + 1],
                h.counts[i],
                d,
                self.oracle[i],
                self.z_scores[i]
            ));
        }
        out
    }
}

pub const STATIONARITY_LIMIT: f64 = 4.0;

/// Samples a one-dimensional system after burn-in and compares the
/// histogram with the Fokker–Planck stationary density on `[lo, hi]`.
pub fn stationary_density_1d(
    x: &Sds,
    funcs: &FunctionTable,
    opts: &DensityOptions,
    rng: &RngConfig,
) -> Result<DensityReport> {
    let oracle = FokkerPlanckOracle::new(x, funcs, opts.lo, opts.hi)?;
    let integ = Integrator::new(x, funcs)?;
    let x0 = [opts.start];
    integ.check_start(&x0)?;
    if opts.samples_per_path < 2 {
        return Err(SimError::TooFewSamples {
            needed: 2,
            found: opts.samples_per_path,
        });
    }
    let every = super::grid_steps(opts.dt, opts.spacing)?.max(1);
    let burn = super::grid_steps(opts.dt, opts.burn_in)?;
    let steps = burn + every * (opts.samples_per_path - 1);

    let runs: Vec<Option<Vec<f64>>> = (0..opts.paths)
        .into_par_iter()
        .map(|p| {
            let mut r = rng.stream(p as u64);
            let mut out = Vec::with_capacity(opts.samples_per_path);
            integ.run(&x0, opts.dt, steps, &mut r, opts.policy, |k, _, s| {
                if k >= burn && (k - burn) % every == 0 {
                    out.push(s[0]);
                }
            })?;
            Some(out)
        })
        .collect();
    let kept: Vec<&Vec<f64>> = runs.iter().flatten().collect();
    let truncated = opts.paths - kept.len();
    if 2 * truncated > opts.paths || kept.len() < 2 {
        return Err(SimError::MostlyTruncated {
            truncated,
            total: opts.paths,
        });
    }

    let half = opts.samples_per_path / 2;
    let diffs: Vec<f64> = kept
        .iter()
        .map(|s| mean_var(&s[..half]).0 - mean_var(&s[half..]).0)
        .collect();
    let (dm, dv) = mean_var(&diffs);
    let stationarity_z = if dv > 0.0 { dm / (dv / diffs.len() as f64).sqrt() } else { 0.0 };
    if stationarity_z.abs() > STATIONARITY_LIMIT {
        return Err(SimError::Nonstationary { z: stationarity_z });
    }

    let mut histogram = Histogram::new(opts.lo, opts.hi, opts.bins)?;
    let all: Vec<f64> = kept.iter().flat_map(|s| s.iter().copied()).collect();
    all.iter().for_each(|v| histogram.add(*v));
    let n = all.len() as f64;
    let w = histogram.width();
    let oracle_bins: Vec<f64> = (0..opts.bins)
        .map(|i| oracle.mass(histogram.edges[i], histogram.edges[i + 1]) / w)
        .collect();
    let empirical = histogram.density();
    let sup_distance = empirical
        .iter()
        .zip(&oracle_bins)
        .map(|(e, o)| (e - o).abs())
        .fold(0.0, f64::max);
    let z_scores = histogram
        .counts
        .iter()
        .zip(&oracle_bins)
        .map(|(c, o)| {
            let p = o * w;
            let expected = n * p;
            let sd = (n * p * (1.0 - p)).sqrt();
            if sd > 0.0 {
                (*c as f64 - expected) / sd
            } else {
                0.0
            }
        })
        .collect();
    let path_means: Vec<f64> = kept.iter().map(|s| mean_var(s).0).collect();
    let (mean, pv) = mean_var(&path_means);

    Ok(DensityReport {
        mode: histogram.mode(opts.mode_window),
        histogram,
        oracle: oracle_bins,
        sup_distance,
        z_scores,
        samples: all.len(),
        truncated,
        mean,
        mean_stderr: (pv / path_means.len() as f64).sqrt(),
        median: median(&all),
        oracle_mean: oracle.mean(),
        normalization: oracle.normalization_check(),
        stationarity_z,
    })
}
