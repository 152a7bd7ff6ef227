use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::stats::mean_var;
use super::{grid_steps, Integrator, Result, RngConfig, SimError, Trajectory};
use crate::expr::{Compiled, FunctionTable, ScalarExpr, ZeroTester};
use crate::geometry::Sds;

/// Numeric entries of a constant antisymmetric structure matrix.
fn structure_values(x: &Sds, omega: &[Vec<ScalarExpr>]) -> Result<Vec<Vec<f64>>> {
    let n = x.chart.dim();
    if omega.len() != n || omega.iter().any(|row| row.len() != n) {
        return Err(SimError::BadStructure);
    }
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let q = omega[i][j].as_constant().ok_or(SimError::BadStructure)?;
            if !omega[i][j].add(&omega[j][i]).is_zero() {
                return Err(SimError::BadStructure);
            }
            out[i][j] = super::q_f64(&q);
        }
    }
    Ok(out)
}

/// Canonical symplectic matrix on `R^{2n}` with coordinates ordered
/// `(q_1, p_1, ..., q_n, p_n)`.
pub fn canonical_symplectic(n: usize) -> Vec<Vec<ScalarExpr>> {
    let mut m = vec![vec![ScalarExpr::zero(); 2 * n]; 2 * n];
    for k in 0..n {
        m[2 * k][2 * k + 1] = ScalarExpr::one();
        m[2 * k + 1][2 * k] = ScalarExpr::int(-1);
    }
    m
}

/// Checks that every field of `x` is locally Hamiltonian for `omega`: the
/// one-form `α_j = Σ_k X^k ω_kj` must be closed, i.e. all mixed partials
/// `∂_i α_j - ∂_j α_i` vanish.
pub fn check_hamiltonian(x: &Sds, omega: &[Vec<ScalarExpr>], tester: &ZeroTester) -> Result<()> {
    structure_values(x, omega)?;
    let names = x.chart.names();
    let n = names.len();
    let domain = x.chart.sample_box();
    for (idx, field) in x.fields().enumerate() {
        let alpha: Vec<ScalarExpr> = (0..n)
            .map(|j| {
                (0..n).fold(ScalarExpr::zero(), |acc, k| acc.add(&field.components[k].mul(&omega[k][j])))
            })
            .collect();
        for i in 0..n {
            for j in i + 1..n {
                let curl = alpha[j].diff(&names[i]).sub(&alpha[i].diff(&names[j]));
                let v = tester.is_zero(&curl, &domain)?;
                if !v.holds() {
                    let (value, point) = v
                        .witness
                        .map(|w| (w.residual, w.point.into_iter().map(|(_, v)| v).collect()))
                        .unwrap_or((f64::NAN, Vec::new()));
                    return Err(SimError::NotHamiltonian {
                        field: idx,
                        component: format!("d{}^d{}", names[i], names[j]),
                        value,
                        point,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Compiled Jacobians `∂_i X^j` of the drift and of each noise field.
struct Variational {
    n: usize,
    jac: Vec<Vec<Compiled>>,
}

impl Variational {
    fn new(x: &Sds, funcs: &FunctionTable) -> Result<Self> {
        let names = x.chart.names();
        let jac = x
            .fields()
            .map(|f| {
                let mut out = Vec::with_capacity(names.len() * names.len());
                for comp in &f.components {
                    for c in &names {
                        let d = comp.diff(c);
                        out.push(if d.is_zero() { Compiled::constant(0.0) } else { d.compile(&names, funcs)? });
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        Ok(Variational { n: names.len(), jac })
    }

    /// `out = D X_field (x) · j`, row-major n×n.
    fn apply(&self, field: usize, x: &[f64], j: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let n = self.n;
        for (s, c) in scratch.iter_mut().zip(&self.jac[field]) {
            *s = if c.is_zero() { 0.0 } else { c.eval(x) };
        }
        for r in 0..n {
            for c in 0..n {
                out[r * n + c] = (0..n).map(|k| scratch[r * n + k] * j[k * n + c]).sum();
            }
        }
    }
}

/// One path of the state and its flow Jacobian under Heun's scheme, with
/// Brownian increments supplied per step. Returns the states, the
/// Jacobians (row-major) and whether the path left the domain.
fn variational_path(
    integ: &Integrator,
    var: &Variational,
    x0: &[f64],
    dt: f64,
    steps: usize,
    increments: &[f64],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, bool) {
    let n = integ.dim();
    let m = integ.noise_count();
    let mut x = x0.to_vec();
    let mut j: Vec<f64> = (0..n * n).map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
    let mut work = integ.workspace();
    let mut scratch = vec![0.0; n * n];
    let mut tmp = vec![0.0; n * n];
    let mut k1 = vec![0.0; n * n];
    let mut jp = vec![0.0; n * n];
    let mut states = vec![x.clone()];
    let mut jacs = vec![j.clone()];
    for s in 0..steps {
        let dw = &increments[s * m..(s + 1) * m];
        let before = x.clone();
        // Predictor for J.
        var.apply(0, &before, &j, &mut tmp, &mut scratch);
        for (a, t) in k1.iter_mut().zip(&tmp) {
            *a = t * dt;
        }
        for (i, w) in dw.iter().enumerate() {
            var.apply(i + 1, &before, &j, &mut tmp, &mut scratch);
            k1.iter_mut().zip(&tmp).for_each(|(a, t)| *a += t * w);
        }
        for ((p, a), b) in jp.iter_mut().zip(&j).zip(&k1) {
            *p = a + b;
        }
        integ.step(&mut x, dt, dw, &mut work);
        let predicted = work.pred.clone();
        // Corrector for J at the predicted state.
        var.apply(0, &predicted, &jp, &mut tmp, &mut scratch);
        let mut k2: Vec<f64> = tmp.iter().map(|t| t * dt).collect();
        for (i, w) in dw.iter().enumerate() {
            var.apply(i + 1, &predicted, &jp, &mut tmp, &mut scratch);
            k2.iter_mut().zip(&tmp).for_each(|(a, t)| *a += t * w);
        }
        for ((v, a), b) in j.iter_mut().zip(&k1).zip(&k2) {
            *v += 0.5 * (a + b);
        }
        if !integ.in_domain(&x) || j.iter().any(|v| !v.is_finite()) {
            return (states, jacs, true);
        }
        states.push(x.clone());
        jacs.push(j.clone());
    }
    (states, jacs, false)
}

/// `max over probes |ω(Jv, Jw) - ω(v, w)|`.
fn deviation(omega: &[Vec<f64>], j: &[f64], probes: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let n = omega.len();
    let form = |a: &[f64], b: &[f64]| -> f64 {
        let mut s = 0.0;
        for r in 0..n {
            for c in 0..n {
                s += a[r] * omega[r][c] * b[c];
            }
        }
        s
    };
    let push = |v: &[f64]| -> Vec<f64> { (0..n).map(|r| (0..n).map(|c| j[r * n + c] * v[c]).sum()).collect() };
    probes
        .iter()
        .map(|(v, w)| (form(&push(v), &push(w)) - form(v, w)).abs())
        .fold(0.0, f64::max)
}

/// All pairs of standard basis vectors.
pub fn basis_probes(n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let e = |i: usize| (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            out.push((e(i), e(j)));
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorReport {
    pub max_deviation: f64,
    pub final_deviation: f64,
    pub trajectory: Trajectory,
}

fn draw_increments(rng: &RngConfig, stream: u64, steps: usize, m: usize, dt: f64) -> Vec<f64> {
    let mut r = rng.stream(stream);
    let sd = dt.sqrt();
    (0..steps * m)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            z * sd
        })
        .collect()
}

/// Integrates one path with its variational flow and measures how far the
/// flow moves `omega` on the probe pairs (all basis pairs if `probes` is
/// empty). The fields are checked to be Hamiltonian first.
#[allow(clippy::too_many_arguments)]
pub fn tensor_preservation(
    x: &Sds,
    funcs: &FunctionTable,
    omega: &[Vec<ScalarExpr>],
    x0: &[f64],
    dt: f64,
    horizon: f64,
    rng: &RngConfig,
    stream: u64,
    probes: &[(Vec<f64>, Vec<f64>)],
) -> Result<TensorReport> {
    let om = structure_values(x, omega)?;
    check_hamiltonian(x, omega, &ZeroTester::default())?;
    let integ = Integrator::new(x, funcs)?;
    integ.check_start(x0)?;
    let var = Variational::new(x, funcs)?;
    let steps = grid_steps(dt, horizon)?;
    let incs = draw_increments(rng, stream, steps, integ.noise_count(), dt);
    let (states, jacs, cut) = variational_path(&integ, &var, x0, dt, steps, &incs);
    let default_probes;
    let probes = if probes.is_empty() {
        default_probes = basis_probes(integ.dim());
        &default_probes
    } else {
        probes
    };
    let devs: Vec<f64> = jacs.iter().map(|j| deviation(&om, j, probes)).collect();
    let truncated_at = cut.then_some(states.len());
    Ok(TensorReport {
        max_deviation: devs.iter().copied().fold(0.0, f64::max),
        final_deviation: *devs.last().unwrap_or(&0.0),
        trajectory: Trajectory {
            dt,
            horizon: steps as f64 * dt,
            names: integ.names().to_vec(),
            states,
            jacobians: Some(jacs),
            truncated_at,
            seed: rng.seed,
            stream,
            periods: integ.periods().to_vec(),
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceLevel {
    pub dt: f64,
    pub mean_deviation: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<ConvergenceLevel>,
    /// Least-squares slope of log deviation against log step.
    pub order: f64,
    pub paths: usize,
}

/// Step-halving study: `levels` step sizes starting at `dt0`, each path
/// driven by one Brownian sample whose finest increments are summed for
/// the coarser levels. Reports the mean over paths of the maximal
/// deviation along the path, and the fitted order.
#[allow(clippy::too_many_arguments)]
pub fn symplectic_convergence(
    x: &Sds,
    funcs: &FunctionTable,
    omega: &[Vec<ScalarExpr>],
    x0: &[f64],
    dt0: f64,
    levels: usize,
    horizon: f64,
    paths: usize,
    rng: &RngConfig,
) -> Result<ConvergenceReport> {
    if levels < 2 {
        return Err(SimError::InvalidArgument("need at least two levels".into()));
    }
    if paths < 2 {
        return Err(SimError::TooFewSamples { needed: 2, found: paths });
    }
    let om = structure_values(x, omega)?;
    check_hamiltonian(x, omega, &ZeroTester::default())?;
    let integ = Integrator::new(x, funcs)?;
    integ.check_start(x0)?;
    let var = Variational::new(x, funcs)?;
    let m = integ.noise_count();
    let finest = dt0 / (1u64 << (levels - 1)) as f64;
    let fine_steps = grid_steps(dt0, horizon)? << (levels - 1);
    let probes = basis_probes(integ.dim());

    let per_path: Vec<Option<Vec<f64>>> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let fine = draw_increments(rng, p as u64, fine_steps, m, finest);
            (0..levels)
                .map(|l| {
                    let block = 1usize << (levels - 1 - l);
                    let steps = fine_steps / block;
                    let mut incs = vec![0.0; steps * m];
                    for s in 0..steps {
                        for b in 0..block {
                            for k in 0..m {
                                incs[s * m + k] += fine[(s * block + b) * m + k];
                            }
                        }
                    }
                    let dt = finest * block as f64;
                    let (_, jacs, cut) = variational_path(&integ, &var, x0, dt, steps, &incs);
                    (!cut).then(|| jacs.iter().map(|j| deviation(&om, j, &probes)).fold(0.0, f64::max))
                })
                .collect()
        })
        .collect();
    let kept: Vec<&Vec<f64>> = per_path.iter().flatten().collect();
    if 2 * kept.len() < paths {
        return Err(SimError::MostlyTruncated {
            truncated: paths - kept.len(),
            total: paths,
        });
    }
    let out: Vec<ConvergenceLevel> = (0..levels)
        .map(|l| {
            let col: Vec<f64> = kept.iter().map(|d| d[l]).collect();
            let (mean, var) = mean_var(&col);
            ConvergenceLevel {
                dt: dt0 / (1u64 << l) as f64,
                mean_deviation: mean,
                stderr: (var / col.len() as f64).sqrt(),
            }
        })
        .collect();
    let pts: Vec<(f64, f64)> = out.iter().map(|l| (l.dt.ln(), l.mean_deviation.ln())).collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = pts.iter().map(|(a, _)| (a - mx).powi(2)).sum();
    Ok(ConvergenceReport {
        levels: out,
        order: sxy / sxx,
        paths: kept.len(),
    })
}
