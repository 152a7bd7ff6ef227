use serde::Serialize;

use super::{Result, SimError};

/// Mean, variance and standard error of one observable.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservableStats {
    pub name: String,
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
}

impl ObservableStats {
    pub fn from_samples(name: &str, xs: &[f64]) -> Self {
        let (mean, variance) = mean_var(xs);
        ObservableStats {
            name: name.to_string(),
            mean,
            variance,
            stderr: (variance / xs.len() as f64).sqrt(),
        }
    }
}

/// Summary of an ensemble: surviving sample count, truncations and
/// per-observable moments, with an optional histogram of the first one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub n: usize,
    pub truncated: usize,
    pub observables: Vec<ObservableStats>,
    pub histogram: Option<Histogram>,
}

impl EnsembleStats {
    /// `columns[k]` holds the samples of observable `names[k]`.
    pub fn new(names: &[String], columns: &[Vec<f64>], truncated: usize) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if n < 2 {
            return Err(SimError::TooFewSamples { needed: 2, found: n });
        }
        Ok(EnsembleStats {
            n,
            truncated,
            observables: names
                .iter()
                .zip(columns)
                .map(|(name, c)| ObservableStats::from_samples(name, c))
                .collect(),
            histogram: None,
        })
    }

    pub fn with_histogram(mut self, h: Histogram) -> Self {
        self.histogram = Some(h);
        self
    }
}

/// Sample mean and unbiased variance (Welford).
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let d = x - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (x - mean);
    }
    let var = if xs.len() > 1 { m2 / (xs.len() - 1) as f64 } else { 0.0 };
    (mean, var)
}

/// Equal-width histogram on `[lo, hi)`. Samples outside are counted in
/// `below`/`above` but still contribute to `total`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo < hi) || bins == 0 {
            return Err(SimError::InvalidArgument(format!("histogram range [{lo}, {hi}) with {bins} bins")));
        }
        let w = (hi - lo) / bins as f64;
        Ok(Histogram {
            edges: (0..=bins).map(|i| lo + w * i as f64).collect(),
            counts: vec![0; bins],
            below: 0,
            above: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    pub fn add(&mut self, x: f64) {
        let lo = self.edges[0];
        let hi = self.edges[self.bins()];
        if x < lo {
            self.below += 1;
        } else if x >= hi {
            self.above += 1;
        } else {
            let i = (((x - lo) / self.width()) as usize).min(self.bins() - 1);
            self.counts[i] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }

    /// Counts over total times bin width.
    pub fn density(&self) -> Vec<f64> {
        let norm = self.total() as f64 * self.width();
        self.counts.iter().map(|c| *c as f64 / norm).collect()
    }

    /// Peak location from a least-squares parabola through the log counts
    /// of the `half_window` bins on each side of the fullest bin.
    pub fn mode(&self, half_window: usize) -> f64 {
        let top = (0..self.bins()).max_by_key(|i| self.counts[*i]).unwrap_or(0);
        let lo = top.saturating_sub(half_window);
        let hi = (top + half_window).min(self.bins() - 1);
        let pts: Vec<(f64, f64)> = (lo..=hi)
            .filter(|i| self.counts[*i] > 0)
            .map(|i| (self.center(i) - self.center(top), (self.counts[i] as f64).ln()))
            .collect();
        if pts.len() < 3 {
            return self.center(top);
        }
        let [a, b, _] = quadratic_fit(&pts);
        if a >= 0.0 {
            return self.center(top);
        }
        self.center(top) - b / (2.0 * a)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lo,hi,count,density\n");
        for (i, d) in self.density().iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", self.edges[i], self.edges[i + 1], self.counts[i], d));
        }
        out
    }
}

/// Coefficients `[a, b, c]` of `a u^2 + b u + c` fitted to `pts`.
fn quadratic_fit(pts: &[(f64, f64)]) -> [f64; 3] {
    let mut m = nalgebra::Matrix3::<f64>::zeros();
    let mut r = nalgebra::Vector3::<f64>::zeros();
    for (u, y) in pts {
        let basis = [u * u, *u, 1.0];
        for i in 0..3 {
            r[i] += basis[i] * y;
            for j in 0..3 {
                m[(i, j)] += basis[i] * basis[j];
            }
        }
    }
    match m.lu().solve(&r) {
        Some(s) => [s[0], s[1], s[2]],
        None => [0.0, 0.0, 0.0],
    }
}

/// Median of the samples (mean of the middle pair for even counts).
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KsReport {
    pub statistic: f64,
    pub critical: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub pass: bool,
}

/// Asymptotic two-sample critical coefficient at the 1% level.
pub const KS_C_01: f64 = 1.628;

/// Two-sample Kolmogorov–Smirnov test at the 1% level.
pub fn ks_compare(a: &[f64], b: &[f64]) -> Result<KsReport> {
    if a.is_empty() || b.is_empty() {
        return Err(SimError::TooFewSamples {
            needed: 1,
            found: a.len().min(b.len()),
        });
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let critical = KS_C_01 * ((na + nb) / (na * nb)).sqrt();
    Ok(KsReport {
        statistic: d,
        critical,
        n_a: a.len(),
        n_b: b.len(),
        pass: d < critical,
    })
}

/// Lifts angles in `(-π, π]` to a continuous path on the real line,
/// taking the nearest branch at every step.
pub fn unwrap_angle(angles: &[f64]) -> Vec<f64> {
    use std::f64::consts::{PI, TAU};
    let mut out = Vec::with_capacity(angles.len());
    let mut prev: Option<(f64, f64)> = None;
    for &a in angles {
        let lifted = match prev {
            None => a,
            Some((raw, acc)) => {
                let d = (a - raw + PI).rem_euclid(TAU) - PI;
                acc + d
            }
        };
        prev = Some((a, lifted));
        out.push(lifted);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowStat {
    pub from: usize,
    pub to: usize,
    pub mean: f64,
    pub stderr: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub paths: usize,
    pub windows: Vec<WindowStat>,
    pub max_abs_z: f64,
    pub pass: bool,
}

pub const MIN_MARTINGALE_PATHS: usize = 30;

/// Tests that a process has mean-zero increments: the sample grid is cut
/// into `windows` disjoint blocks and each block's increment is averaged
/// across paths. Passes if every `|z| < 3`. `series[p][k]` is path `p` at
/// grid index `k`; all paths must have the same length.
pub fn martingale_test(series: &[Vec<f64>], windows: usize) -> Result<MartingaleReport> {
    if series.len() < MIN_MARTINGALE_PATHS {
        return Err(SimError::TooFewSamples {
            needed: MIN_MARTINGALE_PATHS,
            found: series.len(),
        });
    }
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    if windows == 0 || len < windows + 1 {
        return Err(SimError::InvalidArgument(format!("{len} samples cannot form {windows} windows")));
    }
    let steps = len - 1;
    let mut out = Vec::with_capacity(windows);
    for w in 0..windows {
        let from = w * steps / windows;
        let to = (w + 1) * steps / windows;
        let incs: Vec<f64> = series.iter().map(|s| s[to] - s[from]).collect();
        let (mean, var) = mean_var(&incs);
        let stderr = (var / incs.len() as f64).sqrt();
        let z = if stderr > 0.0 { mean / stderr } else if mean == 0.0 { 0.0 } else { f64::INFINITY };
        out.push(WindowStat { from, to, mean, stderr, z });
    }
    let max_abs_z = out.iter().map(|w| w.z.abs()).fold(0.0, f64::max);
    Ok(MartingaleReport {
        paths: series.len(),
        windows: out,
        max_abs_z,
        pass: max_abs_z < 3.0,
    })
}

/// Mean of `lifted(T) - lifted(0)` over `T`, with its standard error.
pub fn mean_frequency(series: &[Vec<f64>], horizon: f64) -> (f64, f64) {
    let rates: Vec<f64> = series
        .iter()
        .filter_map(|s| Some((s.last()? - s.first()?) / horizon))
        .collect();
    let (m, v) = mean_var(&rates);
    (m, (v / rates.len() as f64).sqrt())
}
