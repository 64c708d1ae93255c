//! Scaled processes built from regeneration records and the estimators used
//! to compare simulations with the limit objects.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::Point;
use crate::limits::stable_cdf;

/// Regeneration times and positions of one walk, starting with time zero
/// and the starting point.
#[derive(Clone, Debug, PartialEq)]
pub struct RegenPath {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

impl RegenPath {
    /// Builds a path from regeneration times and positions, prepending time
    /// zero at `start`.
    pub fn new(start: Vec<f64>, taus: &[f64], points: &[Vec<f64>]) -> Result<Self> {
        if taus.len() != points.len() {
            return Err(Error::InvalidParameter("times and points differ in length".into()));
        }
        let d = start.len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::InvalidParameter("points differ in dimension".into()));
        }
        let mut times = vec![0.0];
        times.extend_from_slice(taus);
        let mut all = vec![start];
        all.extend_from_slice(points);
        Ok(Self { times, points: all })
    }

    /// Number of regeneration epochs after time zero.
    pub fn epochs(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// How the centred displacement is read between the knots `k/n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Step,
    Polygonal,
}

/// Scaled displacement, centred displacement, clock and shifted joint
/// process on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledProcessSample {
    pub n: usize,
    pub grid: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub s: Vec<f64>,
    /// Shifted centred displacement `Z(t + 1/n) - Z(1/n)`.
    pub z_star: Vec<Vec<f64>>,
    /// Shifted clock `S(t + 1/n) - S(1/n)`.
    pub s_star: Vec<f64>,
    pub mode: Interpolation,
}

struct Evaluator<'a> {
    path: &'a RegenPath,
    n: f64,
    inv_n: f64,
    v: &'a [f64],
    mode: Interpolation,
}

impl Evaluator<'_> {
    fn index(&self, t: f64) -> usize {
        // guard against t*n landing just below an integer
        let x = t * self.n;
        let r = x.round();
        if (x - r).abs() <= 1e-9 * r.max(1.0) {
            r as usize
        } else {
            x.floor() as usize
        }
    }

    fn y(&self, t: f64) -> Vec<f64> {
        self.path.points[self.index(t)].iter().map(|x| x / self.n).collect()
    }

    fn z(&self, t: f64) -> Vec<f64> {
        let k = self.index(t);
        let root = self.n.sqrt();
        let at = |k: usize| -> Vec<f64> { self.path.points[k].clone() };
        let x = match self.mode {
            Interpolation::Step => at(k),
            Interpolation::Polygonal => {
                let frac = t * self.n - k as f64;
                if frac <= 0.0 || k + 1 >= self.path.points.len() {
                    at(k)
                } else {
                    at(k).iter().zip(at(k + 1)).map(|(a, b)| a + frac * (b - a)).collect()
                }
            }
        };
        x.iter().zip(self.v).map(|(x, v)| (x - v * self.n * t) / root).collect()
    }

    fn s(&self, t: f64) -> f64 {
        self.path.times[self.index(t)] / self.inv_n
    }
}

/// Evaluates the scaled processes of one regeneration path at scale `n`.
/// `inv_n` is the tail inverse at `n` and `v` the centring velocity.
pub fn scaled_processes(
    path: &RegenPath,
    n: usize,
    inv_n: f64,
    v: &[f64],
    grid: &[f64],
    mode: Interpolation,
) -> Result<ScaledProcessSample> {
    if n == 0 {
        return Err(Error::InvalidParameter("scale must be positive".into()));
    }
    if v.len() != path.dim() {
        return Err(Error::InvalidParameter("velocity dimension mismatch".into()));
    }
    if grid.iter().any(|&t| t < 0.0) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("grid must be sorted and nonnegative".into()));
    }
    let eval = Evaluator { path, n: n as f64, inv_n, v, mode };
    let top = grid.last().copied().unwrap_or(0.0);
    let needed = eval.index(top + 1.0 / n as f64) + usize::from(mode == Interpolation::Polygonal);
    if needed > path.epochs() {
        return Err(Error::InsufficientData { needed, got: path.epochs() });
    }
    let shift = 1.0 / n as f64;
    let z_base = eval.z(shift);
    let s_base = eval.s(shift);
    Ok(ScaledProcessSample {
        n,
        grid: grid.to_vec(),
        y: grid.iter().map(|&t| eval.y(t)).collect(),
        z: grid.iter().map(|&t| eval.z(t)).collect(),
        s: grid.iter().map(|&t| eval.s(t)).collect(),
        z_star: grid.iter().map(|&t| eval.z(t + shift).iter().zip(&z_base).map(|(a, b)| a - b).collect()).collect(),
        s_star: grid.iter().map(|&t| eval.s(t + shift) - s_base).collect(),
        mode,
    })
}

/// Shifted clock at time `t`: the sum of the first `floor(t n)` increments
/// after the first regeneration, divided by `inv_n`.
pub fn shifted_clock(increments: &[f64], n: usize, t: f64, inv_n: f64) -> Result<f64> {
    let k = (t * n as f64 + 1e-9).floor() as usize;
    if k > increments.len() {
        return Err(Error::InsufficientData { needed: k, got: increments.len() });
    }
    Ok(increments[..k].iter().sum::<f64>() / inv_n)
}

/// Tail index estimate from the largest order statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HillEstimate {
    pub index: f64,
    pub stderr: f64,
    pub k: usize,
    pub mean_log_excess: f64,
}

/// Hill estimator over the `k_top` largest samples: the reciprocal of their
/// mean log-excess over the next order statistic.
pub fn hill_estimator(samples: &[f64], k_top: usize) -> Result<HillEstimate> {
    if k_top == 0 || k_top >= samples.len() {
        return Err(Error::InvalidParameter(format!("k_top {k_top} must lie in 1..{}", samples.len())));
    }
    if samples.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Domain("samples must be positive".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k_top];
    let mean_log_excess = sorted[..k_top].iter().map(|x| (x / threshold).ln()).sum::<f64>() / k_top as f64;
    if mean_log_excess <= 0.0 {
        return Err(Error::Degenerate("top order statistics are tied".into()));
    }
    let index = 1.0 / mean_log_excess;
    Ok(HillEstimate { index, stderr: index / (k_top as f64).sqrt(), k: k_top, mean_log_excess })
}

/// Variance of the quenched mean of a functional across environments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuenchedVariance {
    /// Outer variance of per-environment means minus the walk noise.
    pub estimate: f64,
    pub stderr: f64,
    /// Estimate from products of distinct walks in the same environment.
    pub paired: f64,
    pub paired_stderr: f64,
    /// Variance of the per-environment means.
    pub raw_outer: f64,
    /// Mean within-environment sample variance.
    pub within: f64,
    /// The corrected estimate was negative and has been set to zero.
    pub clamped: bool,
    pub n_env: usize,
    pub n_walk: usize,
}

fn corrected_variance(values: &[&[f64]]) -> (f64, f64, f64) {
    let n_env = values.len() as f64;
    let m = values[0].len() as f64;
    let means: Vec<f64> = values.iter().map(|v| pairwise_sum(v) / m).collect();
    let grand = pairwise_sum(&means) / n_env;
    let outer = means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (n_env - 1.0);
    let within = values
        .iter()
        .zip(&means)
        .map(|(v, mu)| v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (m - 1.0))
        .sum::<f64>()
        / n_env;
    (outer - within / m, outer, within)
}

fn paired_variance(values: &[&[f64]]) -> f64 {
    let n_env = values.len() as f64;
    let m = values[0].len() as f64;
    // mean over environments of the average product of two distinct walks
    let mut same = 0.0;
    let mut sums = Vec::with_capacity(values.len());
    for v in values {
        let total = pairwise_sum(v);
        let squares: f64 = v.iter().map(|x| x * x).sum();
        same += (total * total - squares) / (m * (m - 1.0));
        sums.push(total / m);
    }
    same /= n_env;
    // average product of means of two distinct environments
    let total = pairwise_sum(&sums);
    let squares: f64 = sums.iter().map(|x| x * x).sum();
    let across = (total * total - squares) / (n_env * (n_env - 1.0));
    same - across
}

fn jackknife<F: Fn(&[&[f64]]) -> f64>(values: &[&[f64]], f: F) -> f64 {
    let n = values.len();
    let leave_out: Vec<f64> = (0..n)
        .map(|i| {
            let rest: Vec<&[f64]> = values.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v).collect();
            f(&rest)
        })
        .collect();
    let mean = leave_out.iter().sum::<f64>() / n as f64;
    ((n as f64 - 1.0) / n as f64 * leave_out.iter().map(|x| (x - mean).powi(2)).sum::<f64>()).sqrt()
}

/// Quenched variance from a table of functional values, one row per
/// environment and one column per walk.
pub fn quenched_variance(values: &[Vec<f64>]) -> Result<QuenchedVariance> {
    if values.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: values.len() });
    }
    let m = values[0].len();
    if m < 2 {
        return Err(Error::InsufficientData { needed: 2, got: m });
    }
    if values.iter().any(|v| v.len() != m) {
        return Err(Error::InvalidParameter("every environment needs the same number of walks".into()));
    }
    let rows: Vec<&[f64]> = values.iter().map(|v| v.as_slice()).collect();
    let (raw, outer, within) = corrected_variance(&rows);
    let paired = paired_variance(&rows);
    let stderr = jackknife(&rows, |r| corrected_variance(r).0);
    let paired_stderr = jackknife(&rows, paired_variance);
    Ok(QuenchedVariance {
        estimate: raw.max(0.0),
        stderr,
        paired,
        paired_stderr,
        raw_outer: outer,
        within,
        clamped: raw < 0.0,
        n_env: values.len(),
        n_walk: m,
    })
}

/// Sum by recursive halving.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        xs.iter().sum()
    } else {
        let (a, b) = xs.split_at(xs.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
}

pub fn power_law_fit(xs: &[f64], ys: &[f64]) -> Result<PowerLawFit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidParameter("x and y differ in length".into()));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: xs.len() });
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("power-law fit needs positive data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values are equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = lx.iter().zip(&ly).map(|(x, y)| y - intercept - slope * x).collect();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_stderr = if lx.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(PowerLawFit { slope, intercept, slope_stderr, r_squared, residuals })
}

/// Largest point probability of an ensemble of positions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMass {
    pub sup: f64,
    pub stderr: f64,
    pub walks: usize,
}

/// Minimum ensemble size accepted by [`point_mass_profile`].
pub const MIN_POINT_MASS_WALKS: usize = 1000;

/// Frequency of the most common point in each ensemble.
pub fn point_mass_profile(ensembles: &[Vec<Point>]) -> Result<Vec<PointMass>> {
    ensembles
        .iter()
        .map(|points| {
            if points.len() < MIN_POINT_MASS_WALKS {
                return Err(Error::InsufficientData { needed: MIN_POINT_MASS_WALKS, got: points.len() });
            }
            let mut counts: HashMap<Point, usize> = HashMap::new();
            for p in points {
                *counts.entry(*p).or_default() += 1;
            }
            let n = points.len() as f64;
            let sup = *counts.values().max().unwrap() as f64 / n;
            Ok(PointMass { sup, stderr: (sup * (1.0 - sup) / n).sqrt(), walks: points.len() })
        })
        .collect()
}

/// One row of [`one_big_jump_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BigJumpRow {
    pub x: f64,
    /// Estimated probability that the sum exceeds `x`.
    pub sum_tail: f64,
    /// `n` times the estimated probability that one summand exceeds `x`.
    pub single_tail: f64,
    pub ratio: f64,
}

/// Compares the tail of a sum of `n` Pareto variables with `n` times the
/// tail of one summand, from the same draws.
pub fn one_big_jump_check<R: Rng + ?Sized>(gamma: f64, n: usize, xs: &[f64], trials: usize, rng: &mut R) -> Result<Vec<BigJumpRow>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma {gamma} outside (0, 1)")));
    }
    if n == 0 || trials == 0 {
        return Err(Error::InvalidParameter("n and trials must be positive".into()));
    }
    let mut sum_hits = vec![0u64; xs.len()];
    let mut single_hits = vec![0u64; xs.len()];
    for _ in 0..trials {
        let mut total = 0.0;
        for _ in 0..n {
            let u: f64 = 1.0 - rng.random::<f64>();
            let draw = u.powf(-1.0 / gamma);
            total += draw;
            for (h, &x) in single_hits.iter_mut().zip(xs) {
                if draw > x {
                    *h += 1;
                }
            }
        }
        for (h, &x) in sum_hits.iter_mut().zip(xs) {
            if total > x {
                *h += 1;
            }
        }
    }
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let sum_tail = sum_hits[i] as f64 / trials as f64;
            let single_tail = n as f64 * single_hits[i] as f64 / (trials as f64 * n as f64);
            BigJumpRow { x, sum_tail, single_tail, ratio: sum_tail / single_tail }
        })
        .collect())
}

/// Probability estimate with its binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proportion {
    pub p: f64,
    pub stderr: f64,
    pub trials: usize,
    /// The probability is zero by construction.
    pub degenerate: bool,
}

impl Proportion {
    pub fn new(hits: usize, trials: usize) -> Self {
        let p = if trials == 0 { 0.0 } else { hits as f64 / trials as f64 };
        let stderr = if trials == 0 { 0.0 } else { (p * (1.0 - p) / trials as f64).sqrt() };
        Self { p, stderr, trials, degenerate: false }
    }
}

/// Probability that the shifted clock at time `n^-eta` exceeds `n^-rho`,
/// from the regeneration increments of each walk after its first regeneration.
pub fn small_time_clock_check(increments: &[Vec<f64>], n: usize, eta: f64, rho: f64, gamma: f64, inv_n: f64) -> Result<Proportion> {
    if rho >= eta / gamma {
        return Err(Error::InvalidParameter(format!("rho {rho} must stay below eta / gamma = {}", eta / gamma)));
    }
    let nf = n as f64;
    let k = (nf.powf(1.0 - eta) + 1e-9).floor() as usize;
    if k == 0 {
        return Ok(Proportion { p: 0.0, stderr: 0.0, trials: increments.len(), degenerate: true });
    }
    let threshold = nf.powf(-rho);
    let mut hits = 0;
    for inc in increments {
        if inc.len() < k {
            return Err(Error::InsufficientData { needed: k, got: inc.len() });
        }
        if pairwise_sum(&inc[..k]) / inv_n > threshold {
            hits += 1;
        }
    }
    Ok(Proportion::new(hits, increments.len()))
}

/// Kolmogorov distance and its asymptotic p-value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Minimum sample size accepted by [`ks_distance`].
pub const MIN_KS_SAMPLES: usize = 50;

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        total += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, effective_n: f64) -> f64 {
    let root = effective_n.sqrt();
    kolmogorov_survival((root + 0.12 + 0.11 / root) * d)
}

/// Distance between the empirical distribution of `samples` and `cdf`.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult> {
    if samples.len() < MIN_KS_SAMPLES {
        return Err(Error::InsufficientData { needed: MIN_KS_SAMPLES, got: samples.len() });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = cdf(sorted[0] - 1e-300_f64.max(sorted[0].abs() * 1e-12) - 1.0);
    let hi = cdf(sorted[sorted.len() - 1] + 1.0 + sorted[sorted.len() - 1].abs());
    if lo == hi {
        return Err(Error::Degenerate("reference distribution is constant over the sample range".into()));
    }
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    Ok(KsResult { statistic: d, p_value: ks_p_value(d, n), n: sorted.len() })
}

/// Two-sample Kolmogorov distance with its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.len() < MIN_KS_SAMPLES || b.len() < MIN_KS_SAMPLES {
        return Err(Error::InsufficientData { needed: MIN_KS_SAMPLES, got: a.len().min(b.len()) });
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
    Ok(KsResult { statistic: d, p_value: ks_p_value(d, na * nb / (na + nb)), n: a.len() + b.len() })
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Scale `c` such that `samples` look like `c` times a standard positive
/// stable variable, from the log-moment `E[ln X] = euler * (1/gamma - 1)`.
pub fn fit_stable_scale(samples: &[f64], gamma: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if samples.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Domain("stable scale fit needs positive samples".into()));
    }
    let mean_log = samples.iter().map(|x| x.ln()).sum::<f64>() / samples.len() as f64;
    Ok((mean_log - EULER_GAMMA * (1.0 / gamma - 1.0)).exp())
}

/// Kolmogorov test of `samples` against a stable law with fitted scale.
pub fn stable_fit_test(samples: &[f64], gamma: f64) -> Result<(f64, KsResult)> {
    let scale = fit_stable_scale(samples, gamma)?;
    let ks = ks_distance(samples, |x| stable_cdf(gamma, x / scale).unwrap_or(f64::NAN))?;
    Ok((scale, ks))
}

/// Sample correlation of paired data with the standard error `1/sqrt(n)`
/// under no correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: a.len().min(b.len()) });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("constant series".into()));
    }
    Ok((sab / (saa * sbb).sqrt(), 1.0 / n.sqrt()))
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Median of a sample.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::ConductanceLaw;
    use crate::limits::{levy_half_cdf, sample_one_sided_stable};
    use crate::rng::Stream;
    use proptest::prelude::*;
    use rand_distr::StandardNormal;

    fn linear_path(k: usize) -> RegenPath {
        let taus: Vec<f64> = (1..=k).map(|i| i as f64).collect();
        let points: Vec<Vec<f64>> = (1..=k).map(|i| vec![i as f64, 0.0]).collect();
        RegenPath::new(vec![0.0, 0.0], &taus, &points).unwrap()
    }

    #[test]
    fn scaled_processes_start_at_zero() {
        let path = linear_path(200);
        let s = scaled_processes(&path, 100, 7.0, &[1.0, 0.0], &[0.0], Interpolation::Step).unwrap();
        assert_eq!(s.y[0], vec![0.0, 0.0]);
        assert_eq!(s.z[0], vec![0.0, 0.0]);
        assert_eq!(s.s[0], 0.0);
        assert_eq!(s.s_star[0], 0.0);
        assert_eq!(s.z_star[0], vec![0.0, 0.0]);
    }

    #[test]
    fn scaled_processes_of_linear_records() {
        let path = linear_path(200);
        let inv = ConductanceLaw::pareto(0.5).unwrap().inv_tail(100.0).unwrap();
        let s = scaled_processes(&path, 100, inv, &[1.0, 0.0], &[0.5], Interpolation::Step).unwrap();
        assert_eq!(s.y[0], vec![0.5, 0.0]);
        assert_eq!(s.z[0], vec![0.0, 0.0]);
        assert_eq!(s.s[0], 50.0 / inv);
        assert_eq!(inv, 10_000.0);
        let p = scaled_processes(&path, 100, inv, &[1.0, 0.0], &[0.5, 0.505], Interpolation::Polygonal).unwrap();
        assert!(p.z[0].iter().all(|z| z.abs() < 1e-12));
    }

    #[test]
    fn shifted_process_identity() {
        let mut rng = Stream::new(3);
        let taus: Vec<f64> = (0..400).scan(0.0, |acc, _| {
            *acc += 1.0 + (rng.next_uniform() * 10.0).floor();
            Some(*acc)
        }).collect();
        let points: Vec<Vec<f64>> = (0..400).map(|i| vec![i as f64 * 2.0 + rng.next_uniform(), rng.next_uniform()]).collect();
        let path = RegenPath::new(vec![0.0, 0.0], &taus, &points).unwrap();
        let grid: Vec<f64> = (0..=30).map(|k| k as f64 / 30.0).collect();
        let n = 300;
        let s = scaled_processes(&path, n, 13.0, &[2.0, 0.0], &grid, Interpolation::Step).unwrap();
        let shifted: Vec<f64> = grid.iter().map(|t| t + 1.0 / n as f64).collect();
        let plain = scaled_processes(&path, n, 13.0, &[2.0, 0.0], &shifted, Interpolation::Step).unwrap();
        let base = scaled_processes(&path, n, 13.0, &[2.0, 0.0], &[1.0 / n as f64], Interpolation::Step).unwrap();
        for k in 0..grid.len() {
            assert_eq!(s.s_star[k], plain.s[k] - base.s[0]);
            for i in 0..2 {
                assert_eq!(s.z_star[k][i], plain.z[k][i] - base.z[0][i]);
            }
        }
        assert!(s.s.windows(2).all(|w| w[1] >= w[0]));
        // with L = 1 the tail inverse is n^(1/gamma)
        let inv = ConductanceLaw::pareto(0.5).unwrap().inv_tail(n as f64).unwrap();
        let t = scaled_processes(&path, n, inv, &[2.0, 0.0], &[0.5], Interpolation::Step).unwrap();
        assert_eq!(t.s[0], taus[149] / (n as f64).powf(2.0));
        let clock = shifted_clock(&taus.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>(), n, 0.5, 13.0).unwrap();
        assert!((clock - (taus[150] - taus[0]) / 13.0).abs() < 1e-9);
    }

    #[test]
    fn scaled_processes_need_enough_records() {
        let path = linear_path(50);
        assert!(matches!(
            scaled_processes(&path, 100, 1.0, &[1.0, 0.0], &[0.5], Interpolation::Step),
            Err(Error::InsufficientData { needed: 51, got: 50 })
        ));
    }

    #[test]
    fn hill_on_hand_example() {
        let h = hill_estimator(&[8.0, 4.0, 2.0, 1.0], 3).unwrap();
        assert!((h.mean_log_excess - 1.386_294_361_119_890_6).abs() < 1e-12);
        assert!((h.index - 0.721_347_520_444_481_7).abs() < 1e-12);
    }

    #[test]
    fn hill_on_exact_pareto() {
        let mut rng = Stream::new(17);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.next_uniform().powf(-2.0)).collect();
        let h = hill_estimator(&xs, 1000).unwrap();
        assert!((0.45..=0.55).contains(&h.index), "{h:?}");
    }

    #[test]
    fn hill_flags_ties_and_bad_input() {
        assert!(matches!(hill_estimator(&[3.0; 10], 4), Err(Error::Degenerate(_))));
        assert!(hill_estimator(&[1.0, 2.0], 2).is_err());
        assert!(hill_estimator(&[1.0, -2.0, 3.0], 1).is_err());
    }

    #[test]
    fn quenched_variance_of_constant_is_zero() {
        let values = vec![vec![0.7; 10]; 20];
        let q = quenched_variance(&values).unwrap();
        assert_eq!(q.estimate, 0.0);
        assert_eq!(q.paired.abs(), 0.0);
    }

    #[test]
    fn quenched_variance_of_two_point_environments() {
        let mut rng = Stream::new(5);
        let mut q = None;
        for _ in 0..1 {
            let values: Vec<Vec<f64>> = (0..400)
                .map(|_| {
                    let p = if rng.next_uniform() < 0.5 { 0.4 } else { 0.6 };
                    (0..50).map(|_| if rng.next_uniform() < p { 1.0 } else { 0.0 }).collect()
                })
                .collect();
            q = Some(quenched_variance(&values).unwrap());
        }
        let q = q.unwrap();
        assert!((q.estimate - 0.01).abs() < 3.0 * q.stderr, "{q:?}");
        let combined = (q.stderr.powi(2) + q.paired_stderr.powi(2)).sqrt();
        assert!((q.estimate - q.paired).abs() < 3.0 * combined);
        assert!((q.estimate - q.paired).abs() < 1e-12);
        assert!(!q.clamped);
    }

    #[test]
    fn quenched_variance_clamps_negative_values() {
        // identical environment means with walk noise give a negative raw estimate
        let values = vec![vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]];
        let q = quenched_variance(&values).unwrap();
        assert!(q.clamped);
        assert_eq!(q.estimate, 0.0);
    }

    #[test]
    fn power_law_fit_exact() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-1.2)).collect();
        let f = power_law_fit(&xs, &ys).unwrap();
        assert!((f.slope + 1.2).abs() < 1e-9);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-9);
        let flat = power_law_fit(&xs, &vec![2.0; 100]).unwrap();
        assert!(flat.slope.abs() < 1e-15);
        assert!(power_law_fit(&[1.0, 2.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn power_law_fit_noisy() {
        let mut rng = Stream::new(8);
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| {
                let e: f64 = rand::Rng::sample(&mut rng, StandardNormal);
                x.powf(-0.5) * (1.0 + 0.05 * e)
            })
            .collect();
        let f = power_law_fit(&xs, &ys).unwrap();
        assert!((-0.6..=-0.4).contains(&f.slope));
    }

    #[test]
    fn point_mass_bounds() {
        let all_same = vec![Point::new(&[3, 1]); 1000];
        let spread: Vec<Point> = (0..1000).map(|i| Point::new(&[i, 0])).collect();
        let out = point_mass_profile(&[all_same, spread]).unwrap();
        assert_eq!(out[0].sup, 1.0);
        assert_eq!(out[1].sup, 1.0 / 1000.0);
        assert!(point_mass_profile(&[vec![Point::ORIGIN; 10]]).is_err());
    }

    #[test]
    fn one_big_jump_ratio() {
        let mut rng = Stream::new(12);
        let n = 100;
        let x = 10.0 * (n as f64).powf(2.0);
        let rows = one_big_jump_check(0.5, n, &[x, 0.5 * (n as f64).powf(2.0)], 100_000, &mut rng).unwrap();
        assert!((0.5..=2.0).contains(&rows[0].ratio), "{rows:?}");
        let mut rng = Stream::new(13);
        let rows = one_big_jump_check(0.5, 1, &[5.0, 50.0], 10_000, &mut rng).unwrap();
        for r in rows {
            assert_eq!(r.sum_tail, r.single_tail);
        }
    }

    #[test]
    fn small_time_guards() {
        let incs = vec![vec![1.0; 100]; 10];
        assert!(small_time_clock_check(&incs, 1024, 0.5, 1.0, 0.5, 10.0).is_err());
        let p = small_time_clock_check(&incs, 1, 0.5, 0.9, 0.5, 0.5).unwrap();
        assert_eq!(p.p, 1.0);
        let p = small_time_clock_check(&incs, 1024, 1.5, 0.9, 0.5, 10.0).unwrap();
        assert!(p.degenerate && p.p == 0.0);
        let p = small_time_clock_check(&incs, 1024, 0.5, 0.9, 0.5, 1e6).unwrap();
        assert_eq!(p.p, 0.0);
        assert!(small_time_clock_check(&incs, 1 << 20, 0.5, 0.9, 0.5, 1e6).is_err());
    }

    #[test]
    fn ks_self_consistency() {
        let mut passes = 0;
        for rep in 0..100 {
            let mut rng = Stream::new(1000 + rep);
            let xs: Vec<f64> = (0..10_000).map(|_| sample_one_sided_stable(0.5, &mut rng).unwrap()).collect();
            if ks_distance(&xs, levy_half_cdf).unwrap().p_value > 0.01 {
                passes += 1;
            }
        }
        assert!(passes >= 95, "{passes}");
    }

    #[test]
    fn ks_extremes() {
        let xs = vec![0.5; 100];
        let r = ks_distance(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(r.statistic >= 0.5);
        assert!(matches!(ks_distance(&xs, |_| 0.3), Err(Error::Degenerate(_))));
        assert!(ks_distance(&xs[..10], |x| x).is_err());
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn two_sample_ks() {
        let mut rng = Stream::new(4);
        let a: Vec<f64> = (0..5000).map(|_| rng.next_uniform()).collect();
        let b: Vec<f64> = (0..5000).map(|_| rng.next_uniform()).collect();
        assert!(ks_two_sample(&a, &b).unwrap().p_value > 0.001);
        let c: Vec<f64> = b.iter().map(|x| x * 0.9).collect();
        assert!(ks_two_sample(&a, &c).unwrap().p_value < 1e-6);
    }

    #[test]
    fn stable_scale_fit_recovers_scale() {
        for (g, c) in [(0.5, 3.0), (0.7, 0.2)] {
            let mut rng = Stream::new(77);
            let xs: Vec<f64> = (0..50_000).map(|_| c * sample_one_sided_stable(g, &mut rng).unwrap()).collect();
            let (scale, ks) = stable_fit_test(&xs, g).unwrap();
            assert!((scale / c - 1.0).abs() < 0.05, "{scale}");
            assert!(ks.p_value > 0.01);
        }
    }

    #[test]
    fn correlation_of_independent_series() {
        let mut rng = Stream::new(9);
        let a: Vec<f64> = (0..2000).map(|_| rng.next_uniform()).collect();
        let b: Vec<f64> = (0..2000).map(|_| rng.next_uniform()).collect();
        let (r, se) = correlation(&a, &b).unwrap();
        assert!(r.abs() < 3.0 * se);
        let (r, _) = correlation(&a, &a).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn clock_is_monotone(incs in proptest::collection::vec(1u32..1000, 30..60), n in 1usize..20) {
            let mut acc = 0.0;
            let taus: Vec<f64> = incs.iter().map(|&i| { acc += i as f64; acc }).collect();
            let points: Vec<Vec<f64>> = taus.iter().map(|t| vec![*t]).collect();
            let path = RegenPath::new(vec![0.0], &taus, &points).unwrap();
            let grid: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
            let s = scaled_processes(&path, n, 5.0, &[1.0], &grid, Interpolation::Step).unwrap();
            prop_assert!(s.s.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(s.s_star.windows(2).all(|w| w[1] >= w[0]));
        }

        #[test]
        fn point_mass_within_bounds(points in proptest::collection::vec((0i32..5, 0i32..5), 1000..1100)) {
            let pts: Vec<Point> = points.iter().map(|&(a, b)| Point::new(&[a, b])).collect();
            let pm = point_mass_profile(std::slice::from_ref(&pts)).unwrap()[0];
            prop_assert!(pm.sup <= 1.0 && pm.sup >= 1.0 / pts.len() as f64);
        }
    }
}
