//! Reference limit objects: one-sided stable laws, subordinator paths and
//! their inverses, fractional kinetics paths and the limit-model parameters.
//!
//! The stable law is normalised so that `E[exp(-s X)] = exp(-s^gamma)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use statrs::function::gamma::gamma as gamma_fn;

use crate::error::{Error, Result};

fn check_index(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("stable index {gamma} outside (0, 1)")))
    }
}

fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// The function `A` of the trigonometric representation `X = (A(U)/W)^((1-g)/g)`
/// with `U` uniform on `(0, pi)` and `W` standard exponential.
fn zolotarev_a(gamma: f64, u: f64) -> f64 {
    let num = (gamma * u).sin().powf(gamma / (1.0 - gamma)) * ((1.0 - gamma) * u).sin();
    num / u.sin().powf(1.0 / (1.0 - gamma))
}

/// Draws a positive stable variable with Laplace transform `exp(-s^gamma)`.
pub fn sample_one_sided_stable<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> Result<f64> {
    check_index(gamma)?;
    Ok(stable_draw(gamma, rng))
}

fn stable_draw<R: Rng + ?Sized>(gamma: f64, rng: &mut R) -> f64 {
    let u = PI * open_uniform(rng);
    let w: f64 = rng.sample(Exp1);
    (zolotarev_a(gamma, u) / w).powf((1.0 - gamma) / gamma)
}

/// Distribution function of the positive stable law, computed from the
/// integral representation `F(x) = (1/pi) int_0^pi exp(-A(u) x^(-g/(1-g))) du`.
pub fn stable_cdf(gamma: f64, x: f64) -> Result<f64> {
    check_index(gamma)?;
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let scale = x.powf(-gamma / (1.0 - gamma));
    let f = |u: f64| (-zolotarev_a(gamma, u) * scale).exp();
    let pieces = 16;
    let h = PI / pieces as f64;
    let total: f64 = (0..pieces).map(|p| adaptive_gauss(&f, p as f64 * h, (p + 1) as f64 * h, 1e-13, 40)).sum();
    Ok((total / PI).clamp(0.0, 1.0))
}

fn gauss5<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    const NODES: [f64; 5] = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
    const WEIGHTS: [f64; 5] = [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    NODES.iter().zip(&WEIGHTS).map(|(n, w)| w * f(mid + half * n)).sum::<f64>() * half
}

fn adaptive_gauss<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let whole = gauss5(f, a, b);
    let m = 0.5 * (a + b);
    let halves = gauss5(f, a, m) + gauss5(f, m, b);
    if depth == 0 || (whole - halves).abs() <= tol {
        halves
    } else {
        adaptive_gauss(f, a, m, 0.5 * tol, depth - 1) + adaptive_gauss(f, m, b, 0.5 * tol, depth - 1)
    }
}

/// Distribution function of the index one half law, `erfc(1 / (2 sqrt(x)))`.
pub fn levy_half_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        statrs::function::erf::erfc(1.0 / (2.0 * x.sqrt()))
    }
}

/// Subordinator values on a sorted time grid, started from zero at time zero.
pub fn subordinator_path<R: Rng + ?Sized>(gamma: f64, t_grid: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    check_index(gamma)?;
    check_sorted(t_grid)?;
    let mut out = Vec::with_capacity(t_grid.len());
    let (mut t, mut s) = (0.0, 0.0);
    for &next in t_grid {
        let dt = next - t;
        if dt > 0.0 {
            s += dt.powf(1.0 / gamma) * stable_draw(gamma, rng);
        }
        out.push(s);
        t = next;
    }
    Ok(out)
}

fn check_sorted(grid: &[f64]) -> Result<()> {
    if grid.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidParameter("negative time in grid".into()));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidParameter("grid is not sorted".into()));
    }
    Ok(())
}

/// Right-continuous inverse `E(s) = inf { t : S(t) > s }` of a
/// nondecreasing path given on `t_grid`, evaluated at each level in `s_grid`.
/// Levels the path never exceeds map to infinity.
pub fn inverse_subordinator(t_grid: &[f64], path: &[f64], s_grid: &[f64]) -> Result<Vec<f64>> {
    if t_grid.len() != path.len() {
        return Err(Error::InvalidParameter("time grid and path lengths differ".into()));
    }
    check_sorted(t_grid)?;
    if path.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("path is not nondecreasing".into()));
    }
    Ok(s_grid
        .iter()
        .map(|&s| {
            let j = path.partition_point(|&v| v <= s);
            t_grid.get(j).copied().unwrap_or(f64::INFINITY)
        })
        .collect())
}

/// Moment `E[E(1)^k] = k! / Gamma(1 + k gamma)` of the inverse subordinator at time one.
pub fn inverse_subordinator_moment(gamma: f64, k: u32) -> Result<f64> {
    check_index(gamma)?;
    let fact: f64 = (1..=k).map(f64::from).product();
    Ok(fact / gamma_fn(1.0 + k as f64 * gamma))
}

/// Square root of a symmetric positive semidefinite matrix. Slightly
/// negative eigenvalues from rounding are set to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::InvalidParameter("matrix is not square".into()));
    }
    let scale = m.amax().max(1.0);
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| l < -1e-9 * scale) {
        return Err(Error::Domain("matrix is not positive semidefinite".into()));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Fractional kinetics path `sigma_root * B(E(t))` on `t_grid`.
///
/// The subordinator is generated on a uniform grid of spacing `sub_step`
/// from `sub_rng` until it exceeds the last time of `t_grid`; the Brownian
/// motion uses `bm_rng`. Row `k` of the output is the position at `t_grid[k]`.
pub fn fractional_kinetics_path<R1, R2>(
    gamma: f64,
    sigma_root: &DMatrix<f64>,
    t_grid: &[f64],
    sub_step: f64,
    sub_rng: &mut R1,
    bm_rng: &mut R2,
) -> Result<Vec<Vec<f64>>>
where
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    check_index(gamma)?;
    check_sorted(t_grid)?;
    if !(sub_step > 0.0) {
        return Err(Error::InvalidParameter("subordinator step must be positive".into()));
    }
    let d = sigma_root.nrows();
    let t_max = t_grid.last().copied().unwrap_or(0.0);
    let jump_scale = sub_step.powf(1.0 / gamma);
    let mut clock = vec![0.0];
    while *clock.last().unwrap() <= t_max {
        let s = clock.last().unwrap() + jump_scale * stable_draw(gamma, sub_rng);
        clock.push(s);
    }
    let times: Vec<f64> = (0..clock.len()).map(|j| j as f64 * sub_step).collect();
    let inverse = inverse_subordinator(&times, &clock, t_grid)?;
    let mut b = DVector::zeros(sigma_root.ncols());
    let mut at = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &e in &inverse {
        let dt = e - at;
        if dt > 0.0 {
            for v in b.iter_mut() {
                let z: f64 = bm_rng.sample(StandardNormal);
                *v += dt.sqrt() * z;
            }
            at = e;
        }
        let x = sigma_root * &b;
        out.push((0..d).map(|i| x[i]).collect());
    }
    Ok(out)
}

/// Parameters of the scaling limit estimated from regeneration increments.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitModel {
    pub gamma: f64,
    /// Mean increment.
    pub v: DVector<f64>,
    /// Unit vector along the mean increment.
    pub v0: DVector<f64>,
    /// Covariance of the increments.
    pub sigma: DMatrix<f64>,
    /// Clock scale.
    pub c_inf: f64,
    /// `c_inf^(-gamma/2) (I - v0 v0^T) sqrt(sigma)`.
    pub m_d: DMatrix<f64>,
}

impl LimitModel {
    /// Projection onto the orthogonal complement of `v0`.
    pub fn transverse_projection(&self) -> DMatrix<f64> {
        let d = self.v0.len();
        DMatrix::identity(d, d) - &self.v0 * self.v0.transpose()
    }
}

/// Minimum number of increments accepted by [`estimate_limit_model`].
pub const MIN_INCREMENTS: usize = 100;

/// Estimates the limit model from regeneration increments (one vector per
/// epoch). The covariance uses the `1/n` normalisation.
pub fn estimate_limit_model(increments: &[Vec<f64>], gamma: f64, c_inf: f64) -> Result<LimitModel> {
    check_index(gamma)?;
    if increments.len() < MIN_INCREMENTS {
        return Err(Error::InsufficientData { needed: MIN_INCREMENTS, got: increments.len() });
    }
    if !(c_inf > 0.0) {
        return Err(Error::InvalidParameter("clock scale must be positive".into()));
    }
    let d = increments[0].len();
    if d == 0 || increments.iter().any(|x| x.len() != d) {
        return Err(Error::InvalidParameter("increments have inconsistent dimension".into()));
    }
    let n = increments.len() as f64;
    let mut v = DVector::zeros(d);
    for x in increments {
        v += DVector::from_column_slice(x);
    }
    v /= n;
    let mut sigma = DMatrix::zeros(d, d);
    for x in increments {
        let c = DVector::from_column_slice(x) - &v;
        sigma += &c * c.transpose();
    }
    sigma /= n;
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::Degenerate("mean increment is zero".into()));
    }
    let v0 = &v / norm;
    let projection = DMatrix::identity(d, d) - &v0 * v0.transpose();
    let m_d = c_inf.powf(-gamma / 2.0) * projection * psd_sqrt(&sigma)?;
    Ok(LimitModel { gamma, v, v0, sigma, c_inf, m_d })
}
