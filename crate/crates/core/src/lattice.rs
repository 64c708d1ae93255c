//! Lattice geometry, the bias frame and the lazily sampled conductance field.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::{hash_words, tags, unit_open};

/// Largest supported dimension.
pub const MAX_DIM: usize = 8;

/// Largest tilt exponent accepted by [`Environment::tilted_conductance`].
pub const TILT_EXPONENT_LIMIT: f64 = 700.0;

/// A point of Z^d. Coordinates beyond the working dimension are zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Point {
    coords: [i32; MAX_DIM],
}

impl Point {
    pub const ORIGIN: Point = Point { coords: [0; MAX_DIM] };

    /// Builds a point from its first coordinates. Panics if `coords` is longer than [`MAX_DIM`].
    pub fn new(coords: &[i32]) -> Self {
        assert!(coords.len() <= MAX_DIM, "dimension above {MAX_DIM}");
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Self { coords: c }
    }

    /// The unit vector along `axis` scaled by `sign`.
    pub fn unit(axis: usize, sign: i32) -> Self {
        let mut p = Self::ORIGIN;
        p.coords[axis] = sign;
        p
    }

    #[inline]
    pub fn coord(&self, axis: usize) -> i32 {
        self.coords[axis]
    }

    #[inline]
    pub fn coords(&self) -> &[i32; MAX_DIM] {
        &self.coords
    }

    pub fn slice(&self, d: usize) -> &[i32] {
        &self.coords[..d]
    }

    #[inline]
    pub fn shifted(&self, axis: usize, delta: i32) -> Self {
        let mut p = *self;
        p.coords[axis] += delta;
        p
    }

    #[inline]
    pub fn add(&self, other: &Point) -> Self {
        let mut p = *self;
        for (a, b) in p.coords.iter_mut().zip(other.coords.iter()) {
            *a += *b;
        }
        p
    }

    #[inline]
    pub fn sub(&self, other: &Point) -> Self {
        let mut p = *self;
        for (a, b) in p.coords.iter_mut().zip(other.coords.iter()) {
            *a -= *b;
        }
        p
    }

    #[inline]
    pub fn l1_distance(&self, other: &Point) -> u64 {
        self.coords
            .iter()
            .zip(other.coords.iter())
            .map(|(a, b)| (*a as i64 - *b as i64).unsigned_abs())
            .sum()
    }

    /// The first nonzero axis of a unit vector together with its sign.
    fn as_unit(&self) -> Option<(usize, i32)> {
        let mut found = None;
        for (axis, &c) in self.coords.iter().enumerate() {
            match c {
                0 => {}
                1 | -1 if found.is_none() => found = Some((axis, c)),
                _ => return None,
            }
        }
        found
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let last = self.coords.iter().rposition(|&c| c != 0).map_or(1, |i| i + 1);
        write!(f, "(")?;
        for (i, c) in self.coords[..last].iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Canonical key of a nearest-neighbour edge: its lexicographically smaller
/// endpoint and the axis it spans.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct EdgeKey {
    pub base: Point,
    pub axis: u8,
}

impl EdgeKey {
    pub fn endpoints(&self) -> (Point, Point) {
        (self.base, self.base.shifted(self.axis as usize, 1))
    }
}

/// A nearest-neighbour edge stored with its endpoints in canonical order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Edge {
    x: Point,
    y: Point,
}

impl Edge {
    pub fn new(x: Point, y: Point) -> Result<Self> {
        if x.l1_distance(&y) != 1 {
            return Err(Error::InvalidParameter(format!(
                "{x:?} and {y:?} are not nearest neighbours"
            )));
        }
        Ok(if x <= y { Self { x, y } } else { Self { x: y, y: x } })
    }

    pub fn x(&self) -> Point {
        self.x
    }

    pub fn y(&self) -> Point {
        self.y
    }

    pub fn key(&self) -> EdgeKey {
        let (axis, _) = self.y.sub(&self.x).as_unit().expect("nearest-neighbour edge");
        EdgeKey { base: self.x, axis: axis as u8 }
    }
}

impl From<EdgeKey> for Edge {
    fn from(k: EdgeKey) -> Self {
        let (x, y) = k.endpoints();
        Self { x, y }
    }
}

/// A signed coordinate vector `sign * e_axis`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BasisVector {
    pub axis: usize,
    pub sign: i32,
}

/// Dimension, bias and the derived frames.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeConfig {
    d: usize,
    lambda: f64,
    ell: Vec<f64>,
    alpha: f64,
    k: f64,
    basis: Vec<BasisVector>,
    frame: Vec<Vec<f64>>,
    step_weight: Vec<f64>,
    step_level: Vec<f64>,
}

impl LatticeConfig {
    /// Validates and assembles a configuration.
    ///
    /// `lambda = 0` is accepted so that the unbiased walk can be probed.
    pub fn new(d: usize, lambda: f64, ell: &[f64], alpha: f64, k: f64) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return Err(Error::InvalidParameter(format!("d = {d} outside [1, {MAX_DIM}]")));
        }
        if ell.len() != d {
            return Err(Error::InvalidParameter(format!(
                "direction has {} components, expected {d}",
                ell.len()
            )));
        }
        let norm = ell.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("direction norm {norm} is not 1")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda = {lambda} must be >= 0")));
        }
        if !(k >= 1.0 && k.is_finite()) {
            return Err(Error::InvalidParameter(format!("K = {k} must be >= 1")));
        }
        if !(alpha > d as f64 + 3.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must exceed d + 3")));
        }

        let mut basis: Vec<BasisVector> = (0..d)
            .map(|axis| BasisVector { axis, sign: if ell[axis] < 0.0 { -1 } else { 1 } })
            .collect();
        basis.sort_by(|a, b| {
            let va = ell[a.axis].abs();
            let vb = ell[b.axis].abs();
            vb.partial_cmp(&va).unwrap().then(a.axis.cmp(&b.axis))
        });

        let frame = orthonormal_frame(ell, &basis);

        let mut step_weight = Vec::with_capacity(2 * d);
        let mut step_level = Vec::with_capacity(2 * d);
        for b in &basis {
            for dir in [1, -1] {
                let s = (b.sign * dir) as f64 * ell[b.axis];
                step_level.push(s);
                step_weight.push((lambda * s).exp());
            }
        }

        Ok(Self { d, lambda, ell: ell.to_vec(), alpha, k, basis, frame, step_weight, step_level })
    }

    /// `d`-dimensional configuration with bias direction `e_1`, `lambda = 1`,
    /// `alpha = d + 4` and `K = 20`.
    pub fn standard(d: usize) -> Result<Self> {
        let mut ell = vec![0.0; d];
        if d > 0 {
            ell[0] = 1.0;
        }
        Self::new(d, 1.0, &ell, d as f64 + 4.0, 20.0)
    }

    pub fn with_k(&self, k: f64) -> Result<Self> {
        Self::new(self.d, self.lambda, &self.ell, self.alpha, k)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.d, lambda, &self.ell, self.alpha, self.k)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn ell(&self) -> &[f64] {
        &self.ell
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// Signed coordinate vectors ordered by decreasing projection on the bias.
    pub fn basis(&self) -> &[BasisVector] {
        &self.basis
    }

    /// Orthonormal frame whose first vector is the bias direction.
    pub fn frame(&self) -> &[Vec<f64>] {
        &self.frame
    }

    /// Number of neighbours, `2d`.
    pub fn degree(&self) -> usize {
        2 * self.d
    }

    /// Displacement of neighbour direction `j`.
    ///
    /// Directions are ordered `+e_1, -e_1, +e_2, -e_2, ...` in the sorted basis.
    #[inline]
    pub fn direction(&self, j: usize) -> (usize, i32) {
        let b = self.basis[j / 2];
        let sign = if j.is_multiple_of(2) { b.sign } else { -b.sign };
        (b.axis, sign)
    }

    /// Index of the direction joining `x` to the neighbour `y`, if any.
    pub fn direction_index(&self, x: &Point, y: &Point) -> Option<usize> {
        let (axis, sign) = y.sub(x).as_unit()?;
        (0..self.degree()).find(|&j| self.direction(j) == (axis, sign))
    }

    /// `exp(lambda * step . ell)` for each direction.
    #[inline]
    pub fn step_weights(&self) -> &[f64] {
        &self.step_weight
    }

    /// Level change `step . ell` for each direction.
    pub fn step_levels(&self) -> &[f64] {
        &self.step_level
    }

    /// Whether the bias direction is the first coordinate vector.
    pub fn is_axis_aligned_e1(&self) -> bool {
        self.ell[0] == 1.0 && self.ell[1..].iter().all(|&v| v == 0.0)
    }

    /// Projection of `x` on the bias direction.
    #[inline]
    pub fn level(&self, x: &Point) -> f64 {
        self.ell.iter().enumerate().map(|(i, v)| v * x.coord(i) as f64).sum()
    }

    /// The unit step `e_1` of the sorted basis.
    pub fn first_step(&self) -> Point {
        let b = self.basis[0];
        Point::unit(b.axis, b.sign)
    }

    /// Projections of `x` on the frame vectors.
    pub fn frame_coords(&self, x: &Point, out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(self.frame.iter()) {
            *o = f.iter().enumerate().map(|(i, v)| v * x.coord(i) as f64).sum();
        }
    }

    /// Whether `x` lies in the tilted box of half-widths `l` along the bias and
    /// `l_perp` across it, centred at `y`.
    pub fn in_box(&self, y: &Point, l: f64, l_perp: f64, x: &Point) -> bool {
        let diff = x.sub(y);
        let mut coords = [0.0; MAX_DIM];
        self.frame_coords(&diff, &mut coords[..self.d]);
        coords[0].abs() <= l && coords[1..self.d].iter().all(|c| c.abs() <= l_perp)
    }

    /// The 2d + 1 points of the closed neighbourhood of `x`.
    pub fn neighborhood(&self, x: &Point) -> Vec<Point> {
        let mut v = vec![*x];
        for j in 0..self.degree() {
            let (axis, sign) = self.direction(j);
            v.push(x.shifted(axis, sign));
        }
        v
    }

    /// The 2d edges incident to `x`, in direction order.
    pub fn incident_edges(&self, x: &Point) -> Vec<EdgeKey> {
        (0..self.degree()).map(|j| self.edge_key(x, j)).collect()
    }

    /// Canonical key of the edge leaving `x` in direction `j`.
    #[inline]
    pub fn edge_key(&self, x: &Point, j: usize) -> EdgeKey {
        let (axis, sign) = self.direction(j);
        let base = if sign > 0 { *x } else { x.shifted(axis, -1) };
        EdgeKey { base, axis: axis as u8 }
    }
}

fn orthonormal_frame(ell: &[f64], basis: &[BasisVector]) -> Vec<Vec<f64>> {
    let d = ell.len();
    let mut frame: Vec<Vec<f64>> = vec![ell.to_vec()];
    for b in basis {
        if frame.len() == d {
            break;
        }
        let mut v = vec![0.0; d];
        v[b.axis] = b.sign as f64;
        for f in &frame {
            let dot: f64 = v.iter().zip(f).map(|(a, b)| a * b).sum();
            for (vi, fi) in v.iter_mut().zip(f) {
                *vi -= dot * fi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for vi in v.iter_mut() {
                *vi /= norm;
                if vi.abs() < 1e-15 {
                    *vi = 0.0;
                }
            }
            frame.push(v);
        }
    }
    frame
}

/// Slowly varying factor of the conductance tail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TailFamily {
    /// `P(c >= u) = u^{-gamma}` for `u >= 1`.
    Pareto,
    /// `P(c >= u) = min(1, (1 + ln u) u^{-gamma})`.
    ParetoLog,
}

impl TailFamily {
    pub fn name(&self) -> &'static str {
        match self {
            TailFamily::Pareto => "pareto",
            TailFamily::ParetoLog => "pareto_log",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pareto" => Some(TailFamily::Pareto),
            "pareto_log" => Some(TailFamily::ParetoLog),
            _ => None,
        }
    }
}

/// Marginal law of the base conductances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConductanceLaw {
    gamma: f64,
    family: TailFamily,
    inv_gamma: f64,
    log_floor: f64,
}

impl ConductanceLaw {
    pub fn new(gamma: f64, family: TailFamily) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!("gamma = {gamma} outside (0, 1)")));
        }
        let log_floor = match family {
            TailFamily::Pareto => 0.0,
            TailFamily::ParetoLog => pareto_log_floor(gamma),
        };
        Ok(Self { gamma, family, inv_gamma: 1.0 / gamma, log_floor })
    }

    pub fn pareto(gamma: f64) -> Result<Self> {
        Self::new(gamma, TailFamily::Pareto)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn family(&self) -> TailFamily {
        self.family
    }

    /// Smallest value in the support.
    pub fn lower_support(&self) -> f64 {
        self.log_floor.exp()
    }

    /// Survival function `P(c >= u)`.
    pub fn survival(&self, u: f64) -> f64 {
        if u < 1.0 {
            return 1.0;
        }
        match self.family {
            TailFamily::Pareto => u.powf(-self.gamma),
            TailFamily::ParetoLog => ((1.0 + u.ln()) * u.powf(-self.gamma)).min(1.0),
        }
    }

    /// The value `u` with `P(c >= u) = p`, for `p` in (0, 1].
    #[inline]
    pub fn inverse_survival(&self, p: f64) -> f64 {
        match self.family {
            TailFamily::Pareto => {
                if self.inv_gamma == 2.0 {
                    let r = 1.0 / p;
                    r * r
                } else {
                    p.powf(-self.inv_gamma)
                }
            }
            TailFamily::ParetoLog => {
                if p >= 1.0 {
                    return self.lower_support();
                }
                solve_log_tail(self.gamma, p.ln(), self.log_floor).exp()
            }
        }
    }

    /// Generalised right-continuous inverse of the tail, `inf{s : P(c > s) <= 1/n}`.
    ///
    /// For `n = 1` every `s` qualifies; the bottom of the support is returned.
    pub fn inv_tail(&self, n: f64) -> Result<f64> {
        if !(n >= 1.0) || !n.is_finite() {
            return Err(Error::Domain(format!("Inv(n) requires n >= 1, got {n}")));
        }
        Ok(self.inverse_survival(1.0 / n))
    }
}

/// `t0 > 0` solving `ln(1 + t) = gamma t`: the log of the bottom of the support.
fn pareto_log_floor(gamma: f64) -> f64 {
    let g = |t: f64| (1.0 + t).ln() - gamma * t;
    let peak = 1.0 / gamma - 1.0;
    let mut lo = peak;
    let mut hi = peak.max(1.0);
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves `ln(1 + t) - gamma t = target` for `t >= floor`, where `target < 0`.
fn solve_log_tail(gamma: f64, target: f64, floor: f64) -> f64 {
    let g = |t: f64| (1.0 + t).ln() - gamma * t - target;
    let mut lo = floor;
    let mut hi = floor.max(1.0) * 2.0;
    while g(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let val = g(t);
        if val == 0.0 {
            return t;
        }
        if val > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let deriv = 1.0 / (1.0 + t) - gamma;
        let newton = t - val / deriv;
        t = if deriv < 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    t
}

/// An implicit infinite field of i.i.d. conductances.
///
/// Values are a pure function of the seed and the canonical edge, so an
/// environment can be cloned and shared freely across threads.
#[derive(Clone, Debug)]
pub struct Environment {
    seed: u64,
    law: ConductanceLaw,
    config: Arc<LatticeConfig>,
    overrides: Arc<HashMap<EdgeKey, f64>>,
    uniform: Option<f64>,
}

impl Environment {
    pub fn new(seed: u64, law: ConductanceLaw, config: LatticeConfig) -> Self {
        Self { seed, law, config: Arc::new(config), overrides: Arc::new(HashMap::new()), uniform: None }
    }

    /// An environment in which every base conductance equals `value`.
    pub fn constant(value: f64, law: ConductanceLaw, config: LatticeConfig) -> Self {
        assert!(value > 0.0 && value.is_finite(), "conductance must be positive");
        Self { uniform: Some(value), ..Self::new(0, law, config) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn law(&self) -> &ConductanceLaw {
        &self.law
    }

    pub fn config(&self) -> &LatticeConfig {
        &self.config
    }

    pub fn shared_config(&self) -> Arc<LatticeConfig> {
        Arc::clone(&self.config)
    }

    pub fn overrides(&self) -> &HashMap<EdgeKey, f64> {
        &self.overrides
    }

    /// Same field with a different seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Returns a copy in which the given edges take fixed values.
    pub fn with_overrides<I: IntoIterator<Item = (EdgeKey, f64)>>(&self, edges: I) -> Self {
        let mut map = (*self.overrides).clone();
        for (e, c) in edges {
            assert!(c > 0.0 && c.is_finite(), "conductance must be positive");
            map.insert(e, c);
        }
        Self { overrides: Arc::new(map), ..self.clone() }
    }

    /// The environment with every edge incident to `x1` or `x2` set to `K`.
    pub fn omega_k_view(&self, x1: &Point, x2: &Point) -> Self {
        let k = self.config.k();
        let edges = self
            .config
            .incident_edges(x1)
            .into_iter()
            .chain(self.config.incident_edges(x2))
            .map(|e| (e, k));
        self.with_overrides(edges)
    }

    /// The sampled value of an edge, ignoring overrides.
    #[inline]
    pub fn sampled_conductance(&self, e: &EdgeKey) -> f64 {
        let d = self.config.d();
        let mut words = [0u64; MAX_DIM + 3];
        words[0] = self.seed;
        words[1] = tags::EDGE;
        words[2] = e.axis as u64;
        for (w, c) in words[3..3 + d].iter_mut().zip(e.base.coords()) {
            *w = *c as i64 as u64;
        }
        self.law.inverse_survival(unit_open(hash_words(&words[..3 + d])))
    }

    /// Base conductance `c_*(e)`.
    #[inline]
    pub fn base_conductance(&self, e: &EdgeKey) -> f64 {
        if !self.overrides.is_empty() {
            if let Some(&c) = self.overrides.get(e) {
                return c;
            }
        }
        if let Some(c) = self.uniform {
            return c;
        }
        self.sampled_conductance(e)
    }

    /// Tilted conductance `c_*(e) exp((x + y) . lambda ell)`.
    pub fn tilted_conductance(&self, e: &Edge) -> Result<f64> {
        self.tilted_conductance_from(e, &Point::ORIGIN)
    }

    /// Tilted conductance with coordinates measured from `origin`.
    ///
    /// The common factor `exp(2 origin . lambda ell)` cancels in every
    /// transition probability, so any origin gives the same walk.
    pub fn tilted_conductance_from(&self, e: &Edge, origin: &Point) -> Result<f64> {
        let cfg = &self.config;
        let exponent = cfg.lambda() * (cfg.level(&e.x().sub(origin)) + cfg.level(&e.y().sub(origin)));
        if exponent.abs() > TILT_EXPONENT_LIMIT {
            return Err(Error::TiltOverflow { exponent, limit: TILT_EXPONENT_LIMIT });
        }
        Ok(self.base_conductance(&e.key()) * exponent.exp())
    }

    /// `c_*(e)` lies in `[1/K, K]`.
    pub fn is_k_normal(&self, e: &EdgeKey) -> bool {
        let c = self.base_conductance(e);
        let k = self.config.k();
        c >= 1.0 / k && c <= k
    }

    /// Every edge incident to `x` is K-normal.
    pub fn is_k_open(&self, x: &Point) -> bool {
        (0..self.config.degree()).all(|j| self.is_k_normal(&self.config.edge_key(x, j)))
    }

    /// Whether a K-open directed path of `depth` steps starts at `x`, with odd
    /// steps along `e_1` and even steps along any positive basis vector.
    pub fn is_k_good(&self, x: &Point, depth: usize) -> bool {
        if !self.is_k_open(x) {
            return false;
        }
        let cfg = &self.config;
        let e1 = cfg.first_step();
        let positive: Vec<Point> = cfg.basis().iter().map(|b| Point::unit(b.axis, b.sign)).collect();
        let mut layer: HashSet<Point> = HashSet::from([*x]);
        for step in 1..=depth {
            let mut next = HashSet::new();
            for p in &layer {
                if step % 2 == 1 {
                    let q = p.add(&e1);
                    if self.is_k_open(&q) {
                        next.insert(q);
                    }
                } else {
                    for v in &positive {
                        let q = p.add(v);
                        if self.is_k_open(&q) {
                            next.insert(q);
                        }
                    }
                }
            }
            if next.is_empty() {
                return false;
            }
            layer = next;
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(d: usize) -> LatticeConfig {
        LatticeConfig::standard(d).unwrap()
    }

    #[test]
    fn pareto_inversion_closed_form() {
        let law = ConductanceLaw::pareto(0.5).unwrap();
        assert_eq!(law.inverse_survival(0.25), 16.0);
        let law = ConductanceLaw::pareto(0.25).unwrap();
        assert!((law.inverse_survival(0.5) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn inv_tail_pareto() {
        let law = ConductanceLaw::pareto(0.5).unwrap();
        assert_eq!(law.inv_tail(16.0).unwrap(), 256.0);
        assert_eq!(law.inv_tail(1.0).unwrap(), 1.0);
        assert!(law.inv_tail(0.5).is_err());
    }

    #[test]
    fn inv_tail_pareto_log_matches_bisection() {
        let law = ConductanceLaw::new(0.5, TailFamily::ParetoLog).unwrap();
        for n in [2.0, 10.0, 1e3, 1e6] {
            let s = law.inv_tail(n).unwrap();
            // independent bisection on the tail in u-space
            let (mut lo, mut hi) = (law.lower_support(), 1e30f64);
            for _ in 0..400 {
                let mid = (lo * hi).sqrt();
                if law.survival(mid) > 1.0 / n {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((s - lo).abs() / lo < 1e-9, "n={n}: {s} vs {lo}");
            assert!((law.survival(s) - 1.0 / n).abs() < 1e-9);
        }
    }

    #[test]
    fn pareto_log_support_floor() {
        let law = ConductanceLaw::new(0.5, TailFamily::ParetoLog).unwrap();
        let u0 = law.lower_support();
        assert!((u0 - 12.34020236254394).abs() < 1e-9, "{u0}");
        assert!(((1.0 + u0.ln()) * u0.powf(-0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn override_takes_precedence() {
        let c = cfg(3);
        let env = Environment::new(11, ConductanceLaw::pareto(0.5).unwrap(), c.clone());
        let e = c.edge_key(&Point::ORIGIN, 0);
        let env2 = env.with_overrides([(e, 7.5)]);
        assert_eq!(env2.base_conductance(&e), 7.5);
        assert_eq!(env2.reseeded(99).base_conductance(&e), 7.5);
    }

    #[test]
    fn tilted_conductance_examples() {
        let law = ConductanceLaw::pareto(0.5).unwrap();
        let c1 = LatticeConfig::new(1, 0.5, &[1.0], 5.0, 2.0).unwrap();
        let env = Environment::constant(1.0, law, c1);
        let e = Edge::new(Point::new(&[0]), Point::new(&[1])).unwrap();
        assert!((env.tilted_conductance(&e).unwrap() - 0.5f64.exp()).abs() < 1e-12);

        let c2 = LatticeConfig::new(2, 0.5, &[1.0, 0.0], 6.0, 2.0).unwrap();
        let env = Environment::constant(1.0, law, c2);
        let e = Edge::new(Point::new(&[3, 4]), Point::new(&[3, 5])).unwrap();
        assert!((env.tilted_conductance(&e).unwrap() - (2.0 * 3.0 * 0.5f64).exp()).abs() < 1e-9);

        let c5 = LatticeConfig::new(5, 1.0, &[1.0, 0.0, 0.0, 0.0, 0.0], 9.0, 20.0).unwrap();
        let x = Point::new(&[1, 0, 0, 0, 0]);
        let y = Point::new(&[2, 0, 0, 0, 0]);
        let env = Environment::new(0, law, c5.clone());
        let env = env.with_overrides([(Edge::new(x, y).unwrap().key(), 3.2)]);
        let v = env.tilted_conductance(&Edge::new(x, y).unwrap()).unwrap();
        assert!((v - 64.27371815420054).abs() < 1e-9, "{v}");
    }

    #[test]
    fn tilted_conductance_overflow_guard() {
        let law = ConductanceLaw::pareto(0.5).unwrap();
        let env = Environment::constant(1.0, law, cfg(2));
        let far = Point::new(&[400, 0]);
        let e = Edge::new(far, far.shifted(0, 1)).unwrap();
        assert!(matches!(env.tilted_conductance(&e), Err(Error::TiltOverflow { .. })));
        assert!(env.tilted_conductance_from(&e, &far).is_ok());
    }

    #[test]
    fn k_open_and_normal() {
        let c = cfg(3);
        let law = ConductanceLaw::pareto(0.5).unwrap();
        let env = Environment::constant(20.0, law, c.clone());
        assert!(env.is_k_open(&Point::ORIGIN));
        let e = c.edge_key(&Point::ORIGIN, 3);
        let env2 = env.with_overrides([(e, 21.0)]);
        assert!(!env2.is_k_open(&Point::ORIGIN));
        let x = Point::new(&[5, -2, 1]);
        let direct = c.incident_edges(&x).iter().all(|e| env2.is_k_normal(e));
        assert_eq!(direct, env2.is_k_open(&x));
    }

    #[test]
    fn k_good_trivial_cases() {
        let c = cfg(5);
        let law = ConductanceLaw::pareto(0.5).unwrap();
        let env = Environment::constant(1.0, law, c.clone());
        assert!(env.is_k_good(&Point::ORIGIN, 40));
        let closed = env.with_overrides([(c.edge_key(&Point::ORIGIN, 0), 100.0)]);
        assert!(!closed.is_k_good(&Point::ORIGIN, 1));
    }

    #[test]
    fn omega_k_view_changes_only_incident_edges() {
        let c = cfg(3);
        let law = ConductanceLaw::pareto(0.5).unwrap();
        let env = Environment::new(5, law, c.clone());
        let x1 = Point::ORIGIN;
        let x2 = Point::new(&[1, 1, 0]);
        let view = env.omega_k_view(&x1, &x2);
        let incident: HashSet<EdgeKey> =
            c.incident_edges(&x1).into_iter().chain(c.incident_edges(&x2)).collect();
        let mut changed = 0;
        for a in -3..=3 {
            for b in -3..=3 {
                for z in -2..=2 {
                    let p = Point::new(&[a, b, z]);
                    for j in 0..c.degree() {
                        let e = c.edge_key(&p, j);
                        if incident.contains(&e) {
                            assert_eq!(view.base_conductance(&e), c.k());
                        } else {
                            assert_eq!(view.base_conductance(&e), env.base_conductance(&e));
                        }
                    }
                }
            }
        }
        for e in &incident {
            if env.base_conductance(e) != c.k() {
                changed += 1;
            }
        }
        assert!(changed <= 4 * c.d());
        assert_eq!(env.omega_k_view(&x1, &x1).overrides().len(), 2 * c.d());
        assert_eq!(view.overrides().len(), 4 * c.d());
    }

    #[test]
    fn geometry_examples() {
        let c = cfg(5);
        assert_eq!(c.level(&Point::new(&[3, -2, 0, 0, 0])), 3.0);
        assert_eq!(c.neighborhood(&Point::ORIGIN).len(), 11);
        assert_eq!(c.incident_edges(&Point::ORIGIN).len(), 10);
        assert!(c.in_box(&Point::ORIGIN, 0.5, 0.5, &Point::ORIGIN));
        assert!(!c.in_box(&Point::ORIGIN, 0.5, 5.0, &Point::new(&[1, 0, 0, 0, 0])));
    }

    #[test]
    fn basis_is_sorted_by_projection() {
        let s = 1.0 / 3f64.sqrt();
        let c = LatticeConfig::new(3, 1.0, &[-s * 0.5f64.sqrt(), s * 1.5f64.sqrt(), s], 7.0, 2.0);
        let c = c.unwrap();
        let proj: Vec<f64> =
            c.basis().iter().map(|b| b.sign as f64 * c.ell()[b.axis]).collect();
        assert!(proj.windows(2).all(|w| w[0] >= w[1]));
        assert!(proj.iter().all(|&p| p >= 0.0));
        assert!(proj[0] >= 1.0 / 3f64.sqrt());
        for (i, f) in c.frame().iter().enumerate() {
            for (j, g) in c.frame().iter().enumerate() {
                let dot: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(LatticeConfig::new(2, 1.0, &[1.0, 0.1], 6.0, 2.0).is_err());
        assert!(LatticeConfig::new(2, -1.0, &[1.0, 0.0], 6.0, 2.0).is_err());
        assert!(LatticeConfig::new(2, 1.0, &[1.0, 0.0], 6.0, 0.5).is_err());
        assert!(LatticeConfig::new(2, 1.0, &[1.0, 0.0], 5.0, 2.0).is_err());
        assert!(ConductanceLaw::pareto(1.5).is_err());
    }

    proptest! {
        #[test]
        fn canonical_edge_is_symmetric(coords in prop::array::uniform4(-50i32..50), j in 0usize..8) {
            let c = cfg(4);
            let x = Point::new(&coords);
            let (axis, sign) = c.direction(j);
            let y = x.shifted(axis, sign);
            let a = Edge::new(x, y).unwrap();
            let b = Edge::new(y, x).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(a.key(), c.edge_key(&x, j));
        }

        #[test]
        fn sampling_is_pure(seed in any::<u64>(), coords in prop::array::uniform3(-1000i32..1000), axis in 0u8..3) {
            let law = ConductanceLaw::pareto(0.5).unwrap();
            let env = Environment::new(seed, law, cfg(3));
            let e = EdgeKey { base: Point::new(&coords), axis };
            let a = env.base_conductance(&e);
            prop_assert_eq!(a.to_bits(), env.clone().base_conductance(&e).to_bits());
            prop_assert!(a >= 1.0);
        }

        #[test]
        fn pareto_log_inverse_is_inverse(p in 1e-12f64..1.0, gamma in 0.05f64..0.95) {
            let law = ConductanceLaw::new(gamma, TailFamily::ParetoLog).unwrap();
            let u = law.inverse_survival(p);
            prop_assert!(u >= law.lower_support() * (1.0 - 1e-12));
            prop_assert!((law.survival(u) - p).abs() <= 1e-9 * p.max(1e-3));
        }
    }
}
