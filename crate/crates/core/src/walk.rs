//! Transition kernels, enhanced walks and trajectory storage.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lattice::{Environment, LatticeConfig, Point, MAX_DIM};
use crate::rng::{mix64, Stream};

/// Number of enhanced outcomes per point, `2 * 2d`.
const MAX_OUTCOMES: usize = 4 * MAX_DIM;

/// Position together with the auxiliary bit of the enhanced walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EnhancedState {
    pub x: Point,
    pub z: u8,
}

impl EnhancedState {
    pub fn new(x: Point, z: u8) -> Self {
        debug_assert!(z <= 1);
        Self { x, z }
    }
}

/// A supply of uniforms on (0, 1).
pub trait UniformSource {
    fn next_uniform(&mut self) -> f64;
}

impl UniformSource for Stream {
    #[inline]
    fn next_uniform(&mut self) -> f64 {
        Stream::next_uniform(self)
    }
}

/// A fixed list of uniforms, for replaying prescribed paths.
#[derive(Clone, Debug)]
pub struct FixedUniforms {
    values: Vec<f64>,
    pos: usize,
}

impl FixedUniforms {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, pos: 0 }
    }
}

impl UniformSource for FixedUniforms {
    fn next_uniform(&mut self) -> f64 {
        let u = *self.values.get(self.pos).expect("fixed uniform list exhausted");
        self.pos += 1;
        u
    }
}

/// Transition probabilities from `x` to its 2d neighbours, in direction order.
pub fn transition_distribution(env: &Environment, x: &Point) -> Vec<f64> {
    let cfg = env.config();
    let weights: Vec<f64> = (0..cfg.degree())
        .map(|j| env.base_conductance(&cfg.edge_key(x, j)) * cfg.step_weights()[j])
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Enhanced kernel from `s`: entry `2j` is the mass of `(x + step_j, 1)` and
/// entry `2j + 1` the mass of `(x + step_j, 0)`.
pub fn enhanced_transition_distribution(env: &Environment, s: &EnhancedState) -> Vec<f64> {
    let mut masses = [0.0; MAX_OUTCOMES];
    let n = enhanced_masses(env, &s.x, &mut masses);
    masses[..n].to_vec()
}

/// Fills `out` with the enhanced masses at `x` and returns their count.
fn enhanced_masses(env: &Environment, x: &Point, out: &mut [f64; MAX_OUTCOMES]) -> usize {
    let cfg = env.config();
    let k = cfg.k();
    let k_inv = 1.0 / k;
    let deg = cfg.degree();
    let mut conductances = [0.0; 2 * MAX_DIM];
    let mut total = 0.0;
    let mut clamped_total = 0.0;
    for (j, c) in conductances[..deg].iter_mut().enumerate() {
        *c = env.base_conductance(&cfg.edge_key(x, j));
        let t = cfg.step_weights()[j];
        total += *c * t;
        clamped_total += c.max(k) * t;
    }
    for j in 0..deg {
        let t = cfg.step_weights()[j];
        let p = conductances[j] * t / total;
        let pk = conductances[j].min(k_inv) * t / clamped_total;
        out[2 * j] = pk;
        out[2 * j + 1] = (p - pk).max(0.0);
    }
    2 * deg
}

/// Samples an outcome index by inverse CDF over `masses`.
#[inline]
fn inverse_cdf(masses: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, m) in masses.iter().enumerate() {
        acc += m;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave the total a hair below 1; fall back to the last
    // outcome carrying mass.
    masses.iter().rposition(|&m| m > 0.0).unwrap_or(masses.len() - 1)
}

#[inline]
fn outcome_state(cfg: &LatticeConfig, x: &Point, outcome: usize) -> EnhancedState {
    let (axis, sign) = cfg.direction(outcome / 2);
    EnhancedState { x: x.shifted(axis, sign), z: if outcome.is_multiple_of(2) { 1 } else { 0 } }
}

/// Direct-mapped memo of enhanced kernels keyed by position.
///
/// Kernels are pure functions of the environment, so evictions never change
/// a sampled path.
#[derive(Clone)]
struct KernelCache {
    keys: Vec<Point>,
    filled: Vec<bool>,
    masses: Vec<[f64; MAX_OUTCOMES]>,
    mask: usize,
}

impl KernelCache {
    fn new(slots: usize) -> Self {
        let slots = slots.next_power_of_two().max(1);
        Self {
            keys: vec![Point::ORIGIN; slots],
            filled: vec![false; slots],
            masses: vec![[0.0; MAX_OUTCOMES]; slots],
            mask: slots - 1,
        }
    }

    #[inline]
    fn slot(&self, x: &Point) -> usize {
        let mut h = 0u64;
        for &c in x.coords() {
            h = mix64(h ^ (c as u32 as u64));
        }
        (h as usize) & self.mask
    }
}

/// Default number of kernel cache slots per walker.
pub const DEFAULT_CACHE_SLOTS: usize = 1024;

/// A walk driven by a counter-based stream in a fixed environment.
#[derive(Clone)]
pub struct Walker {
    env: Environment,
    cache: KernelCache,
    current: EnhancedState,
    stream: Stream,
    steps: u64,
}

impl Walker {
    pub fn new(env: Environment, start: Point, stream: Stream) -> Self {
        Self::with_cache(env, start, stream, DEFAULT_CACHE_SLOTS)
    }

    pub fn with_cache(env: Environment, start: Point, stream: Stream, slots: usize) -> Self {
        Self { env, cache: KernelCache::new(slots), current: EnhancedState::new(start, 1), stream, steps: 0 }
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn current(&self) -> EnhancedState {
        self.current
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Takes one enhanced step and returns the new state.
    #[inline]
    pub fn advance(&mut self) -> EnhancedState {
        let u = self.stream.next_uniform();
        let x = self.current.x;
        let slot = self.cache.slot(&x);
        if !(self.cache.filled[slot] && self.cache.keys[slot] == x) {
            enhanced_masses(&self.env, &x, &mut self.cache.masses[slot]);
            self.cache.keys[slot] = x;
            self.cache.filled[slot] = true;
        }
        let n = 2 * self.env.config().degree();
        let outcome = inverse_cdf(&self.cache.masses[slot][..n], u);
        self.current = outcome_state(self.env.config(), &x, outcome);
        self.steps += 1;
        self.current
    }
}

/// Anything that produces consecutive states of an enhanced walk.
pub trait StateSource {
    /// The state at the current time.
    fn current(&self) -> EnhancedState;
    /// Advances one step; `None` when the source is exhausted.
    fn next_state(&mut self) -> Option<EnhancedState>;
}

impl StateSource for Walker {
    fn current(&self) -> EnhancedState {
        self.current
    }

    #[inline]
    fn next_state(&mut self) -> Option<EnhancedState> {
        Some(self.advance())
    }
}

/// Replays a stored trajectory as a state source.
#[derive(Clone, Debug)]
pub struct Replay {
    states: Vec<EnhancedState>,
    pos: usize,
}

impl Replay {
    pub fn new(traj: &Trajectory) -> Self {
        Self { states: traj.states.clone(), pos: 0 }
    }
}

impl StateSource for Replay {
    fn current(&self) -> EnhancedState {
        self.states[self.pos]
    }

    fn next_state(&mut self) -> Option<EnhancedState> {
        if self.pos + 1 < self.states.len() {
            self.pos += 1;
            Some(self.states[self.pos])
        } else {
            None
        }
    }
}

/// A finite enhanced path with its running maximum level.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    d: usize,
    states: Vec<EnhancedState>,
    max_level: f64,
    origin: Point,
}

impl Trajectory {
    pub fn new(cfg: &LatticeConfig, start: EnhancedState) -> Self {
        Self { d: cfg.d(), states: vec![start], max_level: cfg.level(&start.x), origin: Point::ORIGIN }
    }

    /// Builds a trajectory from states, checking that steps are nearest-neighbour.
    pub fn from_states(cfg: &LatticeConfig, states: Vec<EnhancedState>) -> Result<Self> {
        let first = *states.first().ok_or_else(|| Error::InvalidParameter("empty trajectory".into()))?;
        let mut t = Self::new(cfg, first);
        for s in states.into_iter().skip(1) {
            t.try_push(cfg, s)?;
        }
        Ok(t)
    }

    /// A path from `start` following the given direction indices, all with bit `z`.
    pub fn from_directions(cfg: &LatticeConfig, start: Point, dirs: &[usize], z: u8) -> Self {
        let mut t = Self::new(cfg, EnhancedState::new(start, z));
        let mut x = start;
        for &j in dirs {
            let (axis, sign) = cfg.direction(j);
            x = x.shifted(axis, sign);
            t.push(cfg, EnhancedState::new(x, z));
        }
        t
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn states(&self) -> &[EnhancedState] {
        &self.states
    }

    pub fn start(&self) -> EnhancedState {
        self.states[0]
    }

    pub fn last(&self) -> EnhancedState {
        *self.states.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Number of steps taken.
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn max_level(&self) -> f64 {
        self.max_level
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn set_origin(&mut self, origin: Point) {
        self.origin = origin;
    }

    /// Appends a state. Panics if it is not a neighbour of the last one.
    pub fn push(&mut self, cfg: &LatticeConfig, s: EnhancedState) {
        self.try_push(cfg, s).expect("non nearest-neighbour step");
    }

    pub fn try_push(&mut self, cfg: &LatticeConfig, s: EnhancedState) -> Result<()> {
        let last = self.last().x;
        if last.l1_distance(&s.x) != 1 || s.z > 1 {
            return Err(Error::InvalidParameter(format!(
                "invalid step {:?} -> {:?} (z = {})",
                last, s.x, s.z
            )));
        }
        self.max_level = self.max_level.max(cfg.level(&s.x));
        self.states.push(s);
        Ok(())
    }

    /// Recomputes the running maximum from scratch.
    pub fn recompute_max_level(&self, cfg: &LatticeConfig) -> f64 {
        self.states.iter().map(|s| cfg.level(&s.x)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Text dump: a header `d <d> origin <o_1 .. o_d>` then `k x_1 .. x_d z` per state.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        write!(out, "d {} origin", self.d).unwrap();
        for c in self.origin.slice(self.d) {
            write!(out, " {c}").unwrap();
        }
        out.push('\n');
        for (k, s) in self.states.iter().enumerate() {
            write!(out, "{k}").unwrap();
            for c in s.x.slice(self.d) {
                write!(out, " {c}").unwrap();
            }
            writeln!(out, " {}", s.z).unwrap();
        }
        out
    }

    /// Parses the format written by [`Trajectory::dump`].
    pub fn parse(cfg: &LatticeConfig, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty trajectory file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() < 3 || fields[0] != "d" || fields[2] != "origin" {
            return Err(Error::Parse("line 1: expected `d <d> origin <coords>`".into()));
        }
        let d: usize = fields[1].parse().map_err(|_| Error::Parse("line 1: bad dimension".into()))?;
        if d != cfg.d() || fields.len() != 3 + d {
            return Err(Error::Parse(format!("line 1: dimension {d} does not match configuration {}", cfg.d())));
        }
        let origin = parse_point(&fields[3..], 1)?;
        let mut states = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != d + 2 {
                return Err(Error::Parse(format!("line {}: expected {} fields", i + 1, d + 2)));
            }
            let k: usize = f[0].parse().map_err(|_| Error::Parse(format!("line {}: bad index", i + 1)))?;
            if k != states.len() {
                return Err(Error::Parse(format!("line {}: index {k} out of sequence", i + 1)));
            }
            let x = parse_point(&f[1..=d], i + 1)?;
            let z: u8 = f[d + 1].parse().map_err(|_| Error::Parse(format!("line {}: bad bit", i + 1)))?;
            if z > 1 {
                return Err(Error::Parse(format!("line {}: bit must be 0 or 1", i + 1)));
            }
            states.push(EnhancedState::new(x, z));
        }
        let mut t = Self::from_states(cfg, states)?;
        t.origin = origin;
        Ok(t)
    }
}

fn parse_point(fields: &[&str], line: usize) -> Result<Point> {
    let coords: Vec<i32> = fields
        .iter()
        .map(|s| s.parse().map_err(|_| Error::Parse(format!("line {line}: bad coordinate `{s}`"))))
        .collect::<Result<_>>()?;
    Ok(Point::new(&coords))
}

/// Appends one state sampled from the enhanced kernel at the trajectory's end.
pub fn step<U: UniformSource>(env: &Environment, traj: &mut Trajectory, source: &mut U) {
    let x = traj.last().x;
    let mut masses = [0.0; MAX_OUTCOMES];
    let n = enhanced_masses(env, &x, &mut masses);
    let outcome = inverse_cdf(&masses[..n], source.next_uniform());
    let s = outcome_state(env.config(), &x, outcome);
    traj.push(env.config(), s);
}

/// Result of [`run_until`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    /// The predicate held at this state index.
    Hit(usize),
    /// The step budget ran out first.
    Truncated,
}

/// Steps until `stop` holds on the trajectory or `max_steps` steps were taken.
pub fn run_until<U, F>(
    env: &Environment,
    traj: &mut Trajectory,
    mut stop: F,
    max_steps: usize,
    source: &mut U,
) -> RunOutcome
where
    U: UniformSource,
    F: FnMut(&Trajectory) -> bool,
{
    if stop(traj) {
        return RunOutcome::Hit(traj.len() - 1);
    }
    for _ in 0..max_steps {
        step(env, traj, source);
        if stop(traj) {
            return RunOutcome::Hit(traj.len() - 1);
        }
    }
    RunOutcome::Truncated
}

/// Path stored as one byte per step with periodic position checkpoints.
#[derive(Clone, Debug)]
pub struct CompactPath {
    codes: Vec<u8>,
    checkpoints: Vec<Point>,
    start: EnhancedState,
    last: Point,
}

const CHECKPOINT_EVERY: usize = 64;

impl CompactPath {
    pub fn new(start: EnhancedState) -> Self {
        Self { codes: Vec::new(), checkpoints: vec![start.x], start, last: start.x }
    }

    pub fn from_trajectory(cfg: &LatticeConfig, traj: &Trajectory) -> Self {
        let mut p = Self::new(traj.start());
        for s in &traj.states()[1..] {
            p.push(cfg, *s);
        }
        p
    }

    /// Number of stored states.
    pub fn len(&self) -> usize {
        self.codes.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last(&self) -> Point {
        self.last
    }

    #[inline]
    pub fn push(&mut self, cfg: &LatticeConfig, s: EnhancedState) {
        let j = cfg.direction_index(&self.last, &s.x).expect("non nearest-neighbour step");
        self.codes.push((j as u8) << 1 | s.z);
        self.last = s.x;
        if self.codes.len().is_multiple_of(CHECKPOINT_EVERY) {
            self.checkpoints.push(s.x);
        }
    }

    /// Position at index `i`.
    pub fn position(&self, cfg: &LatticeConfig, i: usize) -> Point {
        let block = i / CHECKPOINT_EVERY;
        let mut x = self.checkpoints[block];
        for &code in &self.codes[block * CHECKPOINT_EVERY..i] {
            let (axis, sign) = cfg.direction((code >> 1) as usize);
            x = x.shifted(axis, sign);
        }
        x
    }

    /// Enhanced bit at index `i`.
    pub fn bit(&self, i: usize) -> u8 {
        if i == 0 {
            self.start.z
        } else {
            self.codes[i - 1] & 1
        }
    }

    /// Iterates over states starting at index `from`.
    pub fn iter_from<'a>(&'a self, cfg: &'a LatticeConfig, from: usize) -> impl Iterator<Item = EnhancedState> + 'a {
        let first = EnhancedState::new(self.position(cfg, from), self.bit(from));
        let mut x = first.x;
        std::iter::once(first).chain(self.codes[from..].iter().map(move |&code| {
            let (axis, sign) = cfg.direction((code >> 1) as usize);
            x = x.shifted(axis, sign);
            EnhancedState::new(x, code & 1)
        }))
    }

    pub fn to_trajectory(&self, cfg: &LatticeConfig) -> Trajectory {
        let mut t = Trajectory::new(cfg, self.start);
        for s in self.iter_from(cfg, 0).skip(1) {
            t.push(cfg, s);
        }
        t
    }
}

/// A run of moves produced by [`CompressedWalker::advance`].
///
/// A walk sitting on an edge of large conductance bounces between its two
/// endpoints many times. The excursion records the start, the bounce
/// partner, how many steps were spent and where the walk left the pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Excursion {
    pub start: Point,
    /// The other endpoint of the strong edge, when the move was compressed.
    pub partner: Option<Point>,
    /// Total number of steps, including the final exit step.
    pub steps: u64,
    pub end: Point,
}

impl Excursion {
    /// Position `offset` steps after the start, for `offset <= steps`.
    pub fn position_at(&self, offset: u64) -> Point {
        if offset == 0 {
            self.start
        } else if offset >= self.steps {
            self.end
        } else {
            match self.partner {
                Some(p) if offset % 2 == 1 => p,
                _ => self.start,
            }
        }
    }

    /// Whether the partner endpoint was visited.
    pub fn visits_partner(&self) -> bool {
        self.partner.is_some() && self.steps >= 2
    }
}

#[derive(Clone)]
struct PlainKernelCache {
    keys: Vec<Point>,
    filled: Vec<bool>,
    probs: Vec<[f64; 2 * MAX_DIM]>,
    mask: usize,
}

impl PlainKernelCache {
    fn new(slots: usize) -> Self {
        let slots = slots.next_power_of_two().max(1);
        Self {
            keys: vec![Point::ORIGIN; slots],
            filled: vec![false; slots],
            probs: vec![[0.0; 2 * MAX_DIM]; slots],
            mask: slots - 1,
        }
    }

    fn get(&mut self, env: &Environment, x: &Point) -> [f64; 2 * MAX_DIM] {
        let mut h = 0u64;
        for &c in x.coords() {
            h = mix64(h ^ (c as u32 as u64));
        }
        let slot = (h as usize) & self.mask;
        if !(self.filled[slot] && self.keys[slot] == *x) {
            let cfg = env.config();
            let mut p = [0.0; 2 * MAX_DIM];
            let mut total = 0.0;
            for (j, pj) in p[..cfg.degree()].iter_mut().enumerate() {
                *pj = env.base_conductance(&cfg.edge_key(x, j)) * cfg.step_weights()[j];
                total += *pj;
            }
            for pj in p[..cfg.degree()].iter_mut() {
                *pj /= total;
            }
            self.probs[slot] = p;
            self.keys[slot] = *x;
            self.filled[slot] = true;
        }
        self.probs[slot]
    }
}

/// Round-trip probability above which a strong edge is crossed in one draw.
pub const DEFAULT_BOUNCE_THRESHOLD: f64 = 0.25;

/// Position-only walk that samples repeated crossings of a strong edge in
/// one draw.
///
/// The bounce count across the edge is geometric and the exit is drawn from
/// the kernel conditioned on leaving the pair, so the position process has
/// exactly the law of the plain walk. Enhanced bits are not produced.
#[derive(Clone)]
pub struct CompressedWalker {
    env: Environment,
    cache: PlainKernelCache,
    current: Point,
    stream: Stream,
    time: u64,
    threshold: f64,
}

impl CompressedWalker {
    pub fn new(env: Environment, start: Point, stream: Stream) -> Self {
        Self {
            env,
            cache: PlainKernelCache::new(DEFAULT_CACHE_SLOTS),
            current: start,
            stream,
            time: 0,
            threshold: DEFAULT_BOUNCE_THRESHOLD,
        }
    }

    /// Sets the round-trip probability above which bounces are compressed.
    /// Values above 1 disable compression.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn current(&self) -> Point {
        self.current
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn advance(&mut self) -> Excursion {
        let cfg = self.env.config().clone();
        let deg = cfg.degree();
        let x = self.current;
        let px = self.cache.get(&self.env, &x);
        let mut best = 0;
        for j in 1..deg {
            if px[j] > px[best] {
                best = j;
            }
        }
        let (axis, sign) = cfg.direction(best);
        let y = x.shifted(axis, sign);
        let back = best ^ 1;
        let py = self.cache.get(&self.env, &y);
        let a = px[best];
        let b = py[back];

        if a * b < self.threshold {
            let j = inverse_cdf(&px[..deg], self.stream.next_uniform());
            let (axis, sign) = cfg.direction(j);
            let end = x.shifted(axis, sign);
            return self.finish(Excursion { start: x, partner: None, steps: 1, end });
        }

        let fail_x: f64 = (0..deg).filter(|&j| j != best).map(|j| px[j]).sum();
        let fail_y: f64 = (0..deg).filter(|&j| j != back).map(|j| py[j]).sum();
        let leave = fail_x + a * fail_y;
        let u = self.stream.next_uniform();
        let round_trips = (u.ln() / (-leave).ln_1p()).floor();
        let round_trips = if round_trips.is_finite() && round_trips < 1e18 { round_trips as u64 } else { u64::MAX / 4 };

        let (from, probs, skip, mass, steps) = if self.stream.next_uniform() * leave < fail_x {
            (x, px, best, fail_x, 2 * round_trips + 1)
        } else {
            (y, py, back, fail_y, 2 * round_trips + 2)
        };
        let target = self.stream.next_uniform() * mass;
        let mut acc = 0.0;
        let mut exit = None;
        for j in (0..deg).filter(|&j| j != skip) {
            acc += probs[j];
            if target < acc {
                exit = Some(j);
                break;
            }
        }
        let j = exit.unwrap_or_else(|| (0..deg).rfind(|&j| j != skip && probs[j] > 0.0).unwrap());
        let (axis, sign) = cfg.direction(j);
        let end = from.shifted(axis, sign);
        self.finish(Excursion { start: x, partner: Some(y), steps, end })
    }

    fn finish(&mut self, e: Excursion) -> Excursion {
        self.current = e.end;
        self.time = self.time.saturating_add(e.steps);
        e
    }
}
