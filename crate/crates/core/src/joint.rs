//! Two walks in one environment: joint ladder levels, the joint defect, joint
//! regeneration levels, separation of traces and the clamped-environment
//! comparison.
//!
//! Joint quantities compare levels for equality, so every joint routine
//! requires the bias direction to be the first coordinate axis. Levels are
//! then the integer first coordinate.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{Environment, LatticeConfig, Point};
use crate::regen::DefectOutcome;
use crate::rng::{derive, tags, walk_key, Stream};
use crate::walk::{CompactPath, CompressedWalker, EnhancedState, Trajectory, Walker};

/// Number of steps added to a walk per lazy extension.
pub const EXTENSION_BLOCK: u64 = 256;

#[inline]
fn level(x: &Point) -> i64 {
    x.coord(0) as i64
}

/// Whether the two walks share one environment or use independent copies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvMode {
    Same,
    Independent,
}

impl EnvMode {
    pub fn name(&self) -> &'static str {
        match self {
            EnvMode::Same => "same",
            EnvMode::Independent => "independent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "same" => Some(EnvMode::Same),
            "independent" => Some(EnvMode::Independent),
            _ => None,
        }
    }
}

fn require_e1(cfg: &LatticeConfig) -> Result<()> {
    if cfg.is_axis_aligned_e1() {
        Ok(())
    } else {
        Err(Error::UnsupportedDirection("joint walks need the bias along the first axis".into()))
    }
}

fn require_admissible(x: &Point) -> Result<()> {
    if level(x) == 0 {
        Ok(())
    } else {
        Err(Error::StartOutsideAdmissible(format!("start {x:?} has level {}, expected 0", level(x))))
    }
}

#[derive(Clone)]
struct JointWalk {
    path: CompactPath,
    walker: Option<Walker>,
    /// `first_hit[j]` is the first time the level is at least `base + j`.
    first_hit: Vec<u64>,
    base: i64,
}

impl JointWalk {
    fn new(start: EnhancedState, walker: Option<Walker>) -> Self {
        Self { path: CompactPath::new(start), walker, first_hit: vec![0], base: level(&start.x) }
    }

    fn len(&self) -> u64 {
        self.path.len() as u64
    }

    fn max_level(&self) -> i64 {
        self.base + self.first_hit.len() as i64 - 1
    }

    fn push(&mut self, cfg: &LatticeConfig, s: EnhancedState) {
        let t = self.path.len() as u64;
        self.path.push(cfg, s);
        if level(&s.x) > self.max_level() {
            self.first_hit.push(t);
        }
    }

    /// Adds up to `n` steps without exceeding `limit` stored steps. Returns
    /// the number of steps added.
    fn extend(&mut self, cfg: &LatticeConfig, n: u64, limit: u64) -> u64 {
        let room = limit.saturating_sub(self.len() - 1).min(n);
        let Some(w) = self.walker.as_mut() else { return 0 };
        let mut states = Vec::with_capacity(room as usize);
        for _ in 0..room {
            states.push(w.advance());
        }
        for s in states {
            self.push(cfg, s);
        }
        room
    }

    /// Largest level seen on `[0, t]`.
    fn prefix_max(&self, t: u64) -> i64 {
        let j = self.first_hit.partition_point(|&h| h <= t);
        self.base + j as i64 - 1
    }
}

/// A pair of walks with on-demand extension.
#[derive(Clone)]
pub struct JointTrajectory {
    envs: [Environment; 2],
    mode: EnvMode,
    walks: [JointWalk; 2],
    max_steps: u64,
}

impl JointTrajectory {
    /// Builds a pair from stored trajectories. The pair cannot be extended.
    pub fn from_trajectories(env: &Environment, traj1: &Trajectory, traj2: &Trajectory) -> Result<Self> {
        let cfg = env.config();
        require_e1(cfg)?;
        let mut walks = Vec::with_capacity(2);
        for t in [traj1, traj2] {
            require_admissible(&t.start().x)?;
            let mut w = JointWalk::new(t.start(), None);
            for s in &t.states()[1..] {
                if cfg.direction_index(&w.path.last(), &s.x).is_none() {
                    return Err(Error::InvalidParameter("trajectory has a non nearest-neighbour step".into()));
                }
                w.push(cfg, *s);
            }
            walks.push(w);
        }
        let w2 = walks.pop().unwrap();
        let w1 = walks.pop().unwrap();
        let max_steps = w1.len().max(w2.len());
        Ok(Self { envs: [env.clone(), env.clone()], mode: EnvMode::Same, walks: [w1, w2], max_steps })
    }

    pub fn env(&self, i: usize) -> &Environment {
        &self.envs[i]
    }

    pub fn mode(&self) -> EnvMode {
        self.mode
    }

    pub fn config(&self) -> &LatticeConfig {
        self.envs[0].config()
    }

    /// Step budget per walk.
    pub fn max_steps(&self) -> u64 {
        self.max_steps
    }

    pub fn set_max_steps(&mut self, max_steps: u64) {
        self.max_steps = max_steps;
    }

    /// Number of stored states of walk `i`.
    pub fn len(&self, i: usize) -> u64 {
        self.walks[i].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_level(&self, i: usize) -> i64 {
        self.walks[i].max_level()
    }

    pub fn position(&self, i: usize, t: u64) -> Point {
        self.walks[i].path.position(self.config(), t as usize)
    }

    pub fn state(&self, i: usize, t: u64) -> EnhancedState {
        EnhancedState::new(self.position(i, t), self.walks[i].path.bit(t as usize))
    }

    pub fn trajectory(&self, i: usize) -> Trajectory {
        self.walks[i].path.to_trajectory(self.config())
    }

    /// Extends walk `i` by one block. Returns `false` when nothing was added.
    fn extend(&mut self, i: usize) -> bool {
        let cfg = self.envs[i].shared_config();
        self.walks[i].extend(&cfg, EXTENSION_BLOCK, self.max_steps) > 0
    }

    /// Extends walk `i` until it holds index `t`.
    fn ensure_time(&mut self, i: usize, t: u64) -> bool {
        while self.walks[i].len() <= t {
            if !self.extend(i) {
                return false;
            }
        }
        true
    }

    /// Extends the walks alternately, one block at a time, until walk `i`
    /// has reached level `targets[i]`.
    fn ensure_levels(&mut self, targets: [i64; 2]) -> bool {
        loop {
            let mut pending = false;
            for (i, &target) in targets.iter().enumerate() {
                if self.walks[i].max_level() < target {
                    if !self.extend(i) {
                        return false;
                    }
                    pending = true;
                }
            }
            if !pending {
                return true;
            }
        }
    }

    /// First time at or after `s` at which walk `i` has level at least `target`.
    /// Returns `None` when the budget runs out first.
    pub fn first_hit_from(&mut self, i: usize, s: u64, target: i64) -> Option<u64> {
        if !self.ensure_time(i, s) {
            return None;
        }
        let here = level(&self.position(i, s));
        if target <= here {
            return Some(s);
        }
        let w = &self.walks[i];
        if w.prefix_max(s) == here {
            // nothing before `s` reached above `here`, so global first hits apply
            let mut targets = [i64::MIN; 2];
            targets[i] = target;
            if !self.ensure_levels(targets) {
                return None;
            }
            let w = &self.walks[i];
            return Some(w.first_hit[(target - w.base) as usize]);
        }
        let mut found = None;
        if !self.visit_from(i, s, |t, st| {
            found = Some(t);
            level(&st.x) >= target
        }) {
            return None;
        }
        found
    }

    /// Visits the states of walk `i` from index `from` on, extending lazily,
    /// until `visit` returns `true`. Returns `false` when the budget runs out.
    fn visit_from<F: FnMut(u64, EnhancedState) -> bool>(&mut self, i: usize, from: u64, mut visit: F) -> bool {
        let mut t = from;
        loop {
            if !self.ensure_time(i, t) {
                return false;
            }
            let cfg = self.envs[i].shared_config();
            for st in self.walks[i].path.iter_from(&cfg, t as usize) {
                if visit(t, st) {
                    return true;
                }
                t += 1;
            }
        }
    }
}

/// Simulates a pair of walks started at `starts`, each for `steps` steps.
///
/// In independent mode the second walk uses a copy of the environment with a
/// derived seed. Stream keys address the step streams of the two walks.
pub fn run_pair(
    env: &Environment,
    mode: EnvMode,
    starts: [Point; 2],
    steps: u64,
    stream_keys: [u64; 2],
) -> Result<JointTrajectory> {
    let cfg = env.config();
    require_e1(cfg)?;
    for s in &starts {
        require_admissible(s)?;
    }
    let second = match mode {
        EnvMode::Same => env.clone(),
        EnvMode::Independent => env.reseeded(independent_seed(env.seed())),
    };
    let envs = [env.clone(), second];
    let walks = [0, 1].map(|i| {
        let walker = Walker::new(envs[i].clone(), starts[i], Stream::new(stream_keys[i]));
        JointWalk::new(walker.current(), Some(walker))
    });
    let mut joint = JointTrajectory { envs, mode, walks, max_steps: u64::MAX };
    for i in 0..2 {
        let cfg = joint.envs[i].shared_config();
        joint.walks[i].extend(&cfg, steps, u64::MAX);
    }
    Ok(joint)
}

/// Seed of the second environment in independent mode.
pub fn independent_seed(seed: u64) -> u64 {
    derive(seed, tags::ENV, u64::MAX)
}

/// Result of a joint ladder search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LadderSearch {
    /// The joint ladder level and the two hitting times.
    Found { level: i64, times: [u64; 2] },
    /// The budget ran out while examining levels at or above this one.
    Truncated { searched_to: i64 },
}

/// Whether walk `i`, restarted at time `s`, first enters level `target` at a
/// K-open point by two consecutive first-axis steps from a strict maximum.
/// Returns the entry time on success, `Err` on budget exhaustion.
fn ladder_clause(joint: &mut JointTrajectory, i: usize, s: u64, target: i64) -> std::result::Result<Option<u64>, ()> {
    let t = joint.first_hit_from(i, s, target).ok_or(())?;
    if t < s + 2 {
        return Ok(None);
    }
    let t1 = joint.first_hit_from(i, s, target - 1).ok_or(())?;
    let t2 = joint.first_hit_from(i, s, target - 2).ok_or(())?;
    if t1 + 1 != t || t2 + 2 != t {
        return Ok(None);
    }
    let x = joint.position(i, t);
    Ok(if level(&x) == target && joint.envs[i].is_k_open(&x) { Some(t) } else { None })
}

/// Smallest level above both starting levels whose first entry is a K-open
/// ladder point for each walk restarted at `shifts`.
pub fn joint_ladder_level(joint: &mut JointTrajectory, shifts: [u64; 2]) -> Result<LadderSearch> {
    require_e1(joint.config())?;
    for (i, &s) in shifts.iter().enumerate() {
        if !joint.ensure_time(i, s) {
            return Ok(LadderSearch::Truncated { searched_to: i64::MIN });
        }
    }
    let start = level(&joint.position(0, shifts[0])).max(level(&joint.position(1, shifts[1])));
    let mut r = start + 1;
    loop {
        if !joint.ensure_levels([r, r]) {
            return Ok(LadderSearch::Truncated { searched_to: r });
        }
        let mut times = [0u64; 2];
        let mut ok = true;
        for i in 0..2 {
            match ladder_clause(joint, i, shifts[i], r) {
                Err(()) => return Ok(LadderSearch::Truncated { searched_to: r }),
                Ok(Some(t)) => times[i] = t,
                Ok(None) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(LadderSearch::Found { level: r, times });
        }
        r += 1;
    }
}

/// Ladder level found by scanning every candidate level directly on two
/// stored trajectories. Used as an independent check of the lazy search.
pub fn brute_force_joint_ladder(
    envs: [&Environment; 2],
    trajs: [&Trajectory; 2],
    shifts: [usize; 2],
) -> Option<(i64, [usize; 2])> {
    let paths: Vec<&[EnhancedState]> = (0..2).map(|i| &trajs[i].states()[shifts[i]..]).collect();
    let start = (0..2).map(|i| level(&paths[i][0].x)).max().unwrap();
    let top = (0..2).map(|i| paths[i].iter().map(|s| level(&s.x)).max().unwrap()).min().unwrap();
    let e1 = Point::unit(0, 1);
    'levels: for r in start + 1..=top {
        let mut times = [0usize; 2];
        for i in 0..2 {
            let p = paths[i];
            let Some(n) = p.iter().position(|s| level(&s.x) >= r) else { continue 'levels };
            if n < 2 {
                continue 'levels;
            }
            let (a, b, c) = (p[n - 2].x, p[n - 1].x, p[n].x);
            let strict = p[..n - 2].iter().all(|s| level(&s.x) < level(&a));
            if !(b == a.add(&e1) && c == b.add(&e1) && strict && envs[i].is_k_open(&c)) {
                continue 'levels;
            }
            times[i] = n + shifts[i];
        }
        let lo = (0..2).map(|i| level(&trajs[i].states()[times[i]].x)).min().unwrap();
        if lo == r {
            return Some((r, times));
        }
    }
    None
}

/// Defect scan of one walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WalkDefect {
    /// Defect step relative to the restart time, or open at the horizon.
    pub outcome: DefectOutcome,
    /// Largest level on the scanned stretch up to and including the defect.
    pub max_level: i64,
    /// The budget ran out before the scan finished.
    pub truncated: bool,
}

/// Output of [`joint_defect`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JointDefect {
    pub walks: [WalkDefect; 2],
    /// Smaller of the two defect levels, `None` when both walks are open at the horizon.
    pub level: Option<i64>,
}

impl JointDefect {
    pub fn truncated(&self) -> bool {
        self.walks.iter().any(|w| w.truncated)
    }
}

fn in_closed_neighborhood(center: &Point, x: &Point) -> bool {
    center.l1_distance(x) <= 1
}

/// Scans walk `i` from time `start` for the joint defect, stopping at the
/// first time its level exceeds `horizon`.
fn scan_defect(joint: &mut JointTrajectory, i: usize, start: u64, origins: [Point; 2], horizon: i64) -> WalkDefect {
    let origin_level = level(&origins[i]);
    let below = [origins[0].shifted(0, -1), origins[1].shifted(0, -1)];
    let mut max_level = origin_level;
    let mut prev = joint.position(i, start);
    let mut outcome = DefectOutcome::Open;
    let finished = joint.visit_from(i, start + 1, |t, cur| {
        let lv = level(&cur.x);
        if lv > horizon {
            return true;
        }
        max_level = max_level.max(lv);
        let n = (t - start) as usize;
        if lv <= origin_level {
            outcome = DefectOutcome::Back(n);
            return true;
        }
        if (cur.z == 0 && origins.iter().any(|o| in_closed_neighborhood(o, &prev)))
            || below.iter().any(|o| in_closed_neighborhood(o, &cur.x))
        {
            outcome = DefectOutcome::Origin(n);
            return true;
        }
        prev = cur.x;
        false
    });
    WalkDefect { outcome, max_level, truncated: !finished }
}

/// Joint defect of the two walks restarted at `starts`, scanned up to the
/// first entry of each walk above `horizon`.
pub fn joint_defect(joint: &mut JointTrajectory, starts: [u64; 2], horizon: i64) -> Result<JointDefect> {
    require_e1(joint.config())?;
    for (i, &s) in starts.iter().enumerate() {
        if !joint.ensure_time(i, s) {
            let w = WalkDefect { outcome: DefectOutcome::Open, max_level: i64::MIN, truncated: true };
            return Ok(JointDefect { walks: [w, w], level: None });
        }
    }
    let origins = [joint.position(0, starts[0]), joint.position(1, starts[1])];
    let walks = [0, 1].map(|i| scan_defect(joint, i, starts[i], origins, horizon));
    let level = walks.iter().filter(|w| w.outcome != DefectOutcome::Open).map(|w| w.max_level).min();
    Ok(JointDefect { walks, level })
}

/// Defect level used by the iteration. The second walk is only scanned as
/// far as the first walk's defect level, beyond which it cannot lower the minimum.
fn defect_level(joint: &mut JointTrajectory, starts: [u64; 2], horizon: i64) -> std::result::Result<Option<i64>, ()> {
    let origins = [joint.position(0, starts[0]), joint.position(1, starts[1])];
    let first = scan_defect(joint, 0, starts[0], origins, horizon);
    if first.truncated {
        return Err(());
    }
    let bound = match first.outcome {
        DefectOutcome::Open => horizon,
        _ => first.max_level.min(horizon),
    };
    let second = scan_defect(joint, 1, starts[1], origins, bound);
    if second.truncated {
        return Err(());
    }
    Ok(match (first.outcome, second.outcome) {
        (DefectOutcome::Open, DefectOutcome::Open) => None,
        (_, DefectOutcome::Open) => Some(first.max_level),
        (_, _) => Some(second.max_level),
    })
}

/// One confirmed joint regeneration level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JointRegenRecord {
    pub k: usize,
    pub level: i64,
    pub times: [u64; 2],
    pub points: [Point; 2],
    pub confirmed: bool,
}

/// Output of [`joint_regeneration_levels`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointRegenRun {
    pub records: Vec<JointRegenRecord>,
    pub truncated: bool,
    /// Number of ladder levels examined.
    pub candidates: u64,
    /// Lowest level not yet ruled out for the next record when truncated.
    pub next_lower_bound: i64,
}

/// Runs the alternating ladder and defect iteration until `target_count`
/// joint regeneration levels are confirmed or the budget runs out. A level is
/// confirmed once both walks pass `delta` levels above it without a defect.
pub fn joint_regeneration_levels(joint: &mut JointTrajectory, target_count: usize, delta: i64) -> Result<JointRegenRun> {
    require_e1(joint.config())?;
    if target_count == 0 {
        return Err(Error::InvalidParameter("target count must be at least 1".into()));
    }
    if delta < 1 {
        return Err(Error::InvalidParameter("confirmation margin must be at least 1".into()));
    }
    let mut records = Vec::new();
    let mut candidates = 0;
    let mut epoch = [0u64; 2];
    let mut m = level(&joint.position(0, 0)).min(level(&joint.position(1, 0)));
    let mut lower = m + 1;
    while records.len() < target_count {
        let mut shifts = [0u64; 2];
        for i in 0..2 {
            match joint.first_hit_from(i, epoch[i], m + 1) {
                Some(t) => shifts[i] = t,
                None => return Ok(JointRegenRun { records, truncated: true, candidates, next_lower_bound: lower }),
            }
        }
        let (l, times) = match joint_ladder_level(joint, shifts)? {
            LadderSearch::Found { level, times } => (level, times),
            LadderSearch::Truncated { searched_to } => {
                let next_lower_bound = lower.max(searched_to);
                return Ok(JointRegenRun { records, truncated: true, candidates, next_lower_bound });
            }
        };
        candidates += 1;
        lower = l;
        match defect_level(joint, times, l + delta) {
            Err(()) => return Ok(JointRegenRun { records, truncated: true, candidates, next_lower_bound: lower }),
            Ok(Some(level)) => {
                m = level;
                lower = m + 1;
            }
            Ok(None) => {
                let points = [joint.position(0, times[0]), joint.position(1, times[1])];
                records.push(JointRegenRecord { k: records.len() + 1, level: l, times, points, confirmed: true });
                epoch = times;
                m = l;
                lower = l + 1;
            }
        }
    }
    Ok(JointRegenRun { records, truncated: false, candidates, next_lower_bound: lower })
}

/// Definitional checks on confirmed records: K-open points at the recorded
/// level, first entries, strictly increasing levels with gaps of at least 2
/// and no return to the recorded level on the stored remainder of each walk.
/// Returns the list of violations.
pub fn check_joint_records(joint: &JointTrajectory, records: &[JointRegenRecord]) -> Vec<String> {
    let mut bad = Vec::new();
    let cfg = joint.config();
    for (idx, r) in records.iter().enumerate() {
        for i in 0..2 {
            let x = joint.position(i, r.times[i]);
            if x != r.points[i] || level(&x) != r.level {
                bad.push(format!("record {}: walk {} point mismatch", r.k, i + 1));
            }
            if !joint.env(i).is_k_open(&x) {
                bad.push(format!("record {}: walk {} point not K-open", r.k, i + 1));
            }
            let w = &joint.walks[i];
            if w.prefix_max(r.times[i].saturating_sub(1)) >= r.level && r.times[i] > 0 {
                bad.push(format!("record {}: walk {} not a first entry", r.k, i + 1));
            }
            if w.path.iter_from(cfg, r.times[i] as usize).skip(1).any(|s| level(&s.x) <= r.level) {
                bad.push(format!("record {}: walk {} returns to level {}", r.k, i + 1, r.level));
            }
        }
        if idx > 0 && r.level - records[idx - 1].level < 2 {
            bad.push(format!("record {}: gap below 2", r.k));
        }
    }
    bad
}

/// Separation of two traces above a grid of levels.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparationReport {
    pub r_grid: Vec<i64>,
    /// Whether the traces above level `R` come within distance 2.
    pub close: Vec<bool>,
    /// Smallest distance between trace points above `R`, reported only up to 2.
    pub min_distance: Vec<Option<u64>>,
    pub truncated: [bool; 2],
    pub trace_sizes: [usize; 2],
}

/// Offsets of l1 norm at most 2 in dimension `d`, paired with their norm.
fn close_offsets(d: usize) -> Vec<(Point, u64)> {
    let mut out = vec![(Point::ORIGIN, 0)];
    for a in 0..d {
        for s in [-1, 1] {
            out.push((Point::unit(a, s), 1));
            out.push((Point::unit(a, 2 * s), 2));
        }
    }
    for a in 0..d {
        for b in a + 1..d {
            for sa in [-1, 1] {
                for sb in [-1, 1] {
                    out.push((Point::unit(a, sa).add(&Point::unit(b, sb)), 2));
                }
            }
        }
    }
    out
}

/// Separation events of two finite traces. A pair of points counts above
/// level `R` when both lie strictly above it.
pub fn separation_from_traces(
    cfg: &LatticeConfig,
    trace1: &HashSet<Point>,
    trace2: &HashSet<Point>,
    r_grid: &[i64],
    truncated: [bool; 2],
) -> SeparationReport {
    let (small, large) = if trace1.len() <= trace2.len() { (trace1, trace2) } else { (trace2, trace1) };
    // best[dist] is the highest level at which a pair at that distance is seen
    let mut best = [i64::MIN; 3];
    let offsets = close_offsets(cfg.d());
    for x in small {
        for (off, dist) in &offsets {
            let y = x.add(off);
            if large.contains(&y) {
                let lv = level(x).min(level(&y));
                let slot = &mut best[*dist as usize];
                *slot = (*slot).max(lv);
            }
        }
    }
    let close = r_grid.iter().map(|&r| best.iter().any(|&b| b > r)).collect();
    let min_distance = r_grid.iter().map(|&r| (0..3).find(|&d| best[d] > r).map(|d| d as u64)).collect();
    SeparationReport {
        r_grid: r_grid.to_vec(),
        close,
        min_distance,
        truncated,
        trace_sizes: [trace1.len(), trace2.len()],
    }
}

/// Separation events of the stored parts of a pair. With a horizon, each
/// trace stops at the first entry above it.
pub fn separation_event(joint: &JointTrajectory, r_grid: &[i64], horizon: Option<i64>) -> SeparationReport {
    let cfg = joint.config();
    let mut traces = [HashSet::new(), HashSet::new()];
    let mut truncated = [false; 2];
    for (i, trace) in traces.iter_mut().enumerate() {
        let mut reached = horizon.is_none();
        for s in joint.walks[i].path.iter_from(cfg, 0) {
            trace.insert(s.x);
            if horizon.is_some_and(|h| level(&s.x) > h) {
                reached = true;
                break;
            }
        }
        truncated[i] = !reached;
    }
    separation_from_traces(cfg, &traces[0], &traces[1], r_grid, truncated)
}

/// Trace of a position-only walk up to its first entry above `horizon`.
#[derive(Clone, Debug)]
pub struct WalkTrace {
    pub points: HashSet<Point>,
    pub steps: u64,
    pub truncated: bool,
}

/// Simulates a walk from `start` until its level exceeds `horizon` or
/// `max_steps` steps have elapsed, collecting its trace.
pub fn simulate_trace(env: &Environment, start: Point, stream: Stream, horizon: i64, max_steps: u64) -> WalkTrace {
    let mut walker = CompressedWalker::new(env.clone(), start, stream);
    let mut points = HashSet::new();
    points.insert(start);
    loop {
        if level(&walker.current()) > horizon {
            return WalkTrace { points, steps: walker.time(), truncated: false };
        }
        if walker.time() >= max_steps {
            return WalkTrace { points, steps: walker.time(), truncated: true };
        }
        let e = walker.advance();
        if e.visits_partner() {
            points.insert(e.partner.unwrap());
        }
        points.insert(e.end);
    }
}

/// Separation of one simulated pair, using traces up to the first entry
/// above `horizon`.
pub fn separation_pair(
    env: &Environment,
    mode: EnvMode,
    starts: [Point; 2],
    horizon: i64,
    max_steps: u64,
    stream_keys: [u64; 2],
    r_grid: &[i64],
) -> Result<SeparationReport> {
    require_e1(env.config())?;
    for s in &starts {
        require_admissible(s)?;
    }
    let second = match mode {
        EnvMode::Same => env.clone(),
        EnvMode::Independent => env.reseeded(independent_seed(env.seed())),
    };
    let t1 = simulate_trace(env, starts[0], Stream::new(stream_keys[0]), horizon, max_steps);
    let t2 = simulate_trace(&second, starts[1], Stream::new(stream_keys[1]), horizon, max_steps);
    Ok(separation_from_traces(env.config(), &t1.points, &t2.points, r_grid, [t1.truncated, t2.truncated]))
}

/// Bounded functional of the pair evaluated on the open event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PairFunctional {
    /// The constant 1.
    One,
    /// Whether walk 1 first leaves the box of the given radius around its
    /// start through the face of largest level.
    PositiveExit { radius: i64 },
}

impl PairFunctional {
    pub fn name(&self) -> &'static str {
        match self {
            PairFunctional::One => "one",
            PairFunctional::PositiveExit { .. } => "positive_exit",
        }
    }
}

/// Settings of [`omega_k_invariance_test`].
#[derive(Clone, Debug, PartialEq)]
pub struct OmegaKSettings {
    pub seed: u64,
    pub starts: [Point; 2],
    pub horizon: i64,
    pub samples: usize,
    pub max_steps: u64,
    /// Largest number of rejected environments tolerated in total.
    pub max_rejections: u64,
}

/// Result of [`omega_k_invariance_test`].
#[derive(Clone, Debug, PartialEq)]
pub struct OmegaKReport {
    pub functional: PairFunctional,
    pub mean_plain: f64,
    pub mean_clamped: f64,
    /// Mean of the paired differences.
    pub diff: f64,
    /// Standard error of the paired differences.
    pub stderr: f64,
    /// Standard error treating the two arms as independent samples.
    pub stderr_unpaired: f64,
    pub open_plain: usize,
    pub open_clamped: usize,
    pub accepted: usize,
    pub rejections: u64,
    pub truncated: usize,
}

impl OmegaKReport {
    /// Whether the difference lies within `z` standard errors of zero.
    pub fn within(&self, z: f64) -> bool {
        self.diff.abs() <= z * self.stderr
    }
}

struct ArmOutcome {
    open: bool,
    value: f64,
    truncated: bool,
}

fn run_arm(env: &Environment, starts: [Point; 2], keys: [u64; 2], horizon: i64, max_steps: u64, f: PairFunctional) -> ArmOutcome {
    let below = [starts[0].shifted(0, -1), starts[1].shifted(0, -1)];
    let mut exit_positive = None;
    for i in 0..2 {
        let origin_level = level(&starts[i]);
        let mut w = Walker::new(env.clone(), starts[i], Stream::new(keys[i]));
        let mut prev = starts[i];
        let mut inside = true;
        loop {
            if w.steps() >= max_steps {
                return ArmOutcome { open: false, value: 0.0, truncated: true };
            }
            let cur = w.advance();
            let lv = level(&cur.x);
            if i == 0 && inside {
                if let PairFunctional::PositiveExit { radius } = f {
                    let rel = cur.x.sub(&starts[0]);
                    let across = (1..env.config().d()).map(|a| (rel.coord(a) as i64).abs()).max().unwrap_or(0);
                    if (rel.coord(0) as i64).abs() > radius || across > radius {
                        inside = false;
                        exit_positive = Some(rel.coord(0) as i64 > radius);
                    }
                }
            }
            if lv > horizon {
                break;
            }
            let defect = lv <= origin_level
                || (cur.z == 0 && starts.iter().any(|o| in_closed_neighborhood(o, &prev)))
                || below.iter().any(|o| in_closed_neighborhood(o, &cur.x));
            if defect {
                return ArmOutcome { open: false, value: 0.0, truncated: false };
            }
            prev = cur.x;
        }
    }
    let value = match f {
        PairFunctional::One => 1.0,
        PairFunctional::PositiveExit { .. } => {
            if exit_positive == Some(true) {
                1.0
            } else {
                0.0
            }
        }
    };
    ArmOutcome { open: true, value, truncated: false }
}

/// Compares the expectation of `f` on the open joint event under sampled
/// environments and under their clamped views at the two starting points,
/// using the same walk streams in both arms.
pub fn omega_k_invariance_test<S>(sampler: S, settings: &OmegaKSettings, f: PairFunctional) -> Result<OmegaKReport>
where
    S: Fn(u64) -> Environment + Sync,
{
    let [x1, x2] = settings.starts;
    if settings.samples < 2 {
        return Err(Error::InvalidParameter("at least two samples are needed".into()));
    }
    require_e1(sampler(settings.seed).config())?;
    let results: Vec<Option<(ArmOutcome, ArmOutcome, u64)>> = (0..settings.samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut rejected = 0u64;
            let env = loop {
                let env = sampler(derive(settings.seed, s, rejected));
                if env.is_k_open(&x1) && env.is_k_open(&x2) {
                    break env;
                }
                rejected += 1;
                if rejected > settings.max_rejections {
                    return None;
                }
            };
            let clamped = env.omega_k_view(&x1, &x2);
            let keys = [walk_key(settings.seed, s, 0), walk_key(settings.seed, s, 1)];
            let plain = run_arm(&env, settings.starts, keys, settings.horizon, settings.max_steps, f);
            let other = run_arm(&clamped, settings.starts, keys, settings.horizon, settings.max_steps, f);
            Some((plain, other, rejected))
        })
        .collect();
    let mut accepted = Vec::with_capacity(results.len());
    let mut rejections = 0;
    for r in results {
        match r {
            Some(r) if rejections + r.2 <= settings.max_rejections => {
                rejections += r.2;
                accepted.push(r);
            }
            _ => return Err(Error::InsufficientData { needed: settings.samples, got: accepted.len() }),
        }
    }
    let n = accepted.len() as f64;
    let plain: Vec<f64> = accepted.iter().map(|r| r.0.value).collect();
    let clamped: Vec<f64> = accepted.iter().map(|r| r.1.value).collect();
    let diffs: Vec<f64> = plain.iter().zip(&clamped).map(|(a, b)| a - b).collect();
    let (mean_plain, var_plain) = mean_var(&plain);
    let (mean_clamped, var_clamped) = mean_var(&clamped);
    let (diff, var_diff) = mean_var(&diffs);
    Ok(OmegaKReport {
        functional: f,
        mean_plain,
        mean_clamped,
        diff,
        stderr: (var_diff / n).sqrt(),
        stderr_unpaired: (var_plain / n + var_clamped / n).sqrt(),
        open_plain: accepted.iter().filter(|r| r.0.open).count(),
        open_clamped: accepted.iter().filter(|r| r.1.open).count(),
        accepted: accepted.len(),
        rejections,
        truncated: accepted.iter().filter(|r| r.0.truncated || r.1.truncated).count(),
    })
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}
