//! Single-walk regeneration times.
//!
//! The tracker consumes a walk one state at a time. Each pending ladder
//! candidate carries a nested search anchored at itself, so the next epoch is
//! already under way when a candidate is confirmed and no path needs storing.

use crate::lattice::{Environment, LatticeConfig, Point, MAX_DIM};
use crate::walk::{EnhancedState, StateSource, Trajectory};

/// One confirmed regeneration epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct RegenerationRecord {
    /// Epoch index, starting at 1.
    pub k: usize,
    /// Regeneration time.
    pub tau: u64,
    /// Position at the regeneration time.
    pub point: Point,
    /// Box radius of the block up to the next regeneration, once known.
    pub chi: Option<f64>,
    pub confirmed: bool,
    /// Time and displacement to the next regeneration, once known.
    pub increment: Option<(u64, Point)>,
}

/// Output of [`regeneration_sequence`].
#[derive(Clone, Debug, PartialEq)]
pub struct RegenerationRun {
    pub records: Vec<RegenerationRecord>,
    /// Box radius of the block from time 0 to the first regeneration.
    pub chi_initial: Option<f64>,
    /// The step budget or the source ran out before `target_count` epochs.
    pub truncated: bool,
    pub steps: u64,
    /// Number of ladder candidates examined.
    pub candidates: u64,
}

/// Outcome of the defect time on a path started at a candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DefectOutcome {
    /// The walk returned to or below its starting level at this step.
    Back(usize),
    /// A clamped-kernel miss near the start at this step.
    Origin(usize),
    /// Neither happened on the observed prefix.
    Open,
}

impl DefectOutcome {
    pub fn time(&self) -> Option<usize> {
        match *self {
            DefectOutcome::Back(n) | DefectOutcome::Origin(n) => Some(n),
            DefectOutcome::Open => None,
        }
    }
}

#[inline]
fn in_closed_neighborhood(center: &Point, x: &Point) -> bool {
    center.l1_distance(x) <= 1
}

/// Whether step `n` (from `prev` to `cur`) triggers the defect of a walk
/// started at `origin`.
#[inline]
fn defect_at(
    cfg: &LatticeConfig,
    origin: &Point,
    origin_level: f64,
    prev: &EnhancedState,
    cur: &EnhancedState,
    n: usize,
) -> Option<DefectOutcome> {
    if cfg.level(&cur.x) <= origin_level {
        Some(DefectOutcome::Back(n))
    } else if cur.z == 0 && in_closed_neighborhood(origin, &prev.x) {
        Some(DefectOutcome::Origin(n))
    } else {
        None
    }
}

/// First step of the stored path (re-indexed from its start) at which the
/// walk backtracks to its starting level or takes an unclamped step from the
/// neighbourhood of the start.
pub fn detect_defect(cfg: &LatticeConfig, traj: &Trajectory) -> DefectOutcome {
    let states = traj.states();
    let origin = states[0].x;
    let origin_level = cfg.level(&origin);
    for n in 1..states.len() {
        if let Some(out) = defect_at(cfg, &origin, origin_level, &states[n - 1], &states[n], n) {
            return out;
        }
    }
    DefectOutcome::Open
}

/// First index `i >= 2` at which the stored path reaches a K-open point by two
/// `e_1` steps from a strict running maximum.
pub fn ladder_time(env: &Environment, traj: &Trajectory) -> Option<usize> {
    let cfg = env.config();
    let e1 = cfg.first_step();
    let states = traj.states();
    let mut prefix_max = f64::NEG_INFINITY;
    for i in 2..states.len() {
        if i >= 3 {
            prefix_max = prefix_max.max(cfg.level(&states[i - 3].x));
        }
        let (a, b, c) = (states[i - 2].x, states[i - 1].x, states[i].x);
        if b == a.add(&e1) && c == b.add(&e1) && prefix_max < cfg.level(&a) && env.is_k_open(&c) {
            return Some(i);
        }
    }
    None
}

/// Radius of the smallest box `B(m, m^alpha)` containing a block, given the
/// largest displacement along the bias and across it.
pub fn chi_from_extent(cfg: &LatticeConfig, along: f64, across: f64) -> f64 {
    along.max(across.powf(1.0 / cfg.alpha()))
}

/// Box radius of a block of positions measured from its first point.
pub fn chi_of_block(cfg: &LatticeConfig, block: &[Point]) -> f64 {
    let mut extent = Extent::default();
    if let Some(anchor) = block.first() {
        for x in block {
            extent.update(cfg, anchor, x);
        }
    }
    chi_from_extent(cfg, extent.along, extent.across)
}

/// Box radii of consecutive record blocks on a stored trajectory whose
/// indices coincide with the record times.
pub fn chi(cfg: &LatticeConfig, records: &[RegenerationRecord], traj: &Trajectory) -> Vec<f64> {
    let positions: Vec<Point> = traj.states().iter().map(|s| s.x).collect();
    records
        .windows(2)
        .map(|w| chi_of_block(cfg, &positions[w[0].tau as usize..=w[1].tau as usize]))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Extent {
    along: f64,
    across: f64,
}

impl Extent {
    #[inline]
    fn update(&mut self, cfg: &LatticeConfig, anchor: &Point, x: &Point) {
        let diff = x.sub(anchor);
        if cfg.is_axis_aligned_e1() {
            self.along = self.along.max(diff.coord(0).unsigned_abs() as f64);
            for i in 1..cfg.d() {
                self.across = self.across.max(diff.coord(i).unsigned_abs() as f64);
            }
        } else {
            let mut coords = [0.0; MAX_DIM];
            cfg.frame_coords(&diff, &mut coords[..cfg.d()]);
            self.along = self.along.max(coords[0].abs());
            for c in &coords[1..cfg.d()] {
                self.across = self.across.max(c.abs());
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Candidate {
    time: u64,
    point: Point,
    level: f64,
    block: Extent,
}

#[derive(Clone, Debug)]
enum Search {
    /// Waiting for the first level strictly above `threshold`.
    Waiting { threshold: f64 },
    /// Scanning the path shifted to `shift` for a ladder point.
    Ladder { shift: u64, back1: Option<Point>, back2: Option<Point>, prefix_max: f64 },
}

#[derive(Clone, Debug)]
struct Frame {
    anchor_time: u64,
    anchor: Point,
    running_max: f64,
    extent: Extent,
    search: Search,
    candidate: Option<Candidate>,
}

impl Frame {
    fn new(cfg: &LatticeConfig, time: u64, x: Point) -> Self {
        let level = cfg.level(&x);
        Self {
            anchor_time: time,
            anchor: x,
            running_max: level,
            extent: Extent::default(),
            search: Search::Waiting { threshold: level },
            candidate: None,
        }
    }
}

/// Event emitted by [`RegenTracker::push`].
#[derive(Clone, Debug, PartialEq)]
pub enum RegenEvent {
    /// A new regeneration epoch was confirmed.
    Confirmed(RegenerationRecord),
}

/// Streaming regeneration detector.
#[derive(Clone, Debug)]
pub struct RegenTracker {
    env: Environment,
    delta: f64,
    frames: Vec<Frame>,
    prev: EnhancedState,
    time: u64,
    records: Vec<RegenerationRecord>,
    chi_initial: Option<f64>,
    candidates: u64,
    last_confirmation: u64,
}

impl RegenTracker {
    /// Starts tracking a walk currently at `start` (time 0). A candidate is
    /// confirmed once the walk climbs `delta` levels above it with no defect.
    pub fn new(env: Environment, start: EnhancedState, delta: f64) -> Self {
        assert!(delta > 0.0, "confirmation margin must be positive");
        let frame = Frame::new(env.config(), 0, start.x);
        Self {
            env,
            delta,
            frames: vec![frame],
            prev: start,
            time: 0,
            records: Vec::new(),
            chi_initial: None,
            candidates: 0,
            last_confirmation: 0,
        }
    }

    pub fn records(&self) -> &[RegenerationRecord] {
        &self.records
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    /// Steps since the last confirmation (or the start).
    pub fn steps_since_confirmation(&self) -> u64 {
        self.time - self.last_confirmation
    }

    pub fn candidates(&self) -> u64 {
        self.candidates
    }

    pub fn chi_initial(&self) -> Option<f64> {
        self.chi_initial
    }

    /// Number of epochs currently speculated on.
    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    /// Feeds the next state of the walk.
    pub fn push(&mut self, s: EnhancedState) -> Option<RegenEvent> {
        self.time += 1;
        let n = self.time;
        let cfg = self.env.config().clone();
        let level = cfg.level(&s.x);
        let prev = self.prev;
        self.prev = s;

        let depth = self.frames.len();
        let mut f = 0;
        while f < depth && f < self.frames.len() {
            let frame = &mut self.frames[f];
            frame.running_max = frame.running_max.max(level);
            frame.extent.update(&cfg, &frame.anchor, &s.x);

            if let Some(c) = &frame.candidate {
                let step = (n - c.time) as usize;
                if defect_at(&cfg, &c.point, c.level, &prev, &s, step).is_some() {
                    frame.candidate = None;
                    frame.search = Search::Waiting { threshold: frame.running_max };
                    self.frames.truncate(f + 1);
                    break;
                }
                f += 1;
                continue;
            }

            let found = advance_search(&self.env, &mut frame.search, n, &s);
            if found {
                self.candidates += 1;
                frame.candidate = Some(Candidate { time: n, point: s.x, level, block: frame.extent });
                self.frames.push(Frame::new(&cfg, n, s.x));
                break;
            }
            f += 1;
        }

        let ready = self.frames[0].candidate.as_ref().is_some_and(|c| level >= c.level + self.delta);
        if ready {
            return Some(RegenEvent::Confirmed(self.confirm_front(&cfg)));
        }
        None
    }

    fn confirm_front(&mut self, cfg: &LatticeConfig) -> RegenerationRecord {
        let front = self.frames.remove(0);
        let c = front.candidate.expect("confirmed frame has a candidate");
        let chi = chi_from_extent(cfg, c.block.along, c.block.across);
        match self.records.last_mut() {
            Some(prev) => {
                prev.chi = Some(chi);
                prev.increment = Some((c.time - prev.tau, c.point.sub(&prev.point)));
            }
            None => self.chi_initial = Some(chi),
        }
        let record = RegenerationRecord {
            k: self.records.len() + 1,
            tau: c.time,
            point: c.point,
            chi: None,
            confirmed: true,
            increment: None,
        };
        self.records.push(record.clone());
        self.last_confirmation = self.time;
        debug_assert_eq!(self.frames[0].anchor_time, c.time);
        record
    }

    pub fn into_records(self) -> (Vec<RegenerationRecord>, Option<f64>, u64) {
        (self.records, self.chi_initial, self.candidates)
    }
}

/// Advances a ladder search by the state at time `n`; returns whether `s` is a
/// ladder point.
#[inline]
fn advance_search(env: &Environment, search: &mut Search, n: u64, s: &EnhancedState) -> bool {
    let cfg = env.config();
    let level = cfg.level(&s.x);
    match search {
        Search::Waiting { threshold } => {
            if level > *threshold {
                *search = Search::Ladder { shift: n, back1: Some(s.x), back2: None, prefix_max: f64::NEG_INFINITY };
            }
            false
        }
        Search::Ladder { shift, back1, back2, prefix_max } => {
            let i = n - *shift;
            let is_ladder = match (*back1, *back2) {
                (Some(b1), Some(b2)) if i >= 2 => {
                    let e1 = cfg.first_step();
                    s.x == b1.add(&e1)
                        && b1 == b2.add(&e1)
                        && *prefix_max < cfg.level(&b2)
                        && env.is_k_open(&s.x)
                }
                _ => false,
            };
            if let Some(b2) = *back2 {
                *prefix_max = prefix_max.max(cfg.level(&b2));
            }
            *back2 = *back1;
            *back1 = Some(s.x);
            is_ladder
        }
    }
}

/// Runs a walk until `target_count` regeneration epochs are confirmed, the
/// source is exhausted, or more than `max_steps` steps pass without a new
/// confirmation.
pub fn regeneration_sequence<S: StateSource>(
    env: &Environment,
    source: &mut S,
    target_count: usize,
    delta: f64,
    max_steps: u64,
) -> RegenerationRun {
    let mut tracker = RegenTracker::new(env.clone(), source.current(), delta);
    let mut truncated = false;
    while tracker.records().len() < target_count {
        if tracker.steps_since_confirmation() >= max_steps {
            truncated = true;
            break;
        }
        match source.next_state() {
            Some(s) => {
                tracker.push(s);
            }
            None => {
                truncated = true;
                break;
            }
        }
    }
    let steps = tracker.time();
    let (records, chi_initial, candidates) = tracker.into_records();
    RegenerationRun { records, chi_initial, truncated, steps, candidates }
}
