//! Experiment configuration files.
//!
//! The format is INI-like: optional `[section]` headers followed by
//! `key = value` lines, with `#` or `;` starting a comment line. Every key not
//! given in the file takes a default that may depend on the experiment, the
//! dimension or the tail index. [`ExperimentConfig::emit`] writes the fully
//! resolved configuration, which parses back to the same value.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::joint::EnvMode;
use crate::lattice::{ConductanceLaw, Environment, LatticeConfig, TailFamily, MAX_DIM};

/// Named experiment run by [`crate::experiment::run_experiment`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentKind {
    Kernel,
    Tail,
    Drift,
    Regen,
    Clock,
    Variance,
    Joint,
    Separation,
    OmegaK,
    PointMass,
    SmallTime,
    Fk,
    Oracle,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 13] = [
        ExperimentKind::Kernel,
        ExperimentKind::Tail,
        ExperimentKind::Drift,
        ExperimentKind::Regen,
        ExperimentKind::Clock,
        ExperimentKind::Variance,
        ExperimentKind::Joint,
        ExperimentKind::Separation,
        ExperimentKind::OmegaK,
        ExperimentKind::PointMass,
        ExperimentKind::SmallTime,
        ExperimentKind::Fk,
        ExperimentKind::Oracle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Kernel => "kernel",
            ExperimentKind::Tail => "tail",
            ExperimentKind::Drift => "drift",
            ExperimentKind::Regen => "regen",
            ExperimentKind::Clock => "clock",
            ExperimentKind::Variance => "variance",
            ExperimentKind::Joint => "joint",
            ExperimentKind::Separation => "separation",
            ExperimentKind::OmegaK => "omegak",
            ExperimentKind::PointMass => "pointmass",
            ExperimentKind::SmallTime => "smalltime",
            ExperimentKind::Fk => "fk",
            ExperimentKind::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Geometry and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeSection {
    pub d: usize,
    pub lambda: f64,
    pub ell: Vec<f64>,
    pub alpha: f64,
    pub k: f64,
}

/// Law of the base conductances.
#[derive(Clone, Debug, PartialEq)]
pub struct ConductanceSection {
    pub gamma: f64,
    pub family: TailFamily,
    /// Replaces every conductance by this constant when set.
    pub uniform: Option<f64>,
}

/// Sample sizes and simulation limits.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSection {
    pub n_env: usize,
    pub n_walk: usize,
    /// Step limit per task, counted since the last confirmation where that
    /// applies.
    pub max_steps: u64,
    /// Confirmation margin in levels.
    pub delta: i64,
    /// Largest tolerated fraction of truncated tasks.
    pub tolerance: f64,
    /// Tasks per scheduling batch; the budget is checked between batches.
    pub batch: usize,
}

/// Experiment-specific parameters. Keys that an experiment does not read are
/// still resolved and echoed.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamsSection {
    pub n_list: Vec<u64>,
    pub r_grid: Vec<i64>,
    pub x_list: Vec<f64>,
    pub horizon: i64,
    pub eta: f64,
    pub rho: f64,
    pub samples: usize,
    pub k_top: usize,
    pub epochs: usize,
    pub repetitions: usize,
    pub start_gap: i32,
    pub exit_radius: i64,
    pub env_mode: EnvMode,
    pub sub_step: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    /// Worker threads; 0 uses all available cores.
    pub threads: usize,
    pub out: PathBuf,
    pub lattice: LatticeSection,
    pub conductance: ConductanceSection,
    pub budget: BudgetSection,
    pub params: ParamsSection,
}

pub const DEFAULT_SEED: u64 = 20_160_517;

const TOP_KEYS: &[&str] = &["experiment", "seed", "threads", "out"];
const LATTICE_KEYS: &[&str] = &["d", "lambda", "ell", "alpha", "k"];
const CONDUCTANCE_KEYS: &[&str] = &["gamma", "family", "uniform"];
const BUDGET_KEYS: &[&str] = &["n_env", "n_walk", "max_steps", "delta", "tolerance", "batch"];
const PARAMS_KEYS: &[&str] = &[
    "n_list",
    "r_grid",
    "x_list",
    "horizon",
    "eta",
    "rho",
    "samples",
    "k_top",
    "epochs",
    "repetitions",
    "start_gap",
    "exit_radius",
    "env_mode",
    "sub_step",
];

fn section_keys(section: &str) -> Option<&'static [&'static str]> {
    match section {
        "" => Some(TOP_KEYS),
        "lattice" => Some(LATTICE_KEYS),
        "conductance" => Some(CONDUCTANCE_KEYS),
        "budget" => Some(BUDGET_KEYS),
        "params" => Some(PARAMS_KEYS),
        _ => None,
    }
}

fn powers_of_two(lo: u32, hi: u32) -> Vec<u64> {
    (lo..=hi).map(|e| 1u64 << e).collect()
}

impl BudgetSection {
    fn defaults(kind: ExperimentKind) -> Self {
        let (n_env, n_walk, max_steps) = match kind {
            ExperimentKind::Kernel => (1000, 1, 1),
            ExperimentKind::Tail => (1, 1, 1),
            ExperimentKind::Drift => (200, 1, 1 << 18),
            ExperimentKind::Regen => (100, 1, 10_000_000),
            ExperimentKind::Clock => (200, 1, 10_000_000),
            ExperimentKind::Variance => (200, 200, 10_000_000),
            ExperimentKind::Joint => (1000, 1, 10_000_000),
            ExperimentKind::Separation => (500, 1, 10_000_000_000_000),
            ExperimentKind::OmegaK => (10_000, 1, 10_000_000),
            ExperimentKind::PointMass => (10_000, 1, 10_000_000),
            ExperimentKind::SmallTime => (1000, 1, 10_000_000),
            ExperimentKind::Fk => (100, 1, 10_000_000),
            ExperimentKind::Oracle => (1, 1, 1),
        };
        Self { n_env, n_walk, max_steps, delta: 100, tolerance: 0.01, batch: 64 }
    }
}

impl ParamsSection {
    fn defaults(kind: ExperimentKind, gamma: f64) -> Self {
        let n_list = match kind {
            ExperimentKind::Drift => powers_of_two(12, 18),
            ExperimentKind::Clock => vec![1 << 14],
            ExperimentKind::Variance => vec![1 << 8, 1 << 10, 1 << 12],
            ExperimentKind::Joint => vec![8, 16, 32],
            ExperimentKind::PointMass => vec![4, 16, 64],
            ExperimentKind::SmallTime => vec![1 << 10, 1 << 14],
            _ => vec![1 << 10],
        };
        let (horizon, samples, epochs) = match kind {
            ExperimentKind::OmegaK => (16, 10_000, 1),
            ExperimentKind::Tail => (256, 100_000, 1),
            ExperimentKind::Kernel => (256, 1000, 1),
            ExperimentKind::Oracle => (256, 100_000, 1),
            ExperimentKind::Regen => (256, 10_000, 101),
            ExperimentKind::Fk => (256, 10_000, 100),
            _ => (256, 10_000, 1),
        };
        let eta = 0.5;
        Self {
            n_list,
            r_grid: vec![4, 16, 64],
            x_list: vec![2.0, 8.0, 32.0],
            horizon,
            eta,
            rho: 0.9 * eta / gamma,
            samples,
            k_top: 1000,
            epochs,
            repetitions: 20,
            start_gap: 2,
            exit_radius: 4,
            env_mode: EnvMode::Same,
            sub_step: 1e-3,
        }
    }
}

impl ExperimentConfig {
    /// Configuration of `kind` with every default resolved.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let d = 5;
        let gamma = 0.5;
        let mut ell = vec![0.0; d];
        ell[0] = 1.0;
        Self {
            experiment: kind,
            seed: DEFAULT_SEED,
            threads: 0,
            out: PathBuf::from("out"),
            lattice: LatticeSection { d, lambda: 1.0, ell, alpha: d as f64 + 4.0, k: 20.0 },
            conductance: ConductanceSection { gamma, family: TailFamily::Pareto, uniform: None },
            budget: BudgetSection::defaults(kind),
            params: ParamsSection::defaults(kind, gamma),
        }
    }

    pub fn lattice_config(&self) -> Result<LatticeConfig> {
        let l = &self.lattice;
        LatticeConfig::new(l.d, l.lambda, &l.ell, l.alpha, l.k)
    }

    pub fn law(&self) -> Result<ConductanceLaw> {
        ConductanceLaw::new(self.conductance.gamma, self.conductance.family)
    }

    /// Environment with the given seed, or the constant environment when a
    /// uniform conductance is configured.
    pub fn environment(&self, seed: u64) -> Result<Environment> {
        let law = self.law()?;
        let cfg = self.lattice_config()?;
        Ok(match self.conductance.uniform {
            Some(c) => Environment::constant(c, law, cfg),
            None => Environment::new(seed, law, cfg),
        })
    }

    /// Parses a configuration file.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = tokenize(text)?;
        let eof = text.lines().count().max(1);
        let kind = match entries.get(&(String::new(), "experiment".to_string())) {
            Some(e) => ExperimentKind::parse(&e.value).ok_or_else(|| {
                config_error(e.line, format!("unknown experiment `{}`; expected one of {}", e.value, kind_names()))
            })?,
            None => return Err(config_error(eof, "missing required key `experiment`".into())),
        };
        let mut cfg = Self::defaults(kind);
        let get = |section: &str, key: &str| entries.get(&(section.to_string(), key.to_string()));

        if let Some(e) = get("", "seed") {
            cfg.seed = e.parse_u64()?;
        }
        if let Some(e) = get("", "threads") {
            cfg.threads = e.parse_in("threads", 0usize, 1024)?;
        }
        if let Some(e) = get("", "out") {
            if e.value.is_empty() {
                return Err(config_error(e.line, "`out` must not be empty".into()));
            }
            cfg.out = PathBuf::from(&e.value);
        }

        if let Some(e) = get("lattice", "d") {
            cfg.lattice.d = e.parse_in("d", 1usize, MAX_DIM)?;
        }
        let d = cfg.lattice.d;
        cfg.lattice.ell = vec![0.0; d];
        cfg.lattice.ell[0] = 1.0;
        cfg.lattice.alpha = d as f64 + 4.0;
        if let Some(e) = get("lattice", "lambda") {
            cfg.lattice.lambda = e.parse_real(|v| v >= 0.0, "lambda must be >= 0")?;
        }
        if let Some(e) = get("lattice", "ell") {
            let ell: Vec<f64> = e.parse_list()?;
            if ell.len() != d {
                return Err(config_error(e.line, format!("`ell` has {} components, expected d = {d}", ell.len())));
            }
            let norm = ell.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(config_error(e.line, format!("`ell` must have unit length, got norm {norm}")));
            }
            cfg.lattice.ell = ell;
        }
        if let Some(e) = get("lattice", "alpha") {
            let bound = d as f64 + 3.0;
            cfg.lattice.alpha = e.parse_real(|v| v > bound, &format!("alpha must exceed d + 3 = {bound}"))?;
        }
        if let Some(e) = get("lattice", "k") {
            cfg.lattice.k = e.parse_real(|v| v >= 1.0, "k must be >= 1")?;
        }

        if let Some(e) = get("conductance", "gamma") {
            cfg.conductance.gamma = e.parse_real(|v| v > 0.0 && v < 1.0, "gamma must lie in (0, 1)")?;
        }
        let gamma = cfg.conductance.gamma;
        cfg.params.rho = 0.9 * cfg.params.eta / gamma;
        if let Some(e) = get("conductance", "family") {
            cfg.conductance.family = TailFamily::parse(&e.value).ok_or_else(|| {
                config_error(e.line, format!("unknown family `{}`; expected pareto or pareto_log", e.value))
            })?;
        }
        if let Some(e) = get("conductance", "uniform") {
            cfg.conductance.uniform = Some(e.parse_real(|v| v > 0.0, "uniform must be > 0")?);
        }

        let b = &mut cfg.budget;
        if let Some(e) = get("budget", "n_env") {
            b.n_env = e.parse_in("n_env", 1usize, usize::MAX)?;
        }
        if let Some(e) = get("budget", "n_walk") {
            b.n_walk = e.parse_in("n_walk", 1usize, usize::MAX)?;
        }
        if let Some(e) = get("budget", "max_steps") {
            b.max_steps = e.parse_in("max_steps", 1u64, u64::MAX)?;
        }
        if let Some(e) = get("budget", "delta") {
            b.delta = e.parse_in("delta", 1i64, 1 << 40)?;
        }
        if let Some(e) = get("budget", "tolerance") {
            b.tolerance = e.parse_real(|v| (0.0..=1.0).contains(&v), "tolerance must lie in [0, 1]")?;
        }
        if let Some(e) = get("budget", "batch") {
            b.batch = e.parse_in("batch", 1usize, usize::MAX)?;
        }

        let p = &mut cfg.params;
        if let Some(e) = get("params", "n_list") {
            let v: Vec<u64> = e.parse_list()?;
            if v.contains(&0) || v.windows(2).any(|w| w[1] <= w[0]) {
                return Err(config_error(e.line, "`n_list` must be positive and strictly increasing".into()));
            }
            p.n_list = v;
        }
        if let Some(e) = get("params", "r_grid") {
            let v: Vec<i64> = e.parse_list()?;
            if v.iter().any(|&r| r < 0) || v.windows(2).any(|w| w[1] <= w[0]) {
                return Err(config_error(e.line, "`r_grid` must be nonnegative and strictly increasing".into()));
            }
            p.r_grid = v;
        }
        if let Some(e) = get("params", "x_list") {
            let v: Vec<f64> = e.parse_list()?;
            if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(config_error(e.line, "`x_list` must be positive".into()));
            }
            p.x_list = v;
        }
        if let Some(e) = get("params", "horizon") {
            p.horizon = e.parse_in("horizon", 1i64, 1 << 40)?;
        }
        if let Some(e) = get("params", "eta") {
            p.eta = e.parse_real(|v| v > 0.0 && v < 1.0, "eta must lie in (0, 1)")?;
            p.rho = 0.9 * p.eta / gamma;
        }
        if let Some(e) = get("params", "rho") {
            let bound = p.eta / gamma;
            p.rho = e.parse_real(|v| v > 0.0 && v < bound, &format!("rho must lie in (0, eta / gamma = {bound})"))?;
        }
        if let Some(e) = get("params", "samples") {
            p.samples = e.parse_in("samples", 2usize, usize::MAX)?;
        }
        if let Some(e) = get("params", "k_top") {
            p.k_top = e.parse_in("k_top", 1usize, usize::MAX)?;
        }
        if let Some(e) = get("params", "epochs") {
            p.epochs = e.parse_in("epochs", 1usize, usize::MAX)?;
        }
        if let Some(e) = get("params", "repetitions") {
            p.repetitions = e.parse_in("repetitions", 1usize, usize::MAX)?;
        }
        if let Some(e) = get("params", "start_gap") {
            p.start_gap = e.parse_in("start_gap", 0i32, 1 << 20)?;
            if p.start_gap > 0 && d < 2 {
                return Err(config_error(e.line, "`start_gap` > 0 needs d >= 2".into()));
            }
        }
        if let Some(e) = get("params", "exit_radius") {
            p.exit_radius = e.parse_in("exit_radius", 1i64, 1 << 20)?;
        }
        if let Some(e) = get("params", "env_mode") {
            p.env_mode = EnvMode::parse(&e.value)
                .ok_or_else(|| config_error(e.line, format!("unknown env_mode `{}`; expected same or independent", e.value)))?;
        }
        if let Some(e) = get("params", "sub_step") {
            p.sub_step = e.parse_real(|v| v > 0.0 && v <= 1.0, "sub_step must lie in (0, 1]")?;
        }
        if d < 2 && get("params", "start_gap").is_none() {
            p.start_gap = 0;
        }
        Ok(cfg)
    }

    /// Writes the resolved configuration in the input format.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let list = |v: &[String]| v.join(", ");
        let _ = writeln!(s, "experiment = {}", self.experiment);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "out = {}", self.out.display());
        let l = &self.lattice;
        let _ = writeln!(s, "\n[lattice]");
        let _ = writeln!(s, "d = {}", l.d);
        let _ = writeln!(s, "lambda = {}", l.lambda);
        let _ = writeln!(s, "ell = {}", list(&l.ell.iter().map(f64::to_string).collect::<Vec<_>>()));
        let _ = writeln!(s, "alpha = {}", l.alpha);
        let _ = writeln!(s, "k = {}", l.k);
        let c = &self.conductance;
        let _ = writeln!(s, "\n[conductance]");
        let _ = writeln!(s, "gamma = {}", c.gamma);
        let _ = writeln!(s, "family = {}", c.family.name());
        if let Some(u) = c.uniform {
            let _ = writeln!(s, "uniform = {u}");
        }
        let b = &self.budget;
        let _ = writeln!(s, "\n[budget]");
        let _ = writeln!(s, "n_env = {}", b.n_env);
        let _ = writeln!(s, "n_walk = {}", b.n_walk);
        let _ = writeln!(s, "max_steps = {}", b.max_steps);
        let _ = writeln!(s, "delta = {}", b.delta);
        let _ = writeln!(s, "tolerance = {}", b.tolerance);
        let _ = writeln!(s, "batch = {}", b.batch);
        let p = &self.params;
        let _ = writeln!(s, "\n[params]");
        let _ = writeln!(s, "n_list = {}", list(&p.n_list.iter().map(u64::to_string).collect::<Vec<_>>()));
        let _ = writeln!(s, "r_grid = {}", list(&p.r_grid.iter().map(i64::to_string).collect::<Vec<_>>()));
        let _ = writeln!(s, "x_list = {}", list(&p.x_list.iter().map(f64::to_string).collect::<Vec<_>>()));
        let _ = writeln!(s, "horizon = {}", p.horizon);
        let _ = writeln!(s, "eta = {}", p.eta);
        let _ = writeln!(s, "rho = {}", p.rho);
        let _ = writeln!(s, "samples = {}", p.samples);
        let _ = writeln!(s, "k_top = {}", p.k_top);
        let _ = writeln!(s, "epochs = {}", p.epochs);
        let _ = writeln!(s, "repetitions = {}", p.repetitions);
        let _ = writeln!(s, "start_gap = {}", p.start_gap);
        let _ = writeln!(s, "exit_radius = {}", p.exit_radius);
        let _ = writeln!(s, "env_mode = {}", p.env_mode.name());
        let _ = writeln!(s, "sub_step = {}", p.sub_step);
        s
    }
}

fn kind_names() -> String {
    ExperimentKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
}

fn config_error(line: usize, message: String) -> Error {
    Error::Config { line, message }
}

struct Entry {
    key: String,
    value: String,
    line: usize,
}

impl Entry {
    fn parse_scalar<T: FromStr>(&self, what: &str) -> Result<T> {
        self.value
            .parse()
            .map_err(|_| config_error(self.line, format!("`{}` expects {what}, got `{}`", self.key, self.value)))
    }

    fn parse_u64(&self) -> Result<u64> {
        let v = self.value.as_str();
        let parsed = match v.strip_prefix("0x").or_else(|| v.strip_prefix("0X")) {
            Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16).ok(),
            None => v.replace('_', "").parse().ok(),
        };
        parsed.ok_or_else(|| config_error(self.line, format!("`{}` expects an unsigned integer, got `{v}`", self.key)))
    }

    fn parse_in<T>(&self, key: &str, lo: T, hi: T) -> Result<T>
    where
        T: FromStr + PartialOrd + fmt::Display + Copy,
    {
        let v: T = self.parse_scalar("an integer")?;
        if v < lo || v > hi {
            return Err(config_error(self.line, format!("{key} must lie in [{lo}, {hi}], got {v}")));
        }
        Ok(v)
    }

    fn parse_real(&self, ok: impl Fn(f64) -> bool, range: &str) -> Result<f64> {
        let v: f64 = self.parse_scalar("a number")?;
        if !v.is_finite() || !ok(v) {
            return Err(config_error(self.line, format!("{range}, got {v}")));
        }
        Ok(v)
    }

    fn parse_list<T: FromStr>(&self) -> Result<Vec<T>> {
        let items: Vec<&str> = self.value.split(',').map(str::trim).collect();
        if items.iter().any(|s| s.is_empty()) {
            return Err(config_error(self.line, format!("`{}` expects a comma-separated list", self.key)));
        }
        items
            .iter()
            .map(|s| s.parse().map_err(|_| config_error(self.line, format!("`{}`: cannot parse list item `{s}`", self.key))))
            .collect()
    }
}

/// Splits the text into `(section, key)` entries, rejecting unknown
/// sections, unknown keys, duplicates and malformed lines.
fn tokenize(text: &str) -> Result<BTreeMap<(String, String), Entry>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| config_error(line, format!("malformed section header `{trimmed}`")))?
                .trim();
            if section_keys(name).is_none() || name.is_empty() {
                return Err(config_error(
                    line,
                    format!("unknown section `[{name}]`; expected lattice, conductance, budget or params"),
                ));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) =
            trimmed.split_once('=').ok_or_else(|| config_error(line, format!("expected `key = value`, got `{trimmed}`")))?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let allowed = section_keys(&section).unwrap_or(&[]);
        if !allowed.contains(&key.as_str()) {
            let place = if section.is_empty() { "top level".to_string() } else { format!("section [{section}]") };
            return Err(config_error(line, format!("unknown key `{key}` in {place}")));
        }
        let slot = (section.clone(), key.clone());
        if let Some(prev) = out.get(&slot) {
            let prev: &Entry = prev;
            return Err(config_error(line, format!("duplicate key `{key}` (first set on line {})", prev.line)));
        }
        out.insert(slot, Entry { key, value, line });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_of(err: Error) -> (usize, String) {
        match err {
            Error::Config { line, message } => (line, message),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_file_resolves_defaults() {
        let cfg = ExperimentConfig::parse("experiment = drift\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::defaults(ExperimentKind::Drift));
        assert_eq!(cfg.lattice.d, 5);
        assert_eq!(cfg.lattice.alpha, 9.0);
        assert_eq!(cfg.lattice.k, 20.0);
        assert_eq!(cfg.conductance.gamma, 0.5);
        assert_eq!(cfg.params.n_list, vec![4096, 8192, 16384, 32768, 65536, 131072, 262144]);
        assert_eq!(cfg.budget.n_env, 200);
        assert!(cfg.lattice_config().is_ok());
    }

    #[test]
    fn gamma_out_of_range_names_the_interval() {
        let (line, message) = line_of(ExperimentConfig::parse("experiment = tail\n[conductance]\ngamma = 1.5\n").unwrap_err());
        assert_eq!(line, 3);
        assert!(message.contains("(0, 1)"), "{message}");
    }

    #[test]
    fn emitted_config_round_trips() {
        for kind in ExperimentKind::ALL {
            let cfg = ExperimentConfig::defaults(kind);
            assert_eq!(ExperimentConfig::parse(&cfg.emit()).unwrap(), cfg, "{kind}");
        }
        let text = "experiment = joint\nseed = 0x2a\n[lattice]\nd = 3\nlambda = 0.7\nk = 1.3\n\
                    [conductance]\ngamma = 0.9\nuniform = 2.5\n[params]\nr_grid = 1, 5\neta = 0.3\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.lattice.alpha, 7.0);
        assert_eq!(cfg.params.rho, 0.9 * 0.3 / 0.9);
        assert_eq!(cfg.conductance.uniform, Some(2.5));
        assert_eq!(ExperimentConfig::parse(&cfg.emit()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_rejected_with_its_line() {
        let (line, message) = line_of(ExperimentConfig::parse("experiment = drift\n\n[lattice]\nlamda = 2\n").unwrap_err());
        assert_eq!(line, 4);
        assert!(message.contains("lamda"));
        let (line, _) = line_of(ExperimentConfig::parse("experiment = drift\nsede = 3\n").unwrap_err());
        assert_eq!(line, 2);
        let (line, _) = line_of(ExperimentConfig::parse("experiment = drift\n[lattise]\n").unwrap_err());
        assert_eq!(line, 2);
    }

    #[test]
    fn missing_and_malformed_entries() {
        let (line, message) = line_of(ExperimentConfig::parse("# nothing\nseed = 1\n").unwrap_err());
        assert_eq!(line, 2);
        assert!(message.contains("experiment"));
        assert_eq!(line_of(ExperimentConfig::parse("experiment = walk\n").unwrap_err()).0, 1);
        assert_eq!(line_of(ExperimentConfig::parse("experiment = drift\nseed\n").unwrap_err()).0, 2);
        assert_eq!(line_of(ExperimentConfig::parse("experiment = drift\nseed = 1\nseed = 2\n").unwrap_err()).0, 3);
        assert_eq!(line_of(ExperimentConfig::parse("experiment = drift\n[params]\nn_list = 8, 4\n").unwrap_err()).0, 3);
        assert_eq!(line_of(ExperimentConfig::parse("experiment = drift\n[lattice]\nd = 2\nell = 1, 0, 0\n").unwrap_err()).0, 4);
        assert_eq!(line_of(ExperimentConfig::parse("experiment = drift\n[lattice]\nk = 0.5\n").unwrap_err()).0, 3);
        assert_eq!(line_of(ExperimentConfig::parse("experiment = drift\n[params]\nrho = 1.5\n").unwrap_err()).0, 3);
    }

    #[test]
    fn dimension_one_drops_the_start_gap() {
        let cfg = ExperimentConfig::parse("experiment = joint\n[lattice]\nd = 1\n").unwrap();
        assert_eq!(cfg.params.start_gap, 0);
        assert_eq!(cfg.lattice.ell, vec![1.0]);
        assert_eq!(ExperimentConfig::parse(&cfg.emit()).unwrap(), cfg);
    }
}
