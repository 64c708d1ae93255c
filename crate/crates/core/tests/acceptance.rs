//! Acceptance suite. Runs every criterion at its stated scale and tolerance
//! and prints one PASS or FAIL line per criterion.
//!
//! Criteria can be selected by number: `cargo test --release --test
//! acceptance -- 3 8 14`. The process exits with status 1 if any selected
//! criterion fails.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fkrwrc::config::{ExperimentConfig, ExperimentKind};
use fkrwrc::experiment::{fixture_config, run_experiment, run_injected};
use fkrwrc::lattice::{ConductanceLaw, Environment, LatticeConfig, Point};
use fkrwrc::regen::{detect_defect, regeneration_sequence, DefectOutcome};
use fkrwrc::report::ExperimentReport;
use fkrwrc::walk::{Replay, Trajectory};
use fkrwrc::Result;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

const fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { id: 1, name: "kernel exactness", limit: minutes(1), run: kernel_exactness },
        Criterion { id: 2, name: "environment law", limit: minutes(1), run: environment_law },
        Criterion { id: 3, name: "regeneration fixture", limit: Duration::from_secs(1), run: regeneration_fixture },
        Criterion { id: 4, name: "regeneration tail", limit: minutes(30), run: regeneration_tail },
        Criterion { id: 5, name: "sub-ballistic displacement", limit: minutes(60), run: sub_ballistic },
        Criterion { id: 6, name: "clock convergence", limit: minutes(60), run: clock_convergence },
        Criterion { id: 7, name: "quenched decorrelation", limit: minutes(120), run: quenched_decorrelation },
        Criterion { id: 8, name: "joint regeneration fixture", limit: minutes(20), run: joint_fixture },
        Criterion { id: 9, name: "joint level tails", limit: minutes(30), run: joint_tails },
        Criterion { id: 10, name: "asymptotic separation", limit: minutes(60), run: separation },
        Criterion { id: 11, name: "omega_K invariance", limit: minutes(30), run: omega_k },
        Criterion { id: 12, name: "point-mass decay", limit: minutes(60), run: point_mass },
        Criterion { id: 13, name: "small-time clock", limit: minutes(30), run: small_time },
        Criterion { id: 14, name: "oracles", limit: minutes(5), run: oracles },
        Criterion { id: 15, name: "engineering", limit: minutes(10), run: engineering },
    ]
}

fn defaults(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(kind);
    cfg.threads = 0;
    cfg
}

/// Runs an experiment at its default configuration and judges it by its
/// asserted checks.
fn judge(kind: ExperimentKind) -> Outcome {
    judge_result(run_experiment(&defaults(kind)))
}

fn judge_result(result: Result<ExperimentReport>) -> Outcome {
    match result {
        Ok(report) => {
            let failed: Vec<String> = report.failed_checks().iter().map(|c| format!("{}: {}", c.name, c.detail)).collect();
            let summary: Vec<String> = report
                .checks
                .iter()
                .filter(|c| c.asserted && c.passed)
                .map(|c| format!("{}: {}", c.name, c.detail))
                .collect();
            if failed.is_empty() {
                Outcome::new(true, summary.join("; "))
            } else {
                Outcome::new(false, failed.join("; "))
            }
        }
        Err(e) => Outcome::new(false, e.to_string()),
    }
}

fn kernel_exactness() -> Outcome {
    judge(ExperimentKind::Kernel)
}

fn environment_law() -> Outcome {
    judge(ExperimentKind::Tail)
}

fn regeneration_fixture() -> Outcome {
    let mut notes = Vec::new();
    let mut passed = true;

    let cfg = LatticeConfig::standard(5).expect("default lattice");
    let env = Environment::constant(1.0, ConductanceLaw::pareto(0.5).expect("default law"), cfg.clone());
    let straight = Trajectory::from_directions(&cfg, Point::ORIGIN, &[0; 60], 1);
    let run = regeneration_sequence(&env, &mut Replay::new(&straight), 10, 5.0, u64::MAX);
    let taus: Vec<u64> = run.records.iter().map(|r| r.tau).collect();
    let expected: Vec<u64> = (1..=taus.len() as u64).map(|k| k + 1).collect();
    if taus.is_empty() || taus != expected {
        passed = false;
        notes.push(format!("straight path gives tau = {taus:?}, expected {expected:?}"));
    } else {
        notes.push(format!("straight path tau = {taus:?}"));
    }

    let back = Trajectory::from_directions(&cfg, Point::ORIGIN, &[0, 1], 1);
    let back_outcome = detect_defect(&cfg, &back);
    let origin = Trajectory::from_directions(&cfg, Point::ORIGIN, &[0, 2], 0);
    let origin_outcome = detect_defect(&cfg, &origin);
    let defects_ok = back_outcome == DefectOutcome::Back(2) && origin_outcome == DefectOutcome::Origin(1);
    passed &= defects_ok;
    notes.push(format!("+e1,-e1 gives {back_outcome:?}; unclamped +e1,+e2 gives {origin_outcome:?}"));
    Outcome::new(passed, notes.join("; "))
}

fn regeneration_tail() -> Outcome {
    judge(ExperimentKind::Regen)
}

fn sub_ballistic() -> Outcome {
    judge(ExperimentKind::Drift)
}

fn clock_convergence() -> Outcome {
    judge(ExperimentKind::Clock)
}

fn quenched_decorrelation() -> Outcome {
    judge(ExperimentKind::Variance)
}

fn joint_fixture() -> Outcome {
    let mut notes = Vec::new();
    let mut passed = true;
    match straight_pair_fixture() {
        Ok(report) => {
            let ladder = report.summary_row("first_ladder_level", "brute_force").map(|r| r.estimate);
            let first = report.summary_row("joint_level", "k=1").map(|r| r.estimate);
            let agree = report.check("brute_force_agreement").is_some_and(|c| c.passed);
            let definitional = report.check("definitional_assertions").is_some_and(|c| c.passed);
            passed &= agree && definitional && first == Some(2.0);
            notes.push(format!(
                "brute-force ladder level {ladder:?} (search agrees: {agree}); first joint level {first:?}, expected 2; \
                 fixture definitional assertions hold: {definitional}"
            ));
        }
        Err(e) => {
            passed = false;
            notes.push(format!("fixture failed: {e}"));
        }
    }
    match simulated_pairs() {
        Ok(report) => {
            let check = report.check("definitional_assertions");
            passed &= check.is_some_and(|c| c.passed);
            notes.push(format!("simulated pairs: {}", check.map_or("missing".into(), |c| c.detail.clone())));
        }
        Err(e) => {
            passed = false;
            notes.push(format!("simulated pairs: {e}"));
        }
    }
    Outcome::new(passed, notes.join("; "))
}

fn straight_pair_fixture() -> Result<ExperimentReport> {
    let cfg = fixture_config(ExperimentKind::Joint, 5)?;
    let lattice = cfg.lattice_config()?;
    let t1 = Trajectory::from_directions(&lattice, Point::ORIGIN, &[0; 400], 1);
    let t2 = Trajectory::from_directions(&lattice, Point::ORIGIN.shifted(1, 2), &[0; 400], 1);
    run_injected(&cfg, &t1.dump(), &t2.dump())
}

/// The default joint run, shared by the fixture and tail criteria.
fn simulated_pairs() -> &'static std::result::Result<ExperimentReport, String> {
    static RUN: OnceLock<std::result::Result<ExperimentReport, String>> = OnceLock::new();
    RUN.get_or_init(|| run_experiment(&defaults(ExperimentKind::Joint)).map_err(|e| e.to_string()))
}

fn joint_tails() -> Outcome {
    match simulated_pairs() {
        Ok(report) => {
            let checks = ["tail_strictly_decreasing", "tail_slope"].map(|n| report.check(n));
            let passed = checks.iter().all(|c| c.is_some_and(|c| c.passed));
            let detail = checks.iter().flatten().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ");
            Outcome::new(passed, detail)
        }
        Err(e) => Outcome::new(false, e.clone()),
    }
}

fn separation() -> Outcome {
    judge(ExperimentKind::Separation)
}

fn omega_k() -> Outcome {
    judge(ExperimentKind::OmegaK)
}

fn point_mass() -> Outcome {
    judge(ExperimentKind::PointMass)
}

fn small_time() -> Outcome {
    judge(ExperimentKind::SmallTime)
}

fn oracles() -> Outcome {
    judge(ExperimentKind::Oracle)
}

/// A configuration small enough to run in seconds on a line, where the
/// walk regenerates quickly.
fn small_config(kind: ExperimentKind) -> String {
    let specific = match kind {
        ExperimentKind::Kernel => "[budget]\nn_env = 50\n",
        ExperimentKind::Tail | ExperimentKind::Oracle => "[params]\nsamples = 2000\nk_top = 100\n",
        ExperimentKind::Drift => "[budget]\nn_env = 8\n[params]\nn_list = 256, 1024\n",
        ExperimentKind::Regen => "[budget]\nn_env = 12\ndelta = 10\n[params]\nepochs = 20\nk_top = 20\n",
        ExperimentKind::Clock => "[budget]\nn_env = 20\ndelta = 10\n[params]\nn_list = 64\nrepetitions = 3\n",
        ExperimentKind::Variance => "[budget]\nn_env = 6\nn_walk = 6\ndelta = 10\n[params]\nn_list = 16, 32, 64\n",
        ExperimentKind::Joint => "[budget]\nn_env = 10\ndelta = 10\n[params]\nepochs = 3\nn_list = 2, 4, 8\n",
        ExperimentKind::Separation => "[budget]\nn_env = 10\n[params]\nhorizon = 64\nr_grid = 4, 16\n",
        ExperimentKind::OmegaK => "[params]\nsamples = 200\n",
        ExperimentKind::PointMass => "[budget]\nn_env = 1000\ndelta = 10\n[params]\nn_list = 4, 16\n",
        ExperimentKind::SmallTime => "[budget]\nn_env = 60\ndelta = 10\n[params]\nn_list = 64, 256\n",
        ExperimentKind::Fk => "[budget]\nn_env = 6\ndelta = 10\n[params]\nepochs = 20\n",
    };
    format!(
        "experiment = {kind}\n[lattice]\nd = 1\nlambda = 1.2\nk = 1.3\n[conductance]\ngamma = 0.9\n{specific}",
    )
}

fn fingerprint(result: &Result<ExperimentReport>) -> String {
    match result {
        Ok(r) => {
            let tables = [r.tasks.to_csv(), r.summary_table().to_csv(), r.checks_table().to_csv()];
            tables.into_iter().map(|t| t.unwrap_or_else(|e| format!("unwritable: {e}"))).collect()
        }
        Err(e) => format!("error: {e}"),
    }
}

fn engineering() -> Outcome {
    let mut problems = Vec::new();
    for kind in ExperimentKind::ALL {
        let mut cfg = match ExperimentConfig::parse(&small_config(kind)) {
            Ok(cfg) => cfg,
            Err(e) => {
                problems.push(format!("{kind}: small configuration rejected: {e}"));
                continue;
            }
        };
        let mut prints = Vec::new();
        for threads in [1, 8] {
            cfg.threads = threads;
            prints.push(fingerprint(&run_experiment(&cfg)));
        }
        if prints[0] != prints[1] {
            problems.push(format!("{kind}: outputs differ between 1 and 8 threads"));
        }
        let emitted = cfg.emit();
        match ExperimentConfig::parse(&emitted) {
            Ok(back) if back == cfg && back.emit() == emitted => {}
            Ok(_) => problems.push(format!("{kind}: configuration does not round-trip")),
            Err(e) => problems.push(format!("{kind}: emitted configuration rejected: {e}")),
        }
    }
    match ExperimentConfig::parse("experiment = drift\n[budget]\nn_env = 10\nn_envs = 10\n") {
        Ok(_) => problems.push("unknown key `n_envs` accepted".into()),
        Err(e) if e.to_string().contains("line 4") => {}
        Err(e) => problems.push(format!("unknown key rejected without its line: {e}")),
    }
    if problems.is_empty() {
        Outcome::new(true, format!("{} experiments identical across 1 and 8 threads; round-trip and unknown-key rejection hold", ExperimentKind::ALL.len()))
    } else {
        Outcome::new(false, problems.join("; "))
    }
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for c in criteria().into_iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.limit;
        let passed = outcome.passed && in_time;
        failures += usize::from(!passed);
        let timing = if in_time {
            format!("{:.1}s", elapsed.as_secs_f64())
        } else {
            format!("{:.1}s exceeds {}s", elapsed.as_secs_f64(), c.limit.as_secs())
        };
        println!("{} criterion {:>2} {} [{timing}]: {}", if passed { "PASS" } else { "FAIL" }, c.id, c.name, outcome.detail);
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
