use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fkrwrc::config::{ExperimentConfig, ExperimentKind};
use fkrwrc::experiment::{fixture_config, run_experiment, run_injected};
use fkrwrc::report::ExperimentReport;
use fkrwrc::{Error, Result};

#[derive(Parser)]
#[command(name = "fkrwrc", version, about = "Biased random walks among heavy-tailed random conductances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; 0 uses all cores.
        #[arg(long, env = "FKRWRC_THREADS")]
        threads: Option<usize>,
        /// Output directory for the report files.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed.
        #[arg(long, env = "FKRWRC_SEED")]
        seed: Option<u64>,
    },
    /// Parse a configuration file and print it with all defaults resolved.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Analyse two given trajectories instead of simulated ones.
    Inject {
        #[arg(long)]
        traj1: PathBuf,
        #[arg(long)]
        traj2: PathBuf,
        #[arg(long, value_enum)]
        experiment: InjectKind,
        /// Configuration for the environment and parameters. Without it every
        /// conductance is 1 and the dimension is read from the trajectories.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for report files; the tables go to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectKind {
    Joint,
    Separation,
}

impl From<InjectKind> for ExperimentKind {
    fn from(k: InjectKind) -> Self {
        match k {
            InjectKind::Joint => ExperimentKind::Joint,
            InjectKind::Separation => ExperimentKind::Separation,
        }
    }
}

fn read(path: &PathBuf) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::parse(&read(path)?).map_err(|e| match e {
        Error::Config { line, message } => Error::Config { line, message: format!("{}: {message}", path.display()) },
        other => other,
    })
}

/// Dimension from the `d <d> origin ...` header of a trajectory file.
fn header_dimension(text: &str) -> Result<usize> {
    let header = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let fields: Vec<&str> = header.split_whitespace().collect();
    match fields.as_slice() {
        ["d", d, "origin", ..] => d.parse().map_err(|_| Error::Parse(format!("bad dimension `{d}`"))),
        _ => Err(Error::Parse("line 1: expected `d <d> origin <coords>`".into())),
    }
}

fn print_checks(report: &ExperimentReport) {
    for c in &report.checks {
        let status = match (c.passed, c.asserted) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "note",
        };
        eprintln!("{status} {}: {}", c.name, c.detail);
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, threads, out, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(t) = threads {
                cfg.threads = t;
            }
            if let Some(dir) = out {
                cfg.out = dir;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = run_experiment(&cfg)?;
            let paths = report.write(&cfg.out)?;
            print_checks(&report);
            for p in paths {
                println!("{}", p.display());
            }
            Ok(report.passed())
        }
        Command::Validate { config } => {
            print!("{}", load_config(&config)?.emit());
            Ok(true)
        }
        Command::Inject { traj1, traj2, experiment, config, out } => {
            let text1 = read(&traj1)?;
            let text2 = read(&traj2)?;
            let kind = ExperimentKind::from(experiment);
            let cfg = match config {
                Some(path) => {
                    let mut cfg = load_config(&path)?;
                    cfg.experiment = kind;
                    cfg
                }
                None => fixture_config(kind, header_dimension(&text1)?)?,
            };
            let report = run_injected(&cfg, &text1, &text2)?;
            match out {
                Some(dir) => {
                    for p in report.write(&dir)? {
                        println!("{}", p.display());
                    }
                }
                None => {
                    print!("{}", report.tasks.to_csv()?);
                    print!("{}", report.summary_table().to_csv()?);
                }
            }
            print_checks(&report);
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
