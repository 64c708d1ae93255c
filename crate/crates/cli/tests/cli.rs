use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fkrwrc(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fkrwrc"));
    cmd.args(args).env_remove("FKRWRC_SEED").env_remove("FKRWRC_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_echoes_resolved_defaults_that_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "drift.ini", "experiment = drift\n");
    let o = fkrwrc(&["validate", "--config", &cfg], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed = String::from_utf8(o.stdout.clone()).unwrap();
    assert!(echoed.contains("alpha = 9\n"));
    assert!(echoed.contains("n_list = 4096, 8192, 16384, 32768, 65536, 131072, 262144\n"));
    let again = write(dir.path(), "echo.ini", &echoed);
    let o = fkrwrc(&["validate", "--config", &again], &[]);
    assert_eq!(String::from_utf8(o.stdout.clone()).unwrap(), echoed);
}

#[test]
fn config_errors_exit_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.ini", "experiment = tail\n[conductance]\ngamma = 1.5\n");
    let o = fkrwrc(&["validate", "--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("(0, 1)"), "{err}");

    let cfg = write(dir.path(), "typo.ini", "experiment = tail\n\n[budget]\nn_envs = 3\n");
    let o = fkrwrc(&["run", "--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 4") && err.contains("n_envs"), "{err}");
}

fn report_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.to_str().unwrap();
            name.ends_with(".csv") && !name.ends_with("_metrics.csv")
        })
        .map(|p| (p.file_name().unwrap().to_str().unwrap().to_string(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "regen.ini",
        "experiment = regen\n[lattice]\nd = 1\nlambda = 1.2\nk = 1.3\n[conductance]\ngamma = 0.9\n\
         [budget]\nn_env = 16\nbatch = 3\ndelta = 10\n[params]\nepochs = 10\nk_top = 20\n",
    );
    let mut runs = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(format!("out{threads}"));
        let o = fkrwrc(&["run", "--config", &cfg, "--threads", threads, "--out", out.to_str().unwrap()], &[]);
        assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
        runs.push(report_files(&out));
    }
    assert_eq!(runs[0].len(), 3);
    assert_eq!(runs[0], runs[1]);
    let metrics = fs::read_to_string(dir.path().join("out8/regen_metrics.csv")).unwrap();
    assert!(metrics.lines().nth(1).unwrap().contains(",8,"));
}

#[test]
fn environment_variables_override_seed_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "kernel.ini", "experiment = kernel\n[budget]\nn_env = 20\n");
    let run = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        let o = fkrwrc(
            &["run", "--config", &cfg, "--out", out.to_str().unwrap()],
            &[("FKRWRC_SEED", seed), ("FKRWRC_THREADS", "2")],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        (fs::read_to_string(out.join("kernel_tasks.csv")).unwrap(), fs::read_to_string(out.join("kernel_config.ini")).unwrap())
    };
    let (a, config_a) = run("7", "a");
    let (b, _) = run("8", "b");
    assert_ne!(a, b);
    assert!(config_a.contains("seed = 7\n") && config_a.contains("threads = 2\n"));
}

#[test]
fn uniform_drift_passes_and_failed_checks_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write(
        dir.path(),
        "drift.ini",
        "experiment = drift\n[conductance]\nuniform = 20\n[budget]\nn_env = 10\n[params]\nn_list = 100, 1000\n",
    );
    let o = fkrwrc(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("drift_summary.csv").exists());

    let cfg = write(dir.path(), "tail.ini", "experiment = tail\n[conductance]\nuniform = 20\n[params]\nsamples = 5000\n");
    let o = fkrwrc(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("FAIL hill_within_0.05"));
}

fn straight_path(d: usize, offset: i32, steps: usize) -> String {
    let mut s = format!("d {d} origin{}\n", " 0".repeat(d));
    for k in 0..=steps {
        let mut line = format!("{k} {k}");
        for axis in 1..d {
            line.push_str(&format!(" {}", if axis == 1 { offset } else { 0 }));
        }
        s.push_str(&line);
        s.push_str(" 1\n");
    }
    s
}

#[test]
fn inject_reports_joint_levels_and_separation() {
    let dir = tempfile::tempdir().unwrap();
    let t1 = write(dir.path(), "t1.txt", &straight_path(3, 0, 100));
    let t2 = write(dir.path(), "t2.txt", &straight_path(3, 2, 100));
    let o = fkrwrc(&["inject", "--traj1", &t1, "--traj2", &t2, "--experiment", "joint"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout.clone()).unwrap();
    assert!(out.starts_with("k,level,time1,time2,confirmed\n"), "{out}");
    assert!(out.contains("joint,first_ladder_level,brute_force,2.0000000000000000e0"), "{out}");
    assert!(stderr(&o).contains("PASS brute_force_agreement"));

    let o = fkrwrc(&["inject", "--traj1", &t1, "--traj2", &t2, "--experiment", "separation"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout.clone()).unwrap();
    assert!(out.contains("4,true,2\n") && out.contains("64,true,2\n"), "{out}");

    let bad = write(dir.path(), "bad.txt", "d 3 origin 0 0\n");
    let o = fkrwrc(&["inject", "--traj1", &bad, "--traj2", &t2, "--experiment", "joint"], &[]);
    assert_eq!(o.status.code(), Some(2));
}
