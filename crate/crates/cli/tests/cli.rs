use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/regression.conf")
}

fn afl_sim(args: &[&str], out: &Path) -> Output {
    afl_sim_env(args, out, None)
}

fn afl_sim_env(args: &[&str], out: &Path, threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_afl-sim"));
    cmd.args(args).arg("--out").arg(out);
    if args.first() != Some(&"verify") {
        cmd.arg("--config").arg(config());
    }
    match threads {
        Some(t) => cmd.env("AFL_SIM_THREADS", t),
        None => cmd.env_remove("AFL_SIM_THREADS"),
    };
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Rows of a header-led CSV as string fields, header dropped.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn column(path: &Path, idx: usize) -> Vec<f64> {
    rows(path).iter().map(|r| r[idx].parse().unwrap()).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn run_writes_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let o = afl_sim(&["run"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = dir.path().join("metrics.csv");
    assert_eq!(rows(&csv).len(), 400);
    assert!(dir.path().join("metrics.json").exists());
    assert!(dir.path().join("manifest.json").exists());
    assert!(column(&csv, 1).iter().all(|l| l.is_finite()));
}

#[test]
fn zero_fraction_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = afl_sim(&["run", "--set", "fraction=0"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("metrics.csv").exists());
}

#[test]
fn malformed_value_reports_field() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "rounds = many\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_afl-sim"))
        .args(["run", "--config"])
        .arg(&conf)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1: field `rounds`"));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = afl_sim(&["run", "--set", "gamma0=1", "--set", "lr_schedule=constant"], dir.path());
    assert_eq!(code(&o), 3);
}

#[test]
fn repeated_runs_are_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["run", "--set", "rounds=60", "--seed", "3"];
    assert_eq!(code(&afl_sim(&args, a.path())), 0);
    assert_eq!(code(&afl_sim(&args, b.path())), 0);
    for f in ["metrics.csv", "metrics.json", "plots/server_loss.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn thread_override_keeps_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["run", "--set", "rounds=60"];
    assert_eq!(code(&afl_sim_env(&args, a.path(), Some("1"))), 0);
    assert_eq!(code(&afl_sim_env(&args, b.path(), None)), 0);
    assert_eq!(
        std::fs::read(a.path().join("metrics.csv")).unwrap(),
        std::fs::read(b.path().join("metrics.csv")).unwrap()
    );
    let c = tempfile::tempdir().unwrap();
    assert_eq!(code(&afl_sim_env(&args, c.path(), Some("zero"))), 2);
}

#[test]
fn sweep_covers_the_grid_and_averages_runs() {
    let dir = tempfile::tempdir().unwrap();
    let fractions = ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.8", "1.0"];
    let o = afl_sim(
        &["sweep", "--fractions", &fractions.join(","), "--seeds", "0,1,2,3,4", "--set", "rounds=20"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let agg = rows(&dir.path().join("aggregate.csv"));
    assert_eq!(agg.len(), fractions.len() * 20);
    for f in fractions {
        let runs: Vec<Vec<f64>> = (0..5)
            .map(|s| {
                let p = dir.path().join(format!("runs/fraction-{f}/seed-{s}/metrics.csv"));
                column(&p, 1)
            })
            .collect();
        assert!(runs.iter().all(|r| r.len() == 20));
        let mine: Vec<&Vec<String>> = agg.iter().filter(|r| r[0] == f).collect();
        assert_eq!(mine.len(), 20);
        for (r, row) in mine.iter().enumerate() {
            assert_eq!(row[1], (r + 1).to_string());
            let expected = runs.iter().map(|run| run[r]).sum::<f64>() / 5.0;
            assert!(close(row[2].parse().unwrap(), expected));
        }
        assert!(dir.path().join(format!("plots/mean_loss_fraction_{f}.csv")).exists());
    }
}

#[test]
fn single_run_sweep_equals_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = afl_sim(&["sweep", "--fractions", "0.5", "--seeds", "7", "--set", "rounds=25"], dir.path());
    assert_eq!(code(&o), 0);
    let run = column(&dir.path().join("runs/fraction-0.5/seed-7/metrics.csv"), 1);
    let agg = column(&dir.path().join("aggregate.csv"), 2);
    assert_eq!(run, agg);
}

#[test]
fn compare_writes_full_length_curves() {
    let dir = tempfile::tempdir().unwrap();
    let o = afl_sim(&["compare", "--seeds", "0,1,2,3,4"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = dir.path().join("compare.csv");
    let (afl, sync, diff) = (column(&table, 1), column(&table, 2), column(&table, 3));
    assert_eq!(afl.len(), 400);
    for r in 0..400 {
        let a = (0..5)
            .map(|s| column(&dir.path().join(format!("afl/seed-{s}/metrics.csv")), 1)[r])
            .sum::<f64>()
            / 5.0;
        let y = (0..5)
            .map(|s| column(&dir.path().join(format!("sync/seed-{s}/metrics.csv")), 1)[r])
            .sum::<f64>()
            / 5.0;
        assert!(close(afl[r], a) && close(sync[r], y));
        assert!(close(diff[r], afl[r] - sync[r]));
        if r == 0 {
            assert!(dir.path().join("plots/difference.csv").exists());
        }
    }
}

#[test]
fn compare_without_staleness_or_delay_term_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let o = afl_sim(
        &["compare", "--seeds", "0,1", "--set", "tau_max=0", "--set", "alpha=0", "--set", "rounds=50"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    assert!(column(&dir.path().join("compare.csv"), 3).iter().all(|&d| d == 0.0));
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = afl_sim(&["verify", "sampling"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("verification.json").exists());
    assert_eq!(code(&afl_sim(&["verify", "samplng"], dir.path())), 2);
}
