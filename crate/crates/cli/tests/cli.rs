use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_explore");

fn explore(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(BIN).current_dir(dir).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn gen(dir: &Path, count: &str) {
    let out = explore(
        dir,
        &["gen-plans", "--count", count, "--seed", "3", "--out", "plans", "--max-w", "9", "--max-h", "7"],
    );
    assert!(out.status.success());
}

#[test]
fn gen_plans_writes_rasters_and_sidecars() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "3");
    for i in 0..3 {
        let stem = tmp.path().join(format!("plans/plan_{i:04}"));
        assert!(stem.with_extension("pgm").exists());
        assert!(stem.with_extension("meta").exists());
        let plan = explore_core::load_plan(&stem.with_extension("pgm")).unwrap();
        assert!(plan.width() as f64 * plan.resolution() <= 9.0 + 1e-9);
    }
    // same seed, same bytes
    let again = tempfile::tempdir().unwrap();
    gen(again.path(), "3");
    for i in 0..3 {
        let name = format!("plans/plan_{i:04}.pgm");
        assert_eq!(fs::read(tmp.path().join(&name)).unwrap(), fs::read(again.path().join(&name)).unwrap());
    }
}

#[test]
fn run_then_stats_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "1");
    let out = explore(
        tmp.path(),
        &[
            "run", "--plan", "plans/plan_0000.pgm", "--planner", "frontier", "--predictor", "identity", "--trials", "2",
            "--coverage", "0.9", "--seed", "4", "--out", "runs",
        ],
    );
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("plan_0000") && table.contains("frontier"));
    for k in 0..2 {
        assert!(tmp.path().join(format!("runs/plan_0000/frontier/trial_{k}.csv")).exists());
        assert!(tmp.path().join(format!("runs/plan_0000/frontier/trial_{k}.manifest")).exists());
    }
    let stats = explore(tmp.path(), &["stats", "--runs", "runs", "--format", "csv"]);
    assert!(stats.status.success());
    assert_eq!(
        String::from_utf8(stats.stdout).unwrap(),
        fs::read_to_string(tmp.path().join("runs/summary.csv")).unwrap()
    );
}

#[test]
fn stats_on_an_empty_directory_has_its_own_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();
    let out = explore(tmp.path(), &["stats", "--runs", "empty"]);
    assert_eq!(out.status.code(), Some(3));
    let missing = explore(tmp.path(), &["stats", "--runs", "nowhere"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "1");
    fs::write(
        tmp.path().join("cfg.toml"),
        "trials = 3\nout = \"from_config\"\n\n[run]\nplan = \"plans/plan_0000.pgm\"\nmax-steps = 40\n\n[episode]\ncollision_penalty_l = 4.0\n",
    )
    .unwrap();
    let out = explore(tmp.path(), &["--config", "cfg.toml", "run", "--trials", "1", "--coverage", "0.99"]);
    assert!(out.status.success());
    let dir = tmp.path().join("from_config/plan_0000/frontier");
    assert!(dir.join("trial_0.csv").exists());
    assert!(!dir.join("trial_1.csv").exists(), "--trials on the command line should win");
    let rows = fs::read_to_string(dir.join("trial_0.csv")).unwrap();
    assert!(rows.lines().count() <= 42, "max-steps from the config was ignored");
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "1");
    let out = explore(tmp.path(), &["run", "--plan", "plans/plan_0000.pgm", "--planner", "teleport", "--out", "r"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("teleport"));
    let out = explore(tmp.path(), &["run", "--plan", "plans/plan_0000.pgm", "--start", "1,2", "--out", "r"]);
    assert_eq!(out.status.code(), Some(1));
    let out = explore(tmp.path(), &["bench", "--plans", "plans", "--trials", "0", "--out", "r"]);
    assert_eq!(out.status.code(), Some(1));
}

fn trial_csv(dir: &Path, planner: &str) -> String {
    fs::read_to_string(dir.join(format!("plan_0000/{planner}/trial_0.csv"))).unwrap()
}

#[test]
fn subprocess_doubles_match_in_process_back_ends() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "1");
    let common = ["--trials", "1", "--seed", "8", "--max-steps", "40"];
    let run = |out: &str, planner: &str, predictor: &str| {
        let mut args = vec!["bench", "--plans", "plans", "--planners", planner, "--predictor", predictor, "--out", out];
        args.extend(common);
        assert!(explore(tmp.path(), &args).status.success());
    };
    let predictor = format!("external=cmd:{BIN} serve-predictor --model identity");
    run("local", "frontier_pred", "identity");
    run("remote", "frontier_pred", &predictor);
    assert_eq!(trial_csv(&tmp.path().join("local"), "frontier_pred"), trial_csv(&tmp.path().join("remote"), "frontier_pred"));

    let policy = format!("external=cmd:{BIN} serve-policy --model greedy");
    run("greedy_local", "greedy_pred", "identity");
    run("greedy_remote", &policy, "identity");
    assert_eq!(
        trial_csv(&tmp.path().join("greedy_local"), "greedy_pred"),
        trial_csv(&tmp.path().join("greedy_remote"), "external")
    );
}
