mod common;

use std::fs;
use std::path::{Path, PathBuf};

use explore_core::bench::{coverage_at, run_bench, summarize, trial_paths, BenchSpec};
use explore_core::episode::{EpisodeRecord, RunManifest};
use explore_core::planners::PolicyKind;
use explore_core::predictor::PredictorKind;
use explore_core::protocol::{PolicyResponse, RawFrame};
use explore_core::{save_plan, Pose};

fn write_plans(dir: &Path, seeds: &[u64]) -> Vec<PathBuf> {
    seeds
        .iter()
        .map(|s| {
            let p = dir.join(format!("p{s}.pgm"));
            save_plan(&common::small_plan(*s), &p).unwrap();
            p
        })
        .collect()
}

fn spec(dir: &Path, plans: Vec<PathBuf>, planners: Vec<PolicyKind>) -> BenchSpec {
    let mut s = BenchSpec::new(plans, planners, dir.join("out"));
    s.trials = 3;
    s.base_seed = 5;
    s.episode.max_steps = 500;
    s
}

#[test]
fn persisted_traces_reproduce_the_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let plans = write_plans(tmp.path(), &[21, 22]);
    let s = spec(tmp.path(), plans, vec![PolicyKind::Frontier, PolicyKind::GreedyPred]);
    let live = run_bench(&s).unwrap();
    let (again, problems) = summarize(&s.out_dir).unwrap();
    assert!(problems.is_empty(), "{problems:?}");
    assert_eq!(live, again);
    for r in &live.rows {
        assert_eq!(r.trials, 3);
        assert_eq!(r.successes + r.failures, 3);
        if let (Some(lo), Some(avg), Some(hi), Some(sd)) = (r.min_m, r.avg_m, r.max_m, r.std_m) {
            assert!(lo <= avg && avg <= hi && sd >= 0.0);
        }
    }
    let summary_csv = fs::read_to_string(s.out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary_csv.lines().count(), 1 + live.rows.len());
    assert!(s.out_dir.join("summary.txt").exists());
    assert!(s.out_dir.join("p21/curves.svg").exists());
}

#[test]
fn traces_sum_to_path_and_frontier_curves_rise() {
    let tmp = tempfile::tempdir().unwrap();
    let plans = write_plans(tmp.path(), &[23]);
    let s = spec(tmp.path(), plans, vec![PolicyKind::Frontier]);
    run_bench(&s).unwrap();
    let mut traces = Vec::new();
    for trial in 0..3 {
        let (csv, manifest) = trial_paths(&s.out_dir, "p23", "frontier", trial);
        let rows = EpisodeRecord::read_csv(&csv).unwrap();
        let m = RunManifest::read(&manifest).unwrap();
        assert_eq!(m.seed, 5 + trial);
        assert_eq!(m.steps + 1, rows.len() as u64);
        let moved: f64 = rows.iter().map(|r| r.move_m).sum();
        assert!((moved - rows.last().unwrap().path_m).abs() <= 1e-9);
        // same start for every trial
        assert_eq!((rows[0].x, rows[0].y, rows[0].yaw), {
            let (c, _) = trial_paths(&s.out_dir, "p23", "frontier", 0);
            let r0 = &EpisodeRecord::read_csv(&c).unwrap()[0];
            (r0.x, r0.y, r0.yaw)
        });
        traces.push(rows);
    }
    let curve = fs::read_to_string(s.out_dir.join("p23/curves.csv")).unwrap();
    let means: Vec<f64> = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "frontier mean coverage decreased");
    for t in &traces {
        let mut last = 0.0;
        for k in 0..200 {
            let c = coverage_at(t, k as f64 * 0.25);
            assert!(c >= last);
            last = c;
        }
    }
}

#[test]
fn oracle_prediction_reaches_the_target_at_zero_length() {
    let tmp = tempfile::tempdir().unwrap();
    let plans = write_plans(tmp.path(), &[24]);
    let mut s = spec(tmp.path(), plans, vec![PolicyKind::FrontierPred]);
    s.predictor = PredictorKind::Oracle;
    let summary = run_bench(&s).unwrap();
    let r = &summary.rows[0];
    assert_eq!((r.successes, r.max_m), (3, Some(0.0)));
}

#[test]
fn protocol_failures_become_failed_trials() {
    let tmp = tempfile::tempdir().unwrap();
    let plans = write_plans(tmp.path(), &[25]);
    let nine = common::tcp_double(|_: RawFrame| Ok(PolicyResponse { action: 9 }.to_frame_unchecked()));
    let mut s = spec(tmp.path(), plans, vec![PolicyKind::External(nine), PolicyKind::Frontier]);
    s.start = Some(Pose::new(-5.0, -5.0, 0.0));
    // an impossible start fails every trial without stopping the harness
    let bad = run_bench(&s).unwrap();
    assert!(bad.rows.iter().all(|r| r.successes == 0 && r.failures == 3));
    s.start = None;
    let summary = run_bench(&s).unwrap();
    let ext = summary.rows.iter().find(|r| r.planner == "external").unwrap();
    assert_eq!((ext.successes, ext.failures), (0, 3));
    let (_, manifest) = trial_paths(&s.out_dir, "p25", "external", 0);
    let m = RunManifest::read(&manifest).unwrap();
    assert_eq!(m.terminal_reason, "error");
    assert!(m.error.unwrap().contains('9'));
    let front = summary.rows.iter().find(|r| r.planner == "frontier").unwrap();
    assert_eq!(front.failures, 0);
}

#[test]
fn corrupt_traces_are_reported_per_file() {
    let tmp = tempfile::tempdir().unwrap();
    let plans = write_plans(tmp.path(), &[26]);
    let s = spec(tmp.path(), plans, vec![PolicyKind::Frontier]);
    run_bench(&s).unwrap();
    let (csv, _) = trial_paths(&s.out_dir, "p26", "frontier", 1);
    fs::write(&csv, "step,x\nnot,a,number\n").unwrap();
    let (_, manifest) = trial_paths(&s.out_dir, "p26", "frontier", 2);
    fs::write(&manifest, "plan = ").unwrap();
    let (summary, problems) = summarize(&s.out_dir).unwrap();
    assert_eq!(problems.len(), 2);
    assert_eq!(summary.rows[0].trials, 1);
}
