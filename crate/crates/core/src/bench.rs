//! Multi-trial benchmarking: runs every (plan, planner, trial) combination,
//! persists each trace, and reduces them to path-length statistics and
//! coverage curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::Pose;
use crate::episode::{Episode, EpisodeConfig, EpisodeRecord, RunManifest, StepRow, TerminalReason};
use crate::floorplan::{load_plan, FloorPlan};
use crate::pgm::RasterIoError;
use crate::planners::{run_episode, PolicyKind};
use crate::predictor::PredictorKind;
use crate::protocol::DEFAULT_TIMEOUT;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("benchmark needs at least one plan, one planner and one trial")]
    EmptySpec,
    #[error("cannot load plan {path}: {source}")]
    Plan {
        path: PathBuf,
        #[source]
        source: RasterIoError,
    },
    #[error("cannot pick a start pose for {path}: {reason}")]
    Start { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write trace {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("no trial manifests under {0}")]
    NoRuns(PathBuf),
    #[error("worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug)]
pub struct BenchSpec {
    pub plans: Vec<PathBuf>,
    pub planners: Vec<PolicyKind>,
    pub predictor: PredictorKind,
    pub trials: u64,
    pub coverage_target: f64,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    pub parallelism: usize,
    /// Shared start pose; when absent each plan gets one pose drawn from
    /// `base_seed` and used by every trial.
    pub start: Option<Pose>,
    /// Template for every episode; seed, target, start and coverage source
    /// are filled in per trial.
    pub episode: EpisodeConfig,
    pub timeout: Duration,
}

impl BenchSpec {
    pub fn new(plans: Vec<PathBuf>, planners: Vec<PolicyKind>, out_dir: PathBuf) -> Self {
        Self {
            plans,
            planners,
            predictor: PredictorKind::Identity,
            trials: 10,
            coverage_target: 0.95,
            base_seed: 0,
            out_dir,
            parallelism: 1,
            start: None,
            episode: EpisodeConfig::default(),
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

/// Path-length statistics for one (plan, planner) pair, over successful
/// trials only.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub plan: String,
    pub planner: String,
    pub trials: usize,
    pub successes: usize,
    pub failures: usize,
    pub min_m: Option<f64>,
    pub max_m: Option<f64>,
    pub avg_m: Option<f64>,
    pub std_m: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchSummary {
    pub rows: Vec<SummaryRow>,
}

/// One finished trial as the summary sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub plan: String,
    pub planner: String,
    pub trial: u64,
    pub path_at_target: Option<f64>,
    pub rows: Vec<StepRow>,
}

/// Sample mean and standard deviation (n - 1 denominator; zero for n = 1).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

pub fn summarize_outcomes(outcomes: &[TrialOutcome]) -> BenchSummary {
    let mut groups: BTreeMap<(String, String), Vec<&TrialOutcome>> = BTreeMap::new();
    for o in outcomes {
        groups.entry((o.plan.clone(), o.planner.clone())).or_default().push(o);
    }
    let rows = groups
        .into_iter()
        .map(|((plan, planner), trials)| {
            let mut ok: Vec<(u64, f64)> = trials.iter().filter_map(|t| t.path_at_target.map(|p| (t.trial, p))).collect();
            ok.sort_by_key(|&(trial, _)| trial);
            let paths: Vec<f64> = ok.iter().map(|&(_, p)| p).collect();
            let stats = mean_std(&paths);
            SummaryRow {
                plan,
                planner,
                trials: trials.len(),
                successes: paths.len(),
                failures: trials.len() - paths.len(),
                min_m: paths.iter().copied().reduce(f64::min),
                max_m: paths.iter().copied().reduce(f64::max),
                avg_m: stats.map(|s| s.0),
                std_m: stats.map(|s| s.1),
            }
        })
        .collect();
    BenchSummary { rows }
}

fn opt(v: Option<f64>, width: usize) -> String {
    match v {
        Some(x) => format!("{x:>width$.3}"),
        None => format!("{:>width$}", "-"),
    }
}

impl BenchSummary {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<24} {:<16} {:>6} {:>4} {:>6} {:>9} {:>9} {:>9} {:>9}\n",
            "plan", "planner", "trials", "ok", "failed", "min_m", "max_m", "avg_m", "std_m"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<24} {:<16} {:>6} {:>4} {:>6} {} {} {} {}",
                r.plan,
                r.planner,
                r.trials,
                r.successes,
                r.failures,
                opt(r.min_m, 9),
                opt(r.max_m, 9),
                opt(r.avg_m, 9),
                opt(r.std_m, 9)
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut s = String::from("plan,planner,trials,successes,failures,min_m,max_m,avg_m,std_m\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.plan,
                r.planner,
                r.trials,
                r.successes,
                r.failures,
                cell(r.min_m),
                cell(r.max_m),
                cell(r.avg_m),
                cell(r.std_m)
            );
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        let txt = dir.join("summary.txt");
        fs::write(&txt, self.to_table()).map_err(io_err(&txt))?;
        let csv = dir.join("summary.csv");
        fs::write(&csv, self.to_csv()).map_err(io_err(&csv))
    }
}

/// Coverage a trace had reached once its path length was `path_m`: the
/// coverage of the last row with `path_m` not above it.
pub fn coverage_at(rows: &[StepRow], path_m: f64) -> f64 {
    let k = rows.partition_point(|r| r.path_m <= path_m);
    if k == 0 {
        0.0
    } else {
        rows[k - 1].coverage
    }
}

/// Mean and sample standard deviation of coverage across traces on a
/// regular path-length grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageCurve {
    pub planner: String,
    pub path_m: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const CURVE_STEP_M: f64 = 0.25;

pub fn coverage_curve(planner: &str, traces: &[&[StepRow]], step_m: f64) -> CoverageCurve {
    let max_path = traces
        .iter()
        .filter_map(|t| t.last().map(|r| r.path_m))
        .fold(0.0, f64::max);
    let n = (max_path / step_m).ceil() as usize + 1;
    let mut curve = CoverageCurve {
        planner: planner.to_string(),
        path_m: Vec::with_capacity(n),
        mean: Vec::with_capacity(n),
        std: Vec::with_capacity(n),
    };
    for k in 0..n {
        let p = k as f64 * step_m;
        let values: Vec<f64> = traces.iter().map(|t| coverage_at(t, p)).collect();
        let (m, s) = mean_std(&values).unwrap_or((0.0, 0.0));
        curve.path_m.push(p);
        curve.mean.push(m);
        curve.std.push(s);
    }
    curve
}

fn curves_csv(curves: &[CoverageCurve]) -> String {
    let mut s = String::from("planner,path_m,mean_coverage,std_coverage\n");
    for c in curves {
        for k in 0..c.path_m.len() {
            let _ = writeln!(s, "{},{},{},{}", c.planner, c.path_m[k], c.mean[k], c.std[k]);
        }
    }
    s
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Mean line with a ±1 std band per planner; x is path length, y coverage.
pub fn curves_svg(title: &str, curves: &[CoverageCurve]) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let max_x = curves
        .iter()
        .filter_map(|c| c.path_m.last().copied())
        .fold(1.0, f64::max);
    let sx = |x: f64| m + x / max_x * (w - 2.0 * m);
    let sy = |y: f64| h - m - y.clamp(0.0, 1.0) * (h - 2.0 * m);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{m}\" y=\"25\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{m}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{y0}\" x2=\"{m}\" y2=\"{m}\" stroke=\"black\"/>\n\
         <text x=\"{x1}\" y=\"{yl}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">path length {max_x:.1} m</text>\n\
         <text x=\"5\" y=\"{m}\" font-family=\"sans-serif\" font-size=\"11\">1.0</text>\n",
        y0 = h - m,
        x1 = w - m,
        yl = h - m + 20.0,
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper: Vec<String> = (0..c.path_m.len())
            .map(|k| format!("{:.2},{:.2}", sx(c.path_m[k]), sy(c.mean[k] + c.std[k])))
            .collect();
        let lower: Vec<String> = (0..c.path_m.len())
            .rev()
            .map(|k| format!("{:.2},{:.2}", sx(c.path_m[k]), sy(c.mean[k] - c.std[k])))
            .collect();
        let mean: Vec<String> = (0..c.path_m.len())
            .map(|k| format!("{:.2},{:.2}", sx(c.path_m[k]), sy(c.mean[k])))
            .collect();
        let _ = writeln!(
            s,
            "<polygon points=\"{} {}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>",
            upper.join(" "),
            lower.join(" ")
        );
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            mean.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>",
            w - m - 100.0,
            m + 15.0 * (i as f64 + 1.0),
            c.planner
        );
    }
    s.push_str("</svg>\n");
    s
}

fn plan_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "plan".to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn trial_paths(out_dir: &Path, plan: &str, planner: &str, trial: u64) -> (PathBuf, PathBuf) {
    let dir = out_dir.join(plan).join(planner);
    (
        dir.join(format!("trial_{trial}.csv")),
        dir.join(format!("trial_{trial}.manifest")),
    )
}

struct Job {
    plan_idx: usize,
    planner: PolicyKind,
    trial: u64,
}

struct LoadedPlan {
    stem: String,
    path: PathBuf,
    plan: Arc<FloorPlan>,
    start: Pose,
}

fn run_job(spec: &BenchSpec, plan: &LoadedPlan, job: &Job) -> Result<TrialOutcome, BenchError> {
    let seed = spec.base_seed + job.trial;
    let config = EpisodeConfig {
        rng_seed: seed,
        coverage_target: spec.coverage_target,
        coverage_source: job.planner.coverage_source(),
        start: Some(plan.start),
        ..spec.episode.clone()
    };
    let label = job.planner.label().to_string();
    let outcome = (|| -> Result<Episode, (Option<Box<Episode>>, String)> {
        let predictor = spec
            .predictor
            .build(&plan.plan, spec.timeout)
            .map_err(|e| (None, e.to_string()))?;
        let mut ep = Episode::new(plan.plan.clone(), config.clone(), predictor).map_err(|e| (None, e.to_string()))?;
        let mut policy = job
            .planner
            .build(config.robot_radius_m, spec.timeout)
            .map_err(|e| (None, e.to_string()))?;
        match run_episode(&mut ep, policy.as_mut()) {
            Ok(()) => Ok(ep),
            Err(e) => Err((Some(Box::new(ep)), e.to_string())),
        }
    })();
    let (record, error) = match outcome {
        Ok(ep) => (ep.into_record(), None),
        Err((ep, msg)) => {
            log::warn!("{} / {} / trial {}: {msg}", plan.stem, label, job.trial);
            let mut rec = ep.map(|e| e.into_record()).unwrap_or_default();
            rec.terminal = Some(TerminalReason::Error);
            (rec, Some(msg))
        }
    };
    let path_at_target = match error {
        None => record.path_at_coverage(spec.coverage_target),
        Some(_) => None,
    };
    let (csv_path, manifest_path) = trial_paths(&spec.out_dir, &plan.stem, &label, job.trial);
    let dir = csv_path.parent().expect("trial path has a parent");
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    record.write_csv(&csv_path).map_err(|source| BenchError::Csv {
        path: csv_path.clone(),
        source,
    })?;
    let last = record.rows.last();
    let manifest = RunManifest {
        plan: plan.path.display().to_string(),
        planner: job.planner.to_string(),
        predictor: spec.predictor.to_string(),
        trial: job.trial,
        seed,
        config_hash: config.hash(),
        terminal_reason: record.terminal.map_or("none", TerminalReason::as_str).to_string(),
        steps: record.steps(),
        coverage_target: spec.coverage_target,
        path_at_target,
        final_coverage: last.map_or(0.0, |r| r.coverage),
        final_f1: last.map_or(0.0, |r| r.f1),
        error,
    };
    manifest.write(&manifest_path).map_err(io_err(&manifest_path))?;
    Ok(TrialOutcome {
        plan: plan.stem.clone(),
        planner: label,
        trial: job.trial,
        path_at_target,
        rows: record.rows,
    })
}

fn write_curves(out_dir: &Path, outcomes: &[TrialOutcome]) -> Result<(), BenchError> {
    let mut by_plan: BTreeMap<&str, BTreeMap<&str, Vec<&[StepRow]>>> = BTreeMap::new();
    for o in outcomes {
        by_plan
            .entry(&o.plan)
            .or_default()
            .entry(&o.planner)
            .or_default()
            .push(&o.rows);
    }
    for (plan, planners) in by_plan {
        let curves: Vec<CoverageCurve> = planners
            .iter()
            .map(|(name, traces)| coverage_curve(name, traces, CURVE_STEP_M))
            .collect();
        let dir = out_dir.join(plan);
        let csv = dir.join("curves.csv");
        fs::write(&csv, curves_csv(&curves)).map_err(io_err(&csv))?;
        let svg = dir.join("curves.svg");
        fs::write(&svg, curves_svg(plan, &curves)).map_err(io_err(&svg))?;
    }
    Ok(())
}

/// Run every trial of `spec`, write traces, manifests, summary and curves,
/// and return the summary. Episode failures become failed trials.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchSummary, BenchError> {
    if spec.plans.is_empty() || spec.planners.is_empty() || spec.trials == 0 {
        return Err(BenchError::EmptySpec);
    }
    fs::create_dir_all(&spec.out_dir).map_err(io_err(&spec.out_dir))?;
    let mut plans = Vec::new();
    for path in &spec.plans {
        let plan = Arc::new(load_plan(path).map_err(|source| BenchError::Plan {
            path: path.clone(),
            source,
        })?);
        let start = match spec.start {
            Some(p) => p,
            None => {
                let cfg = EpisodeConfig {
                    rng_seed: spec.base_seed,
                    start: None,
                    ..spec.episode.clone()
                };
                Episode::first_start(plan.clone(), &cfg).map_err(|e| BenchError::Start {
                    path: path.clone(),
                    reason: e.to_string(),
                })?
            }
        };
        plans.push(LoadedPlan {
            stem: plan_stem(path),
            path: path.clone(),
            plan,
            start,
        });
    }
    let jobs: Vec<Job> = (0..plans.len())
        .flat_map(|plan_idx| {
            spec.planners.iter().flat_map(move |planner| {
                (0..spec.trials).map(move |trial| Job {
                    plan_idx,
                    planner: planner.clone(),
                    trial,
                })
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism.max(1))
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    let outcomes: Vec<TrialOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_job(spec, &plans[job.plan_idx], job))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let summary = summarize_outcomes(&outcomes);
    summary.write(&spec.out_dir)?;
    write_curves(&spec.out_dir, &outcomes)?;
    Ok(summary)
}

/// A trace that could not be used by [`summarize`].
#[derive(Clone, Debug, PartialEq)]
pub struct TraceProblem {
    pub path: PathBuf,
    pub reason: String,
}

fn load_trial(manifest_path: &Path) -> Result<TrialOutcome, String> {
    let manifest = RunManifest::read(manifest_path)?;
    let csv_path = manifest_path.with_extension("csv");
    let rows = EpisodeRecord::read_csv(&csv_path).map_err(|e| format!("{}: {e}", csv_path.display()))?;
    let planner_dir = manifest_path.parent().ok_or("manifest has no parent")?;
    let plan_dir = planner_dir.parent().ok_or("manifest is not nested")?;
    let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let failed = manifest.error.is_some();
    let rec = EpisodeRecord {
        rows,
        terminal: None,
    };
    Ok(TrialOutcome {
        plan: name(plan_dir),
        planner: name(planner_dir),
        trial: manifest.trial,
        path_at_target: if failed {
            None
        } else {
            rec.path_at_coverage(manifest.coverage_target)
        },
        rows: rec.rows,
    })
}

/// Rebuild the summary from the traces under `runs_dir`. Unreadable traces
/// are skipped and reported.
pub fn summarize(runs_dir: &Path) -> Result<(BenchSummary, Vec<TraceProblem>), BenchError> {
    let mut manifests = Vec::new();
    let read = |p: &Path| fs::read_dir(p).map_err(io_err(p));
    for plan in read(runs_dir)? {
        let plan = plan.map_err(io_err(runs_dir))?.path();
        if !plan.is_dir() {
            continue;
        }
        for planner in read(&plan)? {
            let planner = planner.map_err(io_err(&plan))?.path();
            if !planner.is_dir() {
                continue;
            }
            for f in read(&planner)? {
                let f = f.map_err(io_err(&planner))?.path();
                if f.extension().is_some_and(|e| e == "manifest") {
                    manifests.push(f);
                }
            }
        }
    }
    if manifests.is_empty() {
        return Err(BenchError::NoRuns(runs_dir.to_path_buf()));
    }
    manifests.sort();
    let mut outcomes = Vec::new();
    let mut problems = Vec::new();
    for m in manifests {
        match load_trial(&m) {
            Ok(o) => outcomes.push(o),
            Err(reason) => problems.push(TraceProblem { path: m, reason }),
        }
    }
    Ok((summarize_outcomes(&outcomes), problems))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(path_m: f64, coverage: f64) -> StepRow {
        StepRow {
            step: 0,
            x: 0.0,
            y: 0.0,
            yaw: 0.0,
            action: 0,
            reward: 0.0,
            collision: 0,
            coverage,
            f1: 0.0,
            path_m,
            move_m: 0.0,
        }
    }

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[7.0]), Some((7.0, 0.0)));
        assert_eq!(mean_std(&[]), None);
    }

    #[test]
    fn coverage_curve_is_a_step_function() {
        let rows = vec![row(0.0, 0.1), row(0.17, 0.2), row(0.17, 0.25), row(0.6, 0.5)];
        // per-step scan oracle
        for k in 0..100 {
            let p = k as f64 * 0.01;
            let want = rows.iter().rfind(|r| r.path_m <= p).map_or(0.0, |r| r.coverage);
            assert_eq!(coverage_at(&rows, p), want, "p = {p}");
        }
    }

    #[test]
    fn failures_are_counted_separately() {
        let mk = |trial, p| TrialOutcome {
            plan: "a".into(),
            planner: "frontier".into(),
            trial,
            path_at_target: p,
            rows: vec![],
        };
        let s = summarize_outcomes(&[mk(0, Some(3.0)), mk(1, None), mk(2, Some(5.0))]);
        let r = &s.rows[0];
        assert_eq!((r.trials, r.successes, r.failures), (3, 2, 1));
        assert_eq!((r.min_m, r.max_m, r.avg_m), (Some(3.0), Some(5.0), Some(4.0)));
        assert!(r.min_m <= r.avg_m && r.avg_m <= r.max_m);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(summarize(dir.path()), Err(BenchError::NoRuns(_))));
    }

    #[test]
    fn svg_has_one_band_per_planner() {
        let rows = vec![row(0.0, 0.1), row(1.0, 0.9)];
        let c = coverage_curve("frontier", &[&rows, &rows], 0.5);
        assert_eq!(c.mean, vec![0.1, 0.1, 0.9]);
        let svg = curves_svg("p", &[c.clone(), CoverageCurve { planner: "x".into(), ..c }]);
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert!(svg.starts_with("<svg"));
    }
}
