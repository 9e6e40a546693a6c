use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use explore_core::bench::{run_bench, summarize, BenchError, BenchSpec};
use explore_core::episode::EpisodeConfig;
use explore_core::planners::{observation_from_request, plan_greedy_pred, GreedyParams, PolicyKind};
use explore_core::predictor::{HeuristicPredictor, IdentityPredictor, Predictor, PredictorKind};
use explore_core::protocol::{serve, PolicyRequest, PolicyResponse, PredictRequest, PredictResponse, ProtocolError};
use explore_core::{generate_plan, save_plan, ActionId, CellState, FloorPlanConfig, Grid2D, Pose};

/// `stats` found nothing to summarize.
const EXIT_NO_RUNS: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "explore", version, about = "Indoor exploration simulator and benchmark harness")]
struct Cli {
    /// TOML file supplying defaults for any flag; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a set of floor plans.
    GenPlans(GenPlansArgs),
    /// Run repeated trials of one planner on one plan.
    Run(RunArgs),
    /// Run every planner on every plan in a directory.
    Bench(BenchArgs),
    /// Rebuild the summary from a run directory.
    Stats(StatsArgs),
    /// Answer map-prediction frames on stdin/stdout.
    ServePredictor(ServePredictorArgs),
    /// Answer policy frames on stdin/stdout.
    ServePolicy(ServePolicyArgs),
}

/// Flags that may also come from the config file: every field is optional
/// and the command line takes precedence.
trait Layered: Sized + for<'de> Deserialize<'de> {
    const SECTION: &'static str;
    fn or(self, fallback: Self) -> Self;
}

macro_rules! layered {
    ($ty:ident, $section:literal, $($field:ident),+) => {
        impl Layered for $ty {
            const SECTION: &'static str = $section;
            fn or(self, fallback: Self) -> Self {
                Self { $($field: self.$field.or(fallback.$field)),+ }
            }
        }
    };
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
struct GenPlansArgs {
    #[arg(long)]
    count: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Maximum plan width in metres.
    #[arg(long)]
    max_w: Option<f64>,
    /// Maximum plan height in metres.
    #[arg(long)]
    max_h: Option<f64>,
    /// Cell size in metres.
    #[arg(long)]
    res: Option<f64>,
}
layered!(GenPlansArgs, "gen-plans", count, seed, out, max_w, max_h, res);

/// Episode settings shared by `run` and `bench`.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
struct EpisodeFlags {
    /// Map predictor: identity, oracle, heuristic or external=<endpoint>.
    #[arg(long)]
    predictor: Option<String>,
    #[arg(long)]
    trials: Option<u64>,
    /// Target coverage fraction.
    #[arg(long)]
    coverage: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed start pose as "x,y,yaw" (metres, radians).
    #[arg(long, allow_hyphen_values = true)]
    start: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Probability of a spurious hit next to each true hit.
    #[arg(long)]
    noise: Option<f64>,
    /// Per-request timeout for external processes, in milliseconds.
    #[arg(long)]
    timeout_ms: Option<u64>,
}
impl EpisodeFlags {
    fn or(self, f: Self) -> Self {
        Self {
            predictor: self.predictor.or(f.predictor),
            trials: self.trials.or(f.trials),
            coverage: self.coverage.or(f.coverage),
            seed: self.seed.or(f.seed),
            start: self.start.or(f.start),
            out: self.out.or(f.out),
            jobs: self.jobs.or(f.jobs),
            max_steps: self.max_steps.or(f.max_steps),
            noise: self.noise.or(f.noise),
            timeout_ms: self.timeout_ms.or(f.timeout_ms),
        }
    }
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
struct RunArgs {
    #[arg(long)]
    plan: Option<PathBuf>,
    /// frontier, frontier_pred, greedy_pred or external=<endpoint>.
    #[arg(long)]
    planner: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    episode: EpisodeFlags,
}
impl Layered for RunArgs {
    const SECTION: &'static str = "run";
    fn or(self, f: Self) -> Self {
        Self {
            plan: self.plan.or(f.plan),
            planner: self.planner.or(f.planner),
            episode: self.episode.or(f.episode),
        }
    }
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
struct BenchArgs {
    /// Directory of plan rasters.
    #[arg(long)]
    plans: Option<PathBuf>,
    /// Comma-separated planner list.
    #[arg(long)]
    planners: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    episode: EpisodeFlags,
}
impl Layered for BenchArgs {
    const SECTION: &'static str = "bench";
    fn or(self, f: Self) -> Self {
        Self {
            plans: self.plans.or(f.plans),
            planners: self.planners.or(f.planners),
            episode: self.episode.or(f.episode),
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Format {
    Table,
    Csv,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
struct StatsArgs {
    #[arg(long)]
    runs: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}
layered!(StatsArgs, "stats", runs, format);

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PredictorModel {
    Identity,
    Heuristic,
}

#[derive(Args, Debug)]
struct ServePredictorArgs {
    #[arg(long, value_enum, default_value = "identity")]
    model: PredictorModel,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyModel {
    Greedy,
    Hover,
}

#[derive(Args, Debug)]
struct ServePolicyArgs {
    #[arg(long, value_enum, default_value = "greedy")]
    model: PolicyModel,
}

/// Contents of the `--config` file. Top-level keys apply to every command;
/// a table named after the command overrides them. `[episode]` and
/// `[floorplan]` tables replace the simulation defaults.
#[derive(Default)]
struct ConfigFile {
    table: toml::Table,
    episode: EpisodeConfig,
    floorplan: FloorPlanConfig,
}

const TABLES: [&str; 6] = ["episode", "floorplan", "gen-plans", "run", "bench", "stats"];

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let table: toml::Table = text.parse().with_context(|| format!("parsing config {}", path.display()))?;
        let section = |name: &str| -> Result<Option<toml::Value>> {
            match table.get(name) {
                None => Ok(None),
                Some(v @ toml::Value::Table(_)) => Ok(Some(v.clone())),
                Some(_) => bail!("config key `{name}` must be a table"),
            }
        };
        let episode = match section("episode")? {
            Some(v) => v.try_into().context("config [episode]")?,
            None => EpisodeConfig::default(),
        };
        let floorplan = match section("floorplan")? {
            Some(v) => v.try_into().context("config [floorplan]")?,
            None => FloorPlanConfig::default(),
        };
        Ok(Self {
            table,
            episode,
            floorplan,
        })
    }

    fn flags<T: Layered>(&self) -> Result<T> {
        let mut merged: toml::Table = self
            .table
            .iter()
            .filter(|(k, _)| !TABLES.contains(&k.as_str()))
            .map(|(k, v)| (k.replace('_', "-"), v.clone()))
            .collect();
        if let Some(toml::Value::Table(t)) = self.table.get(T::SECTION) {
            merged.extend(t.iter().map(|(k, v)| (k.replace('_', "-"), v.clone())));
        }
        toml::Value::Table(merged)
            .try_into()
            .with_context(|| format!("config flags for `{}`", T::SECTION))
    }
}

fn parse_pose(s: &str) -> Result<Pose> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("start pose `{s}`"))?;
    match parts[..] {
        [x, y, yaw] => Ok(Pose::new(x, y, yaw)),
        _ => bail!("start pose `{s}` must be x,y,yaw"),
    }
}

fn gen_plans(args: GenPlansArgs, cfg: &ConfigFile) -> Result<()> {
    let count = args.count.unwrap_or(20);
    let seed = args.seed.unwrap_or(0);
    let out = args.out.context("--out is required")?;
    let mut template = cfg.floorplan.clone();
    if let Some(w) = args.max_w {
        template.max_width_m = w;
    }
    if let Some(h) = args.max_h {
        template.max_height_m = h;
    }
    if let Some(r) = args.res {
        template.resolution_m = r;
    }
    template.validate()?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let digits = count.saturating_sub(1).to_string().len().max(4);
    for i in 0..count {
        let config = FloorPlanConfig {
            rng_seed: seed + i,
            ..template.clone()
        };
        let plan = generate_plan(&config).with_context(|| format!("plan with seed {}", seed + i))?;
        let path = out.join(format!("plan_{i:0digits$}.pgm"));
        save_plan(&plan, &path).with_context(|| format!("writing {}", path.display()))?;
        log::info!("{}: {}x{} cells", path.display(), plan.width(), plan.height());
    }
    println!("wrote {count} plans to {}", out.display());
    Ok(())
}

fn bench_spec(plans: Vec<PathBuf>, planners: Vec<PolicyKind>, flags: EpisodeFlags, cfg: &ConfigFile) -> Result<BenchSpec> {
    let out = flags.out.context("--out is required")?;
    let mut spec = BenchSpec::new(plans, planners, out);
    spec.episode = cfg.episode.clone();
    if let Some(p) = flags.predictor {
        spec.predictor = p.parse::<PredictorKind>()?;
    }
    spec.trials = flags.trials.unwrap_or(spec.trials);
    spec.coverage_target = flags.coverage.unwrap_or(spec.episode.coverage_target);
    spec.base_seed = flags.seed.unwrap_or(spec.episode.rng_seed);
    spec.parallelism = flags.jobs.unwrap_or(1);
    spec.start = match flags.start {
        Some(s) => Some(parse_pose(&s)?),
        None => spec.episode.start,
    };
    if let Some(n) = flags.max_steps {
        spec.episode.max_steps = n;
    }
    if let Some(p) = flags.noise {
        spec.episode.sensor.adjacent_occupied_prob = p;
    }
    if let Some(ms) = flags.timeout_ms {
        spec.timeout = Duration::from_millis(ms);
    }
    if spec.trials == 0 {
        bail!("--trials must be at least 1");
    }
    if !(spec.coverage_target > 0.0 && spec.coverage_target <= 1.0) {
        bail!("--coverage must be in (0, 1]");
    }
    Ok(spec)
}

fn run(args: RunArgs, cfg: &ConfigFile) -> Result<()> {
    let plan = args.plan.context("--plan is required")?;
    let planner: PolicyKind = args.planner.as_deref().unwrap_or("frontier").parse()?;
    let spec = bench_spec(vec![plan], vec![planner], args.episode, cfg)?;
    let summary = run_bench(&spec)?;
    print!("{}", summary.to_table());
    Ok(())
}

fn plan_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut plans: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
        .collect();
    plans.sort();
    if plans.is_empty() {
        bail!("no .pgm plans in {}", dir.display());
    }
    Ok(plans)
}

fn bench(args: BenchArgs, cfg: &ConfigFile) -> Result<()> {
    let plans = plan_files(&args.plans.context("--plans is required")?)?;
    let planners = args
        .planners
        .as_deref()
        .unwrap_or("frontier")
        .split(',')
        .map(|s| s.trim().parse::<PolicyKind>())
        .collect::<Result<Vec<_>, _>>()?;
    let spec = bench_spec(plans, planners, args.episode, cfg)?;
    let summary = run_bench(&spec)?;
    print!("{}", summary.to_table());
    Ok(())
}

fn stats(args: StatsArgs) -> Result<ExitCode> {
    let runs = args.runs.context("--runs is required")?;
    let (summary, problems) = match summarize(&runs) {
        Ok(r) => r,
        Err(BenchError::NoRuns(dir)) => {
            eprintln!("no runs found under {}", dir.display());
            return Ok(ExitCode::from(EXIT_NO_RUNS));
        }
        Err(e) => return Err(e.into()),
    };
    for p in &problems {
        eprintln!("skipped {}: {}", p.path.display(), p.reason);
    }
    match args.format.unwrap_or(Format::Table) {
        Format::Table => print!("{}", summary.to_table()),
        Format::Csv => print!("{}", summary.to_csv()),
    }
    Ok(ExitCode::SUCCESS)
}

fn grid_from_codes(width: usize, height: usize, codes: &[i8], resolution: f64) -> Result<Grid2D, ProtocolError> {
    let cells = codes
        .iter()
        .enumerate()
        .map(|(index, &v)| CellState::from_code(v).ok_or(ProtocolError::BadCell { index, value: v }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Grid2D::from_cells(width, height, resolution, [0.0, 0.0], cells))
}

fn serve_predictor(args: ServePredictorArgs) -> Result<()> {
    let mut model: Box<dyn Predictor> = match args.model {
        PredictorModel::Identity => Box::new(IdentityPredictor),
        PredictorModel::Heuristic => Box::new(HeuristicPredictor),
    };
    serve(io::stdin().lock(), io::stdout().lock(), |frame| {
        let req = PredictRequest::from_frame(&frame)?;
        let grid = grid_from_codes(req.width, req.height, &req.cells, 0.2)?;
        let prob = model
            .predict(&grid)
            .map_err(|e| ProtocolError::Io(io::Error::other(e.to_string())))?;
        PredictResponse {
            width: req.width,
            height: req.height,
            probs: prob.values().to_vec(),
        }
        .to_frame()
    })?;
    Ok(())
}

fn serve_policy(args: ServePolicyArgs) -> Result<()> {
    let params = GreedyParams::default();
    serve(io::stdin().lock(), io::stdout().lock(), |frame| {
        let req = PolicyRequest::from_frame(&frame)?;
        let action = match args.model {
            PolicyModel::Hover => ActionId::HOVER,
            PolicyModel::Greedy => match observation_from_request(&req, &params) {
                Some(obs) => plan_greedy_pred(&obs, &params),
                None => return Err(ProtocolError::BadAction(req.prev_action)),
            },
        };
        PolicyResponse { action: action.value() }.to_frame()
    })?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = ConfigFile::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::GenPlans(a) => gen_plans(a.or(cfg.flags()?), &cfg).map(|_| ExitCode::SUCCESS),
        Command::Run(a) => run(a.or(cfg.flags()?), &cfg).map(|_| ExitCode::SUCCESS),
        Command::Bench(a) => bench(a.or(cfg.flags()?), &cfg).map(|_| ExitCode::SUCCESS),
        Command::Stats(a) => stats(a.or(cfg.flags()?)),
        Command::ServePredictor(a) => serve_predictor(a).map(|_| ExitCode::SUCCESS),
        Command::ServePolicy(a) => serve_policy(a).map(|_| ExitCode::SUCCESS),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
