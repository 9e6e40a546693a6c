//! The exploration environment: reset, step, observation and reward, plus
//! per-step trace recording and its CSV / manifest persistence.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{apply_action, check_collision, normalize_angle, ActionId, MotionTable, Pose};
use crate::floorplan::{FloorPlan, PlanCell};
use crate::grid::Grid2D;
use crate::metrics::{coverage, f1_score, MetricsError, PredictionScore};
use crate::occupancy::{
    ego_transform, inflate, world_from_ego, EgoTransformSpec, HierarchicalMap, LogOddsConfig, MapError, EGO_SIZE,
};
use crate::predictor::{dynamic_threshold, Predictor, PredictorError, ThresholdConfig};
use crate::rng::{mix_seed, seeded_rng};
use crate::sensor::{sense, SensorConfig, SensorError};

/// Fine-map cells per coarse-map cell along each axis.
pub const HIGH_FACTOR: usize = 4;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("episode is finished; call reset first")]
    Finished,
    #[error("episode has not been reset")]
    NotStarted,
    #[error("no collision-free start cell in the plan")]
    NoStart,
    #[error("start pose ({x:.3}, {y:.3}) collides with the plan")]
    BadStart { x: f64, y: f64 },
    #[error("invalid episode configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Which map decides coverage: the observed map, or the thresholded
/// prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoverageSource {
    #[default]
    Observed,
    Predicted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub collision_penalty_l: f64,
    pub reward_scale_omega: f64,
    pub coverage_target: f64,
    pub max_steps: u64,
    pub robot_radius_m: f64,
    pub rng_seed: u64,
    pub coverage_source: CoverageSource,
    pub ego_size: usize,
    /// Fixed start instead of a sampled one.
    pub start: Option<Pose>,
    pub sensor: SensorConfig,
    pub thresholds: ThresholdConfig,
    pub log_odds: LogOddsConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            collision_penalty_l: 10.0,
            reward_scale_omega: 100.0,
            coverage_target: 0.95,
            max_steps: 2000,
            robot_radius_m: 0.3,
            rng_seed: 0,
            coverage_source: CoverageSource::Observed,
            ego_size: EGO_SIZE,
            start: None,
            sensor: SensorConfig::default(),
            thresholds: ThresholdConfig::default(),
            log_odds: LogOddsConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EpisodeError> {
        if self.collision_penalty_l <= 0.0 || self.reward_scale_omega <= 0.0 {
            return Err(EpisodeError::Config("l and omega must be positive".into()));
        }
        if !(self.coverage_target > 0.0 && self.coverage_target <= 1.0) {
            return Err(EpisodeError::Config(format!(
                "coverage target {} outside (0, 1]",
                self.coverage_target
            )));
        }
        if self.ego_size.is_multiple_of(2) {
            return Err(EpisodeError::Config("ego size must be odd".into()));
        }
        if self.robot_radius_m < 0.0 {
            return Err(EpisodeError::Config("negative robot radius".into()));
        }
        self.sensor.validate()?;
        self.thresholds.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// What a policy sees: both grids are inflated, centred on the robot and
/// turned so its heading runs along +x.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub s_high_ego: Grid2D,
    pub s_thres_ego: Grid2D,
    pub a_last: ActionId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    CoverageReached,
    Collision,
    MaxSteps,
    /// The policy had nothing left to explore before the target was met.
    PlannerComplete,
    /// The episode aborted on an error.
    Error,
}

impl TerminalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::CoverageReached => "coverage_reached",
            Self::Collision => "collision",
            Self::MaxSteps => "max_steps",
            Self::PlannerComplete => "planner_complete",
            Self::Error => "error",
        }
    }
}

/// One trace row. Step 0 is the reset state, with action `-1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: u64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub action: i8,
    pub reward: f64,
    pub collision: u8,
    pub coverage: f64,
    pub f1: f64,
    pub path_m: f64,
    pub move_m: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeRecord {
    pub rows: Vec<StepRow>,
    pub terminal: Option<TerminalReason>,
}

impl EpisodeRecord {
    /// Path length at the first row whose coverage meets `target`.
    pub fn path_at_coverage(&self, target: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.coverage >= target).map(|r| r.path_m)
    }

    pub fn steps(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.step)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<StepRow>, csv::Error> {
        csv::Reader::from_path(path)?.deserialize().collect()
    }
}

/// Key-value description of one trial, stored next to its CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub plan: String,
    pub planner: String,
    pub predictor: String,
    pub trial: u64,
    pub seed: u64,
    pub config_hash: String,
    pub terminal_reason: String,
    pub steps: u64,
    pub coverage_target: f64,
    pub path_at_target: Option<f64>,
    pub final_coverage: f64,
    pub final_f1: f64,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = toml::to_string(self).map_err(std::io::Error::other)?;
        fs::write(path, text)
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
        toml::from_str(&text).map_err(|e| e.to_string())
    }
}

/// Result of a single `step` call.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub collision: bool,
    pub coverage: f64,
    pub f1: f64,
}

pub struct Episode {
    plan: Arc<FloorPlan>,
    fine_plan: FloorPlan,
    truth: Grid2D,
    config: EpisodeConfig,
    motion: MotionTable,
    predictor: Box<dyn Predictor>,
    maps: HierarchicalMap,
    start_cells: Vec<usize>,
    reset_rng: ChaCha8Rng,
    reset_count: u64,
    started: bool,
    pose: Pose,
    last_action: ActionId,
    step: u64,
    path_m: f64,
    thres_world: Grid2D,
    score: PredictionScore,
    coverage: f64,
    record: EpisodeRecord,
}

impl Episode {
    pub fn new(plan: Arc<FloorPlan>, config: EpisodeConfig, predictor: Box<dyn Predictor>) -> Result<Self, EpisodeError> {
        config.validate()?;
        let truth = plan.to_grid();
        let res = plan.resolution();
        let start_cells = (0..plan.width() * plan.height())
            .filter(|&i| {
                if plan.cells()[i] != PlanCell::Free {
                    return false;
                }
                let (cx, cy) = truth.cell_center((i % plan.width()) as i64, (i / plan.width()) as i64);
                !check_collision(&Pose::new(cx, cy, 0.0), &truth, config.robot_radius_m)
            })
            .collect();
        let maps = HierarchicalMap::new(plan.width(), plan.height(), res, HIGH_FACTOR, config.log_odds.clone());
        let thres_world = Grid2D::new(plan.width(), plan.height(), res, [0.0, 0.0], Default::default());
        Ok(Self {
            fine_plan: plan.upsample(HIGH_FACTOR),
            truth,
            reset_rng: seeded_rng(config.rng_seed),
            motion: MotionTable::appendix(),
            maps,
            start_cells,
            reset_count: 0,
            started: false,
            pose: Pose::new(0.0, 0.0, 0.0),
            last_action: ActionId::HOVER,
            step: 0,
            path_m: 0.0,
            thres_world,
            score: PredictionScore::from_counts(0, 0, plan.interior_cell_count()),
            coverage: 0.0,
            record: EpisodeRecord::default(),
            predictor,
            config,
            plan,
        })
    }

    pub fn set_motion_table(&mut self, table: MotionTable) {
        self.motion = table;
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn plan(&self) -> &FloorPlan {
        &self.plan
    }

    pub fn motion_table(&self) -> &MotionTable {
        &self.motion
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn last_action(&self) -> ActionId {
        self.last_action
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn path_length(&self) -> f64 {
        self.path_m
    }

    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn score(&self) -> PredictionScore {
        self.score
    }

    pub fn is_done(&self) -> bool {
        self.record.terminal.is_some()
    }

    pub fn terminal_reason(&self) -> Option<TerminalReason> {
        self.record.terminal
    }

    pub fn maps(&self) -> &HierarchicalMap {
        &self.maps
    }

    /// Observed coarse map, trinary.
    pub fn observed_low(&self) -> &Grid2D {
        self.maps.low.classified()
    }

    /// Thresholded prediction in the world frame.
    pub fn thresholded(&self) -> &Grid2D {
        &self.thres_world
    }

    pub fn record(&self) -> &EpisodeRecord {
        &self.record
    }

    pub fn into_record(self) -> EpisodeRecord {
        self.record
    }

    /// Free plan cells a start may be drawn from.
    pub fn start_cells(&self) -> &[usize] {
        &self.start_cells
    }

    /// Start pose a fresh episode with `config` would use on its first reset.
    pub fn first_start(plan: Arc<FloorPlan>, config: &EpisodeConfig) -> Result<Pose, EpisodeError> {
        let mut probe = Episode::new(plan, config.clone(), Box::new(crate::predictor::IdentityPredictor))?;
        probe.sample_start()
    }

    /// Pose after `action` and whether it (or its hover successor) collides.
    pub fn preview(&self, action: ActionId) -> (Pose, bool) {
        let (p1, _) = apply_action(&self.pose, action, self.last_action, &self.motion);
        let (p2, _) = apply_action(&p1, ActionId::HOVER, action, &self.motion);
        let r = self.config.robot_radius_m;
        (p1, check_collision(&p1, &self.truth, r) || check_collision(&p2, &self.truth, r))
    }

    fn sample_start(&mut self) -> Result<Pose, EpisodeError> {
        if let Some(p) = self.config.start {
            if check_collision(&p, &self.truth, self.config.robot_radius_m) {
                return Err(EpisodeError::BadStart { x: p.x, y: p.y });
            }
            return Ok(Pose::new(p.x, p.y, p.yaw));
        }
        if self.start_cells.is_empty() {
            return Err(EpisodeError::NoStart);
        }
        let i = self.start_cells[self.reset_rng.gen_range(0..self.start_cells.len())];
        let w = self.plan.width();
        let (x, y) = self.truth.cell_center((i % w) as i64, (i / w) as i64);
        let yaw = normalize_angle(self.reset_rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        Ok(Pose::new(x, y, yaw))
    }

    fn sense_and_refresh(&mut self) -> Result<(), EpisodeError> {
        let sensor = SensorConfig {
            rng_seed: mix_seed(self.config.rng_seed, self.config.sensor.rng_seed),
            ..self.config.sensor.clone()
        };
        let key = (self.reset_count << 32) | self.step;
        let scan = sense(&self.fine_plan, &self.pose, &sensor, key)?;
        self.maps.integrate_scan(&self.pose, &scan)?;
        self.refresh_prediction()
    }

    fn refresh_prediction(&mut self) -> Result<(), EpisodeError> {
        let low = self.maps.low.classified();
        let spec = EgoTransformSpec {
            out_size: self.config.ego_size,
            ..EgoTransformSpec::shift_only(self.pose)
        };
        let ego = ego_transform(low, &spec);
        let prob = self.predictor.predict(&ego)?;
        if (prob.width(), prob.height()) != (ego.width(), ego.height()) {
            return Err(PredictorError::Shape {
                want_w: ego.width(),
                want_h: ego.height(),
                got_w: prob.width(),
                got_h: prob.height(),
            }
            .into());
        }
        let thres = dynamic_threshold(&prob, self.maps.low.known_count(), &self.config.thresholds);
        self.thres_world = world_from_ego(&thres, low.width(), low.height(), low.origin());
        self.score = f1_score(&self.thres_world, &self.plan)?;
        self.coverage = match self.config.coverage_source {
            CoverageSource::Observed => coverage(low, &self.plan)?,
            CoverageSource::Predicted => coverage(&self.thres_world, &self.plan)?,
        };
        Ok(())
    }

    fn push_row(&mut self, action: i8, reward: f64, collision: bool, move_m: f64) {
        self.record.rows.push(StepRow {
            step: self.step,
            x: self.pose.x,
            y: self.pose.y,
            yaw: self.pose.yaw,
            action,
            reward,
            collision: collision as u8,
            coverage: self.coverage,
            f1: self.score.f1,
            path_m: self.path_m,
            move_m,
        });
    }

    /// Start a new episode. The returned flag is true when the initial scan
    /// already meets the coverage target.
    pub fn reset_state(&mut self) -> Result<bool, EpisodeError> {
        self.pose = self.sample_start()?;
        self.maps.clear();
        self.step = 0;
        self.path_m = 0.0;
        self.last_action = ActionId::HOVER;
        self.record = EpisodeRecord::default();
        self.started = true;
        let result = self.sense_and_refresh();
        self.reset_count += 1;
        result?;
        self.push_row(-1, 0.0, false, 0.0);
        if self.coverage >= self.config.coverage_target {
            self.record.terminal = Some(TerminalReason::CoverageReached);
        }
        Ok(self.is_done())
    }

    pub fn reset(&mut self) -> Result<Observation, EpisodeError> {
        self.reset_state()?;
        Ok(self.observation())
    }

    /// Advance one action without building an observation.
    pub fn step_state(&mut self, action: ActionId) -> Result<StepOutcome, EpisodeError> {
        if !self.started {
            return Err(EpisodeError::NotStarted);
        }
        if self.is_done() {
            return Err(EpisodeError::Finished);
        }
        let (pose1, collided) = self.preview(action);
        let dist = self.motion.movement(action, self.last_action);
        self.step += 1;
        self.pose = pose1;
        self.path_m += dist;
        self.last_action = action;
        let reward = if collided {
            self.record.terminal = Some(TerminalReason::Collision);
            -1.0 - self.config.collision_penalty_l
        } else {
            let before = self.score.f1;
            self.sense_and_refresh()?;
            if self.coverage >= self.config.coverage_target {
                self.record.terminal = Some(TerminalReason::CoverageReached);
            } else if self.step >= self.config.max_steps {
                self.record.terminal = Some(TerminalReason::MaxSteps);
            }
            -1.0 + self.config.reward_scale_omega * (self.score.f1 - before)
        };
        self.push_row(action.value() as i8, reward, collided, dist);
        Ok(StepOutcome {
            reward,
            done: self.is_done(),
            collision: collided,
            coverage: self.coverage,
            f1: self.score.f1,
        })
    }

    pub fn step(&mut self, action: ActionId) -> Result<(Observation, StepOutcome), EpisodeError> {
        let out = self.step_state(action)?;
        Ok((self.observation(), out))
    }

    /// End the episode early (policy gave up, or an error upstream).
    pub fn finish(&mut self, reason: TerminalReason) {
        if self.record.terminal.is_none() {
            self.record.terminal = Some(reason);
        }
    }

    pub fn observation(&self) -> Observation {
        let r = self.config.robot_radius_m;
        let spec = EgoTransformSpec {
            out_size: self.config.ego_size,
            ..EgoTransformSpec::new(self.pose)
        };
        Observation {
            s_high_ego: ego_transform(&inflate(self.maps.high.classified(), r), &spec),
            s_thres_ego: ego_transform(&inflate(&self.thres_world, r), &spec),
            a_last: self.last_action,
        }
    }
}
