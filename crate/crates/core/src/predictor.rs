//! Map completion: probability maps, the observation-dependent threshold
//! that turns them into trinary maps, and the built-in predictors.

use std::collections::VecDeque;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::floorplan::{FloorPlan, PlanCell};
use crate::grid::{CellState, Grid2D};
use crate::protocol::{Endpoint, FrameChannel, PredictRequest, PredictResponse, ProtocolError};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("external predictor: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("predictor returned {got_w}x{got_h}, expected {want_w}x{want_h}")]
    Shape {
        want_w: usize,
        want_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("invalid threshold configuration: {0}")]
    Config(String),
    #[error("unknown predictor {0:?}")]
    UnknownKind(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub t_o: f64,
    pub t_f_max: f64,
    pub ramp_gain: f64,
    pub ramp_power: f64,
    pub max_plan_cells: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            t_o: 0.94,
            t_f_max: 0.04,
            ramp_gain: 10.0,
            ramp_power: 4.0,
            max_plan_cells: 5775,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        if !(0.0 < self.t_f_max && self.t_f_max < self.t_o && self.t_o < 1.0) {
            return Err(PredictorError::Config(format!(
                "need 0 < t_f_max ({}) < t_o ({}) < 1",
                self.t_f_max, self.t_o
            )));
        }
        if self.max_plan_cells == 0 || self.ramp_gain <= 0.0 || self.ramp_power <= 0.0 {
            return Err(PredictorError::Config("ramp parameters must be positive".into()));
        }
        Ok(())
    }

    /// Free cut-off for a given number of observed cells.
    pub fn free_threshold(&self, observed_cells: usize) -> f64 {
        let ratio = (observed_cells as f64 / self.max_plan_cells as f64).min(1.0);
        self.t_f_max * (self.ramp_gain * ratio.powf(self.ramp_power)).min(1.0)
    }
}

/// Occupancy probabilities on a raster with the same geometry as its input.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    values: Vec<f32>,
}

impl ProbabilityMap {
    /// Panics if a value is outside `[0, 1]` or the length is wrong.
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2], values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width * height);
        assert!(values.iter().all(|p| (0.0..=1.0).contains(p)), "probabilities must lie in [0, 1]");
        Self {
            width,
            height,
            resolution,
            origin,
            values,
        }
    }

    pub fn like(grid: &Grid2D, values: Vec<f32>) -> Self {
        Self::new(grid.width(), grid.height(), grid.resolution(), grid.origin(), values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Trinary map: free below the ramped free cut-off, occupied above `t_o`.
pub fn dynamic_threshold(prob: &ProbabilityMap, observed_cells: usize, config: &ThresholdConfig) -> Grid2D {
    let t_f = config.free_threshold(observed_cells);
    let cells = prob
        .values
        .iter()
        .map(|&p| {
            let p = p as f64;
            if p < t_f {
                CellState::Free
            } else if p > config.t_o {
                CellState::Occupied
            } else {
                CellState::Unknown
            }
        })
        .collect();
    Grid2D::from_cells(prob.width, prob.height, prob.resolution, prob.origin, cells)
}

pub trait Predictor: Send {
    fn name(&self) -> &'static str;

    /// Complete an ego-centric trinary low-resolution map.
    fn predict(&mut self, ego_low: &Grid2D) -> Result<ProbabilityMap, PredictorError>;
}

/// Echoes the observation: free 0, occupied 1, unknown 0.5.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPredictor;

impl Predictor for IdentityPredictor {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn predict(&mut self, ego_low: &Grid2D) -> Result<ProbabilityMap, PredictorError> {
        let values = ego_low
            .cells()
            .iter()
            .map(|c| match c {
                CellState::Free => 0.0,
                CellState::Occupied => 1.0,
                _ => 0.5,
            })
            .collect();
        Ok(ProbabilityMap::like(ego_low, values))
    }
}

/// Renders the ground-truth plan into the requested frame.
#[derive(Clone, Debug)]
pub struct OraclePredictor {
    plan: Arc<FloorPlan>,
}

impl OraclePredictor {
    pub fn new(plan: Arc<FloorPlan>) -> Self {
        Self { plan }
    }
}

impl Predictor for OraclePredictor {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn predict(&mut self, ego_low: &Grid2D) -> Result<ProbabilityMap, PredictorError> {
        let res = self.plan.resolution();
        let mut values = Vec::with_capacity(ego_low.len());
        for y in 0..ego_low.height() as i64 {
            for x in 0..ego_low.width() as i64 {
                let (wx, wy) = ego_low.cell_center(x, y);
                let (px, py) = ((wx / res).floor() as i64, (wy / res).floor() as i64);
                values.push(match self.plan.get_signed(px, py) {
                    Some(PlanCell::Free) => 0.0,
                    Some(PlanCell::Occupied) => 1.0,
                    _ => 0.5,
                });
            }
        }
        Ok(ProbabilityMap::like(ego_low, values))
    }
}

pub const HEURISTIC_FREE: f32 = 0.02;
pub const HEURISTIC_UNKNOWN: f32 = 0.5;
pub const HEURISTIC_OCCUPIED: f32 = 0.97;

/// Morphological guesser. Observed cells pass through as 0 or 1. Unknown
/// cells that a 3x3 closing of the occupied set fills become 0.97; unknown
/// cells enclosed on all four sides by known cells inside the bounding box
/// of a free region become 0.02; the rest stay at 0.5.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeuristicPredictor;

fn closing_3x3(occ: &[bool], w: usize, h: usize) -> Vec<bool> {
    let sweep = |src: &[bool], want: bool| -> Vec<bool> {
        let mut out = vec![!want; w * h];
        for y in 0..h {
            for x in 0..w {
                'n: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        // outside the raster counts as not occupied
                        let v = nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 && src[ny as usize * w + nx as usize];
                        if v == want {
                            out[y * w + x] = want;
                            break 'n;
                        }
                    }
                }
            }
        }
        out
    };
    let dilated = sweep(occ, true);
    sweep(&dilated, false)
}

fn free_components(cells: &[CellState], w: usize, h: usize) -> Vec<(usize, usize, usize, usize, usize)> {
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || cells[start] != CellState::Free {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1, mut n) = (usize::MAX, usize::MAX, 0, 0, 0);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            n += 1;
            let mut push = |j: usize| {
                if !seen[j] && cells[j] == CellState::Free {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
            if y > 0 {
                push(i - w);
            }
            if y + 1 < h {
                push(i + w);
            }
        }
        out.push((x0, y0, x1, y1, n));
    }
    out
}

/// Unknown cells inside `[x0, x1] × [y0, y1]` that see a known cell in each
/// of the four axis directions without leaving the box.
fn enclosed_unknown(cells: &[CellState], w: usize, rect: (usize, usize, usize, usize), out: &mut [bool]) {
    let (x0, y0, x1, y1) = rect;
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut hits = vec![0u8; bw * bh];
    let known = |x: usize, y: usize| cells[y * w + x].is_known();
    for y in y0..=y1 {
        let mut seen = false;
        for x in x0..=x1 {
            if known(x, y) {
                seen = true;
            } else if seen {
                hits[(y - y0) * bw + (x - x0)] += 1;
            }
        }
        seen = false;
        for x in (x0..=x1).rev() {
            if known(x, y) {
                seen = true;
            } else if seen {
                hits[(y - y0) * bw + (x - x0)] += 1;
            }
        }
    }
    for x in x0..=x1 {
        let mut seen = false;
        for y in y0..=y1 {
            if known(x, y) {
                seen = true;
            } else if seen {
                hits[(y - y0) * bw + (x - x0)] += 1;
            }
        }
        seen = false;
        for y in (y0..=y1).rev() {
            if known(x, y) {
                seen = true;
            } else if seen {
                hits[(y - y0) * bw + (x - x0)] += 1;
            }
        }
    }
    for (k, &n) in hits.iter().enumerate() {
        if n == 4 {
            out[(y0 + k / bw) * w + x0 + k % bw] = true;
        }
    }
}

impl Predictor for HeuristicPredictor {
    fn name(&self) -> &'static str {
        "heuristic"
    }

    fn predict(&mut self, ego_low: &Grid2D) -> Result<ProbabilityMap, PredictorError> {
        let (w, h) = (ego_low.width(), ego_low.height());
        let cells = ego_low.cells();
        let occ: Vec<bool> = cells.iter().map(|&c| c == CellState::Occupied).collect();
        let closed = closing_3x3(&occ, w, h);
        let mut enclosed = vec![false; w * h];
        for (x0, y0, x1, y1, n) in free_components(cells, w, h) {
            if n >= 4 {
                enclosed_unknown(cells, w, (x0, y0, x1, y1), &mut enclosed);
            }
        }
        let values = (0..w * h)
            .map(|i| match cells[i] {
                CellState::Free => 0.0,
                CellState::Occupied => 1.0,
                _ if closed[i] => HEURISTIC_OCCUPIED,
                _ if enclosed[i] => HEURISTIC_FREE,
                _ => HEURISTIC_UNKNOWN,
            })
            .collect();
        Ok(ProbabilityMap::like(ego_low, values))
    }
}

/// Forwards each request to an external process over the MPRQ/MPRS framing.
pub struct ExternalPredictor {
    channel: FrameChannel,
}

impl ExternalPredictor {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, PredictorError> {
        Ok(Self {
            channel: FrameChannel::open(endpoint, timeout)?,
        })
    }
}

impl Predictor for ExternalPredictor {
    fn name(&self) -> &'static str {
        "external"
    }

    fn predict(&mut self, ego_low: &Grid2D) -> Result<ProbabilityMap, PredictorError> {
        let request = PredictRequest {
            width: ego_low.width(),
            height: ego_low.height(),
            cells: ego_low
                .cells()
                .iter()
                .map(|c| match c {
                    CellState::NonFlight => 0,
                    c => c.code(),
                })
                .collect(),
        };
        let reply = self.channel.request(&request.to_frame()?)?;
        let resp = PredictResponse::from_frame(&reply)?;
        if (resp.width, resp.height) != (request.width, request.height) {
            return Err(PredictorError::Shape {
                want_w: request.width,
                want_h: request.height,
                got_w: resp.width,
                got_h: resp.height,
            });
        }
        Ok(ProbabilityMap::like(ego_low, resp.probs))
    }
}

/// Predictor selection as named on the command line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PredictorKind {
    Identity,
    Oracle,
    Heuristic,
    External(Endpoint),
}

impl PredictorKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Oracle => "oracle",
            Self::Heuristic => "heuristic",
            Self::External(_) => "external",
        }
    }

    pub fn build(&self, plan: &Arc<FloorPlan>, timeout: Duration) -> Result<Box<dyn Predictor>, PredictorError> {
        Ok(match self {
            Self::Identity => Box::new(IdentityPredictor),
            Self::Oracle => Box::new(OraclePredictor::new(plan.clone())),
            Self::Heuristic => Box::new(HeuristicPredictor),
            Self::External(ep) => Box::new(ExternalPredictor::connect(ep, timeout)?),
        })
    }
}

impl FromStr for PredictorKind {
    type Err = PredictorError;

    /// `identity`, `oracle`, `heuristic`, or `external=<endpoint>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Self::Identity),
            "oracle" => Ok(Self::Oracle),
            "heuristic" => Ok(Self::Heuristic),
            _ => match s.strip_prefix("external=") {
                Some(ep) => ep
                    .parse()
                    .map(Self::External)
                    .map_err(|_| PredictorError::UnknownKind(s.to_string())),
                None => Err(PredictorError::UnknownKind(s.to_string())),
            },
        }
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::External(Endpoint::Tcp(a)) => write!(f, "external=tcp:{a}"),
            Self::External(Endpoint::Command(argv)) => write!(f, "external=cmd:{}", argv.join(" ")),
            k => f.write_str(k.label()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> Grid2D {
        let h = rows.len();
        let w = rows[0].len();
        let mut g = Grid2D::new(w, h, 0.2, [0.0, 0.0], CellState::Unknown);
        for (r, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                let s = match ch {
                    '.' => CellState::Free,
                    '#' => CellState::Occupied,
                    _ => CellState::Unknown,
                };
                g.set(x, h - 1 - r, s);
            }
        }
        g
    }

    #[test]
    fn ramp_values() {
        let c = ThresholdConfig::default();
        let t = c.free_threshold(1155); // 0.2 * 5775
        assert!((t - 6.4e-4).abs() <= 6.4e-4 * 1e-12);
        assert_eq!(c.free_threshold(0), 0.0);
        assert_eq!(c.free_threshold(5775), 0.04);
        assert_eq!(c.free_threshold(99_999), 0.04);
    }

    #[test]
    fn zero_observation_frees_nothing() {
        let g = grid(&["..#?", "?.#."]);
        let p = IdentityPredictor.predict(&g).unwrap();
        let t = dynamic_threshold(&p, 0, &ThresholdConfig::default());
        assert_eq!(t.count(CellState::Free), 0);
        assert_eq!(t.count(CellState::Occupied), 2);
    }

    #[test]
    fn identity_round_trip_once_ramp_saturates() {
        let g = grid(&["..#?", "?.#.", "####"]);
        let p = IdentityPredictor.predict(&g).unwrap();
        let t = dynamic_threshold(&p, 3248, &ThresholdConfig::default()); // fraction 0.5624
        assert_eq!(t, g);
    }

    #[test]
    fn invalid_thresholds_rejected() {
        let c = ThresholdConfig {
            t_f_max: 0.95,
            ..ThresholdConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(ThresholdConfig::default().validate().is_ok());
    }

    #[test]
    fn one_cell_gap_closes() {
        let g = grid(&[
            "##########",
            "#........#",
            "#........#",
            "#........#",
            "####?#####",
            "??????????",
        ]);
        let p = HeuristicPredictor.predict(&g).unwrap();
        assert_eq!(p.get(4, 1), HEURISTIC_OCCUPIED);
        // far unknown row is untouched
        assert_eq!(p.get(0, 0), HEURISTIC_UNKNOWN);
        assert_eq!(p.get(2, 3), 0.0);
        assert_eq!(p.get(0, 5), 1.0);
    }

    #[test]
    fn room_completion_fills_enclosed_holes() {
        let g = grid(&[
            "#######", //
            "#.....#",
            "#.???.#",
            "#.???.#",
            "#.....#",
            "#######",
        ]);
        let p = HeuristicPredictor.predict(&g).unwrap();
        for (x, y) in [(2, 2), (3, 3), (4, 3)] {
            assert_eq!(p.get(x, y), HEURISTIC_FREE, "({x}, {y})");
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("oracle".parse::<PredictorKind>().unwrap(), PredictorKind::Oracle);
        let ext: PredictorKind = "external=tcp:localhost:7000".parse().unwrap();
        assert_eq!(ext.to_string(), "external=tcp:localhost:7000");
        assert!("neural".parse::<PredictorKind>().is_err());
    }
}
