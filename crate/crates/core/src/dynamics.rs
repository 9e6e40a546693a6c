//! Discrete action space whose effect depends on the previous action, as a
//! proxy for vehicle velocity, plus pose integration and disc collision checks.

use std::f64::consts::PI;
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellState, Grid2D};

#[derive(Debug, Error)]
pub enum MotionTableError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("action index {0} out of range 0..=5")]
    BadAction(u32),
    #[error("entry ({current}, {previous}) listed twice")]
    Duplicate { current: usize, previous: usize },
    #[error("{0} of 36 entries missing")]
    Missing(usize),
}

/// One of the six discrete actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ActionId(u8);

impl ActionId {
    pub const HOVER: ActionId = ActionId(0);
    pub const TURN_RIGHT: ActionId = ActionId(1);
    pub const TURN_LEFT: ActionId = ActionId(2);
    pub const FORWARD: ActionId = ActionId(3);
    pub const FORWARD_RIGHT: ActionId = ActionId(4);
    pub const FORWARD_LEFT: ActionId = ActionId(5);

    pub const COUNT: usize = 6;

    pub const fn new(value: u8) -> Option<Self> {
        if value < 6 {
            Some(Self(value))
        } else {
            None
        }
    }

    pub const fn value(self) -> u8 {
        self.0
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = ActionId> {
        (0..6).map(ActionId)
    }

    pub const fn name(self) -> &'static str {
        match self.0 {
            0 => "hover",
            1 => "turn-right",
            2 => "turn-left",
            3 => "forward",
            4 => "forward-right",
            _ => "forward-left",
        }
    }
}

impl TryFrom<u8> for ActionId {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        ActionId::new(v).ok_or_else(|| format!("action {v} out of range 0..=5"))
    }
}

impl From<ActionId> for u8 {
    fn from(a: ActionId) -> u8 {
        a.0
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Wrap an angle into `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid maps -π to π, and tiny negatives may round up to 2π
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }
}

/// Per-step displacement (m) and rotation (rad) indexed `[current][previous]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionTable {
    pub move_m: [[f64; 6]; 6],
    pub rot_rad: [[f64; 6]; 6],
}

impl MotionTable {
    /// Values measured for the reference platform. Recorded verbatim,
    /// including the sign of `rot_rad[5][1]`, which does not mirror
    /// `rot_rad[2][1]`.
    pub fn appendix() -> Self {
        const TRANSLATING: [f64; 6] = [0.0, 0.0, 0.0, 0.075, 0.055, 0.055];
        Self {
            move_m: [
                TRANSLATING,
                TRANSLATING,
                TRANSLATING,
                [0.17, 0.17, 0.17, 0.26, 0.205, 0.205],
                [0.115, 0.115, 0.115, 0.22, 0.18, 0.15],
                [0.115, 0.115, 0.115, 0.22, 0.18, 0.15],
            ],
            rot_rad: [
                [0.0, -0.1, 0.1, 0.0, -0.1, 0.1],
                [-0.08, -0.21, 0.005, -0.08, -0.21, 0.005],
                [0.08, -0.005, 0.21, 0.08, -0.005, 0.21],
                [0.0, -0.1, 0.1, 0.0, -0.1, 0.1],
                [-0.08, -0.21, 0.005, -0.08, -0.21, 0.005],
                [0.08, 0.005, 0.21, 0.08, -0.005, 0.21],
            ],
        }
    }

    pub fn movement(&self, current: ActionId, previous: ActionId) -> f64 {
        self.move_m[current.index()][previous.index()]
    }

    pub fn rotation(&self, current: ActionId, previous: ActionId) -> f64 {
        self.rot_rad[current.index()][previous.index()]
    }

    /// Load from CSV with header `current,previous,move_m,rot_rad` and all
    /// 36 combinations listed exactly once.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, MotionTableError> {
        #[derive(Deserialize)]
        struct Row {
            current: u32,
            previous: u32,
            move_m: f64,
            rot_rad: f64,
        }
        let mut table = MotionTable {
            move_m: [[0.0; 6]; 6],
            rot_rad: [[0.0; 6]; 6],
        };
        let mut seen = [[false; 6]; 6];
        for row in csv::Reader::from_reader(reader).deserialize::<Row>() {
            let row = row?;
            let (c, p) = (row.current as usize, row.previous as usize);
            if c >= 6 {
                return Err(MotionTableError::BadAction(row.current));
            }
            if p >= 6 {
                return Err(MotionTableError::BadAction(row.previous));
            }
            if seen[c][p] {
                return Err(MotionTableError::Duplicate { current: c, previous: p });
            }
            seen[c][p] = true;
            table.move_m[c][p] = row.move_m;
            table.rot_rad[c][p] = row.rot_rad;
        }
        let missing = seen.iter().flatten().filter(|s| !**s).count();
        if missing > 0 {
            return Err(MotionTableError::Missing(missing));
        }
        Ok(table)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("current,previous,move_m,rot_rad\n");
        for c in 0..6 {
            for p in 0..6 {
                out.push_str(&format!("{c},{p},{},{}\n", self.move_m[c][p], self.rot_rad[c][p]));
            }
        }
        out
    }
}

impl Default for MotionTable {
    fn default() -> Self {
        Self::appendix()
    }
}

/// Rotate first, then translate along the new heading. Returns the new pose
/// and the path length contributed by the step.
pub fn apply_action(pose: &Pose, current: ActionId, previous: ActionId, table: &MotionTable) -> (Pose, f64) {
    let dist = table.movement(current, previous);
    let yaw = normalize_angle(pose.yaw + table.rotation(current, previous));
    let (s, c) = yaw.sin_cos();
    (
        Pose {
            x: pose.x + dist * c,
            y: pose.y + dist * s,
            yaw,
        },
        dist,
    )
}

/// True iff an occupied cell center lies within `robot_radius_m` of the
/// robot center, the center cell is blocking, or the disc leaves the map.
pub fn check_collision(pose: &Pose, map: &Grid2D, robot_radius_m: f64) -> bool {
    let (cx, cy) = map.world_to_cell_signed(pose.x, pose.y);
    match map.get_signed(cx, cy) {
        None | Some(CellState::Occupied | CellState::NonFlight) => return true,
        _ => {}
    }
    let res = map.resolution();
    let reach = (robot_radius_m / res).ceil() as i64 + 1;
    let r2 = robot_radius_m * robot_radius_m + 1e-12;
    for y in cy - reach..=cy + reach {
        for x in cx - reach..=cx + reach {
            let (wx, wy) = map.cell_center(x, y);
            let d2 = (wx - pose.x).powi(2) + (wy - pose.y).powi(2);
            if d2 > r2 {
                continue;
            }
            match map.get_signed(x, y) {
                None | Some(CellState::Occupied) => return true,
                _ => {}
            }
        }
    }
    false
}
