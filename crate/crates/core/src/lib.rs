//! Simulation and benchmarking toolkit for prediction-aided indoor
//! exploration with a small flying robot on 2-D occupancy grids.

pub mod bench;
pub mod dynamics;
pub mod episode;
pub mod floorplan;
pub mod grid;
pub mod metrics;
pub mod occupancy;
pub mod pgm;
pub mod planners;
pub mod predictor;
pub mod protocol;
pub mod rng;
pub mod sensor;

pub use dynamics::{apply_action, check_collision, ActionId, MotionTable, Pose};
pub use floorplan::{generate_plan, load_plan, save_plan, FloorPlan, FloorPlanConfig, PlanCell};
pub use grid::{CellState, Grid2D};
pub use sensor::{sense, ScanResult, SensorConfig};
