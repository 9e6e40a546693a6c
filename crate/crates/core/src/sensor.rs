//! Planar range sensor cast against a ground-truth plan raster.
//!
//! Rays walk the grid cell by cell (exact traversal: every cell whose
//! interior the ray segment touches is visited in order) and stop at the
//! first blocking cell or at the maximum range. Noise only ever adds
//! occupied observations next to true hits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Pose;
use crate::floorplan::{FloorPlan, PlanCell};
use crate::rng::mix_seed;

#[derive(Debug, Error, PartialEq)]
pub enum SensorError {
    #[error("sensing from inside obstacle at ({x:.3}, {y:.3})")]
    InsideObstacle { x: f64, y: f64 },
    #[error("sensor pose ({x:.3}, {y:.3}) is outside the plan")]
    OutsidePlan { x: f64, y: f64 },
    #[error("invalid sensor configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorConfig {
    pub fov_rad: f64,
    pub max_range_m: f64,
    pub ray_count: u32,
    pub adjacent_occupied_prob: f64,
    pub rng_seed: u64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            fov_rad: 1.518,
            max_range_m: 5.0,
            ray_count: 174,
            adjacent_occupied_prob: 0.05,
            rng_seed: 0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        let tau = 2.0 * std::f64::consts::PI;
        if !(self.fov_rad > 0.0 && self.fov_rad <= tau + 1e-12) {
            return Err(SensorError::InvalidConfig(format!("fov {} outside (0, 2π]", self.fov_rad)));
        }
        if self.ray_count < 1 {
            return Err(SensorError::InvalidConfig("ray_count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.adjacent_occupied_prob) {
            return Err(SensorError::InvalidConfig(format!(
                "adjacent_occupied_prob {} outside [0, 1]",
                self.adjacent_occupied_prob
            )));
        }
        if self.max_range_m.is_nan() || self.max_range_m <= 0.0 {
            return Err(SensorError::InvalidConfig("max_range_m must be positive".into()));
        }
        Ok(())
    }

    /// Absolute bearing of ray `k` for a robot heading `yaw`: rays sit at the
    /// centers of `ray_count` equal sectors spanning the field of view.
    pub fn ray_angle(&self, yaw: f64, k: u32) -> f64 {
        yaw - self.fov_rad / 2.0 + self.fov_rad * (k as f64 + 0.5) / self.ray_count as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayResult {
    pub angle: f64,
    /// Distance to the entry of the hit cell, or the maximum range.
    pub range_m: f64,
    pub hit: Option<usize>,
    /// Free cells crossed before the hit, in traversal order, origin cell first.
    pub traversed: Vec<usize>,
}

/// One scan rasterised on the plan grid it was taken against. Cell indices
/// are row-major into a `width × height` raster at `resolution`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub rays: Vec<RayResult>,
    /// Spurious occupied observations next to true hits (may repeat).
    pub noise: Vec<usize>,
}

impl ScanResult {
    /// Distinct true hit cells in first-seen order.
    pub fn hit_cells(&self) -> Vec<usize> {
        let mut seen = std::collections::HashSet::new();
        self.rays
            .iter()
            .filter_map(|r| r.hit)
            .filter(|h| seen.insert(*h))
            .collect()
    }
}

/// Walk one ray from `(x, y)` through `plan` (origin at world `(0, 0)`).
pub fn cast_ray(plan: &FloorPlan, x: f64, y: f64, angle: f64, max_range_m: f64) -> RayResult {
    let res = plan.resolution();
    let w = plan.width() as i64;
    let (px, py) = (x / res, y / res);
    let (dx, dy) = (angle.cos(), angle.sin());
    let max_t = max_range_m / res;
    let (mut cx, mut cy) = (px.floor() as i64, py.floor() as i64);
    let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
    let boundary = |p: f64, c: i64, d: f64| -> f64 {
        if d > 0.0 {
            (c as f64 + 1.0 - p) / d
        } else if d < 0.0 {
            (c as f64 - p) / d
        } else {
            f64::INFINITY
        }
    };
    let mut t_max_x = boundary(px, cx, dx);
    let mut t_max_y = boundary(py, cy, dy);
    let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };

    let mut traversed = Vec::new();
    let mut t_entry = 0.0f64;
    loop {
        match plan.get_signed(cx, cy) {
            None => {
                return RayResult {
                    angle,
                    range_m: t_entry * res,
                    hit: None,
                    traversed,
                }
            }
            Some(PlanCell::Occupied | PlanCell::Exterior) => {
                return RayResult {
                    angle,
                    range_m: t_entry * res,
                    hit: Some((cy * w + cx) as usize),
                    traversed,
                }
            }
            Some(PlanCell::Free) => traversed.push((cy * w + cx) as usize),
        }
        let t_next = t_max_x.min(t_max_y);
        if t_next > max_t {
            return RayResult {
                angle,
                range_m: max_range_m,
                hit: None,
                traversed,
            };
        }
        t_entry = t_next;
        if t_max_x < t_max_y {
            cx += step_x;
            t_max_x += t_delta_x;
        } else {
            cy += step_y;
            t_max_y += t_delta_y;
        }
    }
}

/// Scan `plan` from `pose`. The noise stream is a pure function of
/// `(config.rng_seed, step)`.
pub fn sense(plan: &FloorPlan, pose: &Pose, config: &SensorConfig, step: u64) -> Result<ScanResult, SensorError> {
    config.validate()?;
    let res = plan.resolution();
    let (cx, cy) = ((pose.x / res).floor() as i64, (pose.y / res).floor() as i64);
    match plan.get_signed(cx, cy) {
        None => return Err(SensorError::OutsidePlan { x: pose.x, y: pose.y }),
        Some(PlanCell::Free) => {}
        Some(_) => return Err(SensorError::InsideObstacle { x: pose.x, y: pose.y }),
    }
    let rays: Vec<RayResult> = (0..config.ray_count)
        .map(|k| cast_ray(plan, pose.x, pose.y, config.ray_angle(pose.yaw, k), config.max_range_m))
        .collect();
    let mut scan = ScanResult {
        width: plan.width(),
        height: plan.height(),
        resolution: res,
        rays,
        noise: Vec::new(),
    };
    let p = config.adjacent_occupied_prob;
    if p > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.rng_seed, step));
        let (w, h) = (plan.width() as i64, plan.height() as i64);
        for hit in scan.hit_cells() {
            let (hx, hy) = ((hit % plan.width()) as i64, (hit / plan.width()) as i64);
            for (ox, oy) in NEIGHBOURS_8 {
                // draw for every neighbour so the stream does not depend on bounds
                let flagged = rng.gen_bool(p);
                let (nx, ny) = (hx + ox, hy + oy);
                if flagged && nx >= 0 && ny >= 0 && nx < w && ny < h {
                    scan.noise.push((ny * w + nx) as usize);
                }
            }
        }
    }
    Ok(scan)
}

pub const NEIGHBOURS_8: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

#[cfg(test)]
mod tests {
    use super::*;

    fn open_plan(w: usize, h: usize, res: f64) -> FloorPlan {
        FloorPlan::from_cells(w, h, res, vec![PlanCell::Free; w * h], 0)
    }

    /// Open field with a wall column at `wall_x` cells.
    fn wall_plan(wall_x: usize) -> FloorPlan {
        let (w, h) = (60, 60);
        let mut cells = vec![PlanCell::Free; w * h];
        for y in 0..h {
            cells[y * w + wall_x] = PlanCell::Occupied;
        }
        FloorPlan::from_cells(w, h, 0.1, cells, 0)
    }

    #[test]
    fn open_space_rays_run_to_max_range() {
        let plan = open_plan(240, 240, 0.05);
        let cfg = SensorConfig {
            adjacent_occupied_prob: 0.0,
            ..SensorConfig::default()
        };
        let scan = sense(&plan, &Pose::new(6.02, 6.03, 0.3), &cfg, 0).unwrap();
        assert_eq!(scan.rays.len(), 174);
        for ray in &scan.rays {
            assert!(ray.hit.is_none());
            assert_eq!(ray.range_m, 5.0);
            // last traversed cell lies within max range of the origin
            let last = *ray.traversed.last().unwrap();
            let (lx, ly) = ((last % 240) as f64 * 0.05, (last / 240) as f64 * 0.05);
            let nearest_x = 6.02f64.clamp(lx, lx + 0.05);
            let nearest_y = 6.03f64.clamp(ly, ly + 0.05);
            assert!(((nearest_x - 6.02).powi(2) + (nearest_y - 6.03).powi(2)).sqrt() <= 5.0 + 1e-9);
            assert!(ray.traversed.len() >= 100);
        }
        assert!(scan.noise.is_empty());
    }

    #[test]
    fn perpendicular_wall_is_hit_at_one_metre() {
        let plan = wall_plan(30);
        let cfg = SensorConfig {
            adjacent_occupied_prob: 0.0,
            ray_count: 9,
            fov_rad: 0.2,
            ..SensorConfig::default()
        };
        // robot centre 1 m before the wall face at x = 3.0
        let scan = sense(&plan, &Pose::new(2.0, 3.05, 0.0), &cfg, 0).unwrap();
        for ray in &scan.rays {
            let hit = ray.hit.expect("every central ray hits the wall");
            assert_eq!(hit % 60, 30);
            let expected = 1.0 / ray.angle.cos();
            assert!((ray.range_m - expected).abs() < 1e-9, "{} vs {}", ray.range_m, expected);
        }
    }

    #[test]
    fn saturated_noise_reports_every_neighbour() {
        let plan = wall_plan(30);
        let cfg = SensorConfig {
            adjacent_occupied_prob: 1.0,
            ray_count: 5,
            fov_rad: 0.1,
            ..SensorConfig::default()
        };
        let scan = sense(&plan, &Pose::new(2.0, 3.05, 0.0), &cfg, 7).unwrap();
        let hits = scan.hit_cells();
        assert_eq!(scan.noise.len(), hits.len() * 8);
        for h in hits {
            let (hx, hy) = ((h % 60) as i64, (h / 60) as i64);
            for (ox, oy) in NEIGHBOURS_8 {
                let n = ((hy + oy) * 60 + hx + ox) as usize;
                assert!(scan.noise.contains(&n));
            }
        }
    }

    #[test]
    fn noise_is_deterministic_per_step() {
        let plan = wall_plan(30);
        let cfg = SensorConfig {
            adjacent_occupied_prob: 0.3,
            rng_seed: 11,
            ..SensorConfig::default()
        };
        let pose = Pose::new(2.0, 3.05, 0.0);
        assert_eq!(sense(&plan, &pose, &cfg, 4).unwrap(), sense(&plan, &pose, &cfg, 4).unwrap());
        assert_ne!(sense(&plan, &pose, &cfg, 4).unwrap().noise, sense(&plan, &pose, &cfg, 5).unwrap().noise);
    }

    #[test]
    fn sensing_inside_obstacle_fails() {
        let plan = wall_plan(30);
        let err = sense(&plan, &Pose::new(3.05, 3.05, 0.0), &SensorConfig::default(), 0).unwrap_err();
        assert!(err.to_string().contains("sensing from inside obstacle"));
    }

    #[test]
    fn single_ray_points_along_heading() {
        let cfg = SensorConfig {
            ray_count: 1,
            ..SensorConfig::default()
        };
        assert_eq!(cfg.ray_angle(0.7, 0), 0.7);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SensorConfig::default();
        cfg.ray_count = 0;
        assert!(cfg.validate().is_err());
        cfg = SensorConfig {
            fov_rad: 7.0,
            ..SensorConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg = SensorConfig {
            adjacent_occupied_prob: 1.5,
            ..SensorConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
