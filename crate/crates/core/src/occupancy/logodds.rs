use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::MapError;
use crate::dynamics::Pose;
use crate::grid::{CellState, Grid2D};
use crate::sensor::ScanResult;

/// Log-odds increments, clamp and decision thresholds.
///
/// A never-decided cell becomes occupied above `occupied_above` and free
/// below `free_below`. Once decided it stays known and follows the sign of
/// its log-odds (zero keeps the previous label), so the known-cell count
/// never shrinks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogOddsConfig {
    pub hit: f64,
    pub miss: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
    pub free_below: f64,
    pub occupied_above: f64,
}

impl Default for LogOddsConfig {
    fn default() -> Self {
        Self {
            hit: 0.85,
            miss: -0.4,
            clamp_min: -3.5,
            clamp_max: 3.5,
            free_below: -0.12,
            occupied_above: 0.12,
        }
    }
}

impl LogOddsConfig {
    fn label(&self, log_odds: f64, previous: CellState) -> CellState {
        if log_odds > self.occupied_above {
            CellState::Occupied
        } else if log_odds < self.free_below {
            CellState::Free
        } else if previous == CellState::Unknown {
            CellState::Unknown
        } else if log_odds > 0.0 {
            CellState::Occupied
        } else if log_odds < 0.0 {
            CellState::Free
        } else {
            previous
        }
    }
}

/// Per-cell log-odds accumulator with its current trinary labelling.
#[derive(Clone, Debug)]
pub struct LogOddsMap {
    config: LogOddsConfig,
    values: Vec<f64>,
    labels: Grid2D,
    known: usize,
    stamp: Vec<u32>,
    scan_id: u32,
}

impl LogOddsMap {
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2], config: LogOddsConfig) -> Self {
        Self {
            config,
            values: vec![0.0; width * height],
            labels: Grid2D::new(width, height, resolution, origin, CellState::Unknown),
            known: 0,
            stamp: vec![0; width * height],
            scan_id: 0,
        }
    }

    pub fn config(&self) -> &LogOddsConfig {
        &self.config
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn resolution(&self) -> f64 {
        self.labels.resolution()
    }

    pub fn log_odds(&self, index: usize) -> f64 {
        self.values[index]
    }

    /// Trinary view of the map.
    pub fn classified(&self) -> &Grid2D {
        &self.labels
    }

    /// Number of free or occupied cells.
    pub fn known_count(&self) -> usize {
        self.known
    }

    pub fn clear(&mut self) {
        self.values.fill(0.0);
        self.labels.cells_mut().fill(CellState::Unknown);
        self.stamp.fill(0);
        self.scan_id = 0;
        self.known = 0;
    }

    fn update(&mut self, index: usize, delta: f64) {
        let v = (self.values[index] + delta).clamp(self.config.clamp_min, self.config.clamp_max);
        self.values[index] = v;
        let cells = self.labels.cells_mut();
        let prev = cells[index];
        let next = self.config.label(v, prev);
        if prev == CellState::Unknown && next != CellState::Unknown {
            self.known += 1;
        }
        cells[index] = next;
    }

    pub fn apply_hit(&mut self, index: usize) {
        self.update(index, self.config.hit);
    }

    pub fn apply_miss(&mut self, index: usize) {
        self.update(index, self.config.miss);
    }

    /// One batch update: every listed cell is touched at most once, and a
    /// cell listed as both hit and miss receives the hit.
    pub fn integrate_cells(&mut self, hits: impl IntoIterator<Item = usize>, misses: impl IntoIterator<Item = usize>) {
        self.scan_id = self.scan_id.wrapping_add(1);
        if self.scan_id == 0 {
            self.stamp.fill(0);
            self.scan_id = 1;
        }
        let id = self.scan_id;
        for i in hits {
            if self.stamp[i] != id {
                self.stamp[i] = id;
                self.apply_hit(i);
            }
        }
        for i in misses {
            if self.stamp[i] != id {
                self.stamp[i] = id;
                self.apply_miss(i);
            }
        }
    }

    fn check_pose(&self, pose: &Pose) -> Result<(), MapError> {
        if self.labels.world_to_cell(pose.x, pose.y).is_none() {
            return Err(MapError::PoseOutOfBounds { x: pose.x, y: pose.y });
        }
        Ok(())
    }

    /// Integrate a scan rasterised at this map's own resolution and extent.
    pub fn integrate_scan(&mut self, pose: &Pose, scan: &ScanResult) -> Result<(), MapError> {
        self.check_pose(pose)?;
        if scan.width != self.width()
            || scan.height != self.height()
            || (scan.resolution - self.resolution()).abs() > 1e-12
        {
            return Err(MapError::ScanMismatch {
                map: (self.width(), self.height(), self.resolution()),
                scan: (scan.width, scan.height, scan.resolution),
            });
        }
        let hits: Vec<usize> = scan.rays.iter().filter_map(|r| r.hit).chain(scan.noise.iter().copied()).collect();
        let misses: Vec<usize> = scan.rays.iter().flat_map(|r| r.traversed.iter().copied()).collect();
        self.integrate_cells(hits, misses);
        Ok(())
    }

    /// Integrate a scan taken on a raster `factor` times finer than this map.
    /// Each coarse cell takes one update per scan: a hit when it holds at
    /// least as many distinct hit fine cells as missed ones, else a miss.
    pub fn integrate_scan_coarse(&mut self, pose: &Pose, scan: &ScanResult, factor: usize) -> Result<(), MapError> {
        self.check_pose(pose)?;
        let expected = (scan.resolution * factor as f64 - self.resolution()).abs() < 1e-9;
        if !expected || scan.width.div_ceil(factor) != self.width() || scan.height.div_ceil(factor) != self.height() {
            return Err(MapError::ScanMismatch {
                map: (self.width(), self.height(), self.resolution()),
                scan: (scan.width, scan.height, scan.resolution),
            });
        }
        let (sw, w) = (scan.width, self.width());
        let coarse = move |i: usize| (i / sw / factor) * w + (i % sw) / factor;
        let fine_hits: BTreeSet<usize> = scan.rays.iter().filter_map(|r| r.hit).chain(scan.noise.iter().copied()).collect();
        let fine_misses: BTreeSet<usize> = scan
            .rays
            .iter()
            .flat_map(|r| r.traversed.iter().copied())
            .filter(|i| !fine_hits.contains(i))
            .collect();
        let mut votes: BTreeMap<usize, (u32, u32)> = BTreeMap::new();
        for &i in &fine_hits {
            votes.entry(coarse(i)).or_default().0 += 1;
        }
        for &i in &fine_misses {
            votes.entry(coarse(i)).or_default().1 += 1;
        }
        let hits: Vec<usize> = votes.iter().filter(|(_, v)| v.0 > 0 && v.0 >= v.1).map(|(&c, _)| c).collect();
        let misses: Vec<usize> = votes.iter().filter(|(_, v)| v.0 < v.1).map(|(&c, _)| c).collect();
        self.integrate_cells(hits, misses);
        Ok(())
    }
}

/// The two-level observed map: a fine map for planning and collision
/// avoidance and a coarse one for prediction, fed from the same scans.
#[derive(Clone, Debug)]
pub struct HierarchicalMap {
    pub high: LogOddsMap,
    pub low: LogOddsMap,
    factor: usize,
}

impl HierarchicalMap {
    /// Maps covering `low_width × low_height` coarse cells with origin at the
    /// world origin; the fine map is `factor` times denser.
    pub fn new(low_width: usize, low_height: usize, low_resolution: f64, factor: usize, config: LogOddsConfig) -> Self {
        assert!(factor >= 1);
        Self {
            high: LogOddsMap::new(
                low_width * factor,
                low_height * factor,
                low_resolution / factor as f64,
                [0.0, 0.0],
                config.clone(),
            ),
            low: LogOddsMap::new(low_width, low_height, low_resolution, [0.0, 0.0], config),
            factor,
        }
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn clear(&mut self) {
        self.high.clear();
        self.low.clear();
    }

    /// Update both levels from one scan rasterised at the fine resolution.
    pub fn integrate_scan(&mut self, pose: &Pose, scan: &ScanResult) -> Result<(), MapError> {
        self.high.integrate_scan(pose, scan)?;
        self.low.integrate_scan_coarse(pose, scan, self.factor)
    }
}
