//! Observed maps: log-odds accumulation, obstacle inflation, ego-centric
//! resampling and the coarse projection used by the predictor.

mod ego;
mod export;
mod inflate;
mod logodds;

pub use ego::{ego_transform, world_from_ego, EgoTransformSpec, EGO_SIZE};
pub use export::{load_map, save_map, MapMeta, PIXEL_MAP_FREE, PIXEL_MAP_NON_FLIGHT, PIXEL_MAP_OCCUPIED, PIXEL_MAP_UNKNOWN};
pub use inflate::{disc_offsets, inflate};
pub use logodds::{HierarchicalMap, LogOddsConfig, LogOddsMap};

use thiserror::Error;

use crate::grid::{CellState, Grid2D};

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("pose ({x:.3}, {y:.3}) is outside the map")]
    PoseOutOfBounds { x: f64, y: f64 },
    #[error("scan raster {scan:?} does not match map {map:?} (width, height, resolution)")]
    ScanMismatch {
        map: (usize, usize, f64),
        scan: (usize, usize, f64),
    },
    #[error("resolution ratio {low} / {high} is not an integer")]
    NonIntegerRatio { low: f64, high: f64 },
}

/// Reduce a fine map to a coarser one whose resolution is an integer
/// multiple: any occupied child makes the parent occupied, otherwise any
/// free child makes it free.
pub fn project_low_from_high(high: &Grid2D, low_resolution: f64) -> Result<Grid2D, MapError> {
    let ratio = low_resolution / high.resolution();
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 {
        return Err(MapError::NonIntegerRatio {
            low: low_resolution,
            high: high.resolution(),
        });
    }
    let f = factor as usize;
    let (w, h) = (high.width().div_ceil(f), high.height().div_ceil(f));
    let mut low = Grid2D::new(w, h, low_resolution, high.origin(), CellState::Unknown);
    for y in 0..high.height() {
        for x in 0..high.width() {
            let (lx, ly) = (x / f, y / f);
            match (high.get(x, y), low.get(lx, ly)) {
                (CellState::Occupied, _) => low.set(lx, ly, CellState::Occupied),
                (CellState::Free, CellState::Unknown) => low.set(lx, ly, CellState::Free),
                _ => {}
            }
        }
    }
    Ok(low)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn block(fill: CellState) -> Grid2D {
        Grid2D::new(4, 4, 0.05, [0.0, 0.0], fill)
    }

    #[test]
    fn free_block_projects_free() {
        let low = project_low_from_high(&block(CellState::Free), 0.2).unwrap();
        assert_eq!(low.width(), 1);
        assert_eq!(low.get(0, 0), CellState::Free);
    }

    #[test]
    fn one_occupied_child_wins() {
        let mut g = block(CellState::Free);
        g.set(3, 1, CellState::Occupied);
        assert_eq!(project_low_from_high(&g, 0.2).unwrap().get(0, 0), CellState::Occupied);
    }

    #[test]
    fn unknown_block_stays_unknown() {
        assert_eq!(
            project_low_from_high(&block(CellState::Unknown), 0.2).unwrap().get(0, 0),
            CellState::Unknown
        );
    }

    #[test]
    fn non_integer_ratio_is_rejected() {
        assert!(matches!(
            project_low_from_high(&block(CellState::Free), 0.13),
            Err(MapError::NonIntegerRatio { .. })
        ));
    }

    #[test]
    fn random_map_matches_per_block_reduction() {
        let mut rng = crate::rng::seeded_rng(11);
        for _ in 0..50 {
            let cells: Vec<CellState> = (0..256)
                .map(|_| match rng.gen_range(0..3) {
                    0 => CellState::Free,
                    1 => CellState::Unknown,
                    _ => CellState::Occupied,
                })
                .collect();
            let high = Grid2D::from_cells(16, 16, 0.05, [0.0, 0.0], cells);
            let low = project_low_from_high(&high, 0.2).unwrap();
            for by in 0..4 {
                for bx in 0..4 {
                    let kids: Vec<CellState> = (0..16).map(|k| high.get(bx * 4 + k % 4, by * 4 + k / 4)).collect();
                    let want = if kids.contains(&CellState::Occupied) {
                        CellState::Occupied
                    } else if kids.contains(&CellState::Free) {
                        CellState::Free
                    } else {
                        CellState::Unknown
                    };
                    assert_eq!(low.get(bx, by), want);
                }
            }
        }
    }
}
