use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::{CellState, Grid2D};
use crate::pgm::{self, RasterIoError};

pub const PIXEL_MAP_OCCUPIED: u8 = 0;
pub const PIXEL_MAP_NON_FLIGHT: u8 = 64;
pub const PIXEL_MAP_UNKNOWN: u8 = 128;
pub const PIXEL_MAP_FREE: u8 = 255;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MapMeta {
    pub resolution_m: f64,
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
}

pub fn save_map(map: &Grid2D, path: &Path) -> Result<(), RasterIoError> {
    let pixels: Vec<u8> = map
        .cells()
        .iter()
        .map(|c| match c {
            CellState::Free => PIXEL_MAP_FREE,
            CellState::Unknown => PIXEL_MAP_UNKNOWN,
            CellState::Occupied => PIXEL_MAP_OCCUPIED,
            CellState::NonFlight => PIXEL_MAP_NON_FLIGHT,
        })
        .collect();
    pgm::write_pgm(path, map.width(), map.height(), &pixels)?;
    let meta = MapMeta {
        resolution_m: map.resolution(),
        width: map.width(),
        height: map.height(),
        origin_x: map.origin()[0],
        origin_y: map.origin()[1],
    };
    pgm::write_sidecar(&pgm::sidecar_path(path), &meta)
}

pub fn load_map(path: &Path) -> Result<Grid2D, RasterIoError> {
    let (width, height, pixels) = pgm::read_pgm(path)?;
    let meta: MapMeta = pgm::read_sidecar(&pgm::sidecar_path(path))?;
    if meta.width != width || meta.height != height {
        return Err(RasterIoError::DimensionMismatch {
            meta_w: meta.width,
            meta_h: meta.height,
            raster_w: width,
            raster_h: height,
        });
    }
    let mut cells = Vec::with_capacity(pixels.len());
    for (i, &p) in pixels.iter().enumerate() {
        cells.push(match p {
            PIXEL_MAP_FREE => CellState::Free,
            PIXEL_MAP_UNKNOWN => CellState::Unknown,
            PIXEL_MAP_OCCUPIED => CellState::Occupied,
            PIXEL_MAP_NON_FLIGHT => CellState::NonFlight,
            value => {
                return Err(RasterIoError::UnknownEncoding {
                    value,
                    x: i % width,
                    y: i / width,
                })
            }
        });
    }
    Ok(Grid2D::from_cells(
        width,
        height,
        meta.resolution_m,
        [meta.origin_x, meta.origin_y],
        cells,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_state_map_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        let cells = vec![
            CellState::Free,
            CellState::Unknown,
            CellState::Occupied,
            CellState::NonFlight,
            CellState::Free,
            CellState::Occupied,
        ];
        let g = Grid2D::from_cells(3, 2, 0.05, [-1.0, 2.5], cells);
        save_map(&g, &path).unwrap();
        assert_eq!(load_map(&path).unwrap(), g);
    }
}
