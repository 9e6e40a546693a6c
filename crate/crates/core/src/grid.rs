//! Resolution-tagged 2-D cell arrays shared by every stage of the pipeline.
//!
//! Cells are addressed as `(x, y)` column/row pairs, stored row-major. The
//! `origin` is the world position of the lower-left corner of cell `(0, 0)`,
//! so cell `(x, y)` covers `[ox + x*r, ox + (x+1)*r) × [oy + y*r, oy + (y+1)*r)`.

use std::fmt;

/// Four-state cell alphabet used by observed, predicted and inflated maps.
///
/// The numeric codes of the trinary subset match the thresholding output
/// (`-1`, `0`, `+1`); `NonFlight` is encoded as `2` on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[repr(i8)]
pub enum CellState {
    Free = -1,
    #[default]
    Unknown = 0,
    Occupied = 1,
    NonFlight = 2,
}

impl CellState {
    pub const fn code(self) -> i8 {
        self as i8
    }

    pub const fn from_code(code: i8) -> Option<Self> {
        match code {
            -1 => Some(Self::Free),
            0 => Some(Self::Unknown),
            1 => Some(Self::Occupied),
            2 => Some(Self::NonFlight),
            _ => None,
        }
    }

    /// Free or occupied.
    pub const fn is_known(self) -> bool {
        matches!(self, Self::Free | Self::Occupied)
    }

    /// Cells a robot center may not enter.
    pub const fn is_blocking(self) -> bool {
        matches!(self, Self::Occupied | Self::NonFlight)
    }

    /// Priority used when resampling ties: occupied > non_flight > unknown > free.
    pub const fn conservativeness(self) -> u8 {
        match self {
            Self::Free => 0,
            Self::Unknown => 1,
            Self::NonFlight => 2,
            Self::Occupied => 3,
        }
    }
}

impl fmt::Display for CellState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::Free => "free",
            Self::Unknown => "unknown",
            Self::Occupied => "occupied",
            Self::NonFlight => "non_flight",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    cells: Vec<CellState>,
}

impl Grid2D {
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2], fill: CellState) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        Self {
            width,
            height,
            resolution,
            origin,
            cells: vec![fill; width * height],
        }
    }

    pub fn from_cells(
        width: usize,
        height: usize,
        resolution: f64,
        origin: [f64; 2],
        cells: Vec<CellState>,
    ) -> Self {
        assert_eq!(cells.len(), width * height, "cell buffer does not match dimensions");
        assert!(resolution > 0.0, "resolution must be positive");
        Self {
            width,
            height,
            resolution,
            origin,
            cells,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [CellState] {
        &mut self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> CellState {
        self.cells[y * self.width + x]
    }

    /// Signed lookup; `None` off the grid.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> Option<CellState> {
        if self.contains(x, y) {
            Some(self.cells[y as usize * self.width + x as usize])
        } else {
            None
        }
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, state: CellState) {
        let i = self.index(x, y);
        self.cells[i] = state;
    }

    /// Cell containing a world point (unbounded signed indices).
    #[inline]
    pub fn world_to_cell_signed(&self, wx: f64, wy: f64) -> (i64, i64) {
        (
            ((wx - self.origin[0]) / self.resolution).floor() as i64,
            ((wy - self.origin[1]) / self.resolution).floor() as i64,
        )
    }

    pub fn world_to_cell(&self, wx: f64, wy: f64) -> Option<(usize, usize)> {
        let (x, y) = self.world_to_cell_signed(wx, wy);
        self.contains(x, y).then_some((x as usize, y as usize))
    }

    /// World coordinates of a cell center.
    #[inline]
    pub fn cell_center(&self, x: i64, y: i64) -> (f64, f64) {
        (
            self.origin[0] + (x as f64 + 0.5) * self.resolution,
            self.origin[1] + (y as f64 + 0.5) * self.resolution,
        )
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|&&c| c == state).count()
    }

    pub fn count_known(&self) -> usize {
        self.cells.iter().filter(|c| c.is_known()).count()
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.width == other.width
            && self.height == other.height
            && (self.resolution - other.resolution).abs() < 1e-12
    }

    /// Map every cell through `f`.
    pub fn map_cells(&self, f: impl Fn(CellState) -> CellState) -> Grid2D {
        Grid2D {
            cells: self.cells.iter().map(|&c| f(c)).collect(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        for s in [CellState::Free, CellState::Unknown, CellState::Occupied, CellState::NonFlight] {
            assert_eq!(CellState::from_code(s.code()), Some(s));
        }
        assert_eq!(CellState::from_code(3), None);
        assert_eq!(CellState::Free.code(), -1);
        assert_eq!(CellState::Occupied.code(), 1);
    }

    #[test]
    fn world_cell_conversion_is_consistent_at_centers() {
        let g = Grid2D::new(10, 7, 0.05, [-1.3, 2.1], CellState::Unknown);
        for y in 0..7i64 {
            for x in 0..10i64 {
                let (wx, wy) = g.cell_center(x, y);
                assert_eq!(g.world_to_cell_signed(wx, wy), (x, y));
            }
        }
        assert_eq!(g.world_to_cell(-1.31, 2.2), None);
    }

    #[test]
    fn conservativeness_order() {
        let mut states = [CellState::NonFlight, CellState::Free, CellState::Occupied, CellState::Unknown];
        states.sort_by_key(|s| s.conservativeness());
        assert_eq!(
            states,
            [CellState::Free, CellState::Unknown, CellState::NonFlight, CellState::Occupied]
        );
    }
}
