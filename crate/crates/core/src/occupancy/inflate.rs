use crate::grid::{CellState, Grid2D};

/// Cell offsets (excluding the origin) whose center lies within `radius_m`.
pub fn disc_offsets(radius_m: f64, resolution: f64) -> Vec<(i64, i64)> {
    let reach = (radius_m / resolution).floor() as i64;
    let r2 = radius_m * radius_m + 1e-9;
    let mut out = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d2 = ((dx * dx + dy * dy) as f64) * resolution * resolution;
            if (dx, dy) != (0, 0) && d2 <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Mark every free or unknown cell within `radius_m` of an occupied cell as
/// non-flight. Occupied cells are left alone.
pub fn inflate(map: &Grid2D, radius_m: f64) -> Grid2D {
    let mut out = map.clone();
    if radius_m <= 0.0 {
        return out;
    }
    let offsets = disc_offsets(radius_m, map.resolution());
    let (w, h) = (map.width(), map.height());
    let src = map.cells();
    let dst = out.cells_mut();
    for y in 0..h {
        for x in 0..w {
            if src[y * w + x] != CellState::Occupied {
                continue;
            }
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let i = ny as usize * w + nx as usize;
                if matches!(dst[i], CellState::Free | CellState::Unknown) {
                    dst[i] = CellState::NonFlight;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_radius_is_identity() {
        let mut g = Grid2D::new(5, 5, 0.2, [0.0, 0.0], CellState::Free);
        g.set(2, 2, CellState::Occupied);
        let out = inflate(&g, 0.0);
        assert_eq!(out, g);
        assert_eq!(out.count(CellState::NonFlight), 0);
    }

    #[test]
    fn one_cell_radius_marks_four_neighbours() {
        let mut g = Grid2D::new(5, 5, 0.2, [0.0, 0.0], CellState::Free);
        g.set(2, 2, CellState::Occupied);
        let out = inflate(&g, 0.2);
        // brute-force distance oracle
        for y in 0..5i64 {
            for x in 0..5i64 {
                let d = (((x - 2).pow(2) + (y - 2).pow(2)) as f64).sqrt() * 0.2;
                let want = if (x, y) == (2, 2) {
                    CellState::Occupied
                } else if d <= 0.2 + 1e-12 {
                    CellState::NonFlight
                } else {
                    CellState::Free
                };
                assert_eq!(out.get(x as usize, y as usize), want, "({x}, {y})");
            }
        }
        assert_eq!(out.count(CellState::NonFlight), 4);
    }

    #[test]
    fn free_map_gains_nothing() {
        let g = Grid2D::new(6, 4, 0.05, [0.0, 0.0], CellState::Free);
        assert_eq!(inflate(&g, 0.3).count(CellState::NonFlight), 0);
    }

    #[test]
    fn unknown_cells_are_inflated_too() {
        let mut g = Grid2D::new(3, 1, 0.1, [0.0, 0.0], CellState::Unknown);
        g.set(0, 0, CellState::Occupied);
        assert_eq!(inflate(&g, 0.1).get(1, 0), CellState::NonFlight);
    }
}
