//! Prediction quality and coverage, both scored over interior plan cells.

use thiserror::Error;

use crate::floorplan::{FloorPlan, PlanCell};
use crate::grid::{CellState, Grid2D};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("map is {map_w}x{map_h} at {map_res} m, plan is {plan_w}x{plan_h} at {plan_res} m")]
    Mismatch {
        map_w: usize,
        map_h: usize,
        map_res: f64,
        plan_w: usize,
        plan_h: usize,
        plan_res: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionScore {
    /// Correctly predicted occupied interior cells.
    pub tp: usize,
    /// All correctly predicted interior cells.
    pub t_total: usize,
    /// Interior cell count.
    pub n_m: usize,
    pub f1: f64,
}

impl PredictionScore {
    pub fn from_counts(tp: usize, t_total: usize, n_m: usize) -> Self {
        let f1 = if tp == 0 {
            0.0
        } else {
            tp as f64 / (tp as f64 + 0.5 * (n_m - t_total) as f64)
        };
        Self { tp, t_total, n_m, f1 }
    }
}

fn check(map: &Grid2D, truth: &FloorPlan) -> Result<(), MetricsError> {
    if map.width() != truth.width()
        || map.height() != truth.height()
        || (map.resolution() - truth.resolution()).abs() > 1e-9
    {
        return Err(MetricsError::Mismatch {
            map_w: map.width(),
            map_h: map.height(),
            map_res: map.resolution(),
            plan_w: truth.width(),
            plan_h: truth.height(),
            plan_res: truth.resolution(),
        });
    }
    Ok(())
}

/// Score a world-aligned prediction. Unknown (and non-flight) predictions
/// count as incorrect.
pub fn f1_score(predicted: &Grid2D, truth: &FloorPlan) -> Result<PredictionScore, MetricsError> {
    check(predicted, truth)?;
    let (mut tp, mut t, mut n) = (0, 0, 0);
    for (&p, &g) in predicted.cells().iter().zip(truth.cells()) {
        match (p, g) {
            (_, PlanCell::Exterior) => continue,
            (CellState::Occupied, PlanCell::Occupied) => {
                tp += 1;
                t += 1;
            }
            (CellState::Free, PlanCell::Free) => t += 1,
            _ => {}
        }
        n += 1;
    }
    Ok(PredictionScore::from_counts(tp, t, n))
}

/// Fraction of interior cells that are free or occupied in `map`.
pub fn coverage(map: &Grid2D, truth: &FloorPlan) -> Result<f64, MetricsError> {
    check(map, truth)?;
    let n = truth.interior_cell_count();
    if n == 0 {
        return Ok(0.0);
    }
    let known = map
        .cells()
        .iter()
        .zip(truth.cells())
        .filter(|(c, g)| **g != PlanCell::Exterior && c.is_known())
        .count();
    Ok(known as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan() -> FloorPlan {
        // 10x10: border walls, interior free, one exterior column on the right
        let mut cells = vec![PlanCell::Free; 100];
        for i in 0..10 {
            for j in [0, 8] {
                cells[i * 10 + j] = PlanCell::Occupied;
                cells[j * 10 + i.min(8)] = PlanCell::Occupied;
            }
            cells[i * 10 + 9] = PlanCell::Exterior;
        }
        FloorPlan::from_cells(10, 10, 0.2, cells, 0)
    }

    fn truth_grid(p: &FloorPlan) -> Grid2D {
        let cells = p
            .cells()
            .iter()
            .map(|c| match c {
                PlanCell::Free => CellState::Free,
                PlanCell::Occupied => CellState::Occupied,
                PlanCell::Exterior => CellState::Unknown,
            })
            .collect();
        Grid2D::from_cells(10, 10, 0.2, [0.0, 0.0], cells)
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let p = plan();
        let s = f1_score(&truth_grid(&p), &p).unwrap();
        assert_eq!(s.t_total, s.n_m);
        assert!(s.tp > 0);
        assert_eq!(s.f1, 1.0);
        assert_eq!(coverage(&truth_grid(&p), &p).unwrap(), 1.0);
    }

    #[test]
    fn hand_case() {
        let s = PredictionScore::from_counts(10, 90, 100);
        assert!((s.f1 - 10.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn zero_tp_scores_zero() {
        assert_eq!(PredictionScore::from_counts(0, 80, 100).f1, 0.0);
        let p = plan();
        let free_only = truth_grid(&p).map_cells(|c| if c == CellState::Occupied { CellState::Free } else { c });
        assert_eq!(f1_score(&free_only, &p).unwrap().f1, 0.0);
    }

    #[test]
    fn unknown_map_has_no_coverage() {
        let p = plan();
        let g = Grid2D::new(10, 10, 0.2, [0.0, 0.0], CellState::Unknown);
        assert_eq!(coverage(&g, &p).unwrap(), 0.0);
    }

    #[test]
    fn half_known_interior() {
        let p = plan();
        let mut g = truth_grid(&p);
        for y in 5..10 {
            for x in 0..10 {
                g.set(x, y, CellState::Unknown);
            }
        }
        assert_eq!(coverage(&g, &p).unwrap(), 0.5);
    }

    #[test]
    fn exterior_is_ignored() {
        let p = plan();
        let mut g = truth_grid(&p);
        let before = f1_score(&g, &p).unwrap();
        for y in 0..10 {
            g.set(9, y, CellState::Occupied);
        }
        assert_eq!(f1_score(&g, &p).unwrap(), before);
    }

    #[test]
    fn mismatch_is_an_error() {
        let g = Grid2D::new(9, 10, 0.2, [0.0, 0.0], CellState::Unknown);
        assert!(f1_score(&g, &plan()).is_err());
        let g = Grid2D::new(10, 10, 0.05, [0.0, 0.0], CellState::Unknown);
        assert!(coverage(&g, &plan()).is_err());
    }
}
