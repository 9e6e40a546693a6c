use crate::dynamics::Pose;
use crate::grid::{CellState, Grid2D};

pub const EGO_SIZE: usize = 237;

/// Output geometry for an ego-centric crop. The robot heading is aligned
/// with the output's +x (column) axis, so a zero yaw leaves the source
/// orientation untouched.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoTransformSpec {
    pub out_size: usize,
    pub pad_value: CellState,
    pub robot_pose: Pose,
}

impl EgoTransformSpec {
    pub fn new(robot_pose: Pose) -> Self {
        Self {
            out_size: EGO_SIZE,
            pad_value: CellState::Unknown,
            robot_pose,
        }
    }

    /// Translation only: the crop keeps the world orientation.
    pub fn shift_only(robot_pose: Pose) -> Self {
        Self::new(Pose {
            yaw: 0.0,
            ..robot_pose
        })
    }
}

fn candidates(v: f64) -> [i64; 2] {
    let f = v.floor();
    if ((v - f) - 0.5).abs() < 1e-9 {
        [f as i64, f as i64 + 1]
    } else {
        let r = v.round() as i64;
        [r, r]
    }
}

/// Shift, rotate, pad and crop `map` around the robot. The robot cell maps
/// to the output center and the output is sampled nearest-neighbour; on an
/// exact tie the most conservative candidate wins.
pub fn ego_transform(map: &Grid2D, spec: &EgoTransformSpec) -> Grid2D {
    assert!(spec.out_size % 2 == 1, "ego output size must be odd");
    let n = spec.out_size;
    let c = (n / 2) as i64;
    let res = map.resolution();
    let (rx, ry) = map.world_to_cell_signed(spec.robot_pose.x, spec.robot_pose.y);
    let (cx, cy) = map.cell_center(rx, ry);
    let origin = [cx - (c as f64 + 0.5) * res, cy - (c as f64 + 0.5) * res];
    let mut out = Grid2D::new(n, n, res, origin, spec.pad_value);

    let yaw = spec.robot_pose.yaw;
    let cells = out.cells_mut();
    if yaw == 0.0 {
        for v in 0..n as i64 {
            for u in 0..n as i64 {
                if let Some(s) = map.get_signed(rx + u - c, ry + v - c) {
                    cells[(v * n as i64 + u) as usize] = s;
                }
            }
        }
        return out;
    }
    let (sin, cos) = yaw.sin_cos();
    let pick = |s: Option<CellState>| s.unwrap_or(spec.pad_value);
    for v in 0..n as i64 {
        for u in 0..n as i64 {
            let (du, dv) = ((u - c) as f64, (v - c) as f64);
            let sx = rx as f64 + cos * du - sin * dv;
            let sy = ry as f64 + sin * du + cos * dv;
            let (xs, ys) = (candidates(sx), candidates(sy));
            let mut best = pick(map.get_signed(xs[0], ys[0]));
            for &x in &xs {
                for &y in &ys {
                    let s = pick(map.get_signed(x, y));
                    if s.conservativeness() > best.conservativeness() {
                        best = s;
                    }
                }
            }
            cells[(v * n as i64 + u) as usize] = best;
        }
    }
    out
}

/// Paste a translation-only ego crop back onto a world-aligned raster of
/// the given shape. Cells the crop does not cover are unknown.
pub fn world_from_ego(ego: &Grid2D, width: usize, height: usize, origin: [f64; 2]) -> Grid2D {
    let res = ego.resolution();
    let mut out = Grid2D::new(width, height, res, origin, CellState::Unknown);
    let ox = ((ego.origin()[0] - origin[0]) / res).round() as i64;
    let oy = ((ego.origin()[1] - origin[1]) / res).round() as i64;
    for y in 0..height {
        for x in 0..width {
            if let Some(s) = ego.get_signed(x as i64 - ox, y as i64 - oy) {
                out.set(x, y, s);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_grid(w: usize, h: usize, seed: u64) -> Grid2D {
        let mut rng = crate::rng::seeded_rng(seed);
        let cells = (0..w * h)
            .map(|_| match rng.gen_range(0..4) {
                0 => CellState::Free,
                1 => CellState::Unknown,
                2 => CellState::Occupied,
                _ => CellState::NonFlight,
            })
            .collect();
        Grid2D::from_cells(w, h, 0.2, [0.0, 0.0], cells)
    }

    fn spec(n: usize, pose: Pose) -> EgoTransformSpec {
        EgoTransformSpec {
            out_size: n,
            pad_value: CellState::Unknown,
            robot_pose: pose,
        }
    }

    #[test]
    fn centred_zero_yaw_is_symmetric_padding() {
        let g = random_grid(11, 11, 1);
        let e = ego_transform(&g, &EgoTransformSpec::new(Pose::new(1.1, 1.1, 0.0)));
        assert_eq!(e.width(), 237);
        let off = 118 - 5;
        for v in 0..237 {
            for u in 0..237 {
                let want = if (off..off + 11).contains(&u) && (off..off + 11).contains(&v) {
                    g.get(u - off, v - off)
                } else {
                    CellState::Unknown
                };
                assert_eq!(e.get(u, v), want);
            }
        }
    }

    #[test]
    fn quarter_turn_matches_index_permutation() {
        let g = random_grid(9, 7, 2);
        let pose = Pose::new(0.9, 0.7, 0.0);
        let base = ego_transform(&g, &spec(15, pose));
        let turned = ego_transform(&g, &spec(15, Pose::new(0.9, 0.7, std::f64::consts::FRAC_PI_2)));
        let c = 7i64;
        for v in 0..15i64 {
            for u in 0..15i64 {
                // offset R(90°)(du, dv) = (-dv, du)
                let (su, sv) = (c - (v - c), c + (u - c));
                assert_eq!(
                    turned.get(u as usize, v as usize),
                    base.get(su as usize, sv as usize),
                    "({u}, {v})"
                );
            }
        }
    }

    #[test]
    fn world_round_trip_is_exact() {
        let g = random_grid(30, 20, 3);
        let pose = Pose::new(3.3, 1.5, 0.7);
        let e = ego_transform(&g, &EgoTransformSpec::shift_only(pose));
        let back = world_from_ego(&e, 30, 20, [0.0, 0.0]);
        assert_eq!(back, g);
    }

    #[test]
    fn ties_pick_the_conservative_cell() {
        assert_eq!(candidates(2.5), [2, 3]);
        assert_eq!(candidates(2.4), [2, 2]);
        let mut g = Grid2D::new(5, 5, 1.0, [0.0, 0.0], CellState::Free);
        g.set(3, 2, CellState::Occupied);
        // yaw 60°: offset (1, 0) lands on x = 2.5, a tie between columns 2 and 3
        let e = ego_transform(&g, &spec(3, Pose::new(2.5, 1.5, std::f64::consts::FRAC_PI_3)));
        assert_eq!(e.get(2, 1), CellState::Occupied);
    }
}
