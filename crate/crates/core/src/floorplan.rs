//! Procedural building floor plans.
//!
//! A plan is produced by partitioning a rectilinear footprint (a rectangle,
//! optionally with corner notches so the perimeter is non-convex) into
//! axis-aligned rooms separated by one-cell walls. Doors are carved along a
//! random spanning tree of the room adjacency graph plus a few extra edges.
//! Free-standing internal rooms and wall-flush furniture blocks are then
//! placed with at least a door width of clearance, and every candidate plan
//! is validated for connectivity and passage width before it is accepted.

use std::collections::VecDeque;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellState, Grid2D};
use crate::pgm::{self, RasterIoError};

const GENERATION_ATTEMPTS: usize = 64;

pub const PIXEL_OCCUPIED: u8 = 0;
pub const PIXEL_FREE: u8 = 255;
pub const PIXEL_EXTERIOR: u8 = 128;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("infeasible floor plan configuration: {0}")]
    Infeasible(String),
    #[error("no valid plan after {0} attempts")]
    Exhausted(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorPlanConfig {
    pub max_width_m: f64,
    pub max_height_m: f64,
    pub resolution_m: f64,
    pub min_door_width_m: f64,
    pub min_room_dim_m: f64,
    pub internal_room_prob: f64,
    /// Inclusive range of high furniture blocks per plan.
    pub furniture_count_range: (u32, u32),
    pub rng_seed: u64,
}

impl Default for FloorPlanConfig {
    fn default() -> Self {
        Self {
            max_width_m: 21.0,
            max_height_m: 11.0,
            resolution_m: 0.2,
            min_door_width_m: 0.8,
            min_room_dim_m: 2.0,
            internal_room_prob: 0.2,
            furniture_count_range: (0, 6),
            rng_seed: 0,
        }
    }
}

/// Converts a metric length to whole cells, tolerating float noise like 0.8/0.2.
fn to_cells(length_m: f64, resolution_m: f64) -> usize {
    (length_m / resolution_m - 1e-9).ceil().max(0.0) as usize
}

fn to_cells_floor(length_m: f64, resolution_m: f64) -> usize {
    (length_m / resolution_m + 1e-9).floor().max(0.0) as usize
}

impl FloorPlanConfig {
    pub fn max_cells(&self) -> (usize, usize) {
        (
            to_cells_floor(self.max_width_m, self.resolution_m),
            to_cells_floor(self.max_height_m, self.resolution_m),
        )
    }

    pub fn door_cells(&self) -> usize {
        to_cells(self.min_door_width_m, self.resolution_m)
    }

    pub fn room_cells(&self) -> usize {
        to_cells(self.min_room_dim_m, self.resolution_m)
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::Infeasible(m));
        if !(self.resolution_m > 0.0 && self.resolution_m.is_finite()) {
            return bad(format!("resolution {} must be positive", self.resolution_m));
        }
        if !(0.0..=1.0).contains(&self.internal_room_prob) {
            return bad(format!("internal_room_prob {} outside [0, 1]", self.internal_room_prob));
        }
        if self.furniture_count_range.0 > self.furniture_count_range.1 {
            return bad("furniture_count_range is reversed".into());
        }
        let door = self.door_cells();
        let room = self.room_cells();
        if door < 1 {
            return bad("minimum door width is below one cell".into());
        }
        if room < door {
            return bad(format!("rooms of {room} cells cannot hold doors of {door} cells"));
        }
        let (w, h) = self.max_cells();
        if room + 2 > w || room + 2 > h {
            return bad(format!(
                "minimum room of {room} cells plus walls does not fit in {w}x{h} cells"
            ));
        }
        Ok(())
    }
}

/// Ground-truth cell of a floor plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanCell {
    Free,
    Occupied,
    /// Outside the building perimeter.
    Exterior,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FloorPlan {
    width: usize,
    height: usize,
    resolution: f64,
    cells: Vec<PlanCell>,
    interior_cell_count: usize,
    seed: u64,
}

impl FloorPlan {
    pub fn from_cells(width: usize, height: usize, resolution: f64, cells: Vec<PlanCell>, seed: u64) -> Self {
        assert_eq!(cells.len(), width * height);
        let interior_cell_count = cells.iter().filter(|&&c| c != PlanCell::Exterior).count();
        Self {
            width,
            height,
            resolution,
            cells,
            interior_cell_count,
            seed,
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

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of interior cells (walls included), `N_M` in the F1 score.
    pub fn interior_cell_count(&self) -> usize {
        self.interior_cell_count
    }

    pub fn cells(&self) -> &[PlanCell] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> PlanCell {
        self.cells[y * self.width + x]
    }

    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> Option<PlanCell> {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            Some(self.cells[y as usize * self.width + x as usize])
        } else {
            None
        }
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        self.cells.iter().map(|&c| c != PlanCell::Exterior).collect()
    }

    pub fn free_cell_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == PlanCell::Free).count()
    }

    /// Binary obstacle grid at plan resolution with the exterior treated as
    /// occupied; this is the ground truth for collision checks.
    pub fn to_grid(&self) -> Grid2D {
        let cells = self
            .cells
            .iter()
            .map(|c| match c {
                PlanCell::Free => CellState::Free,
                PlanCell::Occupied | PlanCell::Exterior => CellState::Occupied,
            })
            .collect();
        Grid2D::from_cells(self.width, self.height, self.resolution, [0.0, 0.0], cells)
    }

    /// Split every cell into `factor × factor` sub-cells.
    pub fn upsample(&self, factor: usize) -> FloorPlan {
        assert!(factor >= 1);
        let w = self.width * factor;
        let h = self.height * factor;
        let mut cells = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                cells.push(self.get(x / factor, y / factor));
            }
        }
        FloorPlan {
            width: w,
            height: h,
            resolution: self.resolution / factor as f64,
            cells,
            interior_cell_count: self.interior_cell_count * factor * factor,
            seed: self.seed,
        }
    }
}

/// Inclusive cell rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Rect {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

impl Rect {
    fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self { x0, y0, x1, y1 }
    }
    fn w(&self) -> i64 {
        self.x1 - self.x0 + 1
    }
    fn h(&self) -> i64 {
        self.y1 - self.y0 + 1
    }
    fn area(&self) -> i64 {
        self.w() * self.h()
    }
    fn intersects(&self, o: &Rect) -> bool {
        self.x0 <= o.x1 && o.x0 <= self.x1 && self.y0 <= o.y1 && o.y0 <= self.y1
    }
    fn cells(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        (self.y0..=self.y1).flat_map(move |y| (self.x0..=self.x1).map(move |x| (x, y)))
    }
}

/// Cell canvas used while drawing; `None` marks not-yet-classified cells.
struct Canvas {
    w: i64,
    h: i64,
    cells: Vec<Option<PlanCell>>,
}

impl Canvas {
    fn new(w: i64, h: i64) -> Self {
        Self {
            w,
            h,
            cells: vec![None; (w * h) as usize],
        }
    }
    fn idx(&self, x: i64, y: i64) -> usize {
        (y * self.w + x) as usize
    }
    fn get(&self, x: i64, y: i64) -> Option<PlanCell> {
        if x < 0 || y < 0 || x >= self.w || y >= self.h {
            return Some(PlanCell::Exterior);
        }
        self.cells[self.idx(x, y)]
    }
    fn set(&mut self, x: i64, y: i64, c: PlanCell) {
        let i = self.idx(x, y);
        self.cells[i] = Some(c);
    }
    fn fill(&mut self, r: &Rect, c: PlanCell) {
        for (x, y) in r.cells() {
            self.set(x, y, c);
        }
    }
    fn is_free(&self, x: i64, y: i64) -> bool {
        self.get(x, y) == Some(PlanCell::Free)
    }
}

struct Generator<'a> {
    cfg: &'a FloorPlanConfig,
    rng: ChaCha8Rng,
    door: i64,
    room: i64,
}

/// Generate a floor plan; a pure function of `config` (seed included).
pub fn generate_plan(config: &FloorPlanConfig) -> Result<FloorPlan, PlanError> {
    config.validate()?;
    let mut gen = Generator {
        cfg: config,
        rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
        door: config.door_cells() as i64,
        room: config.room_cells() as i64,
    };
    for _ in 0..GENERATION_ATTEMPTS {
        if let Some(plan) = gen.attempt() {
            return Ok(plan);
        }
    }
    Err(PlanError::Exhausted(GENERATION_ATTEMPTS))
}

impl Generator<'_> {
    fn attempt(&mut self) -> Option<FloorPlan> {
        let (max_w, max_h) = self.cfg.max_cells();
        let (max_w, max_h) = (max_w as i64, max_h as i64);
        let min_w = (self.room + 2).max((0.6 * max_w as f64).ceil() as i64).min(max_w);
        let min_h = (self.room + 2).max((0.6 * max_h as f64).ceil() as i64).min(max_h);
        let w = self.rng.gen_range(min_w..=max_w);
        let h = self.rng.gen_range(min_h..=max_h);

        let blocks = self.footprint(w, h);
        let mut leaves = Vec::new();
        for b in blocks {
            self.partition(b, 0, &mut leaves);
        }

        let mut canvas = Canvas::new(w, h);
        for r in &leaves {
            canvas.fill(r, PlanCell::Free);
        }
        let mut reserved = Vec::new();
        if !self.carve_doors(&leaves, &mut canvas, &mut reserved) {
            return None;
        }
        // walls: every unclassified cell touching free space (8-neighbourhood)
        for y in 0..h {
            for x in 0..w {
                if canvas.get(x, y).is_some() {
                    continue;
                }
                let touches_free = (-1..=1)
                    .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
                    .any(|(dx, dy)| canvas.is_free(x + dx, y + dy));
                canvas.set(x, y, if touches_free { PlanCell::Occupied } else { PlanCell::Exterior });
            }
        }

        let mut hosts = leaves.clone();
        for leaf in &leaves {
            if self.rng.gen_bool(self.cfg.internal_room_prob) {
                if let Some(inner) = self.internal_room(leaf, &mut canvas, &mut reserved) {
                    hosts.push(inner);
                }
            }
        }
        let (lo, hi) = self.cfg.furniture_count_range;
        let furniture = self.rng.gen_range(lo..=hi);
        for _ in 0..furniture {
            self.place_furniture(&hosts, &mut canvas, &reserved);
        }

        let cells: Vec<PlanCell> = canvas.cells.iter().map(|c| c.unwrap_or(PlanCell::Exterior)).collect();
        let plan = FloorPlan::from_cells(w as usize, h as usize, self.cfg.resolution_m, cells, self.cfg.rng_seed);
        (free_space_connected(&plan) && narrowest_gap(&plan).is_none_or(|g| g >= self.door as usize)).then_some(plan)
    }

    /// Footprint as disjoint room blocks; corner notches make it non-convex.
    fn footprint(&mut self, w: i64, h: i64) -> Vec<Rect> {
        let m = self.room;
        let full = Rect::new(1, 1, w - 2, h - 2);
        let mut blocks = vec![full];
        // a notch needs a main block, a shortened wing and a visible cut
        let notchable = full.w() > 2 * m && full.h() >= m + 2;
        if !notchable || !self.rng.gen_bool(0.5) {
            return blocks;
        }
        let notch = |gen: &mut Self, blocks: &mut Vec<Rect>, right: bool| {
            let host_i = if right { blocks.len() - 1 } else { 0 };
            let host = blocks[host_i];
            if host.w() < 2 * m + 1 {
                return;
            }
            let wing_w = gen.rng.gen_range(m..=host.w() - m - 1);
            let cut_rows = gen.rng.gen_range(1..=(host.h() - m - 1).min(host.h() / 2).max(1));
            let top = gen.rng.gen_bool(0.5);
            let (main, wing_x0, wing_x1) = if right {
                let col = host.x1 - wing_w;
                (Rect::new(host.x0, host.y0, col - 1, host.y1), col + 1, host.x1)
            } else {
                let col = host.x0 + wing_w;
                (Rect::new(col + 1, host.y0, host.x1, host.y1), host.x0, col - 1)
            };
            // wing loses `cut_rows` rows plus the row taken by its new wall
            let wing = if top {
                Rect::new(wing_x0, host.y0, wing_x1, host.y1 - cut_rows - 1)
            } else {
                Rect::new(wing_x0, host.y0 + cut_rows + 1, wing_x1, host.y1)
            };
            if wing.h() < m || wing.w() < m || main.w() < m {
                return;
            }
            if right {
                blocks[host_i] = main;
                blocks.push(wing);
            } else {
                blocks[host_i] = main;
                blocks.insert(0, wing);
            }
        };
        notch(self, &mut blocks, true);
        if self.rng.gen_bool(0.4) {
            notch(self, &mut blocks, false);
        }
        blocks
    }

    fn partition(&mut self, r: Rect, depth: u32, out: &mut Vec<Rect>) {
        let m = self.room;
        let can_x = r.w() > 2 * m;
        let can_y = r.h() > 2 * m;
        let target = (2 * m + m / 2).pow(2);
        let stop = !can_x && !can_y
            || depth >= 8
            || r.area() <= target
            || (r.area() <= 3 * target && self.rng.gen_bool(0.35));
        if stop {
            out.push(r);
            return;
        }
        let vertical = match (can_x, can_y) {
            (true, false) => true,
            (false, true) => false,
            _ => {
                let longer_is_x = r.w() >= r.h();
                if self.rng.gen_bool(0.8) {
                    longer_is_x
                } else {
                    !longer_is_x
                }
            }
        };
        if vertical {
            let c = self.rng.gen_range(r.x0 + m..=r.x1 - m);
            self.partition(Rect::new(r.x0, r.y0, c - 1, r.y1), depth + 1, out);
            self.partition(Rect::new(c + 1, r.y0, r.x1, r.y1), depth + 1, out);
        } else {
            let c = self.rng.gen_range(r.y0 + m..=r.y1 - m);
            self.partition(Rect::new(r.x0, r.y0, r.x1, c - 1), depth + 1, out);
            self.partition(Rect::new(r.x0, c + 1, r.x1, r.y1), depth + 1, out);
        }
    }

    /// Door width for a gap of `available` cells, or `None` if too narrow.
    fn door_width(&mut self, available: i64) -> Option<i64> {
        if available < self.door {
            return None;
        }
        let widest = (self.door + self.door / 2).min(available);
        Some(self.rng.gen_range(self.door..=widest))
    }

    fn carve_doors(&mut self, leaves: &[Rect], canvas: &mut Canvas, reserved: &mut Vec<Rect>) -> bool {
        // (leaf a, leaf b, wall line, overlap lo, overlap hi, vertical wall?)
        let mut edges = Vec::new();
        for (i, a) in leaves.iter().enumerate() {
            for (j, b) in leaves.iter().enumerate().skip(i + 1) {
                let (lo_y, hi_y) = (a.y0.max(b.y0), a.y1.min(b.y1));
                let (lo_x, hi_x) = (a.x0.max(b.x0), a.x1.min(b.x1));
                if (a.x1 + 2 == b.x0 || b.x1 + 2 == a.x0) && hi_y - lo_y + 1 >= self.door {
                    let col = if a.x1 + 2 == b.x0 { a.x1 + 1 } else { b.x1 + 1 };
                    edges.push((i, j, col, lo_y, hi_y, true));
                } else if (a.y1 + 2 == b.y0 || b.y1 + 2 == a.y0) && hi_x - lo_x + 1 >= self.door {
                    let row = if a.y1 + 2 == b.y0 { a.y1 + 1 } else { b.y1 + 1 };
                    edges.push((i, j, row, lo_x, hi_x, false));
                }
            }
        }
        edges.shuffle(&mut self.rng);
        let mut parent: Vec<usize> = (0..leaves.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut joined = 1;
        for &(i, j, line, lo, hi, vertical) in &edges {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            let tree_edge = ri != rj;
            if !tree_edge && !self.rng.gen_bool(0.2) {
                continue;
            }
            let Some(width) = self.door_width(hi - lo + 1) else {
                continue;
            };
            let start = self.rng.gen_range(lo..=hi - width + 1);
            let d = self.door;
            if vertical {
                for y in start..start + width {
                    canvas.set(line, y, PlanCell::Free);
                }
                reserved.push(Rect::new(line - d, start, line + d, start + width - 1));
            } else {
                for x in start..start + width {
                    canvas.set(x, line, PlanCell::Free);
                }
                reserved.push(Rect::new(start, line - d, start + width - 1, line + d));
            }
            if tree_edge {
                parent[ri] = rj;
                joined += 1;
            }
        }
        joined == leaves.len()
    }

    /// Free-standing walled room inside `host` with a door; returns its interior.
    fn internal_room(&mut self, host: &Rect, canvas: &mut Canvas, reserved: &mut Vec<Rect>) -> Option<Rect> {
        let (m, d) = (self.room, self.door);
        let max_w = host.w() - 2 - 2 * d;
        let max_h = host.h() - 2 - 2 * d;
        if max_w < m || max_h < m {
            return None;
        }
        let iw = self.rng.gen_range(m..=max_w);
        let ih = self.rng.gen_range(m..=max_h);
        let x0 = self.rng.gen_range(host.x0 + d + 1..=host.x1 - d - iw);
        let y0 = self.rng.gen_range(host.y0 + d + 1..=host.y1 - d - ih);
        let inner = Rect::new(x0, y0, x0 + iw - 1, y0 + ih - 1);
        let ring = Rect::new(x0 - 1, y0 - 1, inner.x1 + 1, inner.y1 + 1);
        let clearance = Rect::new(ring.x0 - d, ring.y0 - d, ring.x1 + d, ring.y1 + d);
        if reserved.iter().any(|r| r.intersects(&clearance)) {
            return None;
        }
        for (x, y) in ring.cells() {
            if x == ring.x0 || x == ring.x1 || y == ring.y0 || y == ring.y1 {
                canvas.set(x, y, PlanCell::Occupied);
            }
        }
        let side = self.rng.gen_range(0..4);
        let along = if side < 2 { iw } else { ih };
        let width = self.door_width(along)?;
        let offset = self.rng.gen_range(0..=along - width);
        let door_rect = match side {
            0 => Rect::new(x0 + offset, ring.y0, x0 + offset + width - 1, ring.y0),
            1 => Rect::new(x0 + offset, ring.y1, x0 + offset + width - 1, ring.y1),
            2 => Rect::new(ring.x0, y0 + offset, ring.x0, y0 + offset + width - 1),
            _ => Rect::new(ring.x1, y0 + offset, ring.x1, y0 + offset + width - 1),
        };
        canvas.fill(&door_rect, PlanCell::Free);
        reserved.push(if side < 2 {
            Rect::new(door_rect.x0, door_rect.y0 - d, door_rect.x1, door_rect.y1 + d)
        } else {
            Rect::new(door_rect.x0 - d, door_rect.y0, door_rect.x1 + d, door_rect.y1)
        });
        Some(inner)
    }

    /// Place one wall-flush block (cabinet-like high furniture) in a random host.
    fn place_furniture(&mut self, hosts: &[Rect], canvas: &mut Canvas, reserved: &[Rect]) {
        let d = self.door;
        for _ in 0..30 {
            let host = hosts[self.rng.gen_range(0..hosts.len())];
            let depth = self.rng.gen_range(1..=3i64);
            let length = self.rng.gen_range(2..=6i64);
            let side = self.rng.gen_range(0..4);
            let (fw, fh) = if side < 2 { (length, depth) } else { (depth, length) };
            if fw > host.w() || fh > host.h() {
                continue;
            }
            let x0 = match side {
                2 => host.x0,
                3 => host.x1 - fw + 1,
                _ => self.rng.gen_range(host.x0..=host.x1 - fw + 1),
            };
            let y0 = match side {
                0 => host.y0,
                1 => host.y1 - fh + 1,
                _ => self.rng.gen_range(host.y0..=host.y1 - fh + 1),
            };
            let block = Rect::new(x0, y0, x0 + fw - 1, y0 + fh - 1);
            let grow = |flush: bool| if flush { 0 } else { d };
            let grown = Rect::new(
                block.x0 - grow(block.x0 == host.x0),
                block.y0 - grow(block.y0 == host.y0),
                block.x1 + grow(block.x1 == host.x1),
                block.y1 + grow(block.y1 == host.y1),
            );
            let inside = grown.x0 >= host.x0 && grown.y0 >= host.y0 && grown.x1 <= host.x1 && grown.y1 <= host.y1;
            if !inside
                || reserved.iter().any(|r| r.intersects(&grown))
                || !grown.cells().all(|(x, y)| canvas.is_free(x, y))
            {
                continue;
            }
            canvas.fill(&block, PlanCell::Occupied);
            return;
        }
    }
}

/// True if all free cells form one 4-connected component.
pub fn free_space_connected(plan: &FloorPlan) -> bool {
    let (w, h) = (plan.width(), plan.height());
    let Some(seed) = plan.cells().iter().position(|&c| c == PlanCell::Free) else {
        return false;
    };
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([seed]);
    seen[seed] = true;
    let mut reached = 1;
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let neighbours = [
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
            (y > 0).then(|| i - w),
            (y + 1 < h).then(|| i + w),
        ];
        for j in neighbours.into_iter().flatten() {
            if !seen[j] && plan.cells()[j] == PlanCell::Free {
                seen[j] = true;
                reached += 1;
                queue.push_back(j);
            }
        }
    }
    reached == plan.free_cell_count()
}

/// Shortest maximal free run (row or column) enclosed by non-free cells at
/// both ends, in cells. `None` when no run is enclosed.
pub fn narrowest_gap(plan: &FloorPlan) -> Option<usize> {
    let (w, h) = (plan.width() as i64, plan.height() as i64);
    let free = |x: i64, y: i64| plan.get_signed(x, y) == Some(PlanCell::Free);
    let mut best: Option<usize> = None;
    let mut scan = |len: i64, lines: i64, at: &dyn Fn(i64, i64) -> bool| {
        for line in 0..lines {
            let mut run = 0usize;
            for i in 0..=len {
                if i < len && at(i, line) {
                    run += 1;
                } else {
                    // a run touching the raster border is not enclosed
                    let start = i - run as i64;
                    if run > 0 && start > 0 && i < len {
                        best = Some(best.map_or(run, |b| b.min(run)));
                    }
                    run = 0;
                }
            }
        }
    };
    scan(w, h, &|i, line| free(i, line));
    scan(h, w, &|i, line| free(line, i));
    best
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct PlanMeta {
    resolution_m: f64,
    width: usize,
    height: usize,
    seed: u64,
    interior_cells: usize,
}

/// Write the plan as P5 (`0` occupied, `255` free, `128` exterior) plus a
/// `.meta` sidecar next to it.
pub fn save_plan(plan: &FloorPlan, path: &Path) -> Result<(), RasterIoError> {
    let pixels: Vec<u8> = plan
        .cells
        .iter()
        .map(|c| match c {
            PlanCell::Free => PIXEL_FREE,
            PlanCell::Occupied => PIXEL_OCCUPIED,
            PlanCell::Exterior => PIXEL_EXTERIOR,
        })
        .collect();
    pgm::write_pgm(path, plan.width, plan.height, &pixels)?;
    let meta = PlanMeta {
        resolution_m: plan.resolution,
        width: plan.width,
        height: plan.height,
        seed: plan.seed,
        interior_cells: plan.interior_cell_count,
    };
    pgm::write_sidecar(&pgm::sidecar_path(path), &meta)
}

pub fn load_plan(path: &Path) -> Result<FloorPlan, RasterIoError> {
    let (width, height, pixels) = pgm::read_pgm(path)?;
    let meta: PlanMeta = pgm::read_sidecar(&pgm::sidecar_path(path))?;
    if meta.width != width || meta.height != height {
        return Err(RasterIoError::DimensionMismatch {
            meta_w: meta.width,
            meta_h: meta.height,
            raster_w: width,
            raster_h: height,
        });
    }
    if !(meta.resolution_m > 0.0 && meta.resolution_m.is_finite()) {
        return Err(RasterIoError::Inconsistent(format!("resolution {}", meta.resolution_m)));
    }
    let mut cells = Vec::with_capacity(pixels.len());
    for (i, &p) in pixels.iter().enumerate() {
        cells.push(match p {
            PIXEL_FREE => PlanCell::Free,
            PIXEL_OCCUPIED => PlanCell::Occupied,
            PIXEL_EXTERIOR => PlanCell::Exterior,
            value => {
                return Err(RasterIoError::UnknownEncoding {
                    value,
                    x: i % width,
                    y: i / width,
                })
            }
        });
    }
    let plan = FloorPlan::from_cells(width, height, meta.resolution_m, cells, meta.seed);
    if plan.interior_cell_count != meta.interior_cells {
        return Err(RasterIoError::Inconsistent(format!(
            "sidecar lists {} interior cells, raster has {}",
            meta.interior_cells, plan.interior_cell_count
        )));
    }
    Ok(plan)
}

/// Load a plan and require a specific resolution.
pub fn load_plan_expecting(path: &Path, resolution_m: f64) -> Result<FloorPlan, RasterIoError> {
    let plan = load_plan(path)?;
    if (plan.resolution - resolution_m).abs() > 1e-9 {
        return Err(RasterIoError::ResolutionMismatch {
            expected: resolution_m,
            found: plan.resolution,
        });
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> FloorPlanConfig {
        FloorPlanConfig {
            max_width_m: 2.0,
            max_height_m: 2.0,
            min_room_dim_m: 1.6,
            internal_room_prob: 0.0,
            furniture_count_range: (0, 0),
            rng_seed: 3,
            ..FloorPlanConfig::default()
        }
    }

    #[test]
    fn single_room_is_an_empty_walled_rectangle() {
        let plan = generate_plan(&tiny_config()).unwrap();
        assert_eq!((plan.width(), plan.height()), (10, 10));
        for y in 0..10 {
            for x in 0..10 {
                let border = x == 0 || y == 0 || x == 9 || y == 9;
                let want = if border { PlanCell::Occupied } else { PlanCell::Free };
                assert_eq!(plan.get(x, y), want, "cell ({x}, {y})");
            }
        }
        assert_eq!(plan.interior_cell_count(), 100);
    }

    #[test]
    fn oversized_rooms_are_infeasible() {
        let cfg = FloorPlanConfig {
            min_room_dim_m: 5.0,
            ..tiny_config()
        };
        assert!(matches!(generate_plan(&cfg), Err(PlanError::Infeasible(_))));
    }

    #[test]
    fn sub_cell_door_is_infeasible() {
        let cfg = FloorPlanConfig {
            min_door_width_m: 0.0,
            ..FloorPlanConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(PlanError::Infeasible(_))));
    }

    #[test]
    fn cell_conversion_tolerates_float_noise() {
        assert_eq!(to_cells(0.8, 0.2), 4);
        assert_eq!(to_cells(2.0, 0.2), 10);
        assert_eq!(to_cells_floor(21.0, 0.2), 105);
        assert_eq!(to_cells_floor(11.0, 0.2), 55);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = FloorPlanConfig {
            rng_seed: 99,
            ..FloorPlanConfig::default()
        };
        assert_eq!(generate_plan(&cfg).unwrap(), generate_plan(&cfg).unwrap());
    }

    #[test]
    fn upsample_preserves_layout() {
        let plan = generate_plan(&tiny_config()).unwrap();
        let fine = plan.upsample(4);
        assert_eq!(fine.width(), 40);
        assert!((fine.resolution() - 0.05).abs() < 1e-12);
        assert_eq!(fine.get(3, 3), PlanCell::Occupied);
        assert_eq!(fine.get(4, 4), PlanCell::Free);
        assert_eq!(fine.interior_cell_count(), 1600);
    }

    #[test]
    fn gap_scan_finds_narrow_passages() {
        use PlanCell::{Free as F, Occupied as O};
        #[rustfmt::skip]
        let cells = vec![
            O, O, O, O, O,
            O, F, F, F, O,
            O, F, O, F, O,
            O, O, O, O, O,
        ];
        let plan = FloorPlan::from_cells(5, 4, 0.2, cells, 0);
        assert_eq!(narrowest_gap(&plan), Some(1));
    }
}
