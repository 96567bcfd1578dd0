//! Traversal-cost lattice: a static layer inflated from the occupancy map and
//! a sparse dynamic overlay marked and cleared from live depth scans.

use crate::distance::{squared_edt, FAR};
use crate::geometry::Pose2D;
use crate::grid::GridGeometry;
use crate::mapper::{beam_endpoint, ENDPOINT_DEPTH, encode_grid_bytes, CellState, OccupancyGrid};
use crate::sim::DepthScan;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;
use thiserror::Error;

pub const LETHAL: u8 = 254;
pub const INSCRIBED: u8 = 253;
pub const UNKNOWN: u8 = 255;
pub const FREE: u8 = 0;
/// Obstacle points farther than this from the robot are not marked.
pub const MARK_THRESHOLD: f64 = 2.5;

const DIST_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InflationParams {
    pub chair_width: f64,
    pub inscribed_radius: f64,
    pub inflation_radius: f64,
    pub decay_rate: f64,
}

impl Default for InflationParams {
    fn default() -> Self {
        Self::for_chair_width(0.7)
    }
}

impl InflationParams {
    pub fn for_chair_width(chair_width: f64) -> Self {
        Self {
            chair_width,
            inscribed_radius: chair_width / 2.0,
            inflation_radius: 1.2 * chair_width,
            decay_rate: 3.0,
        }
    }

    /// Cost of a free cell whose nearest lethal cell center is `d` meters away.
    pub fn cost_at_distance(&self, d: f64) -> u8 {
        if d <= self.inscribed_radius + DIST_EPS {
            INSCRIBED
        } else if d <= self.inflation_radius + DIST_EPS {
            (252.0 * (-self.decay_rate * (d - self.inscribed_radius)).exp()).round() as u8
        } else {
            FREE
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostmapError {
    #[error("point ({0:.3}, {1:.3}) is outside the costmap")]
    OutOfBounds(f64, f64),
}

/// Cells whose composed cost changed in a dynamic-layer update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DynamicChange {
    pub changed: Vec<usize>,
}

impl DynamicChange {
    pub fn is_empty(&self) -> bool {
        self.changed.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Costmap {
    geometry: GridGeometry,
    params: InflationParams,
    static_costs: Arc<Vec<u8>>,
    marks: BTreeSet<usize>,
    dynamic: HashMap<usize, u8>,
    kernel: Arc<Vec<(i64, i64, u8)>>,
}

impl Costmap {
    /// Inflates every occupied cell of `grid`; unknown cells stay unknown.
    pub fn build_static(grid: &OccupancyGrid, params: InflationParams) -> Self {
        let g = grid.geometry();
        let seeds: Vec<bool> = grid.0.cells.iter().map(|&c| c == CellState::Occupied).collect();
        let d2 = squared_edt(g.width, g.height, &seeds);
        let costs = grid
            .0
            .cells
            .iter()
            .zip(&d2)
            .map(|(&c, &k)| match c {
                CellState::Occupied => LETHAL,
                CellState::Unknown => UNKNOWN,
                CellState::Free if k >= FAR => FREE,
                CellState::Free => params.cost_at_distance((k as f64).sqrt() * g.resolution),
            })
            .collect();
        Self::from_static_costs(g, params, costs)
    }

    pub fn from_static_costs(geometry: GridGeometry, params: InflationParams, costs: Vec<u8>) -> Self {
        assert_eq!(costs.len(), geometry.len());
        Self {
            geometry,
            params,
            static_costs: Arc::new(costs),
            marks: BTreeSet::new(),
            dynamic: HashMap::new(),
            kernel: Arc::new(inflation_kernel(&params, geometry.resolution)),
        }
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn params(&self) -> InflationParams {
        self.params
    }

    pub fn static_cost(&self, i: usize) -> u8 {
        self.static_costs[i]
    }

    /// Composed cost: max of static and dynamic layers. Unknown cells stay
    /// unknown unless the dynamic layer says otherwise.
    pub fn cost(&self, i: usize) -> u8 {
        let s = self.static_costs[i];
        match (s, self.dynamic.get(&i)) {
            (_, None) => s,
            (UNKNOWN, Some(&d)) => d,
            (_, Some(&d)) => s.max(d),
        }
    }

    /// Composed cost with unknown read as inscribed.
    pub fn planning_cost(&self, i: usize) -> u8 {
        match self.cost(i) {
            UNKNOWN => INSCRIBED,
            c => c,
        }
    }

    pub fn is_traversable(&self, i: usize) -> bool {
        self.planning_cost(i) < INSCRIBED
    }

    /// Planning cost of the cell containing a world point.
    pub fn cost_at(&self, x: f64, y: f64) -> Result<u8, CostmapError> {
        self.geometry
            .index_of(x, y)
            .map(|i| self.planning_cost(i))
            .ok_or(CostmapError::OutOfBounds(x, y))
    }

    pub fn dynamic_marks(&self) -> impl Iterator<Item = usize> + '_ {
        self.marks.iter().copied()
    }

    pub fn dynamic_cost(&self, i: usize) -> Option<u8> {
        self.dynamic.get(&i).copied()
    }

    /// Map-frame hit points of a scan taken at `pose`.
    pub fn obstacle_points(pose: &Pose2D, scan: &DepthScan) -> Vec<(f64, f64)> {
        scan.beams
            .iter()
            .filter_map(|b| b.range.map(|r| beam_endpoint(pose, b.bearing, r, 0.0)))
            .collect()
    }

    /// Clears dynamic cells every beam passes strictly before its hit, then
    /// marks hit points within [`MARK_THRESHOLD`].
    pub fn mark_and_clear(&mut self, pose: &Pose2D, points: &[(f64, f64)], scan: &DepthScan) -> DynamicChange {
        let before = self.marks.clone();
        let g = self.geometry;
        let res = g.resolution;
        for beam in &scan.beams {
            let angle = pose.theta + beam.bearing;
            let reach = beam.range.unwrap_or(scan.max_range);
            let hit_cell = beam
                .range
                .and_then(|r| {
                    let (x, y) = beam_endpoint(pose, beam.bearing, r, ENDPOINT_DEPTH * res);
                    g.index_of(x, y)
                });
            for c in g.ray(pose.position(), angle, reach + res / 2.0) {
                let i = g.index(c.cx, c.cy);
                if Some(i) == hit_cell {
                    break;
                }
                self.marks.remove(&i);
            }
        }
        for &(x, y) in points {
            if pose.distance_to(x, y) > MARK_THRESHOLD {
                continue;
            }
            // nudge onto the surface cell, matching how the mapper attributes hits
            let a = (y - pose.y).atan2(x - pose.x);
            let (x, y) = (x + 0.5 * res * a.cos(), y + 0.5 * res * a.sin());
            if let Some(i) = g.index_of(x, y) {
                if !self.near_static_lethal(i) {
                    self.marks.insert(i);
                }
            }
        }
        self.refresh_dynamic(&before)
    }

    /// Drops dynamic marks farther than `radius` from `center`.
    pub fn clear_dynamic_beyond(&mut self, center: (f64, f64), radius: f64) -> DynamicChange {
        let before = self.marks.clone();
        let g = self.geometry;
        self.marks.retain(|&i| {
            let (x, y) = g.center_of_index(i);
            (x - center.0).hypot(y - center.1) <= radius
        });
        self.refresh_dynamic(&before)
    }

    pub fn clear_dynamic(&mut self) -> DynamicChange {
        let before = std::mem::take(&mut self.marks);
        self.refresh_dynamic(&before)
    }

    /// Marks a single cell directly (fixtures and tests).
    pub fn mark_cell(&mut self, i: usize) -> DynamicChange {
        let before = self.marks.clone();
        self.marks.insert(i);
        self.refresh_dynamic(&before)
    }

    fn near_static_lethal(&self, i: usize) -> bool {
        let (cx, cy) = self.geometry.coords(i);
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                let (x, y) = (cx as i64 + dx, cy as i64 + dy);
                if self.geometry.contains_cell(x, y)
                    && self.static_costs[self.geometry.index(x as usize, y as usize)] == LETHAL
                {
                    return true;
                }
            }
        }
        false
    }

    /// Re-inflates the overlay around marks that were added or removed.
    fn refresh_dynamic(&mut self, before: &BTreeSet<usize>) -> DynamicChange {
        let touched: Vec<usize> = before.symmetric_difference(&self.marks).copied().collect();
        if touched.is_empty() {
            return DynamicChange::default();
        }
        let g = self.geometry;
        let mut region = BTreeSet::new();
        for &m in &touched {
            let (mx, my) = g.coords(m);
            for &(dx, dy, _) in self.kernel.iter() {
                let (x, y) = (mx as i64 + dx, my as i64 + dy);
                if g.contains_cell(x, y) {
                    region.insert(g.index(x as usize, y as usize));
                }
            }
        }
        let old: Vec<(usize, u8)> = region.iter().map(|&i| (i, self.cost(i))).collect();
        for i in &region {
            self.dynamic.remove(i);
        }
        // every mark whose kernel overlaps the region contributes
        let reach = self.kernel.iter().map(|k| k.0.abs().max(k.1.abs())).max().unwrap_or(0);
        for &m in &self.marks {
            let (mx, my) = g.coords(m);
            let near = touched.iter().any(|&t| {
                let (tx, ty) = g.coords(t);
                (tx as i64 - mx as i64).abs() <= 2 * reach && (ty as i64 - my as i64).abs() <= 2 * reach
            });
            if !near {
                continue;
            }
            for &(dx, dy, c) in self.kernel.iter() {
                let (x, y) = (mx as i64 + dx, my as i64 + dy);
                if !g.contains_cell(x, y) {
                    continue;
                }
                let i = g.index(x as usize, y as usize);
                if region.contains(&i) {
                    let e = self.dynamic.entry(i).or_insert(0);
                    *e = (*e).max(c);
                }
            }
        }
        let changed = old.into_iter().filter(|&(i, c)| self.cost(i) != c).map(|(i, _)| i).collect();
        DynamicChange { changed }
    }

    /// Composed costs in the map file layout (resolution, width, height, bytes).
    pub fn to_bytes(&self) -> Vec<u8> {
        encode_grid_bytes(&self.geometry, (0..self.geometry.len()).map(|i| self.cost(i)))
    }
}

/// Offsets around a lethal cell with their inflated cost, center included.
fn inflation_kernel(params: &InflationParams, res: f64) -> Vec<(i64, i64, u8)> {
    let r = (params.inflation_radius / res).ceil() as i64 + 1;
    let mut k = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let c = if dx == 0 && dy == 0 {
                LETHAL
            } else {
                params.cost_at_distance(((dx * dx + dy * dy) as f64).sqrt() * res)
            };
            if c > 0 {
                k.push((dx, dy, c));
            }
        }
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::sim::Beam;

    fn free_grid(w: usize, h: usize) -> OccupancyGrid {
        OccupancyGrid(Grid::filled(GridGeometry::new(0.05, w, h), CellState::Free))
    }

    #[test]
    fn all_free_is_zero() {
        let cm = Costmap::build_static(&free_grid(20, 20), InflationParams::default());
        assert!((0..400).all(|i| cm.cost(i) == 0));
    }

    #[test]
    fn single_lethal_ring_values() {
        let mut g = free_grid(60, 60);
        g.0.set(30, 30, CellState::Occupied);
        let cm = Costmap::build_static(&g, InflationParams::default());
        let at = |dx: usize| cm.cost(cm.geometry().index(30 + dx, 30));
        assert_eq!(at(0), LETHAL);
        assert_eq!(at(6), INSCRIBED); // 0.30 m
        assert_eq!(at(7), INSCRIBED); // 0.35 m, on the inscribed radius
        assert_eq!(at(8), 217); // 0.40 m
        assert_eq!(at(18), 0); // 0.90 m
    }

    #[test]
    fn unknown_stays_unknown_and_plans_as_inscribed() {
        let mut g = free_grid(40, 40);
        g.0.set(5, 5, CellState::Unknown);
        let cm = Costmap::build_static(&g, InflationParams::default());
        assert_eq!(cm.cost(cm.geometry().index(5, 5)), UNKNOWN);
        assert_eq!(cm.cost_at(0.27, 0.27), Ok(INSCRIBED));
        assert_eq!(cm.cost_at(1.5, 1.5), Ok(0));
        assert!(cm.cost_at(-0.1, 0.5).is_err());
    }

    #[test]
    fn inflation_params_follow_chair_width() {
        let p = InflationParams::default();
        assert!((p.inflation_radius - 0.84).abs() < 1e-12);
        assert!(p.inflation_radius > p.chair_width);
        assert_eq!(p.inscribed_radius, 0.35);
    }

    fn scan_with(bearing: f64, range: Option<f64>) -> DepthScan {
        DepthScan {
            timestamp: 0.0,
            max_range: 3.0,
            beams: vec![Beam { bearing, range }],
        }
    }

    #[test]
    fn mark_then_clear_restores_static() {
        let g = free_grid(100, 100);
        let mut cm = Costmap::build_static(&g, InflationParams::default());
        let pose = Pose2D::new(1.0, 2.5, 0.0);
        let s = scan_with(0.0, Some(1.0));
        let pts = Costmap::obstacle_points(&pose, &s);
        let ch = cm.mark_and_clear(&pose, &pts, &s);
        assert!(!ch.is_empty());
        let hit = cm.geometry().index_of(2.01, 2.5).unwrap();
        assert_eq!(cm.cost(hit), LETHAL);
        assert_eq!(cm.cost(cm.geometry().index_of(1.61, 2.5).unwrap()), 217);
        let clear = scan_with(0.0, None);
        cm.mark_and_clear(&pose, &[], &clear);
        assert!((0..cm.geometry().len()).all(|i| cm.cost(i) == cm.static_cost(i)));
    }

    #[test]
    fn far_points_are_not_marked() {
        let mut cm = Costmap::build_static(&free_grid(100, 100), InflationParams::default());
        let pose = Pose2D::new(0.5, 2.5, 0.0);
        let s = scan_with(0.0, Some(2.8));
        let pts = Costmap::obstacle_points(&pose, &s);
        assert!(cm.mark_and_clear(&pose, &pts, &s).is_empty());
        assert_eq!(cm.dynamic_marks().count(), 0);
    }

    #[test]
    fn clearing_beyond_radius() {
        let mut cm = Costmap::build_static(&free_grid(100, 100), InflationParams::default());
        let near = cm.geometry().index(20, 20);
        let far = cm.geometry().index(90, 90);
        cm.mark_cell(near);
        cm.mark_cell(far);
        cm.clear_dynamic_beyond((1.0, 1.0), 3.0);
        assert_eq!(cm.dynamic_marks().collect::<Vec<_>>(), vec![near]);
        cm.clear_dynamic();
        assert!((0..cm.geometry().len()).all(|i| cm.cost(i) == 0));
    }

    #[test]
    fn overlapping_marks_keep_max_after_partial_clear() {
        let mut cm = Costmap::build_static(&free_grid(80, 80), InflationParams::default());
        let a = cm.geometry().index(30, 30);
        let b = cm.geometry().index(36, 30);
        cm.mark_cell(a);
        cm.mark_cell(b);
        let mut solo = Costmap::build_static(&free_grid(80, 80), InflationParams::default());
        solo.mark_cell(a);
        cm.clear_dynamic_beyond(cm.geometry().center_of_index(a), 0.1);
        for i in 0..cm.geometry().len() {
            assert_eq!(cm.cost(i), solo.cost(i));
        }
    }
}
