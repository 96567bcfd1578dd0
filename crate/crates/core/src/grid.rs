//! Row-major cell lattice anchored at the world origin, plus grid raycasting.
//!
//! Cell `(cx, cy)` covers `[cx·res, (cx+1)·res) × [cy·res, (cy+1)·res)`; its
//! center is at `((cx+0.5)·res, (cy+0.5)·res)`. Row `cy` is stored contiguously.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
}

impl GridGeometry {
    pub fn new(resolution: f64, width: usize, height: usize) -> Self {
        Self {
            resolution,
            width,
            height,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, cx: usize, cy: usize) -> usize {
        cy * self.width + cx
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.width, idx / self.width)
    }

    pub fn contains_cell(&self, cx: i64, cy: i64) -> bool {
        cx >= 0 && cy >= 0 && (cx as usize) < self.width && (cy as usize) < self.height
    }

    pub fn world_width(&self) -> f64 {
        self.width as f64 * self.resolution
    }

    pub fn world_height(&self) -> f64 {
        self.height as f64 * self.resolution
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.world_width() && y < self.world_height()
    }

    /// Cell containing a world point, if inside the lattice.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let cx = (x / self.resolution).floor();
        let cy = (y / self.resolution).floor();
        if cx.is_finite() && cy.is_finite() && self.contains_cell(cx as i64, cy as i64) {
            Some((cx as usize, cy as usize))
        } else {
            None
        }
    }

    pub fn index_of(&self, x: f64, y: f64) -> Option<usize> {
        self.cell_of(x, y).map(|(cx, cy)| self.index(cx, cy))
    }

    pub fn center(&self, cx: usize, cy: usize) -> (f64, f64) {
        (
            (cx as f64 + 0.5) * self.resolution,
            (cy as f64 + 0.5) * self.resolution,
        )
    }

    pub fn center_of_index(&self, idx: usize) -> (f64, f64) {
        let (cx, cy) = self.coords(idx);
        self.center(cx, cy)
    }

    /// Cells traversed by a ray from `origin` along `angle`, in order, up to
    /// `max_len` meters or the lattice edge.
    pub fn ray(&self, origin: (f64, f64), angle: f64, max_len: f64) -> RayCells {
        RayCells::new(*self, origin, angle, max_len)
    }
}

/// Generic lattice of per-cell values.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    pub geometry: GridGeometry,
    pub cells: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(geometry: GridGeometry, value: T) -> Self {
        Self {
            geometry,
            cells: vec![value; geometry.len()],
        }
    }
}

impl<T> Grid<T> {
    pub fn get(&self, cx: usize, cy: usize) -> &T {
        &self.cells[self.geometry.index(cx, cy)]
    }

    pub fn set(&mut self, cx: usize, cy: usize, value: T) {
        let i = self.geometry.index(cx, cy);
        self.cells[i] = value;
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn resolution(&self) -> f64 {
        self.geometry.resolution
    }
}

/// One step of a grid traversal: the cell and the ray parameter (meters) at
/// which the ray enters it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayStep {
    pub cx: usize,
    pub cy: usize,
    pub t_enter: f64,
}

/// Amanatides–Woo voxel traversal.
#[derive(Debug, Clone)]
pub struct RayCells {
    geom: GridGeometry,
    cx: i64,
    cy: i64,
    step_x: i64,
    step_y: i64,
    t_max_x: f64,
    t_max_y: f64,
    t_delta_x: f64,
    t_delta_y: f64,
    t_enter: f64,
    max_len: f64,
    done: bool,
}

impl RayCells {
    fn new(geom: GridGeometry, origin: (f64, f64), angle: f64, max_len: f64) -> Self {
        let res = geom.resolution;
        let (dy, dx) = angle.sin_cos();
        let cx = (origin.0 / res).floor() as i64;
        let cy = (origin.1 / res).floor() as i64;
        let (step_x, t_max_x, t_delta_x) = axis_setup(origin.0, dx, cx, res);
        let (step_y, t_max_y, t_delta_y) = axis_setup(origin.1, dy, cy, res);
        Self {
            geom,
            cx,
            cy,
            step_x,
            step_y,
            t_max_x,
            t_max_y,
            t_delta_x,
            t_delta_y,
            t_enter: 0.0,
            max_len,
            done: !geom.contains_cell(cx, cy),
        }
    }
}

fn axis_setup(o: f64, d: f64, c: i64, res: f64) -> (i64, f64, f64) {
    if d > 0.0 {
        let boundary = (c + 1) as f64 * res;
        (1, (boundary - o) / d, res / d)
    } else if d < 0.0 {
        let boundary = c as f64 * res;
        (-1, (boundary - o) / d, -res / d)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}

impl Iterator for RayCells {
    type Item = RayStep;

    fn next(&mut self) -> Option<RayStep> {
        if self.done || self.t_enter > self.max_len {
            return None;
        }
        let out = RayStep {
            cx: self.cx as usize,
            cy: self.cy as usize,
            t_enter: self.t_enter,
        };
        if self.t_max_x < self.t_max_y {
            self.t_enter = self.t_max_x;
            self.t_max_x += self.t_delta_x;
            self.cx += self.step_x;
        } else {
            self.t_enter = self.t_max_y;
            self.t_max_y += self.t_delta_y;
            self.cy += self.step_y;
        }
        if !self.geom.contains_cell(self.cx, self.cy) {
            self.done = true;
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_lookup_and_centers() {
        let g = GridGeometry::new(0.05, 200, 100);
        assert_eq!(g.cell_of(0.0, 0.0), Some((0, 0)));
        assert_eq!(g.cell_of(9.999, 4.999), Some((199, 99)));
        assert_eq!(g.cell_of(10.0, 1.0), None);
        assert_eq!(g.cell_of(-0.01, 1.0), None);
        let (x, y) = g.center(3, 4);
        assert!((x - 0.175).abs() < 1e-12 && (y - 0.225).abs() < 1e-12);
        assert_eq!(g.coords(g.index(7, 9)), (7, 9));
    }

    #[test]
    fn ray_along_axis_visits_consecutive_cells() {
        let g = GridGeometry::new(0.05, 100, 100);
        let cells: Vec<_> = g.ray((0.5 + 1e-7, 0.52), 0.0, 1.0).collect();
        assert_eq!(cells.first().map(|c| (c.cx, c.cy)), Some((10, 10)));
        assert_eq!(cells.len(), 21);
        for (k, c) in cells.iter().enumerate() {
            assert_eq!(c.cx, 10 + k);
            assert_eq!(c.cy, 10);
        }
    }

    #[test]
    fn diagonal_ray_is_4_connected() {
        let g = GridGeometry::new(0.1, 50, 50);
        let cells: Vec<_> = g.ray((0.51, 0.53), 0.7, 2.0).collect();
        for w in cells.windows(2) {
            let d = (w[0].cx as i64 - w[1].cx as i64).abs() + (w[0].cy as i64 - w[1].cy as i64).abs();
            assert_eq!(d, 1);
            assert!(w[1].t_enter >= w[0].t_enter);
        }
    }

    #[test]
    fn ray_stops_at_lattice_edge() {
        let g = GridGeometry::new(1.0, 5, 5);
        let cells: Vec<_> = g.ray((2.5, 2.5), std::f64::consts::PI, 100.0).collect();
        assert_eq!(cells.len(), 3);
        assert_eq!(cells.last().map(|c| c.cx), Some(0));
    }
}
