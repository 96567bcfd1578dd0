//! Log-odds occupancy mapping from depth scans, scan-match localization,
//! and loop-closure drift correction.

use crate::distance::squared_edt;
use crate::geometry::{normalize_angle, Pose2D};
use crate::grid::{Grid, GridGeometry};
use crate::sim::DepthScan;
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const L_MIN: f64 = -5.0;
pub const L_MAX: f64 = 5.0;
pub const HIT_UPDATE: f64 = 0.85;
pub const MISS_UPDATE: f64 = -0.4;
/// Fewer matched beams than this means the scan is too feature-poor to trust.
pub const K_MIN: usize = 8;
/// Minimum match score against the start region to accept a revisit.
pub const K_LOOP: usize = 16;
/// Odometric distance to the start pose under which a revisit is considered.
pub const REVISIT_RADIUS: f64 = 1.0;
/// Fraction of each scan's heading correction folded into the yaw bias.
pub const BIAS_GAIN: f64 = 0.02;
/// Largest yaw bias the session will learn, per propagation step.
pub const MAX_TURN_BIAS: f64 = 0.001;
/// Half-widths of the localization search window around the prior.
pub const SEARCH_XY: f64 = 0.2;
pub const SEARCH_THETA: f64 = 0.1;
/// Half-width of the field window built while mapping: sensor range plus
/// search window plus the distance cap.
pub const MAPPING_FIELD_REACH: f64 = 4.5;
/// Re-association passes per scan.
pub const ASSOCIATION_ROUNDS: usize = 3;
/// Spread of the likelihood field (m).
pub const FIT_SIGMA: f64 = 0.025;
/// Returns landing farther than this from mapped structure are left out of
/// matching (unmapped surfaces, people).
pub const ASSOCIATION_GATE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellState {
    Free,
    Occupied,
    Unknown,
}

impl CellState {
    pub fn to_byte(self) -> u8 {
        match self {
            CellState::Free => 0,
            CellState::Occupied => 100,
            CellState::Unknown => 255,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(CellState::Free),
            100 => Some(CellState::Occupied),
            255 => Some(CellState::Unknown),
            _ => None,
        }
    }
}

/// Tri-state map handed to the costmap and persisted to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid(pub Grid<CellState>);

impl OccupancyGrid {
    pub fn geometry(&self) -> GridGeometry {
        self.0.geometry
    }

    pub fn state(&self, cx: usize, cy: usize) -> CellState {
        *self.0.get(cx, cy)
    }

    pub fn count(&self, s: CellState) -> usize {
        self.0.cells.iter().filter(|&&c| c == s).count()
    }
}

/// Per-cell occupancy belief.
#[derive(Debug, Clone, PartialEq)]
pub struct MapBelief {
    pub geometry: GridGeometry,
    pub log_odds: Vec<f64>,
    pub hits: Vec<u32>,
    pub misses: Vec<u32>,
}

/// How far past the measured range a return is attributed when choosing the
/// hit cell, in cells.
pub const ENDPOINT_DEPTH: f64 = 0.25;

/// World-frame point `depth` metres past a beam's measured range.
pub fn beam_endpoint(pose: &Pose2D, bearing: f64, range: f64, depth: f64) -> (f64, f64) {
    let a = pose.theta + bearing;
    let r = range + depth;
    (pose.x + r * a.cos(), pose.y + r * a.sin())
}

impl MapBelief {
    pub fn new(geometry: GridGeometry) -> Self {
        let n = geometry.len();
        Self {
            geometry,
            log_odds: vec![0.0; n],
            hits: vec![0; n],
            misses: vec![0; n],
        }
    }

    /// Belief seeded from a finished tri-state map (e.g. one loaded from disk).
    pub fn from_occupancy(grid: &OccupancyGrid) -> Self {
        let mut m = Self::new(grid.geometry());
        for (i, c) in grid.0.cells.iter().enumerate() {
            match c {
                CellState::Occupied => {
                    m.log_odds[i] = L_MAX;
                    m.hits[i] = 1;
                }
                CellState::Free => {
                    m.log_odds[i] = L_MIN;
                    m.misses[i] = 1;
                }
                CellState::Unknown => {}
            }
        }
        m
    }

    pub fn is_occupied_index(&self, i: usize) -> bool {
        self.log_odds[i] > 0.0
    }

    pub fn observed(&self, i: usize) -> bool {
        self.hits[i] + self.misses[i] > 0
    }

    /// Occupied test for a world point; outside the map is never occupied.
    pub fn occupied_at(&self, x: f64, y: f64) -> bool {
        self.geometry.index_of(x, y).is_some_and(|i| self.is_occupied_index(i))
    }

    fn update(&mut self, i: usize, hit: bool) {
        if hit {
            self.log_odds[i] = (self.log_odds[i] + HIT_UPDATE).min(L_MAX);
            self.hits[i] += 1;
        } else {
            self.log_odds[i] = (self.log_odds[i] + MISS_UPDATE).max(L_MIN);
            self.misses[i] += 1;
        }
    }

    /// Updates the belief with one scan taken from `pose`.
    pub fn integrate_scan(&mut self, pose: &Pose2D, scan: &DepthScan) {
        let res = self.geometry.resolution;
        for beam in &scan.beams {
            let angle = pose.theta + beam.bearing;
            match beam.range {
                Some(r) => {
                    let cells: Vec<_> = self.geometry.ray(pose.position(), angle, r + ENDPOINT_DEPTH * res).collect();
                    let (ex, ey) = beam_endpoint(pose, beam.bearing, r, ENDPOINT_DEPTH * res);
                    let end = self.geometry.cell_of(ex, ey);
                    for (k, c) in cells.iter().enumerate() {
                        let i = self.geometry.index(c.cx, c.cy);
                        let last = k + 1 == cells.len();
                        if last && end == Some((c.cx, c.cy)) {
                            self.update(i, true);
                        } else {
                            self.update(i, false);
                        }
                    }
                }
                None => {
                    let cells: Vec<_> = self.geometry.ray(pose.position(), angle, scan.max_range).collect();
                    for c in cells {
                        let i = self.geometry.index(c.cx, c.cy);
                        self.update(i, false);
                    }
                }
            }
        }
    }

    /// Occupied iff log-odds > 0, free iff < 0, unknown if never observed.
    pub fn to_occupancy(&self) -> OccupancyGrid {
        let cells = (0..self.geometry.len())
            .map(|i| {
                let l = self.log_odds[i];
                if !self.observed(i) {
                    CellState::Unknown
                } else if l > 0.0 {
                    CellState::Occupied
                } else if l < 0.0 {
                    CellState::Free
                } else {
                    CellState::Unknown
                }
            })
            .collect();
        OccupancyGrid(Grid {
            geometry: self.geometry,
            cells,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Tracking,
    LowFeatures,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: Pose2D,
    pub confidence: Confidence,
}

impl PoseEstimate {
    pub fn tracking(pose: Pose2D) -> Self {
        Self {
            pose,
            confidence: Confidence::Tracking,
        }
    }
}

/// Search window of the hit-count matcher used for revisit detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchWindow {
    pub half_xy: f64,
    pub xy_step: f64,
    pub half_theta: f64,
    pub theta_step: f64,
}

/// Counts beam endpoints that land in cells `occupied` reports as occupied.
pub fn scan_score(geom: &GridGeometry, occupied: impl Fn(usize) -> bool, pose: &Pose2D, scan: &DepthScan) -> usize {
    scan.beams
        .iter()
        .filter_map(|b| b.range.map(|r| beam_endpoint(pose, b.bearing, r, ENDPOINT_DEPTH * geom.resolution)))
        .filter(|&(x, y)| geom.index_of(x, y).is_some_and(&occupied))
        .count()
}

/// Exhaustive search; returns the best pose and its score. Ties go to the
/// candidate closest to `prior`, then to search order.
fn correlative_search(
    geom: &GridGeometry,
    occupied: &dyn Fn(usize) -> bool,
    prior: Pose2D,
    scan: &DepthScan,
    window: &MatchWindow,
) -> (Pose2D, usize) {
    let res = geom.resolution;
    let nxy = (window.half_xy / window.xy_step).round() as i64;
    let nth = (window.half_theta / window.theta_step).round() as i64;
    let hits: Vec<(f64, f64)> = scan
        .beams
        .iter()
        .filter_map(|b| b.range.map(|r| (b.bearing, r + ENDPOINT_DEPTH * res)))
        .collect();
    let mut best = (prior, 0usize, i64::MAX);
    for kt in -nth..=nth {
        let th = prior.theta + kt as f64 * window.theta_step;
        let rel: Vec<(f64, f64)> = hits
            .iter()
            .map(|&(b, r)| (r * (th + b).cos(), r * (th + b).sin()))
            .collect();
        for ky in -nxy..=nxy {
            for kx in -nxy..=nxy {
                let px = prior.x + kx as f64 * window.xy_step;
                let py = prior.y + ky as f64 * window.xy_step;
                let score = rel
                    .iter()
                    .filter(|&&(dx, dy)| geom.index_of(px + dx, py + dy).is_some_and(occupied))
                    .count();
                let dist = kx * kx + ky * ky + kt * kt;
                if score > best.1 || (score == best.1 && dist < best.2) {
                    best = (Pose2D::new(px, py, th), score, dist);
                }
            }
        }
    }
    (best.0, best.1)
}

/// Scan-match localization against a map, falling back to the odometry prior
/// when the scan carries too few features.
pub fn localize(map: &MapBelief, prior: Pose2D, scan: &DepthScan) -> PoseEstimate {
    ScanMatcher::new(map).localize(map, prior, scan)
}

/// Spread of the odometry prior over one scan interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPrior {
    pub sigma_xy: f64,
    pub sigma_theta: f64,
}

impl MotionPrior {
    /// Against a finished map: the prior only breaks ties along degenerate
    /// directions such as corridors.
    pub fn localization() -> Self {
        Self {
            sigma_xy: 0.1,
            sigma_theta: 0.05,
        }
    }

    /// While building the map, where a confident wrong match gets baked in:
    /// widened by how far odometry says the chair moved since
    /// the last scan; a chair standing still keeps its pose.
    pub fn for_motion(travel: f64, turn: f64) -> Self {
        Self {
            sigma_xy: 0.004 + 0.05 * travel,
            sigma_theta: 0.003 + 0.02 * turn.abs() + 0.05 * travel,
        }
    }
}

impl MotionPrior {
    fn penalty(&self, p: &Pose2D, anchor: &Pose2D) -> f64 {
        let dxy2 = (p.x - anchor.x).powi(2) + (p.y - anchor.y).powi(2);
        let dth = normalize_angle(p.theta - anchor.theta);
        0.5 * (dxy2 / (self.sigma_xy * self.sigma_xy) + (dth / self.sigma_theta).powi(2))
    }
}

/// Coarse-to-fine search of a likelihood field built from the map, traded
/// off against the odometry prior. Build once per map version and reuse.
#[derive(Debug, Clone)]
pub struct ScanMatcher {
    field: LikelihoodField,
    pub prior: MotionPrior,
    /// Half-widths of the search window around the prior.
    pub search_xy: f64,
    pub search_theta: f64,
    pub k_min: usize,
}

impl ScanMatcher {
    /// For localization against a finished map.
    pub fn new(map: &MapBelief) -> Self {
        Self {
            field: LikelihoodField::new(map, FIT_SIGMA),
            prior: MotionPrior::localization(),
            search_xy: SEARCH_XY,
            search_theta: SEARCH_THETA,
            k_min: K_MIN,
        }
    }

    /// For tracking against the map being built: a tight prior and a window
    /// matched to it.
    pub fn for_mapping(map: &MapBelief, prior: &Pose2D, motion: MotionPrior) -> Self {
        let reach = MAPPING_FIELD_REACH;
        Self {
            field: LikelihoodField::around(map, FIT_SIGMA, prior.position(), reach),
            prior: motion,
            search_xy: 0.1,
            search_theta: 0.05,
            k_min: K_MIN,
        }
    }

    pub fn localize(&self, map: &MapBelief, prior: Pose2D, scan: &DepthScan) -> PoseEstimate {
        if !map.geometry.contains_point(prior.x, prior.y) {
            return PoseEstimate {
                pose: prior,
                confidence: Confidence::Lost,
            };
        }
        let mut pose = prior;
        let mut used: Option<Vec<usize>> = None;
        for _ in 0..ASSOCIATION_ROUNDS {
            let keep = self.associate(map, &pose, scan);
            if used.as_ref() == Some(&keep) {
                break;
            }
            if keep.len() < self.k_min {
                if used.is_none() {
                    return PoseEstimate {
                        pose: prior,
                        confidence: Confidence::LowFeatures,
                    };
                }
                break;
            }
            let subset = DepthScan {
                beams: keep.iter().map(|&k| scan.beams[k]).collect(),
                ..scan.clone()
            };
            let (wxy, wth) = (self.search_xy, self.search_theta);
            let coarse = self.refine(prior, &subset, wxy, 0.025, wth, 0.01, Some(prior));
            let fine = self.refine(coarse, &subset, 0.025, 0.005, 0.01, 0.002, Some(prior));
            pose = Pose2D::new(
                fine.x.clamp(prior.x - wxy, prior.x + wxy),
                fine.y.clamp(prior.y - wxy, prior.y + wxy),
                prior.theta + normalize_angle(fine.theta - prior.theta).clamp(-wth, wth),
            );
            used = Some(keep);
        }
        PoseEstimate::tracking(pose)
    }

    /// Indices of returns that plausibly come from mapped structure when the
    /// scan is taken from `pose`.
    fn associate(&self, map: &MapBelief, pose: &Pose2D, scan: &DepthScan) -> Vec<usize> {
        let res = map.geometry.resolution;
        let steps = (ASSOCIATION_GATE / (res / 2.0)).ceil() as usize;
        scan.beams
            .iter()
            .enumerate()
            .filter(|(_, b)| {
                b.range.is_some_and(|r| {
                    let (x, y) = beam_endpoint(pose, b.bearing, r, 0.0);
                    let seen = map.geometry.index_of(x, y).is_some_and(|i| map.observed(i));
                    // an unobserved endpoint still counts when the beam has just
                    // passed through mapped structure, i.e. it lands behind a face
                    let behind = || {
                        (1..=steps).any(|k| {
                            let (px, py) = beam_endpoint(pose, b.bearing, r, -(k as f64) * res / 2.0);
                            map.geometry.index_of(px, py).is_some_and(|i| map.is_occupied_index(i))
                        })
                    };
                    self.field.distance(x, y) <= ASSOCIATION_GATE && (seen || behind())
                })
            })
            .map(|(k, _)| k)
            .collect()
    }

    /// Likelihood-field agreement of `scan` taken from `pose`, one point per
    /// perfectly placed return.
    pub fn fit(&self, pose: &Pose2D, scan: &DepthScan) -> f64 {
        self.field.score(pose, scan)
    }

    /// Grid search of the smooth fit around `pose`; strict improvement only,
    /// so the starting pose wins ties. With an `anchor` the motion prior is
    /// charged relative to it.
    #[allow(clippy::too_many_arguments)]
    pub fn refine(
        &self,
        pose: Pose2D,
        scan: &DepthScan,
        half_xy: f64,
        step_xy: f64,
        half_th: f64,
        step_th: f64,
        anchor: Option<Pose2D>,
    ) -> Pose2D {
        let nxy = (half_xy / step_xy).round() as i64;
        let nth = (half_th / step_th).round() as i64;
        let returns: Vec<(f64, f64)> = scan.beams.iter().filter_map(|b| b.range.map(|r| (b.bearing, r))).collect();
        let penalty = |p: &Pose2D| anchor.map_or(0.0, |a| self.prior.penalty(p, &a));
        let mut best = (pose, self.field.score(&pose, scan) - penalty(&pose));
        let mut offsets = Vec::with_capacity(returns.len());
        for kt in -nth..=nth {
            let theta = pose.theta + kt as f64 * step_th;
            offsets.clear();
            offsets.extend(returns.iter().map(|&(b, r)| (r * (theta + b).cos(), r * (theta + b).sin())));
            for ky in -nxy..=nxy {
                for kx in -nxy..=nxy {
                    let cand = Pose2D::new(pose.x + kx as f64 * step_xy, pose.y + ky as f64 * step_xy, theta);
                    let s = self.field.score_offsets(cand.x, cand.y, &offsets) - penalty(&cand);
                    if s > best.1 {
                        best = (cand, s);
                    }
                }
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub tick: u64,
    pub odom_pose: Pose2D,
    pub corrected_pose: Pose2D,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub entries: Vec<TrajectoryEntry>,
}

impl TrajectoryLog {
    /// Appends an entry; ticks must be strictly increasing.
    pub fn push(&mut self, entry: TrajectoryEntry) {
        if let Some(last) = self.entries.last() {
            assert!(entry.tick > last.tick, "trajectory ticks must increase");
        }
        self.entries.push(entry);
    }

    pub fn last(&self) -> Option<&TrajectoryEntry> {
        self.entries.last()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A recognized return to the start region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Revisit {
    /// Where the start-region match places the robot.
    pub matched_pose: Pose2D,
    pub score: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoopClosureError {
    #[error("no revisit of the start region detected; loop closure skipped")]
    NoRevisit,
}

#[derive(Debug, Clone)]
pub struct LoopClosure {
    pub trajectory: TrajectoryLog,
    pub map: MapBelief,
    /// Correction applied at the loop end (matched minus estimated).
    pub correction: Pose2D,
}

/// Spreads the loop-end error linearly over the trajectory and rebuilds the
/// map by re-integrating every logged scan at its corrected pose.
pub fn close_loop(
    map: &MapBelief,
    traj: &TrajectoryLog,
    scans: &[DepthScan],
    revisit: Option<&Revisit>,
) -> Result<LoopClosure, LoopClosureError> {
    let revisit = revisit.ok_or(LoopClosureError::NoRevisit)?;
    let end = traj.last().ok_or(LoopClosureError::NoRevisit)?.corrected_pose;
    let err = Pose2D {
        x: revisit.matched_pose.x - end.x,
        y: revisit.matched_pose.y - end.y,
        theta: normalize_angle(revisit.matched_pose.theta - end.theta),
    };
    let n = traj.len();
    let mut corrected = traj.clone();
    for (k, e) in corrected.entries.iter_mut().enumerate() {
        let f = if n > 1 { k as f64 / (n - 1) as f64 } else { 1.0 };
        let p = e.corrected_pose;
        e.corrected_pose = Pose2D::new(p.x + f * err.x, p.y + f * err.y, p.theta + f * err.theta);
    }
    let mut rebuilt = MapBelief::new(map.geometry);
    for (e, scan) in corrected.entries.iter().zip(scans) {
        rebuilt.integrate_scan(&e.corrected_pose, scan);
    }
    Ok(LoopClosure {
        trajectory: corrected,
        map: rebuilt,
        correction: err,
    })
}

/// Scores returns by `exp(-d²/2σ²)` with `d` the bilinearly interpolated
/// distance to the nearest occupied-cell face. May cover only a window of the
/// map; outside it every point is far from structure.
#[derive(Debug, Clone)]
struct LikelihoodField {
    /// Local dimensions of the covered window.
    geometry: GridGeometry,
    /// Map cell of the window's lower-left corner.
    origin: (usize, usize),
    dist: Vec<f64>,
    sigma: f64,
}

impl LikelihoodField {
    /// Distance to the nearest occupied-cell face, signed so that it crosses
    /// zero at the face; stored at cell centres and capped at 1 m. Unknown
    /// cells nearer to structure than to observed free space count as inside.
    fn new(map: &MapBelief, sigma: f64) -> Self {
        let g = map.geometry;
        Self::over(map, sigma, (0, 0), (g.width, g.height))
    }

    /// Covers the square of half-width `half` metres around `(x, y)`.
    fn around(map: &MapBelief, sigma: f64, (x, y): (f64, f64), half: f64) -> Self {
        let g = map.geometry;
        let cell = |v: f64, n: usize| ((v / g.resolution).floor().max(0.0) as usize).min(n);
        let lo = (cell(x - half, g.width), cell(y - half, g.height));
        let hi = (cell(x + half, g.width - 1) + 1, cell(y + half, g.height - 1) + 1);
        Self::over(map, sigma, lo, hi)
    }

    fn over(map: &MapBelief, sigma: f64, lo: (usize, usize), hi: (usize, usize)) -> Self {
        let g = map.geometry;
        let local = GridGeometry::new(g.resolution, hi.0.saturating_sub(lo.0), hi.1.saturating_sub(lo.1));
        let index = |k: usize| {
            let (cx, cy) = local.coords(k);
            g.index(cx + lo.0, cy + lo.1)
        };
        let occupied: Vec<bool> = (0..local.len()).map(|k| map.is_occupied_index(index(k))).collect();
        let free: Vec<bool> = (0..local.len()).map(|k| map.observed(index(k)) && !occupied[k]).collect();
        let to_occupied = squared_edt(local.width, local.height, &occupied);
        let to_free = squared_edt(local.width, local.height, &free);
        let half = g.resolution / 2.0;
        let dist = (0..local.len())
            .map(|k| {
                let inside = occupied[k] || (!free[k] && to_occupied[k] < to_free[k]);
                let d = if inside {
                    half - (to_free[k] as f64).sqrt() * g.resolution
                } else {
                    (to_occupied[k] as f64).sqrt() * g.resolution - half
                };
                d.clamp(-1.0, 1.0)
            })
            .collect();
        Self {
            geometry: local,
            origin: lo,
            dist,
            sigma,
        }
    }

    fn distance(&self, x: f64, y: f64) -> f64 {
        self.signed_distance(x, y).abs()
    }

    /// Negative inside occupied structure.
    fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let g = &self.geometry;
        let fx = x / g.resolution - 0.5 - self.origin.0 as f64;
        let fy = y / g.resolution - 0.5 - self.origin.1 as f64;
        let (x0, y0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - x0, fy - y0);
        let at = |cx: f64, cy: f64| {
            if g.contains_cell(cx as i64, cy as i64) {
                self.dist[g.index(cx as usize, cy as usize)]
            } else {
                1.0
            }
        };
        let a = at(x0, y0) * (1.0 - tx) + at(x0 + 1.0, y0) * tx;
        let b = at(x0, y0 + 1.0) * (1.0 - tx) + at(x0 + 1.0, y0 + 1.0) * tx;
        a * (1.0 - ty) + b * ty
    }

    fn score_offsets(&self, x: f64, y: f64, offsets: &[(f64, f64)]) -> f64 {
        let k = 1.0 / (2.0 * self.sigma * self.sigma);
        offsets
            .iter()
            .map(|&(dx, dy)| {
                let d = self.distance(x + dx, y + dy);
                (-d * d * k).exp()
            })
            .sum()
    }

    fn score(&self, pose: &Pose2D, scan: &DepthScan) -> f64 {
        scan.beams
            .iter()
            .filter_map(|b| b.range.map(|r| beam_endpoint(pose, b.bearing, r, 0.0)))
            .map(|(x, y)| {
                let d = self.distance(x, y);
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .sum()
    }
}

/// Incremental mapping session: odometry propagation, scan-to-map matching,
/// map integration, and loop-closure bookkeeping.
#[derive(Debug, Clone)]
pub struct MappingSession {
    pub map: MapBelief,
    pub trajectory: TrajectoryLog,
    pub scans: Vec<DepthScan>,
    pub start_pose: Pose2D,
    odom_pose: Pose2D,
    estimate: PoseEstimate,
    /// Number of leading scans forming the loop-closure reference region.
    pub start_region_scans: usize,
    start_region: Option<MapBelief>,
    left_start: bool,
    /// Learned odometry yaw error per propagation step.
    turn_bias: f64,
    steps_since_scan: u32,
}

impl MappingSession {
    pub fn new(geometry: GridGeometry, start_pose: Pose2D) -> Self {
        Self {
            map: MapBelief::new(geometry),
            trajectory: TrajectoryLog::default(),
            scans: Vec::new(),
            start_pose,
            odom_pose: start_pose,
            estimate: PoseEstimate::tracking(start_pose),
            start_region_scans: 25,
            start_region: None,
            left_start: false,
            turn_bias: 0.0,
            steps_since_scan: 0,
        }
    }

    pub fn estimate(&self) -> PoseEstimate {
        self.estimate
    }

    pub fn odom_pose(&self) -> Pose2D {
        self.odom_pose
    }

    /// Current estimate of the odometry yaw error per propagation step.
    pub fn turn_bias(&self) -> f64 {
        self.turn_bias
    }

    /// Dead-reckons the raw odometry, and the estimate with the learned yaw
    /// bias removed.
    pub fn propagate(&mut self, delta: &Pose2D) {
        self.odom_pose = self.odom_pose.compose(delta);
        let corrected = Pose2D::new(delta.x, delta.y, delta.theta - self.turn_bias);
        self.estimate.pose = self.estimate.pose.compose(&corrected);
        self.steps_since_scan += 1;
    }

    /// Matches a scan against the map so far, then integrates it.
    pub fn add_scan(&mut self, tick: u64, scan: DepthScan) -> PoseEstimate {
        let prior = self.estimate.pose;
        let est = if self.scans.is_empty() {
            PoseEstimate::tracking(prior)
        } else {
            let last = self.trajectory.entries.last().map_or(prior, |e| e.corrected_pose);
            let motion = MotionPrior::for_motion(
                last.distance_to(prior.x, prior.y),
                normalize_angle(prior.theta - last.theta),
            );
            ScanMatcher::for_mapping(&self.map, &prior, motion).localize(&self.map, prior, &scan)
        };
        if est.confidence == Confidence::Tracking && self.steps_since_scan > 0 {
            let per_step = normalize_angle(est.pose.theta - prior.theta) / f64::from(self.steps_since_scan);
            self.turn_bias = (self.turn_bias - BIAS_GAIN * per_step).clamp(-MAX_TURN_BIAS, MAX_TURN_BIAS);
        }
        self.steps_since_scan = 0;
        self.estimate = est;
        self.map.integrate_scan(&est.pose, &scan);
        self.trajectory.push(TrajectoryEntry {
            tick,
            odom_pose: self.odom_pose,
            corrected_pose: est.pose,
        });
        self.scans.push(scan);
        if self.scans.len() == self.start_region_scans {
            let mut region = MapBelief::new(self.map.geometry);
            for (e, s) in self.trajectory.entries.iter().zip(&self.scans) {
                region.integrate_scan(&e.corrected_pose, s);
            }
            self.start_region = Some(region);
        }
        if est.pose.distance_to(self.start_pose.x, self.start_pose.y) > 2.0 * REVISIT_RADIUS {
            self.left_start = true;
        }
        est
    }

    /// Checks whether the latest scan re-observes the start region.
    pub fn detect_revisit(&self) -> Option<Revisit> {
        let region = self.start_region.as_ref()?;
        let scan = self.scans.last()?;
        let here = self.estimate.pose;
        if !self.left_start || here.distance_to(self.start_pose.x, self.start_pose.y) >= REVISIT_RADIUS {
            return None;
        }
        let geom = region.geometry;
        let occupied = |i: usize| region.log_odds[i] > 0.0;
        let coarse = MatchWindow {
            half_xy: 0.5,
            xy_step: geom.resolution,
            half_theta: 0.2,
            theta_step: 0.02,
        };
        let (pose, score) = correlative_search(&geom, &occupied, here, scan, &coarse);
        if score < K_LOOP {
            return None;
        }
        let matched = ScanMatcher::new(region).refine(pose, scan, 0.04, 0.005, 0.02, 0.0025, None);
        Some(Revisit {
            matched_pose: matched,
            score,
        })
    }

    /// Attempts loop closure; on success replaces map, trajectory and estimate.
    pub fn close_loop(&mut self) -> Result<LoopClosure, LoopClosureError> {
        let revisit = self.detect_revisit();
        let closure = close_loop(&self.map, &self.trajectory, &self.scans, revisit.as_ref())?;
        self.map = closure.map.clone();
        self.trajectory = closure.trajectory.clone();
        if let Some(last) = self.trajectory.last() {
            self.estimate = PoseEstimate::tracking(last.corrected_pose);
        }
        Ok(closure)
    }
}

#[derive(Debug, Error)]
pub enum MapFileError {
    #[error("map file io: {0}")]
    Io(#[from] io::Error),
    #[error("map file truncated or malformed: {0}")]
    Format(String),
}

const HEADER_LEN: usize = 16;

/// Binary layout: resolution (f64 LE), width (u32 LE), height (u32 LE), then
/// one byte per cell in row-major order.
pub fn encode_grid_bytes(geom: &GridGeometry, cells: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + geom.len());
    out.extend_from_slice(&geom.resolution.to_le_bytes());
    out.extend_from_slice(&(geom.width as u32).to_le_bytes());
    out.extend_from_slice(&(geom.height as u32).to_le_bytes());
    out.extend(cells);
    out
}

pub fn decode_grid_bytes(bytes: &[u8]) -> Result<(GridGeometry, &[u8]), MapFileError> {
    if bytes.len() < HEADER_LEN {
        return Err(MapFileError::Format("header shorter than 16 bytes".into()));
    }
    let res = f64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes"));
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    if !(res > 0.0) || !res.is_finite() {
        return Err(MapFileError::Format(format!("bad resolution {res}")));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != w * h {
        return Err(MapFileError::Format(format!("expected {} cells, found {}", w * h, body.len())));
    }
    Ok((GridGeometry::new(res, w, h), body))
}

impl OccupancyGrid {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode_grid_bytes(&self.geometry(), self.0.cells.iter().map(|c| c.to_byte()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MapFileError> {
        let (geometry, body) = decode_grid_bytes(bytes)?;
        let cells = body
            .iter()
            .map(|&b| CellState::from_byte(b).ok_or_else(|| MapFileError::Format(format!("bad cell byte {b}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(OccupancyGrid(Grid { geometry, cells }))
    }
}

/// Path of the named-goal sidecar written next to a map file.
pub fn goals_sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".goals");
    s.into()
}

/// Writes the map file and its `label x y` goal sidecar.
pub fn save_map(path: &Path, grid: &OccupancyGrid, goals: &[(String, f64, f64)]) -> Result<(), MapFileError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&grid.to_bytes())?;
    let mut side = String::new();
    for (label, x, y) in goals {
        side.push_str(&format!("{label} {x} {y}\n"));
    }
    std::fs::write(goals_sidecar(path), side)?;
    Ok(())
}

pub fn load_map(path: &Path) -> Result<(OccupancyGrid, Vec<(String, f64, f64)>), MapFileError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let grid = OccupancyGrid::from_bytes(&bytes)?;
    let mut goals = Vec::new();
    if let Ok(text) = std::fs::read_to_string(goals_sidecar(path)) {
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| s.parse::<f64>().map_err(|_| MapFileError::Format(format!("bad goal line `{line}`")));
            if parts.len() != 3 {
                return Err(MapFileError::Format(format!("bad goal line `{line}`")));
            }
            goals.push((parts[0].to_string(), parse(parts[1])?, parse(parts[2])?));
        }
    }
    Ok((grid, goals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{sense_depth, Beam, SensorModel};
    use crate::worldfile::{parse_world, rasterize};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_beam(range: Option<f64>) -> DepthScan {
        DepthScan {
            timestamp: 0.0,
            max_range: 3.0,
            beams: vec![Beam { bearing: 0.0, range }],
        }
    }

    #[test]
    fn single_beam_update() {
        let mut m = MapBelief::new(GridGeometry::new(0.05, 100, 100));
        let pose = Pose2D::new(0.5 + 1e-7, 0.52, 0.0);
        m.integrate_scan(&pose, &single_beam(Some(1.0)));
        let decreased = m.log_odds.iter().filter(|&&l| l < 0.0).count();
        let increased: Vec<usize> = (0..m.log_odds.len()).filter(|&i| m.log_odds[i] > 0.0).collect();
        assert_eq!(decreased, 20);
        assert_eq!(increased, vec![m.geometry.index(30, 10)]);
    }

    #[test]
    fn repeated_scans_saturate() {
        let mut m = MapBelief::new(GridGeometry::new(0.05, 100, 100));
        let pose = Pose2D::new(0.5 + 1e-7, 0.52, 0.0);
        for _ in 0..100 {
            m.integrate_scan(&pose, &single_beam(Some(1.0)));
        }
        assert!(m.log_odds.iter().all(|&l| (L_MIN..=L_MAX).contains(&l)));
        assert_eq!(m.log_odds[m.geometry.index(30, 10)], L_MAX);
        assert_eq!(m.log_odds[m.geometry.index(15, 10)], L_MIN);
        assert_eq!(m.hits[m.geometry.index(30, 10)], 100);
    }

    #[test]
    fn sentinel_beams_only_clear() {
        let mut m = MapBelief::new(GridGeometry::new(0.05, 100, 100));
        m.integrate_scan(&Pose2D::new(0.5 + 1e-7, 0.52, 0.0), &single_beam(None));
        assert!(m.log_odds.iter().all(|&l| l <= 0.0));
        assert_eq!(m.misses.iter().filter(|&&c| c > 0).count(), 61);
    }

    #[test]
    fn transient_and_persistent_cells() {
        let mut m = MapBelief::new(GridGeometry::new(1.0, 1, 1));
        m.update(0, true);
        for _ in 0..9 {
            m.update(0, false);
        }
        // 0.85 - 9·0.4 = -2.75
        assert!((m.log_odds[0] + 2.75).abs() < 1e-12);
        assert_eq!(m.to_occupancy().state(0, 0), CellState::Free);

        let mut person = MapBelief::new(GridGeometry::new(1.0, 1, 1));
        for k in 0..30 {
            person.update(0, k % 10 == 4);
        }
        assert!(person.log_odds[0] < 0.0);
        assert_eq!(person.to_occupancy().state(0, 0), CellState::Free);

        let mut wall = MapBelief::new(GridGeometry::new(1.0, 1, 1));
        for _ in 0..50 {
            wall.update(0, true);
        }
        assert_eq!(wall.to_occupancy().state(0, 0), CellState::Occupied);
        let fresh = MapBelief::new(GridGeometry::new(0.05, 10, 10));
        assert_eq!(fresh.to_occupancy().count(CellState::Unknown), 100);
    }

    fn corner_world() -> (crate::worldfile::GroundTruthGrid, MapBelief) {
        let spec = parse_world(
            "name c\nresolution 0.05\nsize 8 8\nrect 5 0 8 8\nrect 0 5 8 8\nrect 3 1 3.4 2.2\nspawn 3.5 3.5 0.6\n",
        )
        .unwrap();
        let grid = rasterize(&spec);
        let mut map = MapBelief::new(grid.geometry());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..24 {
            let pose = Pose2D::new(3.0, 3.0, k as f64 * 0.27);
            let scan = sense_depth(pose, &grid, &[], &SensorModel::noiseless(), 0.0, &mut rng);
            map.integrate_scan(&pose, &scan);
        }
        (grid, map)
    }

    #[test]
    fn localize_at_truth() {
        let (grid, map) = corner_world();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = Pose2D::new(3.2, 3.1, 0.7);
        let scan = sense_depth(truth, &grid, &[], &SensorModel::noiseless(), 0.0, &mut rng);
        let est = localize(&map, truth, &scan);
        assert_eq!(est.confidence, Confidence::Tracking);
        assert!(est.pose.distance_to(truth.x, truth.y) <= 0.05);
        assert!(normalize_angle(est.pose.theta - truth.theta).abs() <= 0.025);
    }

    #[test]
    fn localize_recovers_lateral_offset() {
        let (grid, map) = corner_world();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = Pose2D::new(3.6, 3.0, 0.8);
        let scan = sense_depth(truth, &grid, &[], &SensorModel::noiseless(), 0.0, &mut rng);
        let prior = Pose2D::new(3.7, 3.1, 0.8);
        // brute-force score surface: the truth-aligned cells dominate
        let occ = |i: usize| map.log_odds[i] > 0.0;
        let at_truth = scan_score(&map.geometry, occ, &truth, &scan);
        let at_prior = scan_score(&map.geometry, occ, &prior, &scan);
        assert!(at_truth > at_prior);
        let est = localize(&map, prior, &scan);
        assert!(est.pose.distance_to(truth.x, truth.y) <= 0.05, "{:?}", est.pose);
        // never outside the search window
        assert!((est.pose.x - prior.x).abs() <= 0.2 + 1e-9 && (est.pose.y - prior.y).abs() <= 0.2 + 1e-9);
    }

    #[test]
    fn feature_poor_scan_falls_back_to_prior() {
        let map = MapBelief::new(GridGeometry::new(0.05, 200, 200));
        let scan = DepthScan {
            timestamp: 0.0,
            max_range: 3.0,
            beams: (0..64).map(|k| Beam { bearing: k as f64 * 0.02, range: None }).collect(),
        };
        let prior = Pose2D::new(5.0, 5.0, 0.3);
        let est = localize(&map, prior, &scan);
        assert_eq!(est.confidence, Confidence::LowFeatures);
        assert_eq!(est.pose, prior);
        let lost = localize(&map, Pose2D::new(-1.0, 5.0, 0.0), &scan);
        assert_eq!(lost.confidence, Confidence::Lost);
    }

    #[test]
    fn close_loop_refuses_without_revisit() {
        let map = MapBelief::new(GridGeometry::new(0.05, 20, 20));
        let err = close_loop(&map, &TrajectoryLog::default(), &[], None).unwrap_err();
        assert_eq!(err, LoopClosureError::NoRevisit);
    }

    #[test]
    fn close_loop_with_zero_error_keeps_map() {
        let (grid, _) = corner_world();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut map = MapBelief::new(grid.geometry());
        let mut traj = TrajectoryLog::default();
        let mut scans = Vec::new();
        for k in 0..10u64 {
            let p = Pose2D::new(3.0, 3.0, k as f64 * 0.6);
            let s = sense_depth(p, &grid, &[], &SensorModel::default(), 0.0, &mut rng);
            map.integrate_scan(&p, &s);
            traj.push(TrajectoryEntry { tick: k, odom_pose: p, corrected_pose: p });
            scans.push(s);
        }
        let end = traj.last().unwrap().corrected_pose;
        let closure = close_loop(&map, &traj, &scans, Some(&Revisit { matched_pose: end, score: 40 })).unwrap();
        assert_eq!(closure.map, map);
        assert_eq!(closure.correction, Pose2D::default());
    }

    #[test]
    fn map_bytes_round_trip() {
        let (_, map) = corner_world();
        let occ = map.to_occupancy();
        let bytes = occ.to_bytes();
        assert_eq!(bytes.len(), 16 + occ.geometry().len());
        assert_eq!(OccupancyGrid::from_bytes(&bytes).unwrap(), occ);
        assert!(OccupancyGrid::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn save_and_load_with_goals() {
        let (_, map) = corner_world();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.map");
        let goals = vec![("desk".to_string(), 1.5, 2.25)];
        save_map(&path, &map.to_occupancy(), &goals).unwrap();
        let (grid, loaded) = load_map(&path).unwrap();
        assert_eq!(grid, map.to_occupancy());
        assert_eq!(loaded, goals);
    }
}
