//! Simulation world definitions: the on-disk text format, validation, and
//! rasterization into the simulator's ground-truth occupancy.
//!
//! ```text
//! # comment
//! name    hospital
//! resolution 0.05
//! size    20 14              # meters
//! rect    x0 y0 x1 y1        # filled axis-aligned block
//! wall    x0 y0 x1 y1 thickness
//! dyn     radius speed loop|pingpong x y x y ...
//! goal    label x y
//! spawn   x y theta
//! ```

use crate::geometry::Pose2D;
use crate::grid::{Grid, GridGeometry};
use std::fmt::{self, Write as _};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_RESOLUTION: f64 = 0.05;
const MIN_CELLS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Filled rectangle; corners stored with `x0 <= x1`, `y0 <= y1`.
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    /// Straight wall band of the given thickness, without end caps.
    Wall {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        thickness: f64,
    },
}

impl Shape {
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Shape {
        Shape::Rect {
            x0: x0.min(x1),
            y0: y0.min(y1),
            x1: x0.max(x1),
            y1: y0.max(y1),
        }
    }

    /// True if the closed shape contains the point.
    pub fn covers(&self, px: f64, py: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => px >= x0 && px <= x1 && py >= y0 && py <= y1,
            Shape::Wall {
                x0,
                y0,
                x1,
                y1,
                thickness,
            } => {
                let (dx, dy) = (x1 - x0, y1 - y0);
                let len = dx.hypot(dy);
                if len == 0.0 {
                    return (px - x0).hypot(py - y0) <= thickness / 2.0;
                }
                let (ux, uy) = (dx / len, dy / len);
                let (rx, ry) = (px - x0, py - y0);
                let along = rx * ux + ry * uy;
                let across = (rx * uy - ry * ux).abs();
                along >= 0.0 && along <= len && across <= thickness / 2.0
            }
        }
    }

    /// Axis-aligned bounds `(xmin, ymin, xmax, ymax)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
            Shape::Wall {
                x0,
                y0,
                x1,
                y1,
                thickness,
            } => {
                let h = thickness / 2.0;
                (x0.min(x1) - h, y0.min(y1) - h, x0.max(x1) + h, y0.max(y1) + h)
            }
        }
    }

    fn anchor_points(&self) -> [(f64, f64); 2] {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => [(x0, y0), (x1, y1)],
            Shape::Wall { x0, y0, x1, y1, .. } => [(x0, y0), (x1, y1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicObstacleSpec {
    pub radius: f64,
    pub speed: f64,
    /// Cycle through the waypoints (closing the polygon) instead of ping-ponging.
    pub looped: bool,
    pub waypoints: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedGoal {
    pub label: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub name: String,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub static_shapes: Vec<Shape>,
    pub dynamic_obstacles: Vec<DynamicObstacleSpec>,
    pub spawn: Pose2D,
    pub named_goals: Vec<NamedGoal>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SemanticError {
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("resolution must be positive")]
    BadResolution,
    #[error("world must be at least {MIN_CELLS}x{MIN_CELLS} cells, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error("goal out of bounds: `{0}`")]
    GoalOutOfBounds(String),
    #[error("duplicate goal label `{0}`")]
    DuplicateGoal(String),
    #[error("shape on line {0} out of bounds")]
    ShapeOutOfBounds(usize),
    #[error("dynamic obstacle on line {0} out of bounds")]
    DynamicOutOfBounds(usize),
    #[error("spawn out of bounds")]
    SpawnOutOfBounds,
    #[error("spawn cell is occupied")]
    SpawnOccupied,
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("line {line}, field `{field}`: {message}")]
    Syntax {
        line: usize,
        field: String,
        message: String,
    },
    #[error(transparent)]
    Semantic(#[from] SemanticError),
    #[error("reading world file: {0}")]
    Io(#[from] std::io::Error),
}

fn syntax(line: usize, field: &str, message: impl Into<String>) -> WorldError {
    WorldError::Syntax {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

struct Fields<'a> {
    line: usize,
    keyword: &'a str,
    rest: std::iter::Peekable<std::str::SplitWhitespace<'a>>,
}

impl<'a> Fields<'a> {
    fn number(&mut self, field: &str) -> Result<f64, WorldError> {
        let tok = self
            .rest
            .next()
            .ok_or_else(|| syntax(self.line, field, format!("`{}` expects {field}", self.keyword)))?;
        let v: f64 = tok
            .parse()
            .map_err(|_| syntax(self.line, field, format!("`{tok}` is not a number")))?;
        if !v.is_finite() {
            return Err(syntax(self.line, field, "value must be finite"));
        }
        Ok(v)
    }

    fn word(&mut self, field: &str) -> Result<&'a str, WorldError> {
        self.rest
            .next()
            .ok_or_else(|| syntax(self.line, field, format!("`{}` expects {field}", self.keyword)))
    }

    fn finish(mut self) -> Result<(), WorldError> {
        match self.rest.next() {
            Some(tok) => Err(syntax(self.line, self.keyword, format!("unexpected trailing `{tok}`"))),
            None => Ok(()),
        }
    }
}

/// Parses and validates world-file text.
pub fn parse_world(text: &str) -> Result<WorldSpec, WorldError> {
    let mut name = None;
    let mut resolution = None;
    let mut size = None;
    let mut spawn = None;
    let mut shapes: Vec<(usize, Shape)> = Vec::new();
    let mut dyns: Vec<(usize, DynamicObstacleSpec)> = Vec::new();
    let mut goals: Vec<NamedGoal> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut words = content.split_whitespace();
        let Some(keyword) = words.next() else { continue };
        let mut f = Fields {
            line,
            keyword,
            rest: words.peekable(),
        };
        match keyword {
            "name" => {
                let n = f.word("name")?;
                name = Some(n.to_string());
            }
            "resolution" => resolution = Some(f.number("resolution")?),
            "size" => size = Some((f.number("width")?, f.number("height")?)),
            "rect" => {
                let s = Shape::rect(f.number("x0")?, f.number("y0")?, f.number("x1")?, f.number("y1")?);
                shapes.push((line, s));
            }
            "wall" => {
                let (x0, y0, x1, y1) = (f.number("x0")?, f.number("y0")?, f.number("x1")?, f.number("y1")?);
                let thickness = f.number("thickness")?;
                if thickness <= 0.0 {
                    return Err(syntax(line, "thickness", "must be positive"));
                }
                shapes.push((line, Shape::Wall { x0, y0, x1, y1, thickness }));
            }
            "dyn" => {
                let radius = f.number("radius")?;
                let speed = f.number("speed")?;
                let looped = match f.word("loop")? {
                    "loop" | "true" | "1" => true,
                    "pingpong" | "false" | "0" => false,
                    other => return Err(syntax(line, "loop", format!("expected loop|pingpong, got `{other}`"))),
                };
                if radius <= 0.0 {
                    return Err(syntax(line, "radius", "must be positive"));
                }
                if speed <= 0.0 {
                    return Err(syntax(line, "speed", "must be positive"));
                }
                let mut waypoints = Vec::new();
                while f.rest.peek().is_some() {
                    waypoints.push((f.number("x")?, f.number("y")?));
                }
                if waypoints.len() < 2 {
                    return Err(syntax(line, "waypoints", "at least two waypoints required"));
                }
                dyns.push((line, DynamicObstacleSpec { radius, speed, looped, waypoints }));
            }
            "goal" => {
                let label = f.word("label")?.to_string();
                let (x, y) = (f.number("x")?, f.number("y")?);
                if goals.iter().any(|g| g.label == label) {
                    return Err(SemanticError::DuplicateGoal(label).into());
                }
                goals.push(NamedGoal { label, x, y });
            }
            "spawn" => spawn = Some(Pose2D::new(f.number("x")?, f.number("y")?, f.number("theta")?)),
            other => return Err(syntax(line, other, "unknown keyword")),
        }
        f.finish()?;
    }

    let name = name.ok_or(SemanticError::MissingKey("name"))?;
    let resolution = resolution.ok_or(SemanticError::MissingKey("resolution"))?;
    let (w_m, h_m) = size.ok_or(SemanticError::MissingKey("size"))?;
    let spawn = spawn.ok_or(SemanticError::MissingKey("spawn"))?;
    if resolution <= 0.0 {
        return Err(SemanticError::BadResolution.into());
    }
    let width = (w_m / resolution).round().max(0.0) as usize;
    let height = (h_m / resolution).round().max(0.0) as usize;
    if width < MIN_CELLS || height < MIN_CELLS {
        return Err(SemanticError::TooSmall(width, height).into());
    }

    let mut spec = WorldSpec {
        name,
        resolution,
        width,
        height,
        static_shapes: Vec::new(),
        dynamic_obstacles: dyns.iter().map(|(_, d)| d.clone()).collect(),
        spawn,
        named_goals: goals,
    };
    let (wm, hm) = (spec.world_width(), spec.world_height());
    let inside = |(x, y): (f64, f64)| x >= 0.0 && y >= 0.0 && x <= wm && y <= hm;

    for (line, s) in &shapes {
        if !s.anchor_points().into_iter().all(inside) {
            return Err(SemanticError::ShapeOutOfBounds(*line).into());
        }
    }
    for (line, d) in &dyns {
        if !d.waypoints.iter().copied().all(inside) {
            return Err(SemanticError::DynamicOutOfBounds(*line).into());
        }
    }
    for g in &spec.named_goals {
        if !inside((g.x, g.y)) {
            return Err(SemanticError::GoalOutOfBounds(g.label.clone()).into());
        }
    }
    if !spec.geometry().contains_point(spawn.x, spawn.y) {
        return Err(SemanticError::SpawnOutOfBounds.into());
    }

    spec.static_shapes = shapes.into_iter().map(|(_, s)| s).collect();
    for wall in spec.boundary_walls() {
        if !spec.static_shapes.contains(&wall) {
            spec.static_shapes.push(wall);
        }
    }

    let grid = rasterize(&spec);
    let (sx, sy) = grid
        .geometry()
        .cell_of(spawn.x, spawn.y)
        .ok_or(SemanticError::SpawnOutOfBounds)?;
    if grid.is_occupied(sx, sy) {
        return Err(SemanticError::SpawnOccupied.into());
    }
    Ok(spec)
}

pub fn load_world(path: &Path) -> Result<WorldSpec, WorldError> {
    let text = std::fs::read_to_string(path)?;
    parse_world(&text)
}

/// Resolves either a bundled world name (`hospital`, `home.world`, ...) or a path.
pub fn resolve_world(name_or_path: &str) -> Result<WorldSpec, WorldError> {
    let stem = name_or_path.trim_end_matches(".world");
    if let Some(text) = bundled_world(stem) {
        if !Path::new(name_or_path).exists() {
            return parse_world(text);
        }
    }
    load_world(Path::new(name_or_path))
}

pub const BUNDLED_WORLDS: &[&str] = &["hospital", "home", "loop"];

pub fn bundled_world(name: &str) -> Option<&'static str> {
    match name {
        "hospital" => Some(include_str!("../worlds/hospital.world")),
        "home" => Some(include_str!("../worlds/home.world")),
        "loop" => Some(include_str!("../worlds/loop.world")),
        _ => None,
    }
}

impl WorldSpec {
    pub fn geometry(&self) -> GridGeometry {
        GridGeometry::new(self.resolution, self.width, self.height)
    }

    pub fn world_width(&self) -> f64 {
        self.width as f64 * self.resolution
    }

    pub fn world_height(&self) -> f64 {
        self.height as f64 * self.resolution
    }

    pub fn goal(&self, label: &str) -> Option<(f64, f64)> {
        self.named_goals
            .iter()
            .find(|g| g.label == label)
            .map(|g| (g.x, g.y))
    }

    /// One-cell-thick walls along the four world edges.
    pub fn boundary_walls(&self) -> [Shape; 4] {
        let r = self.resolution;
        let (w, h) = (self.world_width(), self.world_height());
        let half = r / 2.0;
        [
            Shape::Wall { x0: 0.0, y0: half, x1: w, y1: half, thickness: r },
            Shape::Wall { x0: 0.0, y0: h - half, x1: w, y1: h - half, thickness: r },
            Shape::Wall { x0: half, y0: 0.0, x1: half, y1: h, thickness: r },
            Shape::Wall { x0: w - half, y0: 0.0, x1: w - half, y1: h, thickness: r },
        ]
    }

    /// Serializes back into world-file text.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for WorldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        writeln!(s, "name {}", self.name)?;
        writeln!(s, "resolution {}", self.resolution)?;
        writeln!(s, "size {} {}", self.world_width(), self.world_height())?;
        for shape in &self.static_shapes {
            match shape {
                Shape::Rect { x0, y0, x1, y1 } => writeln!(s, "rect {x0} {y0} {x1} {y1}")?,
                Shape::Wall { x0, y0, x1, y1, thickness } => {
                    writeln!(s, "wall {x0} {y0} {x1} {y1} {thickness}")?
                }
            }
        }
        for d in &self.dynamic_obstacles {
            write!(s, "dyn {} {} {}", d.radius, d.speed, if d.looped { "loop" } else { "pingpong" })?;
            for (x, y) in &d.waypoints {
                write!(s, " {x} {y}")?;
            }
            writeln!(s)?;
        }
        for g in &self.named_goals {
            writeln!(s, "goal {} {} {}", g.label, g.x, g.y)?;
        }
        writeln!(s, "spawn {} {} {}", self.spawn.x, self.spawn.y, self.spawn.theta)?;
        f.write_str(&s)
    }
}

/// The simulator's omniscient occupancy. Never handed to the navigation stack.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthGrid(pub Grid<bool>);

impl GroundTruthGrid {
    pub fn geometry(&self) -> GridGeometry {
        self.0.geometry
    }

    pub fn is_occupied(&self, cx: usize, cy: usize) -> bool {
        *self.0.get(cx, cy)
    }

    pub fn is_occupied_index(&self, idx: usize) -> bool {
        self.0.cells[idx]
    }

    /// Out-of-bounds points count as occupied.
    pub fn is_occupied_at(&self, x: f64, y: f64) -> bool {
        match self.geometry().cell_of(x, y) {
            Some((cx, cy)) => self.is_occupied(cx, cy),
            None => true,
        }
    }

    pub fn occupied_count(&self) -> usize {
        self.0.cells.iter().filter(|&&c| c).count()
    }
}

/// Marks every cell whose center lies inside some static shape, plus the
/// border ring.
pub fn rasterize(spec: &WorldSpec) -> GroundTruthGrid {
    let geom = spec.geometry();
    let mut grid = Grid::filled(geom, false);
    let res = geom.resolution;
    for shape in &spec.static_shapes {
        let (xmin, ymin, xmax, ymax) = shape.bounds();
        let cx0 = ((xmin / res).floor() as i64 - 1).max(0) as usize;
        let cy0 = ((ymin / res).floor() as i64 - 1).max(0) as usize;
        let cx1 = (((xmax / res).ceil() as i64) + 1).clamp(0, geom.width as i64 - 1) as usize;
        let cy1 = (((ymax / res).ceil() as i64) + 1).clamp(0, geom.height as i64 - 1) as usize;
        for cy in cy0..=cy1 {
            for cx in cx0..=cx1 {
                let (px, py) = geom.center(cx, cy);
                if shape.covers(px, py) {
                    grid.set(cx, cy, true);
                }
            }
        }
    }
    for cx in 0..geom.width {
        grid.set(cx, 0, true);
        grid.set(cx, geom.height - 1, true);
    }
    for cy in 0..geom.height {
        grid.set(0, cy, true);
        grid.set(geom.width - 1, cy, true);
    }
    GroundTruthGrid(grid)
}
