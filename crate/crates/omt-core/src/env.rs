//! Discrete indoor navigation environment.
//!
//! Cells are 0.5 m squares; the agent turns in 45° increments and tilts its
//! view in 30° increments. Layouts are procedurally generated from a layout
//! seed, objects sit on free cells at one of three height levels, and an
//! episode succeeds when the agent picks `Done` while the target object is
//! visible: within 1.5 m, inside the ±45° field of view, unobstructed, and
//! at the height level matching the current tilt.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CELL_METERS: f64 = 0.5;
pub const VISIBLE_METERS: f64 = 1.5;
/// Episode step cap; exceeding it ends the episode as a failure.
pub const MAX_EPISODE_STEPS: u32 = 300;
/// Context grids project detections into this many rows/columns.
pub const GRID_SIZE: usize = 16;

const FOV_HALF_DEG: f64 = 45.0;
const ANGLE_EPS: f64 = 1e-6;
const STREAM_LAYOUT_GEN: u64 = 6;

// ── cells, poses, actions ────────────────────────────────────────────

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Cell {
    Free,
    Wall,
    Obstacle,
}

impl Cell {
    pub fn blocks(self) -> bool {
        !matches!(self, Cell::Free)
    }
}

/// Vertical placement of an object; visible only at the matching tilt.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum HeightLevel {
    Low,
    Mid,
    High,
}

impl HeightLevel {
    pub const ALL: [HeightLevel; 3] = [HeightLevel::Low, HeightLevel::Mid, HeightLevel::High];

    /// Tilt angle (degrees) from which this level is seen.
    pub fn tilt_deg(self) -> i32 {
        match self {
            HeightLevel::Low => -30,
            HeightLevel::Mid => 0,
            HeightLevel::High => 30,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Object {
    pub class: usize,
    pub x: usize,
    pub y: usize,
    pub height: HeightLevel,
    /// Physical extent as a fraction of a cell, in (0, 1].
    pub size: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub category: usize,
    cells: Vec<Cell>,
    pub objects: Vec<Object>,
}

impl Layout {
    /// Assemble a layout from raw parts, enforcing the structural invariants:
    /// walled border, objects on in-bounds free cells.
    pub fn from_parts(
        seed: u64,
        width: usize,
        height: usize,
        category: usize,
        cells: Vec<Cell>,
        objects: Vec<Object>,
    ) -> Result<Layout> {
        if width < 3 || height < 3 || cells.len() != width * height {
            return Err(Error::Env(format!(
                "bad layout dims {width}x{height} with {} cells",
                cells.len()
            )));
        }
        let layout = Layout { seed, width, height, category, cells, objects };
        for x in 0..width {
            if !layout.cell(x, 0).blocks() || !layout.cell(x, height - 1).blocks() {
                return Err(Error::Env(format!("border cell ({x}, edge) not a wall")));
            }
        }
        for y in 0..height {
            if !layout.cell(0, y).blocks() || !layout.cell(width - 1, y).blocks() {
                return Err(Error::Env(format!("border cell (edge, {y}) not a wall")));
            }
        }
        for (i, o) in layout.objects.iter().enumerate() {
            if o.x >= width || o.y >= height || layout.cell(o.x, o.y).blocks() {
                return Err(Error::Env(format!("object {i} not on a free cell")));
            }
            if !(o.size > 0.0 && o.size <= 1.0) {
                return Err(Error::Env(format!("object {i} size {} out of (0,1]", o.size)));
            }
        }
        Ok(layout)
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.cells[y * self.width + x]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    fn blocked_at(&self, x: i64, y: i64) -> bool {
        !self.in_bounds(x, y) || self.cell(x as usize, y as usize).blocks()
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |y| {
            (0..self.width).filter_map(move |x| {
                if self.cell(x, y) == Cell::Free {
                    Some((x, y))
                } else {
                    None
                }
            })
        })
    }

    pub fn classes_present(&self) -> Vec<usize> {
        let mut classes: Vec<usize> = self.objects.iter().map(|o| o.class).collect();
        classes.sort_unstable();
        classes.dedup();
        classes
    }
}

/// Agent pose: cell, compass heading (0 = north/-y, clockwise, 45° steps)
/// and view tilt in {-30, 0, 30}.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Pose {
    pub x: usize,
    pub y: usize,
    pub heading: u16,
    pub tilt: i32,
}

impl Pose {
    pub fn new(x: usize, y: usize, heading: u16, tilt: i32) -> Result<Pose> {
        if heading >= 360 || heading % 45 != 0 {
            return Err(Error::Env(format!("heading {heading} not a 45° multiple")));
        }
        if !matches!(tilt, -30 | 0 | 30) {
            return Err(Error::Env(format!("tilt {tilt} not in {{-30, 0, 30}}")));
        }
        Ok(Pose { x, y, heading, tilt })
    }
}

/// Unit step for a heading, in (dx, dy) with y growing downward.
fn heading_delta(heading: u16) -> (i64, i64) {
    match heading {
        0 => (0, -1),
        45 => (1, -1),
        90 => (1, 0),
        135 => (1, 1),
        180 => (0, 1),
        225 => (-1, 1),
        270 => (-1, 0),
        315 => (-1, -1),
        _ => unreachable!("heading validated at construction"),
    }
}

/// The nine actions, in their canonical index order.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Action {
    MoveForward,
    MoveBackward,
    MoveRight,
    MoveLeft,
    RotateRight,
    RotateLeft,
    LookUp,
    LookDown,
    Done,
}

impl Action {
    pub const ALL: [Action; 9] = [
        Action::MoveForward,
        Action::MoveBackward,
        Action::MoveRight,
        Action::MoveLeft,
        Action::RotateRight,
        Action::RotateLeft,
        Action::LookUp,
        Action::LookDown,
        Action::Done,
    ];
    pub const COUNT: usize = 9;

    pub fn index(self) -> usize {
        Action::ALL.iter().position(|&a| a == self).unwrap()
    }

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Input(format!("action index {i} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::MoveForward => "move_forward",
            Action::MoveBackward => "move_backward",
            Action::MoveRight => "move_right",
            Action::MoveLeft => "move_left",
            Action::RotateRight => "rotate_right",
            Action::RotateLeft => "rotate_left",
            Action::LookUp => "look_up",
            Action::LookDown => "look_down",
            Action::Done => "done",
        }
    }

    pub fn from_name(s: &str) -> Result<Action> {
        Action::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown action {s:?}")))
    }
}

// ── configuration ────────────────────────────────────────────────────

/// Generation and observation parameters for one environment family.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub width: usize,
    pub height: usize,
    pub obstacle_density: f64,
    pub num_objects: usize,
    pub num_classes: usize,
    pub num_categories: usize,
    /// Height levels objects may occupy.
    pub heights: Vec<HeightLevel>,
    pub size_min: f64,
    pub size_max: f64,
    /// Egocentric raster is raster_size x raster_size cells; must be odd.
    pub raster_size: usize,
    /// Apparent-area scale: area = min(1, (size / max(d, 0.5))^2 * kappa).
    pub kappa: f64,
    pub max_steps: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            width: 9,
            height: 9,
            obstacle_density: 0.1,
            num_objects: 5,
            num_classes: 12,
            num_categories: 4,
            heights: HeightLevel::ALL.to_vec(),
            size_min: 0.3,
            size_max: 1.0,
            raster_size: 11,
            kappa: 0.25,
            max_steps: MAX_EPISODE_STEPS,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 5 || self.height < 5 {
            return Err(Error::Config(format!(
                "layout {}x{} below the 5x5 minimum",
                self.width, self.height
            )));
        }
        if !(0.0..=0.9).contains(&self.obstacle_density) {
            return Err(Error::Config(format!(
                "obstacle_density {} out of [0, 0.9]",
                self.obstacle_density
            )));
        }
        if self.num_objects == 0 || self.num_classes == 0 || self.num_categories == 0 {
            return Err(Error::Config("objects, classes, categories must be positive".into()));
        }
        if self.heights.is_empty() {
            return Err(Error::Config("at least one height level required".into()));
        }
        if !(self.size_min > 0.0 && self.size_min <= self.size_max && self.size_max <= 1.0) {
            return Err(Error::Config(format!(
                "size range [{}, {}] out of (0, 1]",
                self.size_min, self.size_max
            )));
        }
        if self.raster_size < 3 || self.raster_size % 2 == 0 {
            return Err(Error::Config(format!(
                "raster_size {} must be odd and >= 3",
                self.raster_size
            )));
        }
        if self.kappa <= 0.0 {
            return Err(Error::Config("kappa must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// Raster channel count: free, wall, unknown, then one per class.
    pub fn raster_channels(&self) -> usize {
        self.num_classes + 3
    }

    /// Detections and raster extend this far (meters).
    pub fn raster_range_m(&self) -> f64 {
        (self.raster_size / 2) as f64 * CELL_METERS
    }
}

pub const CH_FREE: u8 = 0;
pub const CH_WALL: u8 = 1;
pub const CH_UNKNOWN: u8 = 2;
pub const CH_CLASS_BASE: u8 = 3;

// ── layout generation ────────────────────────────────────────────────

/// Deterministic layout generation from (seed, params). Free space is
/// 8-connected; objects land on distinct free cells.
pub fn generate_layout(seed: u64, config: &EnvConfig) -> Result<Layout> {
    config.validate()?;
    let mut rng = crate::rng::stream(seed, STREAM_LAYOUT_GEN);
    let (w, h) = (config.width, config.height);

    for _attempt in 0..100 {
        let mut cells = vec![Cell::Free; w * h];
        for x in 0..w {
            cells[x] = Cell::Wall;
            cells[(h - 1) * w + x] = Cell::Wall;
        }
        for y in 0..h {
            cells[y * w] = Cell::Wall;
            cells[y * w + w - 1] = Cell::Wall;
        }
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                if rng.random::<f64>() < config.obstacle_density {
                    cells[y * w + x] = Cell::Obstacle;
                }
            }
        }

        let free: Vec<usize> = (0..w * h).filter(|&i| cells[i] == Cell::Free).collect();
        if free.len() < config.num_objects + 1 || !connected(&cells, w, h, &free) {
            continue;
        }

        // distinct object cells via partial Fisher-Yates
        let mut pool = free.clone();
        let mut objects = Vec::with_capacity(config.num_objects);
        for i in 0..config.num_objects {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
            let cell = pool[i];
            let class = rng.random_range(0..config.num_classes);
            let height = config.heights[rng.random_range(0..config.heights.len())];
            let size = config.size_min + rng.random::<f64>() * (config.size_max - config.size_min);
            objects.push(Object { class, x: cell % w, y: cell / w, height, size });
        }

        return Layout::from_parts(seed, w, h, seed as usize % config.num_categories, cells, objects);
    }
    Err(Error::Env(format!(
        "layout generation failed for seed {seed}: free space never connected"
    )))
}

fn connected(cells: &[Cell], w: usize, h: usize, free: &[usize]) -> bool {
    if free.is_empty() {
        return false;
    }
    let mut seen = vec![false; w * h];
    let mut stack = vec![free[0]];
    seen[free[0]] = true;
    let mut count = 0usize;
    while let Some(i) = stack.pop() {
        count += 1;
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let ni = ny as usize * w + nx as usize;
                if !seen[ni] && cells[ni] == Cell::Free {
                    seen[ni] = true;
                    stack.push(ni);
                }
            }
        }
    }
    count == free.len()
}

// ── tasks ────────────────────────────────────────────────────────────

/// One episode specification; the oracle step count is cached at creation.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub layout_seed: u64,
    pub start: Pose,
    pub target_class: usize,
    pub d_star: u32,
}

/// Sample a solvable task on a layout: free start cell, random heading,
/// tilt 0, target class drawn from the classes present. Rejection-samples
/// until the BFS oracle confirms a reachable success pose within the cap.
pub fn generate_task<R: Rng + ?Sized>(
    layout: &Layout,
    config: &EnvConfig,
    rng: &mut R,
) -> Result<Task> {
    let free: Vec<(usize, usize)> = layout.free_cells().collect();
    let classes = layout.classes_present();
    if free.is_empty() || classes.is_empty() {
        return Err(Error::Env("layout has no free cells or no objects".into()));
    }
    for _ in 0..200 {
        let (x, y) = free[rng.random_range(0..free.len())];
        let heading = 45 * rng.random_range(0..8) as u16;
        let start = Pose { x, y, heading, tilt: 0 };
        let target_class = classes[rng.random_range(0..classes.len())];
        match shortest_path_steps(layout, start, target_class) {
            Ok(d_star) if d_star <= config.max_steps => {
                return Ok(Task { layout_seed: layout.seed, start, target_class, d_star })
            }
            _ => continue,
        }
    }
    Err(Error::Env(format!(
        "no solvable task found on layout {}",
        layout.seed
    )))
}

// ── geometry and visibility ──────────────────────────────────────────

fn wrap_deg(mut a: f64) -> f64 {
    while a > 180.0 {
        a -= 360.0;
    }
    while a <= -180.0 {
        a += 360.0;
    }
    a
}

/// Bearing of (to) from (pose), degrees relative to heading, in (-180, 180].
pub fn bearing_deg(pose: Pose, to_x: usize, to_y: usize) -> f64 {
    let dx = to_x as f64 - pose.x as f64;
    let dy = to_y as f64 - pose.y as f64;
    if dx == 0.0 && dy == 0.0 {
        return 0.0;
    }
    let world = dx.atan2(-dy).to_degrees();
    wrap_deg(world - pose.heading as f64)
}

pub fn distance_m(pose: Pose, to_x: usize, to_y: usize) -> f64 {
    let dx = to_x as f64 - pose.x as f64;
    let dy = to_y as f64 - pose.y as f64;
    (dx * dx + dy * dy).sqrt() * CELL_METERS
}

/// All cells crossed by the segment between two cell centers (supercover).
/// Exact corner crossings include both side cells.
fn supercover(x0: i64, y0: i64, x1: i64, y1: i64, mut visit: impl FnMut(i64, i64)) {
    let dx = x1 - x0;
    let dy = y1 - y0;
    let nx = dx.unsigned_abs() as i64;
    let ny = dy.unsigned_abs() as i64;
    let sx = dx.signum();
    let sy = dy.signum();
    let (mut x, mut y) = (x0, y0);
    visit(x, y);
    let (mut ix, mut iy) = (0i64, 0i64);
    while ix < nx || iy < ny {
        let decision = (1 + 2 * ix) * ny - (1 + 2 * iy) * nx;
        if decision == 0 {
            // corner crossing: both adjacent cells occlude
            visit(x + sx, y);
            visit(x, y + sy);
            x += sx;
            y += sy;
            ix += 1;
            iy += 1;
        } else if decision < 0 {
            x += sx;
            ix += 1;
        } else {
            y += sy;
            iy += 1;
        }
        visit(x, y);
    }
}

/// True when no wall/obstacle cell lies strictly between the two cells.
pub fn line_of_sight(layout: &Layout, from: (usize, usize), to: (usize, usize)) -> bool {
    let (x0, y0) = (from.0 as i64, from.1 as i64);
    let (x1, y1) = (to.0 as i64, to.1 as i64);
    let mut clear = true;
    supercover(x0, y0, x1, y1, |x, y| {
        if (x, y) != (x0, y0) && (x, y) != (x1, y1) && layout.blocked_at(x, y) {
            clear = false;
        }
    });
    clear
}

/// In the field of view, unobstructed, and at the tilt-matched height.
/// No distance threshold: callers apply their own range.
fn in_view(layout: &Layout, pose: Pose, obj: &Object) -> bool {
    obj.height.tilt_deg() == pose.tilt
        && bearing_deg(pose, obj.x, obj.y).abs() <= FOV_HALF_DEG + ANGLE_EPS
        && line_of_sight(layout, (pose.x, pose.y), (obj.x, obj.y))
}

/// Success-grade visibility: in view and within 1.5 m.
pub fn is_visible(layout: &Layout, pose: Pose, obj: &Object) -> bool {
    distance_m(pose, obj.x, obj.y) <= VISIBLE_METERS + ANGLE_EPS && in_view(layout, pose, obj)
}

// ── observations ─────────────────────────────────────────────────────

/// Ground-truth detection of an object in view.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub class: usize,
    /// Degrees relative to heading.
    pub bearing_deg: f64,
    pub distance_m: f64,
    pub height: HeightLevel,
    /// Fraction of the view covered, in [0, 1].
    pub area: f64,
}

/// Egocentric semantic raster plus the detections for the current view.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// raster_size^2 channel ids, row-major, forward = up.
    pub raster: Vec<u8>,
    pub raster_size: usize,
    pub channels: usize,
    pub detections: Vec<Detection>,
}

fn apparent_area(size: f64, distance_m: f64, kappa: f64) -> f64 {
    let d = distance_m.max(0.5);
    (kappa * (size / d) * (size / d)).min(1.0)
}

/// All objects passing FOV, line-of-sight, and tilt tests out to the raster
/// range, sorted nearest first.
pub fn detect_objects(layout: &Layout, pose: Pose, config: &EnvConfig) -> Vec<Detection> {
    let range = config.raster_range_m() + ANGLE_EPS;
    let mut hits: Vec<(f64, usize)> = Vec::new();
    for (i, obj) in layout.objects.iter().enumerate() {
        let d = distance_m(pose, obj.x, obj.y);
        if d <= range && in_view(layout, pose, obj) {
            hits.push((d, i));
        }
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.into_iter()
        .map(|(d, i)| {
            let obj = &layout.objects[i];
            Detection {
                class: obj.class,
                bearing_deg: bearing_deg(pose, obj.x, obj.y),
                distance_m: d,
                height: obj.height,
                area: apparent_area(obj.size, d, config.kappa),
            }
        })
        .collect()
}

fn render_raster(layout: &Layout, pose: Pose, config: &EnvConfig) -> Vec<u8> {
    let r = config.raster_size;
    let half = (r / 2) as i64;
    let theta = (pose.heading as f64).to_radians();
    let fwd = (theta.sin(), -theta.cos());
    let right = (theta.cos(), theta.sin());
    let mut raster = vec![CH_UNKNOWN; r * r];
    for row in 0..r {
        for col in 0..r {
            let df = (half - row as i64) as f64;
            let dr = (col as i64 - half) as f64;
            let wx = pose.x as f64 + df * fwd.0 + dr * right.0;
            let wy = pose.y as f64 + df * fwd.1 + dr * right.1;
            let (cx, cy) = (wx.round() as i64, wy.round() as i64);
            if !layout.in_bounds(cx, cy) {
                continue;
            }
            if !line_of_sight(layout, (pose.x, pose.y), (cx as usize, cy as usize)) {
                continue;
            }
            let (cx, cy) = (cx as usize, cy as usize);
            let ch = if layout.cell(cx, cy).blocks() {
                CH_WALL
            } else if let Some(obj) = layout
                .objects
                .iter()
                .find(|o| o.x == cx && o.y == cy && o.height.tilt_deg() == pose.tilt)
            {
                CH_CLASS_BASE + obj.class as u8
            } else {
                CH_FREE
            };
            raster[row * r + col] = ch;
        }
    }
    raster
}

// ── reward ───────────────────────────────────────────────────────────

/// Reward cases, exclusive and in order: success pays 5.0; a strictly new
/// episode-best target area pays that area; everything else pays -0.01.
/// Returns the reward and the updated episode maximum.
pub fn compute_reward(success: bool, sbbox: f64, episode_max: f64) -> (f64, f64) {
    if success {
        (5.0, episode_max.max(sbbox))
    } else if sbbox > episode_max {
        (sbbox, sbbox)
    } else {
        (-0.01, episode_max)
    }
}

// ── episode state ────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct Env {
    pub config: EnvConfig,
    pub layout: Layout,
    pub target_class: usize,
    pose: Pose,
    steps: u32,
    max_sbbox: f64,
    done: bool,
    success: bool,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

impl Env {
    /// Start an episode, regenerating the layout from the task's seed.
    pub fn new(config: EnvConfig, task: &Task) -> Result<Env> {
        let layout = generate_layout(task.layout_seed, &config)?;
        Env::with_layout(config, layout, task)
    }

    /// Start an episode on an already-built layout.
    pub fn with_layout(config: EnvConfig, layout: Layout, task: &Task) -> Result<Env> {
        config.validate()?;
        if layout.seed != task.layout_seed {
            return Err(Error::Env(format!(
                "task wants layout {}, given {}",
                task.layout_seed, layout.seed
            )));
        }
        if task.start.x >= layout.width
            || task.start.y >= layout.height
            || layout.cell(task.start.x, task.start.y).blocks()
        {
            return Err(Error::Env("start pose not on a free cell".into()));
        }
        if !layout.objects.iter().any(|o| o.class == task.target_class) {
            return Err(Error::Env(format!(
                "target class {} absent from layout {}",
                task.target_class, layout.seed
            )));
        }
        let start = Pose { tilt: 0, ..task.start };
        Pose::new(start.x, start.y, start.heading, start.tilt)?;
        Ok(Env {
            config,
            layout,
            target_class: task.target_class,
            pose: start,
            steps: 0,
            max_sbbox: 0.0,
            done: false,
            success: false,
        })
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn success(&self) -> bool {
        self.success
    }

    pub fn episode_max_sbbox(&self) -> f64 {
        self.max_sbbox
    }

    pub fn target_visible(&self) -> bool {
        self.layout
            .objects
            .iter()
            .any(|o| o.class == self.target_class && is_visible(&self.layout, self.pose, o))
    }

    pub fn observe(&self) -> Observation {
        Observation {
            raster: render_raster(&self.layout, self.pose, &self.config),
            raster_size: self.config.raster_size,
            channels: self.config.raster_channels(),
            detections: detect_objects(&self.layout, self.pose, &self.config),
        }
    }

    /// Largest apparent area among current target detections; the S_bbox of
    /// the reward function.
    pub fn target_sbbox(&self, detections: &[Detection]) -> f64 {
        detections
            .iter()
            .filter(|d| d.class == self.target_class)
            .map(|d| d.area)
            .fold(0.0, f64::max)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::Env("step after episode end".into()));
        }
        self.steps += 1;
        match action {
            Action::MoveForward => self.try_move(0),
            Action::MoveBackward => self.try_move(180),
            Action::MoveRight => self.try_move(90),
            Action::MoveLeft => self.try_move(270),
            Action::RotateRight => self.pose.heading = (self.pose.heading + 45) % 360,
            Action::RotateLeft => self.pose.heading = (self.pose.heading + 315) % 360,
            Action::LookUp => self.pose.tilt = (self.pose.tilt + 30).min(30),
            Action::LookDown => self.pose.tilt = (self.pose.tilt - 30).max(-30),
            Action::Done => {
                self.done = true;
                self.success = self.target_visible();
            }
        }
        if !self.done && self.steps >= self.config.max_steps {
            self.done = true;
            self.success = false;
        }
        let observation = self.observe();
        let sbbox = self.target_sbbox(&observation.detections);
        let succeeded = action == Action::Done && self.success;
        let (reward, new_max) = compute_reward(succeeded, sbbox, self.max_sbbox);
        self.max_sbbox = new_max;
        Ok(StepResult { observation, reward, done: self.done, success: self.success })
    }

    fn try_move(&mut self, offset: u16) {
        let dir = heading_delta((self.pose.heading + offset) % 360);
        let nx = self.pose.x as i64 + dir.0;
        let ny = self.pose.y as i64 + dir.1;
        if !self.layout.blocked_at(nx, ny) {
            self.pose.x = nx as usize;
            self.pose.y = ny as usize;
        }
    }
}

// ── shortest-path oracle ─────────────────────────────────────────────

fn pose_index(layout: &Layout, p: Pose) -> usize {
    let tilt_idx = ((p.tilt + 30) / 30) as usize;
    ((p.y * layout.width + p.x) * 8 + (p.heading / 45) as usize) * 3 + tilt_idx
}

/// Minimum number of actions (uniform cost, Done included) from the start
/// pose to a success pose, by breadth-first search over the pose graph.
pub fn shortest_path_steps(layout: &Layout, start: Pose, target_class: usize) -> Result<u32> {
    let targets: Vec<&Object> = layout
        .objects
        .iter()
        .filter(|o| o.class == target_class)
        .collect();
    if targets.is_empty() {
        return Err(Error::Env(format!("no object of class {target_class}")));
    }
    let sees_target =
        |p: Pose| targets.iter().any(|o| is_visible(layout, p, o));

    let mut visited = vec![false; layout.width * layout.height * 8 * 3];
    let mut queue = alloc::collections::VecDeque::new();
    visited[pose_index(layout, start)] = true;
    queue.push_back((start, 0u32));
    while let Some((p, depth)) = queue.pop_front() {
        if sees_target(p) {
            return Ok(depth + 1); // terminal Done
        }
        let mut push = |np: Pose, queue: &mut alloc::collections::VecDeque<(Pose, u32)>| {
            let idx = pose_index(layout, np);
            if !visited[idx] {
                visited[idx] = true;
                queue.push_back((np, depth + 1));
            }
        };
        for offset in [0u16, 180, 90, 270] {
            let dir = heading_delta((p.heading + offset) % 360);
            let nx = p.x as i64 + dir.0;
            let ny = p.y as i64 + dir.1;
            if !layout.blocked_at(nx, ny) {
                push(Pose { x: nx as usize, y: ny as usize, ..p }, &mut queue);
            }
        }
        push(Pose { heading: (p.heading + 45) % 360, ..p }, &mut queue);
        push(Pose { heading: (p.heading + 315) % 360, ..p }, &mut queue);
        if p.tilt < 30 {
            push(Pose { tilt: p.tilt + 30, ..p }, &mut queue);
        }
        if p.tilt > -30 {
            push(Pose { tilt: p.tilt - 30, ..p }, &mut queue);
        }
    }
    Err(Error::Env("target not reachable from start".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 5x5 room, all free inside, one mid object at (2,1), agent below it.
    fn tiny_layout(object_cell: (usize, usize)) -> Layout {
        let mut cells = vec![Cell::Free; 25];
        for x in 0..5 {
            cells[x] = Cell::Wall;
            cells[20 + x] = Cell::Wall;
        }
        for y in 0..5 {
            cells[y * 5] = Cell::Wall;
            cells[y * 5 + 4] = Cell::Wall;
        }
        Layout::from_parts(
            7,
            5,
            5,
            0,
            cells,
            vec![Object {
                class: 0,
                x: object_cell.0,
                y: object_cell.1,
                height: HeightLevel::Mid,
                size: 1.0,
            }],
        )
        .unwrap()
    }

    fn task_at(layout: &Layout, start: Pose) -> Task {
        Task { layout_seed: layout.seed, start, target_class: 0, d_star: 0 }
    }

    #[test]
    fn layout_generation_is_deterministic() {
        let cfg = EnvConfig::default();
        let a = generate_layout(3, &cfg).unwrap();
        let b = generate_layout(3, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_layout(4, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_density_means_no_obstacles() {
        let cfg = EnvConfig { obstacle_density: 0.0, ..EnvConfig::default() };
        let layout = generate_layout(11, &cfg).unwrap();
        assert!(!layout.cells().iter().any(|&c| c == Cell::Obstacle));
    }

    #[test]
    fn rotate_right_eight_times_closes_cycle() {
        let layout = tiny_layout((2, 1));
        let task = task_at(&layout, Pose { x: 2, y: 3, heading: 0, tilt: 0 });
        let mut env = Env::with_layout(EnvConfig::default(), layout, &task).unwrap();
        let start = env.pose();
        for _ in 0..8 {
            env.step(Action::RotateRight).unwrap();
        }
        assert_eq!(env.pose(), start);
    }

    #[test]
    fn blocked_move_is_penalized_noop() {
        let layout = tiny_layout((2, 1));
        // facing the north wall from just inside it; target behind agent and
        // out of view so no S_bbox applies
        let task = task_at(&layout, Pose { x: 1, y: 1, heading: 270, tilt: 0 });
        let mut env = Env::with_layout(EnvConfig::default(), layout, &task).unwrap();
        let before = env.pose();
        let r = env.step(Action::MoveForward).unwrap();
        assert_eq!(env.pose(), before);
        assert_eq!(r.reward, -0.01);
        assert!(!r.done);
    }

    #[test]
    fn done_while_visible_succeeds_with_5() {
        let layout = tiny_layout((2, 1));
        let task = task_at(&layout, Pose { x: 2, y: 2, heading: 0, tilt: 0 });
        let mut env = Env::with_layout(EnvConfig::default(), layout, &task).unwrap();
        assert!(env.target_visible());
        let r = env.step(Action::Done).unwrap();
        assert_eq!(r.reward, 5.0);
        assert!(r.done && r.success);
        assert!(env.step(Action::Done).is_err());
    }

    #[test]
    fn done_away_from_target_fails() {
        let layout = tiny_layout((2, 1));
        let task = task_at(&layout, Pose { x: 2, y: 3, heading: 180, tilt: 0 });
        let mut env = Env::with_layout(EnvConfig::default(), layout, &task).unwrap();
        let r = env.step(Action::Done).unwrap();
        assert!(r.done && !r.success);
    }

    #[test]
    fn visibility_distance_threshold() {
        let mut cells = vec![Cell::Free; 9 * 9];
        for x in 0..9 {
            cells[x] = Cell::Wall;
            cells[8 * 9 + x] = Cell::Wall;
        }
        for y in 0..9 {
            cells[y * 9] = Cell::Wall;
            cells[y * 9 + 8] = Cell::Wall;
        }
        let obj = Object { class: 0, x: 4, y: 1, height: HeightLevel::Mid, size: 1.0 };
        let layout = Layout::from_parts(1, 9, 9, 0, cells, vec![obj]).unwrap();
        // 3 cells = 1.5 m: visible; 4 cells = 2.0 m: not
        let near = Pose { x: 4, y: 4, heading: 0, tilt: 0 };
        let far = Pose { x: 4, y: 5, heading: 0, tilt: 0 };
        assert!(is_visible(&layout, near, &layout.objects[0]));
        assert!(!is_visible(&layout, far, &layout.objects[0]));
    }

    #[test]
    fn wall_blocks_visibility() {
        let mut layout = tiny_layout((2, 1));
        // insert a wall between agent (2,3) and object (2,1)
        let idx = 2 * 5 + 2;
        let mut cells = layout.cells().to_vec();
        cells[idx] = Cell::Wall;
        layout = Layout::from_parts(7, 5, 5, 0, cells, layout.objects.clone()).unwrap();
        let pose = Pose { x: 2, y: 3, heading: 0, tilt: 0 };
        assert!(!is_visible(&layout, pose, &layout.objects[0]));
    }

    #[test]
    fn tilt_gates_visibility() {
        let mut layout = tiny_layout((2, 1));
        layout.objects[0].height = HeightLevel::High;
        let pose = Pose { x: 2, y: 2, heading: 0, tilt: 0 };
        assert!(!is_visible(&layout, pose, &layout.objects[0]));
        let tilted = Pose { tilt: 30, ..pose };
        assert!(is_visible(&layout, tilted, &layout.objects[0]));
    }

    #[test]
    fn detections_sorted_nearest_first() {
        let mut layout = tiny_layout((2, 2));
        layout.objects.push(Object { class: 1, x: 2, y: 1, height: HeightLevel::Mid, size: 0.5 });
        let pose = Pose { x: 2, y: 3, heading: 0, tilt: 0 };
        let dets = detect_objects(&layout, pose, &EnvConfig::default());
        assert_eq!(dets.len(), 2);
        assert_eq!(dets[0].class, 0);
        assert_eq!(dets[1].class, 1);
        assert!(dets[0].distance_m < dets[1].distance_m);
    }

    #[test]
    fn empty_room_detects_nothing() {
        let mut layout = tiny_layout((2, 1));
        layout.objects.clear();
        let pose = Pose { x: 2, y: 3, heading: 0, tilt: 0 };
        assert!(detect_objects(&layout, pose, &EnvConfig::default()).is_empty());
    }

    #[test]
    fn apparent_area_closed_form() {
        // s=1, kappa=0.25, d=0.5 -> (1/0.5)^2 * 0.25 = 1.0
        assert_eq!(apparent_area(1.0, 0.5, 0.25), 1.0);
        // d=1.0 -> 0.25
        assert!((apparent_area(1.0, 1.0, 0.25) - 0.25).abs() < 1e-12);
        // distance floored at 0.5
        assert_eq!(apparent_area(1.0, 0.1, 0.25), 1.0);
    }

    #[test]
    fn reward_cases() {
        assert_eq!(compute_reward(true, 0.0, 0.9), (5.0, 0.9));
        assert_eq!(compute_reward(false, 0.3, 0.2), (0.3, 0.3));
        // tie pays the step penalty
        assert_eq!(compute_reward(false, 0.2, 0.2), (-0.01, 0.2));
        assert_eq!(compute_reward(false, 0.0, 0.0), (-0.01, 0.0));
    }

    #[test]
    fn step_cap_fails_episode() {
        let layout = tiny_layout((2, 1));
        let task = task_at(&layout, Pose { x: 2, y: 3, heading: 180, tilt: 0 });
        let cfg = EnvConfig { max_steps: 5, ..EnvConfig::default() };
        let mut env = Env::with_layout(cfg, layout, &task).unwrap();
        for i in 0..5 {
            let r = env.step(Action::RotateRight).unwrap();
            assert_eq!(r.done, i == 4);
        }
        assert!(env.done() && !env.success());
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = EnvConfig::default();
        let layout = generate_layout(17, &cfg).unwrap();
        let mut rng = crate::rng::stream(5, crate::rng::STREAM_TASKS);
        let task = generate_task(&layout, &cfg, &mut rng).unwrap();
        let a = Env::new(cfg.clone(), &task).unwrap().observe();
        let b = Env::new(cfg, &task).unwrap().observe();
        assert_eq!(a, b);
    }

    #[test]
    fn reset_adjacent_target_detected() {
        let layout = tiny_layout((2, 1));
        let task = task_at(&layout, Pose { x: 2, y: 2, heading: 0, tilt: 0 });
        let env = Env::with_layout(EnvConfig::default(), layout, &task).unwrap();
        assert_eq!(env.steps(), 0);
        assert!(!env.done());
        let obs = env.observe();
        assert!(obs.detections.iter().any(|d| d.class == 0));
    }

    #[test]
    fn shortest_path_trivial_cases() {
        let layout = tiny_layout((2, 1));
        // already sees target: Done only
        let seeing = Pose { x: 2, y: 2, heading: 0, tilt: 0 };
        assert_eq!(shortest_path_steps(&layout, seeing, 0).unwrap(), 1);
        // 4 cells away (2.0 m), facing it: one forward then Done
        let layout2 = {
            let mut cells = vec![Cell::Free; 9 * 9];
            for x in 0..9 {
                cells[x] = Cell::Wall;
                cells[8 * 9 + x] = Cell::Wall;
            }
            for y in 0..9 {
                cells[y * 9] = Cell::Wall;
                cells[y * 9 + 8] = Cell::Wall;
            }
            let obj = Object { class: 0, x: 4, y: 1, height: HeightLevel::Mid, size: 1.0 };
            Layout::from_parts(1, 9, 9, 0, cells, vec![obj]).unwrap()
        };
        let far = Pose { x: 4, y: 5, heading: 0, tilt: 0 };
        assert_eq!(shortest_path_steps(&layout2, far, 0).unwrap(), 2);
    }

    #[test]
    fn generated_tasks_are_solvable() {
        let cfg = EnvConfig { width: 7, height: 7, ..EnvConfig::default() };
        for seed in 0..25 {
            let layout = generate_layout(seed, &cfg).unwrap();
            let mut rng = crate::rng::stream(1, crate::rng::STREAM_TASKS);
            let task = generate_task(&layout, &cfg, &mut rng).unwrap();
            assert!(task.d_star >= 1 && task.d_star <= MAX_EPISODE_STEPS);
        }
    }

    #[test]
    fn raster_marks_walls_and_unknown() {
        let layout = tiny_layout((2, 1));
        let task = task_at(&layout, Pose { x: 2, y: 3, heading: 0, tilt: 0 });
        let env = Env::with_layout(EnvConfig::default(), layout, &task).unwrap();
        let obs = env.observe();
        let r = obs.raster_size;
        let half = r / 2;
        // agent's own cell is free
        assert_eq!(obs.raster[half * r + half], CH_FREE);
        // some cell is unknown (outside the room)
        assert!(obs.raster.iter().any(|&c| c == CH_UNKNOWN));
        // the target ahead appears as its class channel
        assert!(obs.raster.iter().any(|&c| c == CH_CLASS_BASE));
    }

    #[test]
    fn visible_implies_detected() {
        let cfg = EnvConfig::default();
        for seed in 0..10 {
            let layout = generate_layout(seed, &cfg).unwrap();
            for (x, y) in layout.free_cells() {
                for h in [0u16, 90, 225] {
                    let pose = Pose { x, y, heading: h, tilt: 0 };
                    let dets = detect_objects(&layout, pose, &cfg);
                    for obj in &layout.objects {
                        if is_visible(&layout, pose, obj) {
                            assert!(dets
                                .iter()
                                .any(|d| d.class == obj.class && d.height == obj.height));
                        }
                    }
                }
            }
        }
    }
}
