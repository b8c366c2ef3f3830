//! Procedural indoor worlds, a ray-cast range sensor and scripted trajectories.
//!
//! A world is solid rock with halls carved out of it. The plan is drawn in 2D
//! and extruded between an occupied floor layer and an occupied ceiling
//! layer, so every free voxel is bounded by walls on all sides.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::Vec3;
use crate::map::{
    integrate_scan, raycast, GridGeometry, LocalGrid, OccupancyMap, OccupancyView, ScanStats, VoxelCell, VoxelKey,
    VoxelState,
};
use crate::merge::MergeConfig;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("degenerate world: {0}")]
    Degenerate(String),
    #[error("pose {index} at ({x:.3}, {y:.3}, {z:.3}) is not in free space")]
    PoseOccupied { index: usize, x: f64, y: f64, z: f64 },
    #[error("poses {index} and {next} are {gap:.3} m apart, more than the {bound:.3} m step bound")]
    StepTooLong { index: usize, next: usize, gap: f64, bound: f64 },
    #[error("trajectory line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayoutKind {
    /// Long hall with rooms behind door openings and one right turn.
    HallWithTurn,
    /// Four halls joined at four corners.
    SquareLoop,
    TIntersection,
    /// Depth-first maze of hall-width cells.
    RandomMaze,
}

impl LayoutKind {
    pub const ALL: [LayoutKind; 4] = [
        LayoutKind::HallWithTurn,
        LayoutKind::SquareLoop,
        LayoutKind::TIntersection,
        LayoutKind::RandomMaze,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LayoutKind::HallWithTurn => "hall-with-turn",
            LayoutKind::SquareLoop => "square-loop",
            LayoutKind::TIntersection => "t-intersection",
            LayoutKind::RandomMaze => "random-maze",
        }
    }
}

impl fmt::Display for LayoutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayoutKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        LayoutKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown layout `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldSpec {
    pub seed: u64,
    pub layout: LayoutKind,
    pub resolution: f64,
    pub hall_width: f64,
    pub hall_height: f64,
    pub wall_thickness: f64,
    /// Chance that a room slot along a hall gets a door and a room.
    pub door_probability: f64,
    /// Main hall length, loop side or maze extent, in metres.
    pub extent: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            layout: LayoutKind::SquareLoop,
            resolution: 0.4125,
            hall_width: 2.0,
            hall_height: 2.5,
            wall_thickness: 0.5,
            door_probability: 0.5,
            extent: 16.0,
        }
    }
}

/// Rectangle of plan cells, half-open.
#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Rect {
    fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, x1: x0 + w, y1: y0 + h }
    }

    /// Centre in plan-cell units.
    fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) as f64 / 2.0, (self.y0 + self.y1) as f64 / 2.0)
    }
}

struct Plan {
    nx: usize,
    ny: usize,
    free: Vec<bool>,
    /// Hall centreline in plan-cell units.
    route: Vec<(f64, f64)>,
}

impl Plan {
    fn new(nx: usize, ny: usize) -> Self {
        Self { nx, ny, free: vec![false; nx * ny], route: Vec::new() }
    }

    fn carve(&mut self, r: Rect) {
        for y in r.y0..r.y1.min(self.ny) {
            for x in r.x0..r.x1.min(self.nx) {
                self.free[y * self.nx + x] = true;
            }
        }
    }
}

/// Dense ground-truth occupancy, voxel `(0, 0, 0)` at the world origin.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthGrid {
    pub spec: WorldSpec,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    occupied: Vec<bool>,
    route: Vec<Vec3>,
}

fn voxels(len: f64, res: f64) -> usize {
    (len / res).round().max(0.0) as usize
}

fn plan_hall_with_turn(spec: &WorldSpec, rng: &mut ChaCha8Rng, w: usize, t: usize) -> Plan {
    let res = spec.resolution;
    let len = voxels(spec.extent, res);
    let room_w = voxels(3.0, res).max(w);
    let room_d = voxels(3.0, res).max(w);
    let door = voxels(1.0, res).max(2).min(room_w);
    let leg = (len / 2).max(w + 1);
    let hall_y = t + leg;
    let nx = t + len + t;
    let ny = hall_y + w + t + room_d + t;
    let mut plan = Plan::new(nx, ny);
    let main = Rect::new(t, hall_y, len, w);
    let turn = Rect::new(t + len - w, t, w, leg + w);
    plan.carve(main);
    plan.carve(turn);
    // rooms north of the main hall
    let mut x = t + w;
    while x + room_w + w <= t + len {
        if rng.gen_bool(spec.door_probability) {
            let ry = hall_y + w + t;
            plan.carve(Rect::new(x, ry, room_w, room_d));
            let dx = x + (room_w - door) / 2;
            plan.carve(Rect::new(dx, hall_y + w, door, t));
        }
        x += room_w + t;
    }
    let (_, my) = main.center();
    let (tx, _) = turn.center();
    plan.route = vec![(t as f64 + 0.5 * w as f64, my), (tx, my), (tx, t as f64 + 0.5 * w as f64)];
    plan
}

fn plan_square_loop(spec: &WorldSpec, w: usize, t: usize) -> Plan {
    let side = voxels(spec.extent, spec.resolution).max(2 * w + 1);
    let n = t + side + t;
    let mut plan = Plan::new(n, n);
    plan.carve(Rect::new(t, t, side, w));
    plan.carve(Rect::new(t, t + side - w, side, w));
    plan.carve(Rect::new(t, t, w, side));
    plan.carve(Rect::new(t + side - w, t, w, side));
    let lo = t as f64 + w as f64 / 2.0;
    let hi = (t + side) as f64 - w as f64 / 2.0;
    let mid = (lo + hi) / 2.0;
    plan.route = vec![(mid, lo), (hi, lo), (hi, hi), (lo, hi), (lo, lo), (mid, lo)];
    plan
}

fn plan_t_intersection(spec: &WorldSpec, w: usize, t: usize) -> Plan {
    let len = voxels(spec.extent, spec.resolution).max(2 * w + 1);
    let stem = (len / 2).max(w + 1);
    let n_x = t + len + t;
    let n_y = t + stem + w + t;
    let mut plan = Plan::new(n_x, n_y);
    let bar = Rect::new(t, t + stem, len, w);
    let sx = t + (len - w) / 2;
    let down = Rect::new(sx, t, w, stem + w);
    plan.carve(bar);
    plan.carve(down);
    let (_, by) = bar.center();
    let (dx, _) = down.center();
    plan.route = vec![
        (t as f64 + w as f64 / 2.0, by),
        (dx, by),
        (dx, t as f64 + w as f64 / 2.0),
    ];
    plan
}

fn plan_maze(spec: &WorldSpec, rng: &mut ChaCha8Rng, w: usize, t: usize) -> Plan {
    let pitch = w + t;
    let cells = (voxels(spec.extent, spec.resolution) / pitch).max(2);
    let n = t + cells * pitch;
    let mut plan = Plan::new(n, n);
    let cell_rect = |cx: usize, cy: usize| Rect::new(t + cx * pitch, t + cy * pitch, w, w);
    let mut visited = vec![false; cells * cells];
    let mut stack = vec![(0usize, 0usize)];
    visited[0] = true;
    plan.carve(cell_rect(0, 0));
    plan.route.push(cell_rect(0, 0).center());
    while let Some(&(cx, cy)) = stack.last() {
        let mut next: Vec<(usize, usize)> = Vec::new();
        if cx > 0 { next.push((cx - 1, cy)); }
        if cy > 0 { next.push((cx, cy - 1)); }
        if cx + 1 < cells { next.push((cx + 1, cy)); }
        if cy + 1 < cells { next.push((cx, cy + 1)); }
        next.retain(|&(x, y)| !visited[y * cells + x]);
        match next.choose(rng) {
            Some(&(nx, ny)) => {
                visited[ny * cells + nx] = true;
                let (a, b) = (cell_rect(cx, cy), cell_rect(nx, ny));
                plan.carve(b);
                plan.carve(Rect {
                    x0: a.x0.min(b.x0),
                    y0: a.y0.min(b.y0),
                    x1: a.x1.max(b.x1),
                    y1: a.y1.max(b.y1),
                });
                plan.route.push(b.center());
                stack.push((nx, ny));
            }
            None => {
                stack.pop();
                if let Some(&(px, py)) = stack.last() {
                    plan.route.push(cell_rect(px, py).center());
                }
            }
        }
    }
    plan
}

/// Builds the ground-truth grid for `spec`.
pub fn generate_world(spec: &WorldSpec) -> Result<GroundTruthGrid, WorldError> {
    let res = spec.resolution;
    if !(res > 0.0 && res.is_finite()) {
        return Err(WorldError::Degenerate("resolution must be positive".into()));
    }
    let w = voxels(spec.hall_width, res);
    let h = voxels(spec.hall_height, res);
    let t = voxels(spec.wall_thickness, res).max(1);
    if w < 2 || h < 2 {
        return Err(WorldError::Degenerate(format!(
            "halls must be at least two voxels wide and tall (got {w} x {h})"
        )));
    }
    if voxels(spec.extent, res) < 2 * w + 1 {
        return Err(WorldError::Degenerate("extent too small for the hall width".into()));
    }
    if !(0.0..=1.0).contains(&spec.door_probability) {
        return Err(WorldError::Degenerate("door probability must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plan = match spec.layout {
        LayoutKind::HallWithTurn => plan_hall_with_turn(spec, &mut rng, w, t),
        LayoutKind::SquareLoop => plan_square_loop(spec, w, t),
        LayoutKind::TIntersection => plan_t_intersection(spec, w, t),
        LayoutKind::RandomMaze => plan_maze(spec, &mut rng, w, t),
    };
    let nz = h + 2;
    let (nx, ny) = (plan.nx, plan.ny);
    let mut occupied = vec![true; nx * ny * nz];
    for z in 1..=h {
        for y in 0..ny {
            for x in 0..nx {
                if plan.free[y * nx + x] {
                    occupied[(z * ny + y) * nx + x] = false;
                }
            }
        }
    }
    // sensor height at mid-hall, nudged off voxel boundaries
    let z = res * (1.0 + h as f64 / 2.0) + 0.0043;
    let route = plan
        .route
        .iter()
        .map(|(x, y)| Vec3::new(x * res + 0.0131, y * res + 0.0077, z))
        .collect();
    Ok(GroundTruthGrid { spec: *spec, nx, ny, nz, occupied, route })
}

impl GroundTruthGrid {
    pub fn resolution(&self) -> f64 {
        self.spec.resolution
    }

    fn index(&self, key: VoxelKey) -> Option<usize> {
        let (i, j, k) = (key.i, key.j, key.k);
        if i < 0 || j < 0 || k < 0 {
            return None;
        }
        let (i, j, k) = (i as usize, j as usize, k as usize);
        (i < self.nx && j < self.ny && k < self.nz).then(|| (k * self.ny + j) * self.nx + i)
    }

    fn key(&self, index: usize) -> VoxelKey {
        let i = index % self.nx;
        let j = (index / self.nx) % self.ny;
        let k = index / (self.nx * self.ny);
        VoxelKey::new(i as i32, j as i32, k as i32)
    }

    /// Everything outside the grid counts as solid.
    pub fn is_occupied(&self, key: VoxelKey) -> bool {
        self.index(key).is_none_or(|i| self.occupied[i])
    }

    pub fn is_free_point(&self, p: &Vec3) -> bool {
        !self.is_occupied(VoxelKey::from_point(p, self.resolution()))
    }

    pub fn free_keys(&self) -> Vec<VoxelKey> {
        (0..self.occupied.len()).filter(|i| !self.occupied[*i]).map(|i| self.key(i)).collect()
    }

    pub fn free_count(&self) -> usize {
        self.occupied.iter().filter(|o| !**o).count()
    }

    /// Free voxels 6-connected to `start`.
    pub fn flood_fill(&self, start: VoxelKey) -> Vec<VoxelKey> {
        let Some(s) = self.index(start).filter(|i| !self.occupied[*i]) else {
            return Vec::new();
        };
        let mut seen = vec![false; self.occupied.len()];
        let mut queue = VecDeque::from([s]);
        seen[s] = true;
        let mut out = Vec::new();
        while let Some(i) = queue.pop_front() {
            let key = self.key(i);
            out.push(key);
            for (di, dj, dk) in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)] {
                if let Some(n) = self.index(key.offset(di, dj, dk)) {
                    if !seen[n] && !self.occupied[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        match self.occupied.iter().position(|o| !o) {
            Some(i) => self.flood_fill(self.key(i)).len() == self.free_count(),
            None => false,
        }
    }

    /// Complete crop with the same placement rule as map crops.
    pub fn crop(&self, center: &Vec3, half_extent: f64) -> LocalGrid {
        let geometry = GridGeometry::around(center, half_extent, self.resolution());
        let values = geometry
            .keys()
            .map(|k| if self.is_occupied(k) { 1.0 } else { -1.0 })
            .collect();
        LocalGrid::from_complete(*center, half_extent, geometry, values)
    }

    /// Saturated map of the whole grid, every voxel observed.
    pub fn to_occupancy_map(&self, config: &MergeConfig) -> OccupancyMap {
        let mut map = OccupancyMap::new(self.resolution(), config);
        let (lo, hi) = map.clamps();
        for (i, occ) in self.occupied.iter().enumerate() {
            let log_odds = if *occ { hi } else { lo };
            map.insert_cell(self.key(i), VoxelCell { log_odds, observed: true });
        }
        map
    }

    /// Hall centreline waypoints at sensor height.
    pub fn route(&self) -> &[Vec3] {
        &self.route
    }

    /// Poses every `spacing` metres along the hall centreline.
    pub fn default_trajectory(&self, spacing: f64) -> Trajectory {
        Trajectory::along(&self.route, spacing)
    }
}

impl OccupancyView for GroundTruthGrid {
    fn resolution(&self) -> f64 {
        self.spec.resolution
    }

    fn state(&self, key: VoxelKey) -> VoxelState {
        if self.is_occupied(key) {
            VoxelState::Occupied
        } else {
            VoxelState::Free
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
}

impl Pose {
    pub fn heading(&self) -> Vec3 {
        Vec3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    /// Nominal distance between consecutive poses.
    pub spacing: f64,
}

impl Trajectory {
    /// Resamples a polyline at `spacing`, keeping the final waypoint.
    pub fn along(waypoints: &[Vec3], spacing: f64) -> Self {
        assert!(spacing > 0.0);
        let mut poses = Vec::new();
        let mut carry = 0.0;
        for seg in waypoints.windows(2) {
            let d = seg[1] - seg[0];
            let len = d.norm();
            if len == 0.0 {
                continue;
            }
            let yaw = d.y.atan2(d.x);
            let mut s = carry;
            while s < len {
                poses.push(Pose { position: seg[0] + d * (s / len), yaw });
                s += spacing;
            }
            carry = s - len;
        }
        if let (Some(last), Some(prev)) = (waypoints.last(), poses.last()) {
            if (last - prev.position).norm() > 1e-9 {
                poses.push(Pose { position: *last, yaw: prev.yaw });
            }
        }
        Self { poses, spacing }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn validate(&self, world: &GroundTruthGrid) -> Result<(), WorldError> {
        for (index, p) in self.poses.iter().enumerate() {
            if !world.is_free_point(&p.position) {
                return Err(WorldError::PoseOccupied {
                    index,
                    x: p.position.x,
                    y: p.position.y,
                    z: p.position.z,
                });
            }
        }
        for (index, w) in self.poses.windows(2).enumerate() {
            let gap = (w[1].position - w[0].position).norm();
            if gap > self.spacing * (1.0 + 1e-9) {
                return Err(WorldError::StepTooLong { index, next: index + 1, gap, bound: self.spacing });
            }
        }
        Ok(())
    }

    /// `x,y,z,yaw` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,y,z,yaw")?;
        for p in &self.poses {
            writeln!(w, "{},{},{},{}", p.position.x, p.position.y, p.position.z, p.yaw)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, spacing: f64) -> Result<Self, WorldError> {
        let mut poses = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with('x')) {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| WorldError::Parse { line: n + 1, msg: e.to_string() })?;
            if v.len() != 4 {
                return Err(WorldError::Parse { line: n + 1, msg: format!("expected 4 fields, got {}", v.len()) });
            }
            poses.push(Pose { position: Vec3::new(v[0], v[1], v[2]), yaw: v[3] });
        }
        Ok(Self { poses, spacing })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorConfig {
    pub n_azimuth: usize,
    pub n_elevation: usize,
    /// Half-angle of the vertical field of view, radians.
    pub elevation_half_angle: f64,
    pub max_range: f64,
    pub noise_sd: f64,
    pub noise_seed: u64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            n_azimuth: 64,
            n_elevation: 8,
            elevation_half_angle: 22.5f64.to_radians(),
            max_range: 10.0,
            noise_sd: 0.0,
            noise_seed: 0,
        }
    }
}

impl SensorConfig {
    /// Unit ray directions in the sensor frame rotated by `yaw`.
    pub fn directions(&self, yaw: f64) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.n_azimuth * self.n_elevation);
        for e in 0..self.n_elevation {
            let el = if self.n_elevation == 1 {
                0.0
            } else {
                -self.elevation_half_angle + 2.0 * self.elevation_half_angle * e as f64 / (self.n_elevation - 1) as f64
            };
            for a in 0..self.n_azimuth {
                let az = yaw + 2.0 * PI * (a as f64 + 0.5) / self.n_azimuth as f64;
                out.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        out
    }
}

/// Hit points of one sweep; rays with no return inside `max_range` are
/// dropped. `rng` is only drawn from when `noise_sd > 0`.
pub fn simulate_scan<R: Rng>(world: &GroundTruthGrid, pose: &Pose, sensor: &SensorConfig, rng: &mut R) -> Vec<Vec3> {
    let mut points = Vec::new();
    for dir in sensor.directions(pose.yaw) {
        if let Some(hit) = raycast(world, &pose.position, &dir, sensor.max_range) {
            let mut range = hit.distance + 1e-6;
            if sensor.noise_sd > 0.0 {
                range = (range + sensor.noise_sd * rng.sample::<f64, _>(StandardNormal)).max(0.0);
            }
            points.push(pose.position + dir * range);
        }
    }
    points
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSnapshot {
    pub index: usize,
    pub stats: ScanStats,
    /// Map crop at the pose after integrating its scan.
    pub crop: Option<LocalGrid>,
}

/// Integrates one scan per pose into `map`.
pub fn run_trajectory(
    world: &GroundTruthGrid,
    trajectory: &Trajectory,
    sensor: &SensorConfig,
    map: &mut OccupancyMap,
    config: &MergeConfig,
    snapshot_half_extent: Option<f64>,
) -> Result<Vec<PoseSnapshot>, WorldError> {
    trajectory.validate(world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sensor.noise_seed);
    let mut out = Vec::with_capacity(trajectory.len());
    for (index, pose) in trajectory.poses.iter().enumerate() {
        let points = simulate_scan(world, pose, sensor, &mut rng);
        let stats = integrate_scan(map, &pose.position, &points, config);
        let crop = snapshot_half_extent.map(|h| crate::map::crop_local(map, &pose.position, h));
        out.push(PoseSnapshot { index, stats, crop });
    }
    Ok(out)
}

/// Complete crops centred on random free voxels, for training.
pub fn sample_corpus(world: &GroundTruthGrid, count: usize, half_extent: f64, seed: u64) -> Vec<LocalGrid> {
    let free = world.free_keys();
    if free.is_empty() {
        return Vec::new();
    }
    let res = world.resolution();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let key = free[rng.gen_range(0..free.len())];
            let jitter = Vec3::new(rng.gen_range(-0.45..0.45), rng.gen_range(-0.45..0.45), rng.gen_range(-0.45..0.45));
            world.crop(&(key.center(res) + jitter * res), half_extent)
        })
        .collect()
}
