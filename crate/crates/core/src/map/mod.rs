//! Sparse probabilistic voxel map.
//!
//! Cells store occupancy in log-odds form together with an `observed` flag.
//! Keys absent from the store are unknown: their probability is the map prior
//! and they have never been touched by a sensor ray.

mod crop;
mod io;
mod traversal;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::geometry::Vec3;
use crate::merge::MergeConfig;

pub use crop::{crop_local, GridGeometry, LocalGrid};
pub use io::{read_voxmap, write_voxmap, VoxmapError};
pub use traversal::{segment_voxels, VoxelRay};

/// Integer voxel index; a point maps to `floor(coordinate / resolution)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl VoxelKey {
    pub const fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    pub fn from_point(p: &Vec3, resolution: f64) -> Self {
        Self {
            i: (p.x / resolution).floor() as i32,
            j: (p.y / resolution).floor() as i32,
            k: (p.z / resolution).floor() as i32,
        }
    }

    /// Center of the cell in world coordinates.
    pub fn center(&self, resolution: f64) -> Vec3 {
        Vec3::new(
            (self.i as f64 + 0.5) * resolution,
            (self.j as f64 + 0.5) * resolution,
            (self.k as f64 + 0.5) * resolution,
        )
    }

    pub fn offset(&self, di: i32, dj: i32, dk: i32) -> Self {
        Self::new(self.i + di, self.j + dj, self.k + dk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelCell {
    pub log_odds: f64,
    pub observed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VoxelState {
    Free,
    Occupied,
    Unknown,
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn probability(log_odds: f64) -> f64 {
    1.0 / (1.0 + (-log_odds).exp())
}

/// Read-only classification of voxels. Implemented by the sensor map and by
/// the prediction-aware views in [`crate::merge`].
pub trait OccupancyView {
    fn resolution(&self) -> f64;
    fn state(&self, key: VoxelKey) -> VoxelState;
}

/// Outcome of one scan integration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub rays: usize,
    /// Rays skipped because the endpoint coincided with the origin.
    pub skipped: usize,
    pub free_updates: usize,
    pub hit_updates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMap {
    resolution: f64,
    prior: f64,
    threshold: f64,
    l_min: f64,
    l_max: f64,
    cells: FxHashMap<VoxelKey, VoxelCell>,
}

impl OccupancyMap {
    /// Empty map with the prior, threshold and clamps taken from `config`.
    pub fn new(resolution: f64, config: &MergeConfig) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        Self {
            resolution,
            prior: config.prior,
            threshold: config.occupancy_threshold,
            l_min: config.l_min,
            l_max: config.l_max,
            cells: FxHashMap::default(),
        }
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn clamps(&self) -> (f64, f64) {
        (self.l_min, self.l_max)
    }

    pub fn prior_log_odds(&self) -> f64 {
        logit(self.prior)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, key: VoxelKey) -> Option<&VoxelCell> {
        self.cells.get(&key)
    }

    /// Log-odds of a voxel; the prior for keys never stored.
    pub fn log_odds(&self, key: VoxelKey) -> f64 {
        self.cells
            .get(&key)
            .map_or_else(|| self.prior_log_odds(), |c| c.log_odds)
    }

    pub fn is_observed(&self, key: VoxelKey) -> bool {
        self.cells.get(&key).is_some_and(|c| c.observed)
    }

    pub fn key_of(&self, p: &Vec3) -> VoxelKey {
        VoxelKey::from_point(p, self.resolution)
    }

    /// Cells in ascending key order.
    pub fn sorted_cells(&self) -> Vec<(VoxelKey, VoxelCell)> {
        let mut out: Vec<_> = self.cells.iter().map(|(k, c)| (*k, *c)).collect();
        out.sort_unstable_by_key(|(k, _)| *k);
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelKey, &VoxelCell)> {
        self.cells.iter()
    }

    /// Adds `delta` to a voxel's log-odds and clamps. Returns the new value.
    pub(crate) fn add_log_odds(&mut self, key: VoxelKey, delta: f64, observe: bool) -> f64 {
        let prior = self.prior_log_odds();
        let (lo, hi) = (self.l_min, self.l_max);
        let cell = self.cells.entry(key).or_insert(VoxelCell {
            log_odds: prior,
            observed: false,
        });
        cell.log_odds = (cell.log_odds + delta).clamp(lo, hi);
        if observe {
            cell.observed = true;
        }
        cell.log_odds
    }

    /// Inserts a cell verbatim, used by the VOXMAP loader.
    pub(crate) fn insert_cell(&mut self, key: VoxelKey, cell: VoxelCell) {
        self.cells.insert(key, cell);
    }

    /// Overwrites the merge parameters that live on the map itself.
    pub(crate) fn set_params(&mut self, prior: f64, config: &MergeConfig) {
        self.prior = prior;
        self.threshold = config.occupancy_threshold;
        self.l_min = config.l_min;
        self.l_max = config.l_max;
    }
}

impl OccupancyView for OccupancyMap {
    fn resolution(&self) -> f64 {
        self.resolution
    }

    fn state(&self, key: VoxelKey) -> VoxelState {
        classify(self, key)
    }
}

/// Sensor classification: unknown until observed, then thresholded.
pub fn classify(map: &OccupancyMap, key: VoxelKey) -> VoxelState {
    match map.cells.get(&key) {
        Some(c) if c.observed => {
            if probability(c.log_odds) > map.threshold {
                VoxelState::Occupied
            } else {
                VoxelState::Free
            }
        }
        _ => VoxelState::Unknown,
    }
}

/// Integrates one range scan taken from `origin`.
///
/// Every voxel crossed by a ray gets the miss update and each endpoint voxel
/// the hit update, at most once per scan. Hits win over misses when a voxel
/// is both crossed by one ray and ended in by another.
pub fn integrate_scan(
    map: &mut OccupancyMap,
    origin: &Vec3,
    endpoints: &[Vec3],
    config: &MergeConfig,
) -> ScanStats {
    let res = map.resolution;
    let mut stats = ScanStats::default();
    let mut free: FxHashSet<VoxelKey> = FxHashSet::default();
    let mut hits: FxHashSet<VoxelKey> = FxHashSet::default();

    for end in endpoints {
        stats.rays += 1;
        let end_key = VoxelKey::from_point(end, res);
        let length = (end - origin).norm();
        if length < 1e-9 {
            stats.skipped += 1;
            continue;
        }
        for key in segment_voxels(origin, end, res) {
            if key != end_key {
                free.insert(key);
            }
        }
        hits.insert(end_key);
    }

    let prior = logit(config.prior);
    let miss = logit(config.p_sensor_miss) - prior;
    let hit = logit(config.p_sensor_hit) - prior;
    for key in free.difference(&hits) {
        map.add_log_odds(*key, miss, true);
        stats.free_updates += 1;
    }
    for key in &hits {
        map.add_log_odds(*key, hit, true);
        stats.hit_updates += 1;
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub key: VoxelKey,
    /// Distance from the origin to where the ray enters the voxel.
    pub distance: f64,
}

/// First voxel classified occupied along a ray, or `None` past `max_range`.
pub fn raycast<V: OccupancyView + ?Sized>(
    view: &V,
    origin: &Vec3,
    direction: &Vec3,
    max_range: f64,
) -> Option<RayHit> {
    let ray = VoxelRay::new(origin, direction, view.resolution(), max_range)?;
    ray.into_iter()
        .find(|step| view.state(step.key) == VoxelState::Occupied)
        .map(|step| RayHit {
            key: step.key,
            distance: step.t_enter,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> MergeConfig {
        MergeConfig::default()
    }

    #[test]
    fn single_ray_marks_four_free_and_one_hit() {
        let c = cfg();
        let mut map = OccupancyMap::new(0.25, &c);
        let origin = Vec3::new(0.1, 0.1, 0.1);
        let stats = integrate_scan(&mut map, &origin, &[Vec3::new(1.1, 0.1, 0.1)], &c);
        assert_eq!(stats.free_updates, 4);
        assert_eq!(stats.hit_updates, 1);
        for i in 0..4 {
            assert_eq!(classify(&map, VoxelKey::new(i, 0, 0)), VoxelState::Free);
        }
        assert_eq!(classify(&map, VoxelKey::new(4, 0, 0)), VoxelState::Occupied);
        assert_eq!(map.len(), 5);
    }

    #[test]
    fn degenerate_ray_is_skipped() {
        let c = cfg();
        let mut map = OccupancyMap::new(0.25, &c);
        let p = Vec3::new(0.3, 0.3, 0.3);
        let stats = integrate_scan(&mut map, &p, &[p], &c);
        assert_eq!(stats.skipped, 1);
        assert!(map.is_empty());
    }

    #[test]
    fn repeated_hits_add_in_log_odds() {
        let c = MergeConfig {
            p_sensor_hit: 0.7,
            prior: 0.5,
            ..cfg()
        };
        let mut map = OccupancyMap::new(0.25, &c);
        let origin = Vec3::new(0.1, 0.1, 0.1);
        let end = Vec3::new(1.1, 0.1, 0.1);
        integrate_scan(&mut map, &origin, &[end], &c);
        integrate_scan(&mut map, &origin, &[end], &c);
        let l = map.log_odds(VoxelKey::new(4, 0, 0));
        assert!((l - 2.0 * logit(0.7)).abs() < 1e-12);
    }

    #[test]
    fn classify_thresholds_observed_cells() {
        let c = cfg();
        let mut map = OccupancyMap::new(0.25, &c);
        let a = VoxelKey::new(1, 2, 3);
        let b = VoxelKey::new(-1, 0, 0);
        assert_eq!(classify(&map, a), VoxelState::Unknown);
        map.insert_cell(a, VoxelCell { log_odds: logit(0.9), observed: true });
        map.insert_cell(b, VoxelCell { log_odds: logit(0.2), observed: true });
        assert_eq!(classify(&map, a), VoxelState::Occupied);
        assert_eq!(classify(&map, b), VoxelState::Free);
        map.insert_cell(b, VoxelCell { log_odds: logit(0.9), observed: false });
        assert_eq!(classify(&map, b), VoxelState::Unknown);
    }

    #[test]
    fn clamps_hold_after_many_updates() {
        let c = cfg();
        let mut map = OccupancyMap::new(0.25, &c);
        let origin = Vec3::new(0.1, 0.1, 0.1);
        for _ in 0..50 {
            integrate_scan(&mut map, &origin, &[Vec3::new(2.1, 0.1, 0.1)], &c);
        }
        for (_, cell) in map.iter() {
            assert!(cell.log_odds >= c.l_min && cell.log_odds <= c.l_max);
        }
        assert_eq!(map.log_odds(VoxelKey::new(8, 0, 0)), c.l_max);
        assert_eq!(map.log_odds(VoxelKey::new(3, 0, 0)), c.l_min);
    }

    #[test]
    fn raycast_finds_wall_two_meters_away() {
        let c = cfg();
        let mut map = OccupancyMap::new(0.25, &c);
        let wall = VoxelKey::new(8, 0, 0);
        map.insert_cell(wall, VoxelCell { log_odds: 2.0, observed: true });
        let origin = Vec3::new(0.0, 0.1, 0.1);
        let hit = raycast(&map, &origin, &Vec3::x(), 5.0).unwrap();
        assert_eq!(hit.key, wall);
        assert!((hit.distance - 2.0).abs() < 1e-9);
        assert!(raycast(&map, &origin, &-Vec3::x(), 5.0).is_none());
        assert!(raycast(&map, &origin, &Vec3::x(), 1.5).is_none());
    }

    #[test]
    fn raycast_from_inside_occupied_voxel_hits_at_zero() {
        let c = cfg();
        let mut map = OccupancyMap::new(0.25, &c);
        let k = VoxelKey::new(0, 0, 0);
        map.insert_cell(k, VoxelCell { log_odds: 2.0, observed: true });
        let hit = raycast(&map, &Vec3::new(0.1, 0.1, 0.1), &Vec3::y(), 3.0).unwrap();
        assert_eq!(hit.key, k);
        assert_eq!(hit.distance, 0.0);
    }

    #[test]
    fn empty_map_raycast_misses() {
        let map = OccupancyMap::new(0.25, &cfg());
        assert!(raycast(&map, &Vec3::zeros(), &Vec3::new(1.0, 1.0, 0.3), 10.0).is_none());
    }
}
