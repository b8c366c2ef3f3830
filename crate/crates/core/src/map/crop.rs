use crate::geometry::Vec3;

use super::{OccupancyView, VoxelKey, VoxelState};

/// Placement of a dense cubic grid in the voxel lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    /// Lowest-index corner voxel.
    pub origin: VoxelKey,
    /// Voxels per side.
    pub dim: usize,
    pub resolution: f64,
}

impl GridGeometry {
    /// Cube of `round(2 * half_extent / resolution)` voxels around `center`.
    pub fn around(center: &Vec3, half_extent: f64, resolution: f64) -> Self {
        let dim = (2.0 * half_extent / resolution).round().max(1.0) as usize;
        let c = VoxelKey::from_point(center, resolution);
        let h = (dim / 2) as i32;
        Self {
            origin: c.offset(-h, -h, -h),
            dim,
            resolution,
        }
    }

    pub fn len(&self) -> usize {
        self.dim * self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    /// Linear index of local coordinates; x varies fastest.
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dim + y) * self.dim + x
    }

    pub fn key_at(&self, index: usize) -> VoxelKey {
        let d = self.dim;
        let x = index % d;
        let y = (index / d) % d;
        let z = index / (d * d);
        self.origin.offset(x as i32, y as i32, z as i32)
    }

    pub fn index_of(&self, key: VoxelKey) -> Option<usize> {
        let d = self.dim as i32;
        let (x, y, z) = (
            key.i - self.origin.i,
            key.j - self.origin.j,
            key.k - self.origin.k,
        );
        if (0..d).contains(&x) && (0..d).contains(&y) && (0..d).contains(&z) {
            Some(self.index(x as usize, y as usize, z as usize))
        } else {
            None
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = VoxelKey> + '_ {
        (0..self.len()).map(|i| self.key_at(i))
    }
}

/// Dense crop of a map: -1 free, +1 occupied, 0 unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGrid {
    pub center: Vec3,
    pub half_extent: f64,
    pub geometry: GridGeometry,
    pub values: Vec<f64>,
    pub known_mask: Vec<bool>,
}

impl LocalGrid {
    /// Builds a fully known grid from complete `values` in {-1, +1}.
    pub fn from_complete(center: Vec3, half_extent: f64, geometry: GridGeometry, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), geometry.len());
        let known_mask = vec![true; values.len()];
        Self {
            center,
            half_extent,
            geometry,
            values,
            known_mask,
        }
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn unknown_count(&self) -> usize {
        self.known_mask.iter().filter(|m| !**m).count()
    }
}

pub fn state_value(state: VoxelState) -> (f64, bool) {
    match state {
        VoxelState::Free => (-1.0, true),
        VoxelState::Occupied => (1.0, true),
        VoxelState::Unknown => (0.0, false),
    }
}

/// Dense crop around `center`, classified through `view`.
pub fn crop_local<V: OccupancyView + ?Sized>(view: &V, center: &Vec3, half_extent: f64) -> LocalGrid {
    let resolution = view.resolution();
    assert!(half_extent > resolution, "crop must span more than one voxel");
    let geometry = GridGeometry::around(center, half_extent, resolution);
    let mut values = Vec::with_capacity(geometry.len());
    let mut known_mask = Vec::with_capacity(geometry.len());
    for key in geometry.keys() {
        let (v, m) = state_value(view.state(key));
        values.push(v);
        known_mask.push(m);
    }
    LocalGrid {
        center: *center,
        half_extent,
        geometry,
        values,
        known_mask,
    }
}
