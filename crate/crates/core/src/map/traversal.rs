//! Incremental voxel traversal (Amanatides & Woo).

use crate::geometry::Vec3;

use super::VoxelKey;

/// One voxel crossed by a ray, with the parametric interval spent inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelStep {
    pub key: VoxelKey,
    pub t_enter: f64,
    pub t_exit: f64,
}

/// Voxels crossed by a ray in order, each exactly once, until `max_range`.
#[derive(Debug, Clone)]
pub struct VoxelRay {
    key: VoxelKey,
    step: [i32; 3],
    t_max: [f64; 3],
    t_delta: [f64; 3],
    t: f64,
    max_range: f64,
    done: bool,
}

impl VoxelRay {
    /// `direction` need not be normalized; distances are reported in meters.
    /// Returns `None` for a zero direction.
    pub fn new(origin: &Vec3, direction: &Vec3, resolution: f64, max_range: f64) -> Option<Self> {
        let norm = direction.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        let d = direction / norm;
        let key = VoxelKey::from_point(origin, resolution);
        let cell = [key.i, key.j, key.k];
        let mut step = [0i32; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for axis in 0..3 {
            let (o, di) = (origin[axis], d[axis]);
            if di > 0.0 {
                step[axis] = 1;
                t_max[axis] = (((cell[axis] as f64 + 1.0) * resolution - o) / di).max(0.0);
                t_delta[axis] = resolution / di;
            } else if di < 0.0 {
                step[axis] = -1;
                t_max[axis] = ((cell[axis] as f64 * resolution - o) / di).max(0.0);
                t_delta[axis] = -resolution / di;
            }
        }
        Some(Self {
            key,
            step,
            t_max,
            t_delta,
            t: 0.0,
            max_range,
            done: false,
        })
    }
}

impl Iterator for VoxelRay {
    type Item = VoxelStep;

    fn next(&mut self) -> Option<VoxelStep> {
        if self.done {
            return None;
        }
        let axis = if self.t_max[0] <= self.t_max[1] && self.t_max[0] <= self.t_max[2] {
            0
        } else if self.t_max[1] <= self.t_max[2] {
            1
        } else {
            2
        };
        let t_exit = self.t_max[axis];
        let out = VoxelStep {
            key: self.key,
            t_enter: self.t,
            t_exit,
        };
        if t_exit >= self.max_range || !t_exit.is_finite() {
            self.done = true;
            return Some(out);
        }
        self.t = t_exit;
        self.t_max[axis] += self.t_delta[axis];
        match axis {
            0 => self.key.i += self.step[0],
            1 => self.key.j += self.step[1],
            _ => self.key.k += self.step[2],
        }
        Some(out)
    }
}

/// Keys of the voxels crossed by the segment `a → b`, in traversal order.
pub fn segment_voxels(a: &Vec3, b: &Vec3, resolution: f64) -> Vec<VoxelKey> {
    let d = b - a;
    let length = d.norm();
    match VoxelRay::new(a, &d, resolution, length) {
        Some(ray) => ray.map(|s| s.key).collect(),
        None => vec![VoxelKey::from_point(a, resolution)],
    }
}
