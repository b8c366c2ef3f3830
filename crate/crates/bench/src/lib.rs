//! Shared fixtures for the pipeline benchmarks.

use occfuse::diffusion::{Arch, Denoiser, NoiseSchedule};
use occfuse::world::{generate_world, simulate_scan, GroundTruthGrid, LayoutKind, Pose, SensorConfig, WorldSpec};
use occfuse::{crop_local, integrate_scan, LocalGrid, MergeConfig, OccupancyMap, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const RADIUS: f64 = 3.3;

pub struct Fixture {
    pub world: GroundTruthGrid,
    pub sensor: SensorConfig,
    pub merge: MergeConfig,
    pub pose: Pose,
    pub scan: Vec<Vec3>,
    /// Map after every pose of the default route.
    pub map: OccupancyMap,
    pub crop: LocalGrid,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
}

impl Fixture {
    pub fn new() -> Self {
        let world = generate_world(&WorldSpec { layout: LayoutKind::SquareLoop, ..WorldSpec::default() })
            .expect("default world");
        let sensor = SensorConfig::default();
        let merge = MergeConfig::default();
        let traj = world.default_trajectory(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut map = OccupancyMap::new(world.resolution(), &merge);
        for p in &traj.poses {
            let pts = simulate_scan(&world, p, &sensor, &mut rng);
            integrate_scan(&mut map, &p.position, &pts, &merge);
        }
        let pose = traj.poses[traj.len() / 2];
        let scan = simulate_scan(&world, &pose, &sensor, &mut rng);
        let crop = crop_local(&map, &pose.position, RADIUS);
        let arch = Arch { dim: crop.dim(), channels: [4, 8, 16], temb_dim: 8 };
        let denoiser = Denoiser::new(arch, 0).expect("valid arch");
        Self { world, sensor, merge, pose, scan, map, crop, denoiser, schedule: NoiseSchedule::default() }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
