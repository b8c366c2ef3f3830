//! Generative occupancy prediction for exploring robots.
//!
//! The crate couples a log-odds voxel map with a small 3D denoising diffusion
//! model. Local crops of the map are completed by inpainted sampling, and the
//! resulting predictions are fused back into the running map either as a
//! replace-on-install overlay or through the probabilistic log-odds rule.
//! Frontier vertices ranked by exploration gain decide where predictions are
//! made away from the robot.
//!
//! Module map:
//!
//! * [`map`]: sparse log-odds map, ray traversal, local crops, VOXMAP I/O.
//! * [`merge`]: probabilistic and one-shot fusion of predictions.
//! * [`frontier`]: exploration graph, volumetric gain, ranking, selection.
//! * [`diffusion`]: noise schedule, 3D U-Net denoiser, training, inpainting.
//! * [`world`]: procedural indoor worlds, range sensor, episode driver.
//! * [`metrics`]: FID, KID, IoU and unknown-voxel ratios.
//! * [`runner`]: experiment configuration and the full method matrix.

pub mod diffusion;
pub mod frontier;
pub mod geometry;
pub mod map;
pub mod merge;
pub mod metrics;
pub mod runner;
pub mod world;

pub use geometry::Vec3;
pub use map::{
    classify, crop_local, integrate_scan, raycast, GridGeometry, LocalGrid, OccupancyMap,
    OccupancyView, RayHit, ScanStats, VoxelCell, VoxelKey, VoxelState,
};
pub use merge::{merge_multi, merge_one_shot, merge_prediction, MergeConfig, MergedView,
    OneShotView, PredictionGrid};
