//! Experiment orchestration: the BL/SS × RC/FC × OSMM/PMM method matrix.

mod config;
mod episode;
mod export;
mod train;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::diffusion::{load_checkpoint, CheckpointMeta, Denoiser, DiffusionError, NoiseSchedule};
use crate::frontier::FrontierError;
use crate::map::{OccupancyMap, OccupancyView, VoxelState, VoxmapError};
use crate::merge::{MergeError, MergedView, OneShotOverlay};
use crate::metrics::MetricsError;
use crate::world::WorldError;

pub use config::{ExperimentConfig, MethodFlags};
pub use episode::{run_episode, EpisodeReport, FrontierRecord, PoseRow, StageTimings};
pub use export::{eval_map, export_views, write_pgm_slice, write_summary_csv, ExportSummary};
pub use train::{build_corpus, train_command, TrainSummary};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config: {0}")]
    Config(String),
    #[error("world: {0}")]
    World(#[from] WorldError),
    #[error("frontier: {0}")]
    Frontier(#[from] FrontierError),
    #[error("diffusion: {0}")]
    Diffusion(#[from] DiffusionError),
    #[error("merge: {0}")]
    Merge(#[from] MergeError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("map file: {0}")]
    Voxmap(#[from] VoxmapError),
    #[error("checkpoint does not fit the config: {0}")]
    Geometry(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io { path: path.to_path_buf(), source }
}

/// A trained denoiser with the schedule it was trained under.
#[derive(Debug, Clone)]
pub struct Model {
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub meta: CheckpointMeta,
}

pub fn load_model(path: &Path) -> Result<Model, RunnerError> {
    let file = File::open(path).map_err(io_err(path))?;
    let schedule = NoiseSchedule::default();
    let (denoiser, meta) = load_checkpoint(BufReader::new(file), &schedule)?;
    Ok(Model { denoiser, schedule, meta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CropMode {
    RobotCentric,
    FrontierCentric,
}

impl CropMode {
    pub fn tag(&self) -> &'static str {
        match self {
            CropMode::RobotCentric => "RC",
            CropMode::FrontierCentric => "FC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Merge {
    Baseline,
    OneShot,
    Probabilistic,
}

/// One row of the method matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Method {
    pub mode: CropMode,
    pub merge: Merge,
}

impl Method {
    pub fn label(&self) -> String {
        match self.merge {
            Merge::Baseline => format!("BL-{}", self.mode.tag()),
            Merge::OneShot => format!("SS-{}-OSMM", self.mode.tag()),
            Merge::Probabilistic => format!("SS-{}-PMM", self.mode.tag()),
        }
    }

    /// Enabled methods in table order.
    pub fn enabled(flags: &MethodFlags) -> Vec<Method> {
        let mut modes = Vec::new();
        if flags.robot_centric {
            modes.push(CropMode::RobotCentric);
        }
        if flags.frontier_centric {
            modes.push(CropMode::FrontierCentric);
        }
        let mut out = Vec::new();
        if flags.baseline {
            out.extend(modes.iter().map(|&mode| Method { mode, merge: Merge::Baseline }));
        }
        for &mode in &modes {
            if flags.one_shot {
                out.push(Method { mode, merge: Merge::OneShot });
            }
            if flags.probabilistic {
                out.push(Method { mode, merge: Merge::Probabilistic });
            }
        }
        out
    }
}

/// Final map of one method, read through the view that method is scored on.
#[derive(Debug, Clone)]
pub enum MethodMap {
    Sensor(OccupancyMap),
    Merged(OccupancyMap),
    OneShot(OccupancyMap, OneShotOverlay),
}

impl MethodMap {
    /// Map to persist. One-shot overlays are written as unobserved cells.
    pub fn materialize(&self, config: &crate::merge::MergeConfig) -> OccupancyMap {
        match self {
            MethodMap::Sensor(m) | MethodMap::Merged(m) => m.clone(),
            MethodMap::OneShot(m, overlay) => {
                let mut out = m.clone();
                let l = m.prior_log_odds() + config.prediction_delta(true);
                for key in overlay.sorted_keys() {
                    out.insert_cell(key, crate::map::VoxelCell { log_odds: l, observed: false });
                }
                out
            }
        }
    }
}

impl OccupancyView for MethodMap {
    fn resolution(&self) -> f64 {
        match self {
            MethodMap::Sensor(m) | MethodMap::Merged(m) | MethodMap::OneShot(m, _) => m.resolution(),
        }
    }

    fn state(&self, key: crate::map::VoxelKey) -> VoxelState {
        match self {
            MethodMap::Sensor(m) => crate::map::classify(m, key),
            MethodMap::Merged(m) => MergedView(m).state(key),
            MethodMap::OneShot(m, o) => o.view(m).state(key),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive seed derivation.
pub(crate) fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(base), |acc, p| splitmix(acc ^ splitmix(*p)))
}
