//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so a
//! config file only needs the keys it changes. [`ExperimentConfig::to_text`]
//! writes the full documented key set.

use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use super::RunnerError;
use crate::diffusion::{Arch, SamplerConfig, TrainConfig};
use crate::frontier::{Aabb, Fov, GainParams, GraphParams, SelectParams};
use crate::geometry::Vec3;
use crate::map::logit;
use crate::merge::MergeConfig;
use crate::world::{LayoutKind, SensorConfig, WorldSpec};

/// Which rows of the method matrix an episode produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodFlags {
    pub baseline: bool,
    pub robot_centric: bool,
    pub frontier_centric: bool,
    pub one_shot: bool,
    pub probabilistic: bool,
}

impl MethodFlags {
    pub const ALL: MethodFlags = MethodFlags {
        baseline: true,
        robot_centric: true,
        frontier_centric: true,
        one_shot: true,
        probabilistic: true,
    };

    pub fn uses_diffusion(&self) -> bool {
        self.one_shot || self.probabilistic
    }
}

trait Value: Sized {
    fn parse(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("`{s}`: {e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
from_str_value!(f64, usize, u64, bool, LayoutKind);

impl Value for Option<PathBuf> {
    fn parse(s: &str) -> Result<Self, String> {
        Ok(if s.is_empty() || s == "none" { None } else { Some(PathBuf::from(s)) })
    }
    fn render(&self) -> String {
        self.as_ref().map_or("none".into(), |p| p.display().to_string())
    }
}

impl Value for [usize; 3] {
    fn parse(s: &str) -> Result<Self, String> {
        let v: Vec<usize> = s
            .split(',')
            .map(|x| x.trim().parse::<usize>().map_err(|e| format!("`{x}`: {e}")))
            .collect::<Result<_, _>>()?;
        v.try_into().map_err(|_| format!("`{s}`: expected three comma-separated widths"))
    }
    fn render(&self) -> String {
        format!("{},{},{}", self[0], self[1], self[2])
    }
}

impl Value for Vec<LayoutKind> {
    fn parse(s: &str) -> Result<Self, String> {
        s.split(',').map(|x| x.trim().parse()).collect()
    }
    fn render(&self) -> String {
        self.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")
    }
}

impl Value for MethodFlags {
    fn parse(s: &str) -> Result<Self, String> {
        let mut f = MethodFlags {
            baseline: false,
            robot_centric: false,
            frontier_centric: false,
            one_shot: false,
            probabilistic: false,
        };
        for name in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            match name {
                "baseline" => f.baseline = true,
                "robot_centric" => f.robot_centric = true,
                "frontier_centric" => f.frontier_centric = true,
                "one_shot" => f.one_shot = true,
                "probabilistic" => f.probabilistic = true,
                "all" => f = MethodFlags::ALL,
                other => return Err(format!("unknown method flag `{other}`")),
            }
        }
        Ok(f)
    }
    fn render(&self) -> String {
        let names = [
            (self.baseline, "baseline"),
            (self.robot_centric, "robot_centric"),
            (self.frontier_centric, "frontier_centric"),
            (self.one_shot, "one_shot"),
            (self.probabilistic, "probabilistic"),
        ];
        names.iter().filter(|(on, _)| *on).map(|(_, n)| *n).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub world_layout: LayoutKind,
    pub world_seed: u64,
    pub resolution: f64,
    pub hall_width: f64,
    pub hall_height: f64,
    pub wall_thickness: f64,
    pub door_probability: f64,
    pub world_extent: f64,

    pub trajectory_spacing: f64,
    pub trajectory_file: Option<PathBuf>,

    pub sensor_azimuth: usize,
    pub sensor_elevation: usize,
    pub sensor_half_fov_deg: f64,
    pub sensor_range: f64,
    pub sensor_noise_sd: f64,
    pub sensor_seed: u64,

    pub sensor_hit: f64,
    pub sensor_miss: f64,
    pub pred_hit: f64,
    pub pred_miss: f64,
    pub prior: f64,
    pub threshold: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,

    pub gamma_s: f64,
    pub gamma_d: f64,
    pub w_unknown: f64,
    pub w_free: f64,
    pub w_occupied: f64,

    pub graph_samples: usize,
    pub graph_connect_radius: f64,
    pub graph_half_extent: f64,
    pub graph_half_height: f64,
    pub gain_rays: usize,
    pub gain_range: f64,

    pub d_m: f64,
    pub n_max: usize,
    pub frontier_range: f64,

    pub prediction_radius: f64,
    pub predictions_per_pose: usize,
    pub prediction_stride: usize,
    pub inference_steps: usize,
    pub sampler_noise: bool,

    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub feature_seed: u64,
    pub methods: MethodFlags,

    pub corpus_size: usize,
    pub corpus_layouts: Vec<LayoutKind>,
    pub corpus_seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub warmup_steps: usize,
    /// 0 means no cap.
    pub max_steps: usize,
    pub model_channels: [usize; 3],
    pub model_temb: usize,
    pub model_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let w = WorldSpec::default();
        let s = SensorConfig::default();
        let m = MergeConfig::default();
        let g = GainParams::default();
        let t = TrainConfig::default();
        let a = Arch::default();
        Self {
            world_layout: w.layout,
            world_seed: w.seed,
            resolution: w.resolution,
            hall_width: w.hall_width,
            hall_height: w.hall_height,
            wall_thickness: w.wall_thickness,
            door_probability: w.door_probability,
            world_extent: w.extent,
            trajectory_spacing: 0.5,
            trajectory_file: None,
            sensor_azimuth: s.n_azimuth,
            sensor_elevation: s.n_elevation,
            sensor_half_fov_deg: s.elevation_half_angle.to_degrees(),
            sensor_range: s.max_range,
            sensor_noise_sd: s.noise_sd,
            sensor_seed: s.noise_seed,
            sensor_hit: m.p_sensor_hit,
            sensor_miss: m.p_sensor_miss,
            pred_hit: m.p_pred_hit,
            pred_miss: m.p_pred_miss,
            prior: m.prior,
            threshold: m.occupancy_threshold,
            clamp_min: 0.12,
            clamp_max: 0.97,
            gamma_s: g.gamma_s,
            gamma_d: g.gamma_d,
            w_unknown: g.w_unknown,
            w_free: g.w_free,
            w_occupied: g.w_occupied,
            graph_samples: 150,
            graph_connect_radius: 1.5,
            graph_half_extent: 7.5,
            graph_half_height: 1.5,
            gain_rays: 48,
            gain_range: 3.0,
            d_m: 3.0,
            n_max: 2,
            frontier_range: 7.0,
            prediction_radius: 3.3,
            predictions_per_pose: 4,
            prediction_stride: 1,
            inference_steps: SamplerConfig::default().inference_steps,
            sampler_noise: true,
            checkpoint: None,
            seed: 0,
            feature_seed: 0,
            methods: MethodFlags::ALL,
            corpus_size: 4096,
            corpus_layouts: LayoutKind::ALL.to_vec(),
            corpus_seed: 0,
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr_start: t.lr_start,
            lr_peak: t.lr_peak,
            warmup_steps: t.warmup_steps,
            max_steps: 0,
            model_channels: a.channels,
            model_temb: a.temb_dim,
            model_seed: 0,
        }
    }
}

macro_rules! keys {
    ($($section:literal { $($key:literal => $field:ident,)* })*) => {
        impl ExperimentConfig {
            fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $($($key => self.$field = Value::parse(value)?,)*)*
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            }

            /// Every key with its current value, grouped by section.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(
                    let _ = writeln!(s, "# {}", $section);
                    $(let _ = writeln!(s, "{} = {}", $key, Value::render(&self.$field));)*
                    s.push('\n');
                )*
                s
            }
        }
    };
}

keys! {
    "world" {
        "world.layout" => world_layout,
        "world.seed" => world_seed,
        "world.resolution" => resolution,
        "world.hall_width" => hall_width,
        "world.hall_height" => hall_height,
        "world.wall_thickness" => wall_thickness,
        "world.door_probability" => door_probability,
        "world.extent" => world_extent,
    }
    "trajectory" {
        "trajectory.spacing" => trajectory_spacing,
        "trajectory.file" => trajectory_file,
    }
    "sensor" {
        "sensor.azimuth_rays" => sensor_azimuth,
        "sensor.elevation_rays" => sensor_elevation,
        "sensor.half_fov_deg" => sensor_half_fov_deg,
        "sensor.max_range" => sensor_range,
        "sensor.noise_sd" => sensor_noise_sd,
        "sensor.seed" => sensor_seed,
    }
    "merge (probabilities)" {
        "sensor_hit" => sensor_hit,
        "sensor_miss" => sensor_miss,
        "pred_hit" => pred_hit,
        "pred_miss" => pred_miss,
        "prior" => prior,
        "threshold" => threshold,
        "clamp_min" => clamp_min,
        "clamp_max" => clamp_max,
    }
    "exploration gain" {
        "gain.gamma_s" => gamma_s,
        "gain.gamma_d" => gamma_d,
        "gain.w_unknown" => w_unknown,
        "gain.w_free" => w_free,
        "gain.w_occupied" => w_occupied,
        "gain.rays" => gain_rays,
        "gain.range" => gain_range,
    }
    "frontier graph" {
        "graph.samples" => graph_samples,
        "graph.connect_radius" => graph_connect_radius,
        "graph.half_extent" => graph_half_extent,
        "graph.half_height" => graph_half_height,
        "frontier.d_m" => d_m,
        "frontier.n_max" => n_max,
        "frontier.max_range" => frontier_range,
    }
    "prediction" {
        "prediction.radius" => prediction_radius,
        "prediction.per_pose" => predictions_per_pose,
        "prediction.stride" => prediction_stride,
        "prediction.inference_steps" => inference_steps,
        "prediction.sampler_noise" => sampler_noise,
        "checkpoint" => checkpoint,
        "seed" => seed,
        "feature_seed" => feature_seed,
        "methods" => methods,
    }
    "training" {
        "train.corpus_size" => corpus_size,
        "train.layouts" => corpus_layouts,
        "train.corpus_seed" => corpus_seed,
        "train.batch_size" => batch_size,
        "train.epochs" => epochs,
        "train.lr_start" => lr_start,
        "train.lr_peak" => lr_peak,
        "train.warmup_steps" => warmup_steps,
        "train.max_steps" => max_steps,
        "model.channels" => model_channels,
        "model.temb" => model_temb,
        "model.seed" => model_seed,
    }
}

fn invalid(msg: impl Into<String>) -> RunnerError {
    RunnerError::Config(msg.into())
}

impl ExperimentConfig {
    /// Applies `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, RunnerError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(invalid(format!("line {}: duplicate key `{k}`", n + 1)));
            }
            cfg.set(k, v.trim()).map_err(|e| invalid(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn apply(&mut self, assignment: &str) -> Result<(), RunnerError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| invalid(format!("override `{assignment}` is not key=value")))?;
        self.set(k.trim(), v.trim()).map_err(invalid)
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        self.merge_config().validate().map_err(|e| invalid(e.to_string()))?;
        if !(self.clamp_min > 0.0 && self.clamp_min < self.prior && self.prior < self.clamp_max && self.clamp_max < 1.0) {
            return Err(invalid("clamps must satisfy 0 < clamp_min < prior < clamp_max < 1"));
        }
        if !(self.d_m > 0.0) {
            return Err(invalid("frontier.d_m must be positive"));
        }
        if self.n_max < 1 {
            return Err(invalid("frontier.n_max must be at least 1"));
        }
        if !(1..=16).contains(&self.predictions_per_pose) {
            return Err(invalid("prediction.per_pose must lie in 1..=16"));
        }
        for (name, v) in [
            ("prediction.radius", self.prediction_radius),
            ("frontier.max_range", self.frontier_range),
            ("sensor.max_range", self.sensor_range),
            ("trajectory.spacing", self.trajectory_spacing),
            ("world.resolution", self.resolution),
            ("graph.connect_radius", self.graph_connect_radius),
            ("gain.range", self.gain_range),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        if self.prediction_radius <= self.resolution {
            return Err(invalid("prediction.radius must exceed one voxel"));
        }
        if self.prediction_stride == 0 || self.inference_steps == 0 {
            return Err(invalid("prediction.stride and prediction.inference_steps must be positive"));
        }
        let m = self.methods;
        if !(m.robot_centric || m.frontier_centric) {
            return Err(invalid("methods need robot_centric and/or frontier_centric"));
        }
        if !(m.baseline || m.one_shot || m.probabilistic) {
            return Err(invalid("methods need baseline, one_shot and/or probabilistic"));
        }
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn world_spec(&self) -> WorldSpec {
        WorldSpec {
            seed: self.world_seed,
            layout: self.world_layout,
            resolution: self.resolution,
            hall_width: self.hall_width,
            hall_height: self.hall_height,
            wall_thickness: self.wall_thickness,
            door_probability: self.door_probability,
            extent: self.world_extent,
        }
    }

    pub fn sensor(&self) -> SensorConfig {
        SensorConfig {
            n_azimuth: self.sensor_azimuth,
            n_elevation: self.sensor_elevation,
            elevation_half_angle: self.sensor_half_fov_deg.to_radians(),
            max_range: self.sensor_range,
            noise_sd: self.sensor_noise_sd,
            noise_seed: self.sensor_seed,
        }
    }

    pub fn merge_config(&self) -> MergeConfig {
        MergeConfig {
            p_sensor_hit: self.sensor_hit,
            p_sensor_miss: self.sensor_miss,
            p_pred_hit: self.pred_hit,
            p_pred_miss: self.pred_miss,
            prior: self.prior,
            occupancy_threshold: self.threshold,
            l_min: logit(self.clamp_min),
            l_max: logit(self.clamp_max),
        }
    }

    pub fn gain_params(&self, heading: Vec3) -> GainParams {
        GainParams {
            gamma_s: self.gamma_s,
            gamma_d: self.gamma_d,
            w_unknown: self.w_unknown,
            w_free: self.w_free,
            w_occupied: self.w_occupied,
            exploration_heading: Vec3::x(),
        }
        .with_heading(heading)
    }

    pub fn graph_params(&self, center: &Vec3, seed: u64) -> GraphParams {
        let h = self.graph_half_extent;
        GraphParams {
            n_samples: self.graph_samples,
            connect_radius: self.graph_connect_radius,
            bounds: Aabb::around(center, &Vec3::new(h, h, self.graph_half_height)),
            seed,
        }
    }

    pub fn fov(&self) -> Fov {
        Fov { n_rays: self.gain_rays, max_range: self.gain_range, bounds: None }
    }

    pub fn select_params(&self) -> SelectParams {
        SelectParams { d_m: self.d_m, n_max: self.n_max, max_range: self.frontier_range }
    }

    /// Voxels per side of a prediction crop.
    pub fn crop_dim(&self) -> usize {
        (2.0 * self.prediction_radius / self.resolution).round().max(1.0) as usize
    }

    pub fn arch(&self) -> Arch {
        Arch { dim: self.crop_dim(), channels: self.model_channels, temb_dim: self.model_temb }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr_start: self.lr_start,
            lr_peak: self.lr_peak,
            warmup_steps: self.warmup_steps,
            seed: self.model_seed,
            max_steps: (self.max_steps > 0).then_some(self.max_steps),
        }
    }
}
