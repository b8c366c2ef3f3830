use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, io_err, CropMode, ExperimentConfig, Merge, Method, MethodMap, Model, RunnerError};
use crate::diffusion::{sample_inpaint, SamplerConfig};
use crate::frontier::{build_graph, compute_gains, exploration_gain, select_frontiers, shortest_paths};
use crate::geometry::Vec3;
use crate::map::{crop_local, integrate_scan, LocalGrid, OccupancyMap, OccupancyView};
use crate::merge::{merge_multi, MergedView, OneShotOverlay, PredictionGrid};
use crate::metrics::{fid, kid, pairwise_ious, unknown_ratio, DistributionStats, FeatureExtractor, IouPmf, MetricRow};
use crate::world::{generate_world, simulate_scan, GroundTruthGrid, Trajectory};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub scan: Duration,
    pub graph: Duration,
    pub predict: Duration,
    pub merge: Duration,
    pub metrics: Duration,
}

/// Metrics of one method at one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRow {
    pub pose: usize,
    pub method: String,
    pub crops: usize,
    pub unknown_pct: f64,
    /// Fraction of crop voxels whose state equals ground truth.
    pub gt_agreement: f64,
    pub mean_iou: Option<f64>,
}

impl PoseRow {
    pub const HEADER: &'static str = "pose,method,crops,unknown_pct,gt_agreement,mean_iou";

    pub fn to_csv(&self) -> String {
        let iou = self.mean_iou.map_or(String::new(), |v| format!("{v:.6}"));
        format!(
            "{},{},{},{:.4},{:.6},{}",
            self.pose, self.method, self.crops, self.unknown_pct, self.gt_agreement, iou
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierRecord {
    pub pose: usize,
    pub robot: Vec3,
    pub position: Vec3,
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeReport {
    pub config_hash: String,
    pub methods: Vec<Method>,
    pub pose_rows: Vec<PoseRow>,
    pub summary: Vec<MetricRow>,
    /// Pooled within-crop pairwise IoU per crop mode.
    pub iou: Vec<(CropMode, IouPmf)>,
    pub maps: Vec<(Method, MethodMap)>,
    pub frontiers: Vec<FrontierRecord>,
    pub diffusion_calls: usize,
    pub poses: usize,
    pub world: GroundTruthGrid,
    pub timings: StageTimings,
}

impl EpisodeReport {
    pub fn summary_row(&self, label: &str) -> Option<&MetricRow> {
        self.summary.iter().find(|r| r.method == label)
    }

    pub fn iou_pmf(&self, mode: CropMode) -> Option<&IouPmf> {
        self.iou.iter().find(|(m, _)| *m == mode).map(|(_, p)| p)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = format!("{}\n", MetricRow::HEADER);
        for r in &self.summary {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    pub fn poses_csv(&self) -> String {
        let mut s = format!("{}\n", PoseRow::HEADER);
        for r in &self.pose_rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }
}

#[derive(Default)]
struct MethodAccumulator {
    features: Vec<Vec<f64>>,
    unknown: Vec<f64>,
}

fn agreement(crop: &LocalGrid, gt: &LocalGrid) -> f64 {
    let same = crop
        .values
        .iter()
        .zip(&crop.known_mask)
        .zip(&gt.values)
        .filter(|((v, known), g)| **known && *v == *g)
        .count();
    same as f64 / crop.len() as f64
}

fn load_trajectory(cfg: &ExperimentConfig, world: &GroundTruthGrid) -> Result<Trajectory, RunnerError> {
    match &cfg.trajectory_file {
        Some(path) => {
            let f = File::open(path).map_err(io_err(path))?;
            Ok(Trajectory::read_csv(BufReader::new(f), cfg.trajectory_spacing)?)
        }
        None => Ok(world.default_trajectory(cfg.trajectory_spacing)),
    }
}

fn check_model(cfg: &ExperimentConfig, model: Option<&Model>) -> Result<(), RunnerError> {
    if !cfg.methods.uses_diffusion() {
        return Ok(());
    }
    let model = model.ok_or_else(|| RunnerError::Config("prediction methods need a checkpoint".into()))?;
    let dim = model.denoiser.arch().dim;
    if dim != cfg.crop_dim() {
        return Err(RunnerError::Geometry(format!(
            "model grids have {dim} voxels per side, prediction.radius gives {}",
            cfg.crop_dim()
        )));
    }
    if (model.meta.resolution - cfg.resolution).abs() > 1e-9 {
        return Err(RunnerError::Geometry(format!(
            "model trained at {} m per voxel, world uses {}",
            model.meta.resolution, cfg.resolution
        )));
    }
    Ok(())
}

struct Predictor<'a> {
    model: &'a Model,
    cfg: &'a ExperimentConfig,
    calls: usize,
}

impl Predictor<'_> {
    fn group(&mut self, crop: &LocalGrid, pose: usize, slot: usize) -> Result<Vec<PredictionGrid>, RunnerError> {
        (0..self.cfg.predictions_per_pose)
            .map(|k| {
                self.calls += 1;
                let sampler = SamplerConfig {
                    inference_steps: self.cfg.inference_steps,
                    stochastic: self.cfg.sampler_noise,
                    seed: derive_seed(self.cfg.seed, &[pose as u64, slot as u64, k as u64]),
                    threshold: 0.0,
                };
                Ok(sample_inpaint(&self.model.denoiser, &self.model.schedule, crop, &sampler)?)
            })
            .collect()
    }
}

/// Runs one episode of the configured method matrix.
///
/// Every pose integrates a scan into the baseline map and the per-mode PMM
/// maps. Every `prediction.stride` poses the robot-centric crop and the
/// selected frontier crops are predicted, merged and scored against ground
/// truth crops at the same centres.
pub fn run_episode(cfg: &ExperimentConfig, model: Option<&Model>) -> Result<EpisodeReport, RunnerError> {
    cfg.validate()?;
    check_model(cfg, model)?;
    let world = generate_world(&cfg.world_spec())?;
    let trajectory = load_trajectory(cfg, &world)?;
    trajectory.validate(&world)?;
    let merge_cfg = cfg.merge_config();
    let sensor = cfg.sensor();
    let methods = Method::enabled(&cfg.methods);
    let extractor = FeatureExtractor::new(cfg.crop_dim(), cfg.feature_seed)?;
    let radius = cfg.prediction_radius;
    let modes: Vec<CropMode> = {
        let mut m: Vec<CropMode> = methods.iter().map(|m| m.mode).collect();
        m.dedup();
        m.sort();
        m.dedup();
        m
    };

    let mut timings = StageTimings::default();
    let mut bl = OccupancyMap::new(cfg.resolution, &merge_cfg);
    let mut pmm: BTreeMap<CropMode, OccupancyMap> = BTreeMap::new();
    let mut osmm: BTreeMap<CropMode, OneShotOverlay> = BTreeMap::new();
    for &mode in &modes {
        if cfg.methods.probabilistic {
            pmm.insert(mode, OccupancyMap::new(cfg.resolution, &merge_cfg));
        }
        if cfg.methods.one_shot {
            osmm.insert(mode, OneShotOverlay::default());
        }
    }
    let mut predictor = model
        .filter(|_| cfg.methods.uses_diffusion())
        .map(|model| Predictor { model, cfg, calls: 0 });
    let mut acc: BTreeMap<Method, MethodAccumulator> = methods.iter().map(|m| (*m, Default::default())).collect();
    let mut gt_features: BTreeMap<CropMode, Vec<Vec<f64>>> = BTreeMap::new();
    let mut ious: BTreeMap<CropMode, Vec<f64>> = BTreeMap::new();
    let mut pose_rows = Vec::new();
    let mut frontiers = Vec::new();
    let mut sensor_rng = ChaCha8Rng::seed_from_u64(sensor.noise_seed);

    for (i, pose) in trajectory.poses.iter().enumerate() {
        let t0 = Instant::now();
        let points = simulate_scan(&world, pose, &sensor, &mut sensor_rng);
        integrate_scan(&mut bl, &pose.position, &points, &merge_cfg);
        for map in pmm.values_mut() {
            integrate_scan(map, &pose.position, &points, &merge_cfg);
        }
        timings.scan += t0.elapsed();
        if i % cfg.prediction_stride != 0 {
            continue;
        }

        let mut centers: BTreeMap<CropMode, Vec<Vec3>> = BTreeMap::new();
        if cfg.methods.robot_centric {
            centers.insert(CropMode::RobotCentric, vec![pose.position]);
        }
        if cfg.methods.frontier_centric {
            let t = Instant::now();
            let mut graph = build_graph(&bl, &pose.position, &cfg.graph_params(&pose.position, derive_seed(cfg.seed, &[i as u64])))?;
            compute_gains(&mut graph, &bl, &cfg.fov());
            let paths = shortest_paths(&graph);
            let ranked = exploration_gain(&graph, &paths, &cfg.gain_params(pose.heading()));
            let selected = select_frontiers(&ranked, &pose.position, &cfg.select_params());
            frontiers.extend(selected.iter().map(|f| FrontierRecord {
                pose: i,
                robot: pose.position,
                position: f.position,
                gain: f.gain,
            }));
            centers.insert(CropMode::FrontierCentric, selected.iter().map(|f| f.position).collect());
            timings.graph += t.elapsed();
        }

        let mut pose_ious: BTreeMap<CropMode, Vec<f64>> = BTreeMap::new();
        if let Some(pred) = predictor.as_mut() {
            for (&mode, cs) in &centers {
                for (slot, c) in cs.iter().enumerate() {
                    let crop = crop_local(&bl, c, radius);
                    let t = Instant::now();
                    let preds = pred.group(&crop, i, slot + (mode == CropMode::FrontierCentric) as usize)?;
                    timings.predict += t.elapsed();
                    let t = Instant::now();
                    if preds.len() >= 2 {
                        pose_ious.entry(mode).or_default().extend(pairwise_ious(&preds)?);
                    }
                    if let Some(map) = pmm.get_mut(&mode) {
                        merge_multi(map, &crop, &preds, &merge_cfg)?;
                    }
                    if let Some(overlay) = osmm.get_mut(&mode) {
                        for p in &preds {
                            overlay.install(&bl, &crop, p)?;
                        }
                    }
                    timings.merge += t.elapsed();
                }
            }
        }

        let t = Instant::now();
        for (&mode, cs) in &centers {
            let gts: Vec<LocalGrid> = cs.iter().map(|c| world.crop(c, radius)).collect();
            for g in &gts {
                gt_features.entry(mode).or_default().push(extractor.extract(g)?);
            }
            for m in methods.iter().filter(|m| m.mode == mode) {
                let view: Box<dyn OccupancyView + '_> = match m.merge {
                    Merge::Baseline => Box::new(MergedView(&bl)),
                    Merge::Probabilistic => Box::new(MergedView(&pmm[&mode])),
                    Merge::OneShot => Box::new(osmm[&mode].view(&bl)),
                };
                let a = acc.get_mut(m).expect("accumulator per method");
                let (mut unk, mut agree) = (0.0, 0.0);
                for (c, g) in cs.iter().zip(&gts) {
                    let crop = crop_local(view.as_ref(), c, radius);
                    let u = unknown_ratio(&crop);
                    a.unknown.push(u);
                    a.features.push(extractor.extract(&crop)?);
                    unk += u;
                    agree += agreement(&crop, g);
                }
                let n = cs.len();
                let mean_iou = match (m.merge, pose_ious.get(&mode)) {
                    (Merge::Baseline, _) | (_, None) => None,
                    (_, Some(v)) => Some(v.iter().sum::<f64>() / v.len() as f64),
                };
                pose_rows.push(PoseRow {
                    pose: i,
                    method: m.label(),
                    crops: n,
                    unknown_pct: if n > 0 { unk / n as f64 } else { 0.0 },
                    gt_agreement: if n > 0 { agree / n as f64 } else { 0.0 },
                    mean_iou,
                });
            }
        }
        for (mode, v) in pose_ious {
            ious.entry(mode).or_default().extend(v);
        }
        timings.metrics += t.elapsed();
    }

    let config_hash = cfg.hash();
    let mut summary = Vec::new();
    for m in &methods {
        let a = &acc[m];
        let gt = gt_features.get(&m.mode).map(Vec::as_slice).unwrap_or(&[]);
        let (f, k) = if a.features.len() >= 2 && gt.len() >= 2 {
            let fa = DistributionStats::from_features(&a.features)?;
            let fg = DistributionStats::from_features(gt)?;
            (fid(&fa, &fg)?, kid(&a.features, gt)?)
        } else {
            (f64::NAN, f64::NAN)
        };
        let mean_iou = match m.merge {
            Merge::Baseline => None,
            _ => ious.get(&m.mode).filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64),
        };
        let n = a.unknown.len();
        summary.push(MetricRow {
            config_hash: config_hash.clone(),
            method: m.label(),
            fid: f,
            kid_x1000: k,
            mean_iou,
            unknown_pct: if n > 0 { a.unknown.iter().sum::<f64>() / n as f64 } else { 0.0 },
            n,
        });
    }

    let iou = ious
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(mode, v)| Ok((*mode, IouPmf::from_values(v, IouPmf::DEFAULT_BINS)?)))
        .collect::<Result<Vec<_>, RunnerError>>()?;

    let maps = methods
        .iter()
        .map(|m| {
            let map = match m.merge {
                Merge::Baseline => MethodMap::Sensor(bl.clone()),
                Merge::Probabilistic => MethodMap::Merged(pmm[&m.mode].clone()),
                Merge::OneShot => MethodMap::OneShot(bl.clone(), osmm[&m.mode].clone()),
            };
            (*m, map)
        })
        .collect();

    Ok(EpisodeReport {
        config_hash,
        methods,
        pose_rows,
        summary,
        iou,
        maps,
        frontiers,
        diffusion_calls: predictor.map_or(0, |p| p.calls),
        poses: trajectory.len(),
        world,
        timings,
    })
}
