use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{io_err, EpisodeReport, ExperimentConfig, RunnerError};
use crate::map::{crop_local, read_voxmap, write_voxmap, OccupancyView, VoxelKey, VoxelState};
use crate::merge::{MergeConfig, MergedView};
use crate::metrics::{fid, kid, unknown_ratio, DistributionStats, FeatureExtractor, MetricRow};
use crate::world::generate_world;

/// Binary PGM of one horizontal layer `k` over `i0..i0+w`, `j0..j0+h`.
/// Rows run from high `j` to low `j`; occupied 0, unknown 128, free 255.
pub fn write_pgm_slice<V: OccupancyView + ?Sized, W: Write>(
    view: &V,
    k: i32,
    (i0, j0): (i32, i32),
    (w, h): (usize, usize),
    mut out: W,
) -> std::io::Result<()> {
    write!(out, "P5\n{w} {h}\n255\n")?;
    let mut row = Vec::with_capacity(w);
    for r in 0..h {
        let j = j0 + (h - 1 - r) as i32;
        row.clear();
        for c in 0..w {
            row.push(match view.state(VoxelKey::new(i0 + c as i32, j, k)) {
                VoxelState::Occupied => 0u8,
                VoxelState::Unknown => 128,
                VoxelState::Free => 255,
            });
        }
        out.write_all(&row)?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, RunnerError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_text(path: &Path, text: &str) -> Result<(), RunnerError> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_summary_csv(report: &EpisodeReport, path: &Path) -> Result<(), RunnerError> {
    write_text(path, &report.summary_csv())
}

#[derive(Debug, Clone, Default)]
pub struct ExportSummary {
    pub map_files: Vec<PathBuf>,
    pub slice_dirs: Vec<PathBuf>,
    pub csv_files: Vec<PathBuf>,
}

/// Writes per-method VOXMAP maps and slice stacks, IoU histograms, the
/// per-pose and summary tables, the frontier log and stage timings.
pub fn export_views(report: &EpisodeReport, out: &Path, merge_cfg: &MergeConfig) -> Result<ExportSummary, RunnerError> {
    if report.maps.is_empty() {
        return Err(RunnerError::Config("nothing to export: report has no methods".into()));
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut summary = ExportSummary::default();
    let maps_dir = out.join("maps");
    let slices_dir = out.join("slices");
    fs::create_dir_all(&maps_dir).map_err(io_err(&maps_dir))?;
    let w = &report.world;
    for (method, map) in &report.maps {
        let label = method.label();
        let path = maps_dir.join(format!("{label}.voxmap"));
        write_voxmap(&map.materialize(merge_cfg), create(&path)?).map_err(io_err(&path))?;
        summary.map_files.push(path);

        let dir = slices_dir.join(&label);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for k in 0..w.nz {
            let path = dir.join(format!("z{k:03}.pgm"));
            write_pgm_slice(map, k as i32, (0, 0), (w.nx, w.ny), create(&path)?).map_err(io_err(&path))?;
        }
        summary.slice_dirs.push(dir);
    }

    for (mode, pmf) in &report.iou {
        let path = out.join(format!("iou_{}.csv", mode.tag()));
        write_text(&path, &pmf.to_csv())?;
        summary.csv_files.push(path);
    }
    let path = out.join("summary.csv");
    write_summary_csv(report, &path)?;
    summary.csv_files.push(path);
    let path = out.join("poses.csv");
    write_text(&path, &report.poses_csv())?;
    summary.csv_files.push(path);

    let mut frontiers = String::from("pose,robot_x,robot_y,robot_z,x,y,z,gain\n");
    for f in &report.frontiers {
        frontiers.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.6}\n",
            f.pose, f.robot.x, f.robot.y, f.robot.z, f.position.x, f.position.y, f.position.z, f.gain
        ));
    }
    let path = out.join("frontiers.csv");
    write_text(&path, &frontiers)?;
    summary.csv_files.push(path);

    let t = &report.timings;
    let timings = format!(
        "scan {:.3}\ngraph {:.3}\npredict {:.3}\nmerge {:.3}\nmetrics {:.3}\ndiffusion_calls {}\n",
        t.scan.as_secs_f64(),
        t.graph.as_secs_f64(),
        t.predict.as_secs_f64(),
        t.merge.as_secs_f64(),
        t.metrics.as_secs_f64(),
        report.diffusion_calls
    );
    write_text(&out.join("timings.txt"), &timings)?;
    Ok(summary)
}

/// Scores a saved map against ground truth at the trajectory's prediction
/// poses, reading unobserved cells through the merged view.
pub fn eval_map(cfg: &ExperimentConfig, map_path: &Path) -> Result<MetricRow, RunnerError> {
    cfg.validate()?;
    let file = File::open(map_path).map_err(io_err(map_path))?;
    let map = read_voxmap(BufReader::new(file), &cfg.merge_config())?;
    if (map.resolution() - cfg.resolution).abs() > 1e-9 {
        return Err(RunnerError::Geometry(format!(
            "map resolution {} differs from world resolution {}",
            map.resolution(),
            cfg.resolution
        )));
    }
    let world = generate_world(&cfg.world_spec())?;
    let traj = world.default_trajectory(cfg.trajectory_spacing);
    let extractor = FeatureExtractor::new(cfg.crop_dim(), cfg.feature_seed)?;
    let view = MergedView(&map);
    let (mut feats, mut gts, mut unknown) = (Vec::new(), Vec::new(), 0.0);
    for pose in traj.poses.iter().step_by(cfg.prediction_stride) {
        let crop = crop_local(&view, &pose.position, cfg.prediction_radius);
        unknown += unknown_ratio(&crop);
        feats.push(extractor.extract(&crop)?);
        gts.push(extractor.extract(&world.crop(&pose.position, cfg.prediction_radius))?);
    }
    let n = feats.len();
    let (f, k) = if n >= 2 {
        let (a, b) = (DistributionStats::from_features(&feats)?, DistributionStats::from_features(&gts)?);
        (fid(&a, &b)?, kid(&feats, &gts)?)
    } else {
        (f64::NAN, f64::NAN)
    };
    let method = map_path.file_stem().map_or("map".into(), |s| s.to_string_lossy().into_owned());
    Ok(MetricRow {
        config_hash: cfg.hash(),
        method,
        fid: f,
        kid_x1000: k,
        mean_iou: None,
        unknown_pct: if n > 0 { unknown / n as f64 } else { 0.0 },
        n,
    })
}
