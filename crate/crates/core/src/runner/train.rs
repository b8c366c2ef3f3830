use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derive_seed, io_err, ExperimentConfig, RunnerError};
use crate::diffusion::{save_checkpoint, train, write_loss_csv, Denoiser, LossRecord, NoiseSchedule};
use crate::world::{generate_world, sample_corpus, WorldSpec};

/// Worlds generated per layout when building a corpus.
const WORLDS_PER_LAYOUT: u64 = 2;

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub trace: Vec<LossRecord>,
    pub corpus: usize,
    pub params: usize,
}

/// Quarter turn about z followed by an optional mirror in x.
fn augment(values: &[f64], d: usize, turns: usize, mirror: bool) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for z in 0..d {
        for y in 0..d {
            for x in 0..d {
                let (mut u, mut v) = (x, y);
                for _ in 0..turns {
                    (u, v) = (d - 1 - v, u);
                }
                if mirror {
                    u = d - 1 - u;
                }
                out[(z * d + v) * d + u] = values[(z * d + y) * d + x];
            }
        }
    }
    out
}

/// Complete ground-truth crops from every corpus layout, with random
/// quarter-turn and mirror augmentation.
pub fn build_corpus(cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>, RunnerError> {
    if cfg.corpus_layouts.is_empty() {
        return Err(RunnerError::Config("train.layouts is empty".into()));
    }
    let worlds = cfg.corpus_layouts.len() * WORLDS_PER_LAYOUT as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.corpus_seed, &[u64::MAX]));
    let mut out = Vec::with_capacity(cfg.corpus_size);
    let d = cfg.crop_dim();
    for (li, layout) in cfg.corpus_layouts.iter().enumerate() {
        for w in 0..WORLDS_PER_LAYOUT {
            let index = li * WORLDS_PER_LAYOUT as usize + w as usize;
            let count = cfg.corpus_size / worlds + usize::from(index < cfg.corpus_size % worlds);
            let spec = WorldSpec {
                layout: *layout,
                seed: derive_seed(cfg.corpus_seed, &[li as u64, w]),
                ..cfg.world_spec()
            };
            let world = generate_world(&spec)?;
            let seed = derive_seed(cfg.corpus_seed, &[li as u64, w, 1]);
            for crop in sample_corpus(&world, count, cfg.prediction_radius, seed) {
                out.push(augment(&crop.values, d, rng.gen_range(0..4), rng.gen()));
            }
        }
    }
    Ok(out)
}

/// Builds the corpus, trains the denoiser and writes `model.ckpt` and
/// `loss.csv` into `out`.
pub fn train_command(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary, RunnerError> {
    cfg.validate()?;
    let corpus = build_corpus(cfg)?;
    let schedule = NoiseSchedule::default();
    let init = Denoiser::new(cfg.arch(), cfg.model_seed)?;
    let params = init.param_count();
    let outcome = train(init, &schedule, &corpus, &cfg.train_config())?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let checkpoint = out.join("model.ckpt");
    let file = File::create(&checkpoint).map_err(io_err(&checkpoint))?;
    save_checkpoint(BufWriter::new(file), &outcome.denoiser, cfg.resolution, &schedule)?;
    let loss_csv = out.join("loss.csv");
    let file = File::create(&loss_csv).map_err(io_err(&loss_csv))?;
    write_loss_csv(&outcome.trace, BufWriter::new(file)).map_err(io_err(&loss_csv))?;
    Ok(TrainSummary { checkpoint, loss_csv, trace: outcome.trace, corpus: corpus.len(), params })
}
