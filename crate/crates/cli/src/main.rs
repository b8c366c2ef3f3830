use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use occfuse::metrics::MetricRow;
use occfuse::runner::{eval_map, export_views, load_model, run_episode, train_command, EpisodeReport, ExperimentConfig, Model};

#[derive(Parser)]
#[command(name = "occfuse", version, about = "Diffusion occupancy prediction in simulated worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a denoiser on ground-truth crops; writes model.ckpt and loss.csv.
    Train(Common),
    /// Run the method matrix; writes summary.csv, poses.csv and timings.txt.
    Run(Common),
    /// Score a saved VOXMAP map against ground truth; writes eval.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        map: PathBuf,
    },
    /// Run the method matrix and write maps, slices and every table.
    Export(Common),
    /// Print the default configuration.
    Config,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`, or `model.seed` for `train`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self, train: bool) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("config: reading {}", path.display()))?;
                ExperimentConfig::parse(&text).with_context(|| format!("config: {}", path.display()))?
            }
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply(o).context("config: --set")?;
        }
        if let Some(seed) = self.seed {
            if train {
                cfg.model_seed = seed;
            } else {
                cfg.seed = seed;
            }
        }
        cfg.validate().context("config")?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("output: creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn model_for(cfg: &ExperimentConfig) -> Result<Option<Model>> {
    if !cfg.methods.uses_diffusion() {
        return Ok(None);
    }
    let path = cfg
        .checkpoint
        .as_ref()
        .context("checkpoint: prediction methods need `checkpoint = <path>` (or methods = baseline,...)")?;
    Ok(Some(load_model(path).context("checkpoint")?))
}

fn episode(cfg: &ExperimentConfig) -> Result<EpisodeReport> {
    let model = model_for(cfg)?;
    run_episode(cfg, model.as_ref()).context("run")
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("output: writing {}", path.display()))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Config => print!("{}", ExperimentConfig::default().to_text()),
        Command::Train(c) => {
            let cfg = c.load(true)?;
            let out = c.out_dir()?;
            write(out.join("config.cfg"), &cfg.to_text())?;
            let s = train_command(&cfg, out).context("train")?;
            let first = s.trace.first().map_or(f64::NAN, |r| r.loss);
            let last = s.trace.last().map_or(f64::NAN, |r| r.loss);
            println!(
                "trained {} params on {} crops, {} steps, loss {first:.4} -> {last:.4}",
                s.params,
                s.corpus,
                s.trace.len()
            );
            println!("{}", s.checkpoint.display());
        }
        Command::Run(c) => {
            let cfg = c.load(false)?;
            let out = c.out_dir()?;
            let report = episode(&cfg)?;
            write(out.join("config.cfg"), &cfg.to_text())?;
            write(out.join("summary.csv"), &report.summary_csv())?;
            write(out.join("poses.csv"), &report.poses_csv())?;
            let t = &report.timings;
            write(
                out.join("timings.txt"),
                &format!(
                    "scan {:.3}\ngraph {:.3}\npredict {:.3}\nmerge {:.3}\nmetrics {:.3}\ndiffusion_calls {}\n",
                    t.scan.as_secs_f64(),
                    t.graph.as_secs_f64(),
                    t.predict.as_secs_f64(),
                    t.merge.as_secs_f64(),
                    t.metrics.as_secs_f64(),
                    report.diffusion_calls
                ),
            )?;
            print!("{}", report.summary_csv());
        }
        Command::Eval { common, map } => {
            let cfg = common.load(false)?;
            let out = common.out_dir()?;
            let row = eval_map(&cfg, &map).context("eval")?;
            let text = format!("{}\n{}\n", MetricRow::HEADER, row.to_csv());
            write(out.join("eval.csv"), &text)?;
            print!("{text}");
        }
        Command::Export(c) => {
            let cfg = c.load(false)?;
            let out = c.out_dir()?;
            let report = episode(&cfg)?;
            write(out.join("config.cfg"), &cfg.to_text())?;
            let s = export_views(&report, out, &cfg.merge_config()).context("export")?;
            println!(
                "{} maps, {} slice stacks, {} tables in {}",
                s.map_files.len(),
                s.slice_dirs.len(),
                s.csv_files.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
