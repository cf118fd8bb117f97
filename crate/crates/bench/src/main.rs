use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use wavefill_bench::heatmap::write_heatmap;
use wavefill_bench::report::{format_table, save_report, save_samples};
use wavefill_bench::{
    build_observation, load_or_generate_corpus, run_benchmark, train_mode, BenchConfig,
    TrainingMode,
};
use wavefill_core::field::{GridSpec, SpeedField};
use wavefill_core::io::{
    read_field, read_mask, read_observation, read_shape, write_field, write_observation,
};
use wavefill_core::metrics::evaluate;
use wavefill_core::synth::gen_corpus;
use wavefill_diffusion::{load_checkpoint, save_checkpoint, NoiseSchedule};
use wavefill_sampler::{sample, sample_ensemble, SamplerConfig, Scheme};

#[derive(Parser)]
#[command(
    name = "wavefill",
    version,
    about = "Speed-field reconstruction with a mask-aware diffusion prior"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus of wave scenes
    Gen {
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// grid size, cells per side (overrides the config grid)
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an observation of a ground-truth field
    Observe {
        #[arg(long)]
        truth: PathBuf,
        /// fraction of spatial rows carrying a loop detector
        #[arg(long)]
        row: f64,
        /// number of probe trajectories
        #[arg(long, default_value_t = 0)]
        lambda: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a denoiser for one training mode
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// full, single or double
        #[arg(long)]
        mode: TrainingMode,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a field from an observation
    Sample {
        /// aas, repaint or pma
        #[arg(long)]
        scheme: Scheme,
        /// required for repaint and pma
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// draw this many physics-guided samples and write their mean
        #[arg(long)]
        ensemble: Option<usize>,
        /// also write a PNG heatmap here
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Score a reconstruction on the unobserved cells
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        mask: PathBuf,
    },
    /// Run the benchmark sweep
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// per-sample rows; defaults to `<out>.samples.csv`
        #[arg(long)]
        samples: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<BenchConfig> {
    match path {
        Some(p) => BenchConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(BenchConfig::default()),
    }
}

/// The configured grid resized to the dimensions stored in `path`.
fn grid_for(path: &Path, cfg: &BenchConfig) -> Result<GridSpec> {
    let (s, t) = read_shape(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(GridSpec {
        s_cells: s,
        t_cells: t,
        ..cfg.grid
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Gen {
            n,
            seed,
            size,
            config,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = size {
                cfg.grid = GridSpec {
                    s_cells: s,
                    t_cells: s,
                    ..cfg.grid
                };
            }
            let corpus = gen_corpus(n, &cfg.grid, &cfg.scene, seed)?;
            corpus.save(&out)?;
            println!(
                "wrote {n} scenes to {} ({} train / {} val / {} test)",
                out.display(),
                corpus.split.train.len(),
                corpus.split.val.len(),
                corpus.split.test.len()
            );
        }
        Command::Observe {
            truth,
            row,
            lambda,
            seed,
            config,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.seed = seed;
            let grid = grid_for(&truth, &cfg)?;
            let field = read_field(&truth, &grid)?;
            let obs = build_observation(&cfg, &field, 0, row, lambda)?;
            write_observation(&out, &obs)?;
            println!("observed {} of {} cells", obs.mask.count(), grid.len());
        }
        Command::Train {
            corpus,
            mode,
            config,
            epochs,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.corpus_dir = Some(corpus);
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            let corpus = load_or_generate_corpus(&cfg)?;
            cfg.grid = corpus.grid;
            let sched = NoiseSchedule::default();
            let (model, log) = train_mode(&corpus, mode, &cfg, &sched)?;
            save_checkpoint(&out, &model, &sched, Some(&log))?;
            let last = log.epochs.last().map_or(f64::NAN, |e| e.mean_loss);
            println!(
                "trained {mode} model ({} parameters), final loss {last:.5}",
                model.param_count()
            );
        }
        Command::Sample {
            scheme,
            checkpoint,
            obs,
            config,
            seed,
            out,
            ensemble,
            png,
        } => {
            let cfg = load_config(config.as_deref())?;
            let sched = NoiseSchedule::default();
            let model = match &checkpoint {
                Some(p) => Some(load_checkpoint(p, Some(&sched))?.0),
                None => None,
            };
            let grid = match &model {
                Some(m) => *m.grid(),
                None => grid_for(&obs, &cfg)?,
            };
            let y = read_observation(&obs, &grid)?;
            let scfg = SamplerConfig {
                scheme,
                seed,
                ..cfg.sampler.clone()
            };
            let field: SpeedField = match ensemble {
                Some(n) => {
                    if scheme != Scheme::Pma {
                        bail!("--ensemble draws physics-guided samples; use --scheme pma");
                    }
                    let m = model.as_ref().context("--ensemble needs --checkpoint")?;
                    let e = sample_ensemble(m, &y, &sched, &cfg.physics, &scfg, n)?;
                    let spread =
                        e.pixel_std.iter().map(|&s| s as f64).sum::<f64>() / grid.len() as f64;
                    println!("ensemble of {n}: mean per-cell std {spread:.5}");
                    e.mean
                }
                None => sample(model.as_ref(), &y, &sched, &cfg.physics, &scfg)?,
            };
            write_field(&out, &field)?;
            if let Some(p) = png {
                write_heatmap(&p, field.values(), 4)?;
            }
            println!("wrote {}", out.display());
        }
        Command::Eval { pred, truth, mask } => {
            let cfg = BenchConfig::default();
            let grid = grid_for(&truth, &cfg)?;
            let report = evaluate(
                &read_field(&pred, &grid)?,
                &read_field(&truth, &grid)?,
                &read_mask(&mask, &grid)?,
                "",
            )?;
            let show = |v: Option<f64>| {
                v.map_or_else(
                    || "absent (no unobserved cells)".to_string(),
                    |x| format!("{x:.6}"),
                )
            };
            println!("masked_mse_2x2: {}", show(report.masked_mse_2x2));
            println!("sobel_mse:      {}", show(report.sobel_mse));
            println!("n_unobserved:   {}", report.n_unobserved);
        }
        Command::Bench {
            config,
            out,
            samples,
        } => {
            let cfg = load_config(Some(&config))?;
            let result = run_benchmark(&cfg)?;
            save_report(&out, &result)?;
            let samples = samples.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".samples.csv");
                PathBuf::from(p)
            });
            save_samples(&samples, &result)?;
            print!("{}", format_table(&result));
            println!("wrote {} and {}", out.display(), samples.display());
        }
    }
    Ok(())
}
