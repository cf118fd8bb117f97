//! Training per mode and the benchmark sweep.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use wavefill_core::field::{GridSpec, SpeedField};
use wavefill_core::metrics::{evaluate, MetricReport};
use wavefill_core::observation::{
    combine_masks, make_probe_mask, observe, Observation, SensorLayout,
};
use wavefill_core::rng::{mix_seed, substream};
use wavefill_core::synth::{gen_corpus, gen_probe_pool, Corpus};
use wavefill_diffusion::{load_checkpoint, train, DenoiserModel, NoiseSchedule, TrainLog};
use wavefill_sampler::{sample, SamplerConfig, Scheme};

use crate::config::{BenchConfig, CellSpec, TrainingMode};
use crate::error::{Error, Result};

const TAG_POOL: u64 = 1;
const TAG_PROBE: u64 = 2;
const TAG_NOISE: u64 = 3;
const TAG_SAMPLE: u64 = 4;

/// Loads `cfg.corpus_dir` or generates the configured corpus.
pub fn load_or_generate_corpus(cfg: &BenchConfig) -> Result<Corpus> {
    match &cfg.corpus_dir {
        Some(dir) => Ok(Corpus::load(dir)?),
        None => Ok(gen_corpus(
            cfg.corpus_size,
            &cfg.grid,
            &cfg.scene,
            cfg.corpus_seed,
        )?),
    }
}

/// Trains the denoiser for one training mode.
pub fn train_mode(
    corpus: &Corpus,
    mode: TrainingMode,
    cfg: &BenchConfig,
    sched: &NoiseSchedule,
) -> Result<(DenoiserModel, TrainLog)> {
    let layouts = cfg.training_layouts(mode)?;
    Ok(train(
        corpus,
        &layouts,
        cfg.arch.clone(),
        sched,
        &cfg.train_config(mode),
    )?)
}

/// The observation of test sample `corpus_index` under `(row_coverage,
/// lambda)`. Probe draws depend on the sample only, so masks are nested in
/// `lambda`; the same observation is shared by every mode and scheme.
pub fn build_observation(
    cfg: &BenchConfig,
    field: &SpeedField,
    corpus_index: usize,
    row_coverage: f64,
    lambda: usize,
) -> Result<Observation> {
    let grid = *field.grid();
    let i = corpus_index as u64;
    let layout = SensorLayout::new(&grid, row_coverage, lambda, cfg.layout_seed)?;
    let pool = gen_probe_pool(
        field,
        cfg.probe_pool_size,
        &mut substream(mix_seed(&[cfg.seed, TAG_POOL]), i),
    );
    let probes = make_probe_mask(
        &pool,
        lambda,
        &grid,
        &mut substream(mix_seed(&[cfg.seed, TAG_PROBE]), i),
    )?;
    let mask = combine_masks(&layout.loop_mask(&grid), &probes)?;
    let noise_seed = mix_seed(&[cfg.seed, TAG_NOISE, row_coverage.to_bits(), lambda as u64]);
    Ok(observe(
        field,
        &mask,
        cfg.obs_sigma,
        &mut substream(noise_seed, i),
    )?)
}

/// Sampler seed for one (sample, condition); shared by all modes and
/// schemes so comparisons within a cell use the same noise.
pub fn sampler_seed(
    cfg: &BenchConfig,
    corpus_index: usize,
    row_coverage: f64,
    lambda: usize,
) -> u64 {
    mix_seed(&[
        cfg.seed,
        TAG_SAMPLE,
        corpus_index as u64,
        row_coverage.to_bits(),
        lambda as u64,
    ])
}

/// One sampler run of the sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub cell: CellSpec,
    /// index into the corpus
    pub sample: usize,
    pub report: MetricReport,
    pub wall_time: f64,
}

/// Mean metrics of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub mode: TrainingMode,
    pub row_coverage: f64,
    pub lambda: usize,
    pub scheme: Scheme,
    /// means over samples; `n_unobserved` is the mean count, rounded
    pub report: MetricReport,
    pub n_samples: usize,
    /// summed sampler time in seconds
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchResult {
    pub fingerprint: String,
    pub rows: Vec<BenchRow>,
    pub samples: Vec<SampleRecord>,
}

/// Everything a sampler run saw and produced; handed to the observer
/// callback of [`run_benchmark_with`].
pub struct RunOutput<'a> {
    pub cell: &'a CellSpec,
    pub sample: usize,
    pub observation: &'a Observation,
    pub sampler: &'a SamplerConfig,
    pub model: Option<&'a DenoiserModel>,
    pub output: &'a SpeedField,
}

/// Loads the checkpoint of every mode used by a diffusion cell.
pub fn load_models(
    cfg: &BenchConfig,
    sched: &NoiseSchedule,
) -> Result<BTreeMap<TrainingMode, DenoiserModel>> {
    let mut models = BTreeMap::new();
    for cell in cfg.cells() {
        if cell.scheme == Scheme::AasOnly || models.contains_key(&cell.mode) {
            continue;
        }
        let path = cfg.checkpoint(cell.mode)?;
        if !path.exists() {
            return Err(Error::config(format!(
                "checkpoint for training mode {} not found: {}",
                cell.mode,
                path.display()
            )));
        }
        let (model, _) = load_checkpoint(path, Some(sched))?;
        check_grid(model.grid(), &cfg.grid, cell.mode)?;
        models.insert(cell.mode, model);
    }
    Ok(models)
}

fn check_grid(model: &GridSpec, grid: &GridSpec, mode: TrainingMode) -> Result<()> {
    if model.shape() != grid.shape() {
        return Err(Error::config(format!(
            "{mode} checkpoint is for a {:?} grid, benchmark uses {:?}",
            model.shape(),
            grid.shape()
        )));
    }
    Ok(())
}

/// Runs the sweep with models loaded from the configured checkpoints.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchResult> {
    let sched = NoiseSchedule::default();
    let models = load_models(cfg, &sched)?;
    let corpus = load_or_generate_corpus(cfg)?;
    run_benchmark_with(cfg, &corpus, &models, &sched, &|_| {})
}

/// Runs the sweep on `corpus` with in-memory models, calling `observe` with
/// every sampler output.
pub fn run_benchmark_with(
    cfg: &BenchConfig,
    corpus: &Corpus,
    models: &BTreeMap<TrainingMode, DenoiserModel>,
    sched: &NoiseSchedule,
    observe_run: &(dyn Fn(&RunOutput<'_>) + Sync),
) -> Result<BenchResult> {
    cfg.check()?;
    if corpus.grid.shape() != cfg.grid.shape() {
        return Err(Error::config(format!(
            "corpus grid {:?} does not match configured grid {:?}",
            corpus.grid.shape(),
            cfg.grid.shape()
        )));
    }
    let cells = cfg.cells();
    for cell in &cells {
        if cell.scheme != Scheme::AasOnly {
            let model = models.get(&cell.mode).ok_or_else(|| {
                Error::config(format!("no model for training mode {}", cell.mode))
            })?;
            check_grid(model.grid(), &cfg.grid, cell.mode)?;
        }
    }
    let test: Vec<usize> = corpus
        .split
        .test
        .iter()
        .copied()
        .take(cfg.n_test_samples)
        .collect();
    if test.is_empty() {
        return Err(Error::config("corpus has no test samples"));
    }
    let fingerprint = cfg.fingerprint();

    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| test.iter().map(move |&s| (c, s)))
        .collect();
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1),
        n => n,
    }
    .min(jobs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<SampleRecord>>> = Mutex::new(Vec::with_capacity(jobs.len()));

    let work = || loop {
        let k = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(c, s)) = jobs.get(k) else { break };
        let record = run_job(
            cfg,
            corpus,
            models,
            sched,
            &cells[c],
            s,
            &fingerprint,
            observe_run,
        );
        if let Err(e) = &record {
            log::error!("cell {:?} sample {s}: {e}", cells[c]);
            next.store(jobs.len(), Ordering::Relaxed);
        }
        results.lock().expect("no worker panicked").push(record);
    };
    std::thread::scope(|scope| {
        for _ in 1..threads {
            scope.spawn(work);
        }
        work();
    });

    let mut samples = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    samples.sort_by(|a, b| {
        let ka = cells.iter().position(|c| *c == a.cell);
        let kb = cells.iter().position(|c| *c == b.cell);
        ka.cmp(&kb).then(a.sample.cmp(&b.sample))
    });
    if !cfg.record_wall_time {
        samples.iter_mut().for_each(|s| s.wall_time = 0.0);
    }
    let rows = cells
        .iter()
        .map(|cell| aggregate(cell, &samples, &fingerprint))
        .collect();
    Ok(BenchResult {
        fingerprint,
        rows,
        samples,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_job(
    cfg: &BenchConfig,
    corpus: &Corpus,
    models: &BTreeMap<TrainingMode, DenoiserModel>,
    sched: &NoiseSchedule,
    cell: &CellSpec,
    sample_idx: usize,
    fingerprint: &str,
    observe_run: &(dyn Fn(&RunOutput<'_>) + Sync),
) -> Result<SampleRecord> {
    let truth = &corpus.samples[sample_idx];
    let obs = build_observation(cfg, truth, sample_idx, cell.row_coverage, cell.lambda)?;
    let scfg = SamplerConfig {
        scheme: cell.scheme,
        seed: sampler_seed(cfg, sample_idx, cell.row_coverage, cell.lambda),
        ..cfg.sampler.clone()
    };
    let model = if cell.scheme == Scheme::AasOnly {
        None
    } else {
        models.get(&cell.mode)
    };
    let start = Instant::now();
    let out = sample(model, &obs, sched, &cfg.physics, &scfg)?;
    let wall_time = start.elapsed().as_secs_f64();
    let report = evaluate(&out, truth, &obs.mask, fingerprint)?;
    log::debug!(
        "{cell:?} sample {sample_idx}: {:?} in {wall_time:.1}s",
        report.masked_mse_2x2
    );
    observe_run(&RunOutput {
        cell,
        sample: sample_idx,
        observation: &obs,
        sampler: &scfg,
        model,
        output: &out,
    });
    Ok(SampleRecord {
        cell: *cell,
        sample: sample_idx,
        report,
        wall_time,
    })
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn aggregate(cell: &CellSpec, samples: &[SampleRecord], fingerprint: &str) -> BenchRow {
    let mine: Vec<&SampleRecord> = samples.iter().filter(|s| s.cell == *cell).collect();
    let n = mine.len().max(1);
    let report = MetricReport {
        masked_mse_2x2: mean(mine.iter().map(|s| s.report.masked_mse_2x2)),
        sobel_mse: mean(mine.iter().map(|s| s.report.sobel_mse)),
        n_unobserved: (mine.iter().map(|s| s.report.n_unobserved).sum::<usize>() as f64 / n as f64)
            .round() as usize,
        fingerprint: fingerprint.to_string(),
    };
    BenchRow {
        mode: cell.mode,
        row_coverage: cell.row_coverage,
        lambda: cell.lambda,
        scheme: cell.scheme,
        report,
        n_samples: mine.len(),
        wall_time: mine.iter().map(|s| s.wall_time).sum(),
    }
}

/// Median Masked-MSE of one cell over its samples.
pub fn median_masked_mse(result: &BenchResult, cell: &CellSpec) -> Option<f64> {
    let mut v: Vec<f64> = result
        .samples
        .iter()
        .filter(|s| s.cell == *cell)
        .filter_map(|s| s.report.masked_mse_2x2)
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
