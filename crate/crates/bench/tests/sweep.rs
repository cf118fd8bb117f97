//! Small sweeps on untrained models: row counts, report files, determinism
//! and configuration errors.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use wavefill_bench::{
    load_report, load_samples, median_masked_mse, run_benchmark, run_benchmark_with, save_report,
    save_samples, BenchConfig, BenchResult, BenchRow, CellSpec, Error, TrainingMode,
};
use wavefill_core::field::GridSpec;
use wavefill_core::metrics::MetricReport;
use wavefill_core::synth::{gen_corpus, Corpus};
use wavefill_diffusion::{ArchDescriptor, DenoiserModel, NoiseSchedule};
use wavefill_sampler::{SamplerConfig, Scheme};

fn small_config() -> BenchConfig {
    let grid = GridSpec::new(16, 16, 200.0, 5.0, 110.0).unwrap();
    BenchConfig {
        grid,
        corpus_size: 20,
        n_test_samples: 3,
        arch: ArchDescriptor::tiny(),
        sampler: SamplerConfig {
            jump_len: 0,
            aas_iters_baseline: 10,
            ..Default::default()
        },
        threads: 1,
        ..Default::default()
    }
}

fn corpus(cfg: &BenchConfig) -> Corpus {
    gen_corpus(cfg.corpus_size, &cfg.grid, &cfg.scene, cfg.corpus_seed).unwrap()
}

fn models(cfg: &BenchConfig) -> BTreeMap<TrainingMode, DenoiserModel> {
    TrainingMode::ALL
        .iter()
        .map(|&m| {
            (
                m,
                DenoiserModel::new(cfg.arch.clone(), cfg.grid, 3).unwrap(),
            )
        })
        .collect()
}

fn cell(mode: TrainingMode, row_coverage: f64, lambda: usize, scheme: Scheme) -> CellSpec {
    CellSpec {
        mode,
        row_coverage,
        lambda,
        scheme,
    }
}

#[test]
fn one_cell_sweep_gives_one_row() {
    let cfg = BenchConfig {
        cells: Some(vec![cell(TrainingMode::Double, 0.25, 5, Scheme::Pma)]),
        ..small_config()
    };
    let corpus = corpus(&cfg);
    let calls = AtomicUsize::new(0);
    let result = run_benchmark_with(
        &cfg,
        &corpus,
        &models(&cfg),
        &NoiseSchedule::default(),
        &|run| {
            calls.fetch_add(1, Ordering::Relaxed);
            for ((s, t), &v) in run.output.values().indexed_iter() {
                assert!((0.0..=1.0).contains(&v));
                if run.observation.mask.get(s, t) {
                    assert_eq!(v, run.observation.y[[s, t]]);
                }
            }
        },
    )
    .unwrap();
    assert_eq!(calls.into_inner(), 3);
    assert_eq!(result.rows.len(), 1);
    assert_eq!(result.samples.len(), 3);
    let row = &result.rows[0];
    assert_eq!(row.n_samples, 3);
    assert!(row.report.masked_mse_2x2.unwrap().is_finite());
    assert_eq!(result.fingerprint, cfg.fingerprint());
    assert!(median_masked_mse(&result, &cfg.cells()[0]).is_some());
}

fn hand_built() -> BenchResult {
    let row = |mode, scheme, mse| BenchRow {
        mode,
        row_coverage: 0.05,
        lambda: 25,
        scheme,
        report: MetricReport {
            masked_mse_2x2: mse,
            sobel_mse: Some(0.1 + 0.2),
            n_unobserved: 3891,
            fingerprint: "f00d".into(),
        },
        n_samples: 16,
        wall_time: 1.0 / 3.0,
    };
    BenchResult {
        fingerprint: "f00d".into(),
        rows: vec![
            row(TrainingMode::Full, Scheme::Repaint, Some(0.017)),
            row(TrainingMode::Single, Scheme::AasOnly, None),
        ],
        samples: Vec::new(),
    }
}

#[test]
fn reports_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    let result = hand_built();
    save_report(&path, &result).unwrap();
    assert_eq!(load_report(&path, Some("f00d")).unwrap(), result);

    let empty = BenchResult {
        fingerprint: "e".into(),
        ..Default::default()
    };
    save_report(&path, &empty).unwrap();
    assert_eq!(load_report(&path, None).unwrap(), empty);
}

#[test]
fn foreign_fingerprint_is_a_version_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    save_report(&path, &hand_built()).unwrap();
    assert!(matches!(
        load_report(&path, Some("beef")),
        Err(Error::Version { .. })
    ));

    std::fs::write(&path, "mode,row_coverage\nfull,0.05\n").unwrap();
    assert!(matches!(
        load_report(&path, None),
        Err(Error::Version { .. })
    ));
}

#[test]
fn reports_are_byte_identical_across_runs_and_thread_counts() {
    let base = BenchConfig {
        modes: vec![TrainingMode::Single],
        row_coverages: vec![0.25],
        lambdas: vec![0, 5],
        schemes: vec![Scheme::AasOnly, Scheme::Repaint],
        record_wall_time: false,
        ..small_config()
    };
    let corpus = corpus(&base);
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (k, threads) in [1, 1, 3].into_iter().enumerate() {
        let cfg = BenchConfig {
            threads,
            ..base.clone()
        };
        let result = run_benchmark_with(
            &cfg,
            &corpus,
            &models(&cfg),
            &NoiseSchedule::default(),
            &|_| {},
        )
        .unwrap();
        assert_eq!(result.rows.len(), 4);
        let (r, s) = (
            dir.path().join(format!("r{k}.csv")),
            dir.path().join(format!("s{k}.csv")),
        );
        save_report(&r, &result).unwrap();
        save_samples(&s, &result).unwrap();
        assert_eq!(
            load_samples(&s, Some(&result.fingerprint)).unwrap(),
            result.samples
        );
        files.push((std::fs::read(r).unwrap(), std::fs::read(s).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    assert_eq!(files[0], files[2]);
}

#[test]
fn missing_checkpoints_name_the_mode() {
    let cfg = BenchConfig {
        cells: Some(vec![cell(TrainingMode::Double, 0.15, 0, Scheme::Repaint)]),
        ..small_config()
    };
    let msg = run_benchmark(&cfg).unwrap_err().to_string();
    assert!(msg.contains("double"), "{msg}");

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = cfg;
    cfg.checkpoints
        .insert("double".into(), dir.path().join("nowhere.ckpt"));
    let msg = run_benchmark(&cfg).unwrap_err().to_string();
    assert!(
        msg.contains("double") && msg.contains("nowhere.ckpt"),
        "{msg}"
    );

    // physics-only cells need no checkpoint
    let aas = BenchConfig {
        cells: Some(vec![cell(TrainingMode::Double, 0.15, 0, Scheme::AasOnly)]),
        ..small_config()
    };
    assert_eq!(run_benchmark(&aas).unwrap().rows.len(), 1);
}

#[test]
fn physics_baseline_improves_with_probe_intensity() {
    // probe masks are nested in the intensity, so every added probe only
    // adds observed cells
    let cfg = BenchConfig {
        grid: GridSpec::desk64(),
        corpus_size: 60,
        n_test_samples: 8,
        modes: vec![TrainingMode::Full],
        row_coverages: vec![0.05],
        lambdas: vec![0, 5, 15, 25],
        schemes: vec![Scheme::AasOnly],
        sampler: SamplerConfig::default(),
        threads: 0,
        ..small_config()
    };
    let corpus = corpus(&cfg);
    let masks = Mutex::new(BTreeMap::new());
    let result = run_benchmark_with(
        &cfg,
        &corpus,
        &BTreeMap::new(),
        &NoiseSchedule::default(),
        &|run| {
            masks
                .lock()
                .unwrap()
                .insert((run.sample, run.cell.lambda), run.observation.mask.clone());
        },
    )
    .unwrap();
    let masks = masks.into_inner().unwrap();
    for (&(sample, lambda), mask) in &masks {
        for (&(s2, l2), bigger) in &masks {
            if s2 == sample && l2 > lambda {
                assert!(mask.bits().iter().zip(bigger.bits()).all(|(a, b)| a <= b));
            }
        }
    }
    let mse: Vec<f64> = result
        .rows
        .iter()
        .map(|r| r.report.masked_mse_2x2.unwrap())
        .collect();
    assert!(mse.windows(2).all(|w| w[1] < w[0]), "{mse:?}");
}
