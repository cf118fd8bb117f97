//! Mask-aware denoiser training.

use std::time::Instant;

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use wavefill_core::field::ObservationMask;
use wavefill_core::observation::{
    combine_masks, make_probe_mask, observe, visibility_ratio, ProbeTrajectory, SensorLayout,
    DEFAULT_SIGMA,
};
use wavefill_core::rng::{mix_seed, substream};
use wavefill_core::synth::{gen_probe_pool, Corpus, DEFAULT_POOL_SIZE};

use crate::error::{Error, Result};
use crate::model::{ArchDescriptor, DenoiserModel, MaskConditioning};
use crate::schedule::{corrupt_with, standard_normal, NoiseSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    /// train on the sensor mask as is
    SingleMask,
    /// additionally hide cells of the sensor mask
    DoubleMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub strategy: MaskStrategy,
    /// probability that the auxiliary mask hides a visible cell
    pub p_extra: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub huber_delta: f32,
    /// weight the loss by `ᾱ_t / (1 − ᾱ_t)`
    pub snr_weighting: bool,
    pub seed: u64,
    /// above this visibility ratio the auxiliary mask is drawn from other
    /// samples' sensor masks instead of a Bernoulli field
    pub empirical_mask_threshold: f64,
    /// measurement noise added to the clean training fields
    pub obs_sigma: f32,
    pub probe_pool_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: MaskStrategy::DoubleMask,
            p_extra: 0.05,
            epochs: 10,
            batch_size: 8,
            learning_rate: 5e-4,
            huber_delta: 1.0,
            snr_weighting: false,
            seed: 0,
            empirical_mask_threshold: 0.3,
            obs_sigma: DEFAULT_SIGMA,
            probe_pool_size: DEFAULT_POOL_SIZE,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_extra) {
            return Err(Error::arg(format!(
                "p_extra must be in [0, 1), got {}",
                self.p_extra
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::arg("epochs and batch size must be positive"));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::arg("huber delta must be positive"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the JSON form, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        crate::schedule::hex(&Sha256::digest(json))
    }
}

/// The training mask `M̃`: `m` itself for single-mask training, otherwise
/// `B ⊙ m` with every `B` entry zero with probability `p_extra`.
pub fn apply_training_mask<R: Rng + ?Sized>(
    m: &ObservationMask,
    cfg: &TrainConfig,
    rng: &mut R,
) -> ObservationMask {
    match cfg.strategy {
        MaskStrategy::SingleMask => m.clone(),
        MaskStrategy::DoubleMask => {
            let mut out = m.clone();
            if cfg.p_extra > 0.0 {
                let (s, t) = m.grid().shape();
                for i in 0..s {
                    for j in 0..t {
                        // one draw per cell keeps the stream independent of m
                        let hide = rng.random::<f64>() < cfg.p_extra;
                        if hide {
                            out.set(i, j, false);
                        }
                    }
                }
            }
            out
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    /// the training mask was empty, so the element carries no signal
    pub skipped: bool,
}

fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn huber_grad(r: f32, delta: f32) -> f32 {
    r.clamp(-delta, delta)
}

fn loss_weight(t: usize, sched: &NoiseSchedule, cfg: &TrainConfig) -> f64 {
    if cfg.snr_weighting {
        let a = sched.alpha_bar(t);
        a / (1.0 - a)
    } else {
        1.0
    }
}

/// `w(t) · Σ_{m̃=1} huber(η̂ − η) / max(1, |m̃|)`.
pub fn masked_loss(
    eta_hat: &Array2<f32>,
    eta: &Array2<f32>,
    m_tilde: &ObservationMask,
    t: usize,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<LossValue> {
    if eta_hat.dim() != eta.dim() || eta.dim() != m_tilde.grid().shape() {
        return Err(Error::Dimension {
            expected: eta.dim(),
            found: eta_hat.dim(),
        });
    }
    sched.check_step(t)?;
    let count = m_tilde.count();
    if count == 0 {
        return Ok(LossValue {
            loss: 0.0,
            skipped: true,
        });
    }
    let delta = cfg.huber_delta as f64;
    let mut sum = 0.0f64;
    Zip::from(eta_hat)
        .and(eta)
        .and(m_tilde.bits())
        .for_each(|&a, &b, &bit| {
            if bit == 1 {
                sum += huber(a as f64 - b as f64, delta);
            }
        });
    Ok(LossValue {
        loss: loss_weight(t, sched, cfg) * sum / count as f64,
        skipped: false,
    })
}

/// `∂ masked_loss / ∂η̂`, scaled by `scale`.
fn masked_loss_grad(
    eta_hat: &Array2<f32>,
    eta: &Array2<f32>,
    m_tilde: &ObservationMask,
    t: usize,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    scale: f64,
) -> Array2<f32> {
    let k = (scale * loss_weight(t, sched, cfg) / m_tilde.count().max(1) as f64) as f32;
    let delta = cfg.huber_delta;
    Zip::from(eta_hat)
        .and(eta)
        .and(m_tilde.bits())
        .map_collect(|&a, &b, &bit| {
            if bit == 1 {
                k * huber_grad(a - b, delta)
            } else {
                0.0
            }
        })
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    m: Vec<f32>,
    v: Vec<f32>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f32], grad: &[f32]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub skipped: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config: TrainConfig,
    pub arch: ArchDescriptor,
    /// `(row_coverage, probe_intensity)` of every training layout
    pub layouts: Vec<(f64, usize)>,
    pub epochs: Vec<EpochLog>,
}

/// Training stopped on a non-finite loss; the last completed epoch's
/// parameters are kept.
#[derive(Debug)]
pub struct Diverged {
    pub epoch: usize,
    pub last_good: Box<DenoiserModel>,
    pub log: TrainLog,
}

impl std::fmt::Display for Diverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training loss became non-finite in epoch {}", self.epoch)
    }
}

impl std::error::Error for Diverged {}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Setup(#[from] Error),
    #[error(transparent)]
    Diverged(Box<Diverged>),
}

// Stream indices under the training seed. Single- and double-mask runs
// share every stream except the auxiliary-mask one.
const STREAM_ORDER: u64 = 0;
const STREAM_SENSOR: u64 = 1;
const STREAM_EXTRA: u64 = 2;
const STREAM_POOL: u64 = 3;
const INIT_TAG: u64 = 4;
const EMPIRICAL_POOL_LEN: usize = 64;

struct Example {
    t: usize,
    m_tilde: ObservationMask,
    yt: Array2<f32>,
    eta: Array2<f32>,
}

/// Trains a fresh denoiser on the corpus' training split.
///
/// Each sample draws one layout uniformly from `layouts`; its sensor mask is
/// the layout's loop rows plus `probe_intensity` probe trajectories from a
/// pool simulated on that sample.
pub fn train(
    corpus: &Corpus,
    layouts: &[SensorLayout],
    arch: ArchDescriptor,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(DenoiserModel, TrainLog), TrainError> {
    cfg.check()?;
    let grid = corpus.grid;
    if corpus.split.train.is_empty() {
        return Err(Error::arg("corpus has no training samples").into());
    }
    if layouts.is_empty() {
        return Err(Error::arg("at least one sensor layout is required").into());
    }
    let mut model = DenoiserModel::new(arch.clone(), grid, mix_seed(&[cfg.seed, INIT_TAG]))?;
    let full = layouts.iter().all(|l| l.loop_mask(&grid).is_full());
    model.conditioning = if full {
        MaskConditioning::Full
    } else {
        MaskConditioning::Observed
    };

    let pools: Vec<Vec<ProbeTrajectory>> = if layouts.iter().any(|l| l.probe_intensity > 0) {
        let pool_seed = mix_seed(&[cfg.seed, STREAM_POOL]);
        corpus
            .split
            .train
            .iter()
            .map(|&i| {
                gen_probe_pool(
                    &corpus.samples[i],
                    cfg.probe_pool_size,
                    &mut substream(pool_seed, i as u64),
                )
            })
            .collect()
    } else {
        vec![Vec::new(); corpus.split.train.len()]
    };
    let loop_masks: Vec<ObservationMask> = layouts.iter().map(|l| l.loop_mask(&grid)).collect();

    let mut order_rng = substream(cfg.seed, STREAM_ORDER);
    let mut sensor_rng = substream(cfg.seed, STREAM_SENSOR);
    let mut extra_rng = substream(cfg.seed, STREAM_EXTRA);
    let mut empirical: Vec<ObservationMask> = Vec::new();
    let mut adam = Adam::new(model.param_count(), cfg.learning_rate);
    let mut grad = vec![0.0f32; model.param_count()];
    let mut log = TrainLog {
        config: cfg.clone(),
        arch,
        layouts: layouts
            .iter()
            .map(|l| (l.row_coverage, l.probe_intensity))
            .collect(),
        epochs: Vec::new(),
    };
    let mut last_good = model.clone();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..corpus.split.train.len()).collect();
        order.shuffle(&mut order_rng);
        let (mut total, mut used, mut skipped) = (0.0f64, 0usize, 0usize);

        for batch in order.chunks(cfg.batch_size) {
            let mut examples = Vec::with_capacity(batch.len());
            for &k in batch {
                let field = &corpus.samples[corpus.split.train[k]];
                let li = sensor_rng.random_range(0..layouts.len());
                let probes = make_probe_mask(
                    &pools[k],
                    layouts[li].probe_intensity,
                    &grid,
                    &mut sensor_rng,
                )
                .map_err(Error::from)?;
                let sensor = combine_masks(&loop_masks[li], &probes).map_err(Error::from)?;

                let m_tilde = if cfg.strategy == MaskStrategy::DoubleMask
                    && visibility_ratio(&sensor) > cfg.empirical_mask_threshold
                    && !empirical.is_empty()
                {
                    let b = &empirical[extra_rng.random_range(0..empirical.len())];
                    intersect(&sensor, b)
                } else {
                    apply_training_mask(&sensor, cfg, &mut extra_rng)
                };
                if empirical.len() == EMPIRICAL_POOL_LEN {
                    empirical.remove(0);
                }
                empirical.push(sensor.clone());

                // noise is drawn on the sensor mask so that the auxiliary mask
                // does not shift the shared stream
                let obs =
                    observe(field, &sensor, cfg.obs_sigma, &mut order_rng).map_err(Error::from)?;
                let y0 =
                    Zip::from(&obs.y)
                        .and(m_tilde.bits())
                        .map_collect(|&y, &b| if b == 1 { y } else { 0.0 });
                let t = order_rng.random_range(0..sched.t_steps());
                let eta = standard_normal(y0.dim(), &mut order_rng);
                let yt = corrupt_with(&y0, &eta, t, sched);
                examples.push(Example {
                    t,
                    m_tilde,
                    yt,
                    eta,
                });
            }

            let live = examples.iter().filter(|e| e.m_tilde.count() > 0).count();
            skipped += examples.len() - live;
            if live == 0 {
                continue;
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / live as f64;
            let mut batch_loss = 0.0f64;
            for ex in examples.iter().filter(|e| e.m_tilde.count() > 0) {
                let mut value = 0.0f64;
                model
                    .predict_and_backprop(&ex.yt, ex.t, &ex.m_tilde, &mut grad, |pred| {
                        value = masked_loss(pred, &ex.eta, &ex.m_tilde, ex.t, sched, cfg)
                            .map(|l| l.loss)
                            .unwrap_or(f64::NAN);
                        Some(masked_loss_grad(
                            pred,
                            &ex.eta,
                            &ex.m_tilde,
                            ex.t,
                            sched,
                            cfg,
                            scale,
                        ))
                    })?;
                batch_loss += value;
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Diverged(Box::new(Diverged {
                    epoch,
                    last_good: Box::new(last_good),
                    log,
                })));
            }
            adam.update(model.parameters_mut(), &grad);
            total += batch_loss;
            used += live;
        }

        let mean_loss = if used > 0 { total / used as f64 } else { 0.0 };
        let seconds = start.elapsed().as_secs_f64();
        log::info!("epoch {epoch}: mean loss {mean_loss:.5} ({skipped} skipped, {seconds:.1}s)");
        log.epochs.push(EpochLog {
            epoch,
            mean_loss,
            skipped,
            seconds,
        });
        last_good = model.clone();
    }
    Ok((model, log))
}

/// One example's loss and its gradient with respect to every parameter.
pub fn loss_and_gradient(
    model: &DenoiserModel,
    yt: &Array2<f32>,
    eta: &Array2<f32>,
    t: usize,
    m_tilde: &ObservationMask,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(LossValue, Vec<f32>)> {
    let mut grad = vec![0.0f32; model.param_count()];
    let mut value = Ok(LossValue {
        loss: 0.0,
        skipped: true,
    });
    model.predict_and_backprop(yt, t, m_tilde, &mut grad, |pred| {
        value = masked_loss(pred, eta, m_tilde, t, sched, cfg);
        Some(masked_loss_grad(pred, eta, m_tilde, t, sched, cfg, 1.0))
    })?;
    Ok((value?, grad))
}

fn intersect(a: &ObservationMask, b: &ObservationMask) -> ObservationMask {
    ObservationMask::from_fn(*a.grid(), |s, t| a.get(s, t) && b.get(s, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use wavefill_core::field::GridSpec;
    use wavefill_core::rng::seeded;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, n, 200.0, 5.0, 110.0).unwrap()
    }

    #[test]
    fn single_mask_and_degenerate_double_mask_are_identity() {
        let g = grid(16);
        let m = ObservationMask::from_fn(g, |s, t| (s + 2 * t) % 5 == 0);
        let mut rng = seeded(1);
        let single = TrainConfig {
            strategy: MaskStrategy::SingleMask,
            ..TrainConfig::default()
        };
        assert_eq!(apply_training_mask(&m, &single, &mut rng), m);
        let zero = TrainConfig {
            p_extra: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(apply_training_mask(&m, &zero, &mut rng), m);
    }

    #[test]
    fn double_mask_hides_expected_fraction() {
        let g = grid(64);
        let m = ObservationMask::ones(g);
        let cfg = TrainConfig::default();
        let mut kept = 0usize;
        let mut rng = seeded(7);
        let reps = 10;
        for _ in 0..reps {
            let out = apply_training_mask(&m, &cfg, &mut rng);
            assert!(out.is_subset_of(&m));
            kept += out.count();
        }
        let n = (reps * m.count()) as f64;
        let mean = 0.95 * n;
        let sd = (n * 0.05 * 0.95).sqrt();
        assert!(
            (kept as f64 - mean).abs() < 3.0 * sd,
            "{kept} vs {mean} ± {sd}"
        );
    }

    #[test]
    fn loss_hand_cases() {
        let s = NoiseSchedule::default();
        let cfg = TrainConfig::default();
        let g = GridSpec::new(4, 4, 1.0, 1.0, 1.0).unwrap();
        let eta = Array2::from_elem((4, 4), 0.2f32);
        let m = ObservationMask::from_fn(g, |s, t| s == 0 && t == 0);
        let v = masked_loss(&eta, &eta, &m, 3, &s, &cfg).unwrap();
        assert_eq!(
            v,
            LossValue {
                loss: 0.0,
                skipped: false
            }
        );

        let mut hat = eta.clone();
        hat[[0, 0]] += 0.5;
        hat[[2, 3]] += 9.0; // hidden cell
        let v = masked_loss(&hat, &eta, &m, 3, &s, &cfg).unwrap();
        assert!((v.loss - 0.125).abs() < 1e-7);

        let empty = masked_loss(&hat, &eta, &ObservationMask::zeros(g), 3, &s, &cfg).unwrap();
        assert_eq!(
            empty,
            LossValue {
                loss: 0.0,
                skipped: true
            }
        );

        // large residuals are linear
        hat[[0, 0]] = eta[[0, 0]] + 3.0;
        let v = masked_loss(&hat, &eta, &m, 3, &s, &cfg).unwrap();
        assert!((v.loss - 2.5).abs() < 1e-6);

        let snr = TrainConfig {
            snr_weighting: true,
            ..cfg
        };
        let w = s.alpha_bar(3) / (1.0 - s.alpha_bar(3));
        let v = masked_loss(&hat, &eta, &m, 3, &s, &snr).unwrap();
        assert!((v.loss - 2.5 * w).abs() < 1e-6 * w);
    }

    #[test]
    fn loss_ignores_hidden_cells_bitwise() {
        let s = NoiseSchedule::default();
        let cfg = TrainConfig::default();
        let g = grid(8);
        let mut rng = seeded(5);
        let eta = standard_normal((8, 8), &mut rng);
        let hat = standard_normal((8, 8), &mut rng);
        let m = ObservationMask::from_fn(g, |s, t| (s * t) % 3 == 1);
        let base = masked_loss(&hat, &eta, &m, 10, &s, &cfg).unwrap();
        let mut poked = hat.clone();
        for ((i, j), v) in poked.indexed_iter_mut() {
            if !m.get(i, j) {
                *v += 100.0;
            }
        }
        let after = masked_loss(&poked, &eta, &m, 10, &s, &cfg).unwrap();
        assert_eq!(base.loss.to_bits(), after.loss.to_bits());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0f32, -1.0, 0.5];
        let mut opt = Adam::new(3, 0.1);
        opt.update(&mut p, &[2.0, -3.0, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().check().is_ok());
        assert!(TrainConfig {
            p_extra: 1.0,
            ..TrainConfig::default()
        }
        .check()
        .is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        }
        .check()
        .is_err());
        assert_ne!(
            TrainConfig::default().fingerprint(),
            TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            }
            .fingerprint()
        );
    }
}
