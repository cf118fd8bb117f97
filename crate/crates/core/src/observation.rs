//! Sensor masks and the noisy masking operator `Y = M ⊙ (V + ε)`.
//!
//! Loop detectors observe fixed spatial rows at every time slice; probe
//! vehicles observe one cell per time slice along their trajectory. The
//! combined mask is the union of both.

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{GridSpec, ObservationMask, SpeedField};

/// Default measurement noise in normalized units (about 2 mph).
pub const DEFAULT_SIGMA: f32 = 0.02;

/// Masked noisy measurements. Unobserved entries of `y` are exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub y: Array2<f32>,
    pub mask: ObservationMask,
    pub sigma: f32,
}

impl Observation {
    pub fn new(y: Array2<f32>, mask: ObservationMask, sigma: f32) -> Result<Self> {
        mask.grid().expect_shape(y.dim())?;
        if !(sigma >= 0.0) {
            return Err(Error::arg(format!(
                "noise level must be non-negative, got {sigma}"
            )));
        }
        let stray = Zip::from(&y)
            .and(mask.bits())
            .fold(0usize, |n, &v, &b| n + usize::from(b == 0 && v != 0.0));
        if stray > 0 {
            return Err(Error::Data(format!(
                "{stray} unobserved entries of y are non-zero"
            )));
        }
        Ok(Observation {
            y: y.as_standard_layout().into_owned(),
            mask,
            sigma,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.mask.grid()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectorySample {
    /// seconds since the start of the window
    pub time: f32,
    /// feet from the upstream edge of the corridor
    pub position: f32,
    /// ft/s
    pub speed: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeTrajectory {
    pub vehicle_id: String,
    samples: Vec<TrajectorySample>,
}

impl ProbeTrajectory {
    pub fn new(vehicle_id: impl Into<String>, samples: Vec<TrajectorySample>) -> Result<Self> {
        let vehicle_id = vehicle_id.into();
        for w in samples.windows(2) {
            if !(w[1].time > w[0].time) {
                return Err(Error::Data(format!(
                    "vehicle {vehicle_id}: timestamps not strictly increasing ({} then {})",
                    w[0].time, w[1].time
                )));
            }
        }
        if let Some(bad) = samples.iter().find(|p| !(p.speed >= 0.0)) {
            return Err(Error::Data(format!(
                "vehicle {vehicle_id}: negative speed {}",
                bad.speed
            )));
        }
        Ok(ProbeTrajectory {
            vehicle_id,
            samples,
        })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    /// Linear interpolation of (position, speed) at `time`, if covered.
    pub fn state_at(&self, time: f32) -> Option<(f32, f32)> {
        let first = self.samples.first()?;
        let last = self.samples.last()?;
        if time < first.time || time > last.time {
            return None;
        }
        let idx = self.samples.partition_point(|p| p.time <= time);
        if idx == 0 {
            return Some((first.position, first.speed));
        }
        if idx == self.samples.len() {
            return Some((last.position, last.speed));
        }
        let (a, b) = (&self.samples[idx - 1], &self.samples[idx]);
        let w = (time - a.time) / (b.time - a.time);
        Some((
            a.position + w * (b.position - a.position),
            a.speed + w * (b.speed - a.speed),
        ))
    }
}

/// Fixed detector rows plus the probe intensity used to draw probe masks.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorLayout {
    pub loop_rows: Vec<usize>,
    pub row_coverage: f64,
    /// number of distinct probe trajectories per sample window
    pub probe_intensity: usize,
}

impl SensorLayout {
    pub fn new(
        grid: &GridSpec,
        row_coverage: f64,
        probe_intensity: usize,
        layout_seed: u64,
    ) -> Result<Self> {
        let loop_rows = loop_rows(grid.s_cells, row_coverage, layout_seed)?;
        Ok(SensorLayout {
            loop_rows,
            row_coverage,
            probe_intensity,
        })
    }

    pub fn loop_mask(&self, grid: &GridSpec) -> ObservationMask {
        let mut m = ObservationMask::zeros(*grid);
        for &s in &self.loop_rows {
            for t in 0..grid.t_cells {
                m.set(s, t, true);
            }
        }
        m
    }
}

/// Number of detector rows for a coverage fraction; never zero when
/// coverage is positive.
pub fn loop_row_count(s_cells: usize, row_coverage: f64) -> usize {
    let k = (row_coverage * s_cells as f64).round() as usize;
    if row_coverage > 0.0 {
        k.clamp(1, s_cells)
    } else {
        0
    }
}

/// Evenly spaced rows with a phase offset drawn from `layout_seed`.
pub fn loop_rows(s_cells: usize, row_coverage: f64, layout_seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&row_coverage) {
        return Err(Error::arg(format!(
            "row coverage must be in [0, 1], got {row_coverage}"
        )));
    }
    let k = loop_row_count(s_cells, row_coverage);
    if k == 0 {
        return Ok(Vec::new());
    }
    let phase: f64 = crate::rng::seeded(layout_seed).random();
    let spacing = s_cells as f64 / k as f64;
    Ok((0..k)
        .map(|i| (((phase + i as f64) * spacing).floor() as usize).min(s_cells - 1))
        .collect())
}

pub fn make_loop_mask(
    grid: &GridSpec,
    row_coverage: f64,
    layout_seed: u64,
) -> Result<ObservationMask> {
    Ok(SensorLayout::new(grid, row_coverage, 0, layout_seed)?.loop_mask(grid))
}

/// Resamples trajectories onto the grid at every time-slice center.
///
/// Returns the probe mask and the normalized speeds seen on it (zero
/// elsewhere). Cells hit by several vehicles get the mean speed.
pub fn rasterize_trajectories(
    trajs: &[ProbeTrajectory],
    grid: &GridSpec,
) -> (ObservationMask, Array2<f32>) {
    let shape = grid.shape();
    let mut sum = Array2::<f32>::zeros(shape);
    let mut count = Array2::<u32>::zeros(shape);
    let length = grid.length_ft();
    for traj in trajs {
        for t in 0..grid.t_cells {
            let center = (t as f32 + 0.5) * grid.dt;
            let Some((pos, speed)) = traj.state_at(center) else {
                continue;
            };
            if !(0.0..=length).contains(&pos) {
                continue;
            }
            let s = ((pos / grid.dx).floor() as usize).min(grid.s_cells - 1);
            sum[[s, t]] += (speed / grid.v_max).clamp(0.0, 1.0);
            count[[s, t]] += 1;
        }
    }
    let mask = ObservationMask::from_fn(*grid, |s, t| count[[s, t]] > 0);
    let speeds = Array2::from_shape_fn(shape, |(s, t)| {
        let c = count[[s, t]];
        if c > 0 {
            sum[[s, t]] / c as f32
        } else {
            0.0
        }
    });
    (mask, speeds)
}

/// Draws `lambda` distinct trajectories uniformly without replacement and
/// rasterizes them. The draw takes a prefix of one seeded permutation of the
/// pool, so a larger `lambda` under the same seed yields a superset mask.
pub fn make_probe_mask<R: Rng + ?Sized>(
    pool: &[ProbeTrajectory],
    lambda: usize,
    grid: &GridSpec,
    rng: &mut R,
) -> Result<ObservationMask> {
    if lambda > pool.len() {
        return Err(Error::arg(format!(
            "probe intensity {lambda} exceeds pool of {}",
            pool.len()
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(rng);
    let chosen: Vec<ProbeTrajectory> = order[..lambda].iter().map(|&i| pool[i].clone()).collect();
    Ok(rasterize_trajectories(&chosen, grid).0)
}

/// Elementwise OR.
pub fn combine_masks(a: &ObservationMask, b: &ObservationMask) -> Result<ObservationMask> {
    if a.grid().shape() != b.grid().shape() {
        return Err(Error::Dimension {
            expected: a.grid().shape(),
            found: b.grid().shape(),
        });
    }
    let bits = Zip::from(a.bits())
        .and(b.bits())
        .map_collect(|&x, &y| x | y);
    ObservationMask::from_bits(*a.grid(), bits)
}

/// Fraction of observed cells, `|M|_0 / (S T)`.
pub fn visibility_ratio(m: &ObservationMask) -> f64 {
    m.count() as f64 / m.grid().len() as f64
}

/// `Y = M ⊙ clamp(V + ε, 0, 1)` with `ε ~ N(0, σ²)`. Noise is drawn only for
/// observed cells, in row-major order.
pub fn observe<R: Rng + ?Sized>(
    v: &SpeedField,
    m: &ObservationMask,
    sigma: f32,
    rng: &mut R,
) -> Result<Observation> {
    v.grid().expect_shape(m.grid().shape())?;
    if !(sigma >= 0.0) {
        return Err(Error::arg(format!(
            "noise level must be non-negative, got {sigma}"
        )));
    }
    let mut y = Array2::<f32>::zeros(v.grid().shape());
    Zip::from(&mut y)
        .and(v.values())
        .and(m.bits())
        .for_each(|y, &x, &bit| {
            if bit == 1 {
                let eps: f32 = if sigma > 0.0 {
                    sigma * rng.sample::<f32, _>(StandardNormal)
                } else {
                    0.0
                };
                *y = (x + eps).clamp(0.0, 1.0);
            }
        });
    Observation::new(y, m.clone(), sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn grid(s: usize, t: usize) -> GridSpec {
        GridSpec::new(s, t, 200.0, 5.0, 110.0).unwrap()
    }

    fn straight(id: &str, t0: f32, t1: f32, x0: f32, v: f32) -> ProbeTrajectory {
        let n = 200;
        let samples = (0..=n)
            .map(|i| {
                let time = t0 + (t1 - t0) * i as f32 / n as f32;
                TrajectorySample {
                    time,
                    position: x0 + v * (time - t0),
                    speed: v,
                }
            })
            .collect();
        ProbeTrajectory::new(id, samples).unwrap()
    }

    #[test]
    fn loop_mask_coverage_levels() {
        let g = grid(32, 8);
        assert_eq!(make_loop_mask(&g, 0.0, 1).unwrap().count(), 0);
        assert!(make_loop_mask(&g, 1.0, 1).unwrap().is_full());
        let g200 = grid(200, 16);
        let m = make_loop_mask(&g200, 0.05, 3).unwrap();
        let rows: Vec<usize> = (0..200).filter(|&s| m.get(s, 0)).collect();
        assert_eq!(rows.len(), 10);
        // time invariance
        for s in 0..200 {
            let first = m.get(s, 0);
            assert!((0..16).all(|t| m.get(s, t) == first));
        }
        // even spacing
        for w in rows.windows(2) {
            assert!((19..=21).contains(&(w[1] - w[0])));
        }
    }

    #[test]
    fn tiny_coverage_keeps_one_row() {
        assert_eq!(loop_rows(64, 0.001, 9).unwrap().len(), 1);
        assert!(loop_rows(64, 1.5, 9).is_err());
    }

    #[test]
    fn rasterize_empty_and_stationary() {
        let g = grid(16, 12);
        let (m, speeds) = rasterize_trajectories(&[], &g);
        assert_eq!(m.count(), 0);
        assert!(speeds.iter().all(|&v| v == 0.0));

        let p = 5.5 * g.dx;
        let parked = straight("a", 0.0, g.duration_s(), p, 0.0);
        let (m, _) = rasterize_trajectories(&[parked], &g);
        assert_eq!(m.count(), g.t_cells);
        for t in 0..g.t_cells {
            assert!(m.get(5, t));
        }
    }

    #[test]
    fn rasterize_constant_speed_line() {
        let g = grid(64, 32);
        let v = 40.0; // ft/s -> 1 cell per slice
        let traj = straight("b", 0.0, g.duration_s(), 100.0, v);
        let (m, speeds) = rasterize_trajectories(&[traj], &g);
        for t in 0..g.t_cells {
            let center = (t as f32 + 0.5) * g.dt;
            let s = ((100.0 + v * center) / g.dx).floor() as usize;
            assert!(m.get(s, t), "missing cell ({s},{t})");
            assert!((speeds[[s, t]] - v / g.v_max).abs() < 1e-6);
        }
        assert_eq!(m.count(), g.t_cells);
        let slope = v * g.dt / g.dx;
        assert!((slope - 1.0).abs() < 1e-6);
    }

    #[test]
    fn collisions_average() {
        let g = grid(8, 4);
        let a = straight("a", 0.0, g.duration_s(), 300.0, 0.0);
        let mut b = straight("b", 0.0, g.duration_s(), 300.0, 0.0);
        for s in b.samples.iter_mut() {
            s.speed = 55.0;
        }
        let (m, speeds) = rasterize_trajectories(&[a, b], &g);
        assert_eq!(m.count(), 4);
        assert!((speeds[[1, 0]] - 0.25).abs() < 1e-6);
    }

    #[test]
    fn probe_mask_selection() {
        let g = grid(32, 16);
        let pool: Vec<_> = (0..6)
            .map(|i| straight(&i.to_string(), 0.0, 80.0, 200.0 * i as f32, 30.0))
            .collect();
        assert_eq!(
            make_probe_mask(&pool, 0, &g, &mut seeded(1))
                .unwrap()
                .count(),
            0
        );
        let all = make_probe_mask(&pool, 6, &g, &mut seeded(1)).unwrap();
        assert_eq!(all, rasterize_trajectories(&pool, &g).0);
        let a = make_probe_mask(&pool, 3, &g, &mut seeded(4)).unwrap();
        let b = make_probe_mask(&pool, 3, &g, &mut seeded(4)).unwrap();
        assert_eq!(a, b);
        let small = make_probe_mask(&pool, 2, &g, &mut seeded(4)).unwrap();
        assert!(small.is_subset_of(&a));
        assert!(make_probe_mask(&pool, 7, &g, &mut seeded(4)).is_err());
    }

    #[test]
    fn combine_and_visibility() {
        let g = grid(8, 8);
        let z = ObservationMask::zeros(g);
        let m = ObservationMask::from_fn(g, |s, t| (s * t) % 3 == 1);
        assert_eq!(combine_masks(&m, &z).unwrap(), m);
        let c = ObservationMask::from_fn(g, |s, t| (s * t) % 3 != 1);
        assert!(combine_masks(&m, &c).unwrap().is_full());
        assert_eq!(visibility_ratio(&z), 0.0);
        assert_eq!(visibility_ratio(&ObservationMask::ones(g)), 1.0);
        let other = ObservationMask::zeros(grid(8, 4));
        assert!(combine_masks(&m, &other).is_err());

        let g200 = grid(200, 20);
        let loops = make_loop_mask(&g200, 0.05, 0).unwrap();
        assert!((visibility_ratio(&loops) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn observe_noiseless_and_empty() {
        let g = grid(8, 8);
        let v = SpeedField::from_values(
            g,
            Array2::from_shape_fn(g.shape(), |(s, t)| (s + t) as f32 / 16.0),
        )
        .unwrap();
        let m = ObservationMask::from_fn(g, |s, _| s % 2 == 0);
        let obs = observe(&v, &m, 0.0, &mut seeded(0)).unwrap();
        assert_eq!(obs.y, v.values() * &m.to_f32());
        let none = observe(&v, &ObservationMask::zeros(g), 0.3, &mut seeded(0)).unwrap();
        assert!(none.y.iter().all(|&x| x == 0.0));
        assert!(observe(&v, &m, -1.0, &mut seeded(0)).is_err());
    }

    #[test]
    fn observe_noise_level_matches_sigma() {
        // 10^5 observed cells with v in [0.2, 0.8]: clamping never triggers at 0.02
        let g = grid(400, 250);
        let mut rng = seeded(11);
        let v = SpeedField::from_values(
            g,
            Array2::from_shape_fn(g.shape(), |_| 0.2 + 0.6 * rng.random::<f32>()),
        )
        .unwrap();
        let sigma = 0.02;
        let obs = observe(&v, &ObservationMask::ones(g), sigma, &mut seeded(12)).unwrap();
        let resid: Vec<f64> = obs
            .y
            .iter()
            .zip(v.values())
            .map(|(&y, &x)| (y - x) as f64)
            .collect();
        let n = resid.len() as f64;
        let mean = resid.iter().sum::<f64>() / n;
        let std = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std / sigma as f64 - 1.0).abs() < 0.05, "std {std}");
    }
}
