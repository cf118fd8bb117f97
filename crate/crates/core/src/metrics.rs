//! Reconstruction metrics restricted to unobserved cells.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ObservationMask, SpeedField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `None` when every cell is observed
    pub masked_mse_2x2: Option<f64>,
    pub sobel_mse: Option<f64>,
    pub n_unobserved: usize,
    pub fingerprint: String,
}

fn check_shapes(pred: &SpeedField, truth: &SpeedField, m: &ObservationMask) -> Result<()> {
    let shape = truth.grid().shape();
    for found in [pred.grid().shape(), m.grid().shape()] {
        if found != shape {
            return Err(Error::Dimension {
                expected: shape,
                found,
            });
        }
    }
    Ok(())
}

/// Masked MSE after 2x2 average pooling.
///
/// Prediction, truth and the unobserved indicator `1 - m` are mean-pooled
/// over non-overlapping 2x2 cells; each pooled cell contributes its squared
/// difference with weight `w_c`, its unobserved fraction. Cells without
/// unobserved pixels carry no weight.
pub fn masked_mse_2x2(
    pred: &SpeedField,
    truth: &SpeedField,
    m: &ObservationMask,
) -> Result<Option<f64>> {
    check_shapes(pred, truth, m)?;
    let (ns, nt) = truth.grid().shape();
    if ns % 2 != 0 || nt % 2 != 0 {
        return Err(Error::arg(format!(
            "2x2 pooling needs even dimensions, got {ns}x{nt}"
        )));
    }
    let (p, t, bits) = (pred.values(), truth.values(), m.bits());
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for cs in 0..ns / 2 {
        for ct in 0..nt / 2 {
            let (mut pc, mut tc, mut w) = (0.0f64, 0.0f64, 0.0f64);
            for (s, tt) in [
                (2 * cs, 2 * ct),
                (2 * cs + 1, 2 * ct),
                (2 * cs, 2 * ct + 1),
                (2 * cs + 1, 2 * ct + 1),
            ] {
                pc += 0.25 * p[[s, tt]] as f64;
                tc += 0.25 * t[[s, tt]] as f64;
                w += 0.25 * f64::from(1 - bits[[s, tt]]);
            }
            num += w * (pc - tc) * (pc - tc);
            den += w;
        }
    }
    Ok((den > 0.0).then(|| num / den))
}

const SOBEL: [[f32; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// Sobel responses with replicate padding. `gx` differentiates along time
/// (columns), `gy` along space (rows).
pub fn sobel_edges(v: &SpeedField) -> (Array2<f32>, Array2<f32>) {
    let x = v.values();
    let (ns, nt) = x.dim();
    let at = |s: isize, t: isize| {
        x[[
            s.clamp(0, ns as isize - 1) as usize,
            t.clamp(0, nt as isize - 1) as usize,
        ]]
    };
    let mut gx = Array2::zeros((ns, nt));
    let mut gy = Array2::zeros((ns, nt));
    for s in 0..ns as isize {
        for t in 0..nt as isize {
            let (mut a, mut b) = (0.0f32, 0.0f32);
            for i in 0..3 {
                for j in 0..3 {
                    let val = at(s + i as isize - 1, t + j as isize - 1);
                    a += SOBEL[i][j] * val;
                    b += SOBEL[j][i] * val;
                }
            }
            gx[[s as usize, t as usize]] = a;
            gy[[s as usize, t as usize]] = b;
        }
    }
    (gx, gy)
}

/// Mean over unobserved pixels of `((Δgx)² + (Δgy)²) / 2`, with edges
/// computed on the full fields.
pub fn sobel_mse(
    pred: &SpeedField,
    truth: &SpeedField,
    m: &ObservationMask,
) -> Result<Option<f64>> {
    check_shapes(pred, truth, m)?;
    let (px, py) = sobel_edges(pred);
    let (tx, ty) = sobel_edges(truth);
    let (mut sum, mut n) = (0.0f64, 0usize);
    for ((idx, &bit), (&a, &b)) in m.bits().indexed_iter().zip(px.iter().zip(py.iter())) {
        if bit == 0 {
            let dx = a as f64 - tx[idx] as f64;
            let dy = b as f64 - ty[idx] as f64;
            sum += 0.5 * (dx * dx + dy * dy);
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

pub fn evaluate(
    pred: &SpeedField,
    truth: &SpeedField,
    m: &ObservationMask,
    fingerprint: impl Into<String>,
) -> Result<MetricReport> {
    Ok(MetricReport {
        masked_mse_2x2: masked_mse_2x2(pred, truth, m)?,
        sobel_mse: sobel_mse(pred, truth, m)?,
        n_unobserved: m.grid().len() - m.count(),
        fingerprint: fingerprint.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, n, 200.0, 5.0, 110.0).unwrap()
    }

    fn field(g: GridSpec, f: impl Fn(usize, usize) -> f32) -> SpeedField {
        SpeedField::from_values(g, Array2::from_shape_fn(g.shape(), |(s, t)| f(s, t))).unwrap()
    }

    #[test]
    fn masked_mse_cases() {
        let g = grid(4);
        let truth = field(g, |s, t| 0.1 * (s + t) as f32 / 8.0);
        let m = ObservationMask::from_fn(g, |s, t| !(s < 2 && t < 2));
        assert_eq!(masked_mse_2x2(&truth, &truth, &m).unwrap(), Some(0.0));
        assert_eq!(
            masked_mse_2x2(&truth, &truth, &ObservationMask::ones(g)).unwrap(),
            None
        );

        let d = 0.3f32;
        let pred = field(g, |s, t| {
            truth.values()[[s, t]] + if s < 2 && t < 2 { d } else { 0.0 }
        });
        let got = masked_mse_2x2(&pred, &truth, &m).unwrap().unwrap();
        assert!((got - (d as f64).powi(2)).abs() < 1e-6);

        let odd = GridSpec::new(5, 4, 1.0, 1.0, 1.0).unwrap();
        let f = SpeedField::constant(odd, 0.2);
        assert!(masked_mse_2x2(&f, &f, &ObservationMask::zeros(odd)).is_err());
    }

    #[test]
    fn masked_mse_ignores_fully_observed_blocks() {
        // blocks with no hidden pixel have weight zero; partially hidden
        // blocks still pool their observed pixels
        let g = grid(6);
        let truth = field(g, |s, t| ((s * 7 + t * 3) % 11) as f32 / 11.0);
        let pred = field(g, |s, t| ((s * 5 + t) % 7) as f32 / 7.0);
        let m = ObservationMask::from_fn(g, |s, t| s < 2 || (s + t) % 3 == 0);
        let base = masked_mse_2x2(&pred, &truth, &m).unwrap();
        let poked = field(g, |s, t| if s < 2 { 0.9 } else { pred.values()[[s, t]] });
        assert_eq!(masked_mse_2x2(&poked, &truth, &m).unwrap(), base);
        let partial = field(g, |s, t| {
            if s >= 2 && m.get(s, t) {
                0.9
            } else {
                pred.values()[[s, t]]
            }
        });
        assert_ne!(masked_mse_2x2(&partial, &truth, &m).unwrap(), base);
    }

    #[test]
    fn sobel_on_constant_and_ramp() {
        let g = grid(8);
        let (gx, gy) = sobel_edges(&SpeedField::constant(g, 0.6));
        assert!(gx.iter().chain(gy.iter()).all(|&v| v == 0.0));

        let a = 0.05f32;
        let (gx, gy) = sobel_edges(&field(g, |_, t| a * t as f32));
        for s in 0..8 {
            for t in 1..7 {
                assert!((gx[[s, t]] - 8.0 * a).abs() < 1e-6);
            }
        }
        assert!(gy.iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn sobel_mse_cases() {
        let g = grid(8);
        let truth = field(g, |s, t| ((s * t) % 5) as f32 / 5.0);
        let m = ObservationMask::from_fn(g, |s, _| s % 3 == 0);
        assert_eq!(sobel_mse(&truth, &truth, &m).unwrap(), Some(0.0));
        let shifted = field(g, |s, t| truth.values()[[s, t]] + 0.1);
        assert!(sobel_mse(&shifted, &truth, &m).unwrap().unwrap() < 1e-10);
        assert_eq!(
            sobel_mse(&truth, &truth, &ObservationMask::ones(g)).unwrap(),
            None
        );
    }
}
