//! Grid geometry and the field/mask value types.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default normalization speed, ft/s (about 75 mph).
pub const DEFAULT_V_MAX: f32 = 110.0;

/// Discretization of a corridor: `s_cells` spatial cells of `dx` feet by
/// `t_cells` time slices of `dt` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub s_cells: usize,
    pub t_cells: usize,
    /// feet per spatial cell
    pub dx: f32,
    /// seconds per time slice
    pub dt: f32,
    /// ft/s mapped to normalized speed 1.0
    pub v_max: f32,
}

impl GridSpec {
    pub fn new(s_cells: usize, t_cells: usize, dx: f32, dt: f32, v_max: f32) -> Result<Self> {
        let g = GridSpec {
            s_cells,
            t_cells,
            dx,
            dt,
            v_max,
        };
        g.check()?;
        Ok(g)
    }

    /// The 64x64 desk-scale regime: 5 s slices, 200 ft cells.
    pub fn desk64() -> Self {
        GridSpec {
            s_cells: 64,
            t_cells: 64,
            dx: 200.0,
            dt: 5.0,
            v_max: DEFAULT_V_MAX,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.s_cells < 4 || self.t_cells < 4 {
            return Err(Error::arg(format!(
                "grid must be at least 4x4, got {}x{}",
                self.s_cells, self.t_cells
            )));
        }
        if !(self.dx > 0.0 && self.dt > 0.0 && self.v_max > 0.0) {
            return Err(Error::arg("dx, dt and v_max must be positive"));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.s_cells, self.t_cells)
    }

    pub fn len(&self) -> usize {
        self.s_cells * self.t_cells
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Corridor length in feet.
    pub fn length_ft(&self) -> f32 {
        self.s_cells as f32 * self.dx
    }

    /// Window duration in seconds.
    pub fn duration_s(&self) -> f32 {
        self.t_cells as f32 * self.dt
    }

    pub fn expect_shape(&self, found: (usize, usize)) -> Result<()> {
        if found != self.shape() {
            return Err(Error::Dimension {
                expected: self.shape(),
                found,
            });
        }
        Ok(())
    }
}

/// Dense normalized speed field, indexed `[[s, t]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedField {
    grid: GridSpec,
    values: Array2<f32>,
}

impl SpeedField {
    /// Wraps `values` without range checks; use [`validate`] to inspect them.
    pub fn from_values(grid: GridSpec, values: Array2<f32>) -> Result<Self> {
        grid.expect_shape(values.dim())?;
        Ok(SpeedField {
            grid,
            values: values.as_standard_layout().into_owned(),
        })
    }

    pub fn constant(grid: GridSpec, v: f32) -> Self {
        SpeedField {
            grid,
            values: Array2::from_elem(grid.shape(), v),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f32> {
        self.values
    }

    pub fn as_slice(&self) -> &[f32] {
        self.values.as_slice().expect("standard layout")
    }
}

/// Binary observation mask; 1 marks an observed cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMask {
    grid: GridSpec,
    bits: Array2<u8>,
}

impl ObservationMask {
    pub fn zeros(grid: GridSpec) -> Self {
        ObservationMask {
            grid,
            bits: Array2::zeros(grid.shape()),
        }
    }

    pub fn ones(grid: GridSpec) -> Self {
        ObservationMask {
            grid,
            bits: Array2::ones(grid.shape()),
        }
    }

    pub fn from_bits(grid: GridSpec, bits: Array2<u8>) -> Result<Self> {
        grid.expect_shape(bits.dim())?;
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::arg(format!(
                "mask entries must be 0 or 1, found {bad}"
            )));
        }
        Ok(ObservationMask {
            grid,
            bits: bits.as_standard_layout().into_owned(),
        })
    }

    /// Builds a mask from a predicate over `(s, t)`.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let bits = Array2::from_shape_fn(grid.shape(), |(s, t)| u8::from(f(s, t)));
        ObservationMask { grid, bits }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn bits(&self) -> &Array2<u8> {
        &self.bits
    }

    pub fn as_slice(&self) -> &[u8] {
        self.bits.as_slice().expect("standard layout")
    }

    pub fn get(&self, s: usize, t: usize) -> bool {
        self.bits[[s, t]] == 1
    }

    pub fn set(&mut self, s: usize, t: usize, observed: bool) {
        self.bits[[s, t]] = u8::from(observed);
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b == 1)
    }

    /// Mask as 0.0/1.0 floats.
    pub fn to_f32(&self) -> Array2<f32> {
        self.bits.mapv(f32::from)
    }

    /// True when every observed cell of `self` is also observed in `other`.
    pub fn is_subset_of(&self, other: &ObservationMask) -> bool {
        self.bits
            .iter()
            .zip(other.bits.iter())
            .all(|(&a, &b)| a <= b)
    }
}

/// `clamp(raw / v_max, 0, 1)`.
pub fn normalize(raw: &Array2<f32>, grid: &GridSpec) -> Result<SpeedField> {
    grid.expect_shape(raw.dim())?;
    let inv = grid.v_max;
    let values = raw.mapv(|x| (x / inv).clamp(0.0, 1.0));
    Ok(SpeedField {
        grid: *grid,
        values,
    })
}

/// Back to ft/s.
pub fn denormalize(field: &SpeedField) -> Array2<f32> {
    let v_max = field.grid.v_max;
    field.values.mapv(|x| x * v_max)
}

/// One out-of-range or non-finite entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub s: usize,
    pub t: usize,
    pub value: f32,
    /// distance outside `[0, 1]`; NaN for non-finite entries
    pub magnitude: f32,
}

/// Lists every entry that is non-finite or outside `[0, 1]`.
pub fn validate(field: &SpeedField) -> Result<(), Vec<Violation>> {
    let mut report = Vec::new();
    for ((s, t), &value) in field.values.indexed_iter() {
        let magnitude = if !value.is_finite() {
            f32::NAN
        } else if value < 0.0 {
            -value
        } else if value > 1.0 {
            value - 1.0
        } else {
            continue;
        };
        report.push(Violation {
            s,
            t,
            value,
            magnitude,
        });
    }
    if report.is_empty() {
        Ok(())
    } else {
        Err(report)
    }
}

/// `a * m + b * (1 - m)` elementwise, i.e. take `a` where observed.
pub fn merge_on_mask(a: &Array2<f32>, b: &Array2<f32>, m: &ObservationMask) -> Array2<f32> {
    let mut out = b.clone();
    Zip::from(&mut out)
        .and(a)
        .and(m.bits())
        .for_each(|o, &x, &bit| {
            if bit == 1 {
                *o = x;
            }
        });
    out
}
