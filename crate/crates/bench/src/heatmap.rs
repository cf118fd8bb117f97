//! PNG rendering of speed fields: time runs left to right, the first
//! spatial cell is the top row. Slow traffic is red, free flow green.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::Array2;

use crate::error::Result;

const STOPS: [(f32, [f32; 3]); 3] = [
    (0.0, [200.0, 30.0, 30.0]),
    (0.5, [240.0, 210.0, 60.0]),
    (1.0, [40.0, 160.0, 70.0]),
];

/// Colour for a normalized speed; values outside [0, 1] are clamped.
pub fn colour(v: f32) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let k = if v <= STOPS[1].0 { 0 } else { 1 };
    let ((a, ca), (b, cb)) = (STOPS[k], STOPS[k + 1]);
    let f = (v - a) / (b - a);
    [0, 1, 2].map(|i| (ca[i] + f * (cb[i] - ca[i])).round() as u8)
}

/// Writes `values` as an RGB image, each cell drawn as `scale x scale`
/// pixels.
pub fn write_heatmap(path: &Path, values: &Array2<f32>, scale: usize) -> Result<()> {
    let scale = scale.max(1);
    let (ns, nt) = values.dim();
    let (w, h) = (nt * scale, ns * scale);
    let mut data = Vec::with_capacity(w * h * 3);
    for s in 0..ns {
        let row: Vec<u8> = (0..nt)
            .flat_map(|t| std::iter::repeat_n(colour(values[[s, t]]), scale).flatten())
            .collect();
        for _ in 0..scale {
            data.extend_from_slice(&row);
        }
    }
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&data)?;
    writer.finish()?;
    Ok(())
}
