//! Little-endian binary containers for fields, masks and observations.
//!
//! Every file starts with a 16-byte header:
//!
//! | bytes | content                          |
//! |-------|----------------------------------|
//! | 0..4  | magic (`WFLD`, `WMSK` or `WOBS`) |
//! | 4..6  | format version, u16              |
//! | 6..10 | `s_cells`, u32                   |
//! | 10..14| `t_cells`, u32                   |
//! | 14..16| reserved, zero                   |
//!
//! `WFLD` is followed by `s*t` f32 values, row-major with space leading.
//! `WMSK` is followed by `s*t` bytes. `WOBS` stores the noise level as one
//! f32, then the `y` values, then the mask bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::field::{GridSpec, ObservationMask, SpeedField};
use crate::observation::Observation;

pub const FIELD_MAGIC: &[u8; 4] = b"WFLD";
pub const MASK_MAGIC: &[u8; 4] = b"WMSK";
pub const OBS_MAGIC: &[u8; 4] = b"WOBS";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

fn header(magic: &[u8; 4], s: usize, t: usize) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0..4].copy_from_slice(magic);
    h[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    h[6..10].copy_from_slice(&(s as u32).to_le_bytes());
    h[10..14].copy_from_slice(&(t as u32).to_le_bytes());
    h
}

fn parse_header(path: &Path, bytes: &[u8], magic: &[u8; 4]) -> Result<(usize, usize)> {
    let fail = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!(
            "file shorter than the {HEADER_LEN}-byte header"
        )));
    }
    if &bytes[0..4] != magic {
        return Err(fail(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[0..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let s = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    Ok((s, t))
}

fn f32s_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn push_f32s(buf: &mut Vec<u8>, values: impl Iterator<Item = f32>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn check_len(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    Ok(())
}

/// Grid dimensions `(s_cells, t_cells)` stored in the header of any of the
/// three container kinds.
pub fn read_shape(path: &Path) -> Result<(usize, usize)> {
    let mut head = [0u8; HEADER_LEN];
    let n = fs::File::open(path)?.read(&mut head)?;
    let magic = [FIELD_MAGIC, MASK_MAGIC, OBS_MAGIC]
        .into_iter()
        .find(|m| n >= 4 && &head[0..4] == *m)
        .unwrap_or(FIELD_MAGIC);
    parse_header(path, &head[..n], magic)
}

pub fn encode_array(values: &Array2<f32>) -> Vec<u8> {
    let (s, t) = values.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * s * t);
    buf.extend_from_slice(&header(FIELD_MAGIC, s, t));
    push_f32s(&mut buf, values.iter().copied());
    buf
}

pub fn write_array(path: &Path, values: &Array2<f32>) -> Result<()> {
    fs::File::create(path)?.write_all(&encode_array(values))?;
    Ok(())
}

pub fn read_array(path: &Path) -> Result<Array2<f32>> {
    let bytes = read_all(path)?;
    let (s, t) = parse_header(path, &bytes, FIELD_MAGIC)?;
    check_len(path, &bytes, HEADER_LEN + 4 * s * t)?;
    Ok(Array2::from_shape_vec((s, t), f32s_le(&bytes[HEADER_LEN..])).expect("length checked"))
}

pub fn write_field(path: &Path, field: &SpeedField) -> Result<()> {
    write_array(path, field.values())
}

pub fn read_field(path: &Path, grid: &GridSpec) -> Result<SpeedField> {
    SpeedField::from_values(*grid, read_array(path)?)
}

pub fn write_mask(path: &Path, mask: &ObservationMask) -> Result<()> {
    let (s, t) = mask.grid().shape();
    let mut buf = Vec::with_capacity(HEADER_LEN + s * t);
    buf.extend_from_slice(&header(MASK_MAGIC, s, t));
    buf.extend(mask.bits().iter().copied());
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_mask(path: &Path, grid: &GridSpec) -> Result<ObservationMask> {
    let bytes = read_all(path)?;
    let (s, t) = parse_header(path, &bytes, MASK_MAGIC)?;
    check_len(path, &bytes, HEADER_LEN + s * t)?;
    let bits =
        Array2::from_shape_vec((s, t), bytes[HEADER_LEN..].to_vec()).expect("length checked");
    ObservationMask::from_bits(*grid, bits)
}

pub fn write_observation(path: &Path, obs: &Observation) -> Result<()> {
    let (s, t) = obs.mask.grid().shape();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 + 5 * s * t);
    buf.extend_from_slice(&header(OBS_MAGIC, s, t));
    buf.extend_from_slice(&obs.sigma.to_le_bytes());
    push_f32s(&mut buf, obs.y.iter().copied());
    buf.extend(obs.mask.bits().iter().copied());
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_observation(path: &Path, grid: &GridSpec) -> Result<Observation> {
    let bytes = read_all(path)?;
    let (s, t) = parse_header(path, &bytes, OBS_MAGIC)?;
    let n = s * t;
    check_len(path, &bytes, HEADER_LEN + 4 + 4 * n + n)?;
    let sigma = f32::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 4].try_into().unwrap());
    let y_start = HEADER_LEN + 4;
    let y = Array2::from_shape_vec((s, t), f32s_le(&bytes[y_start..y_start + 4 * n])).unwrap();
    let bits = Array2::from_shape_vec((s, t), bytes[y_start + 4 * n..].to_vec()).unwrap();
    let mask = ObservationMask::from_bits(*grid, bits)?;
    Observation::new(y, mask, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_sixteen_bytes() {
        let bytes = encode_array(&Array2::from_elem((4, 6), 0.25f32));
        assert_eq!(&bytes[0..4], b"WFLD");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 6);
        assert_eq!(&bytes[14..16], &[0, 0]);
        assert_eq!(bytes.len(), 16 + 4 * 24);
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 0.25);
    }

    #[test]
    fn files_round_trip_and_reject_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::new(4, 6, 100.0, 1.0, 110.0).unwrap();
        let values = Array2::from_shape_fn(grid.shape(), |(s, t)| (s * 6 + t) as f32 / 24.0);
        let field = SpeedField::from_values(grid, values).unwrap();
        let mask = ObservationMask::from_fn(grid, |s, t| (s + t) % 3 == 0);

        let fp = dir.path().join("a.wfld");
        let mp = dir.path().join("a.wmsk");
        write_field(&fp, &field).unwrap();
        write_mask(&mp, &mask).unwrap();
        assert_eq!(read_field(&fp, &grid).unwrap(), field);
        assert_eq!(read_mask(&mp, &grid).unwrap(), mask);
        assert!(matches!(read_mask(&fp, &grid), Err(Error::Format { .. })));
        assert_eq!(read_shape(&fp).unwrap(), (4, 6));
        assert_eq!(read_shape(&mp).unwrap(), (4, 6));

        let obs = Observation::new(field.values() * &mask.to_f32(), mask, 0.02).unwrap();
        let op = dir.path().join("a.wobs");
        write_observation(&op, &obs).unwrap();
        let back = read_observation(&op, &grid).unwrap();
        assert_eq!(back.y, obs.y);
        assert_eq!(back.mask, obs.mask);
        assert_eq!(back.sigma, obs.sigma);
    }
}
