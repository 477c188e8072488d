//! File formats.
//!
//! * Rasters are binary portable graymaps (`P5`). 16-bit maps are
//!   big-endian with maxval 65535: depths are stored as millimeters
//!   (`meters × 1000`, clamped to `[0, 65535]`) and probabilities as
//!   `p × 65535`. Masks are 8-bit with values 0 and 255.
//! * Arrays are written as a raw little-endian `f64` file (`<stem>.bin`)
//!   next to a JSON header (`<stem>.json`) of the form
//!   `{"shape": [..], "dtype": "f64", "byte_order": "little", "layout": "row-major"}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayD, ArrayView2, IxDyn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scales meters to millimeters in a `u16`.
pub fn depth_to_u16(meters: f64) -> u16 {
    (meters * 1000.0).round().clamp(0.0, 65535.0) as u16
}

/// Scales a probability in `[0, 1]` to the full `u16` range.
pub fn prob_to_u16(p: f64) -> u16 {
    (p * 65535.0).round().clamp(0.0, 65535.0) as u16
}

fn pgm_bytes(width: usize, height: usize, maxval: u32, body: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    out.extend_from_slice(body);
    out
}

pub fn encode_pgm16(map: ArrayView2<u16>) -> Vec<u8> {
    let (h, w) = map.dim();
    let body: Vec<u8> = map.iter().flat_map(|v| v.to_be_bytes()).collect();
    pgm_bytes(w, h, 65535, &body)
}

pub fn encode_pgm8(map: ArrayView2<u8>) -> Vec<u8> {
    let (h, w) = map.dim();
    let body: Vec<u8> = map.iter().copied().collect();
    pgm_bytes(w, h, 255, &body)
}

pub fn write_depth_pgm(path: &Path, depth_m: &Array2<f64>) -> Result<()> {
    fs::write(path, encode_pgm16(depth_m.mapv(depth_to_u16).view()))?;
    Ok(())
}

pub fn write_prob_pgm(path: &Path, prob: &Array2<f64>) -> Result<()> {
    fs::write(path, encode_pgm16(prob.mapv(prob_to_u16).view()))?;
    Ok(())
}

pub fn write_mask_pgm(path: &Path, mask: &Array2<bool>) -> Result<()> {
    fs::write(
        path,
        encode_pgm8(mask.mapv(|m| if m { 255 } else { 0 }).view()),
    )?;
    Ok(())
}

/// Header stored beside a flat binary array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatHeader {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
}

fn stem_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

/// Writes `<stem>.bin` and `<stem>.json` for any array of `f64`.
pub fn write_flat<D: ndarray::Dimension>(
    stem: &Path,
    array: &ndarray::Array<f64, D>,
) -> Result<()> {
    let (bin, json) = stem_paths(stem);
    let mut f = fs::File::create(&bin)?;
    let std_layout = array.as_standard_layout();
    let mut buf = Vec::with_capacity(array.len() * 8);
    for v in std_layout.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    f.write_all(&buf)?;
    let header = FlatHeader {
        shape: array.shape().to_vec(),
        dtype: "f64".into(),
        byte_order: "little".into(),
        layout: "row-major".into(),
    };
    fs::write(json, serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_flat(stem: &Path) -> Result<ArrayD<f64>> {
    let (bin, json) = stem_paths(stem);
    let header: FlatHeader = serde_json::from_str(&fs::read_to_string(json)?)?;
    if header.dtype != "f64" || header.byte_order != "little" || header.layout != "row-major" {
        return Err(Error::invalid("header", format!("unsupported layout {header:?}")));
    }
    let bytes = fs::read(bin)?;
    let n: usize = header.shape.iter().product();
    if bytes.len() != n * 8 {
        return Err(Error::invalid(
            "shape",
            format!("{} bytes for {n} elements", bytes.len()),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ArrayD::from_shape_vec(IxDyn(&header.shape), data)
        .map_err(|e| Error::invalid("shape", e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    #[test]
    fn scaling_conventions() {
        assert_eq!(depth_to_u16(12.345), 12345);
        assert_eq!(depth_to_u16(80.0), 65535);
        assert_eq!(depth_to_u16(-1.0), 0);
        assert_eq!(prob_to_u16(1.0), 65535);
        assert_eq!(prob_to_u16(0.0), 0);
    }

    #[test]
    fn pgm16_layout() {
        let bytes = encode_pgm16(array![[1u16, 258], [0, 65535]].view());
        let header = b"P5\n2 2\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 1, 1, 2, 0, 0, 255, 255]);
    }

    #[test]
    fn flat_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Array3::from_shape_fn((2, 3, 4), |(i, j, k)| (i * 100 + j * 10 + k) as f64 + 0.125);
        let stem = dir.path().join("grid");
        write_flat(&stem, &a).unwrap();
        let back = read_flat(&stem).unwrap();
        assert_eq!(back.shape(), &[2, 3, 4]);
        assert_eq!(back.into_dimensionality::<ndarray::Ix3>().unwrap(), a);
        let header: FlatHeader = read_json(&stem.with_extension("json")).unwrap();
        assert_eq!(header.shape, vec![2, 3, 4]);
    }
}
