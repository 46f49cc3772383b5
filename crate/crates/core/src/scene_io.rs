//! Scene files: a JSON header plus raw little-endian payloads.
//!
//! ```json
//! {"version":"hscn-1","rows":145,"cols":145,"channels":220,"dtype":"f32le",
//!  "data_file":"scene.f32","gt_file":"scene.gt.u16","gt_dtype":"u16le"}
//! ```
//!
//! `data_file` holds `rows*cols*channels` f32 values in `(row, col, channel)`
//! order; `gt_file` holds `rows*cols` u16 class ids in `(row, col)` order.
//! Payload paths are resolved relative to the header's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{Error, Result};
use crate::grid::ClassGrid;

pub const SCENE_VERSION: &str = "hscn-1";
const DATA_DTYPE: &str = "f32le";
const GT_DTYPE: &str = "u16le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneHeader {
    pub version: String,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub dtype: String,
    pub data_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_dtype: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_names: Option<Vec<String>>,
}

/// A cube with its optional ground truth and band names.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: HsiCube,
    pub ground_truth: Option<ClassGrid>,
    pub band_names: Option<Vec<String>>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn resolve(header_path: &Path, file: &str) -> PathBuf {
    match header_path.parent() {
        Some(dir) => dir.join(file),
        None => PathBuf::from(file),
    }
}

pub fn load_scene(header_path: impl AsRef<Path>) -> Result<Scene> {
    let header_path = header_path.as_ref();
    let text = read_file(header_path)?;
    let header: SceneHeader = serde_json::from_slice(&text)
        .map_err(|e| Error::json(header_path.display().to_string(), e))?;
    if header.version != SCENE_VERSION {
        return Err(Error::data(format!(
            "unsupported scene version {:?}, expected {SCENE_VERSION:?}",
            header.version
        )));
    }
    if header.dtype != DATA_DTYPE {
        return Err(Error::data(format!("unsupported data dtype {:?}", header.dtype)));
    }

    let payload = read_file(&resolve(header_path, &header.data_file))?;
    let expected = header.rows * header.cols * header.channels;
    if payload.len() != expected * 4 {
        return Err(Error::data(format!(
            "size mismatch: header declares {}x{}x{} = {expected} f32 values, payload has {} bytes",
            header.rows,
            header.cols,
            header.channels,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let cube = HsiCube::new(header.rows, header.cols, header.channels, data)?;

    let ground_truth = match &header.gt_file {
        None => None,
        Some(file) => {
            let dtype = header.gt_dtype.as_deref().unwrap_or(GT_DTYPE);
            if dtype != GT_DTYPE {
                return Err(Error::data(format!("unsupported ground-truth dtype {dtype:?}")));
            }
            let bytes = read_file(&resolve(header_path, file))?;
            let expected = header.rows * header.cols;
            if bytes.len() != expected * 2 {
                return Err(Error::data(format!(
                    "size mismatch: ground truth needs {expected} u16 values, file has {} bytes",
                    bytes.len()
                )));
            }
            let ids = bytes
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect();
            Some(ClassGrid::from_vec(header.rows, header.cols, ids)?)
        }
    };

    if let Some(names) = &header.band_names {
        if names.len() != header.channels {
            return Err(Error::data(format!(
                "{} band names for {} channels",
                names.len(),
                header.channels
            )));
        }
    }

    Ok(Scene {
        cube,
        ground_truth,
        band_names: header.band_names,
    })
}

/// Writes `<stem>.json`, `<stem>.f32` and (with ground truth) `<stem>.gt.u16`
/// next to `header_path`. Values are narrowed to f32.
pub fn save_scene(scene: &Scene, header_path: impl AsRef<Path>) -> Result<()> {
    let header_path = header_path.as_ref();
    let stem = header_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::config(format!("bad header path {}", header_path.display())))?;
    let cube = &scene.cube;
    if let Some(gt) = &scene.ground_truth {
        if gt.rows() != cube.rows() || gt.cols() != cube.cols() {
            return Err(Error::data("ground truth and cube dimensions differ"));
        }
    }

    let data_file = format!("{stem}.f32");
    let mut bytes = Vec::with_capacity(cube.data().len() * 4);
    for &v in cube.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_file(&resolve(header_path, &data_file), &bytes)?;

    let gt_file = match &scene.ground_truth {
        None => None,
        Some(gt) => {
            let file = format!("{stem}.gt.u16");
            let bytes: Vec<u8> = gt.as_slice().iter().flat_map(|id| id.to_le_bytes()).collect();
            write_file(&resolve(header_path, &file), &bytes)?;
            Some(file)
        }
    };

    let header = SceneHeader {
        version: SCENE_VERSION.to_string(),
        rows: cube.rows(),
        cols: cube.cols(),
        channels: cube.channels(),
        dtype: DATA_DTYPE.to_string(),
        gt_dtype: gt_file.as_ref().map(|_| GT_DTYPE.to_string()),
        data_file,
        gt_file,
        band_names: scene.band_names.clone(),
    };
    let text = serde_json::to_vec_pretty(&header).map_err(|e| Error::json("scene header", e))?;
    write_file(header_path, &text)
}

/// Element type of a plain dense-array dump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawDtype {
    U8,
    U16le,
    I16le,
    F32le,
    F32be,
    F64le,
}

impl RawDtype {
    fn width(self) -> usize {
        match self {
            RawDtype::U8 => 1,
            RawDtype::U16le | RawDtype::I16le => 2,
            RawDtype::F32le | RawDtype::F32be => 4,
            RawDtype::F64le => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            RawDtype::U8 => b[0] as f64,
            RawDtype::U16le => u16::from_le_bytes([b[0], b[1]]) as f64,
            RawDtype::I16le => i16::from_le_bytes([b[0], b[1]]) as f64,
            RawDtype::F32le => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            RawDtype::F32be => f32::from_be_bytes([b[0], b[1], b[2], b[3]]) as f64,
            RawDtype::F64le => f64::from_le_bytes(b.try_into().expect("8 bytes")),
        }
    }
}

/// Axis order of a dump: band-interleaved-by-pixel `(row, col, band)`,
/// band-sequential `(band, row, col)` or band-interleaved-by-line `(row, band, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interleave {
    #[default]
    Bip,
    Bsq,
    Bil,
}

/// Sidecar shape declaration for [`convert_raw`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawShape {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub dtype: RawDtype,
    #[serde(default)]
    pub interleave: Interleave,
    #[serde(default)]
    pub header_bytes: usize,
    #[serde(default)]
    pub band_names: Option<Vec<String>>,
}

fn decode_values(bytes: &[u8], dtype: RawDtype, skip: usize, count: usize, what: &str) -> Result<Vec<f64>> {
    let needed = skip + count * dtype.width();
    if bytes.len() != needed {
        return Err(Error::data(format!(
            "size mismatch: {what} needs {needed} bytes ({count} x {:?} + {skip} header), got {}",
            dtype,
            bytes.len()
        )));
    }
    Ok(bytes[skip..]
        .chunks_exact(dtype.width())
        .map(|b| dtype.decode(b))
        .collect())
}

/// Builds a [`Scene`] from a dense dump and optional ground-truth dump
/// (`rows*cols` values of `gt_dtype`, row-major).
pub fn convert_raw(
    data: &[u8],
    shape: &RawShape,
    ground_truth: Option<(&[u8], RawDtype)>,
) -> Result<Scene> {
    let (rows, cols, bands) = (shape.rows, shape.cols, shape.channels);
    let raw = decode_values(data, shape.dtype, shape.header_bytes, rows * cols * bands, "data dump")?;
    let mut bip = vec![0.0; raw.len()];
    for r in 0..rows {
        for c in 0..cols {
            for b in 0..bands {
                let src = match shape.interleave {
                    Interleave::Bip => (r * cols + c) * bands + b,
                    Interleave::Bsq => (b * rows + r) * cols + c,
                    Interleave::Bil => (r * bands + b) * cols + c,
                };
                bip[(r * cols + c) * bands + b] = raw[src];
            }
        }
    }
    let cube = HsiCube::new(rows, cols, bands, bip)?;
    let ground_truth = match ground_truth {
        None => None,
        Some((bytes, dtype)) => {
            let values = decode_values(bytes, dtype, 0, rows * cols, "ground-truth dump")?;
            let ids = values
                .into_iter()
                .map(|v| {
                    if v.fract() != 0.0 || !(0.0..=u16::MAX as f64).contains(&v) {
                        Err(Error::data(format!("ground-truth value {v} is not a u16 class id")))
                    } else {
                        Ok(v as u16)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Some(ClassGrid::from_vec(rows, cols, ids)?)
        }
    };
    Ok(Scene {
        cube,
        ground_truth,
        band_names: shape.band_names.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PixelCoord;

    fn write_header(dir: &Path, header: &serde_json::Value) -> PathBuf {
        let path = dir.join("scene.json");
        fs::write(&path, serde_json::to_vec(header).unwrap()).unwrap();
        path
    }

    fn f32_bytes(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn payload_is_row_major() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("d.f32"), f32_bytes(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        let path = write_header(
            dir.path(),
            &serde_json::json!({"version":"hscn-1","rows":2,"cols":2,"channels":1,"dtype":"f32le","data_file":"d.f32"}),
        );
        let scene = load_scene(path).unwrap();
        assert_eq!(scene.cube.value(0, 1, 0), 2.0);
        assert!(scene.ground_truth.is_none());
    }

    #[test]
    fn ground_truth_decodes() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("d.f32"), f32_bytes(&[0.0; 4])).unwrap();
        let gt: Vec<u8> = [0u16, 1, 1, 2].iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.path().join("g.u16"), gt).unwrap();
        let path = write_header(
            dir.path(),
            &serde_json::json!({"version":"hscn-1","rows":2,"cols":2,"channels":1,"dtype":"f32le",
                                "data_file":"d.f32","gt_file":"g.u16","gt_dtype":"u16le"}),
        );
        let gt = load_scene(path).unwrap().ground_truth.unwrap();
        assert_eq!(gt.count_class(1), 2);
        assert_eq!(gt[PixelCoord::new(1, 1)], 2);
    }

    #[test]
    fn size_mismatch_and_version_errors() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("d.f32"), f32_bytes(&[1.0, 2.0, 3.0])).unwrap();
        let path = write_header(
            dir.path(),
            &serde_json::json!({"version":"hscn-1","rows":2,"cols":2,"channels":1,"dtype":"f32le","data_file":"d.f32"}),
        );
        let err = load_scene(&path).unwrap_err();
        assert!(err.to_string().contains("size mismatch"), "{err}");

        let path = write_header(
            dir.path(),
            &serde_json::json!({"version":"hscn-2","rows":1,"cols":3,"channels":1,"dtype":"f32le","data_file":"d.f32"}),
        );
        let err = load_scene(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported scene version"), "{err}");
    }

    #[test]
    fn save_then_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..24).map(|i| (i as f32 * 0.37 - 3.1) as f64).collect();
        let scene = Scene {
            cube: HsiCube::new(2, 3, 4, data).unwrap(),
            ground_truth: Some(ClassGrid::from_vec(2, 3, vec![0, 1, 2, 3, 65535, 1]).unwrap()),
            band_names: Some((0..4).map(|b| format!("b{b}")).collect()),
        };
        let path = dir.path().join("out.json");
        save_scene(&scene, &path).unwrap();
        let back = load_scene(&path).unwrap();
        assert_eq!(back.cube, scene.cube);
        assert_eq!(back.ground_truth, scene.ground_truth);
        assert_eq!(back.band_names, scene.band_names);
        let bytes_a = fs::read(dir.path().join("out.f32")).unwrap();
        save_scene(&back, dir.path().join("again.json")).unwrap();
        assert_eq!(bytes_a, fs::read(dir.path().join("again.f32")).unwrap());
    }

    #[test]
    fn convert_bsq_reorders_to_pixel_major() {
        // 1x2 image with 2 bands, BSQ: band0=[1,2], band1=[3,4].
        let bytes: Vec<u8> = [1u16, 2, 3, 4].iter().flat_map(|v| v.to_le_bytes()).collect();
        let shape = RawShape {
            rows: 1,
            cols: 2,
            channels: 2,
            dtype: RawDtype::U16le,
            interleave: Interleave::Bsq,
            header_bytes: 0,
            band_names: None,
        };
        let scene = convert_raw(&bytes, &shape, Some((&[0, 7], RawDtype::U8))).unwrap();
        assert_eq!(scene.cube.data(), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(scene.ground_truth.unwrap().as_slice(), &[0, 7]);
        assert!(convert_raw(&bytes[..6], &shape, None).is_err());
    }
}
