//! On-disk formats.
//!
//! Arrays are raw little-endian `float32` files (`name.raw`) with a JSON
//! sidecar next to them (`name.json`). Matrices, motion, configs and
//! reports are plain JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ProjectionMatrix, CONVENTION};
use crate::volume::{ProjectionStack, StackState, Volume, VolumeGrid};

const DTYPE: &str = "float32_le";

fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

fn write_f32(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 * data.len());
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != 4 * expected {
        return Err(Error::format(
            "dims",
            format!("{} holds {} bytes, sidecar implies {}", path.display(), bytes.len(), 4 * expected),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn check_dtype(dtype: &str) -> Result<()> {
    if dtype != DTYPE {
        return Err(Error::format("dtype", format!("expected {DTYPE:?}, found {dtype:?}")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct VolumeSidecar {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    origin_mm: [f64; 3],
    dtype: String,
}

/// Writes `raw` and its sidecar; `x` runs fastest in the raw file.
pub fn write_volume(raw: &Path, vol: &Volume) -> Result<()> {
    write_f32(raw, &vol.data)?;
    write_json(
        &sidecar_path(raw),
        &VolumeSidecar {
            dims: vol.grid.dims,
            spacing_mm: vol.grid.spacing_mm,
            origin_mm: vol.grid.origin_mm,
            dtype: DTYPE.into(),
        },
    )
}

pub fn read_volume(raw: &Path) -> Result<Volume> {
    let side: VolumeSidecar = read_json(&sidecar_path(raw))?;
    check_dtype(&side.dtype)?;
    let grid = VolumeGrid {
        dims: side.dims,
        spacing_mm: side.spacing_mm,
        origin_mm: side.origin_mm,
    };
    grid.validate().map_err(|e| Error::format("dims", e.to_string()))?;
    let data = read_f32(raw, grid.len())?;
    Volume::from_data(grid, data)
}

#[derive(Serialize, Deserialize)]
struct StackSidecar {
    n_views: usize,
    rows: usize,
    cols: usize,
    pixel_spacing_mm: f64,
    state: StackState,
    dtype: String,
}

/// Writes a projection stack, view-major then row-major.
pub fn write_stack(raw: &Path, stack: &ProjectionStack) -> Result<()> {
    write_f32(raw, &stack.data)?;
    write_json(
        &sidecar_path(raw),
        &StackSidecar {
            n_views: stack.n_views,
            rows: stack.rows,
            cols: stack.cols,
            pixel_spacing_mm: stack.pixel_spacing_mm,
            state: stack.state,
            dtype: DTYPE.into(),
        },
    )
}

pub fn read_stack(raw: &Path) -> Result<ProjectionStack> {
    let s: StackSidecar = read_json(&sidecar_path(raw))?;
    check_dtype(&s.dtype)?;
    let data = read_f32(raw, s.n_views * s.rows * s.cols)?;
    ProjectionStack::from_data(s.n_views, s.rows, s.cols, s.pixel_spacing_mm, s.state, data)
        .map_err(|e| Error::format("pixel_spacing_mm", e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatricesHeader {
    pub units: String,
    pub detector_rows: usize,
    pub detector_cols: usize,
    pub pixel_spacing_mm: f64,
    pub convention: String,
}

impl MatricesHeader {
    pub fn new(detector_rows: usize, detector_cols: usize, pixel_spacing_mm: f64) -> Self {
        Self {
            units: "pixel".into(),
            detector_rows,
            detector_cols,
            pixel_spacing_mm,
            convention: CONVENTION.into(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MatricesFile {
    header: MatricesHeader,
    matrices: Vec<Vec<f64>>,
}

/// One row-major 12-entry array per view.
pub fn write_matrices(path: &Path, header: &MatricesHeader, matrices: &[ProjectionMatrix]) -> Result<()> {
    write_json(
        path,
        &MatricesFile {
            header: header.clone(),
            matrices: matrices.iter().map(|m| m.to_row_major().to_vec()).collect(),
        },
    )
}

pub fn read_matrices(path: &Path) -> Result<(MatricesHeader, Vec<ProjectionMatrix>)> {
    let f: MatricesFile = read_json(path)?;
    let mats = f
        .matrices
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let entries: [f64; 12] = m.as_slice().try_into().map_err(|_| {
                Error::format("matrices", format!("view {j} has {} entries, expected 12", m.len()))
            })?;
            if entries.iter().any(|v| !v.is_finite()) {
                return Err(Error::format("matrices", format!("view {j} has non-finite entries")));
            }
            Ok(ProjectionMatrix::from_row_major(&entries))
        })
        .collect::<Result<_>>()?;
    Ok((f.header, mats))
}

/// Writes `header_line` followed by one line per row.
pub fn write_csv(path: &Path, header_line: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut s = String::from(header_line);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_circular_trajectory, ScanGeometry};
    use crate::motion::{sample_random_motion, SplineMotion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn volume_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grid = VolumeGrid::centered([8, 8, 8], 1.25);
        let data = (0..512).map(|_| rng.random::<f32>() as f64).collect();
        let v = Volume::from_data(grid, data).unwrap();
        let p = dir.path().join("v.raw");
        write_volume(&p, &v).unwrap();
        assert_eq!(read_volume(&p).unwrap(), v);
    }

    #[test]
    fn stack_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let data = (0..2 * 3 * 4).map(|k| k as f64 * 0.5).collect();
        let s = ProjectionStack::from_data(2, 3, 4, 0.64, StackState::CosineWeighted, data).unwrap();
        let p = dir.path().join("s.raw");
        write_stack(&p, &s).unwrap();
        assert_eq!(read_stack(&p).unwrap(), s);
    }

    #[test]
    fn sidecar_disagreeing_with_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::zeros(VolumeGrid::centered([4, 4, 4], 1.0));
        let p = dir.path().join("v.raw");
        write_volume(&p, &v).unwrap();
        fs::write(&p, vec![0u8; 4 * 63]).unwrap();
        match read_volume(&p) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "dims"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn matrices_roundtrip_and_shape_check() {
        let dir = tempfile::tempdir().unwrap();
        let g = ScanGeometry { n_views: 5, ..ScanGeometry::desk() };
        let m = build_circular_trajectory(&g).unwrap();
        let h = MatricesHeader::new(g.detector_rows, g.detector_cols, g.pixel_spacing_mm);
        let p = dir.path().join("m.json");
        write_matrices(&p, &h, &m).unwrap();
        let (h2, m2) = read_matrices(&p).unwrap();
        assert_eq!(h2, h);
        assert_eq!(m2, m);

        let mut bad: serde_json::Value = read_json(&p).unwrap();
        bad["matrices"][2].as_array_mut().unwrap().pop();
        write_json(&p, &bad).unwrap();
        match read_matrices(&p) {
            Err(Error::Format { field, message }) => {
                assert_eq!(field, "matrices");
                assert!(message.contains("11"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn motion_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let x = sample_random_motion(2.0, 1.0, 6, 50, 3).unwrap();
        let p = dir.path().join("x.json");
        write_json(&p, &x).unwrap();
        let y: SplineMotion = read_json(&p).unwrap();
        assert_eq!(x, y);
    }
}
