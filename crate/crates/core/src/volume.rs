//! Volume and projection-stack containers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placement of a voxel grid in world coordinates.
///
/// `origin_mm` is the world position of the center of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrid {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

impl VolumeGrid {
    /// Isotropic grid centered on the isocenter.
    pub fn centered(dims: [usize; 3], spacing_mm: f64) -> Self {
        let origin_mm = std::array::from_fn(|a| -(dims[a] as f64 - 1.0) / 2.0 * spacing_mm);
        Self {
            dims,
            spacing_mm: [spacing_mm; 3],
            origin_mm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Argument(format!("volume dims must be >= 1, got {:?}", self.dims)));
        }
        if self.spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Argument(format!(
                "voxel spacing must be positive, got {:?}",
                self.spacing_mm
            )));
        }
        if self.origin_mm.iter().any(|o| !o.is_finite()) {
            return Err(Error::Argument("volume origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index; `x` runs fastest.
    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.dims[1] + iy) * self.dims[0] + ix
    }

    #[inline]
    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> [f64; 3] {
        [
            self.origin_mm[0] + ix as f64 * self.spacing_mm[0],
            self.origin_mm[1] + iy as f64 * self.spacing_mm[1],
            self.origin_mm[2] + iz as f64 * self.spacing_mm[2],
        ]
    }

    /// World position of the grid's geometric center.
    pub fn center_mm(&self) -> [f64; 3] {
        std::array::from_fn(|a| {
            self.origin_mm[a] + (self.dims[a] as f64 - 1.0) / 2.0 * self.spacing_mm[a]
        })
    }
}

/// A scalar field on a [`VolumeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub grid: VolumeGrid,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn zeros(grid: VolumeGrid) -> Self {
        Self {
            data: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn from_data(grid: VolumeGrid, data: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::Argument(format!(
                "volume data has {} values, grid {:?} needs {}",
                data.len(),
                grid.dims,
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.data[self.grid.index(ix, iy, iz)]
    }

    /// Elementwise `slope · v + offset`.
    pub fn affine(&self, slope: f64, offset: f64) -> Self {
        Self {
            grid: self.grid,
            data: self.data.iter().map(|v| slope * v + offset).collect(),
        }
    }

    pub fn check_same_dims(&self, other: &Volume) -> Result<()> {
        if self.grid.dims != other.grid.dims {
            return Err(Error::Argument(format!(
                "volume dims differ: {:?} vs {:?}",
                self.grid.dims, other.grid.dims
            )));
        }
        Ok(())
    }
}

/// Processing state of a projection stack. Transitions only go forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackState {
    Raw,
    CosineWeighted,
    RampFiltered,
}

impl StackState {
    pub fn name(self) -> &'static str {
        match self {
            StackState::Raw => "raw",
            StackState::CosineWeighted => "cosine_weighted",
            StackState::RampFiltered => "ramp_filtered",
        }
    }
}

/// `n_views` detector images, stored view-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack {
    pub n_views: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixel_spacing_mm: f64,
    pub state: StackState,
    pub data: Vec<f64>,
}

impl ProjectionStack {
    pub fn zeros(n_views: usize, rows: usize, cols: usize, pixel_spacing_mm: f64, state: StackState) -> Self {
        Self {
            n_views,
            rows,
            cols,
            pixel_spacing_mm,
            state,
            data: vec![0.0; n_views * rows * cols],
        }
    }

    pub fn from_data(
        n_views: usize,
        rows: usize,
        cols: usize,
        pixel_spacing_mm: f64,
        state: StackState,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != n_views * rows * cols {
            return Err(Error::Argument(format!(
                "stack data has {} values, expected {n_views}×{rows}×{cols}",
                data.len()
            )));
        }
        if !(pixel_spacing_mm.is_finite() && pixel_spacing_mm > 0.0) {
            return Err(Error::Argument("pixel spacing must be positive".into()));
        }
        Ok(Self {
            n_views,
            rows,
            cols,
            pixel_spacing_mm,
            state,
            data,
        })
    }

    pub fn view(&self, j: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.data[j * n..(j + 1) * n]
    }

    pub fn view_len(&self) -> usize {
        self.rows * self.cols
    }

    pub(crate) fn expect_state(&self, expected: StackState) -> Result<()> {
        if self.state != expected {
            return Err(Error::State {
                expected: expected.name(),
                found: self.state.name(),
            });
        }
        Ok(())
    }
}
