//! Volumes, masks, and the voxel operations the tools rely on.
//!
//! A [`Volume`] is a single-channel scalar grid stored x-fastest. CT volumes
//! carry Hounsfield units. A [`Mask`] is a label grid with the same layout.

mod mask;
mod nifti;
mod render;

pub use mask::{extract_roi, largest_component, mask_bounding_box, select_key_slices, BBox};
pub use nifti::{is_gzip, parse_nifti, write_nifti, write_nifti_gz, NiftiError};
pub use render::{render_slice, Image8, Window};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Storage type of voxel values on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    Uint8,
    Int16,
    Float32,
}

impl Datatype {
    /// Whether `value` is stored without loss by this type.
    pub fn represents(self, value: f32) -> bool {
        match self {
            Datatype::Uint8 => value.fract() == 0.0 && (0.0..=255.0).contains(&value),
            Datatype::Int16 => {
                value.fract() == 0.0 && (i16::MIN as f32..=i16::MAX as f32).contains(&value)
            }
            Datatype::Float32 => true,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum VolumeError {
    #[error("dimensions must all be at least 1, got {0:?}")]
    BadDims([usize; 3]),
    #[error("spacing must be positive and finite, got {0:?}")]
    BadSpacing([f32; 3]),
    #[error("expected {expected} voxels, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("voxel {index} value {value} is not representable as {datatype:?}")]
    Unrepresentable {
        index: usize,
        value: f32,
        datatype: Datatype,
    },
    #[error("label {0} not present in mask")]
    LabelAbsent(u32),
    #[error("mask dims {mask:?} do not match volume dims {volume:?}")]
    DimsMismatch { mask: [usize; 3], volume: [usize; 3] },
    #[error("slice index {z} out of bounds for depth {depth}")]
    SliceOutOfBounds { z: usize, depth: usize },
    #[error("at least 3 axial slices are required, depth is {0}")]
    TooShallow(usize),
    #[error("window width must be positive, got {0}")]
    BadWindow(f32),
    #[error("mask value {value} at voxel {index} is not a non-negative integer label")]
    BadLabel { index: usize, value: f32 },
}

#[inline]
pub(crate) fn linear_index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

#[inline]
pub(crate) fn coords(dims: [usize; 3], index: usize) -> [usize; 3] {
    let x = index % dims[0];
    let rest = index / dims[0];
    [x, rest % dims[1], rest / dims[1]]
}

fn check_dims(dims: [usize; 3], len: usize) -> Result<(), VolumeError> {
    if dims.iter().any(|&d| d == 0) {
        return Err(VolumeError::BadDims(dims));
    }
    let expected = dims[0] * dims[1] * dims[2];
    if expected != len {
        return Err(VolumeError::LengthMismatch {
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// A 3D scalar image (width, height, depth), x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f32; 3],
    datatype: Datatype,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        spacing: [f32; 3],
        datatype: Datatype,
        data: Vec<f32>,
    ) -> Result<Self, VolumeError> {
        check_dims(dims, data.len())?;
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !datatype.represents(**v))
        {
            return Err(VolumeError::Unrepresentable {
                index,
                value,
                datatype,
            });
        }
        Ok(Self {
            dims,
            spacing,
            datatype,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn datatype(&self) -> Datatype {
        self.datatype
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn depth(&self) -> usize {
        self.dims[2]
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[linear_index(self.dims, x, y, z)]
    }
}

/// Per-voxel integer labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    labels: Vec<u32>,
}

impl Mask {
    pub fn new(dims: [usize; 3], labels: Vec<u32>) -> Result<Self, VolumeError> {
        check_dims(dims, labels.len())?;
        Ok(Self { dims, labels })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            labels: vec![0; dims[0] * dims[1] * dims[2]],
        }
    }

    /// Interprets a parsed volume as a label map.
    pub fn from_volume(v: &Volume) -> Result<Self, VolumeError> {
        let labels = v
            .data()
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                if value.fract() == 0.0 && value >= 0.0 && value <= u32::MAX as f32 {
                    Ok(value as u32)
                } else {
                    Err(VolumeError::BadLabel { index, value })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            dims: v.dims(),
            labels,
        })
    }

    /// Converts to a uint8 (or int16 when labels exceed 255) volume for writing.
    pub fn to_volume(&self, spacing: [f32; 3]) -> Result<Volume, VolumeError> {
        let max = self.labels.iter().copied().max().unwrap_or(0);
        let datatype = if max <= 255 {
            Datatype::Uint8
        } else if max <= i16::MAX as u32 {
            Datatype::Int16
        } else {
            Datatype::Float32
        };
        Volume::new(
            self.dims,
            spacing,
            datatype,
            self.labels.iter().map(|&l| l as f32).collect(),
        )
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.labels[linear_index(self.dims, x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, label: u32) {
        let i = linear_index(self.dims, x, y, z);
        self.labels[i] = label;
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.iter().all(|&l| l == 0)
    }

    /// Mask keeping only `label` voxels, all others set to 0.
    pub fn select(&self, label: u32) -> Mask {
        Mask {
            dims: self.dims,
            labels: self
                .labels
                .iter()
                .map(|&l| if l == label { label } else { 0 })
                .collect(),
        }
    }

    /// Mask with every non-zero voxel set to `label`.
    pub fn binarize(&self, label: u32) -> Mask {
        Mask {
            dims: self.dims,
            labels: self
                .labels
                .iter()
                .map(|&l| if l != 0 { label } else { 0 })
                .collect(),
        }
    }

    pub fn ensure_matches(&self, v: &Volume) -> Result<(), VolumeError> {
        if self.dims != v.dims() {
            return Err(VolumeError::DimsMismatch {
                mask: self.dims,
                volume: v.dims(),
            });
        }
        Ok(())
    }
}
