use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{coords, linear_index, Mask, Volume, VolumeError};

/// Inclusive voxel bounds per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl BBox {
    pub fn extent(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.max[a] - self.min[a] + 1)
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    /// Grows by `margin` on every side, clamped to `[0, dims - 1]`.
    pub fn dilate(&self, margin: usize, dims: [usize; 3]) -> BBox {
        BBox {
            min: [0, 1, 2].map(|a| self.min[a].saturating_sub(margin)),
            max: [0, 1, 2].map(|a| (self.max[a] + margin).min(dims[a] - 1)),
        }
    }
}

/// Tightest box around all voxels carrying `label`, or `None` if the label is unused.
pub fn mask_bounding_box(m: &Mask, label: u32) -> Option<BBox> {
    let dims = m.dims();
    let mut bbox: Option<BBox> = None;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if m.get(x, y, z) != label {
                    continue;
                }
                let p = [x, y, z];
                match bbox.as_mut() {
                    None => bbox = Some(BBox { min: p, max: p }),
                    Some(b) => {
                        for a in 0..3 {
                            b.min[a] = b.min[a].min(p[a]);
                            b.max[a] = b.max[a].max(p[a]);
                        }
                    }
                }
            }
        }
    }
    bbox
}

/// Keeps the largest 6-connected component of `label`.
///
/// Components are discovered in linear-index order, so on a size tie the one
/// containing the smallest linear index wins.
pub fn largest_component(m: &Mask, label: u32) -> Result<Mask, VolumeError> {
    let dims = m.dims();
    let labels = m.labels();
    let mut seen = vec![false; labels.len()];
    let mut best: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..labels.len() {
        if labels[start] != label || seen[start] {
            continue;
        }
        let mut component = Vec::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            component.push(i);
            let [x, y, z] = coords(dims, i);
            let mut visit = |nx: usize, ny: usize, nz: usize| {
                let j = linear_index(dims, nx, ny, nz);
                if labels[j] == label && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(x - 1, y, z);
            }
            if x + 1 < dims[0] {
                visit(x + 1, y, z);
            }
            if y > 0 {
                visit(x, y - 1, z);
            }
            if y + 1 < dims[1] {
                visit(x, y + 1, z);
            }
            if z > 0 {
                visit(x, y, z - 1);
            }
            if z + 1 < dims[2] {
                visit(x, y, z + 1);
            }
        }
        if component.len() > best.len() {
            best = component;
        }
    }

    if best.is_empty() {
        return Err(VolumeError::LabelAbsent(label));
    }
    let mut out = vec![0u32; labels.len()];
    for i in best {
        out[i] = label;
    }
    Mask::new(dims, out)
}

/// Crops `v` to the box around `label` grown by `margin` voxels.
pub fn extract_roi(v: &Volume, m: &Mask, label: u32, margin: usize) -> Result<(Volume, BBox), VolumeError> {
    m.ensure_matches(v)?;
    let bbox = mask_bounding_box(m, label).ok_or(VolumeError::LabelAbsent(label))?;
    let crop = bbox.dilate(margin, v.dims());
    let extent = crop.extent();
    let mut data = Vec::with_capacity(extent[0] * extent[1] * extent[2]);
    for z in crop.min[2]..=crop.max[2] {
        for y in crop.min[1]..=crop.max[1] {
            for x in crop.min[0]..=crop.max[0] {
                data.push(v.get(x, y, z));
            }
        }
    }
    let roi = Volume::new(extent, v.spacing(), v.datatype(), data)?;
    Ok((roi, crop))
}

/// Three consecutive axial indices centered on the label's z-extent midpoint.
///
/// The center is `floor((zmin + zmax) / 2)`; near the volume boundary the
/// window is shifted just enough to stay inside `[0, depth - 1]`.
pub fn select_key_slices(m: &Mask, label: u32, depth: usize) -> Result<[usize; 3], VolumeError> {
    if depth < 3 {
        return Err(VolumeError::TooShallow(depth));
    }
    let bbox = mask_bounding_box(m, label).ok_or(VolumeError::LabelAbsent(label))?;
    let center = (bbox.min[2] + bbox.max[2]) / 2;
    let first = center.saturating_sub(1).min(depth - 3);
    Ok([first, first + 1, first + 2])
}
