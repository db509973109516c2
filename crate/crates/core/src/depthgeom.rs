//! Per-entity depth values, 3D spatial features and the relative-depth bias.

use crate::error::{Error, Result};
use crate::ingest::{BoundingBox, DepthMap};
use crate::numerics::Matrix;

/// Modal gray value of an entity's box; 0 is nearest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DepthValue(pub u8);

/// `[x_tl/W, y_tl/H, x_br/W, y_br/H, dv/255]`.
pub type SpatialFeature5 = [f64; 5];

/// Half-open integer pixel span `(x0, y0, x1, y1)` covered by a box: every
/// pixel whose cell intersects the box.
pub fn pixel_span(bbox: &BoundingBox, width: u32, height: u32) -> (u32, u32, u32, u32) {
    let clamp = |v: f64, hi: u32| v.max(0.0).min(hi as f64) as u32;
    (
        clamp(bbox.x_tl.floor(), width),
        clamp(bbox.y_tl.floor(), height),
        clamp(bbox.x_br.ceil(), width),
        clamp(bbox.y_br.ceil(), height),
    )
}

/// Most frequent gray value under `bbox`; ties go to the smaller value.
pub fn depth_value_of_region(map: &DepthMap, bbox: &BoundingBox) -> Result<DepthValue> {
    bbox.check_within(map.width(), map.height())
        .map_err(|_| Error::DegenerateBox(bbox.as_array()))?;
    let (x0, y0, x1, y1) = pixel_span(bbox, map.width(), map.height());
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::DegenerateBox(bbox.as_array()));
    }
    let mut hist = [0u32; 256];
    for y in y0..y1 {
        for x in x0..x1 {
            hist[map.get(x, y) as usize] += 1;
        }
    }
    let mut best = 0;
    for v in 1..256 {
        if hist[v] > hist[best] {
            best = v;
        }
    }
    Ok(DepthValue(best as u8))
}

pub fn spatial_feature(bbox: &BoundingBox, dv: DepthValue, width: u32, height: u32) -> SpatialFeature5 {
    let (w, h) = (width as f64, height as f64);
    [
        bbox.x_tl / w,
        bbox.y_tl / h,
        bbox.x_br / w,
        bbox.y_br / h,
        dv.0 as f64 / 255.0,
    ]
}

/// `R[i][j] = ln(dv_j / dv_i)` with depth values clamped to `1..=255`.
pub fn relative_depth_matrix(dv: &[DepthValue]) -> Matrix {
    let n = dv.len();
    let logs: Vec<f64> = dv.iter().map(|d| (d.0.max(1) as f64).ln()).collect();
    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                r.set(i, j, logs[j] - logs[i]);
            }
        }
    }
    r
}
