//! Winner-take-all depth extraction, interpolation factors and point clouds.

use alloc::vec::Vec;

use crate::costvolume::{CostVolume, DepthRange};
use crate::error::{Error, Result};
use crate::geometry::{backproject, Frame};
use crate::grid::Grid;

/// Dense inverse depth (1/m) with a per-pixel confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseDepthMap {
    pub values: Grid<f64>,
    pub confidence: Grid<f64>,
    pub range: DepthRange,
}

impl InverseDepthMap {
    /// Map with full confidence; values must lie inside `range`.
    pub fn new(values: Grid<f64>, range: DepthRange) -> Result<Self> {
        if let Some(v) = values.as_slice().iter().find(|v| !range.contains(**v)) {
            return Err(Error::Domain(alloc::format!(
                "inverse depth {v} outside [{}, {}]",
                range.d_min,
                range.d_max
            )));
        }
        let (w, h) = values.dims();
        Ok(InverseDepthMap {
            values,
            confidence: Grid::new(w, h, 1.0),
            range,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }
}

/// Depth expressed as a fraction of the way from `d_min` to `d_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationFactorMap {
    pub factors: Grid<f64>,
    pub range: DepthRange,
}

pub fn factor_to_inv_depth(f: &InterpolationFactorMap) -> Result<InverseDepthMap> {
    if let Some(v) = f.factors.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(alloc::format!("interpolation factor {v} outside [0, 1]")));
    }
    let r = f.range;
    let values = f.factors.map(|&t| {
        if t == 1.0 {
            r.d_max
        } else {
            r.d_min + t * (r.d_max - r.d_min)
        }
    });
    let (w, h) = values.dims();
    Ok(InverseDepthMap {
        values,
        confidence: Grid::new(w, h, 1.0),
        range: r,
    })
}

pub fn inv_depth_to_factor(d: &InverseDepthMap) -> Result<InterpolationFactorMap> {
    let r = d.range;
    if let Some(v) = d.values.as_slice().iter().find(|v| !r.contains(**v)) {
        return Err(Error::Domain(alloc::format!("inverse depth {v} outside range")));
    }
    Ok(InterpolationFactorMap {
        factors: d.values.map(|&v| ((v - r.d_min) / (r.d_max - r.d_min)).clamp(0.0, 1.0)),
        range: r,
    })
}

/// Offset of the vertex of the parabola through three equally spaced samples,
/// in units of the spacing, limited to the bracket `[-0.5, 0.5]`.
pub fn parabola_offset(left: f64, center: f64, right: f64) -> f64 {
    let curvature = left - 2.0 * center + right;
    if !(curvature < 0.0) {
        return 0.0;
    }
    (0.5 * (left - right) / curvature).clamp(-0.5, 0.5)
}

/// Per-pixel argmax over depth steps with parabolic sub-step refinement.
///
/// Confidence is `(max score + 1) / 2`; pixels without any contributing cell
/// get confidence 0 and value `d_min`. Refinement falls back to the discrete
/// step when a neighbor is missing or invalid.
pub fn wta_depth(volume: &CostVolume) -> InverseDepthMap {
    let (w, h) = volume.dims();
    let range = *volume.range();
    let step = range.step_size();
    let mut values = Grid::new(w, h, range.d_min);
    let mut confidence = Grid::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let Some(i) = volume.argmax(x, y) else {
                continue;
            };
            let peak = volume.score(x, y, i);
            let mut d = range.step(i);
            if i > 0
                && i + 1 < range.steps
                && volume.valid_count(x, y, i - 1) > 0
                && volume.valid_count(x, y, i + 1) > 0
            {
                let off = parabola_offset(volume.score(x, y, i - 1), peak, volume.score(x, y, i + 1));
                d = (d + off * step).clamp(range.d_min, range.d_max);
            }
            values.set(x, y, d);
            confidence.set(x, y, (peak + 1.0) * 0.5);
        }
    }
    InverseDepthMap {
        values,
        confidence,
        range,
    }
}

/// Discrete argmax step per pixel (None where nothing contributed).
pub fn argmax_steps(volume: &CostVolume) -> Grid<Option<usize>> {
    let (w, h) = volume.dims();
    Grid::from_fn(w, h, |x, y| volume.argmax(x, y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    /// World coordinates in meters.
    pub position: [f64; 3],
    pub color: [u8; 3],
}

/// Backprojects confident pixels of a keyframe depth map into world space.
pub fn depth_to_pointcloud(depth: &InverseDepthMap, key: &Frame, min_confidence: f64) -> Result<Vec<CloudPoint>> {
    depth.values.ensure_dims("depth map vs keyframe", key.dims())?;
    let cam_to_world = key.pose.inverse();
    let (w, h) = depth.dims();
    let img = &key.image;
    let mut cloud = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if *depth.confidence.get(x, y) < min_confidence {
                continue;
            }
            let p = backproject(&key.intrinsics, [x as f64, y as f64], *depth.values.get(x, y))?;
            let channel = |c: usize| {
                let v = img.get(x, y, c.min(img.channels() - 1));
                (v * 255.0 + 0.5) as u8
            };
            cloud.push(CloudPoint {
                position: cam_to_world.transform(p),
                color: [channel(0), channel(1), channel(2)],
            });
        }
    }
    Ok(cloud)
}
