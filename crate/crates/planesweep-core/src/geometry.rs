//! Pinhole cameras, SE(3) poses and inverse-depth image warping.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid, Image};
use crate::math;

/// Points closer than this (meters, after transformation) are treated as
/// behind the camera when warping.
pub const MIN_WARP_DEPTH: f64 = 1e-6;
/// Sample coordinates closer than this to an integer are treated as lying
/// on it, so round-off in an identity warp does not push border pixels out
/// of bounds or blend in a neighbor.
pub const SNAP_TOLERANCE: f64 = 1e-9;

/// Pinhole intrinsics in pixels. Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::param("fx/fy", "focal lengths must be positive"));
        }
        if !(cx > 0.0 && cx < width as f64) {
            return Err(Error::param("cx", format!("{cx} not inside (0, {width})")));
        }
        if !(cy > 0.0 && cy < height as f64) {
            return Err(Error::param("cy", format!("{cy} not inside (0, {height})")));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Intrinsics of the 2×2 area-averaged image.
    pub fn downsampled(&self) -> Self {
        CameraIntrinsics {
            fx: self.fx * 0.5,
            fy: self.fy * 0.5,
            cx: (self.cx - 0.5) * 0.5,
            cy: (self.cy - 0.5) * 0.5,
            width: (self.width / 2).max(1),
            height: (self.height / 2).max(1),
        }
    }

    /// Unit-depth ray `((u − cx)/fx, (v − cy)/fy, 1)`.
    #[inline]
    pub fn ray(&self, u: f64, v: f64) -> [f64; 3] {
        [(u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0]
    }
}

/// Rigid transform `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

    pub fn identity() -> Self {
        Pose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Validating constructor: `RᵀR = I` within 1e-9 and `det R = +1`.
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let pose = Pose { rotation, translation };
        let r = &pose.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if math::abs(dot - want) > Self::ORTHONORMAL_TOLERANCE {
                    return Err(Error::param("rotation", "not orthonormal"));
                }
            }
        }
        if pose.determinant() <= 0.0 {
            return Err(Error::param("rotation", "determinant is not +1"));
        }
        if translation.iter().any(|t| !t.is_finite()) {
            return Err(Error::param("translation", "non-finite component"));
        }
        Ok(pose)
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Pose {
            translation: t,
            ..Pose::identity()
        }
    }

    /// Rodrigues rotation about `axis` (need not be normalized) followed by `t`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64, t: [f64; 3]) -> Self {
        let n = math::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
        if n == 0.0 || angle == 0.0 {
            return Pose::from_translation(t);
        }
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = (math::sin(angle), math::cos(angle));
        let v = 1.0 - c;
        Pose {
            rotation: [
                [c + x * x * v, x * y * v - z * s, x * z * v + y * s],
                [y * x * v + z * s, c + y * y * v, y * z * v - x * s],
                [z * x * v - y * s, z * y * v + x * s, c + z * z * v],
            ],
            translation: t,
        }
    }

    /// Row-major `[R | t]`, the 12-number layout of KITTI odometry pose files.
    pub fn to_rows(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2],
        ]
    }

    /// Inverse of [`Pose::to_rows`]. Re-orthonormalization is not attempted,
    /// so rounded inputs must still pass the orthonormality check.
    pub fn from_rows(m: &[f64; 12]) -> Result<Self> {
        Pose::new(
            [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]],
            [m[3], m[7], m[11]],
        )
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let a = &self.rotation;
        let b = &other.rotation;
        let mut rotation = [[0.0; 3]; 3];
        for (i, row) in rotation.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        let rt = self.rotate(other.translation);
        Pose {
            rotation,
            translation: [
                rt[0] + self.translation[0],
                rt[1] + self.translation[1],
                rt[2] + self.translation[2],
            ],
        }
    }

    pub fn inverse(&self) -> Pose {
        let r = &self.rotation;
        let rotation = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = &self.translation;
        let translation = [
            -(rotation[0][0] * t[0] + rotation[0][1] * t[1] + rotation[0][2] * t[2]),
            -(rotation[1][0] * t[0] + rotation[1][1] * t[1] + rotation[1][2] * t[2]),
            -(rotation[2][0] * t[0] + rotation[2][1] * t[1] + rotation[2][2] * t[2]),
        ];
        Pose { rotation, translation }
    }

    #[inline]
    pub fn rotate(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
        ]
    }

    #[inline]
    pub fn transform(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotate(p);
        [
            q[0] + self.translation[0],
            q[1] + self.translation[1],
            q[2] + self.translation[2],
        ]
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// Camera center in world coordinates for a world-to-camera pose.
    pub fn camera_center(&self) -> [f64; 3] {
        self.inverse().translation
    }

    /// Largest absolute element-wise difference of the 3×4 matrices.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        self.to_rows()
            .iter()
            .zip(other.to_rows().iter())
            .map(|(a, b)| math::abs(a - b))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameRole {
    Keyframe,
    Temporal,
    StaticStereo,
}

/// An image with its camera. `pose` is world-to-camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Position in the capture sequence; used as the deterministic ordering key.
    pub index: usize,
    pub image: Image,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub role: FrameRole,
}

impl Frame {
    pub fn new(index: usize, image: Image, intrinsics: CameraIntrinsics, pose: Pose, role: FrameRole) -> Result<Self> {
        image.ensure_dims("frame image vs intrinsics", intrinsics.dims())?;
        Ok(Frame {
            index,
            image,
            intrinsics,
            pose,
            role,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    pub fn with_role(mut self, role: FrameRole) -> Self {
        self.role = role;
        self
    }

    /// One pyramid level down: 2×2 area-averaged image, matching intrinsics.
    pub fn downsampled(&self) -> Frame {
        Frame {
            index: self.index,
            image: self.image.downsample2(),
            intrinsics: self.intrinsics.downsampled(),
            pose: self.pose,
            role: self.role,
        }
    }
}

/// Pose mapping keyframe camera coordinates into `src` camera coordinates.
pub fn relative_pose(src: &Frame, key: &Frame) -> Pose {
    src.pose.compose(&key.pose.inverse())
}

/// Projects a camera-space point to `(pixel, depth)`.
pub fn project(intr: &CameraIntrinsics, p: [f64; 3]) -> Result<([f64; 2], f64)> {
    if !(p[2] > 0.0) {
        return Err(Error::BehindCamera(p[2]));
    }
    Ok(([intr.fx * p[0] / p[2] + intr.cx, intr.fy * p[1] / p[2] + intr.cy], p[2]))
}

/// Lifts a pixel at the given inverse depth into camera space.
pub fn backproject(intr: &CameraIntrinsics, pixel: [f64; 2], inv_depth: f64) -> Result<[f64; 3]> {
    if !(inv_depth > 0.0) {
        return Err(Error::Domain(format!(
            "inverse depth must be positive, got {inv_depth}"
        )));
    }
    let r = intr.ray(pixel[0], pixel[1]);
    Ok([r[0] / inv_depth, r[1] / inv_depth, 1.0 / inv_depth])
}

/// Result of a bilinear lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    /// ∂value/∂u and ∂value/∂v of the interpolant inside the current cell.
    pub du: f64,
    pub dv: f64,
    pub valid: bool,
}

impl Sample {
    const INVALID: Sample = Sample {
        value: 0.0,
        du: 0.0,
        dv: 0.0,
        valid: false,
    };
}

// Cell corner indices and weights; None when a neighbor with non-zero
// weight falls outside `[0, n-1]`.
#[inline]
fn cell(coord: f64, n: usize) -> Option<(usize, usize, f64)> {
    if !coord.is_finite() {
        return None;
    }
    let nearest = math::round(coord);
    let coord = if math::abs(coord - nearest) < SNAP_TOLERANCE {
        nearest
    } else {
        coord
    };
    let f = math::floor(coord);
    if f < 0.0 || f > (n - 1) as f64 {
        return None;
    }
    let i0 = f as usize;
    let a = coord - f;
    if a == 0.0 {
        return Some((i0, i0, 0.0));
    }
    if i0 + 1 > n - 1 {
        return None;
    }
    Some((i0, i0 + 1, a))
}

/// Bilinear interpolation at continuous pixel coordinates `(u, v)`.
///
/// Invalid whenever a neighbor carrying non-zero weight lies outside the
/// plane; out-of-bounds samples are never clamped.
pub fn bilinear_sample(plane: &Grid<f64>, u: f64, v: f64) -> Sample {
    let (Some((x0, x1, a)), Some((y0, y1, b))) = (cell(u, plane.width()), cell(v, plane.height())) else {
        return Sample::INVALID;
    };
    let p00 = *plane.get(x0, y0);
    let p10 = *plane.get(x1, y0);
    let p01 = *plane.get(x0, y1);
    let p11 = *plane.get(x1, y1);
    let top = p00 + a * (p10 - p00);
    let bottom = p01 + a * (p11 - p01);
    Sample {
        value: top + b * (bottom - top),
        du: (1.0 - b) * (p10 - p00) + b * (p11 - p01),
        dv: bottom - top,
        valid: true,
    }
}

/// Where a keyframe pixel lands in a source camera for a given inverse depth,
/// together with the derivative of that location with respect to the inverse
/// depth. `None` when the point ends up behind the source camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpPoint {
    pub u: f64,
    pub v: f64,
    pub du_dd: f64,
    pub dv_dd: f64,
}

#[inline]
pub fn warp_point(
    key_intr: &CameraIntrinsics,
    src_intr: &CameraIntrinsics,
    key_to_src: &Pose,
    u: f64,
    v: f64,
    inv_depth: f64,
) -> Option<WarpPoint> {
    if !(inv_depth > 0.0) {
        return None;
    }
    let r = key_intr.ray(u, v);
    let rr = key_to_src.rotate(r);
    let t = key_to_src.translation;
    let q = [
        rr[0] / inv_depth + t[0],
        rr[1] / inv_depth + t[1],
        rr[2] / inv_depth + t[2],
    ];
    if !(q[2] > MIN_WARP_DEPTH) {
        return None;
    }
    let k = -1.0 / (inv_depth * inv_depth);
    let dq = [rr[0] * k, rr[1] * k, rr[2] * k];
    let iz = 1.0 / q[2];
    Some(WarpPoint {
        u: src_intr.fx * q[0] * iz + src_intr.cx,
        v: src_intr.fy * q[1] * iz + src_intr.cy,
        du_dd: src_intr.fx * (dq[0] * q[2] - q[0] * dq[2]) * iz * iz,
        dv_dd: src_intr.fy * (dq[1] * q[2] - q[1] * dq[2]) * iz * iz,
    })
}

/// Inverse depth used for warping: one plane hypothesis or a dense map.
#[derive(Debug, Clone, Copy)]
pub enum InverseDepth<'a> {
    Constant(f64),
    PerPixel(&'a Grid<f64>),
}

impl InverseDepth<'_> {
    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        match self {
            InverseDepth::Constant(d) => *d,
            InverseDepth::PerPixel(g) => *g.get(x, y),
        }
    }
}

/// A source image resampled onto the keyframe grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    /// Warped intensities; 0 at invalid pixels.
    pub image: Image,
    pub valid: Grid<bool>,
}

/// Samples `src` at every keyframe pixel lifted with `inv_depth`.
pub fn warp_to_keyframe(src: &Frame, key: &Frame, inv_depth: InverseDepth<'_>) -> Result<Warped> {
    let (w, h) = key.dims();
    if let InverseDepth::PerPixel(g) = inv_depth {
        g.ensure_dims("inverse depth map vs keyframe", (w, h))?;
    }
    let rel = relative_pose(src, key);
    let channels = src.image.channels();
    let mut planes: Vec<Grid<f64>> = (0..channels).map(|_| Grid::new(w, h, 0.0)).collect();
    let mut valid = Grid::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let d = inv_depth.at(x, y);
            let Some(p) = warp_point(&key.intrinsics, &src.intrinsics, &rel, x as f64, y as f64, d) else {
                continue;
            };
            let mut ok = true;
            for (c, plane) in planes.iter_mut().enumerate() {
                let s = bilinear_sample(src.image.plane(c), p.u, p.v);
                if !s.valid {
                    ok = false;
                    break;
                }
                plane.set(x, y, s.value);
            }
            if ok {
                valid.set(x, y, true);
            } else {
                for plane in planes.iter_mut() {
                    plane.set(x, y, 0.0);
                }
            }
        }
    }
    Ok(Warped {
        image: Image::from_planes(planes)?,
        valid,
    })
}
