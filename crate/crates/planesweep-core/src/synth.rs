//! Deterministic synthetic scenes with ground truth.
//!
//! Scenes are built from textured rectangles and axis-aligned boxes and are
//! ray-cast at pixel centers with z-buffer visibility. Textures are smooth
//! procedural functions of surface coordinates (a soft checkerboard plus a
//! few random sinusoids), band-limited so that bilinear resampling of a
//! rendered view reproduces another view closely. Objects with a velocity
//! are displaced by `velocity · (frame − keyframe)`.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{backproject, project, relative_pose, CameraIntrinsics, Frame, FrameRole, Pose};
use crate::grid::{Grid, Image};
use crate::losses::SparseDepth;
use crate::mask::InstanceMask;
use crate::math;

const SPARSE_STREAM: u64 = 1;
const TEXTURE_STREAM_BASE: u64 = 1000;
/// Stand-in intensity for rays that hit nothing.
const BACKGROUND: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Rectangle `origin + a·axis_u + b·axis_v`, `a ∈ [0, size[0]]`,
    /// `b ∈ [0, size[1]]`. Axes must be orthonormal.
    Rect {
        origin: [f64; 3],
        axis_u: [f64; 3],
        axis_v: [f64; 3],
        size: [f64; 2],
    },
    /// Axis-aligned box.
    Box { center: [f64; 3], half: [f64; 3] },
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        const TOL: f64 = 1e-9;
        match *self {
            Shape::Rect {
                axis_u, axis_v, size, ..
            } => {
                let unit = |a: [f64; 3]| math::abs(dot(a, a) - 1.0) <= TOL;
                if !(unit(axis_u) && unit(axis_v) && math::abs(dot(axis_u, axis_v)) <= TOL) {
                    return Err(Error::param("rect axes", "must be orthonormal"));
                }
                if !(size[0] > 0.0 && size[1] > 0.0) {
                    return Err(Error::param("rect size", "must be positive"));
                }
            }
            Shape::Box { half, .. } => {
                if !half.iter().all(|&h| h > 0.0) {
                    return Err(Error::param("box half extents", "must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Procedural texture parameters. Lengths are meters on the surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureSpec {
    pub base: f64,
    pub contrast: f64,
    pub checker_period: f64,
    /// Gain inside the checker's `tanh`; small values give a sinusoid,
    /// large values flat-topped squares.
    pub checker_sharpness: f64,
    /// Range of sinusoid wavelengths.
    pub noise_wavelength: [f64; 2],
    /// Vary only along the first surface axis.
    pub one_dimensional: bool,
    /// Per-channel gain for color renders.
    pub tint: [f64; 3],
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec {
            base: 0.5,
            contrast: 0.35,
            checker_period: 2.0,
            checker_sharpness: 1.0,
            noise_wavelength: [1.2, 3.0],
            one_dimensional: false,
            tint: [1.0, 1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceLabel {
    pub id: u32,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub name: String,
    pub shape: Shape,
    pub texture: TextureSpec,
    pub instance: Option<InstanceLabel>,
    /// Displacement per frame (m/frame).
    pub velocity: [f64; 3],
}

impl SceneObject {
    pub fn is_mover(&self) -> bool {
        self.velocity.iter().any(|&v| v != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub intrinsics: CameraIntrinsics,
    /// World-to-camera pose of every temporal frame.
    pub camera_path: Vec<Pose>,
    pub keyframe: usize,
    /// Offset of the static stereo camera along its own x-axis (meters).
    pub stereo_baseline: f64,
    pub channels: usize,
    pub objects: Vec<SceneObject>,
    pub sparse_count: usize,
    pub sparse_noise: f64,
}

impl SceneSpec {
    pub fn frames(&self) -> usize {
        self.camera_path.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::Empty("scene layout"));
        }
        if self.camera_path.len() < 3 {
            return Err(Error::param("camera_path", "need at least 3 frames"));
        }
        if self.keyframe == 0 || self.keyframe + 1 >= self.camera_path.len() {
            return Err(Error::param("keyframe", "must be an interior frame"));
        }
        if !self.objects.iter().any(|o| !o.is_mover()) {
            return Err(Error::param("objects", "need at least one static surface"));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(Error::param("channels", "must be 1 or 3"));
        }
        if !(self.sparse_noise >= 0.0) {
            return Err(Error::param("sparse_noise", "must be non-negative"));
        }
        for o in &self.objects {
            o.shape.validate()?;
            let t = &o.texture;
            let [lo, hi] = t.noise_wavelength;
            if !(t.checker_period > 0.0 && t.checker_sharpness > 0.0 && lo > 0.0 && lo <= hi) {
                return Err(Error::param(
                    "texture",
                    alloc::format!("invalid texture on '{}'", o.name),
                ));
            }
        }
        let mut ids: Vec<u32> = self
            .objects
            .iter()
            .filter_map(|o| o.instance.as_ref().map(|i| i.id))
            .collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != n || ids.contains(&0) {
            return Err(Error::param("instance ids", "must be unique and non-zero"));
        }
        Ok(())
    }

    /// Pose of the static stereo partner of temporal frame `i`.
    pub fn stereo_pose(&self, i: usize) -> Pose {
        Pose::from_translation([-self.stereo_baseline, 0.0, 0.0]).compose(&self.camera_path[i])
    }
}

/// Ground truth of one rendered view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub frame: Frame,
    /// Camera-z depth in meters; 0 where the ray hits nothing.
    pub depth: Grid<f64>,
    /// 0 for background / non-instance surfaces.
    pub instance_ids: Grid<u32>,
    pub moving: Grid<bool>,
    /// Which planar face was hit, 0 for no hit. Two pixels share a value
    /// exactly when they see the same face of the same object.
    pub surface: Grid<u32>,
}

impl RenderedView {
    /// Inverse depth, 0 where undefined.
    pub fn inv_depth(&self) -> Grid<f64> {
        self.depth.map(|&z| if z > 0.0 { 1.0 / z } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBundle {
    pub keyframe: usize,
    pub views: Vec<RenderedView>,
    pub stereo: Vec<RenderedView>,
    /// Instance masks per temporal frame.
    pub instances: Vec<Vec<InstanceMask>>,
    /// Sparse inverse-depth samples of the keyframe.
    pub sparse: SparseDepth,
}

/// Frames arranged around one keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeSet {
    pub key: Frame,
    pub temporal: Vec<Frame>,
    pub stereo: Frame,
}

impl GroundTruthBundle {
    /// Keyframe `k` with its immediate temporal neighbors and stereo partner.
    pub fn keyframe_set(&self, k: usize) -> Result<KeyframeSet> {
        if k >= self.views.len() {
            return Err(Error::param("keyframe", "index out of range"));
        }
        let temporal: Vec<Frame> = [k.checked_sub(1), Some(k + 1)]
            .into_iter()
            .flatten()
            .filter(|&i| i < self.views.len())
            .map(|i| self.views[i].frame.clone().with_role(FrameRole::Temporal))
            .collect();
        Ok(KeyframeSet {
            key: self.views[k].frame.clone().with_role(FrameRole::Keyframe),
            temporal,
            stereo: self.stereo[k].frame.clone().with_role(FrameRole::StaticStereo),
        })
    }
}

struct Texture {
    spec: TextureSpec,
    waves: Vec<([f64; 2], f64, f64)>,
}

impl Texture {
    fn new(spec: TextureSpec, rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..4)
            .map(|_| {
                let theta = if spec.one_dimensional {
                    0.0
                } else {
                    rng.random_range(0.0..PI)
                };
                let lambda = rng.random_range(spec.noise_wavelength[0]..=spec.noise_wavelength[1]);
                let k = 2.0 * PI / lambda;
                (
                    [k * math::cos(theta), k * math::sin(theta)],
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.5..1.0),
                )
            })
            .collect();
        Texture { spec, waves }
    }

    fn sample(&self, s: f64, t: f64) -> f64 {
        let w = 2.0 * PI / self.spec.checker_period;
        let k = self.spec.checker_sharpness;
        let checker = if self.spec.one_dimensional {
            math::tanh(k * math::sin(w * s)) / math::tanh(k)
        } else {
            math::tanh(k * math::sin(w * s) * math::sin(w * t)) / math::tanh(k)
        };
        let mut noise = 0.0;
        let mut norm = 0.0;
        for (k, phase, amp) in &self.waves {
            noise += amp * math::sin(k[0] * s + k[1] * t + phase);
            norm += amp;
        }
        self.spec.base + self.spec.contrast * (0.5 * checker + 0.5 * noise / norm)
    }
}

struct Hit {
    t: f64,
    s: f64,
    u: f64,
    face: u32,
}

#[inline]
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn intersect_rect(
    origin: [f64; 3],
    axis_u: [f64; 3],
    axis_v: [f64; 3],
    size: [f64; 2],
    center: [f64; 3],
    dir: [f64; 3],
) -> Option<Hit> {
    let n = cross(axis_u, axis_v);
    let denom = dot(n, dir);
    if math::abs(denom) < 1e-12 {
        return None;
    }
    let rel = [origin[0] - center[0], origin[1] - center[1], origin[2] - center[2]];
    let t = dot(n, rel) / denom;
    if !(t > 1e-9) {
        return None;
    }
    let p = [
        center[0] + t * dir[0] - origin[0],
        center[1] + t * dir[1] - origin[1],
        center[2] + t * dir[2] - origin[2],
    ];
    let a = dot(p, axis_u);
    let b = dot(p, axis_v);
    (a >= 0.0 && a <= size[0] && b >= 0.0 && b <= size[1]).then_some(Hit { t, s: a, u: b, face: 0 })
}

const BOX_FACES: usize = 6;

/// Origin, u axis, v axis and size of one planar face.
type FaceRect = ([f64; 3], [f64; 3], [f64; 3], [f64; 2]);

// The six faces of an axis-aligned box as rectangles; texture coordinates
// of each face are offset so faces do not look alike.
fn box_faces(center: [f64; 3], half: [f64; 3]) -> [FaceRect; 6] {
    let [cx, cy, cz] = center;
    let [hx, hy, hz] = half;
    let ex = [1.0, 0.0, 0.0];
    let ey = [0.0, 1.0, 0.0];
    let ez = [0.0, 0.0, 1.0];
    [
        ([cx - hx, cy - hy, cz - hz], ex, ey, [2.0 * hx, 2.0 * hy]),
        ([cx - hx, cy - hy, cz + hz], ex, ey, [2.0 * hx, 2.0 * hy]),
        ([cx - hx, cy - hy, cz - hz], ey, ez, [2.0 * hy, 2.0 * hz]),
        ([cx + hx, cy - hy, cz - hz], ey, ez, [2.0 * hy, 2.0 * hz]),
        ([cx - hx, cy - hy, cz - hz], ez, ex, [2.0 * hz, 2.0 * hx]),
        ([cx - hx, cy + hy, cz - hz], ez, ex, [2.0 * hz, 2.0 * hx]),
    ]
}

fn displaced(shape: &Shape, offset: [f64; 3]) -> Shape {
    let add = |p: [f64; 3]| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]];
    match *shape {
        Shape::Rect {
            origin,
            axis_u,
            axis_v,
            size,
        } => Shape::Rect {
            origin: add(origin),
            axis_u,
            axis_v,
            size,
        },
        Shape::Box { center, half } => Shape::Box {
            center: add(center),
            half,
        },
    }
}

fn intersect(shape: &Shape, center: [f64; 3], dir: [f64; 3]) -> Option<Hit> {
    match *shape {
        Shape::Rect {
            origin,
            axis_u,
            axis_v,
            size,
        } => intersect_rect(origin, axis_u, axis_v, size, center, dir),
        Shape::Box { center: c, half } => {
            let mut best: Option<Hit> = None;
            for (f, (o, a, b, s)) in box_faces(c, half).into_iter().enumerate() {
                if let Some(mut h) = intersect_rect(o, a, b, s, center, dir) {
                    if best.as_ref().is_none_or(|bh| h.t < bh.t) {
                        h.s += 3.7 * f as f64;
                        h.u += 1.9 * f as f64;
                        h.face = f as u32;
                        best = Some(h);
                    }
                }
            }
            best
        }
    }
}

fn render_view(
    spec: &SceneSpec,
    textures: &[Texture],
    pose: &Pose,
    time: f64,
    index: usize,
    role: FrameRole,
) -> Result<RenderedView> {
    let intr = spec.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let shapes: Vec<Shape> = spec
        .objects
        .iter()
        .map(|o| {
            displaced(
                &o.shape,
                [o.velocity[0] * time, o.velocity[1] * time, o.velocity[2] * time],
            )
        })
        .collect();
    let cam_to_world = pose.inverse();
    let center = cam_to_world.translation;
    let mut planes: Vec<Grid<f64>> = (0..spec.channels).map(|_| Grid::new(w, h, BACKGROUND)).collect();
    let mut depth = Grid::new(w, h, 0.0);
    let mut ids = Grid::new(w, h, 0u32);
    let mut moving = Grid::new(w, h, false);
    let mut surface = Grid::new(w, h, 0u32);
    for y in 0..h {
        for x in 0..w {
            // Ray with unit camera-z, so the hit parameter is the depth.
            let dir = cam_to_world.rotate(intr.ray(x as f64, y as f64));
            let mut best: Option<(usize, Hit)> = None;
            for (i, s) in shapes.iter().enumerate() {
                if let Some(hit) = intersect(s, center, dir) {
                    if best.as_ref().is_none_or(|(_, b)| hit.t < b.t) {
                        best = Some((i, hit));
                    }
                }
            }
            let Some((i, hit)) = best else {
                continue;
            };
            let obj = &spec.objects[i];
            let v = textures[i].sample(hit.s, hit.u);
            for (c, plane) in planes.iter_mut().enumerate() {
                let tint = if spec.channels == 1 { 1.0 } else { obj.texture.tint[c] };
                plane.set(x, y, (v * tint).clamp(0.0, 1.0));
            }
            depth.set(x, y, hit.t);
            ids.set(x, y, obj.instance.as_ref().map_or(0, |l| l.id));
            moving.set(x, y, obj.is_mover());
            surface.set(x, y, (i * BOX_FACES) as u32 + hit.face + 1);
        }
    }
    let frame = Frame::new(index, Image::from_planes(planes)?, intr, *pose, role)?;
    Ok(RenderedView {
        frame,
        depth,
        instance_ids: ids,
        moving,
        surface,
    })
}

/// Renders every temporal frame, its stereo partner, instance masks and the
/// keyframe's sparse samples. Identical specs give bitwise-identical bundles.
pub fn render(spec: &SceneSpec) -> Result<GroundTruthBundle> {
    spec.validate()?;
    let mut views = Vec::with_capacity(spec.frames());
    let mut stereo = Vec::with_capacity(spec.frames());
    for i in 0..spec.frames() {
        views.push(render_frame(spec, i, false)?);
        stereo.push(render_frame(spec, i, true)?);
    }
    assemble(spec, views, stereo)
}

fn textures(spec: &SceneSpec) -> Vec<Texture> {
    spec.objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(TEXTURE_STREAM_BASE + i as u64);
            Texture::new(o.texture, &mut rng)
        })
        .collect()
}

/// Renders temporal frame `i`, or its static stereo partner when `stereo`
/// is set. Independent of every other frame, so frames may be rendered in
/// any order or concurrently.
pub fn render_frame(spec: &SceneSpec, i: usize, stereo: bool) -> Result<RenderedView> {
    spec.validate()?;
    if i >= spec.frames() {
        return Err(Error::param("frame", "index out of range"));
    }
    let time = i as f64 - spec.keyframe as f64;
    let (pose, role) = if stereo {
        (spec.stereo_pose(i), FrameRole::StaticStereo)
    } else if i == spec.keyframe {
        (spec.camera_path[i], FrameRole::Keyframe)
    } else {
        (spec.camera_path[i], FrameRole::Temporal)
    };
    render_view(spec, &textures(spec), &pose, time, i, role)
}

/// Builds the bundle from frames rendered with [`render_frame`], adding
/// instance masks and sparse samples.
pub fn assemble(spec: &SceneSpec, views: Vec<RenderedView>, stereo: Vec<RenderedView>) -> Result<GroundTruthBundle> {
    if views.len() != spec.frames() || stereo.len() != spec.frames() {
        return Err(Error::param("views", "need one temporal and one stereo view per frame"));
    }
    let labels: Vec<&InstanceLabel> = spec.objects.iter().filter_map(|o| o.instance.as_ref()).collect();
    let instances = views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            labels
                .iter()
                .map(|l| InstanceMask {
                    frame: i,
                    id: l.id,
                    class: l.class.clone(),
                    pixels: v.instance_ids.map(|&id| id == l.id),
                })
                .filter(|m| m.area() > 0)
                .collect()
        })
        .collect();
    let key = &views[spec.keyframe];
    let sparse = sparse_samples(
        &key.inv_depth(),
        &key.moving,
        spec.sparse_count,
        spec.sparse_noise,
        spec.seed,
    )?;
    Ok(GroundTruthBundle {
        keyframe: spec.keyframe,
        views,
        stereo,
        instances,
        sparse,
    })
}

/// Keyframe pixels whose surface point is seen unobstructed by `src`.
///
/// The point is reprojected with ground-truth depth, treating every object as
/// static, and accepted when it lands inside `src` and all four bilinear
/// neighbors there lie on the same face as the keyframe pixel, with a
/// ground-truth inverse depth within `inv_tol` of the reprojected one. Pixels
/// whose interpolated intensity would mix two surfaces are thus rejected.
pub fn visibility(key: &RenderedView, src: &RenderedView, inv_tol: f64) -> Result<Grid<bool>> {
    let (w, h) = key.frame.dims();
    let rel = relative_pose(&src.frame, &key.frame);
    let (sw, sh) = src.frame.dims();
    Ok(Grid::from_fn(w, h, |x, y| {
        let z = *key.depth.get(x, y);
        let face = *key.surface.get(x, y);
        if !(z > 0.0) {
            return false;
        }
        let Ok(p) = backproject(&key.frame.intrinsics, [x as f64, y as f64], 1.0 / z) else {
            return false;
        };
        let Ok(([u, v], zs)) = project(&src.frame.intrinsics, rel.transform(p)) else {
            return false;
        };
        if !(u >= 0.0 && v >= 0.0 && u <= (sw - 1) as f64 && v <= (sh - 1) as f64) {
            return false;
        }
        let (x0, y0) = (math::floor(u) as usize, math::floor(v) as usize);
        let (x1, y1) = ((x0 + 1).min(sw - 1), (y0 + 1).min(sh - 1));
        [(x0, y0), (x1, y0), (x0, y1), (x1, y1)].iter().all(|&(a, b)| {
            let zn = *src.depth.get(a, b);
            zn > 0.0 && *src.surface.get(a, b) == face && math::abs(1.0 / zn - 1.0 / zs) <= inv_tol
        })
    }))
}

/// Seeded uniform subset of static pixels with defined depth, perturbed by
/// Gaussian noise of standard deviation `noise` and kept positive.
pub fn sparse_samples(
    gt_inv_depth: &Grid<f64>,
    movers: &Grid<bool>,
    count: usize,
    noise: f64,
    seed: u64,
) -> Result<SparseDepth> {
    movers.ensure_dims("mover mask", gt_inv_depth.dims())?;
    let (w, h) = gt_inv_depth.dims();
    if count > w * h {
        return Err(Error::param("sparse count", "exceeds pixel count"));
    }
    let candidates: Vec<usize> = (0..w * h)
        .filter(|&i| gt_inv_depth.as_slice()[i] > 0.0 && !movers.as_slice()[i])
        .collect();
    let count = count.min(candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPARSE_STREAM);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), count)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    picked.sort_unstable();
    let normal = Normal::new(0.0, noise).map_err(|_| Error::param("sparse noise", "invalid"))?;
    let samples = picked
        .into_iter()
        .map(|i| {
            let d = gt_inv_depth.as_slice()[i];
            let v = if noise > 0.0 { d + normal.sample(&mut rng) } else { d };
            ((i % w, i / w), v.max(f64::MIN_POSITIVE))
        })
        .collect();
    SparseDepth::new(w, h, samples)
}

/// Ground plane, a left wall and a back wall, one box moving towards the
/// camera and across the view, and one parked box; five frames of a camera
/// sliding along its x-axis, keyframe in the middle, 128×64 pixels.
pub fn standard_scene(seed: u64) -> SceneSpec {
    let intrinsics = CameraIntrinsics {
        fx: 64.0,
        fy: 64.0,
        cx: 63.5,
        cy: 31.5,
        width: 128,
        height: 64,
    };
    let step = 0.6;
    let camera_path = (0..5)
        .map(|i| Pose::from_translation([-(i as f64 - 2.0) * step, 0.0, 0.0]))
        .collect();
    let surface = |tint: [f64; 3], one_dimensional: bool| TextureSpec {
        one_dimensional,
        tint,
        ..TextureSpec::default()
    };
    let objects = alloc::vec![
        SceneObject {
            name: "ground".into(),
            shape: Shape::Rect {
                origin: [-20.0, 2.5, 0.0],
                axis_u: [1.0, 0.0, 0.0],
                axis_v: [0.0, 0.0, 1.0],
                size: [40.0, 12.0],
            },
            texture: TextureSpec {
                checker_period: 1.6,
                ..surface([0.9, 0.85, 0.8], false)
            },
            instance: None,
            velocity: [0.0; 3],
        },
        SceneObject {
            name: "left_wall".into(),
            shape: Shape::Rect {
                origin: [-4.0, -8.0, 0.0],
                axis_u: [0.0, 0.0, 1.0],
                axis_v: [0.0, 1.0, 0.0],
                size: [12.0, 10.5],
            },
            texture: surface([0.8, 0.9, 1.0], false),
            instance: None,
            velocity: [0.0; 3],
        },
        SceneObject {
            name: "back_wall".into(),
            shape: Shape::Rect {
                origin: [-20.0, -8.0, 12.0],
                axis_u: [1.0, 0.0, 0.0],
                axis_v: [0.0, 1.0, 0.0],
                size: [40.0, 10.5],
            },
            texture: TextureSpec {
                checker_period: 2.4,
                noise_wavelength: [1.6, 3.5],
                ..surface([1.0, 0.95, 0.85], false)
            },
            instance: None,
            velocity: [0.0; 3],
        },
        SceneObject {
            name: "moving_box".into(),
            shape: Shape::Box {
                center: [0.3, 1.7, 6.0],
                half: [1.0, 0.8, 0.75],
            },
            texture: TextureSpec {
                checker_period: 0.9,
                noise_wavelength: [0.6, 1.4],
                ..surface([1.0, 0.6, 0.5], false)
            },
            instance: Some(InstanceLabel {
                id: 1,
                class: "car".into(),
            }),
            velocity: [-0.4, 0.0, -0.8],
        },
        SceneObject {
            name: "parked_box".into(),
            shape: Shape::Box {
                center: [3.0, 1.9, 8.0],
                half: [0.7, 0.6, 1.0],
            },
            texture: TextureSpec {
                checker_period: 1.0,
                noise_wavelength: [0.7, 1.5],
                ..surface([0.5, 0.7, 1.0], false)
            },
            instance: Some(InstanceLabel {
                id: 2,
                class: "car".into(),
            }),
            velocity: [0.0; 3],
        },
    ];
    SceneSpec {
        seed,
        intrinsics,
        camera_path,
        keyframe: 2,
        stereo_baseline: 0.5,
        channels: 1,
        objects,
        sparse_count: 400,
        sparse_noise: 0.0,
    }
}

/// One slanted textured wall filling the whole view, with the camera path of
/// the standard scene. Inverse depth is affine in pixel coordinates, which
/// makes area-downsampled ground truth exact at every pyramid level.
pub fn plane_scene(seed: u64) -> SceneSpec {
    let mut spec = standard_scene(seed);
    let (s, c) = (math::sin(0.3), math::cos(0.3));
    spec.objects = alloc::vec![SceneObject {
        name: "wall".into(),
        shape: Shape::Rect {
            origin: [-30.0 * c, -20.0, 6.0 - 30.0 * s],
            axis_u: [c, 0.0, s],
            axis_v: [0.0, 1.0, 0.0],
            size: [60.0, 40.0],
        },
        texture: TextureSpec::default(),
        instance: None,
        velocity: [0.0; 3],
    }];
    spec
}

/// The standard scene with every object at rest.
pub fn standard_static_scene(seed: u64) -> SceneSpec {
    let mut spec = standard_scene(seed);
    for o in &mut spec.objects {
        o.velocity = [0.0; 3];
    }
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let a = render(&standard_scene(7)).unwrap();
        let b = render(&standard_scene(7)).unwrap();
        assert_eq!(a, b);
        let c = render(&standard_scene(8)).unwrap();
        assert_ne!(a.views[2].frame.image, c.views[2].frame.image);
    }

    #[test]
    fn degenerate_specs_rejected() {
        let mut s = standard_scene(1);
        s.objects.clear();
        assert!(matches!(render(&s), Err(Error::Empty(_))));
        let mut s = standard_scene(1);
        s.keyframe = 0;
        assert!(render(&s).is_err());
        let mut s = standard_scene(1);
        s.camera_path.truncate(2);
        assert!(render(&s).is_err());
    }

    #[test]
    fn ground_truth_products_are_consistent() {
        let spec = standard_scene(3);
        let b = render(&spec).unwrap();
        for (i, v) in b.views.iter().enumerate() {
            // Every pixel sees a surface in the enclosed standard scene.
            assert!(v.depth.as_slice().iter().all(|&z| z > 0.0));
            let inst = &b.instances[i];
            crate::mask::validate_instances(inst).unwrap();
            for (p, (&m, &id)) in v.moving.as_slice().iter().zip(v.instance_ids.as_slice()).enumerate() {
                if m {
                    assert_eq!(id, 1, "moving pixel {p} outside the mover instance");
                }
            }
            let rel = spec.stereo_pose(i).compose(&spec.camera_path[i].inverse());
            let want = Pose::from_translation([-spec.stereo_baseline, 0.0, 0.0]);
            assert!(rel.max_abs_diff(&want) < 1e-12);
        }
        assert!(b.views[2].moving.as_slice().iter().filter(|&&m| m).count() > 200);
    }

    #[test]
    fn sparse_sample_rules() {
        let d = Grid::from_fn(8, 4, |x, _| 0.1 + 0.01 * x as f64);
        let movers = Grid::from_fn(8, 4, |x, _| x < 3);
        let s = sparse_samples(&d, &movers, 10, 0.0, 5).unwrap();
        assert_eq!(s.samples().len(), 10);
        for &((x, y), v) in s.samples() {
            assert!(x >= 3);
            assert_eq!(v, *d.get(x, y));
        }
        assert!(sparse_samples(&d, &movers, 0, 0.0, 5).unwrap().samples().is_empty());
        assert!(sparse_samples(&d, &movers, 33, 0.0, 5).is_err());
        let noisy = sparse_samples(&d, &movers, 10, 0.05, 5).unwrap();
        assert!(noisy.samples().iter().all(|s| s.1 > 0.0));
        assert_ne!(noisy, s);
    }
}
