//! Scene descriptions in TOML.
//!
//! ```toml
//! seed = 1
//! keyframe = 2
//! stereo_baseline = 0.5
//!
//! [intrinsics]
//! fx = 64.0
//! fy = 64.0
//! cx = 63.5
//! cy = 31.5
//! width = 128
//! height = 64
//!
//! [[camera]]                 # world-to-camera, one per frame
//! translation = [0.6, 0.0, 0.0]
//!
//! [[objects]]
//! name = "ground"
//! shape = { kind = "rect", origin = [-20.0, 2.5, 0.0], axis_u = [1.0, 0.0, 0.0], axis_v = [0.0, 0.0, 1.0], size = [40.0, 12.0] }
//! texture = { checker_period = 1.6 }
//!
//! [[objects]]
//! name = "car"
//! shape = { kind = "box", center = [0.3, 1.7, 6.0], half = [1.0, 0.8, 0.75] }
//! instance = { id = 1, class = "car" }
//! velocity = [-0.4, 0.0, -0.8]
//! ```
//!
//! Omitted texture fields take their defaults; `rotation` defaults to the
//! identity, `velocity` to zero.

use std::path::Path;

use planesweep_core::geometry::{CameraIntrinsics, Pose};
use planesweep_core::synth::{InstanceLabel, SceneObject, SceneSpec, Shape, TextureSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub seed: u64,
    pub keyframe: usize,
    pub stereo_baseline: f64,
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(default)]
    pub sparse_count: usize,
    #[serde(default)]
    pub sparse_noise: f64,
    pub intrinsics: IntrinsicsDef,
    pub camera: Vec<PoseDef>,
    pub objects: Vec<ObjectDef>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsDef {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[[f64; 3]; 3]>,
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeDef {
    Rect {
        origin: [f64; 3],
        axis_u: [f64; 3],
        axis_v: [f64; 3],
        size: [f64; 2],
    },
    Box {
        center: [f64; 3],
        half: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextureDef {
    pub base: f64,
    pub contrast: f64,
    pub checker_period: f64,
    pub checker_sharpness: f64,
    pub noise_wavelength: [f64; 2],
    pub one_dimensional: bool,
    pub tint: [f64; 3],
}

impl Default for TextureDef {
    fn default() -> Self {
        TextureSpec::default().into()
    }
}

impl From<TextureSpec> for TextureDef {
    fn from(t: TextureSpec) -> Self {
        TextureDef {
            base: t.base,
            contrast: t.contrast,
            checker_period: t.checker_period,
            checker_sharpness: t.checker_sharpness,
            noise_wavelength: t.noise_wavelength,
            one_dimensional: t.one_dimensional,
            tint: t.tint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDef {
    pub id: u32,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDef {
    pub name: String,
    pub shape: ShapeDef,
    #[serde(default)]
    pub texture: TextureDef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceDef>,
    #[serde(default)]
    pub velocity: [f64; 3],
}

impl SceneFile {
    pub fn from_spec(spec: &SceneSpec) -> Self {
        let k = spec.intrinsics;
        SceneFile {
            seed: spec.seed,
            keyframe: spec.keyframe,
            stereo_baseline: spec.stereo_baseline,
            channels: spec.channels,
            sparse_count: spec.sparse_count,
            sparse_noise: spec.sparse_noise,
            intrinsics: IntrinsicsDef {
                fx: k.fx,
                fy: k.fy,
                cx: k.cx,
                cy: k.cy,
                width: k.width,
                height: k.height,
            },
            camera: spec
                .camera_path
                .iter()
                .map(|p| PoseDef {
                    rotation: (p.rotation != Pose::identity().rotation).then_some(p.rotation),
                    translation: p.translation,
                })
                .collect(),
            objects: spec
                .objects
                .iter()
                .map(|o| ObjectDef {
                    name: o.name.clone(),
                    shape: match o.shape {
                        Shape::Rect {
                            origin,
                            axis_u,
                            axis_v,
                            size,
                        } => ShapeDef::Rect {
                            origin,
                            axis_u,
                            axis_v,
                            size,
                        },
                        Shape::Box { center, half } => ShapeDef::Box { center, half },
                    },
                    texture: o.texture.into(),
                    instance: o.instance.as_ref().map(|l| InstanceDef {
                        id: l.id,
                        class: l.class.clone(),
                    }),
                    velocity: o.velocity,
                })
                .collect(),
        }
    }

    /// Converts to a validated core spec; errors are reported against `origin`.
    pub fn to_spec(&self, origin: &Path) -> Result<SceneSpec> {
        let bad = |field: &str, e: planesweep_core::Error| Error::parse(origin, field, e);
        let k = &self.intrinsics;
        let intrinsics =
            CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height).map_err(|e| bad("intrinsics", e))?;
        let camera_path = self
            .camera
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Pose::new(p.rotation.unwrap_or(Pose::identity().rotation), p.translation)
                    .map_err(|e| bad(&format!("camera[{i}]"), e))
            })
            .collect::<Result<Vec<_>>>()?;
        let objects = self
            .objects
            .iter()
            .map(|o| SceneObject {
                name: o.name.clone(),
                shape: match o.shape {
                    ShapeDef::Rect {
                        origin,
                        axis_u,
                        axis_v,
                        size,
                    } => Shape::Rect {
                        origin,
                        axis_u,
                        axis_v,
                        size,
                    },
                    ShapeDef::Box { center, half } => Shape::Box { center, half },
                },
                texture: TextureSpec {
                    base: o.texture.base,
                    contrast: o.texture.contrast,
                    checker_period: o.texture.checker_period,
                    checker_sharpness: o.texture.checker_sharpness,
                    noise_wavelength: o.texture.noise_wavelength,
                    one_dimensional: o.texture.one_dimensional,
                    tint: o.texture.tint,
                },
                instance: o.instance.as_ref().map(|i| InstanceLabel {
                    id: i.id,
                    class: i.class.clone(),
                }),
                velocity: o.velocity,
            })
            .collect();
        let spec = SceneSpec {
            seed: self.seed,
            intrinsics,
            camera_path,
            keyframe: self.keyframe,
            stereo_baseline: self.stereo_baseline,
            channels: self.channels,
            objects,
            sparse_count: self.sparse_count,
            sparse_noise: self.sparse_noise,
        };
        spec.validate().map_err(|e| bad("scene", e))?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene files always serialize")
    }
}

pub fn parse_scene(text: &str, origin: &Path) -> Result<SceneSpec> {
    let file: SceneFile = toml::from_str(text).map_err(|e| Error::parse(origin, "toml", e.message()))?;
    file.to_spec(origin)
}

pub fn read_scene(path: &Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text, path)
}

/// Scenes available without a spec file.
pub fn builtin(name: &str, seed: u64) -> Result<SceneSpec> {
    use planesweep_core::synth;
    match name {
        "standard" => Ok(synth::standard_scene(seed)),
        "standard-static" => Ok(synth::standard_static_scene(seed)),
        "plane" => Ok(synth::plane_scene(seed)),
        other => Err(Error::argument(
            "builtin",
            format!("unknown scene `{other}` (standard, standard-static, plane)"),
        )),
    }
}
