//! Ground-truth bundles on disk.
//!
//! ```text
//! meta.txt            frames, keyframe, channels
//! scene.toml          the scene that produced the bundle
//! intrinsics.txt      fx fy cx cy width height
//! poses.txt           world-to-camera [R | t] per temporal frame
//! stereo_poses.txt    same for each frame's static stereo partner
//! images/NNN.png      temporal frames (16-bit)
//! images/stereo_NNN.png
//! depth/NNN.pfm       ground-truth inverse depth (1/m), 0 where undefined
//! depth/stereo_NNN.pfm
//! instances/NNN.png   16-bit instance ids, 0 = none
//! classes.txt         instance id → class
//! moving/NNN.png      ground-truth moving pixels
//! sparse.csv          sparse keyframe inverse depths
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use planesweep_core::geometry::{CameraIntrinsics, Frame, FrameRole, Pose};
use planesweep_core::losses::{ScaleInputs, SparseDepth};
use planesweep_core::mask::InstanceMask;
use planesweep_core::synth::{GroundTruthBundle, SceneSpec};
use planesweep_core::Grid;

use crate::error::{CoreContext, Error, Result};
use crate::io::text::{self, KeyValues};
use crate::io::{pfm, png, tables};
use crate::scene::SceneFile;

pub fn frame_name(i: usize) -> String {
    format!("{i:03}")
}

fn stereo_name(i: usize) -> String {
    format!("stereo_{i:03}")
}

/// A bundle loaded from disk.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub root: PathBuf,
    pub keyframe: usize,
    pub intrinsics: CameraIntrinsics,
    /// Temporal frames in capture order.
    pub frames: Vec<Frame>,
    /// Static stereo partner of each temporal frame.
    pub stereo: Vec<Frame>,
    pub gt_inv_depth: Vec<Grid<f64>>,
    pub stereo_gt_inv_depth: Vec<Grid<f64>>,
    pub instances: Vec<Vec<InstanceMask>>,
    pub moving: Vec<Grid<bool>>,
    pub sparse: SparseDepth,
}

/// Keyframe, its temporal neighbors and its stereo partner.
#[derive(Debug, Clone)]
pub struct FrameSet {
    pub key: Frame,
    pub temporal: Vec<Frame>,
    pub stereo: Frame,
}

pub fn write(dir: &Path, spec: &SceneSpec, gt: &GroundTruthBundle) -> Result<()> {
    let p = |rel: String| dir.join(rel);
    let n = gt.views.len();
    let mut meta = KeyValues::default();
    meta.push("frames", n);
    meta.push("keyframe", gt.keyframe);
    meta.push("channels", spec.channels);
    crate::io::write_bytes(&p("meta.txt".into()), meta.encode().as_bytes())?;
    crate::io::write_bytes(&p("scene.toml".into()), SceneFile::from_spec(spec).to_toml().as_bytes())?;
    crate::io::write_bytes(
        &p("intrinsics.txt".into()),
        text::encode_intrinsics(&spec.intrinsics).as_bytes(),
    )?;
    let poses: Vec<Pose> = gt.views.iter().map(|v| v.frame.pose).collect();
    let stereo_poses: Vec<Pose> = gt.stereo.iter().map(|v| v.frame.pose).collect();
    crate::io::write_bytes(&p("poses.txt".into()), text::encode_poses(&poses).as_bytes())?;
    crate::io::write_bytes(
        &p("stereo_poses.txt".into()),
        text::encode_poses(&stereo_poses).as_bytes(),
    )?;
    for (i, (v, s)) in gt.views.iter().zip(&gt.stereo).enumerate() {
        png::write_image(&p(format!("images/{}.png", frame_name(i))), &v.frame.image)?;
        png::write_image(&p(format!("images/{}.png", stereo_name(i))), &s.frame.image)?;
        pfm::write(&p(format!("depth/{}.pfm", frame_name(i))), &v.inv_depth())?;
        pfm::write(&p(format!("depth/{}.pfm", stereo_name(i))), &s.inv_depth())?;
        png::write_ids(&p(format!("instances/{}.png", frame_name(i))), &v.instance_ids)?;
        png::write_mask(&p(format!("moving/{}.png", frame_name(i))), &v.moving)?;
    }
    let classes: BTreeMap<u32, String> = spec
        .objects
        .iter()
        .filter_map(|o| o.instance.as_ref().map(|l| (l.id, l.class.clone())))
        .collect();
    crate::io::write_bytes(&p("classes.txt".into()), text::encode_classes(&classes).as_bytes())?;
    tables::write_sparse(&p("sparse.csv".into()), &gt.sparse)
}

fn expect_dims<T>(path: &Path, g: &Grid<T>, dims: (usize, usize)) -> Result<()> {
    if g.dims() != dims {
        return Err(Error::parse(
            path,
            "size",
            format!(
                "{}x{} does not match intrinsics {}x{}",
                g.width(),
                g.height(),
                dims.0,
                dims.1
            ),
        ));
    }
    Ok(())
}

fn instances_from_ids(
    path: &Path,
    frame: usize,
    ids: &Grid<u32>,
    classes: &BTreeMap<u32, String>,
) -> Result<Vec<InstanceMask>> {
    let mut present: Vec<u32> = ids.as_slice().iter().copied().filter(|&i| i != 0).collect();
    present.sort_unstable();
    present.dedup();
    present
        .into_iter()
        .map(|id| {
            let class = classes
                .get(&id)
                .ok_or_else(|| Error::parse(path, "instance id", format!("id {id} missing from classes.txt")))?;
            Ok(InstanceMask {
                frame,
                id,
                class: class.clone(),
                pixels: ids.map(|&v| v == id),
            })
        })
        .collect()
}

impl Bundle {
    pub fn read(root: &Path) -> Result<Self> {
        let p = |rel: String| root.join(rel);
        let meta_path = p("meta.txt".into());
        let meta = KeyValues::read(&meta_path)?;
        let n: usize = meta.require(&meta_path, "frames")?;
        let keyframe: usize = meta.require(&meta_path, "keyframe")?;
        if keyframe >= n {
            return Err(Error::parse(
                &meta_path,
                "keyframe",
                format!("{keyframe} is not below frames = {n}"),
            ));
        }
        let intrinsics = text::read_intrinsics(&p("intrinsics.txt".into()))?;
        let dims = intrinsics.dims();
        let load_poses = |name: &str| -> Result<Vec<Pose>> {
            let path = p(name.into());
            let poses = text::read_poses(&path)?;
            if poses.len() != n {
                return Err(Error::parse(
                    &path,
                    "poses",
                    format!("expected {n} poses, found {}", poses.len()),
                ));
            }
            Ok(poses)
        };
        let poses = load_poses("poses.txt")?;
        let stereo_poses = load_poses("stereo_poses.txt")?;
        let classes = text::read_classes(&p("classes.txt".into()))?;

        let mut bundle = Bundle {
            root: root.to_path_buf(),
            keyframe,
            intrinsics,
            frames: Vec::with_capacity(n),
            stereo: Vec::with_capacity(n),
            gt_inv_depth: Vec::with_capacity(n),
            stereo_gt_inv_depth: Vec::with_capacity(n),
            instances: Vec::with_capacity(n),
            moving: Vec::with_capacity(n),
            sparse: SparseDepth::empty(dims.0, dims.1),
        };
        for i in 0..n {
            let frame = |name: String, pose: Pose, role: FrameRole| -> Result<Frame> {
                let path = p(format!("images/{name}.png"));
                let image = png::read_image(&path)?;
                expect_dims(&path, image.plane(0), dims)?;
                Frame::new(i, image, intrinsics, pose, role).map_err(|e| Error::parse(&path, "image", e))
            };
            let depth = |name: String| -> Result<Grid<f64>> {
                let path = p(format!("depth/{name}.pfm"));
                let g = pfm::read(&path)?;
                expect_dims(&path, &g, dims)?;
                Ok(g)
            };
            let role = if i == keyframe {
                FrameRole::Keyframe
            } else {
                FrameRole::Temporal
            };
            bundle.frames.push(frame(frame_name(i), poses[i], role)?);
            bundle
                .stereo
                .push(frame(stereo_name(i), stereo_poses[i], FrameRole::StaticStereo)?);
            bundle.gt_inv_depth.push(depth(frame_name(i))?);
            bundle.stereo_gt_inv_depth.push(depth(stereo_name(i))?);
            let ids_path = p(format!("instances/{}.png", frame_name(i)));
            let ids = png::read_ids(&ids_path)?;
            expect_dims(&ids_path, &ids, dims)?;
            bundle.instances.push(instances_from_ids(&ids_path, i, &ids, &classes)?);
            let mv_path = p(format!("moving/{}.png", frame_name(i)));
            let mv = png::read_mask(&mv_path)?;
            expect_dims(&mv_path, &mv, dims)?;
            bundle.moving.push(mv);
        }
        bundle.sparse = tables::read_sparse(&p("sparse.csv".into()), dims.0, dims.1)?;
        Ok(bundle)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn check_frame(&self, k: usize) -> Result<()> {
        if k >= self.len() {
            return Err(Error::argument(
                "frame",
                format!("{k} is out of range (bundle has {} frames)", self.len()),
            ));
        }
        Ok(())
    }

    /// Frame `k` as keyframe with its immediate temporal neighbors.
    pub fn frame_set(&self, k: usize) -> Result<FrameSet> {
        self.check_frame(k)?;
        let temporal = [k.checked_sub(1), Some(k + 1)]
            .into_iter()
            .flatten()
            .filter(|&i| i < self.len())
            .map(|i| self.frames[i].clone().with_role(FrameRole::Temporal))
            .collect();
        Ok(FrameSet {
            key: self.frames[k].clone().with_role(FrameRole::Keyframe),
            temporal,
            stereo: self.stereo[k].clone(),
        })
    }

    /// Loss inputs of the bundle's keyframe (sparse samples belong to it).
    pub fn scale_inputs(&self) -> Result<ScaleInputs> {
        let set = self.frame_set(self.keyframe)?;
        ScaleInputs::new(set.key, set.temporal, Some(set.stereo), self.sparse.clone())
            .context(|| "assembling loss inputs".into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use planesweep_core::synth::{render, standard_scene};

    #[test]
    fn write_then_read() {
        let spec = standard_scene(5);
        let gt = render(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), &spec, &gt).unwrap();
        let b = Bundle::read(dir.path()).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b.keyframe, 2);
        assert_eq!(b.intrinsics, spec.intrinsics);
        for i in 0..5 {
            assert!(b.frames[i].pose.max_abs_diff(&gt.views[i].frame.pose) < 1e-9);
            assert_eq!(b.moving[i], gt.views[i].moving);
            let mut q = b.frames[i]
                .image
                .plane(0)
                .as_slice()
                .iter()
                .zip(gt.views[i].frame.image.plane(0).as_slice());
            assert!(q.all(|(a, b)| (a - b).abs() <= 0.5 / 65535.0 + 1e-12));
            let want = gt.views[i].inv_depth();
            let mut d = b.gt_inv_depth[i].as_slice().iter().zip(want.as_slice());
            assert!(d.all(|(a, b)| (a - b).abs() <= 1e-7 * b));
            assert_eq!(b.instances[i].len(), gt.instances[i].len());
            for (x, y) in b.instances[i].iter().zip(&gt.instances[i]) {
                assert_eq!((x.id, &x.class, &x.pixels), (y.id, &y.class, &y.pixels));
            }
        }
        assert_eq!(b.sparse.len(), gt.sparse.len());
        let set = b.frame_set(0).unwrap();
        assert_eq!(set.temporal.len(), 1);
        assert!(b.frame_set(5).is_err());
    }

    #[test]
    fn missing_and_broken_files_are_named() {
        let spec = standard_scene(5);
        let gt = render(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), &spec, &gt).unwrap();
        std::fs::write(dir.path().join("classes.txt"), "1 car\n").unwrap();
        match Bundle::read(dir.path()).unwrap_err() {
            Error::Parse { path, message, .. } => {
                assert!(
                    path.ends_with("instances/000.png") || path.ends_with("instances/001.png"),
                    "{path:?}"
                );
                assert!(message.contains("id 2"), "{message}");
            }
            e => panic!("{e}"),
        }
        std::fs::remove_file(dir.path().join("poses.txt")).unwrap();
        assert!(matches!(Bundle::read(dir.path()), Err(Error::Io { path, .. }) if path.ends_with("poses.txt")));
    }
}
