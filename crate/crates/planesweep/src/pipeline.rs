//! The pipeline stages behind each CLI subcommand, usable as a library.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use planesweep_core::costvolume::{apply_mask, CostVolume, DepthRange, VolumeKind};
use planesweep_core::depth::{depth_to_pointcloud, wta_depth, CloudPoint, InverseDepthMap};
use planesweep_core::eval::{depth_metrics, mask_pr, DepthMetrics, MaskScores};
use planesweep_core::geometry::Frame;
use planesweep_core::losses::{
    depth_pyramid, fd_safe_self, fd_safe_smooth, fd_safe_sparse, grad_check, grad_d_ref, grad_l_self, grad_l_smooth,
    grad_l_sparse, l_d_ref, l_depth, l_m_ref, l_self, l_smooth, l_sparse, m_ref_maps, GradCheck, LossReport,
    ScaleInputs,
};
use planesweep_core::mask::{
    auxiliary_mask, classify_moving_pixels, pixel_metrics, FrameEvidence, KeyBundle, MovingMask,
};
use planesweep_core::synth::SceneSpec;
use planesweep_core::Grid;

use crate::bundle::{self, frame_name, Bundle};
use crate::config::PipelineConfig;
use crate::error::{CoreContext, Error, Result};
use crate::fmt::sig9;
use crate::io::text::KeyValues;
use crate::io::{pfm, ply, png, tables};
use crate::parallel;

/// Renders `spec` and writes the bundle to `out`.
pub fn synth(spec: &SceneSpec, out: &Path) -> Result<()> {
    let gt = parallel::render_bundle(spec)?;
    bundle::write(out, spec, &gt)
}

/// Which sources build the volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeSource {
    /// All temporal neighbors, consensus-weighted.
    Temporal,
    /// One temporal frame by index.
    Pair(usize),
    /// The keyframe's static stereo partner.
    Stereo,
}

pub fn cost_volume(b: &Bundle, k: usize, source: VolumeSource, cfg: &PipelineConfig) -> Result<CostVolume> {
    let set = b.frame_set(k)?;
    match source {
        VolumeSource::Temporal => {
            let refs: Vec<&Frame> = set.temporal.iter().collect();
            parallel::aggregated_volume(&set.key, &refs, &cfg.range, cfg.alpha_w)
        }
        VolumeSource::Pair(i) => {
            b.check_frame(i)?;
            if i == k {
                return Err(Error::argument("source", "source frame must differ from the keyframe"));
            }
            parallel::pair_volume(&set.key, &b.frames[i], &cfg.range, VolumeKind::PerPair)
        }
        VolumeSource::Stereo => parallel::pair_volume(&set.key, &set.stereo, &cfg.range, VolumeKind::StaticStereo),
    }
}

/// How a moving-object mask is supplied on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskChoice {
    Zero,
    One,
    File(std::path::PathBuf),
}

impl MaskChoice {
    pub fn parse(s: &str) -> Self {
        match s {
            "zero" => MaskChoice::Zero,
            "one" => MaskChoice::One,
            path => MaskChoice::File(path.into()),
        }
    }

    pub fn load(&self, dims: (usize, usize)) -> Result<MovingMask> {
        match self {
            MaskChoice::Zero => Ok(MovingMask::zeros(dims.0, dims.1)),
            MaskChoice::One => Ok(MovingMask::ones(dims.0, dims.1)),
            MaskChoice::File(p) => {
                let g = png::read_unit(p)?;
                if g.dims() != dims {
                    return Err(Error::parse(p, "size", format!("expected {}x{}", dims.0, dims.1)));
                }
                MovingMask::new(g).map_err(|e| Error::parse(p, "mask", e))
            }
        }
    }
}

/// Volume files: `volume.pfm` (one score layer per step), `counts.pfm`
/// (contributor counts, same layout) and `volume.txt`.
pub fn write_volume(dir: &Path, vol: &CostVolume, keyframe: usize, masked: bool) -> Result<()> {
    let (w, h) = vol.dims();
    let r = vol.range();
    let layer =
        |data: &[f64], i: usize| Grid::from_vec(w, h, data[i * w * h..(i + 1) * w * h].to_vec()).expect("layer size");
    let counts: Vec<f64> = vol.valid_counts().iter().map(|&c| c as f64).collect();
    let scores: Vec<Grid<f64>> = (0..r.steps).map(|i| layer(vol.scores(), i)).collect();
    let count_layers: Vec<Grid<f64>> = (0..r.steps).map(|i| layer(&counts, i)).collect();
    pfm::write_layers(&dir.join("volume.pfm"), &scores)?;
    pfm::write_layers(&dir.join("counts.pfm"), &count_layers)?;
    let mut kv = KeyValues::default();
    kv.push("kind", vol.kind().as_str());
    kv.push("keyframe", keyframe);
    kv.push("masked", masked);
    kv.push("d_min", sig9(r.d_min));
    kv.push("d_max", sig9(r.d_max));
    kv.push("steps", r.steps);
    kv.push("height", h);
    kv.push("width", w);
    crate::io::write_bytes(&dir.join("volume.txt"), kv.encode().as_bytes())
}

/// Reads a volume directory; returns the volume and its keyframe index.
pub fn read_volume(dir: &Path) -> Result<(CostVolume, usize)> {
    let header = dir.join("volume.txt");
    let kv = KeyValues::read(&header)?;
    let kind_s: String = kv.require(&header, "kind")?;
    let kind =
        VolumeKind::parse(&kind_s).ok_or_else(|| Error::parse(&header, "kind", format!("unknown kind `{kind_s}`")))?;
    let keyframe: usize = kv.require(&header, "keyframe")?;
    let range = DepthRange::new(
        kv.require(&header, "d_min")?,
        kv.require(&header, "d_max")?,
        kv.require(&header, "steps")?,
    )
    .map_err(|e| Error::parse(&header, "range", e))?;
    let (w, h): (usize, usize) = (kv.require(&header, "width")?, kv.require(&header, "height")?);
    let flatten = |name: &str| -> Result<Vec<f64>> {
        let path = dir.join(name);
        let layers = pfm::read_layers(&path)?;
        if layers.len() != range.steps || layers[0].dims() != (w, h) {
            return Err(Error::parse(
                &path,
                "layers",
                format!("expected {} layers of {w}x{h}", range.steps),
            ));
        }
        Ok(layers.into_iter().flat_map(Grid::into_vec).collect())
    };
    let scores = flatten("volume.pfm")?;
    let counts = flatten("counts.pfm")?.into_iter().map(|c| c as u32).collect();
    let vol = CostVolume::from_raw(w, h, range, kind, scores, counts)
        .map_err(|e| Error::parse(&dir.join("volume.pfm"), "scores", e))?;
    Ok((vol, keyframe))
}

/// Optionally masked volume of frame `k`.
pub fn costvol(
    b: &Bundle,
    k: usize,
    source: VolumeSource,
    mask: Option<&MaskChoice>,
    cfg: &PipelineConfig,
) -> Result<CostVolume> {
    let vol = cost_volume(b, k, source, cfg)?;
    match mask {
        None => Ok(vol),
        Some(m) => apply_mask(&vol, &m.load(vol.dims())?).context(|| "attenuating volume".into()),
    }
}

/// WTA depth of a volume and the keyframe point cloud.
pub fn depth(vol: &CostVolume, key: &Frame, cfg: &PipelineConfig) -> Result<(InverseDepthMap, Vec<CloudPoint>)> {
    let d = wta_depth(vol);
    let cloud = depth_to_pointcloud(&d, key, cfg.min_confidence).context(|| "point cloud".into())?;
    Ok((d, cloud))
}

pub fn write_depth(dir: &Path, d: &InverseDepthMap, cloud: &[CloudPoint]) -> Result<()> {
    pfm::write(&dir.join("depth.pfm"), &d.values)?;
    pfm::write(&dir.join("confidence.pfm"), &d.confidence)?;
    ply::write(&dir.join("cloud.ply"), cloud)
}

/// Per-frame products of the auxiliary-mask procedure.
#[derive(Debug, Clone)]
pub struct FrameMasks {
    pub temporal_depth: InverseDepthMap,
    pub stereo_depth: InverseDepthMap,
    /// Pixels meeting at least two of the three inconsistency conditions.
    pub moving_pixels: Grid<bool>,
}

/// Temporal and static-stereo WTA depth of frame `k`.
pub fn frame_depths(b: &Bundle, k: usize, cfg: &PipelineConfig) -> Result<(InverseDepthMap, InverseDepthMap)> {
    let t = wta_depth(&cost_volume(b, k, VolumeSource::Temporal, cfg)?);
    let s = wta_depth(&cost_volume(b, k, VolumeSource::Stereo, cfg)?);
    Ok((t, s))
}

pub fn frame_masks(b: &Bundle, k: usize, cfg: &PipelineConfig) -> Result<FrameMasks> {
    let (temporal_depth, stereo_depth) = frame_depths(b, k, cfg)?;
    let set = b.frame_set(k)?;
    let kb = KeyBundle {
        key: &set.key,
        temporal: &set.temporal,
        stereo: Some(&set.stereo),
    };
    let pm = pixel_metrics(&kb, &temporal_depth, &stereo_depth).context(|| format!("mask metrics of frame {k}"))?;
    let moving_pixels = classify_moving_pixels(&pm, &cfg.thresholds).context(|| "classification".into())?;
    Ok(FrameMasks {
        temporal_depth,
        stereo_depth,
        moving_pixels,
    })
}

/// Auxiliary masks of every frame, with the per-frame evidence.
pub fn masks(b: &Bundle, cfg: &PipelineConfig) -> Result<(Vec<FrameMasks>, Vec<MovingMask>)> {
    use rayon::prelude::*;
    let per_frame = (0..b.len())
        .into_par_iter()
        .map(|k| frame_masks(b, k, cfg))
        .collect::<Result<Vec<_>>>()?;
    let evidence = |k: usize| FrameEvidence {
        instances: &b.instances[k],
        moving: &per_frame[k].moving_pixels,
    };
    let aux = (0..b.len())
        .map(|k| {
            let prev = k.checked_sub(1).map(evidence);
            let next = (k + 1 < b.len()).then(|| evidence(k + 1));
            auxiliary_mask(prev, evidence(k), next, &cfg.rules).context(|| format!("auxiliary mask of frame {k}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((per_frame, aux))
}

pub fn write_masks(dir: &Path, per_frame: &[FrameMasks], aux: &[MovingMask], threshold: f64) -> Result<()> {
    for (k, (f, a)) in per_frame.iter().zip(aux).enumerate() {
        let n = frame_name(k);
        png::write_mask(&dir.join(format!("aux/{n}.png")), &a.to_binary(threshold))?;
        png::write_mask(&dir.join(format!("pixels/{n}.png")), &f.moving_pixels)?;
        pfm::write(&dir.join(format!("depth/temporal_{n}.pfm")), &f.temporal_depth.values)?;
        pfm::write(&dir.join(format!("depth/stereo_{n}.pfm")), &f.stereo_depth.values)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    /// Depth loss: photometric, sparse and smoothness terms.
    Depth,
    /// Mask refinement: per-pixel blend of stereo and temporal reprojection
    /// losses plus BCE against the auxiliary mask.
    MaskRefine,
    /// Depth refinement with the moving mask and the static-stereo prior.
    DepthRefine,
}

impl LossVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(LossVariant::Depth),
            "mref" => Ok(LossVariant::MaskRefine),
            "dref" => Ok(LossVariant::DepthRefine),
            other => Err(Error::argument(
                "variant",
                format!("unknown variant `{other}` (depth, mref, dref)"),
            )),
        }
    }
}

/// Inputs of a loss evaluation beyond the bundle.
#[derive(Debug, Clone)]
pub struct LossInputs {
    /// Keyframe inverse depth being scored.
    pub depth: Grid<f64>,
    /// Static-stereo inverse depth; computed by a stereo sweep when absent.
    pub stereo_depth: Option<Grid<f64>>,
    pub mask: MaskChoice,
    /// Auxiliary mask for the refinement BCE; computed when absent.
    pub aux: Option<MovingMask>,
}

pub fn read_inverse_depth(path: &Path, dims: (usize, usize)) -> Result<Grid<f64>> {
    let g = pfm::read(path)?;
    if g.dims() != dims {
        return Err(Error::parse(path, "size", format!("expected {}x{}", dims.0, dims.1)));
    }
    Ok(g)
}

pub fn losses(b: &Bundle, variant: LossVariant, inputs: &LossInputs, cfg: &PipelineConfig) -> Result<LossReport> {
    let k = b.keyframe;
    let si = b.scale_inputs()?;
    let dims = si.dims();
    if inputs.depth.dims() != dims {
        return Err(Error::argument("depth", "size differs from the bundle"));
    }
    let pyr = si.pyramid(cfg.scales).context(|| "image pyramid".into())?;
    let depths = depth_pyramid(&inputs.depth, cfg.scales).context(|| "depth pyramid".into())?;
    if variant == LossVariant::Depth {
        return l_depth(&pyr, &depths, &cfg.weights).context(|| "depth loss".into());
    }
    let stereo = match &inputs.stereo_depth {
        Some(s) => s.clone(),
        None => wta_depth(&cost_volume(b, k, VolumeSource::Stereo, cfg)?).values,
    };
    let stereo_depths = depth_pyramid(&stereo, cfg.scales).context(|| "stereo depth pyramid".into())?;
    let m = inputs.mask.load(dims)?;
    match variant {
        LossVariant::DepthRefine => {
            l_d_ref(&pyr, &depths, &stereo_depths, &m, &cfg.weights).context(|| "depth refinement loss".into())
        }
        LossVariant::MaskRefine => {
            let aux = match &inputs.aux {
                Some(a) => a.clone(),
                None => masks(b, cfg)?.1.swap_remove(k),
            };
            let maps =
                m_ref_maps(&pyr, &depths, &stereo_depths, cfg.weights.lambda).context(|| "reprojection maps".into())?;
            l_m_ref(&m, &maps, &aux).context(|| "mask refinement loss".into())
        }
        LossVariant::Depth => unreachable!("handled above"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckedLoss {
    SelfPhotometric,
    Smooth,
    Sparse,
    DepthRefine,
}

impl CheckedLoss {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(CheckedLoss::SelfPhotometric),
            "smooth" => Ok(CheckedLoss::Smooth),
            "sparse" => Ok(CheckedLoss::Sparse),
            "dref" => Ok(CheckedLoss::DepthRefine),
            other => Err(Error::argument(
                "loss",
                format!("unknown loss `{other}` (self, smooth, sparse, dref)"),
            )),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CheckedLoss::SelfPhotometric => "self",
            CheckedLoss::Smooth => "smooth",
            CheckedLoss::Sparse => "sparse",
            CheckedLoss::DepthRefine => "dref",
        }
    }
}

/// Ground truth scaled by a seeded smooth field, `gt·(1 + a·sin + b·cos)`
/// with 2–6 % amplitudes, so no two neighbors tie and no residual vanishes.
pub fn smooth_perturbation(gt: &Grid<f64>, seed: u64) -> Grid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: f64 = rng.random_range(0.02..0.06);
    let b: f64 = rng.random_range(0.02..0.06);
    let p: f64 = rng.random_range(0.0..6.0);
    Grid::from_fn(gt.width(), gt.height(), |x, y| {
        gt.get(x, y) * (1.0 + a * (0.21 * x as f64 + p).sin() + b * (0.17 * y as f64 + 0.5 * p).cos())
    })
}

fn pick_pixels(safe: &Grid<bool>, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = (0..safe.height())
        .flat_map(|y| (0..safe.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| *safe.get(x, y))
        .collect();
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    all.truncate(n);
    all
}

/// Analytic against finite-difference gradients of one loss at scale
/// `scale` of the bundle keyframe, at a smooth perturbation of the ground
/// truth. Pixels where a finite difference would cross a tie, a sign change
/// of an absolute value or a sampling-cell boundary are excluded.
pub fn gradcheck(b: &Bundle, loss: CheckedLoss, scale: usize, cfg: &PipelineConfig) -> Result<GradCheck> {
    let gt = b.gt_inv_depth[b.keyframe].clone();
    if gt.as_slice().iter().any(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::argument(
            "bundle",
            "keyframe ground truth must be defined at every pixel",
        ));
    }
    let levels = scale + 1;
    let pyr = b.scale_inputs()?.pyramid(levels).context(|| "image pyramid".into())?;
    let inputs: &ScaleInputs = &pyr[scale];
    let d = depth_pyramid(&smooth_perturbation(&gt, cfg.seed), levels)
        .context(|| "depth pyramid".into())?
        .swap_remove(scale);
    let h = cfg.gradcheck_steps[0];
    let steps = &cfg.gradcheck_steps;
    let seed = cfg.seed.wrapping_add(1);
    let lambda = cfg.weights.lambda;
    let ctx = || format!("gradient check of `{}`", loss.as_str());
    match loss {
        CheckedLoss::SelfPhotometric => {
            let g = grad_l_self(inputs, &d, lambda).context(ctx)?;
            let safe = fd_safe_self(&inputs.key, &inputs.sources(), &d, lambda, h).context(ctx)?;
            let px = pick_pixels(&safe, cfg.gradcheck_points, seed);
            grad_check(|x| Ok(l_self(inputs, x, lambda)?.0), &g, &d, &px, steps).context(ctx)
        }
        CheckedLoss::Smooth => {
            let img = &inputs.key.image;
            let g = grad_l_smooth(&d, img).context(ctx)?;
            let px = pick_pixels(&fd_safe_smooth(&d, h), cfg.gradcheck_points, seed);
            grad_check(|x| l_smooth(x, img), &g, &d, &px, steps).context(ctx)
        }
        CheckedLoss::Sparse => {
            let sparse = &inputs.sparse;
            let g = grad_l_sparse(&d, sparse).context(ctx)?;
            // Only pixels the samples read from carry a gradient.
            let safe = fd_safe_sparse(&d, sparse, h);
            let touched = Grid::from_fn(d.width(), d.height(), |x, y| *safe.get(x, y) && *g.get(x, y) != 0.0);
            let px = pick_pixels(&touched, cfg.gradcheck_points, seed);
            grad_check(|x| Ok(l_sparse(x, sparse)?.value), &g, &d, &px, steps).context(ctx)
        }
        CheckedLoss::DepthRefine => {
            let stereo = depth_pyramid(&smooth_perturbation(&gt, cfg.seed.wrapping_add(2)), levels)
                .context(|| "stereo depth pyramid".into())?
                .swap_remove(scale);
            let (w, hh) = d.dims();
            let m = MovingMask::new(Grid::from_fn(w, hh, |x, y| ((x * 5 + y * 3) % 9) as f64 / 8.0)).context(ctx)?;
            let wts = &cfg.weights;
            let g = grad_d_ref(inputs, &d, &stereo, &m, wts, scale).context(ctx)?;
            let stereo_frame = inputs
                .stereo
                .as_ref()
                .ok_or_else(|| Error::argument("bundle", "no stereo frame"))?;
            let all = fd_safe_self(&inputs.key, &inputs.sources(), &d, lambda, h).context(ctx)?;
            let st = fd_safe_self(&inputs.key, &[stereo_frame], &d, lambda, h).context(ctx)?;
            let sm = fd_safe_smooth(&d, h);
            let sp = fd_safe_sparse(&d, &inputs.sparse, h);
            let safe = Grid::from_fn(w, hh, |x, y| {
                *all.get(x, y)
                    && *st.get(x, y)
                    && *sm.get(x, y)
                    && *sp.get(x, y)
                    && (d.get(x, y) - stereo.get(x, y)).abs() > 4.0 * h
            });
            let px = pick_pixels(&safe, cfg.gradcheck_points, seed);
            let f = |x: &Grid<f64>| -> planesweep_core::Result<f64> {
                let terms = planesweep_core::losses::d_ref_terms(inputs, x, &stereo, &m, wts, scale)?.0;
                Ok(LossReport::from_terms(terms, Vec::new()).total)
            };
            grad_check(f, &g, &d, &px, steps).context(ctx)
        }
    }
}

/// Depth metrics of a predicted inverse-depth map against ground-truth
/// inverse depth (pixels with non-positive ground truth are skipped).
pub fn eval_depth(pred: &Grid<f64>, gt_inv: &Grid<f64>, cfg: &PipelineConfig) -> Result<DepthMetrics> {
    let gt_depth = gt_inv.map(|&v| if v > 0.0 { 1.0 / v } else { 0.0 });
    depth_metrics(pred, &gt_depth, cfg.depth_cap, None).context(|| "depth metrics".into())
}

pub fn eval_mask(pred: &Grid<f64>, gt: &Grid<bool>, cfg: &PipelineConfig) -> Result<MaskScores> {
    let m = MovingMask::new(pred.clone()).context(|| "predicted mask".into())?;
    mask_pr(&m, gt, cfg.mask_threshold).context(|| "mask metrics".into())
}

pub fn depth_metric_rows(m: &DepthMetrics) -> Vec<(&'static str, f64)> {
    vec![
        ("abs_rel", m.abs_rel),
        ("sq_rel", m.sq_rel),
        ("rmse", m.rmse),
        ("rmse_log", m.rmse_log),
        ("delta1", m.delta1),
        ("delta2", m.delta2),
        ("delta3", m.delta3),
        ("count", m.count as f64),
    ]
}

pub fn mask_metric_rows(s: &MaskScores) -> Vec<(&'static str, f64)> {
    vec![("precision", s.precision), ("recall", s.recall), ("f1", s.f1)]
}

pub fn write_loss_report(path: &Path, r: &LossReport) -> Result<()> {
    tables::write_losses(path, r)
}
