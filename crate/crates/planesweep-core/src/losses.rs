//! Semi-supervised depth and mask losses with analytic gradients.
//!
//! Depth arguments are inverse-depth grids at the resolution of the scale
//! they belong to. Every loss is evaluated per scale on area-downsampled
//! images, depths and masks; intrinsics follow the pixel-center convention
//! of [`CameraIntrinsics::downsampled`](crate::geometry::CameraIntrinsics::downsampled).
//!
//! Loss terms:
//!
//! ```text
//! e_t(x)      = λ·(1 − SSIM(W_t, I))(x)/2 + (1 − λ)·|W_t(x) − I(x)|     (channel means)
//! L_self      = mean_x min_t e_t(x)
//! L_sparse    = mean over samples |D − D_vo|
//! L_smooth    = mean |∂x d̂|·exp(−|∂x I|) + mean |∂y d̂|·exp(−|∂y I|),  d̂ = D / mean(D)
//! L_depth     = Σ_s L_self + α·L_sparse + β_s·L_smooth,                 β_s = β·2^−s
//! L_m_ref     = Σ_s mean(M·L'^S + (1 − M)·L'^T) + L_mask
//! L_d_ref     = Σ_s (1 − M)-gated self and sparse terms
//!               + M-gated stereo-only self and γ·|D − D^S| terms + β_s·L_smooth
//! ```
//!
//! Reprojection candidates whose warp is invalid anywhere in the 3×3 window
//! are skipped; a pixel with no candidate is left out of the mean.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use crate::error::{Error, Result};
use crate::geometry::{bilinear_sample, relative_pose, warp_point, Frame, SNAP_TOLERANCE};
use crate::grid::{Grid, Image};
use crate::mask::MovingMask;
use crate::math::{self, CompensatedSum};
use crate::photometric::{pe_from_ssim, window, window_valid, WindowStats};

pub const DEFAULT_SCALES: usize = 4;
/// Probabilities are clamped to `[BCE_EPS, 1 − BCE_EPS]` inside the BCE.
pub const BCE_EPS: f64 = 1e-7;
/// Clamp range of the inverse-frequency positive-class weight.
pub const POS_WEIGHT_RANGE: (f64, f64) = (1.0, 100.0);
/// Finite-difference steps used by [`grad_check`] by default.
pub const DEFAULT_FD_STEPS: [f64; 2] = [1e-4, 1e-5];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// SSIM share of the photometric error.
    pub lambda: f64,
    /// Sparse depth weight.
    pub alpha: f64,
    /// Smoothness weight at scale 0; halved per scale.
    pub beta_base: f64,
    /// Static-stereo prior weight.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.85,
            alpha: 4.0,
            beta_base: 1e-3,
            gamma: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::param("lambda", format!("{} not in [0, 1]", self.lambda)));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta_base", self.beta_base),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("{v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    pub fn beta(&self, scale: usize) -> f64 {
        self.beta_base * math::ldexp(1.0, -(scale as i32))
    }
}

/// Sparse inverse-depth observations.
///
/// Samples are full-resolution pixels. At pyramid level `s` a sample sits at
/// the continuous position `(p + 0.5)·2^−s − 0.5` and depth maps are read
/// there by bilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepth {
    width: usize,
    height: usize,
    level: u32,
    samples: Vec<((usize, usize), f64)>,
}

impl SparseDepth {
    pub fn new(width: usize, height: usize, samples: Vec<((usize, usize), f64)>) -> Result<Self> {
        for &((x, y), v) in &samples {
            if x >= width || y >= height {
                return Err(Error::param(
                    "sparse sample",
                    format!("pixel ({x}, {y}) outside {width}×{height}"),
                ));
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("sparse inverse depth {v} at ({x}, {y})")));
            }
        }
        Ok(SparseDepth {
            width,
            height,
            level: 0,
            samples,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        SparseDepth {
            width,
            height,
            level: 0,
            samples: Vec::new(),
        }
    }

    /// Grid size at the current level.
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Full-resolution pixels and inverse depths.
    pub fn samples(&self) -> &[((usize, usize), f64)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Continuous position of sample `i` at the current level.
    pub fn position(&self, i: usize) -> [f64; 2] {
        let ((x, y), _) = self.samples[i];
        let k = math::ldexp(1.0, -(self.level as i32));
        [(x as f64 + 0.5) * k - 0.5, (y as f64 + 0.5) * k - 0.5]
    }

    pub fn downsampled(&self) -> Self {
        SparseDepth {
            width: self.width / 2,
            height: self.height / 2,
            level: self.level + 1,
            samples: self.samples.clone(),
        }
    }

    /// Dense form at full resolution. When two samples share a pixel the
    /// later one wins.
    pub fn to_map(&self) -> (Grid<f64>, Grid<bool>) {
        let (w, h) = (self.width << self.level, self.height << self.level);
        let mut values = Grid::new(w, h, 0.0);
        let mut valid = Grid::new(w, h, false);
        for &((x, y), v) in &self.samples {
            if x < w && y < h {
                values.set(x, y, v);
                valid.set(x, y, true);
            }
        }
        (values, valid)
    }

    // Bilinear corners and weights of sample `i` on the current grid.
    // Positions in the half-pixel border band extrapolate linearly from the
    // edge cell, which keeps affine maps exact.
    fn corners(&self, i: usize) -> [((usize, usize), f64); 4] {
        let [u, v] = self.position(i);
        let axis = |c: f64, n: usize| {
            if n < 2 {
                return (0, 0, 0.0);
            }
            let i0 = (math::floor(c).max(0.0) as usize).min(n - 2);
            (i0, i0 + 1, c - i0 as f64)
        };
        let (x0, x1, a) = axis(u, self.width);
        let (y0, y1, b) = axis(v, self.height);
        [
            ((x0, y0), (1.0 - a) * (1.0 - b)),
            ((x1, y0), a * (1.0 - b)),
            ((x0, y1), (1.0 - a) * b),
            ((x1, y1), a * b),
        ]
    }

    fn interpolate(&self, g: &Grid<f64>, i: usize) -> f64 {
        if self.level == 0 {
            let ((x, y), _) = self.samples[i];
            return *g.get(x, y);
        }
        self.corners(i).iter().map(|&((x, y), w)| w * *g.get(x, y)).sum()
    }
}

/// Per-pixel loss values with validity.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMap {
    pub values: Grid<f64>,
    pub valid: Grid<bool>,
}

impl LossMap {
    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub name: &'static str,
    pub scale: usize,
    pub weight: f64,
    pub value: f64,
}

/// Named loss terms and their weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub terms: Vec<LossTerm>,
    /// `Σ weight · value` over all terms.
    pub total: f64,
    pub warnings: Vec<String>,
}

impl LossReport {
    pub fn from_terms(terms: Vec<LossTerm>, warnings: Vec<String>) -> Self {
        let total = weighted_sum(&terms);
        LossReport { terms, total, warnings }
    }

    pub fn term(&self, name: &str, scale: usize) -> Option<&LossTerm> {
        self.terms.iter().find(|t| t.name == name && t.scale == scale)
    }

    /// Weighted total of the terms at one scale.
    pub fn scale_total(&self, scale: usize) -> f64 {
        let terms: Vec<LossTerm> = self.terms.iter().filter(|t| t.scale == scale).cloned().collect();
        weighted_sum(&terms)
    }
}

fn weighted_sum(terms: &[LossTerm]) -> f64 {
    let mut s = CompensatedSum::default();
    for t in terms {
        s.add(t.weight * t.value);
    }
    s.value()
}

/// Keyframe, reprojection sources and sparse depth at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleInputs {
    pub key: Frame,
    pub temporal: Vec<Frame>,
    pub stereo: Option<Frame>,
    pub sparse: SparseDepth,
}

impl ScaleInputs {
    pub fn new(key: Frame, temporal: Vec<Frame>, stereo: Option<Frame>, sparse: SparseDepth) -> Result<Self> {
        if temporal.is_empty() && stereo.is_none() {
            return Err(Error::param("sources", "need at least one reprojection source"));
        }
        for f in temporal.iter().chain(stereo.iter()) {
            f.image.ensure_dims("reprojection source", key.dims())?;
            if f.image.channels() != key.image.channels() {
                return Err(Error::param("channels", "sources must match the keyframe"));
            }
        }
        if sparse.dims() != key.dims() {
            return Err(Error::dims("sparse depth", key.dims(), sparse.dims()));
        }
        Ok(ScaleInputs {
            key,
            temporal,
            stereo,
            sparse,
        })
    }

    /// Temporal frames followed by the stereo frame.
    pub fn sources(&self) -> Vec<&Frame> {
        self.temporal.iter().chain(self.stereo.iter()).collect()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.key.dims()
    }

    pub fn downsampled(&self) -> Self {
        ScaleInputs {
            key: self.key.downsampled(),
            temporal: self.temporal.iter().map(Frame::downsampled).collect(),
            stereo: self.stereo.as_ref().map(Frame::downsampled),
            sparse: self.sparse.downsampled(),
        }
    }

    /// This input followed by `scales − 1` successively halved copies.
    pub fn pyramid(&self, scales: usize) -> Result<Vec<ScaleInputs>> {
        check_scales(self.dims(), scales)?;
        let mut out = vec![self.clone()];
        for _ in 1..scales {
            let next = out[out.len() - 1].downsampled();
            out.push(next);
        }
        Ok(out)
    }
}

fn check_scales((w, h): (usize, usize), scales: usize) -> Result<()> {
    if scales == 0 {
        return Err(Error::param("scales", "need at least one scale"));
    }
    if (w >> (scales - 1)) == 0 || (h >> (scales - 1)) == 0 {
        return Err(Error::param(
            "scales",
            format!("{w}×{h} is too small for {scales} scales"),
        ));
    }
    Ok(())
}

/// Area-averaged copies of `d`, one per scale.
pub fn depth_pyramid(d: &Grid<f64>, scales: usize) -> Result<Vec<Grid<f64>>> {
    check_scales(d.dims(), scales)?;
    let mut out = vec![d.clone()];
    for _ in 1..scales {
        let next = out[out.len() - 1].downsample2();
        out.push(next);
    }
    Ok(out)
}

/// Mask copies matching a pyramid.
pub fn mask_pyramid(m: &MovingMask, scales: usize) -> Result<Vec<MovingMask>> {
    check_scales(m.dims(), scales)?;
    let mut out = vec![m.clone()];
    for _ in 1..scales {
        let next = out[out.len() - 1].downsampled();
        out.push(next);
    }
    Ok(out)
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

// One source warped with a per-pixel depth, plus what the gradient needs.
struct SourceEval {
    warped: Vec<Grid<f64>>,
    // ∂W_c/∂D at each pixel.
    dwarp: Vec<Grid<f64>>,
    // (u, v, ∂u/∂D, ∂v/∂D) when the point projects in front of the camera.
    coords: Grid<Option<[f64; 4]>>,
    sample_ok: Grid<bool>,
    loss: Grid<f64>,
    valid: Grid<bool>,
}

fn eval_source(key: &Frame, src: &Frame, d: &Grid<f64>, lambda: f64) -> Result<SourceEval> {
    d.ensure_dims("inverse depth vs keyframe", key.dims())?;
    src.image.ensure_dims("reprojection source", key.dims())?;
    let channels = key.image.channels();
    if src.image.channels() != channels {
        return Err(Error::param("channels", "source does not match the keyframe"));
    }
    let (w, h) = key.dims();
    let rel = relative_pose(src, key);
    let mut warped: Vec<Grid<f64>> = (0..channels).map(|_| Grid::new(w, h, 0.0)).collect();
    let mut dwarp: Vec<Grid<f64>> = (0..channels).map(|_| Grid::new(w, h, 0.0)).collect();
    let mut coords = Grid::new(w, h, None);
    let mut sample_ok = Grid::new(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let Some(p) = warp_point(&key.intrinsics, &src.intrinsics, &rel, x as f64, y as f64, *d.get(x, y)) else {
                continue;
            };
            coords.set(x, y, Some([p.u, p.v, p.du_dd, p.dv_dd]));
            let samples: Vec<_> = (0..channels)
                .map(|c| bilinear_sample(src.image.plane(c), p.u, p.v))
                .collect();
            if samples.iter().all(|s| s.valid) {
                sample_ok.set(x, y, true);
                for (c, s) in samples.iter().enumerate() {
                    warped[c].set(x, y, s.value);
                    dwarp[c].set(x, y, s.du * p.du_dd + s.dv * p.dv_dd);
                }
            }
        }
    }
    let valid = Grid::from_fn(w, h, |x, y| window_valid(&sample_ok, x, y));
    let cf = channels as f64;
    let loss = Grid::from_fn(w, h, |x, y| {
        if !*valid.get(x, y) {
            return 0.0;
        }
        let win = window(x, y, w, h);
        let mut ssim = 0.0;
        let mut l1 = 0.0;
        for (c, wc) in warped.iter().enumerate() {
            let kp = key.image.plane(c);
            ssim += WindowStats::gather(wc, kp, win).ssim();
            l1 += math::abs(*wc.get(x, y) - *kp.get(x, y));
        }
        lambda * pe_from_ssim(ssim / cf) + (1.0 - lambda) * l1 / cf
    });
    Ok(SourceEval {
        warped,
        dwarp,
        coords,
        sample_ok,
        loss,
        valid,
    })
}

/// Per-pixel minimum photometric error over reprojection sources.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricLoss {
    pub map: LossMap,
    /// Index into the source list of the minimizing source.
    pub choice: Grid<Option<usize>>,
}

fn select_min(evals: &[SourceEval], (w, h): (usize, usize)) -> PhotometricLoss {
    let mut values = Grid::new(w, h, 0.0);
    let mut choice = Grid::new(w, h, None);
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(usize, f64)> = None;
            for (s, ev) in evals.iter().enumerate() {
                if !*ev.valid.get(x, y) {
                    continue;
                }
                let e = *ev.loss.get(x, y);
                if best.is_none_or(|(_, b)| e < b) {
                    best = Some((s, e));
                }
            }
            if let Some((s, e)) = best {
                values.set(x, y, e);
                choice.set(x, y, Some(s));
            }
        }
    }
    let valid = choice.map(|c| c.is_some());
    PhotometricLoss {
        map: LossMap { values, valid },
        choice,
    }
}

fn evaluate(key: &Frame, sources: &[&Frame], d: &Grid<f64>, lambda: f64) -> Result<(Vec<SourceEval>, PhotometricLoss)> {
    if sources.is_empty() {
        return Err(Error::param("sources", "need at least one reprojection source"));
    }
    let evals = sources
        .iter()
        .map(|s| eval_source(key, s, d, lambda))
        .collect::<Result<Vec<_>>>()?;
    let loss = select_min(&evals, key.dims());
    Ok((evals, loss))
}

/// Per-pixel minimum of `e_t` over `sources` with inverse depth `d`.
pub fn photometric_loss(key: &Frame, sources: &[&Frame], d: &Grid<f64>, lambda: f64) -> Result<PhotometricLoss> {
    Ok(evaluate(key, sources, d, lambda)?.1)
}

// Σ ω·e over valid pixels divided by the valid-pixel count.
fn weighted_mean(map: &LossMap, weights: Option<&Grid<f64>>) -> Option<(f64, usize)> {
    let mut sum = CompensatedSum::default();
    let mut n = 0usize;
    for (i, (&e, &ok)) in map.values.as_slice().iter().zip(map.valid.as_slice()).enumerate() {
        if !ok {
            continue;
        }
        n += 1;
        match weights {
            Some(wt) => sum.add(wt.as_slice()[i] * e),
            None => sum.add(e),
        }
    }
    (n > 0).then(|| (sum.value() / n as f64, n))
}

/// Photometric self-supervised loss over temporal and stereo sources.
pub fn l_self(inputs: &ScaleInputs, d: &Grid<f64>, lambda: f64) -> Result<(f64, LossMap)> {
    let loss = photometric_loss(&inputs.key, &inputs.sources(), d, lambda)?;
    let (v, _) = weighted_mean(&loss.map, None).ok_or(Error::NoValidPixels("photometric loss"))?;
    Ok((v, loss.map))
}

// Gradient of Σ ω·min_t e_t / N with respect to every D(z).
fn self_gradient(
    key: &Frame,
    evals: &[SourceEval],
    loss: &PhotometricLoss,
    lambda: f64,
    weights: Option<&Grid<f64>>,
) -> Grid<f64> {
    let (w, h) = key.dims();
    let mut g = Grid::new(w, h, 0.0);
    let n = loss.map.valid.as_slice().iter().filter(|&&v| v).count();
    if n == 0 {
        return g;
    }
    let channels = key.image.channels();
    let cf = channels as f64;
    for y in 0..h {
        for x in 0..w {
            let Some(s) = *loss.choice.get(x, y) else {
                continue;
            };
            let omega = weights.map_or(1.0, |wt| *wt.get(x, y));
            if omega == 0.0 {
                continue;
            }
            let coeff = omega / n as f64;
            let ev = &evals[s];
            let win = window(x, y, w, h);
            let ssim_sum: f64 = (0..channels)
                .map(|c| WindowStats::gather(&ev.warped[c], key.image.plane(c), win).ssim())
                .sum();
            // Outside the clamp range the SSIM part is flat.
            let ssim_active = {
                let raw = (1.0 - ssim_sum / cf) * 0.5;
                (0.0..=1.0).contains(&raw)
            };
            for c in 0..channels {
                let wp = &ev.warped[c];
                let kp = key.image.plane(c);
                if ssim_active {
                    let stats = WindowStats::gather(wp, kp, win);
                    let (x0, x1, y0, y1) = win;
                    for zy in y0..=y1 {
                        for zx in x0..=x1 {
                            let ds = stats.dssim_da(*wp.get(zx, zy), *kp.get(zx, zy));
                            *g.get_mut(zx, zy) += coeff * lambda * (-0.5 / cf) * ds * *ev.dwarp[c].get(zx, zy);
                        }
                    }
                }
                let r = *wp.get(x, y) - *kp.get(x, y);
                *g.get_mut(x, y) += coeff * (1.0 - lambda) / cf * sign(r) * *ev.dwarp[c].get(x, y);
            }
        }
    }
    g
}

/// ∂L_self/∂D.
pub fn grad_l_self(inputs: &ScaleInputs, d: &Grid<f64>, lambda: f64) -> Result<Grid<f64>> {
    let (evals, loss) = evaluate(&inputs.key, &inputs.sources(), d, lambda)?;
    if !loss.map.valid.as_slice().iter().any(|&v| v) {
        return Err(Error::NoValidPixels("photometric loss"));
    }
    Ok(self_gradient(&inputs.key, &evals, &loss, lambda, None))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseLoss {
    pub value: f64,
    /// Set when there were no samples; the value is then 0.
    pub empty: bool,
}

fn sparse_weighted(d: &Grid<f64>, sparse: &SparseDepth, weights: Option<&Grid<f64>>) -> f64 {
    if sparse.is_empty() {
        return 0.0;
    }
    let mut sum = CompensatedSum::default();
    for (i, &(_, v)) in sparse.samples().iter().enumerate() {
        let r = math::abs(sparse.interpolate(d, i) - v);
        match weights {
            Some(wt) => sum.add(sparse.interpolate(wt, i) * r),
            None => sum.add(r),
        }
    }
    sum.value() / sparse.len() as f64
}

/// Mean absolute inverse-depth error at the sample positions.
pub fn l_sparse(d: &Grid<f64>, sparse: &SparseDepth) -> Result<SparseLoss> {
    d.ensure_dims("inverse depth vs sparse depth", sparse.dims())?;
    Ok(SparseLoss {
        value: sparse_weighted(d, sparse, None),
        empty: sparse.is_empty(),
    })
}

fn sparse_gradient(d: &Grid<f64>, sparse: &SparseDepth, weights: Option<&Grid<f64>>) -> Grid<f64> {
    let (w, h) = d.dims();
    let mut g = Grid::new(w, h, 0.0);
    if sparse.is_empty() {
        return g;
    }
    let n = sparse.len() as f64;
    for (i, &(_, v)) in sparse.samples().iter().enumerate() {
        let omega = weights.map_or(1.0, |wt| sparse.interpolate(wt, i));
        let s = omega * sign(sparse.interpolate(d, i) - v) / n;
        if sparse.level() == 0 {
            let ((x, y), _) = sparse.samples()[i];
            *g.get_mut(x, y) += s;
        } else {
            for ((x, y), wc) in sparse.corners(i) {
                *g.get_mut(x, y) += s * wc;
            }
        }
    }
    g
}

/// ∂L_sparse/∂D: `sign(D − D_vo)/N` at sample pixels, spread over the
/// interpolation corners at coarse levels.
pub fn grad_l_sparse(d: &Grid<f64>, sparse: &SparseDepth) -> Result<Grid<f64>> {
    d.ensure_dims("inverse depth vs sparse depth", sparse.dims())?;
    Ok(sparse_gradient(d, sparse, None))
}

// exp(−|∂I|) along x (defined for x < w−1) and along y (for y < h−1),
// using the channel mean of the absolute differences.
fn edge_weights(image: &Image) -> (Grid<f64>, Grid<f64>) {
    let (w, h) = image.dims();
    let cf = image.channels() as f64;
    let grad = |x0: usize, y0: usize, x1: usize, y1: usize| {
        let s: f64 = image
            .planes()
            .iter()
            .map(|p| math::abs(*p.get(x1, y1) - *p.get(x0, y0)))
            .sum();
        math::exp(-s / cf)
    };
    let ex = Grid::from_fn(w, h, |x, y| if x + 1 < w { grad(x, y, x + 1, y) } else { 0.0 });
    let ey = Grid::from_fn(w, h, |x, y| if y + 1 < h { grad(x, y, x, y + 1) } else { 0.0 });
    (ex, ey)
}

fn depth_mean(d: &Grid<f64>) -> Result<f64> {
    let m = d.mean();
    if !(m != 0.0 && m.is_finite()) {
        return Err(Error::Domain(format!("mean inverse depth is {m}")));
    }
    Ok(m)
}

/// Edge-aware smoothness of the mean-normalized inverse depth.
pub fn l_smooth(d: &Grid<f64>, image: &Image) -> Result<f64> {
    image.ensure_dims("smoothness image", d.dims())?;
    let m = depth_mean(d)?;
    let (w, h) = d.dims();
    let (ex, ey) = edge_weights(image);
    let mut sx = CompensatedSum::default();
    let mut sy = CompensatedSum::default();
    for y in 0..h {
        for x in 0..w {
            let c = *d.get(x, y) / m;
            if x + 1 < w {
                sx.add(math::abs(*d.get(x + 1, y) / m - c) * *ex.get(x, y));
            }
            if y + 1 < h {
                sy.add(math::abs(*d.get(x, y + 1) / m - c) * *ey.get(x, y));
            }
        }
    }
    let mut total = 0.0;
    if w > 1 {
        total += sx.value() / ((w - 1) * h) as f64;
    }
    if h > 1 {
        total += sy.value() / (w * (h - 1)) as f64;
    }
    Ok(total)
}

/// ∂L_smooth/∂D including the dependence of the normalizer on D.
pub fn grad_l_smooth(d: &Grid<f64>, image: &Image) -> Result<Grid<f64>> {
    image.ensure_dims("smoothness image", d.dims())?;
    let m = depth_mean(d)?;
    let (w, h) = d.dims();
    let (ex, ey) = edge_weights(image);
    // Gradient with respect to the normalized map d̂.
    let mut gh = Grid::new(w, h, 0.0);
    let nx = if w > 1 { 1.0 / ((w - 1) * h) as f64 } else { 0.0 };
    let ny = if h > 1 { 1.0 / (w * (h - 1)) as f64 } else { 0.0 };
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                let s = sign(*d.get(x + 1, y) - *d.get(x, y)) * *ex.get(x, y) * nx;
                *gh.get_mut(x + 1, y) += s;
                *gh.get_mut(x, y) -= s;
            }
            if y + 1 < h {
                let s = sign(*d.get(x, y + 1) - *d.get(x, y)) * *ey.get(x, y) * ny;
                *gh.get_mut(x, y + 1) += s;
                *gh.get_mut(x, y) -= s;
            }
        }
    }
    let mut dot = CompensatedSum::default();
    for (a, b) in gh.as_slice().iter().zip(d.as_slice()) {
        dot.add(a * b);
    }
    let n = (w * h) as f64;
    let shared = dot.value() / (m * m * n);
    Ok(gh.map(|&g| g / m - shared))
}

fn check_depth(inputs: &ScaleInputs, d: &Grid<f64>, what: &'static str) -> Result<()> {
    d.ensure_dims(what, inputs.dims())
}

/// Depth-loss terms at one scale: `self`, `sparse` (weight α) and `smooth`
/// (weight β_s).
pub fn depth_terms(
    inputs: &ScaleInputs,
    d: &Grid<f64>,
    weights: &LossWeights,
    scale: usize,
) -> Result<(Vec<LossTerm>, Vec<String>)> {
    check_depth(inputs, d, "inverse depth")?;
    let (self_value, _) = l_self(inputs, d, weights.lambda)?;
    let sparse = l_sparse(d, &inputs.sparse)?;
    let smooth = l_smooth(d, &inputs.key.image)?;
    let mut warnings = Vec::new();
    if sparse.empty {
        warnings.push(format!("scale {scale}: no sparse depth samples"));
    }
    Ok((
        vec![
            LossTerm {
                name: "self",
                scale,
                weight: 1.0,
                value: self_value,
            },
            LossTerm {
                name: "sparse",
                scale,
                weight: weights.alpha,
                value: sparse.value,
            },
            LossTerm {
                name: "smooth",
                scale,
                weight: weights.beta(scale),
                value: smooth,
            },
        ],
        warnings,
    ))
}

fn check_pyramid(pyramid: &[ScaleInputs], depths: &[&[Grid<f64>]]) -> Result<()> {
    if pyramid.is_empty() {
        return Err(Error::param("scales", "need at least one scale"));
    }
    for set in depths {
        if set.len() != pyramid.len() {
            return Err(Error::param(
                "depth pyramid",
                format!("{} levels for {} scales", set.len(), pyramid.len()),
            ));
        }
        for (inputs, d) in pyramid.iter().zip(set.iter()) {
            check_depth(inputs, d, "inverse depth at scale")?;
        }
    }
    Ok(())
}

/// Multi-scale semi-supervised depth loss.
pub fn l_depth(pyramid: &[ScaleInputs], depths: &[Grid<f64>], weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    check_pyramid(pyramid, &[depths])?;
    let mut terms = Vec::new();
    let mut warnings = Vec::new();
    for (s, (inputs, d)) in pyramid.iter().zip(depths).enumerate() {
        let (t, w) = depth_terms(inputs, d, weights, s)?;
        terms.extend(t);
        warnings.extend(w);
    }
    Ok(LossReport::from_terms(terms, warnings))
}

/// Inverse-frequency positive weight `negatives / positives` clamped to
/// [`POS_WEIGHT_RANGE`]; 1 without positives.
pub fn positive_weight(aux: &Grid<bool>) -> f64 {
    let pos = aux.as_slice().iter().filter(|&&b| b).count();
    if pos == 0 {
        return 1.0;
    }
    let neg = aux.len() - pos;
    (neg as f64 / pos as f64).clamp(POS_WEIGHT_RANGE.0, POS_WEIGHT_RANGE.1)
}

fn bce_setup(pred: &MovingMask, aux: &MovingMask, pos_weight: Option<f64>) -> Result<(Grid<bool>, f64)> {
    aux.values().ensure_dims("auxiliary mask", pred.dims())?;
    let target = aux.to_binary(0.5);
    let w = match pos_weight {
        Some(w) if w > 0.0 && w.is_finite() => w,
        Some(w) => return Err(Error::param("pos_weight", format!("{w} must be positive"))),
        None => positive_weight(&target),
    };
    Ok((target, w))
}

/// Weighted binary cross entropy of the predicted mask against the
/// auxiliary mask (binarized at 0.5). `pos_weight = None` selects
/// [`positive_weight`].
pub fn l_mask(pred: &MovingMask, aux: &MovingMask, pos_weight: Option<f64>) -> Result<f64> {
    let (target, wp) = bce_setup(pred, aux, pos_weight)?;
    let mut sum = CompensatedSum::default();
    for (&p, &y) in pred.values().as_slice().iter().zip(target.as_slice()) {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        sum.add(if y { -wp * math::ln(p) } else { -math::ln(1.0 - p) });
    }
    Ok(sum.value() / target.len() as f64)
}

/// ∂L_mask/∂M (zero where the clamp is active).
pub fn grad_l_mask(pred: &MovingMask, aux: &MovingMask, pos_weight: Option<f64>) -> Result<Grid<f64>> {
    let (target, wp) = bce_setup(pred, aux, pos_weight)?;
    let n = target.len() as f64;
    let (w, h) = pred.dims();
    Ok(Grid::from_fn(w, h, |x, y| {
        let p = *pred.values().get(x, y);
        if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
            return 0.0;
        }
        if *target.get(x, y) {
            -wp / (p * n)
        } else {
            1.0 / ((1.0 - p) * n)
        }
    }))
}

/// Per-scale `(L'^S, L'^T)` maps for mask refinement: the stereo-only
/// photometric error under the frozen stereo depth and the temporal minimum
/// under the frozen temporal depth.
pub fn m_ref_maps(
    pyramid: &[ScaleInputs],
    depths: &[Grid<f64>],
    stereo_depths: &[Grid<f64>],
    lambda: f64,
) -> Result<Vec<(LossMap, LossMap)>> {
    check_pyramid(pyramid, &[depths, stereo_depths])?;
    pyramid
        .iter()
        .zip(depths.iter().zip(stereo_depths))
        .map(|(inputs, (d, ds))| {
            let stereo = inputs
                .stereo
                .as_ref()
                .ok_or(Error::param("stereo", "mask refinement needs a static stereo frame"))?;
            if inputs.temporal.is_empty() {
                return Err(Error::param("temporal", "mask refinement needs temporal frames"));
            }
            let temporal: Vec<&Frame> = inputs.temporal.iter().collect();
            let ls = photometric_loss(&inputs.key, &[stereo], ds, lambda)?.map;
            let lt = photometric_loss(&inputs.key, &temporal, d, lambda)?.map;
            Ok((ls, lt))
        })
        .collect()
}

/// Per-pixel mask-refinement loss `m·L'^S + (1 − m)·L'^T`.
#[inline]
pub fn m_ref_pixel(m: f64, ls: f64, lt: f64) -> f64 {
    m * ls + (1.0 - m) * lt
}

fn m_ref_setup(m: &MovingMask, maps: &[(LossMap, LossMap)]) -> Result<Vec<MovingMask>> {
    if maps.is_empty() {
        return Err(Error::param("scales", "need at least one scale"));
    }
    let masks = mask_pyramid(m, maps.len())?;
    for (mm, (ls, lt)) in masks.iter().zip(maps) {
        ls.values.ensure_dims("stereo loss map", mm.dims())?;
        lt.values.ensure_dims("temporal loss map", mm.dims())?;
    }
    Ok(masks)
}

fn both_valid<'a>(ls: &'a LossMap, lt: &'a LossMap) -> impl Iterator<Item = usize> + 'a {
    (0..ls.valid.len()).filter(move |&i| ls.valid.as_slice()[i] && lt.valid.as_slice()[i])
}

/// Mask refinement loss: per-scale means over pixels valid in both maps,
/// plus the mask BCE against `aux` at full resolution.
pub fn l_m_ref(m: &MovingMask, maps: &[(LossMap, LossMap)], aux: &MovingMask) -> Result<LossReport> {
    let masks = m_ref_setup(m, maps)?;
    let mut terms = Vec::new();
    for (s, (mm, (ls, lt))) in masks.iter().zip(maps).enumerate() {
        let mut sum = CompensatedSum::default();
        let mut n = 0usize;
        for i in both_valid(ls, lt) {
            sum.add(m_ref_pixel(
                mm.values().as_slice()[i],
                ls.values.as_slice()[i],
                lt.values.as_slice()[i],
            ));
            n += 1;
        }
        if n == 0 {
            return Err(Error::NoValidPixels("mask refinement loss"));
        }
        terms.push(LossTerm {
            name: "m_ref",
            scale: s,
            weight: 1.0,
            value: sum.value() / n as f64,
        });
    }
    terms.push(LossTerm {
        name: "mask",
        scale: 0,
        weight: 1.0,
        value: l_mask(m, aux, None)?,
    });
    Ok(LossReport::from_terms(terms, Vec::new()))
}

/// ∂L_m_ref/∂M at full resolution, chained through the area pyramid.
pub fn grad_l_m_ref(m: &MovingMask, maps: &[(LossMap, LossMap)], aux: &MovingMask) -> Result<Grid<f64>> {
    m_ref_setup(m, maps)?;
    let mut g = grad_l_mask(m, aux, None)?;
    let (w, h) = m.dims();
    for (s, (ls, lt)) in maps.iter().enumerate() {
        let n = both_valid(ls, lt).count();
        if n == 0 {
            return Err(Error::NoValidPixels("mask refinement loss"));
        }
        let (ws, hs) = ls.dims();
        let area = math::ldexp(1.0, -2 * s as i32);
        for y in 0..h {
            for x in 0..w {
                let (xs, ys) = (x >> s, y >> s);
                if xs >= ws || ys >= hs || !(*ls.valid.get(xs, ys) && *lt.valid.get(xs, ys)) {
                    continue;
                }
                *g.get_mut(x, y) += area * (*ls.values.get(xs, ys) - *lt.values.get(xs, ys)) / n as f64;
            }
        }
    }
    Ok(g)
}

struct DRef {
    terms: Vec<LossTerm>,
    warnings: Vec<String>,
}

fn d_ref_eval(
    inputs: &ScaleInputs,
    d: &Grid<f64>,
    d_stereo: &Grid<f64>,
    m: &MovingMask,
    weights: &LossWeights,
    scale: usize,
    grad: Option<&mut Grid<f64>>,
) -> Result<DRef> {
    check_depth(inputs, d, "inverse depth")?;
    check_depth(inputs, d_stereo, "stereo inverse depth")?;
    m.values().ensure_dims("moving mask", inputs.dims())?;
    let mv = m.values();
    let keep = mv.map(|&p| 1.0 - p);
    let mut warnings = Vec::new();

    let (evals, loss) = evaluate(&inputs.key, &inputs.sources(), d, weights.lambda)?;
    let (self_value, _) = weighted_mean(&loss.map, Some(&keep)).ok_or(Error::NoValidPixels("photometric loss"))?;
    let sparse_value = sparse_weighted(d, &inputs.sparse, Some(&keep));
    if inputs.sparse.is_empty() {
        warnings.push(format!("scale {scale}: no sparse depth samples"));
    }
    let smooth = l_smooth(d, &inputs.key.image)?;

    let any_moving = mv.as_slice().iter().any(|&p| p != 0.0);
    let mut stereo_value = 0.0;
    let mut stereo_eval = None;
    match &inputs.stereo {
        Some(stereo) => {
            let (ev, sl) = evaluate(&inputs.key, &[stereo], d, weights.lambda)?;
            match weighted_mean(&sl.map, Some(mv)) {
                Some((v, _)) => stereo_value = v,
                None => warnings.push(format!("scale {scale}: no valid static stereo pixels")),
            }
            stereo_eval = Some((ev, sl));
        }
        None if any_moving => {
            return Err(Error::param("stereo", "a non-zero mask needs a static stereo frame"));
        }
        None => {}
    }
    let mut prior = CompensatedSum::default();
    for i in 0..mv.len() {
        prior.add(mv.as_slice()[i] * math::abs(d.as_slice()[i] - d_stereo.as_slice()[i]));
    }
    let prior_value = prior.value() / mv.len() as f64;

    if let Some(g) = grad {
        let n = mv.len() as f64;
        let parts = [
            self_gradient(&inputs.key, &evals, &loss, weights.lambda, Some(&keep)),
            sparse_gradient(d, &inputs.sparse, Some(&keep)).map(|v| weights.alpha * v),
            grad_l_smooth(d, &inputs.key.image)?.map(|v| weights.beta(scale) * v),
            Grid::from_fn(d.width(), d.height(), |x, y| {
                weights.gamma * *mv.get(x, y) * sign(*d.get(x, y) - *d_stereo.get(x, y)) / n
            }),
        ];
        for p in parts.iter() {
            for (a, b) in g.as_mut_slice().iter_mut().zip(p.as_slice()) {
                *a += b;
            }
        }
        if let Some((ev, sl)) = &stereo_eval {
            let sg = self_gradient(&inputs.key, ev, sl, weights.lambda, Some(mv));
            for (a, b) in g.as_mut_slice().iter_mut().zip(sg.as_slice()) {
                *a += b;
            }
        }
    }

    let term = |name, weight, value| LossTerm {
        name,
        scale,
        weight,
        value,
    };
    Ok(DRef {
        terms: vec![
            term("self", 1.0, self_value),
            term("sparse", weights.alpha, sparse_value),
            term("stereo_self", 1.0, stereo_value),
            term("stereo_prior", weights.gamma, prior_value),
            term("smooth", weights.beta(scale), smooth),
        ],
        warnings,
    })
}

/// Depth refinement terms at one scale. With `m ≡ 0` the `self`, `sparse`
/// and `smooth` terms equal those of [`depth_terms`] and the two stereo
/// terms vanish.
///
/// Normalizers: `self` divides by the number of pixels with a valid
/// reprojection candidate, `sparse` by the sample count, `stereo_self` by
/// the number of valid static-stereo pixels and `stereo_prior` by the pixel
/// count.
pub fn d_ref_terms(
    inputs: &ScaleInputs,
    d: &Grid<f64>,
    d_stereo: &Grid<f64>,
    m: &MovingMask,
    weights: &LossWeights,
    scale: usize,
) -> Result<(Vec<LossTerm>, Vec<String>)> {
    let r = d_ref_eval(inputs, d, d_stereo, m, weights, scale, None)?;
    Ok((r.terms, r.warnings))
}

/// Gradient of the weighted sum of [`d_ref_terms`] with respect to `d`.
pub fn grad_d_ref(
    inputs: &ScaleInputs,
    d: &Grid<f64>,
    d_stereo: &Grid<f64>,
    m: &MovingMask,
    weights: &LossWeights,
    scale: usize,
) -> Result<Grid<f64>> {
    let mut g = Grid::new(d.width(), d.height(), 0.0);
    d_ref_eval(inputs, d, d_stereo, m, weights, scale, Some(&mut g))?;
    Ok(g)
}

/// Multi-scale depth refinement loss; `m` is at full resolution.
pub fn l_d_ref(
    pyramid: &[ScaleInputs],
    depths: &[Grid<f64>],
    stereo_depths: &[Grid<f64>],
    m: &MovingMask,
    weights: &LossWeights,
) -> Result<LossReport> {
    weights.validate()?;
    check_pyramid(pyramid, &[depths, stereo_depths])?;
    let masks = mask_pyramid(m, pyramid.len())?;
    let mut terms = Vec::new();
    let mut warnings = Vec::new();
    for (s, inputs) in pyramid.iter().enumerate() {
        let (t, w) = d_ref_terms(inputs, &depths[s], &stereo_depths[s], &masks[s], weights, s)?;
        terms.extend(t);
        warnings.extend(w);
    }
    Ok(LossReport::from_terms(terms, warnings))
}

/// Outcome of a finite-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest over pixels of the pixel's best agreement over step sizes.
    pub max_rel_error: f64,
    /// Worst value per step size, in the order given.
    pub per_step: Vec<(f64, f64)>,
    pub checked: usize,
    pub worst_pixel: Option<(usize, usize)>,
}

/// Compares `analytic` with central differences of `f` around `point` at
/// each pixel of `pixels` and each step in `steps`.
///
/// The relative error is `|a − n| / max(|a|, |n|, floor)` with
/// `floor = max(1e−10, 1e−3 · rms(analytic))`, so pixels whose gradient is
/// negligible next to the rest of the map do not dominate the result.
///
/// A pixel's error is the smallest over `steps`: a coarse step carries
/// truncation error of order `h²·f‴`, which is large on low-contrast SSIM
/// windows, and a fine one carries rounding error, so one agreeing step
/// confirms the analytic value. `per_step` keeps the per-step maxima.
pub fn grad_check<F>(
    mut f: F,
    analytic: &Grid<f64>,
    point: &Grid<f64>,
    pixels: &[(usize, usize)],
    steps: &[f64],
) -> Result<GradCheck>
where
    F: FnMut(&Grid<f64>) -> Result<f64>,
{
    analytic.ensure_dims("analytic gradient", point.dims())?;
    if steps.is_empty() || steps.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::param("steps", "need positive finite-difference steps"));
    }
    let mut sq = CompensatedSum::default();
    for g in analytic.as_slice() {
        sq.add(g * g);
    }
    let rms = math::sqrt(sq.value() / analytic.len().max(1) as f64);
    let floor = (1e-3 * rms).max(1e-10);
    let mut work = point.clone();
    let mut step_max = vec![0.0f64; steps.len()];
    let mut worst: (f64, Option<(usize, usize)>) = (0.0, None);
    for &(x, y) in pixels {
        let orig = *point.get(x, y);
        let a = *analytic.get(x, y);
        let mut best = f64::INFINITY;
        for (k, &h) in steps.iter().enumerate() {
            work.set(x, y, orig + h);
            let fp = f(&work)?;
            work.set(x, y, orig - h);
            let fm = f(&work)?;
            work.set(x, y, orig);
            let numeric = (fp - fm) / (2.0 * h);
            let rel = math::abs(a - numeric) / math::abs(a).max(math::abs(numeric)).max(floor);
            step_max[k] = step_max[k].max(rel);
            best = best.min(rel);
        }
        if worst.1.is_none() || best > worst.0 {
            worst = (best, Some((x, y)));
        }
    }
    Ok(GradCheck {
        max_rel_error: worst.0,
        per_step: steps.iter().copied().zip(step_max).collect(),
        checked: pixels.len(),
        worst_pixel: worst.1,
    })
}

/// Pixels where the photometric loss is differentiable within `±h` of `d`:
/// no bilinear sample of the pixel crosses a cell boundary or the image
/// border, no L1 residual changes sign, and no per-pixel minimum in the
/// windows the pixel belongs to can switch sources.
pub fn fd_safe_self(key: &Frame, sources: &[&Frame], d: &Grid<f64>, lambda: f64, h: f64) -> Result<Grid<bool>> {
    let (evals, loss) = evaluate(key, sources, d, lambda)?;
    let (w, hgt) = key.dims();
    let channels = key.image.channels();
    let cf = channels as f64;
    let reach = 4.0 * h;
    // A coordinate that does not move with depth cannot cross a cell edge.
    let frac_ok = |c: f64, dc: f64| {
        let dist = math::abs(c - math::round(c));
        dc == 0.0 || dist > reach * math::abs(dc) + 2.0 * SNAP_TOLERANCE
    };
    Ok(Grid::from_fn(w, hgt, |zx, zy| {
        for ev in &evals {
            if let Some([u, v, du, dv]) = *ev.coords.get(zx, zy) {
                if !frac_ok(u, du) || !frac_ok(v, dv) {
                    return false;
                }
            }
            if *ev.sample_ok.get(zx, zy) {
                for c in 0..channels {
                    let r = *ev.warped[c].get(zx, zy) - *key.image.plane(c).get(zx, zy);
                    if math::abs(r) <= reach * math::abs(*ev.dwarp[c].get(zx, zy)) + 1e-12 {
                        return false;
                    }
                }
            }
        }
        // Every window containing z: the minimum must be stable.
        let (x0, x1, y0, y1) = window(zx, zy, w, hgt);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let Some(best) = *loss.choice.get(x, y) else {
                    continue;
                };
                let win = window(x, y, w, hgt);
                let mut slope = 0.0;
                for ev in evals.iter().filter(|ev| *ev.valid.get(x, y)) {
                    for c in 0..channels {
                        let stats = WindowStats::gather(&ev.warped[c], key.image.plane(c), win);
                        let ds = stats.dssim_da(*ev.warped[c].get(zx, zy), *key.image.plane(c).get(zx, zy));
                        slope +=
                            (lambda * 0.5 * math::abs(ds) + (1.0 - lambda)) / cf * math::abs(*ev.dwarp[c].get(zx, zy));
                    }
                }
                let e_best = *evals[best].loss.get(x, y);
                for (s, ev) in evals.iter().enumerate() {
                    if s != best && *ev.valid.get(x, y) && *ev.loss.get(x, y) - e_best <= reach * slope + 1e-12 {
                        return false;
                    }
                }
            }
        }
        *loss.map.valid.get(zx, zy) || evals.iter().all(|ev| !*ev.sample_ok.get(zx, zy))
    }))
}

/// Pixels whose forward differences with all four neighbors keep their
/// sign within `±h`.
pub fn fd_safe_smooth(d: &Grid<f64>, h: f64) -> Grid<bool> {
    let (w, hgt) = d.dims();
    Grid::from_fn(w, hgt, |x, y| {
        let c = *d.get(x, y);
        let far = |o: f64| math::abs(o - c) > 4.0 * h;
        (x == 0 || far(*d.get(x - 1, y)))
            && (x + 1 >= w || far(*d.get(x + 1, y)))
            && (y == 0 || far(*d.get(x, y - 1)))
            && (y + 1 >= hgt || far(*d.get(x, y + 1)))
    })
}

/// Pixels where every sample's residual keeps its sign within `±h`.
pub fn fd_safe_sparse(d: &Grid<f64>, sparse: &SparseDepth, h: f64) -> Grid<bool> {
    let mut ok = Grid::new(d.width(), d.height(), true);
    for (i, &(_, v)) in sparse.samples().iter().enumerate() {
        if math::abs(sparse.interpolate(d, i) - v) > 4.0 * h {
            continue;
        }
        if sparse.level() == 0 {
            let ((x, y), _) = sparse.samples()[i];
            ok.set(x, y, false);
        } else {
            for ((x, y), _) in sparse.corners(i) {
                ok.set(x, y, false);
            }
        }
    }
    ok
}
