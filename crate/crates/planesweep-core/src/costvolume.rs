//! Plane-sweep cost volumes.
//!
//! A sweep warps every non-key frame onto the keyframe at `M` constant
//! inverse-depth hypotheses and scores each hypothesis with the SSIM
//! photometric error. Per-frame error stacks are combined by a consensus
//! weight that favors frames with a distinct minimum:
//!
//! ```text
//! w(x)    = 1 − 1/(M−1) · Σ_{d ≠ d*} exp(−α_w · (pe(x,d) − pe(x,d*))²)
//! C(x, d) = 1 − 2 · Σ_f pe_f(x,d)·w_f(x) / Σ_f w_f(x)
//! ```
//!
//! Scores live in `[−1, 1]`; 1 is perfect photometric consistency.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{warp_to_keyframe, Frame, InverseDepth};
use crate::grid::Grid;
use crate::mask::MovingMask;
use crate::math;
use crate::photometric::{pe_map, ErrorMap};

/// Default number of depth hypotheses.
pub const DEFAULT_STEPS: usize = 32;
/// Default sharpness of the consensus weight.
pub const DEFAULT_ALPHA_W: f64 = 10.0;
/// Weight sums below this count as "no evidence".
pub const MIN_WEIGHT_SUM: f64 = 1e-12;

/// Inverse-depth sweep range `[d_min, d_max]` sampled at `steps` hypotheses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub d_min: f64,
    pub d_max: f64,
    pub steps: usize,
}

impl DepthRange {
    pub fn new(d_min: f64, d_max: f64, steps: usize) -> Result<Self> {
        if !(d_min > 0.0 && d_min < d_max && d_max.is_finite()) {
            return Err(Error::param(
                "depth range",
                format!("need 0 < d_min < d_max, got [{d_min}, {d_max}]"),
            ));
        }
        if steps < 2 {
            return Err(Error::param("steps", format!("need at least 2, got {steps}")));
        }
        Ok(DepthRange { d_min, d_max, steps })
    }

    /// Spacing between consecutive hypotheses.
    pub fn step_size(&self) -> f64 {
        (self.d_max - self.d_min) / (self.steps - 1) as f64
    }

    /// The `i`-th hypothesis; both endpoints are exact.
    #[inline]
    pub fn step(&self, i: usize) -> f64 {
        if i + 1 == self.steps {
            self.d_max
        } else {
            self.d_min + (i as f64 / (self.steps - 1) as f64) * (self.d_max - self.d_min)
        }
    }

    /// Fractional step index of an inverse depth (not clamped).
    pub fn index_of(&self, inv_depth: f64) -> f64 {
        (inv_depth - self.d_min) / self.step_size()
    }

    pub fn contains(&self, inv_depth: f64) -> bool {
        inv_depth >= self.d_min && inv_depth <= self.d_max
    }
}

/// Linearly spaced inverse depths `d_min … d_max` (strictly increasing).
pub fn depth_steps(range: &DepthRange) -> Result<Vec<f64>> {
    DepthRange::new(range.d_min, range.d_max, range.steps)?;
    Ok((0..range.steps).map(|i| range.step(i)).collect())
}

/// Photometric errors of one source frame at every hypothesis.
/// Layout is `[step][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeStack {
    width: usize,
    height: usize,
    range: DepthRange,
    frame_index: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl PeStack {
    /// Assembles a stack from one error map per hypothesis, in step order.
    pub fn from_slices(frame_index: usize, range: DepthRange, slices: Vec<ErrorMap>) -> Result<Self> {
        if slices.len() != range.steps {
            return Err(Error::param(
                "slices",
                format!("expected {} slices, got {}", range.steps, slices.len()),
            ));
        }
        let (width, height) = slices[0].dims();
        let mut values = Vec::with_capacity(width * height * range.steps);
        let mut valid = Vec::with_capacity(width * height * range.steps);
        for s in slices {
            s.values.ensure_dims("pe slice", (width, height))?;
            values.extend(s.values.into_vec());
            valid.extend(s.valid.into_vec());
        }
        Ok(PeStack {
            width,
            height,
            range,
            frame_index,
            values,
            valid,
        })
    }

    /// Builds a stack from raw `[step][y][x]` data.
    pub fn from_raw(
        frame_index: usize,
        width: usize,
        height: usize,
        range: DepthRange,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height * range.steps;
        if values.len() != n || valid.len() != n {
            return Err(Error::param("pe stack", format!("expected {n} entries")));
        }
        Ok(PeStack {
            width,
            height,
            range,
            frame_index,
            values,
            valid,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn range(&self) -> &DepthRange {
        &self.range
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    #[inline]
    fn offset(&self, x: usize, y: usize, step: usize) -> usize {
        (step * self.height + y) * self.width + x
    }

    #[inline]
    pub fn pe(&self, x: usize, y: usize, step: usize) -> f64 {
        self.values[self.offset(x, y, step)]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize, step: usize) -> bool {
        self.valid[self.offset(x, y, step)]
    }

    /// Step with the smallest valid pe (first one on ties).
    pub fn argmin(&self, x: usize, y: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.range.steps {
            if !self.is_valid(x, y, i) {
                continue;
            }
            let v = self.pe(x, y, i);
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// pe map of `other` warped onto `key` at one constant inverse depth.
pub fn pe_slice(key: &Frame, other: &Frame, inv_depth: f64) -> Result<ErrorMap> {
    let warped = warp_to_keyframe(other, key, InverseDepth::Constant(inv_depth))?;
    pe_map(&warped, &key.image)
}

/// Sweeps `other` over every hypothesis of `range`.
pub fn pair_pe_stack(key: &Frame, other: &Frame, range: &DepthRange) -> Result<PeStack> {
    if other.dims() != key.dims() {
        return Err(Error::dims("sweep frame vs keyframe", key.dims(), other.dims()));
    }
    let slices = (0..range.steps)
        .map(|i| pe_slice(key, other, range.step(i)))
        .collect::<Result<Vec<_>>>()?;
    PeStack::from_slices(other.index, *range, slices)
}

/// Consensus weight of one frame's pe stack.
///
/// Only valid steps take part; the normalizer is the number of valid
/// non-optimal steps, so a fully valid stack uses the `1/(M−1)` form.
/// Pixels with fewer than two valid steps get weight 0.
pub fn frame_weight(stack: &PeStack, alpha_w: f64) -> Result<Grid<f64>> {
    if stack.range.steps < 2 {
        return Err(Error::param("steps", "need at least 2"));
    }
    if !(alpha_w >= 0.0) {
        return Err(Error::param("alpha_w", "must be non-negative"));
    }
    Ok(Grid::from_fn(stack.width, stack.height, |x, y| {
        let Some(best) = stack.argmin(x, y) else {
            return 0.0;
        };
        let pe_best = stack.pe(x, y, best);
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..stack.range.steps {
            if i == best || !stack.is_valid(x, y, i) {
                continue;
            }
            let diff = stack.pe(x, y, i) - pe_best;
            sum += math::exp(-alpha_w * diff * diff);
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            (1.0 - sum / count as f64).clamp(0.0, 1.0)
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    /// Weighted consensus over all temporal frames.
    Aggregated,
    /// Keyframe against a single temporal frame.
    PerPair,
    /// Keyframe against its static stereo partner.
    StaticStereo,
}

impl VolumeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            VolumeKind::Aggregated => "aggregated",
            VolumeKind::PerPair => "per_pair",
            VolumeKind::StaticStereo => "static_stereo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "aggregated" => Some(VolumeKind::Aggregated),
            "per_pair" => Some(VolumeKind::PerPair),
            "static_stereo" => Some(VolumeKind::StaticStereo),
            _ => None,
        }
    }
}

/// `H × W × M` consistency scores with per-cell contributor counts.
/// Layout is `[step][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    range: DepthRange,
    kind: VolumeKind,
    scores: Vec<f64>,
    valid_counts: Vec<u32>,
}

impl CostVolume {
    pub fn from_raw(
        width: usize,
        height: usize,
        range: DepthRange,
        kind: VolumeKind,
        scores: Vec<f64>,
        valid_counts: Vec<u32>,
    ) -> Result<Self> {
        let n = width * height * range.steps;
        if scores.len() != n || valid_counts.len() != n {
            return Err(Error::param("cost volume", format!("expected {n} entries")));
        }
        if scores.iter().any(|s| !(-1.0..=1.0).contains(s)) {
            return Err(Error::param("cost volume", "scores must lie in [-1, 1]"));
        }
        Ok(CostVolume {
            width,
            height,
            range,
            kind,
            scores,
            valid_counts,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn range(&self) -> &DepthRange {
        &self.range
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn valid_counts(&self) -> &[u32] {
        &self.valid_counts
    }

    #[inline]
    fn offset(&self, x: usize, y: usize, step: usize) -> usize {
        (step * self.height + y) * self.width + x
    }

    #[inline]
    pub fn score(&self, x: usize, y: usize, step: usize) -> f64 {
        self.scores[self.offset(x, y, step)]
    }

    #[inline]
    pub fn valid_count(&self, x: usize, y: usize, step: usize) -> u32 {
        self.valid_counts[self.offset(x, y, step)]
    }

    /// Step with the highest score among cells with contributors.
    pub fn argmax(&self, x: usize, y: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.range.steps {
            if self.valid_count(x, y, i) == 0 {
                continue;
            }
            let s = self.score(x, y, i);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Weighted aggregation of per-frame pe stacks into one volume.
///
/// Frames are reduced in ascending frame-index order regardless of input
/// order. Only frames valid at `(x, d)` contribute; cells without valid
/// frames or with a vanishing weight sum get score 0 and count 0.
pub fn aggregate(stacks: &[PeStack], weights: &[Grid<f64>]) -> Result<CostVolume> {
    let first = stacks.first().ok_or(Error::Empty("aggregate: no frames"))?;
    if weights.len() != stacks.len() {
        return Err(Error::param(
            "weights",
            format!("{} weight maps for {} stacks", weights.len(), stacks.len()),
        ));
    }
    let (w, h) = first.dims();
    let range = first.range;
    for (s, wt) in stacks.iter().zip(weights) {
        if s.dims() != (w, h) {
            return Err(Error::dims("pe stack", (w, h), s.dims()));
        }
        if s.range != range {
            return Err(Error::param("range", "pe stacks use different depth ranges"));
        }
        wt.ensure_dims("weight map", (w, h))?;
    }
    let mut order: Vec<usize> = (0..stacks.len()).collect();
    order.sort_by_key(|&i| stacks[i].frame_index);

    let n = w * h * range.steps;
    let mut scores = vec![0.0; n];
    let mut counts = vec![0u32; n];
    for step in 0..range.steps {
        for y in 0..h {
            for x in 0..w {
                let mut num = 0.0;
                let mut den = 0.0;
                let mut count = 0u32;
                for &f in &order {
                    let s = &stacks[f];
                    if !s.is_valid(x, y, step) {
                        continue;
                    }
                    let wt = *weights[f].get(x, y);
                    num += s.pe(x, y, step) * wt;
                    den += wt;
                    count += 1;
                }
                let o = (step * h + y) * w + x;
                if count > 0 && den >= MIN_WEIGHT_SUM {
                    scores[o] = (1.0 - 2.0 * num / den).clamp(-1.0, 1.0);
                    counts[o] = count;
                }
            }
        }
    }
    Ok(CostVolume {
        width: w,
        height: h,
        range,
        kind: VolumeKind::Aggregated,
        scores,
        valid_counts: counts,
    })
}

/// Single-source volume `C = 1 − 2·pe`: with one frame the consensus weight
/// cancels out of the aggregation formula.
pub fn single_source_volume(stack: &PeStack, kind: VolumeKind) -> CostVolume {
    let scores = stack
        .values
        .iter()
        .zip(&stack.valid)
        .map(|(&pe, &ok)| if ok { (1.0 - 2.0 * pe).clamp(-1.0, 1.0) } else { 0.0 })
        .collect();
    let valid_counts = stack.valid.iter().map(|&ok| ok as u32).collect();
    CostVolume {
        width: stack.width,
        height: stack.height,
        range: stack.range,
        kind,
        scores,
        valid_counts,
    }
}

/// Builds the weighted aggregated volume for a keyframe and its sources.
pub fn build_aggregated(key: &Frame, sources: &[&Frame], range: &DepthRange, alpha_w: f64) -> Result<CostVolume> {
    let stacks = sources
        .iter()
        .map(|f| pair_pe_stack(key, f, range))
        .collect::<Result<Vec<_>>>()?;
    let weights = stacks
        .iter()
        .map(|s| frame_weight(s, alpha_w))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&stacks, &weights)
}

/// Attenuates every depth slice by `1 − mask(x)`; moving pixels lose all
/// their maxima.
pub fn apply_mask(volume: &CostVolume, mask: &MovingMask) -> Result<CostVolume> {
    mask.values().ensure_dims("moving mask vs cost volume", volume.dims())?;
    let (w, h) = volume.dims();
    let mut out = volume.clone();
    for step in 0..volume.range.steps {
        for y in 0..h {
            for x in 0..w {
                let o = (step * h + y) * w + x;
                out.scores[o] = (1.0 - *mask.values().get(x, y)) * volume.scores[o];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn range(m: usize) -> DepthRange {
        DepthRange::new(0.1, 0.9, m).unwrap()
    }

    fn stack_1px(index: usize, pes: &[f64]) -> PeStack {
        let r = DepthRange::new(0.1, 0.9, pes.len()).unwrap();
        PeStack::from_raw(index, 1, 1, r, pes.to_vec(), vec![true; pes.len()]).unwrap()
    }

    #[test]
    fn linear_steps() {
        let s = depth_steps(&DepthRange::new(0.1, 0.9, 5).unwrap()).unwrap();
        let want = [0.1, 0.3, 0.5, 0.7, 0.9];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(s[0], 0.1);
        assert_eq!(s[4], 0.9);
        let two = depth_steps(&DepthRange::new(0.25, 0.75, 2).unwrap()).unwrap();
        assert_eq!(two, vec![0.25, 0.75]);
    }

    #[test]
    fn steps_strictly_increasing_within_range() {
        let r = DepthRange::new(0.013, 0.77, 97).unwrap();
        let s = depth_steps(&r).unwrap();
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.iter().all(|&d| r.contains(d)));
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(DepthRange::new(0.1, 0.9, 1).is_err());
        assert!(DepthRange::new(0.9, 0.1, 8).is_err());
        assert!(DepthRange::new(0.0, 0.1, 8).is_err());
        let bad = DepthRange {
            d_min: 0.1,
            d_max: 0.2,
            steps: 1,
        };
        assert!(depth_steps(&bad).is_err());
    }

    #[test]
    fn equal_pe_gives_zero_weight() {
        let s = stack_1px(0, &[0.37; 32]);
        assert_eq!(*frame_weight(&s, 10.0).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn sharp_minimum_weight_closed_form() {
        let mut pes = vec![1.0; 32];
        pes[7] = 0.0;
        let w = *frame_weight(&stack_1px(0, &pes), 10.0).unwrap().get(0, 0);
        let want = 1.0 - math::exp(-10.0);
        assert!((w - want).abs() < 1e-15, "{w} vs {want}");
    }

    #[test]
    fn no_valid_steps_gives_zero_weight() {
        let r = range(4);
        let s = PeStack::from_raw(0, 1, 1, r, vec![0.2; 4], vec![false; 4]).unwrap();
        assert_eq!(*frame_weight(&s, 10.0).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn single_frame_aggregation_extremes() {
        let mut pes = vec![1.0; 8];
        pes[3] = 0.0;
        let s = stack_1px(2, &pes);
        let w = frame_weight(&s, 10.0).unwrap();
        let c = aggregate(&[s], &[w]).unwrap();
        assert_eq!(c.score(0, 0, 3), 1.0);
        for i in (0..8).filter(|&i| i != 3) {
            assert_eq!(c.score(0, 0, i), -1.0);
        }
        assert!((0..8).all(|i| c.valid_count(0, 0, i) == 1));
    }

    #[test]
    fn two_frames_equal_weight_average() {
        let a = stack_1px(1, &[0.0, 0.5]);
        let b = stack_1px(3, &[1.0, 0.5]);
        let w = Grid::new(1, 1, 0.7);
        let c = aggregate(&[a, b], &[w.clone(), w]).unwrap();
        assert_eq!(c.score(0, 0, 0), 0.0);
        assert_eq!(c.valid_count(0, 0, 0), 2);
    }

    #[test]
    fn zero_weight_sum_is_neutral() {
        let s = stack_1px(0, &[0.4, 0.4, 0.4]);
        let w = frame_weight(&s, 10.0).unwrap();
        let c = aggregate(&[s], &[w]).unwrap();
        for i in 0..3 {
            assert_eq!(c.score(0, 0, i), 0.0);
            assert_eq!(c.valid_count(0, 0, i), 0);
        }
    }

    #[test]
    fn aggregate_requires_frames() {
        assert!(matches!(aggregate(&[], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn mask_attenuation() {
        let mut pes = vec![1.0; 4];
        pes[1] = 0.2;
        let s = stack_1px(0, &pes);
        let w = frame_weight(&s, 10.0).unwrap();
        let c = aggregate(&[s], &[w]).unwrap();
        let full = apply_mask(&c, &MovingMask::ones(1, 1)).unwrap();
        assert!(full.scores().iter().all(|&v| v == 0.0));
        let none = apply_mask(&c, &MovingMask::zeros(1, 1)).unwrap();
        assert_eq!(none, c);
        let half = apply_mask(&c, &MovingMask::new(Grid::new(1, 1, 0.5)).unwrap()).unwrap();
        for (h, o) in half.scores().iter().zip(c.scores()) {
            assert_eq!(*h, 0.5 * o);
        }
        assert!(apply_mask(&c, &MovingMask::zeros(2, 1)).is_err());
    }

    fn arb_stack(index: usize, w: usize, h: usize, m: usize) -> impl Strategy<Value = PeStack> {
        (
            prop::collection::vec(0.0f64..=1.0, w * h * m),
            prop::collection::vec(prop::bool::weighted(0.85), w * h * m),
        )
            .prop_map(move |(v, ok)| {
                PeStack::from_raw(index, w, h, DepthRange::new(0.1, 0.5, m).unwrap(), v, ok).unwrap()
            })
    }

    proptest! {
        #[test]
        fn weights_in_unit_interval(s in arb_stack(0, 3, 2, 6), alpha in 0.0f64..50.0) {
            for &w in frame_weight(&s, alpha).unwrap().as_slice() {
                prop_assert!((0.0..=1.0).contains(&w));
            }
        }

        #[test]
        fn aggregation_is_order_independent(
            a in arb_stack(4, 3, 2, 5), b in arb_stack(1, 3, 2, 5), c in arb_stack(2, 3, 2, 5)
        ) {
            let stacks = [a, b, c];
            let weights: Vec<_> = stacks.iter().map(|s| frame_weight(s, 10.0).unwrap()).collect();
            let v1 = aggregate(&stacks, &weights).unwrap();
            let perm = [stacks[2].clone(), stacks[0].clone(), stacks[1].clone()];
            let pw = [weights[2].clone(), weights[0].clone(), weights[1].clone()];
            let v2 = aggregate(&perm, &pw).unwrap();
            prop_assert_eq!(v1, v2);
        }

        #[test]
        fn attenuated_scores_stay_in_range(
            s in arb_stack(0, 3, 2, 5), m in prop::collection::vec(0.0f64..=1.0, 6)
        ) {
            let w = frame_weight(&s, 10.0).unwrap();
            let c = aggregate(&[s], &[w]).unwrap();
            let mask = MovingMask::new(Grid::from_vec(3, 2, m).unwrap()).unwrap();
            let a = apply_mask(&c, &mask).unwrap();
            for &v in a.scores() {
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }
    }
}
