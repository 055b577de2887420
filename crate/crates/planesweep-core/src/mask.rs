//! Auxiliary moving-object masks.
//!
//! A pixel is flagged as moving when at least two of three inconsistency
//! metrics exceed their thresholds:
//!
//! 1. static-stereo photometric error under the temporal depth `D_t`,
//! 2. mean temporal photometric error under the static-stereo depth `D_t^S`,
//! 3. the ratio `max(D_t / D_t^S, D_t^S / D_t)`.
//!
//! Movable-class instances are then matched to the previous and next frame
//! (same class, IoU ≥ 0.25, greedy by IoU) and an instance is accepted as
//! moving when its chain contains more than 40 % moving pixels on average.
//! The auxiliary mask is the union of accepted instances.

use alloc::string::String;
use alloc::vec::Vec;

use crate::depth::InverseDepthMap;
use crate::error::{Error, Result};
use crate::geometry::{warp_to_keyframe, Frame, InverseDepth};
use crate::grid::Grid;
use crate::photometric::{pe_map, ErrorMap};

/// Per-pixel moving-object probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingMask {
    values: Grid<f64>,
}

impl MovingMask {
    pub fn new(values: Grid<f64>) -> Result<Self> {
        if let Some(v) = values.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(alloc::format!("mask value {v} outside [0, 1]")));
        }
        Ok(MovingMask { values })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        MovingMask {
            values: Grid::new(width, height, 0.0),
        }
    }

    pub fn ones(width: usize, height: usize) -> Self {
        MovingMask {
            values: Grid::new(width, height, 1.0),
        }
    }

    pub fn from_binary(mask: &Grid<bool>) -> Self {
        MovingMask {
            values: mask.map(|&b| if b { 1.0 } else { 0.0 }),
        }
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    /// `p ≥ threshold` per pixel.
    pub fn to_binary(&self, threshold: f64) -> Grid<bool> {
        self.values.map(|&p| p >= threshold)
    }

    /// Area-averaged pyramid level.
    pub fn downsampled(&self) -> Self {
        MovingMask {
            values: self.values.downsample2().map(|v| v.clamp(0.0, 1.0)),
        }
    }
}

/// One segmented object instance in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub frame: usize,
    pub id: u32,
    pub class: String,
    pub pixels: Grid<bool>,
}

impl InstanceMask {
    pub fn area(&self) -> usize {
        self.pixels.as_slice().iter().filter(|&&p| p).count()
    }
}

/// Instances of one frame must not overlap.
pub fn validate_instances(instances: &[InstanceMask]) -> Result<()> {
    let Some(first) = instances.first() else {
        return Ok(());
    };
    let dims = first.pixels.dims();
    let mut owner = Grid::new(dims.0, dims.1, false);
    for inst in instances {
        inst.pixels.ensure_dims("instance mask", dims)?;
        for (o, &p) in owner.as_mut_slice().iter_mut().zip(inst.pixels.as_slice()) {
            if p && *o {
                return Err(Error::Domain(alloc::format!(
                    "instance {} overlaps another instance in frame {}",
                    inst.id,
                    inst.frame
                )));
            }
            *o |= p;
        }
    }
    Ok(())
}

/// Frames needed to evaluate the inconsistency metrics for one keyframe.
#[derive(Debug, Clone, Copy)]
pub struct KeyBundle<'a> {
    pub key: &'a Frame,
    pub temporal: &'a [Frame],
    pub stereo: Option<&'a Frame>,
}

/// The three per-pixel inconsistency metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMetrics {
    /// Static-stereo pe under the temporal depth.
    pub stereo_pe: ErrorMap,
    /// Mean temporal pe under the static-stereo depth; valid where at least
    /// one temporal frame is valid.
    pub temporal_pe: ErrorMap,
    /// `max(D_t / D_t^S, D_t^S / D_t)`.
    pub depth_ratio: Grid<f64>,
}

pub fn pixel_metrics(
    bundle: &KeyBundle<'_>,
    temporal_depth: &InverseDepthMap,
    stereo_depth: &InverseDepthMap,
) -> Result<PixelMetrics> {
    let dims = bundle.key.dims();
    temporal_depth.values.ensure_dims("temporal depth", dims)?;
    stereo_depth.values.ensure_dims("stereo depth", dims)?;
    let stereo = bundle
        .stereo
        .ok_or(Error::Empty("static stereo frame for mask metrics"))?;

    let warped = warp_to_keyframe(stereo, bundle.key, InverseDepth::PerPixel(&temporal_depth.values))?;
    let stereo_pe = pe_map(&warped, &bundle.key.image)?;

    let (w, h) = dims;
    let mut sum = Grid::new(w, h, 0.0);
    let mut count = Grid::new(w, h, 0u32);
    for frame in bundle.temporal {
        let warped = warp_to_keyframe(frame, bundle.key, InverseDepth::PerPixel(&stereo_depth.values))?;
        let e = pe_map(&warped, &bundle.key.image)?;
        for i in 0..w * h {
            if e.valid.as_slice()[i] {
                sum.as_mut_slice()[i] += e.values.as_slice()[i];
                count.as_mut_slice()[i] += 1;
            }
        }
    }
    let temporal_pe = ErrorMap {
        values: Grid::from_fn(w, h, |x, y| match *count.get(x, y) {
            0 => 1.0,
            n => *sum.get(x, y) / n as f64,
        }),
        valid: count.map(|&n| n > 0),
    };

    let depth_ratio = Grid::from_fn(w, h, |x, y| {
        let a = *temporal_depth.values.get(x, y);
        let b = *stereo_depth.values.get(x, y);
        (a / b).max(b / a)
    });
    Ok(PixelMetrics {
        stereo_pe,
        temporal_pe,
        depth_ratio,
    })
}

/// Thresholds of the 2-of-3 rule. Conditions are strict (`metric > τ`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricThresholds {
    pub stereo_pe: f64,
    pub temporal_pe: f64,
    pub depth_ratio: f64,
}

impl Default for MetricThresholds {
    fn default() -> Self {
        MetricThresholds {
            stereo_pe: 0.3,
            temporal_pe: 0.25,
            depth_ratio: 1.5,
        }
    }
}

impl MetricThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.stereo_pe > 0.0 && self.temporal_pe > 0.0 && self.depth_ratio > 0.0) {
            return Err(Error::param("mask thresholds", "must be positive"));
        }
        Ok(())
    }
}

/// Which of the three conditions hold; invalid metrics never hold.
pub fn exceeded_conditions(metrics: &PixelMetrics, thresholds: &MetricThresholds, x: usize, y: usize) -> [bool; 3] {
    [
        *metrics.stereo_pe.valid.get(x, y) && *metrics.stereo_pe.values.get(x, y) > thresholds.stereo_pe,
        *metrics.temporal_pe.valid.get(x, y) && *metrics.temporal_pe.values.get(x, y) > thresholds.temporal_pe,
        *metrics.depth_ratio.get(x, y) > thresholds.depth_ratio,
    ]
}

/// At least two of three conditions.
#[inline]
pub fn two_of_three(conditions: [bool; 3]) -> bool {
    conditions.iter().filter(|&&c| c).count() >= 2
}

pub fn classify_moving_pixels(metrics: &PixelMetrics, thresholds: &MetricThresholds) -> Result<Grid<bool>> {
    thresholds.validate()?;
    let (w, h) = metrics.depth_ratio.dims();
    Ok(Grid::from_fn(w, h, |x, y| {
        two_of_three(exceeded_conditions(metrics, thresholds, x, y))
    }))
}

pub fn iou(a: &Grid<bool>, b: &Grid<bool>) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &q) in a.as_slice().iter().zip(b.as_slice()) {
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Instance-level rules.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRules {
    pub min_iou: f64,
    /// An instance is moving when the mean moving fraction exceeds this.
    pub moving_fraction: f64,
    /// Only instances of these classes are considered; empty accepts all.
    pub movable_classes: Vec<String>,
}

impl Default for InstanceRules {
    fn default() -> Self {
        InstanceRules {
            min_iou: 0.25,
            moving_fraction: 0.40,
            movable_classes: Vec::new(),
        }
    }
}

impl InstanceRules {
    pub fn is_movable(&self, class: &str) -> bool {
        self.movable_classes.is_empty() || self.movable_classes.iter().any(|c| c == class)
    }
}

/// Indices of one instance and its matches in the neighboring frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceChain {
    pub prev: Option<usize>,
    pub current: usize,
    pub next: Option<usize>,
}

impl InstanceChain {
    pub fn len(&self) -> usize {
        1 + self.prev.is_some() as usize + self.next.is_some() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

// One-to-one greedy assignment by descending IoU; ties broken by index.
fn greedy_match(current: &[InstanceMask], other: &[InstanceMask], min_iou: f64) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, a) in current.iter().enumerate() {
        for (j, b) in other.iter().enumerate() {
            if a.class != b.class {
                continue;
            }
            let v = iou(&a.pixels, &b.pixels);
            if v >= min_iou && v > 0.0 {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = alloc::vec![None; current.len()];
    let mut taken = alloc::vec![false; other.len()];
    for (_, i, j) in pairs {
        if out[i].is_none() && !taken[j] {
            out[i] = Some(j);
            taken[j] = true;
        }
    }
    out
}

/// Matches every instance of the current frame to at most one instance of
/// the previous and of the next frame.
pub fn match_instances(
    prev: &[InstanceMask],
    current: &[InstanceMask],
    next: &[InstanceMask],
    min_iou: f64,
) -> Vec<InstanceChain> {
    let p = greedy_match(current, prev, min_iou);
    let n = greedy_match(current, next, min_iou);
    (0..current.len())
        .map(|i| InstanceChain {
            prev: p[i],
            current: i,
            next: n[i],
        })
        .collect()
}

/// Fraction of an instance's pixels flagged as moving; None for empty masks.
pub fn moving_fraction(instance: &InstanceMask, moving: &Grid<bool>) -> Result<Option<f64>> {
    moving.ensure_dims("moving pixel map", instance.pixels.dims())?;
    let mut area = 0usize;
    let mut hits = 0usize;
    for (&p, &m) in instance.pixels.as_slice().iter().zip(moving.as_slice()) {
        if p {
            area += 1;
            hits += m as usize;
        }
    }
    Ok((area > 0).then(|| hits as f64 / area as f64))
}

/// Mean moving fraction over the chain members strictly above the limit.
/// Empty members are skipped; a chain with no usable member is static.
pub fn instance_moving_decision(members: &[(&InstanceMask, &Grid<bool>)], min_fraction: f64) -> Result<bool> {
    let mut fractions = Vec::with_capacity(members.len());
    for (inst, moving) in members {
        if let Some(f) = moving_fraction(inst, moving)? {
            fractions.push(f);
        }
    }
    if fractions.is_empty() {
        return Ok(false);
    }
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    Ok(mean > min_fraction)
}

/// Binary mask: union of the given instances.
pub fn compose_aux_mask(width: usize, height: usize, accepted: &[&InstanceMask]) -> Result<MovingMask> {
    let mut out = Grid::new(width, height, false);
    for inst in accepted {
        inst.pixels.ensure_dims("instance mask", (width, height))?;
        for (o, &p) in out.as_mut_slice().iter_mut().zip(inst.pixels.as_slice()) {
            *o |= p;
        }
    }
    Ok(MovingMask::from_binary(&out))
}

/// Instances and classified moving pixels of one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameEvidence<'a> {
    pub instances: &'a [InstanceMask],
    pub moving: &'a Grid<bool>,
}

/// Auxiliary mask of the current frame from its own and its neighbors'
/// evidence. Non-movable instances are ignored throughout.
pub fn auxiliary_mask(
    prev: Option<FrameEvidence<'_>>,
    current: FrameEvidence<'_>,
    next: Option<FrameEvidence<'_>>,
    rules: &InstanceRules,
) -> Result<MovingMask> {
    let movable = |f: &FrameEvidence<'_>| -> Vec<InstanceMask> {
        f.instances
            .iter()
            .filter(|i| rules.is_movable(&i.class))
            .cloned()
            .collect()
    };
    let cur = movable(&current);
    let prev_inst = prev.as_ref().map(movable).unwrap_or_default();
    let next_inst = next.as_ref().map(movable).unwrap_or_default();
    let chains = match_instances(&prev_inst, &cur, &next_inst, rules.min_iou);

    let mut accepted = Vec::new();
    for chain in &chains {
        let mut members: Vec<(&InstanceMask, &Grid<bool>)> = alloc::vec![(&cur[chain.current], current.moving)];
        if let (Some(j), Some(p)) = (chain.prev, prev.as_ref()) {
            members.push((&prev_inst[j], p.moving));
        }
        if let (Some(j), Some(n)) = (chain.next, next.as_ref()) {
            members.push((&next_inst[j], n.moving));
        }
        if instance_moving_decision(&members, rules.moving_fraction)? {
            accepted.push(&cur[chain.current]);
        }
    }
    let (w, h) = current.moving.dims();
    compose_aux_mask(w, h, &accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn rect(frame: usize, id: u32, class: &str, x0: usize, y0: usize, x1: usize, y1: usize) -> InstanceMask {
        InstanceMask {
            frame,
            id,
            class: class.to_string(),
            pixels: Grid::from_fn(20, 10, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1),
        }
    }

    fn metrics_1px(m1: f64, m2: f64, m3: f64) -> PixelMetrics {
        PixelMetrics {
            stereo_pe: ErrorMap {
                values: Grid::new(1, 1, m1),
                valid: Grid::new(1, 1, true),
            },
            temporal_pe: ErrorMap {
                values: Grid::new(1, 1, m2),
                valid: Grid::new(1, 1, true),
            },
            depth_ratio: Grid::new(1, 1, m3),
        }
    }

    #[test]
    fn two_of_three_rule() {
        let t = MetricThresholds::default();
        let moving = |m: PixelMetrics| *classify_moving_pixels(&m, &t).unwrap().get(0, 0);
        assert!(moving(metrics_1px(0.5, 0.5, 1.0)));
        assert!(!moving(metrics_1px(0.1, 0.1, 3.0)));
        assert!(moving(metrics_1px(0.5, 0.1, 3.0)));
        assert!(moving(metrics_1px(0.5, 0.5, 3.0)));
        // Strict inequality at the threshold.
        assert!(!moving(metrics_1px(0.5, 0.1, 1.5)));
        assert!(!moving(metrics_1px(0.3, 0.25, 1.0)));
    }

    #[test]
    fn invalid_metrics_do_not_count() {
        let mut m = metrics_1px(0.9, 0.9, 1.0);
        m.stereo_pe.valid.set(0, 0, false);
        assert!(!*classify_moving_pixels(&m, &MetricThresholds::default())
            .unwrap()
            .get(0, 0));
    }

    #[test]
    fn thresholds_must_be_positive() {
        let t = MetricThresholds {
            stereo_pe: 0.0,
            ..Default::default()
        };
        assert!(classify_moving_pixels(&metrics_1px(0.0, 0.0, 1.0), &t).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = rect(0, 1, "car", 0, 0, 4, 4);
        assert_eq!(iou(&a.pixels, &a.pixels), 1.0);
        let b = rect(0, 1, "car", 10, 0, 14, 4);
        assert_eq!(iou(&a.pixels, &b.pixels), 0.0);
        // Equal-area boxes shifted by half their width: 8 / 24.
        let c = rect(0, 1, "car", 2, 0, 6, 4);
        assert!((iou(&a.pixels, &c.pixels) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matching_rules() {
        let cur = vec![rect(1, 1, "car", 0, 0, 4, 4), rect(1, 2, "bike", 10, 0, 14, 4)];
        let prev = vec![rect(0, 7, "car", 2, 0, 6, 4), rect(0, 8, "car", 10, 0, 14, 4)];
        let next = vec![rect(2, 9, "car", 0, 0, 4, 4)];
        let chains = match_instances(&prev, &cur, &next, 0.25);
        assert_eq!(
            chains[0],
            InstanceChain {
                prev: Some(0),
                current: 0,
                next: Some(0)
            }
        );
        // Class mismatch blocks the otherwise perfect overlap.
        assert_eq!(
            chains[1],
            InstanceChain {
                prev: None,
                current: 1,
                next: None
            }
        );
        assert_eq!(chains[0].len(), 3);
        assert_eq!(chains[1].len(), 1);
    }

    #[test]
    fn matching_is_one_to_one_and_greedy() {
        let cur = vec![rect(1, 1, "car", 0, 0, 4, 4), rect(1, 2, "car", 1, 0, 5, 4)];
        let prev = vec![rect(0, 3, "car", 1, 0, 5, 4)];
        let chains = match_instances(&prev, &cur, &[], 0.25);
        assert_eq!(chains[1].prev, Some(0));
        assert_eq!(chains[0].prev, None);
    }

    #[test]
    fn moving_decision_threshold() {
        // A 10×10 instance; `columns(k)` marks its first k columns moving.
        let inst = rect(0, 1, "car", 0, 0, 10, 10);
        let columns = |k: usize| Grid::from_fn(20, 10, |x, _| x < k);
        let (half, thirty, forty) = (columns(5), columns(3), columns(4));
        assert!(instance_moving_decision(&[(&inst, &half), (&inst, &half), (&inst, &half)], 0.4).unwrap());
        assert!(!instance_moving_decision(&[(&inst, &thirty), (&inst, &thirty)], 0.4).unwrap());
        // Exactly 40 % is not "more than".
        assert!(!instance_moving_decision(&[(&inst, &forty)], 0.4).unwrap());
        // One pixel above 40 %.
        let just_over = Grid::from_fn(20, 10, |x, y| x < 10 && y * 10 + x < 41);
        assert!(instance_moving_decision(&[(&inst, &just_over)], 0.4).unwrap());
    }

    #[test]
    fn fractions_035_are_static() {
        let inst = rect(0, 1, "car", 0, 0, 20, 10);
        let m = Grid::from_fn(20, 10, |x, y| y * 20 + x < 70);
        assert!((moving_fraction(&inst, &m).unwrap().unwrap() - 0.35).abs() < 1e-15);
        assert!(!instance_moving_decision(&[(&inst, &m), (&inst, &m), (&inst, &m)], 0.4).unwrap());
    }

    #[test]
    fn empty_instances_are_excluded() {
        let empty = rect(0, 1, "car", 0, 0, 0, 0);
        let full = rect(0, 1, "car", 0, 0, 20, 10);
        let all = Grid::new(20, 10, true);
        assert_eq!(moving_fraction(&empty, &all).unwrap(), None);
        assert!(instance_moving_decision(&[(&empty, &all), (&full, &all)], 0.4).unwrap());
        assert!(!instance_moving_decision(&[(&empty, &all)], 0.4).unwrap());
    }

    #[test]
    fn overlapping_instances_rejected() {
        let a = rect(0, 1, "car", 0, 0, 4, 4);
        let b = rect(0, 2, "car", 3, 0, 6, 4);
        assert!(validate_instances(&[a.clone(), b]).is_err());
        assert!(validate_instances(&[a, rect(0, 2, "car", 4, 0, 6, 4)]).is_ok());
    }

    #[test]
    fn aux_mask_is_union_of_accepted_movables() {
        let mover = rect(1, 1, "car", 0, 0, 4, 4);
        let parked = rect(1, 2, "car", 10, 0, 14, 4);
        let tree = rect(1, 3, "tree", 15, 5, 19, 9);
        let moving = Grid::from_fn(20, 10, |x, y| x < 4 || (x >= 15 && y >= 5));
        let inst = vec![mover.clone(), parked, tree];
        let rules = InstanceRules {
            movable_classes: vec!["car".to_string()],
            ..Default::default()
        };
        let cur = FrameEvidence {
            instances: &inst,
            moving: &moving,
        };
        let m = auxiliary_mask(Some(cur), cur, Some(cur), &rules).unwrap();
        assert_eq!(m.to_binary(0.5), mover.pixels);
    }
}
