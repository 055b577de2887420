//! Depth error metrics and mask precision/recall.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mask::MovingMask;
use crate::math::{self, CompensatedSum};

/// Evaluation cap on ground-truth depth (meters).
pub const DEFAULT_DEPTH_CAP: f64 = 80.0;

/// Standard monocular depth metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    /// Number of evaluated pixels.
    pub count: usize,
}

/// Compares a predicted inverse-depth map against metric ground truth.
///
/// Pixels count when the ground truth is finite, positive and at most `cap`
/// meters, the prediction is positive, and `valid` (if given) is set.
pub fn depth_metrics(
    pred_inv_depth: &Grid<f64>,
    gt_depth: &Grid<f64>,
    cap: f64,
    valid: Option<&Grid<bool>>,
) -> Result<DepthMetrics> {
    gt_depth.ensure_dims("ground truth depth", pred_inv_depth.dims())?;
    if let Some(v) = valid {
        v.ensure_dims("evaluation mask", pred_inv_depth.dims())?;
    }
    let mut abs_rel = CompensatedSum::default();
    let mut sq_rel = CompensatedSum::default();
    let mut sq = CompensatedSum::default();
    let mut sq_log = CompensatedSum::default();
    let mut within = [0usize; 3];
    let mut n = 0usize;
    let thresholds = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];
    for i in 0..gt_depth.len() {
        let g = gt_depth.as_slice()[i];
        let inv = pred_inv_depth.as_slice()[i];
        if !(g.is_finite() && g > 0.0 && g <= cap && inv > 0.0) {
            continue;
        }
        if valid.is_some_and(|v| !v.as_slice()[i]) {
            continue;
        }
        let p = 1.0 / inv;
        let diff = p - g;
        abs_rel.add(math::abs(diff) / g);
        sq_rel.add(diff * diff / g);
        sq.add(diff * diff);
        let dl = math::ln(p) - math::ln(g);
        sq_log.add(dl * dl);
        let ratio = (p / g).max(g / p);
        for (k, t) in thresholds.iter().enumerate() {
            within[k] += (ratio < *t) as usize;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidPixels("depth metrics"));
    }
    let nf = n as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel.value() / nf,
        sq_rel: sq_rel.value() / nf,
        rmse: math::sqrt(sq.value() / nf),
        rmse_log: math::sqrt(sq_log.value() / nf),
        delta1: within[0] as f64 / nf,
        delta2: within[1] as f64 / nf,
        delta3: within[2] as f64 / nf,
        count: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision/recall/F1 of `pred ≥ threshold` against a binary ground truth.
/// Precision is 1 with no predicted positives; recall is 1 with no true
/// positives.
pub fn mask_pr(pred: &MovingMask, gt: &Grid<bool>, threshold: f64) -> Result<MaskScores> {
    gt.ensure_dims("ground truth mask", pred.dims())?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.values().as_slice().iter().zip(gt.as_slice()) {
        let p = p >= threshold;
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MaskScores { precision, recall, f1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    fn gt() -> Grid<f64> {
        Grid::from_fn(4, 3, |x, y| 2.0 + x as f64 + 3.0 * y as f64)
    }

    #[test]
    fn perfect_prediction() {
        let g = gt();
        let m = depth_metrics(&g.map(|v| 1.0 / v), &g, 80.0, None).unwrap();
        assert!(m.abs_rel < 1e-15 && m.rmse < 1e-14 && m.rmse_log < 1e-15 && m.sq_rel < 1e-15);
        assert_eq!((m.delta1, m.delta2, m.delta3), (1.0, 1.0, 1.0));
        assert_eq!(m.count, 12);
    }

    #[test]
    fn doubled_prediction() {
        let g = gt();
        let m = depth_metrics(&g.map(|v| 1.0 / (2.0 * v)), &g, 80.0, None).unwrap();
        assert!((m.abs_rel - 1.0).abs() < 1e-12);
        // 1.25³ = 1.953125 < 2, so no pixel is within any delta threshold.
        assert_eq!((m.delta1, m.delta2, m.delta3), (0.0, 0.0, 0.0));
        assert!((m.rmse_log - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cap_excludes_far_pixels() {
        let g = Grid::from_vec(2, 1, vec![10.0, 100.0]).unwrap();
        let p = Grid::from_vec(2, 1, vec![0.1, 1.0]).unwrap();
        let m = depth_metrics(&p, &g, 80.0, None).unwrap();
        assert_eq!(m.count, 1);
        assert_eq!(m.abs_rel, 0.0);
        let only_far = Grid::from_vec(1, 1, vec![100.0]).unwrap();
        assert!(matches!(
            depth_metrics(&Grid::new(1, 1, 0.1), &only_far, 80.0, None),
            Err(Error::NoValidPixels(_))
        ));
    }

    #[test]
    fn mask_pr_examples() {
        let g = Grid::from_vec(4, 1, vec![true, true, false, false]).unwrap();
        let s = mask_pr(&MovingMask::from_binary(&g), &g, 0.5).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = mask_pr(&MovingMask::zeros(4, 1), &g, 0.5).unwrap();
        assert_eq!(s.recall, 0.0);
        assert_eq!(s.precision, 1.0);
        let half = Grid::from_vec(4, 1, vec![true, false, false, false]).unwrap();
        let s = mask_pr(&MovingMask::from_binary(&half), &g, 0.5).unwrap();
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        let none = Grid::new(4, 1, false);
        assert_eq!(mask_pr(&MovingMask::zeros(4, 1), &none, 0.5).unwrap().recall, 1.0);
    }

    proptest! {
        #[test]
        fn metric_invariants(
            g in prop::collection::vec(0.5f64..60.0, 12),
            p in prop::collection::vec(0.5f64..60.0, 12),
            c in 0.1f64..1.2,
            seed in 0usize..12,
        ) {
            let gt = Grid::from_vec(4, 3, g.clone()).unwrap();
            let pred = Grid::from_vec(4, 3, p.iter().map(|v| 1.0 / v).collect()).unwrap();
            let m = depth_metrics(&pred, &gt, 80.0, None).unwrap();
            prop_assert!(m.delta1 <= m.delta2 && m.delta2 <= m.delta3 && m.delta3 <= 1.0);
            prop_assert!(m.abs_rel >= 0.0 && m.sq_rel >= 0.0 && m.rmse >= 0.0 && m.rmse_log >= 0.0);

            // Pixel order does not matter.
            let mut idx: Vec<usize> = (0..12).collect();
            idx.rotate_left(seed);
            let gt2 = Grid::from_vec(4, 3, idx.iter().map(|&i| g[i]).collect()).unwrap();
            let pred2 = Grid::from_vec(4, 3, idx.iter().map(|&i| 1.0 / p[i]).collect()).unwrap();
            let m2 = depth_metrics(&pred2, &gt2, 80.0, None).unwrap();
            prop_assert!((m.abs_rel - m2.abs_rel).abs() < 1e-12);
            prop_assert!((m.rmse - m2.rmse).abs() < 1e-12);
            prop_assert_eq!(m.delta1, m2.delta1);

            // Common scaling keeps relative metrics and scales rmse.
            let gt3 = gt.map(|v| v * c);
            let pred3 = Grid::from_vec(4, 3, p.iter().map(|v| 1.0 / (v * c)).collect()).unwrap();
            let m3 = depth_metrics(&pred3, &gt3, 80.0, None).unwrap();
            prop_assert!((m.abs_rel - m3.abs_rel).abs() < 1e-12);
            prop_assert!((m3.rmse - c * m.rmse).abs() < 1e-9 * (1.0 + m.rmse));
            prop_assert_eq!(m.delta1, m3.delta1);
            prop_assert_eq!(m.delta3, m3.delta3);
        }
    }
}
