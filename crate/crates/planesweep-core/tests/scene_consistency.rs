//! Rendered scenes agree with their own ground truth.

use planesweep_core::geometry::{warp_to_keyframe, InverseDepth};
use planesweep_core::synth::{render, standard_scene, standard_static_scene, visibility, SceneSpec};
use planesweep_core::Grid;

fn coarse(mut spec: SceneSpec) -> SceneSpec {
    for o in &mut spec.objects {
        o.texture.checker_period *= 4.0;
        o.texture.noise_wavelength = o.texture.noise_wavelength.map(|v| v * 4.0);
    }
    spec
}

/// Absolute keyframe residuals of frame `src` warped with ground-truth depth,
/// split by `select`.
fn residuals(spec: &SceneSpec, src: usize, select: impl Fn(usize, bool) -> bool) -> Vec<f64> {
    let gt = render(spec).unwrap();
    let k = spec.keyframe;
    let inv = gt.views[k].inv_depth();
    let warped = warp_to_keyframe(&gt.views[src].frame, &gt.views[k].frame, InverseDepth::PerPixel(&inv)).unwrap();
    let vis = visibility(&gt.views[k], &gt.views[src], 0.02).unwrap();
    let key = gt.views[k].frame.image.plane(0);
    (0..inv.len())
        .filter(|&i| warped.valid.as_slice()[i] && select(i, vis.as_slice()[i]))
        .map(|i| (warped.image.plane(0).as_slice()[i] - key.as_slice()[i]).abs())
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn static_reprojection_residual_is_small() {
    for seed in [1, 2, 5] {
        let spec = coarse(standard_static_scene(seed));
        for src in [1, 3] {
            let r = residuals(&spec, src, |_, visible| visible);
            assert!(r.len() > 4000, "seed {seed} src {src}: {} visible", r.len());
            assert!(mean(&r) < 1e-3, "seed {seed} src {src}: {}", mean(&r));
        }
    }
}

#[test]
fn movers_break_the_static_warp() {
    let spec = coarse(standard_scene(1));
    let gt = render(&spec).unwrap();
    let moving = gt.views[spec.keyframe].moving.clone();
    assert!(moving.as_slice().iter().filter(|&&m| m).count() > 200);
    for src in [1, 3] {
        let mut fixed = residuals(&spec, src, |i, visible| visible && !moving.as_slice()[i]);
        let movers = residuals(&spec, src, |i, _| moving.as_slice()[i]);
        fixed.sort_by(f64::total_cmp);
        let median = fixed[fixed.len() / 2];
        assert!(
            mean(&movers) > 5.0 * median.max(1e-4),
            "src {src}: {} vs {median}",
            mean(&movers)
        );
    }
}

#[test]
fn visibility_requires_same_surface() {
    let gt = render(&standard_static_scene(3)).unwrap();
    let key = &gt.views[2];
    let vis = visibility(key, &gt.views[1], 0.02).unwrap();
    // Renumbering the source's surfaces keeps every depth but breaks every
    // id match.
    let mut relabeled = gt.views[1].clone();
    relabeled.surface = Grid::from_fn(relabeled.surface.width(), relabeled.surface.height(), |x, y| {
        let s = *gt.views[1].surface.get(x, y);
        if s == 0 {
            0
        } else {
            s + 1000
        }
    });
    let none = visibility(key, &relabeled, 0.02).unwrap();
    assert!(vis.as_slice().iter().any(|&v| v));
    assert!(none.as_slice().iter().all(|&v| !v));
    // Pixels without geometry are never visible.
    let sky = key.depth.map(|&z| z <= 0.0);
    for i in 0..sky.len() {
        assert!(!(sky.as_slice()[i] && vis.as_slice()[i]));
    }
}
