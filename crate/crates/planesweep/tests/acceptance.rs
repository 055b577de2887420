//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on
//! any failure.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use planesweep::bundle::Bundle;
use planesweep::config::PipelineConfig;
use planesweep::pipeline::{self, CheckedLoss};
use planesweep_core::costvolume::{
    aggregate, apply_mask, build_aggregated, frame_weight, pair_pe_stack, single_source_volume, DepthRange, PeStack,
    VolumeKind, DEFAULT_ALPHA_W,
};
use planesweep_core::depth::{argmax_steps, wta_depth};
use planesweep_core::eval::{depth_metrics, DEFAULT_DEPTH_CAP};
use planesweep_core::geometry::{backproject, project, warp_to_keyframe, CameraIntrinsics, Frame, InverseDepth, Pose};
use planesweep_core::losses::{
    depth_pyramid, grad_l_m_ref, grad_l_mask, l_d_ref, l_depth, m_ref_maps, m_ref_pixel, LossWeights, ScaleInputs,
};
use planesweep_core::mask::MovingMask;
use planesweep_core::synth::{self, visibility, GroundTruthBundle};
use planesweep_core::Grid;
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean absolute horizontal intensity step over a 3×3 window below which a
/// pixel counts as untextured.
const TEXTURE_MIN_GRADIENT: f64 = 0.02;
/// Inverse-depth tolerance of the ground-truth visibility test.
const VISIBILITY_TOL: f64 = 0.02;
const KEY: usize = 2;

type Check<'a> = (&'a str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }
}

fn default_range() -> DepthRange {
    DepthRange::new(0.07, 0.35, 32).unwrap()
}

fn textured(plane: &Grid<f64>) -> Grid<bool> {
    let (w, h) = plane.dims();
    Grid::from_fn(w, h, |x, y| {
        let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let (mut sum, mut n) = (0.0, 0.0);
        for yy in y0..=y1 {
            for xx in x0..x1 {
                sum += (plane.get(xx + 1, yy) - plane.get(xx, yy)).abs();
                n += 1.0;
            }
        }
        sum / n >= TEXTURE_MIN_GRADIENT
    })
}

/// Keyframe pixels seen by both temporal neighbors, on textured surfaces,
/// with ground truth inside the sweep range.
fn evaluable(gt: &GroundTruthBundle, range: &DepthRange) -> Grid<bool> {
    let key = &gt.views[KEY];
    let inv = key.inv_depth();
    let tex = textured(key.frame.image.plane(0));
    let prev = visibility(key, &gt.views[KEY - 1], VISIBILITY_TOL).unwrap();
    let next = visibility(key, &gt.views[KEY + 1], VISIBILITY_TOL).unwrap();
    let (w, h) = inv.dims();
    Grid::from_fn(w, h, |x, y| {
        range.contains(*inv.get(x, y)) && *tex.get(x, y) && *prev.get(x, y) && *next.get(x, y)
    })
}

fn static_sweep() -> Outcome {
    let range = default_range();
    let start = Instant::now();
    let gt = synth::render(&synth::standard_static_scene(1)).unwrap();
    let set = gt.keyframe_set(KEY).unwrap();
    let refs: Vec<&Frame> = set.temporal.iter().collect();
    let d = wta_depth(&build_aggregated(&set.key, &refs, &range, DEFAULT_ALPHA_W).unwrap());
    let secs = start.elapsed().as_secs_f64();

    let key = &gt.views[KEY];
    let m = depth_metrics(&d.values, &key.depth, DEFAULT_DEPTH_CAP, None).unwrap();
    let ok = evaluable(&gt, &range);
    let inv = key.inv_depth();
    let (mut n, mut within) = (0usize, 0usize);
    for i in 0..inv.len() {
        if ok.as_slice()[i] && d.confidence.as_slice()[i] > 0.0 {
            n += 1;
            within += ((d.values.as_slice()[i] - inv.as_slice()[i]).abs() <= range.step_size()) as usize;
        }
    }
    let frac = within as f64 / n as f64;
    Outcome::new(
        m.abs_rel < 0.03 && frac >= 0.95 && secs < 10.0,
        format!(
            "abs_rel {:.4}, {within}/{n} = {frac:.4} within one step, {secs:.2} s",
            m.abs_rel
        ),
    )
}

fn one_pixel_stack(index: usize, pes: &[f64], valid: &[bool]) -> PeStack {
    let r = DepthRange::new(0.1, 0.9, pes.len()).unwrap();
    PeStack::from_raw(index, 1, 1, r, pes.to_vec(), valid.to_vec()).unwrap()
}

fn closed_forms() -> Outcome {
    let mut exact = true;
    for m in [2, 8, 32] {
        for peak in [0, m / 2, m - 1] {
            let mut pes = vec![1.0; m];
            pes[peak] = 0.0;
            let s = one_pixel_stack(0, &pes, &vec![true; m]);
            let w = frame_weight(&s, DEFAULT_ALPHA_W).unwrap();
            let c = aggregate(&[s], &[w]).unwrap();
            exact &= (0..m).all(|i| c.score(0, 0, i) == if i == peak { 1.0 } else { -1.0 });
        }
        for v in [0.0, 0.37, 1.0] {
            let s = one_pixel_stack(0, &vec![v; m], &vec![true; m]);
            exact &= *frame_weight(&s, DEFAULT_ALPHA_W).unwrap().get(0, 0) == 0.0;
        }
    }

    // Random stacks of 1..=3 frames on a 2×2 image with 2..=6 hypotheses.
    let stacks = (1usize..=3, 2usize..=6).prop_flat_map(|(frames, m)| {
        (
            prop::collection::vec(
                (
                    prop::collection::vec(0.0f64..=1.0, 4 * m),
                    prop::collection::vec(prop::bool::weighted(0.8), 4 * m),
                ),
                frames,
            ),
            0.0f64..50.0,
            Just(m),
        )
    });
    let cases = 100_000;
    let mut runner = TestRunner::new(RunnerConfig {
        cases,
        failure_persistence: None,
        ..RunnerConfig::default()
    });
    let bounded = runner.run(&stacks, |(frames, alpha, m)| {
        let range = DepthRange::new(0.1, 0.5, m).unwrap();
        let stacks: Vec<PeStack> = frames
            .into_iter()
            .enumerate()
            .map(|(i, (v, ok))| PeStack::from_raw(i, 2, 2, range, v, ok).unwrap())
            .collect();
        let weights: Vec<_> = stacks.iter().map(|s| frame_weight(s, alpha).unwrap()).collect();
        let c = aggregate(&stacks, &weights).unwrap();
        prop_assert!(c.scores().iter().all(|v| (-1.0..=1.0).contains(v)));
        Ok(())
    });
    Outcome::new(
        exact && bounded.is_ok(),
        format!(
            "peak/floor/equal-pe identities {}, C in [-1, 1] over {cases} cases {}",
            if exact { "exact" } else { "violated" },
            if bounded.is_ok() { "held" } else { "violated" }
        ),
    )
}

fn mask_attenuation() -> Outcome {
    let gt = synth::render(&synth::standard_scene(1)).unwrap();
    let set = gt.keyframe_set(KEY).unwrap();
    let refs: Vec<&Frame> = set.temporal.iter().collect();
    let vol = build_aggregated(&set.key, &refs, &default_range(), DEFAULT_ALPHA_W).unwrap();
    let (w, h) = vol.dims();
    let masked = apply_mask(&vol, &MovingMask::ones(w, h)).unwrap();
    let zero = masked.scores().iter().all(|&v| v == 0.0);
    let d = wta_depth(&masked);
    let (mut half, mut covered) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if masked.argmax(x, y).is_some() {
                covered += 1;
                half += (*d.confidence.get(x, y) == 0.5) as usize;
            }
        }
    }
    Outcome::new(
        zero && half == covered && covered > 0,
        format!(
            "volume {}, confidence 0.5 at {half}/{covered} pixels with a contributing frame ({} without)",
            if zero { "identically 0" } else { "non-zero" },
            w * h - covered
        ),
    )
}

fn moving_signal() -> Outcome {
    let range = default_range();
    let gt = synth::render(&synth::standard_scene(1)).unwrap();
    let set = gt.keyframe_set(KEY).unwrap();
    let per_pair = |f: &Frame| {
        argmax_steps(&single_source_volume(
            &pair_pe_stack(&set.key, f, &range).unwrap(),
            VolumeKind::PerPair,
        ))
    };
    let (a, b) = (per_pair(&set.temporal[0]), per_pair(&set.temporal[1]));
    let ok = evaluable(&gt, &range);
    let mover = &gt.views[KEY].moving;
    let (mut boxed, mut disagree, mut fixed, mut agree) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..mover.len() {
        let (Some(p), Some(q)) = (a.as_slice()[i], b.as_slice()[i]) else {
            continue;
        };
        let diff = p.abs_diff(q);
        if mover.as_slice()[i] {
            boxed += 1;
            disagree += (diff > 3) as usize;
        } else if ok.as_slice()[i] {
            fixed += 1;
            agree += (diff <= 1) as usize;
        }
    }
    let (fb, fs) = (disagree as f64 / boxed as f64, agree as f64 / fixed as f64);
    Outcome::new(
        fb >= 0.7 && fs >= 0.95,
        format!("box disagree > 3 steps {fb:.3} ({boxed} px), static agree within 1 step {fs:.3} ({fixed} px)"),
    )
}

fn standard_bundle(dir: &Path, seed: u64) -> Bundle {
    pipeline::synth(&synth::standard_scene(seed), dir).unwrap();
    Bundle::read(dir).unwrap()
}

fn auxiliary_masks(b: &Bundle) -> Outcome {
    let cfg = PipelineConfig::default();
    let (_, aux) = pipeline::masks(b, &cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    // End frames lack one neighbor; interior frames are scored.
    for (k, mask) in aux.iter().enumerate().take(b.len() - 1).skip(1) {
        let s = pipeline::eval_mask(mask.values(), &b.moving[k], &cfg).unwrap();
        pass &= s.recall >= 0.9 && s.precision >= 0.7;
        parts.push(format!("frame {k} P {:.3} R {:.3}", s.precision, s.recall));
    }
    Outcome::new(pass, parts.join(", "))
}

fn loss_identities() -> Outcome {
    let scales = 4;
    let pyramids: Vec<(Grid<f64>, Vec<ScaleInputs>)> = (0..4)
        .map(|seed| {
            let gt = synth::render(&synth::standard_scene(seed)).unwrap();
            let set = gt.keyframe_set(KEY).unwrap();
            let inputs = ScaleInputs::new(set.key, set.temporal, Some(set.stereo), gt.sparse.clone()).unwrap();
            (gt.views[KEY].inv_depth(), inputs.pyramid(scales).unwrap())
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let configs = 100;
    let mut worst: f64 = 0.0;
    for c in 0..configs {
        let (gt, pyr) = &pyramids[c % pyramids.len()];
        let jitter = |rng: &mut ChaCha8Rng| {
            let noise = Grid::from_fn(gt.width(), gt.height(), |_, _| rng.random_range(0.8..1.2));
            Grid::from_fn(gt.width(), gt.height(), |x, y| gt.get(x, y).max(0.02) * noise.get(x, y))
        };
        let d = depth_pyramid(&jitter(&mut rng), scales).unwrap();
        let ds = depth_pyramid(&jitter(&mut rng), scales).unwrap();
        let w = LossWeights {
            lambda: rng.random_range(0.0..=1.0),
            alpha: rng.random_range(0.0..10.0),
            beta_base: rng.random_range(0.0..0.01),
            gamma: rng.random_range(0.0..10.0),
        };
        let plain = l_depth(pyr, &d, &w).unwrap();
        let refined = l_d_ref(pyr, &d, &ds, &MovingMask::zeros(gt.width(), gt.height()), &w).unwrap();
        for s in 0..scales {
            for name in ["self", "sparse", "smooth"] {
                let (a, b) = (plain.term(name, s).unwrap(), refined.term(name, s).unwrap());
                worst = worst.max((a.weight * a.value - b.weight * b.value).abs());
            }
            for name in ["stereo_self", "stereo_prior"] {
                worst = worst.max(refined.term(name, s).unwrap().value.abs());
            }
            worst = worst.max((plain.scale_total(s) - refined.scale_total(s)).abs());
        }
    }

    // Pixel derivative of the mask-refinement loss.
    let (gt, pyr) = &pyramids[0];
    let depths = depth_pyramid(gt, 1).unwrap();
    let maps = m_ref_maps(&pyr[..1], &depths, &depths, LossWeights::default().lambda).unwrap();
    let (ls, lt) = &maps[0];
    let (w, h) = gt.dims();
    let m = MovingMask::new(Grid::from_fn(w, h, |_, _| rng.random_range(0.05..0.95))).unwrap();
    let aux = MovingMask::zeros(w, h);
    let full = grad_l_m_ref(&m, &maps, &aux).unwrap();
    let bce = grad_l_mask(&m, &aux, None).unwrap();
    let both: Vec<usize> = (0..w * h)
        .filter(|&i| ls.valid.as_slice()[i] && lt.valid.as_slice()[i])
        .collect();
    let n = both.len() as f64;
    let (mut fd_err, mut map_err): (f64, f64) = (0.0, 0.0);
    let step = 1e-6;
    for &i in &both {
        let (mi, a, b) = (
            m.values().as_slice()[i],
            ls.values.as_slice()[i],
            lt.values.as_slice()[i],
        );
        let fd = (m_ref_pixel(mi + step, a, b) - m_ref_pixel(mi - step, a, b)) / (2.0 * step);
        fd_err = fd_err.max((fd - (a - b)).abs());
        map_err = map_err.max(((full.as_slice()[i] - bce.as_slice()[i]) * n - (a - b)).abs());
    }
    Outcome::new(
        worst < 1e-9 && fd_err < 1e-6 && map_err < 1e-6,
        format!(
            "zero-mask refinement vs depth loss max diff {worst:.1e} over {configs} configs; \
             mask derivative vs FD {fd_err:.1e}, vs gradient map {map_err:.1e} over {} px",
            both.len()
        ),
    )
}

fn gradient_checks(b: &Bundle) -> Outcome {
    let cfg = PipelineConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for loss in [CheckedLoss::SelfPhotometric, CheckedLoss::Smooth, CheckedLoss::Sparse] {
        for scale in [0, 1] {
            let r = pipeline::gradcheck(b, loss, scale, &cfg).unwrap();
            pass &= r.max_rel_error < 1e-4 && r.checked == cfg.gradcheck_points;
            parts.push(format!(
                "{} s{scale} {:.1e} ({} px)",
                loss.as_str(),
                r.max_rel_error,
                r.checked
            ));
        }
    }
    Outcome::new(pass, parts.join(", "))
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = [
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ];
    let t = [
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
    ];
    Pose::from_axis_angle(axis, rng.random_range(-3.0..3.0), t)
}

fn geometry_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let id = Pose::identity();
    let mut law: f64 = 0.0;
    for _ in 0..10_000 {
        let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
        law = law.max(a.compose(&b).compose(&c).max_abs_diff(&a.compose(&b.compose(&c))));
        law = law.max(a.compose(&a.inverse()).max_abs_diff(&id));
        law = law.max(a.inverse().compose(&a).max_abs_diff(&id));
        law = law.max(a.compose(&id).max_abs_diff(&a));
        law = law.max(a.inverse().inverse().max_abs_diff(&a));
        let p = [
            rng.random_range(-9.0..9.0),
            rng.random_range(-9.0..9.0),
            rng.random_range(-9.0..9.0),
        ];
        let (l, r) = (a.compose(&b).transform(p), a.transform(b.transform(p)));
        law = law.max((0..3).map(|i| (l[i] - r[i]).abs()).fold(0.0, f64::max));
    }
    let intr = CameraIntrinsics::new(64.0, 64.0, 63.5, 31.5, 128, 64).unwrap();
    let mut proj: f64 = 0.0;
    for _ in 0..10_000 {
        let px = [rng.random_range(-10.0..138.0), rng.random_range(-10.0..74.0)];
        let inv = rng.random_range(0.01..2.0);
        let (q, z) = project(&intr, backproject(&intr, px, inv).unwrap()).unwrap();
        proj = proj
            .max((q[0] - px[0]).abs())
            .max((q[1] - px[1]).abs())
            .max((1.0 / z - inv).abs());
    }

    // Reprojection with ground-truth depth on textures coarse enough that
    // bilinear resampling is close to exact.
    let mut spec = synth::standard_static_scene(1);
    for o in &mut spec.objects {
        o.texture.checker_period *= 4.0;
        o.texture.noise_wavelength = o.texture.noise_wavelength.map(|v| v * 4.0);
    }
    let gt = synth::render(&spec).unwrap();
    let set = gt.keyframe_set(KEY).unwrap();
    let inv = gt.views[KEY].inv_depth();
    let mut residual: f64 = 0.0;
    for (k, src) in [(KEY - 1, &set.temporal[0]), (KEY + 1, &set.temporal[1])] {
        let vis = visibility(&gt.views[KEY], &gt.views[k], VISIBILITY_TOL).unwrap();
        let warped = warp_to_keyframe(src, &set.key, InverseDepth::PerPixel(&inv)).unwrap();
        let (mut sum, mut n) = (0.0, 0usize);
        for i in 0..inv.len() {
            if vis.as_slice()[i] && warped.valid.as_slice()[i] {
                sum += (warped.image.plane(0).as_slice()[i] - set.key.image.plane(0).as_slice()[i]).abs();
                n += 1;
            }
        }
        residual = residual.max(sum / n as f64);
    }
    Outcome::new(
        law < 1e-9 && proj < 1e-9 && residual < 1e-3,
        format!("group laws {law:.1e}, project/backproject {proj:.1e}, mean reprojection residual {residual:.1e}"),
    )
}

fn run_pipeline(dir: &Path, threads: usize) {
    let exe = env!("CARGO_BIN_EXE_planesweep");
    let p = |rel: &str| dir.join(rel).display().to_string();
    let key = format!("{KEY:03}");
    let steps: Vec<Vec<String>> = vec![
        vec![
            "synth".into(),
            "--builtin".into(),
            "standard".into(),
            "--seed".into(),
            "3".into(),
            "--out".into(),
            p("bundle"),
        ],
        vec![
            "costvol".into(),
            "--bundle".into(),
            p("bundle"),
            "--out".into(),
            p("volume"),
        ],
        vec![
            "depth".into(),
            "--volume".into(),
            p("volume"),
            "--bundle".into(),
            p("bundle"),
            "--out".into(),
            p("depth"),
        ],
        vec![
            "masks".into(),
            "--bundle".into(),
            p("bundle"),
            "--out".into(),
            p("masks"),
        ],
        vec![
            "losses".into(),
            "--bundle".into(),
            p("bundle"),
            "--variant".into(),
            "dref".into(),
            "--depth".into(),
            p("depth/depth.pfm"),
            "--mask".into(),
            p(&format!("masks/aux/{key}.png")),
            "--out".into(),
            p("losses_dref.csv"),
        ],
        vec![
            "losses".into(),
            "--bundle".into(),
            p("bundle"),
            "--variant".into(),
            "mref".into(),
            "--depth".into(),
            p("depth/depth.pfm"),
            "--mask".into(),
            p(&format!("masks/aux/{key}.png")),
            "--out".into(),
            p("losses_mref.csv"),
        ],
        vec![
            "eval".into(),
            "--pred".into(),
            p("depth/depth.pfm"),
            "--gt".into(),
            p(&format!("bundle/depth/{key}.pfm")),
            "--pred-mask".into(),
            p(&format!("masks/aux/{key}.png")),
            "--gt-mask".into(),
            p(&format!("bundle/moving/{key}.png")),
            "--scene".into(),
            "standard".into(),
            "--out".into(),
            p("eval.csv"),
        ],
    ];
    for args in steps {
        let out = Command::new(exe)
            .arg("--threads")
            .arg(threads.to_string())
            .args(&args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).unwrap();
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let runs = [1, 8, 8];
    let trees: Vec<_> = runs
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let dir = tmp.path().join(format!("run{i}"));
            run_pipeline(&dir, t);
            tree(&dir)
        })
        .collect();
    let same = trees.windows(2).all(|w| w[0] == w[1]);
    let bytes: usize = trees[0].iter().map(|(_, b)| b.len()).sum();
    Outcome::new(
        same && !trees[0].is_empty(),
        format!(
            "{} files, {bytes} bytes, threads {runs:?}: {}",
            trees[0].len(),
            if same { "byte-identical" } else { "outputs differ" }
        ),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = standard_bundle(&tmp.path().join("standard"), 1);
    let checks: Vec<Check<'_>> = vec![
        ("static-scene plane sweep", Box::new(static_sweep)),
        ("aggregation closed forms", Box::new(closed_forms)),
        ("mask attenuation", Box::new(mask_attenuation)),
        ("moving-object signal", Box::new(moving_signal)),
        ("auxiliary mask", Box::new(|| auxiliary_masks(&bundle))),
        ("loss identities", Box::new(loss_identities)),
        ("gradient checks", Box::new(|| gradient_checks(&bundle))),
        ("geometry round-trips", Box::new(geometry_round_trips)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        failed += !outcome.pass as usize;
        println!(
            "{} [{}] {name}: {} ({:.1} s)",
            if outcome.pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
