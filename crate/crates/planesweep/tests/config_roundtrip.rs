use std::path::PathBuf;

use planesweep::config::{PipelineConfig, KEYS};
use proptest::prelude::*;

fn finite(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    lo..hi
}

prop_compose! {
    fn configs()(
        d_min in finite(0.001, 1.0),
        span in finite(0.001, 5.0),
        steps in 2usize..512,
        alpha_w in finite(0.0, 100.0),
        lambda in 0.0f64..=1.0,
        alpha in finite(0.0, 20.0),
        beta in finite(0.0, 1.0),
        gamma in finite(0.0, 20.0),
        scales in 1usize..=8,
        taus in (finite(0.01, 1.0), finite(0.01, 1.0), finite(1.0, 5.0)),
        min_iou in 0.0f64..=1.0,
        fraction in 0.0f64..=1.0,
        classes in prop::collection::vec("[a-z][a-z_]{0,9}", 0..4),
        threshold in 0.0f64..=1.0,
        confidence in 0.0f64..=1.0,
        cap in finite(1.0, 500.0),
        points in 1usize..10_000,
        fd in prop::collection::vec(finite(1e-9, 1e-2), 1..4),
        seed in any::<u64>(),
        bundle in prop::option::of("[a-z0-9_/.-]{1,20}"),
        output in prop::option::of("[a-z0-9_/.-]{1,20}"),
    ) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.range.d_min = d_min;
        c.range.d_max = d_min + span;
        c.range.steps = steps;
        c.alpha_w = alpha_w;
        c.weights.lambda = lambda;
        c.weights.alpha = alpha;
        c.weights.beta_base = beta;
        c.weights.gamma = gamma;
        c.scales = scales;
        c.thresholds.stereo_pe = taus.0;
        c.thresholds.temporal_pe = taus.1;
        c.thresholds.depth_ratio = taus.2;
        c.rules.min_iou = min_iou;
        c.rules.moving_fraction = fraction;
        c.rules.movable_classes = classes;
        c.mask_threshold = threshold;
        c.min_confidence = confidence;
        c.depth_cap = cap;
        c.gradcheck_points = points;
        c.gradcheck_steps = fd;
        c.seed = seed;
        c.bundle = bundle.map(PathBuf::from);
        c.output = output.map(PathBuf::from);
        c
    }
}

proptest! {
    #[test]
    fn printed_config_parses_back_exactly(cfg in configs()) {
        prop_assume!(cfg.validate().is_ok());
        let text = cfg.to_text();
        prop_assert_eq!(text.lines().count(), KEYS.len());
        prop_assert_eq!(PipelineConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn single_override_round_trips(cfg in configs(), pick in 0usize..KEYS.len()) {
        prop_assume!(cfg.validate().is_ok());
        let key = KEYS[pick];
        let value = cfg.get(key).unwrap();
        let mut other = PipelineConfig::default();
        other.set(key, &value).unwrap();
        prop_assert_eq!(other.get(key).unwrap(), value);
    }
}

#[test]
fn file_errors_carry_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "sweep.steps = 16\nloss.lambda = 1.5\n").unwrap();
    match PipelineConfig::read(&path).unwrap_err() {
        planesweep::error::Error::Parse { path: p, field, .. } => {
            assert_eq!(p, path);
            assert_eq!(field, "loss");
        }
        e => panic!("{e}"),
    }
}
