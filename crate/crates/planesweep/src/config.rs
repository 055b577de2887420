//! Pipeline configuration: a flat `section.key = value` text file.
//!
//! Every key has an embedded default ([`PipelineConfig::default`]), so a
//! config file only lists overrides. Unknown keys and duplicates are
//! rejected. [`PipelineConfig::to_text`] prints every key; numbers are
//! written in shortest round-trip form so that re-parsing reproduces the
//! configuration exactly.

use std::path::{Path, PathBuf};

use planesweep_core::costvolume::{DepthRange, DEFAULT_ALPHA_W, DEFAULT_STEPS};
use planesweep_core::eval::DEFAULT_DEPTH_CAP;
use planesweep_core::losses::{LossWeights, DEFAULT_FD_STEPS, DEFAULT_SCALES};
use planesweep_core::mask::{InstanceRules, MetricThresholds};

use crate::error::{Error, Result};
use crate::io::text::KeyValues;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub range: DepthRange,
    pub alpha_w: f64,
    pub weights: LossWeights,
    pub scales: usize,
    pub thresholds: MetricThresholds,
    pub rules: InstanceRules,
    /// Binarization threshold for soft masks in evaluation.
    pub mask_threshold: f64,
    /// Minimum WTA confidence for a pixel to enter the point cloud.
    pub min_confidence: f64,
    pub depth_cap: f64,
    pub gradcheck_points: usize,
    pub gradcheck_steps: Vec<f64>,
    pub seed: u64,
    pub bundle: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            range: DepthRange::new(0.07, 0.35, DEFAULT_STEPS).expect("valid default range"),
            alpha_w: DEFAULT_ALPHA_W,
            weights: LossWeights::default(),
            scales: DEFAULT_SCALES,
            thresholds: MetricThresholds::default(),
            rules: InstanceRules::default(),
            mask_threshold: 0.5,
            min_confidence: 0.5,
            depth_cap: DEFAULT_DEPTH_CAP,
            gradcheck_points: 200,
            gradcheck_steps: DEFAULT_FD_STEPS.to_vec(),
            seed: 0,
            bundle: None,
            output: None,
        }
    }
}

/// All keys in output order.
pub const KEYS: [&str; 23] = [
    "sweep.d_min",
    "sweep.d_max",
    "sweep.steps",
    "sweep.alpha_w",
    "loss.lambda",
    "loss.alpha",
    "loss.beta_base",
    "loss.gamma",
    "loss.scales",
    "mask.tau_stereo_pe",
    "mask.tau_temporal_pe",
    "mask.tau_depth_ratio",
    "mask.min_iou",
    "mask.moving_fraction",
    "mask.movable_classes",
    "mask.threshold",
    "depth.min_confidence",
    "eval.depth_cap",
    "gradcheck.points",
    "gradcheck.steps",
    "run.seed",
    "io.bundle",
    "io.output",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

fn path_value(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn list(v: &str) -> Vec<&str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

impl PipelineConfig {
    /// Current value of `key` as it would appear in a config file.
    pub fn get(&self, key: &str) -> Option<String> {
        let f = |v: f64| format!("{v:?}");
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "sweep.d_min" => f(self.range.d_min),
            "sweep.d_max" => f(self.range.d_max),
            "sweep.steps" => self.range.steps.to_string(),
            "sweep.alpha_w" => f(self.alpha_w),
            "loss.lambda" => f(self.weights.lambda),
            "loss.alpha" => f(self.weights.alpha),
            "loss.beta_base" => f(self.weights.beta_base),
            "loss.gamma" => f(self.weights.gamma),
            "loss.scales" => self.scales.to_string(),
            "mask.tau_stereo_pe" => f(self.thresholds.stereo_pe),
            "mask.tau_temporal_pe" => f(self.thresholds.temporal_pe),
            "mask.tau_depth_ratio" => f(self.thresholds.depth_ratio),
            "mask.min_iou" => f(self.rules.min_iou),
            "mask.moving_fraction" => f(self.rules.moving_fraction),
            "mask.movable_classes" => self.rules.movable_classes.join(", "),
            "mask.threshold" => f(self.mask_threshold),
            "depth.min_confidence" => f(self.min_confidence),
            "eval.depth_cap" => f(self.depth_cap),
            "gradcheck.points" => self.gradcheck_points.to_string(),
            "gradcheck.steps" => self
                .gradcheck_steps
                .iter()
                .map(|&h| f(h))
                .collect::<Vec<_>>()
                .join(", "),
            "run.seed" => self.seed.to_string(),
            "io.bundle" => p(&self.bundle),
            "io.output" => p(&self.output),
            _ => return None,
        })
    }

    /// Sets one key without cross-field validation.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "sweep.d_min" => self.range.d_min = num(key, v)?,
            "sweep.d_max" => self.range.d_max = num(key, v)?,
            "sweep.steps" => self.range.steps = num(key, v)?,
            "sweep.alpha_w" => self.alpha_w = num(key, v)?,
            "loss.lambda" => self.weights.lambda = num(key, v)?,
            "loss.alpha" => self.weights.alpha = num(key, v)?,
            "loss.beta_base" => self.weights.beta_base = num(key, v)?,
            "loss.gamma" => self.weights.gamma = num(key, v)?,
            "loss.scales" => self.scales = num(key, v)?,
            "mask.tau_stereo_pe" => self.thresholds.stereo_pe = num(key, v)?,
            "mask.tau_temporal_pe" => self.thresholds.temporal_pe = num(key, v)?,
            "mask.tau_depth_ratio" => self.thresholds.depth_ratio = num(key, v)?,
            "mask.min_iou" => self.rules.min_iou = num(key, v)?,
            "mask.moving_fraction" => self.rules.moving_fraction = num(key, v)?,
            "mask.movable_classes" => {
                let classes = list(v);
                if let Some(c) = classes.iter().find(|c| c.contains(char::is_whitespace)) {
                    return Err(Error::config(key, format!("class `{c}` contains whitespace")));
                }
                self.rules.movable_classes = classes.into_iter().map(String::from).collect();
            }
            "mask.threshold" => self.mask_threshold = num(key, v)?,
            "depth.min_confidence" => self.min_confidence = num(key, v)?,
            "eval.depth_cap" => self.depth_cap = num(key, v)?,
            "gradcheck.points" => self.gradcheck_points = num(key, v)?,
            "gradcheck.steps" => {
                self.gradcheck_steps = list(v).into_iter().map(|s| num(key, s)).collect::<Result<_>>()?
            }
            "run.seed" => self.seed = num(key, v)?,
            "io.bundle" => self.bundle = path_value(v),
            "io.output" => self.output = path_value(v),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Checks every field against the range its owning module accepts.
    pub fn validate(&self) -> Result<()> {
        let core = |key: &str, r: planesweep_core::Result<()>| r.map_err(|e| Error::config(key, e));
        core(
            "sweep",
            DepthRange::new(self.range.d_min, self.range.d_max, self.range.steps).map(|_| ()),
        )?;
        core("loss", self.weights.validate())?;
        core("mask", self.thresholds.validate())?;
        let check = |key: &str, ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::config(key, msg)) };
        check(
            "sweep.alpha_w",
            self.alpha_w.is_finite() && self.alpha_w >= 0.0,
            "must be a finite value ≥ 0",
        )?;
        check(
            "loss.scales",
            (1..=16).contains(&self.scales),
            "must be between 1 and 16",
        )?;
        check(
            "mask.min_iou",
            (0.0..=1.0).contains(&self.rules.min_iou),
            "must lie in [0, 1]",
        )?;
        check(
            "mask.moving_fraction",
            (0.0..=1.0).contains(&self.rules.moving_fraction),
            "must lie in [0, 1]",
        )?;
        check(
            "mask.threshold",
            (0.0..=1.0).contains(&self.mask_threshold),
            "must lie in [0, 1]",
        )?;
        check(
            "depth.min_confidence",
            (0.0..=1.0).contains(&self.min_confidence),
            "must lie in [0, 1]",
        )?;
        check(
            "eval.depth_cap",
            self.depth_cap > 0.0 && self.depth_cap.is_finite(),
            "must be positive",
        )?;
        check("gradcheck.points", self.gradcheck_points > 0, "must be positive")?;
        check(
            "gradcheck.steps",
            !self.gradcheck_steps.is_empty() && self.gradcheck_steps.iter().all(|h| *h > 0.0 && h.is_finite()),
            "need at least one positive step",
        )?;
        Ok(())
    }

    /// Defaults overridden by `text`, validated.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text).map_err(|(line, m)| Error::config(format!("line {line}"), m))?;
        let mut cfg = PipelineConfig::default();
        for (k, v) in &kv.entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config { key, message } => Error::parse(path, key, message),
            other => other,
        })
    }

    /// Every key with its value, one per line.
    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::default();
        for key in KEYS {
            kv.push(key, self.get(key).expect("listed key"));
        }
        kv.encode()
    }

    pub fn bundle_dir(&self) -> Result<&Path> {
        self.bundle
            .as_deref()
            .ok_or_else(|| Error::argument("bundle", "pass --bundle or set io.bundle"))
    }

    pub fn output_path(&self) -> Result<&Path> {
        self.output
            .as_deref()
            .ok_or_else(|| Error::argument("out", "pass --out or set io.output"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_print_and_parse() {
        let text = PipelineConfig::default().to_text();
        assert!(text.starts_with("sweep.d_min = 0.07\nsweep.d_max = 0.35\nsweep.steps = 32\n"));
        assert!(text.contains("loss.beta_base = 0.001\n"));
        assert!(text.contains("io.bundle = \n"));
        assert_eq!(text.lines().count(), KEYS.len());
        assert_eq!(PipelineConfig::parse(&text).unwrap(), PipelineConfig::default());
        assert_eq!(PipelineConfig::parse("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn overrides_and_rejections() {
        let c = PipelineConfig::parse("# tuned\nsweep.steps = 64\nmask.movable_classes = car, cyclist\n").unwrap();
        assert_eq!(c.range.steps, 64);
        assert_eq!(c.rules.movable_classes, vec!["car", "cyclist"]);

        let key_of = |t: &str| match PipelineConfig::parse(t).unwrap_err() {
            Error::Config { key, .. } => key,
            e => panic!("{e}"),
        };
        assert_eq!(key_of("sweep.dmin = 0.1"), "sweep.dmin");
        assert_eq!(key_of("loss.lambda = 1.5"), "loss");
        assert_eq!(key_of("sweep.d_min = 0.5"), "sweep");
        assert_eq!(key_of("sweep.steps = x"), "sweep.steps");
        assert_eq!(key_of("loss.scales = 0"), "loss.scales");
        assert_eq!(key_of("a = 1\na = 2"), "line 2");
    }
}
