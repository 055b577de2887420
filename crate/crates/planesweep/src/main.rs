use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use planesweep::bundle::Bundle;
use planesweep::config::PipelineConfig;
use planesweep::error::{Error, Result};
use planesweep::fmt::sig9;
use planesweep::io::{png, tables};
use planesweep::pipeline::{self, CheckedLoss, LossInputs, LossVariant, MaskChoice, VolumeSource};
use planesweep::scene::{self, SceneFile};
use planesweep::{parallel, THREADS_ENV};

/// Plane-sweep depth, moving-object masks and depth losses on synthetic
/// scenes.
#[derive(Parser, Debug)]
#[command(
    name = "planesweep",
    version,
    subcommand_required = false,
    arg_required_else_help = true
)]
struct Cli {
    /// Configuration file of `section.key = value` overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    /// Print every configuration key with its default value and exit.
    #[arg(long)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug)]
struct BundleArg {
    /// Bundle directory (falls back to io.bundle).
    #[arg(long)]
    bundle: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a scene into a ground-truth bundle directory.
    Synth {
        /// TOML scene description.
        #[arg(long, conflicts_with = "builtin")]
        spec: Option<PathBuf>,
        /// Built-in scene: standard, standard-static or plane.
        #[arg(long)]
        builtin: Option<String>,
        /// Override the scene seed (defaults to run.seed for built-ins).
        #[arg(long)]
        seed: Option<u64>,
        /// Print the scene as TOML instead of rendering it.
        #[arg(long)]
        print_spec: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a cost volume for one frame of a bundle.
    Costvol {
        #[command(flatten)]
        bundle: BundleArg,
        /// Keyframe index (defaults to the bundle keyframe).
        #[arg(long)]
        frame: Option<usize>,
        /// `temporal` (consensus over neighbors), `stereo`, or a frame index.
        #[arg(long, default_value = "temporal")]
        source: String,
        /// Attenuate by a moving mask: `zero`, `one` or a grayscale PNG.
        #[arg(long)]
        mask: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Winner-take-all depth, confidence and point cloud from a volume.
    Depth {
        /// Directory written by `costvol`.
        #[arg(long)]
        volume: PathBuf,
        #[command(flatten)]
        bundle: BundleArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Auxiliary moving-object masks for every frame.
    Masks {
        #[command(flatten)]
        bundle: BundleArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a loss on the bundle keyframe and write a CSV report.
    Losses {
        #[command(flatten)]
        bundle: BundleArg,
        /// depth, mref (mask refinement) or dref (depth refinement).
        #[arg(long, default_value = "depth")]
        variant: String,
        /// Inverse depth PFM being scored.
        #[arg(long)]
        depth: PathBuf,
        /// Moving mask: `zero`, `one` or a grayscale PNG.
        #[arg(long, default_value = "zero")]
        mask: String,
        /// Static-stereo inverse depth PFM (computed when omitted).
        #[arg(long)]
        stereo_depth: Option<PathBuf>,
        /// Auxiliary mask PNG for mask refinement (computed when omitted).
        #[arg(long)]
        aux: Option<PathBuf>,
        /// CSV output (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients of a loss.
    Gradcheck {
        #[command(flatten)]
        bundle: BundleArg,
        /// self, smooth, sparse or dref.
        #[arg(long)]
        loss: String,
        /// Pyramid level to check at.
        #[arg(long, default_value_t = 0)]
        scale: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Depth and mask metrics as CSV rows keyed by scene and variant.
    Eval {
        /// Predicted inverse depth PFM.
        #[arg(long, requires = "gt")]
        pred: Option<PathBuf>,
        /// Ground-truth inverse depth PFM.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, requires = "gt_mask")]
        pred_mask: Option<PathBuf>,
        #[arg(long)]
        gt_mask: Option<PathBuf>,
        #[arg(long, default_value = "scene")]
        scene: String,
        #[arg(long, default_value = "default")]
        variant: String,
        /// CSV output (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_bundle(cfg: &PipelineConfig, arg: &BundleArg) -> Result<Bundle> {
    match &arg.bundle {
        Some(p) => Bundle::read(p),
        None => Bundle::read(cfg.bundle_dir()?),
    }
}

fn out_dir(cfg: &PipelineConfig, out: &Option<PathBuf>) -> Result<PathBuf> {
    match out {
        Some(p) => Ok(p.clone()),
        None => Ok(cfg.output_path()?.to_path_buf()),
    }
}

/// Writes a report to `out`, or to stdout when no path is given.
fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => planesweep::io::write_bytes(p, bytes),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::io(Path::new("<stdout>"), e)),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::read(p)?,
        None => PipelineConfig::default(),
    };
    if cli.print_defaults {
        print!("{}", PipelineConfig::default().to_text());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::argument("command", "no subcommand given"));
    };
    parallel::with_threads(cli.threads, move || execute(command, &cfg))
}

fn execute(command: Command, cfg: &PipelineConfig) -> Result<()> {
    match command {
        Command::Synth {
            spec,
            builtin,
            seed,
            print_spec,
            out,
        } => {
            let mut s = match (&spec, &builtin) {
                (Some(p), _) => scene::read_scene(p)?,
                (None, Some(name)) => scene::builtin(name, cfg.seed)?,
                (None, None) => return Err(Error::argument("spec", "pass --spec FILE or --builtin NAME")),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if print_spec {
                print!("{}", SceneFile::from_spec(&s).to_toml());
                return Ok(());
            }
            pipeline::synth(&s, &out_dir(cfg, &out)?)
        }
        Command::Costvol {
            bundle,
            frame,
            source,
            mask,
            out,
        } => {
            let b = load_bundle(cfg, &bundle)?;
            let k = frame.unwrap_or(b.keyframe);
            let src = match source.as_str() {
                "temporal" => VolumeSource::Temporal,
                "stereo" => VolumeSource::Stereo,
                s => VolumeSource::Pair(s.parse().map_err(|_| {
                    Error::argument("source", format!("`{s}` is not temporal, stereo or a frame index"))
                })?),
            };
            let mask = mask.as_deref().map(MaskChoice::parse);
            let vol = pipeline::costvol(&b, k, src, mask.as_ref(), cfg)?;
            pipeline::write_volume(&out_dir(cfg, &out)?, &vol, k, mask.is_some())
        }
        Command::Depth { volume, bundle, out } => {
            let b = load_bundle(cfg, &bundle)?;
            let (vol, k) = pipeline::read_volume(&volume)?;
            b.check_frame(k)?;
            if vol.dims() != b.intrinsics.dims() {
                return Err(Error::parse(
                    &volume.join("volume.txt"),
                    "size",
                    "differs from the bundle",
                ));
            }
            let (d, cloud) = pipeline::depth(&vol, &b.frames[k], cfg)?;
            pipeline::write_depth(&out_dir(cfg, &out)?, &d, &cloud)
        }
        Command::Masks { bundle, out } => {
            let b = load_bundle(cfg, &bundle)?;
            let (per_frame, aux) = pipeline::masks(&b, cfg)?;
            pipeline::write_masks(&out_dir(cfg, &out)?, &per_frame, &aux, cfg.mask_threshold)
        }
        Command::Losses {
            bundle,
            variant,
            depth,
            mask,
            stereo_depth,
            aux,
            out,
        } => {
            let b = load_bundle(cfg, &bundle)?;
            let dims = b.intrinsics.dims();
            let inputs = LossInputs {
                depth: pipeline::read_inverse_depth(&depth, dims)?,
                stereo_depth: stereo_depth
                    .map(|p| pipeline::read_inverse_depth(&p, dims))
                    .transpose()?,
                mask: MaskChoice::parse(&mask),
                aux: aux.map(|p| MaskChoice::File(p).load(dims)).transpose()?,
            };
            let report = pipeline::losses(&b, LossVariant::parse(&variant)?, &inputs, cfg)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            emit(&out, &tables::losses_csv(&report))
        }
        Command::Gradcheck {
            bundle,
            loss,
            scale,
            out,
        } => {
            let b = load_bundle(cfg, &bundle)?;
            let which = CheckedLoss::parse(&loss)?;
            let r = pipeline::gradcheck(&b, which, scale, cfg)?;
            let mut rows: Vec<(String, Option<f64>, f64, usize)> = r
                .per_step
                .iter()
                .map(|&(h, e)| (which.as_str().to_string(), Some(h), e, r.checked))
                .collect();
            rows.push((which.as_str().to_string(), None, r.max_rel_error, r.checked));
            eprintln!(
                "{}: max relative error {} over {} pixels",
                which.as_str(),
                sig9(r.max_rel_error),
                r.checked
            );
            emit(&out, &tables::gradcheck_csv(&rows))
        }
        Command::Eval {
            pred,
            gt,
            pred_mask,
            gt_mask,
            scene,
            variant,
            out,
        } => {
            let mut rows: Vec<(&str, f64)> = Vec::new();
            if let (Some(pred), Some(gt)) = (&pred, &gt) {
                let g = planesweep::io::pfm::read(gt)?;
                let p = pipeline::read_inverse_depth(pred, g.dims())?;
                rows.extend(pipeline::depth_metric_rows(&pipeline::eval_depth(&p, &g, cfg)?));
            }
            if let (Some(pm), Some(gm)) = (&pred_mask, &gt_mask) {
                let g = png::read_mask(gm)?;
                let p = png::read_unit(pm)?;
                if p.dims() != g.dims() {
                    return Err(Error::parse(pm, "size", "differs from the ground-truth mask"));
                }
                rows.extend(pipeline::mask_metric_rows(&pipeline::eval_mask(&p, &g, cfg)?));
            }
            if rows.is_empty() {
                return Err(Error::argument("eval", "pass --pred/--gt and/or --pred-mask/--gt-mask"));
            }
            emit(&out, &tables::metrics_csv(&scene, &variant, &rows))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("planesweep: {e}");
            eprintln!("{}", e.machine_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
