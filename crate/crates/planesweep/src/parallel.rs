//! Thread-parallel versions of the expensive core passes.
//!
//! Work is split into independent pieces (one depth hypothesis, one frame)
//! whose results are collected in index order before any reduction, so
//! outputs do not depend on the number of threads.

use rayon::prelude::*;

use planesweep_core::costvolume::{
    aggregate, frame_weight, pe_slice, single_source_volume, CostVolume, DepthRange, PeStack, VolumeKind,
};
use planesweep_core::geometry::Frame;
use planesweep_core::synth::{assemble, render_frame, GroundTruthBundle, SceneSpec};

use crate::error::{CoreContext, Error, Result};

/// Runs `f` on a pool of `threads` workers, or on rayon's global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(Error::argument("threads", "must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::argument("threads", e))?
            .install(f),
    }
}

/// Photometric errors of `other` against `key` at every hypothesis.
pub fn pe_stack(key: &Frame, other: &Frame, range: &DepthRange) -> Result<PeStack> {
    let slices = (0..range.steps)
        .into_par_iter()
        .map(|i| pe_slice(key, other, range.step(i)))
        .collect::<planesweep_core::Result<Vec<_>>>()
        .context(|| format!("sweeping frame {} against keyframe {}", other.index, key.index))?;
    PeStack::from_slices(other.index, *range, slices).context(|| "assembling pe stack".into())
}

/// Consensus-weighted volume over all `sources`.
pub fn aggregated_volume(key: &Frame, sources: &[&Frame], range: &DepthRange, alpha_w: f64) -> Result<CostVolume> {
    let stacks = sources
        .par_iter()
        .map(|f| pe_stack(key, f, range))
        .collect::<Result<Vec<_>>>()?;
    let weights = stacks
        .par_iter()
        .map(|s| frame_weight(s, alpha_w))
        .collect::<planesweep_core::Result<Vec<_>>>()
        .context(|| "frame weights".into())?;
    aggregate(&stacks, &weights).context(|| "aggregating cost volume".into())
}

/// Volume of a single source frame.
pub fn pair_volume(key: &Frame, other: &Frame, range: &DepthRange, kind: VolumeKind) -> Result<CostVolume> {
    Ok(single_source_volume(&pe_stack(key, other, range)?, kind))
}

/// Renders every temporal and stereo frame concurrently.
pub fn render_bundle(spec: &SceneSpec) -> Result<GroundTruthBundle> {
    spec.validate().context(|| "scene".into())?;
    let n = spec.frames();
    let mut views = (0..2 * n)
        .into_par_iter()
        .map(|j| render_frame(spec, j / 2, j % 2 == 1))
        .collect::<planesweep_core::Result<Vec<_>>>()
        .context(|| "rendering".into())?;
    let mut temporal = Vec::with_capacity(n);
    let mut stereo = Vec::with_capacity(n);
    for (j, v) in views.drain(..).enumerate() {
        if j % 2 == 0 {
            temporal.push(v);
        } else {
            stereo.push(v);
        }
    }
    assemble(spec, temporal, stereo).context(|| "assembling ground truth".into())
}
