//! Closed-loop generation `x_{i+1} = Gen(Enc_mean(x_i))` and a taxonomy of
//! the resulting latent dynamics.

mod lyapunov;

use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::diffengine::{Tensor, TensorError};
use crate::imageio::{ImageError, RgbImage};
use crate::nets::{gather, EncodeMode, ModelBundle, NetError};

pub use lyapunov::{divergence_curve, lyapunov_rosenstein};

#[derive(Debug, Error)]
pub enum DreamError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("closed loop diverged to non-finite values at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("start frame {0} is outside the dataset of {1} frames")]
    BadStart(usize, usize),
    #[error("sequence of {got} latents is too short (need {needed})")]
    TooShort { needed: usize, got: usize },
    #[error("no valid nearest-neighbour pairs")]
    NoNeighbours,
    #[error("iteration {0} was not recorded")]
    NotRecorded(usize),
    #[error("invalid classifier settings: {0}")]
    Config(&'static str),
}

/// One closed-loop trajectory. `z[i]` encodes `x_i`; `x_0` is the start
/// frame and `x_{i+1} = Gen(z[i])`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopRun {
    pub start: usize,
    /// Identifier of the bundle that produced the run.
    pub bundle: String,
    pub z: Vec<Vec<f64>>,
    /// Images `x_i` for the recorded iterations, keyed by `i`.
    pub images: Vec<(usize, RgbImage)>,
}

impl ClosedLoopRun {
    pub fn iterations(&self) -> usize {
        self.z.len().saturating_sub(1)
    }

    pub fn image(&self, i: usize) -> Option<&RgbImage> {
        self.images.iter().find(|(k, _)| *k == i).map(|(_, im)| im)
    }
}

fn images_of(x: &Tensor<f32>) -> Result<Vec<RgbImage>, DreamError> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    x.data()
        .chunks(3 * h * w)
        .map(|c| RgbImage::from_chw(c, h, w).map_err(DreamError::from))
        .collect()
}

fn diverged(e: NetError, iteration: usize) -> DreamError {
    match e {
        NetError::Tensor(TensorError::NonFinite { .. }) => DreamError::NonFinite { iteration },
        e => e.into(),
    }
}

/// Runs one closed loop per start frame of `frames` (`[N, 3, H, W]` in
/// `[-1, 1]`), all in one batch. Images are kept for iterations in `keep`.
pub fn closed_loop_batch(
    bundle: &ModelBundle,
    frames: &Tensor<f32>,
    starts: &[usize],
    iterations: usize,
    keep: RangeInclusive<usize>,
) -> Result<Vec<ClosedLoopRun>, DreamError> {
    let n = frames.shape()[0];
    if let Some(&s) = starts.iter().find(|&&s| s >= n) {
        return Err(DreamError::BadStart(s, n));
    }
    let d = bundle.arch.d_z;
    let tag = bundle.tag();
    let mut runs: Vec<ClosedLoopRun> = starts
        .iter()
        .map(|&start| ClosedLoopRun {
            start,
            bundle: tag.clone(),
            z: Vec::with_capacity(iterations + 1),
            images: Vec::new(),
        })
        .collect();
    let mut x = gather(frames, starts);
    for i in 0..=iterations {
        if keep.contains(&i) {
            for (run, im) in runs.iter_mut().zip(images_of(&x)?) {
                run.images.push((i, im));
            }
        }
        let z = bundle
            .encode(&x, EncodeMode::Mean)
            .map_err(|e| diverged(e, i))?;
        for (run, row) in runs.iter_mut().zip(z.data().chunks(d)) {
            if !row.iter().all(|v| v.is_finite()) {
                return Err(DreamError::NonFinite { iteration: i });
            }
            run.z.push(row.iter().map(|&v| v as f64).collect());
        }
        if i < iterations {
            x = bundle.generate(&z).map_err(|e| diverged(e, i))?;
        }
    }
    Ok(runs)
}

/// A single closed loop from frame `start`, keeping every image.
pub fn closed_loop(
    bundle: &ModelBundle,
    frames: &Tensor<f32>,
    start: usize,
    iterations: usize,
) -> Result<ClosedLoopRun, DreamError> {
    let mut runs = closed_loop_batch(bundle, frames, &[start], iterations, 0..=iterations)?;
    Ok(runs.remove(0))
}

/// Start frames every `step` frames.
pub fn default_starts(frames: usize, step: usize) -> Vec<usize> {
    (0..frames).step_by(step.max(1)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierConfig {
    /// Bound on the summed squared latent steps over the tail window.
    pub fixed_threshold: f64,
    /// Bound on the squared distance from the final latent to an earlier one.
    pub cycle_threshold: f64,
    /// Steps `z_{i+1} - z_i` for `i` in this inclusive range form the tail.
    pub tail: (usize, usize),
    /// Earlier latents searched for a recurrence of the final one.
    pub cycle_search: (usize, usize),
    /// Neighbours closer in time than this are ignored.
    pub exclusion: usize,
    /// Divergence is followed for `0..=curve_len` steps.
    pub curve_len: usize,
    /// Inclusive step range of the slope fit.
    pub fit: (usize, usize),
    /// Exponents above this count as chaotic.
    pub chaos_margin: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            fixed_threshold: 1e-5,
            cycle_threshold: 1e-8,
            tail: (175, 199),
            cycle_search: (100, 198),
            exclusion: 10,
            curve_len: 20,
            fit: (1, 5),
            chaos_margin: 1e-3,
        }
    }
}

impl ClassifierConfig {
    /// Shortest closed loop (in iterations) the windows can be read from.
    pub fn min_iterations(&self) -> usize {
        self.tail.1.max(self.cycle_search.1) + 1
    }

    pub fn validate(&self) -> Result<(), DreamError> {
        if !(self.fixed_threshold > 0.0 && self.cycle_threshold > 0.0) {
            return Err(DreamError::Config("thresholds must be positive"));
        }
        if self.tail.0 > self.tail.1 || self.cycle_search.0 > self.cycle_search.1 {
            return Err(DreamError::Config("empty window"));
        }
        if self.fit.0 >= self.fit.1 || self.fit.1 > self.curve_len {
            return Err(DreamError::Config(
                "fit range must lie inside the divergence curve",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DynamicsLabel {
    FixedPoint,
    LimitCycle,
    Chaotic,
    Undetermined,
}

impl DynamicsLabel {
    pub const ALL: [DynamicsLabel; 4] = [
        DynamicsLabel::FixedPoint,
        DynamicsLabel::LimitCycle,
        DynamicsLabel::Chaotic,
        DynamicsLabel::Undetermined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DynamicsLabel::FixedPoint => "fixed_point",
            DynamicsLabel::LimitCycle => "limit_cycle",
            DynamicsLabel::Chaotic => "chaotic",
            DynamicsLabel::Undetermined => "undetermined",
        }
    }
}

/// Label plus the exponent when it was estimated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classification {
    pub label: DynamicsLabel,
    pub lyapunov: Option<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Classifies a latent sequence `z_0..z_n`. A run that meets both the
/// fixed-point and cycle criteria is a fixed point. Runs without usable
/// neighbour pairs are `Undetermined`.
pub fn classify(z: &[Vec<f64>], config: &ClassifierConfig) -> Result<Classification, DreamError> {
    config.validate()?;
    let needed = config.min_iterations() + 1;
    if z.len() < needed {
        return Err(DreamError::TooShort {
            needed,
            got: z.len(),
        });
    }
    let tail: f64 = (config.tail.0..=config.tail.1)
        .map(|i| sq_dist(&z[i + 1], &z[i]))
        .sum();
    if tail < config.fixed_threshold {
        return Ok(Classification {
            label: DynamicsLabel::FixedPoint,
            lyapunov: None,
        });
    }
    let last = &z[z.len() - 1];
    let recurrence = (config.cycle_search.0..=config.cycle_search.1)
        .map(|i| sq_dist(last, &z[i]))
        .fold(f64::INFINITY, f64::min);
    if recurrence < config.cycle_threshold {
        return Ok(Classification {
            label: DynamicsLabel::LimitCycle,
            lyapunov: None,
        });
    }
    match lyapunov_rosenstein(z, config) {
        Ok(l) => Ok(Classification {
            label: if l > config.chaos_margin {
                DynamicsLabel::Chaotic
            } else {
                DynamicsLabel::Undetermined
            },
            lyapunov: Some(l),
        }),
        Err(DreamError::NoNeighbours) => Ok(Classification {
            label: DynamicsLabel::Undetermined,
            lyapunov: None,
        }),
        Err(e) => Err(e),
    }
}

/// Label counts and fractions over a set of runs.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsReport {
    pub counts: [usize; 4],
    pub fractions: [f64; 4],
}

impl DynamicsReport {
    pub fn fraction(&self, label: DynamicsLabel) -> f64 {
        self.fractions[label as usize]
    }
}

pub fn aggregate(labels: &[DynamicsLabel]) -> DynamicsReport {
    let mut counts = [0usize; 4];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let n = labels.len().max(1) as f64;
    DynamicsReport {
        counts,
        fractions: counts.map(|c| c as f64 / n),
    }
}

/// Per-label mean and population standard deviation of fractions across
/// reports (one report per seed).
pub fn fraction_summary(reports: &[DynamicsReport]) -> [(f64, f64); 4] {
    let n = reports.len().max(1) as f64;
    let mut out = [(0.0, 0.0); 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let mean = reports.iter().map(|r| r.fractions[k]).sum::<f64>() / n;
        let var = reports
            .iter()
            .map(|r| (r.fractions[k] - mean).powi(2))
            .sum::<f64>()
            / n;
        *slot = (mean, var.sqrt());
    }
    out
}

/// Writes recorded images of `run` for iterations in `range` as
/// `start<s>_iter<i>.png`.
pub fn rollout_dump(
    run: &ClosedLoopRun,
    range: RangeInclusive<usize>,
    dir: &Path,
) -> Result<Vec<PathBuf>, DreamError> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for i in range {
        let im = run.image(i).ok_or(DreamError::NotRecorded(i))?;
        let path = dir.join(format!("start{:03}_iter{:03}.png", run.start, i));
        im.save(&path)?;
        out.push(path);
    }
    Ok(out)
}
