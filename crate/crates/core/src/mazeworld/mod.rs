//! First-person walks through a figure-8 maze.

mod format;
pub mod geometry;
mod render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use format::{load, read_from, save, write_to, FORMAT_VERSION};
pub use geometry::{PathLabel, Pose};
pub use render::render;

#[derive(Debug, Error)]
pub enum MazeError {
    #[error("{frames} frames is shorter than one lap of {lap} frames")]
    TooFewFrames { frames: usize, lap: usize },
    #[error("unsupported frame size {0} (expected 16, 32 or 64)")]
    UnsupportedSize(usize),
    #[error("junction probability {0} is outside [0, 1]")]
    Probability(f64),
    #[error("not a maze dataset (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported dataset version {0}")]
    Version(u32),
    #[error("dataset truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("header declares {expected} payload bytes but file has {found}")]
    PayloadLength { expected: usize, found: usize },
    #[error("invalid path label {0}")]
    Label(u8),
    #[error("dataset has no {} traversal", .0.name())]
    MissingTraversal(PathLabel),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const SIZES: [usize; 3] = [16, 32, 64];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MazeConfig {
    pub size: usize,
    pub frames: usize,
    pub seed: u64,
    pub junction_prob: f64,
}

impl Default for MazeConfig {
    fn default() -> Self {
        Self {
            size: 64,
            frames: 480,
            // First seed whose two laps turn left then right.
            seed: 5,
            junction_prob: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MazeDataset {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub poses: Vec<Pose>,
    pub labels: Vec<PathLabel>,
    /// `n_frames * height * width * 3` bytes, row-major RGB.
    pub pixels: Vec<u8>,
}

impl MazeDataset {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn frame_bytes(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        let n = self.frame_bytes();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Last stem frame before each left/right choice.
    pub fn junction_indices(&self) -> Vec<usize> {
        junctions(&self.labels)
    }

    pub fn segments(&self) -> Result<PathSegments, MazeError> {
        segments(&self.labels)
    }
}

pub fn junctions(labels: &[PathLabel]) -> Vec<usize> {
    labels
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] == PathLabel::Stem && w[1] != PathLabel::Stem)
        .map(|(i, _)| i)
        .collect()
}

/// Side chosen on each lap.
pub fn choose_sides(laps: usize, seed: u64, prob_left: f64) -> Vec<PathLabel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..laps)
        .map(|_| {
            if rng.random_bool(prob_left) {
                PathLabel::Left
            } else {
                PathLabel::Right
            }
        })
        .collect()
}

/// Poses and labels without rendering.
pub fn plan(config: &MazeConfig) -> Result<(Vec<Pose>, Vec<PathLabel>), MazeError> {
    let lap = geometry::lap_frames();
    if config.frames < lap {
        return Err(MazeError::TooFewFrames {
            frames: config.frames,
            lap,
        });
    }
    if !(0.0..=1.0).contains(&config.junction_prob) {
        return Err(MazeError::Probability(config.junction_prob));
    }
    let sides = choose_sides(
        config.frames.div_ceil(lap),
        config.seed,
        config.junction_prob,
    );
    Ok(geometry::route(config.frames, &sides))
}

pub fn generate(config: &MazeConfig) -> Result<MazeDataset, MazeError> {
    if !SIZES.contains(&config.size) {
        return Err(MazeError::UnsupportedSize(config.size));
    }
    let (poses, labels) = plan(config)?;
    let mut pixels = Vec::with_capacity(poses.len() * config.size * config.size * 3);
    for pose in &poses {
        pixels.extend(render(pose, config.size));
    }
    Ok(MazeDataset {
        height: config.size,
        width: config.size,
        seed: config.seed,
        poses,
        labels,
        pixels,
    })
}

/// Aligned left and right traversals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathSegments {
    pub t_left: usize,
    pub t_right: usize,
    /// Frames in each traversal; the aligned pairs are `t + dt` for
    /// `dt` in `0..t_path`.
    pub t_path: usize,
}

/// First traversal of each side, truncated to the shorter one.
pub fn segments(labels: &[PathLabel]) -> Result<PathSegments, MazeError> {
    let run = |side: PathLabel| -> Result<(usize, usize), MazeError> {
        let start = labels
            .iter()
            .position(|&l| l == side)
            .ok_or(MazeError::MissingTraversal(side))?;
        let len = labels[start..].iter().take_while(|&&l| l == side).count();
        Ok((start, len))
    };
    let (t_left, left_len) = run(PathLabel::Left)?;
    let (t_right, right_len) = run(PathLabel::Right)?;
    Ok(PathSegments {
        t_left,
        t_right,
        t_path: left_len.min(right_len),
    })
}
