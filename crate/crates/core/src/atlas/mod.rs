//! Latent-space analyses: distance structure, PCA, trajectory shape and
//! the significance test used to compare conditions.

mod dumps;
mod metrics;
mod pca;
mod stats;

use thiserror::Error;

use crate::diffengine::TensorError;
use crate::imageio::ImageError;
use crate::mazeworld::MazeError;
use crate::nets::NetError;

pub use dumps::{
    bifurcation_dump, pca_grid, pca_grid_dump, variability_probe, window_maxima, Panel, WindowMax,
};
pub use metrics::{encode_trajectory, latent_metrics, LatentMetrics, METRICS_HEADER};
pub use pca::Pca;
pub use stats::{studentized_range_quantile, tukey_hsd, PairTest, TUKEY_DRAWS};

#[derive(Debug, Error)]
pub enum AtlasError {
    #[error("distance matrices differ in size ({0} vs {1})")]
    SizeMismatch(usize, usize),
    #[error("need at least {needed} items, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("items have inconsistent dimensions ({0} vs {1})")]
    Dimension(usize, usize),
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("segment [{start}, {end}) exceeds the trajectory of length {len}")]
    OutOfRange {
        start: usize,
        end: usize,
        len: usize,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Maze(#[from] MazeError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Whether latents came from encoding data or from the closed loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Encoded,
    ClosedLoop,
}

/// Ordered latent vectors with the frame each came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentTrajectory {
    pub z: Vec<Vec<f64>>,
    pub source: Source,
    pub frames: Vec<usize>,
}

impl LatentTrajectory {
    pub fn new(z: Vec<Vec<f64>>, source: Source, frames: Vec<usize>) -> Result<Self, AtlasError> {
        if z.len() != frames.len() {
            return Err(AtlasError::Dimension(z.len(), frames.len()));
        }
        let d = z.first().map_or(0, Vec::len);
        for v in &z {
            if v.len() != d {
                return Err(AtlasError::Dimension(d, v.len()));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(AtlasError::NonFinite("latent trajectory"));
            }
        }
        Ok(Self { z, source, frames })
    }

    /// Rows of a `[N, d]` latent tensor, one per frame `0..N`.
    pub fn from_rows(data: &[f32], d: usize, source: Source) -> Result<Self, AtlasError> {
        let z: Vec<Vec<f64>> = data
            .chunks(d)
            .map(|r| r.iter().map(|&v| v as f64).collect())
            .collect();
        let frames = (0..z.len()).collect();
        Self::new(z, source, frames)
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.z.first().map_or(0, Vec::len)
    }
}

/// Symmetric matrix of pairwise Euclidean distances, zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds a symmetric matrix from its strict upper triangle, row by row.
    pub fn from_upper(n: usize, upper: &[f64]) -> Result<Self, AtlasError> {
        let want = n * n.saturating_sub(1) / 2;
        if upper.len() != want {
            return Err(AtlasError::Dimension(want, upper.len()));
        }
        let mut data = vec![0.0; n * n];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                data[i * n + j] = upper[k];
                data[j * n + i] = upper[k];
                k += 1;
            }
        }
        Ok(Self { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Entries strictly above the diagonal, row by row.
    pub fn upper(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * self.n.saturating_sub(1) / 2);
        for i in 0..self.n {
            out.extend_from_slice(&self.data[i * self.n + i + 1..(i + 1) * self.n]);
        }
        out
    }
}

/// Pairwise Euclidean distances over flattened items.
pub fn distance_matrix<I: AsRef<[f64]>>(items: &[I]) -> Result<DistanceMatrix, AtlasError> {
    let n = items.len();
    let d = items.first().map_or(0, |v| v.as_ref().len());
    for v in items {
        if v.as_ref().len() != d {
            return Err(AtlasError::Dimension(d, v.as_ref().len()));
        }
    }
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let a = items[i].as_ref();
        for j in i + 1..n {
            let b = items[j].as_ref();
            let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            data[i * n + j] = s.sqrt();
            data[j * n + i] = data[i * n + j];
        }
    }
    Ok(DistanceMatrix { n, data })
}

/// Pearson correlation over the strict upper triangles of two matrices.
pub fn distance_correlation(a: &DistanceMatrix, b: &DistanceMatrix) -> Result<f64, AtlasError> {
    if a.n != b.n {
        return Err(AtlasError::SizeMismatch(a.n, b.n));
    }
    if a.n < 3 {
        return Err(AtlasError::TooFew {
            needed: 3,
            got: a.n,
        });
    }
    pearson(&a.upper(), &b.upper())
}

pub(crate) fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AtlasError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AtlasError::Degenerate(
            "constant distances have no correlation",
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean cosine between successive displacements of a 2-D path. Steps of
/// zero length have no direction; terms touching them are skipped.
pub fn smoothness(points: &[[f64; 2]]) -> Result<f64, AtlasError> {
    if points.len() < 3 {
        return Err(AtlasError::TooFew {
            needed: 3,
            got: points.len(),
        });
    }
    let steps: Vec<[f64; 2]> = points
        .windows(2)
        .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]])
        .collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for w in steps.windows(2) {
        let (a, b) = (w[0], w[1]);
        let na = a[0].hypot(a[1]);
        let nb = b[0].hypot(b[1]);
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        sum += ((a[0] * b[0] + a[1] * b[1]) / (na * nb)).clamp(-1.0, 1.0);
        count += 1;
    }
    if count == 0 {
        return Err(AtlasError::Degenerate("path never moves"));
    }
    Ok(sum / count as f64)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median aligned left/right distance over the median of all cross pairs,
/// with offsets `0..t_path` from `t_left` and `t_right`.
pub fn lr_dissimilarity(
    points: &[[f64; 2]],
    t_left: usize,
    t_right: usize,
    t_path: usize,
) -> Result<f64, AtlasError> {
    if t_path == 0 {
        return Err(AtlasError::TooFew { needed: 1, got: 0 });
    }
    for start in [t_left, t_right] {
        if start + t_path > points.len() {
            return Err(AtlasError::OutOfRange {
                start,
                end: start + t_path,
                len: points.len(),
            });
        }
    }
    let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    let left = &points[t_left..t_left + t_path];
    let right = &points[t_right..t_right + t_path];
    let mut aligned: Vec<f64> = left.iter().zip(right).map(|(&a, &b)| dist(a, b)).collect();
    let mut all = Vec::with_capacity(t_path * t_path);
    for &a in left {
        for &b in right {
            all.push(dist(a, b));
        }
    }
    let denom = median(&mut all);
    if denom == 0.0 {
        return Err(AtlasError::Degenerate(
            "left and right paths collapse to a point",
        ));
    }
    Ok(median(&mut aligned) / denom)
}
