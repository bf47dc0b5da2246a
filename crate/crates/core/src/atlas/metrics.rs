use super::{
    distance_correlation, distance_matrix, lr_dissimilarity, smoothness, AtlasError,
    LatentTrajectory, Pca, Source,
};
use crate::diffengine::Tensor;
use crate::mazeworld::MazeDataset;
use crate::nets::{frames_tensor, gather, EncodeMode, ModelBundle};

const ENCODE_CHUNK: usize = 64;

/// Summary of one bundle's latent map over a dataset.
#[derive(Clone, Debug)]
pub struct LatentMetrics {
    /// Correlation of latent distances with input-image distances.
    pub r_input: f64,
    /// Correlation of latent distances with distances `tau` frames ahead.
    pub r_target: f64,
    pub s_pca: f64,
    pub d_lr: f64,
    /// Cumulative PCA contribution ratios.
    pub cumulative: Vec<f64>,
    pub trajectory: LatentTrajectory,
    /// First two principal coordinates per frame.
    pub projection: Vec<[f64; 2]>,
    pub pca: Pca,
}

pub const METRICS_HEADER: &str = "r_input,r_target,s_pca,d_lr";

impl LatentMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.r_input, self.r_target, self.s_pca, self.d_lr
        )
    }
}

/// Mean-mode latents of every frame.
pub fn encode_trajectory(
    bundle: &ModelBundle,
    frames: &Tensor<f32>,
) -> Result<LatentTrajectory, AtlasError> {
    let n = frames.shape()[0];
    let mut rows = Vec::with_capacity(n * bundle.arch.d_z);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(ENCODE_CHUNK) {
        let z = bundle.encode(&gather(frames, chunk), EncodeMode::Mean)?;
        rows.extend_from_slice(z.data());
    }
    LatentTrajectory::from_rows(&rows, bundle.arch.d_z, Source::Encoded)
}

fn image_rows(frames: &Tensor<f32>, range: std::ops::Range<usize>) -> Vec<Vec<f64>> {
    let per: usize = frames.shape()[1..].iter().product();
    range
        .map(|t| {
            frames.data()[t * per..(t + 1) * per]
                .iter()
                .map(|&v| v as f64)
                .collect()
        })
        .collect()
}

pub fn latent_metrics(bundle: &ModelBundle, ds: &MazeDataset) -> Result<LatentMetrics, AtlasError> {
    let frames = frames_tensor(ds);
    let n = ds.len();
    let tau = bundle.tau;
    if n < tau + 3 {
        return Err(AtlasError::TooFew {
            needed: tau + 3,
            got: n,
        });
    }
    let trajectory = encode_trajectory(bundle, &frames)?;
    let span = n - tau;
    let dz = distance_matrix(&trajectory.z[..span])?;
    let r_input = distance_correlation(&distance_matrix(&image_rows(&frames, 0..span))?, &dz)?;
    let r_target = distance_correlation(&distance_matrix(&image_rows(&frames, tau..n))?, &dz)?;

    let pca = Pca::fit(&trajectory.z)?;
    let projection: Vec<[f64; 2]> = trajectory.z.iter().map(|z| pca.project2(z)).collect();
    let s_pca = smoothness(&projection)?;
    let seg = ds.segments()?;
    let d_lr = lr_dissimilarity(&projection, seg.t_left, seg.t_right, seg.t_path)?;
    Ok(LatentMetrics {
        r_input,
        r_target,
        s_pca,
        d_lr,
        cumulative: pca.cumulative(),
        trajectory,
        projection,
        pca,
    })
}
