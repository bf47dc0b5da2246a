use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{median, AtlasError, Pca};
use crate::diffengine::Tensor;
use crate::imageio::{grid, RgbImage};
use crate::mazeworld::{MazeDataset, PathLabel};
use crate::nets::{frames_batch, gather, reparameterise, EncodeMode, ModelBundle};

const PROBE_CHUNK: usize = 16;

fn to_images(x: &Tensor<f32>) -> Result<Vec<RgbImage>, AtlasError> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let per = 3 * h * w;
    x.data()
        .chunks(per)
        .map(|c| RgbImage::from_chw(c, h, w).map_err(AtlasError::from))
        .collect()
}

/// For every frame: mean over pixels of the per-pixel standard deviation
/// across `k` images generated from sampled encodings of that frame.
/// Frame `i` draws from stream `i` of a ChaCha8 generator seeded by `seed`.
pub fn variability_probe(
    bundle: &ModelBundle,
    frames: &Tensor<f32>,
    k: usize,
    seed: u64,
) -> Result<Vec<f64>, AtlasError> {
    if k < 2 {
        return Err(AtlasError::TooFew { needed: 2, got: k });
    }
    let n = frames.shape()[0];
    let d = bundle.arch.d_z;
    let mut out = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(PROBE_CHUNK) {
        let (mu, lv) = bundle.encode_moments(&gather(frames, chunk))?;
        let mut z = Vec::with_capacity(chunk.len() * k * d);
        for (row, &frame) in chunk.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(frame as u64);
            let m = Tensor::new(vec![1, d], mu.data()[row * d..(row + 1) * d].to_vec())?;
            let l = Tensor::new(vec![1, d], lv.data()[row * d..(row + 1) * d].to_vec())?;
            for _ in 0..k {
                z.extend_from_slice(reparameterise(&m, &l, &mut rng).data());
            }
        }
        let images = bundle.generate(&Tensor::new(vec![chunk.len() * k, d], z)?)?;
        let per: usize = images.shape()[1..].iter().product();
        for group in images.data().chunks(per * k) {
            out.push(pixel_std_mean(group, per, k));
        }
    }
    Ok(out)
}

/// Mean over pixels of the population standard deviation across `k`
/// stacked images of `per` values each.
fn pixel_std_mean(stack: &[f32], per: usize, k: usize) -> f64 {
    let mut total = 0.0;
    for p in 0..per {
        let mean = (0..k).map(|s| stack[s * per + p] as f64).sum::<f64>() / k as f64;
        let var = (0..k)
            .map(|s| (stack[s * per + p] as f64 - mean).powi(2))
            .sum::<f64>()
            / k as f64;
        total += var.sqrt();
    }
    total / per as f64
}

/// Largest per-frame value near one junction (earliest frame on ties).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowMax {
    pub junction: usize,
    pub frame: usize,
    pub value: f64,
    /// `value` over the median of all frames.
    pub ratio_to_median: f64,
}

pub fn window_maxima(values: &[f64], junctions: &[usize], window: usize) -> Vec<WindowMax> {
    let med = median(&mut values.to_vec());
    junctions
        .iter()
        .filter(|&&j| j < values.len())
        .map(|&j| {
            let lo = j.saturating_sub(window);
            let hi = (j + window).min(values.len() - 1);
            let frame = (lo..=hi).fold(
                lo,
                |best, f| if values[f] > values[best] { f } else { best },
            );
            WindowMax {
                junction: j,
                frame,
                value: values[frame],
                ratio_to_median: if med > 0.0 {
                    values[frame] / med
                } else {
                    f64::INFINITY
                },
            }
        })
        .collect()
}

/// Images written for one junction: rows are the left target, the right
/// target and the generated prediction; columns are offsets
/// `-window..=window` from the junction.
#[derive(Clone, Debug)]
pub struct Panel {
    pub junction: usize,
    pub path: PathBuf,
    pub images: Vec<RgbImage>,
}

fn first_junction(ds: &MazeDataset, side: PathLabel) -> Option<usize> {
    ds.junction_indices()
        .into_iter()
        .find(|&j| ds.labels.get(j + 1) == Some(&side))
}

fn frame_image(ds: &MazeDataset, i: usize) -> Result<RgbImage, AtlasError> {
    Ok(RgbImage::new(ds.width, ds.height, ds.frame(i).to_vec())?)
}

pub fn bifurcation_dump(
    bundle: &ModelBundle,
    ds: &MazeDataset,
    window: usize,
    dir: &Path,
) -> Result<Vec<Panel>, AtlasError> {
    let tau = bundle.tau;
    let missing = |side| AtlasError::Maze(crate::mazeworld::MazeError::MissingTraversal(side));
    let jl = first_junction(ds, PathLabel::Left).ok_or_else(|| missing(PathLabel::Left))?;
    let jr = first_junction(ds, PathLabel::Right).ok_or_else(|| missing(PathLabel::Right))?;
    let cols = 2 * window + 1;
    let check = |start: usize| -> Result<usize, AtlasError> {
        let (lo, hi) = (start.checked_sub(window), start + window);
        match lo {
            Some(lo) if hi < ds.len() => Ok(lo),
            _ => Err(AtlasError::OutOfRange {
                start: start.saturating_sub(window),
                end: hi + 1,
                len: ds.len(),
            }),
        }
    };
    let left0 = check(jl + tau)?;
    let right0 = check(jr + tau)?;
    std::fs::create_dir_all(dir)?;
    let mut panels = Vec::new();
    for j in ds.junction_indices() {
        let start = check(j)?;
        let inputs: Vec<usize> = (start..start + cols).collect();
        let z = bundle.encode(&frames_batch(ds, &inputs), EncodeMode::Mean)?;
        let generated = to_images(&bundle.generate(&z)?)?;
        let mut images = Vec::with_capacity(3 * cols);
        for c in 0..cols {
            images.push(frame_image(ds, left0 + c)?);
        }
        for c in 0..cols {
            images.push(frame_image(ds, right0 + c)?);
        }
        images.extend(generated);
        let path = dir.join(format!("bifurcation_j{j:03}.png"));
        grid(&images, 3, cols)?.save(&path)?;
        panels.push(Panel {
            junction: j,
            path,
            images,
        });
    }
    Ok(panels)
}

/// Latent vectors on an `n`×`n` lattice over the range of the first two
/// principal coordinates (rows follow the second component from high to
/// low); other coordinates sit at the mean. `n = 1` gives the centroid.
pub fn pca_grid(pca: &Pca, projection: &[[f64; 2]], n: usize) -> Vec<Vec<f64>> {
    let axis = |k: usize| {
        let lo = projection
            .iter()
            .map(|p| p[k])
            .fold(f64::INFINITY, f64::min);
        let hi = projection
            .iter()
            .map(|p| p[k])
            .fold(f64::NEG_INFINITY, f64::max);
        if n == 1 {
            vec![0.0]
        } else {
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect::<Vec<_>>()
        }
    };
    let (a, mut b) = (axis(0), axis(1));
    b.reverse();
    let mut out = Vec::with_capacity(n * n);
    for &y in &b {
        for &x in &a {
            out.push(pca.inverse(&[x, y]));
        }
    }
    out
}

pub fn pca_grid_dump(
    bundle: &ModelBundle,
    pca: &Pca,
    projection: &[[f64; 2]],
    n: usize,
    path: &Path,
) -> Result<Vec<RgbImage>, AtlasError> {
    let latents = pca_grid(pca, projection, n);
    let d = bundle.arch.d_z;
    let z: Vec<f32> = latents.iter().flatten().map(|&v| v as f32).collect();
    let images = to_images(&bundle.generate(&Tensor::new(vec![latents.len(), d], z)?)?)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    grid(&images, n, n)?.save(path)?;
    Ok(images)
}
