//! Enc, Gen and Dis, their losses and the training loop.

pub mod arch;
mod checkpoint;
pub mod losses;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::diffengine::{Graph, NormMode, ParamSet, Tensor, TensorError};
use crate::mazeworld::MazeDataset;

pub use arch::{Arch, LayerSpec};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION,
};
pub use train::{LossRecord, PenaltyPoint, TrainConfig, Trainer};

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unsupported architecture {0:?}")]
    Arch(Arch),
    #[error("input shape {found:?} does not match expected per-sample shape {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing tensor {0}")]
    Missing(String),
    #[error("tensor {name} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("training diverged at iteration {iteration}: {source}")]
    Diverged {
        iteration: u64,
        #[source]
        source: TensorError,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("not a checkpoint (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("invalid checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// KL prior plus pixel reconstruction.
    Vae = 0,
    /// Adds the Wasserstein critic term weighted by α.
    VaeGanPixel = 1,
    /// Reconstruction measured on a Dis middle layer; α fixed to 1.
    VaeGanLayer = 2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Vae, Variant::VaeGanPixel, Variant::VaeGanLayer];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vae => "vae",
            Variant::VaeGanPixel => "vaegan",
            Variant::VaeGanLayer => "vaegan_layer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['-', '/'], "_").as_str() {
            "vae" => Some(Variant::Vae),
            "vaegan" | "vae_gan" | "vaegan_pixel" => Some(Variant::VaeGanPixel),
            "vaegan_layer" | "vae_gan_layer" | "layer" => Some(Variant::VaeGanLayer),
            _ => None,
        }
    }

    pub fn uses_critic(self, alpha: f32) -> bool {
        match self {
            Variant::Vae => false,
            Variant::VaeGanPixel => alpha != 0.0,
            Variant::VaeGanLayer => true,
        }
    }
}

/// Trained (or freshly initialised) networks plus their configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub arch: Arch,
    pub variant: Variant,
    pub tau: usize,
    pub alpha: f32,
    pub lambda: f32,
    pub seed: u64,
    /// Completed training iterations.
    pub iteration: u64,
    pub enc: ParamSet<f32>,
    pub gen: ParamSet<f32>,
    /// Batch-normalisation running means and variances of Gen.
    pub gen_stats: ParamSet<f32>,
    pub dis: ParamSet<f32>,
}

pub const DEFAULT_LAMBDA: f32 = 10.0;

impl ModelBundle {
    /// Fresh networks; initialisation depends only on `seed`.
    pub fn new(arch: Arch, variant: Variant, tau: usize, alpha: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1417_a11c_e000_0000);
        let enc = arch.init_enc(&mut rng);
        let (gen, gen_stats) = arch.init_gen(&mut rng);
        let dis = arch.init_dis(&mut rng);
        let alpha = if variant == Variant::VaeGanLayer {
            1.0
        } else {
            alpha
        };
        Self {
            arch,
            variant,
            tau,
            alpha,
            lambda: DEFAULT_LAMBDA,
            seed,
            iteration: 0,
            enc,
            gen,
            gen_stats,
            dis,
        }
    }

    /// Short identifier used for output directories.
    pub fn tag(&self) -> String {
        format!(
            "{}_tau{}_z{}_seed{}",
            self.variant.name(),
            self.tau,
            self.arch.d_z,
            self.seed
        )
    }

    /// Encoder mean and log-variance for a `[N, 3, H, W]` batch.
    pub fn encode_moments(&self, x: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>), NetError> {
        let g = Graph::new();
        g.no_grad(|| {
            let p = self.enc.bind_frozen(&g);
            let (mu, lv) = arch::encoder(&self.arch, &p, g.constant(x.clone()))?;
            Ok(((*mu.value()).clone(), (*lv.value()).clone()))
        })
    }

    pub fn encode(&self, x: &Tensor<f32>, mode: EncodeMode<'_>) -> Result<Tensor<f32>, NetError> {
        let (mu, lv) = self.encode_moments(x)?;
        Ok(match mode {
            EncodeMode::Mean => mu,
            EncodeMode::Sample(rng) => reparameterise(&mu, &lv, rng),
        })
    }

    /// Gen with running batch statistics (evaluation mode).
    pub fn generate(&self, z: &Tensor<f32>) -> Result<Tensor<f32>, NetError> {
        let g = Graph::new();
        let mut stats = self.gen_stats.clone();
        g.no_grad(|| {
            let p = self.gen.bind_frozen(&g);
            let x = arch::generator(
                &self.arch,
                &p,
                &mut stats,
                g.constant(z.clone()),
                NormMode::Eval,
            )?;
            Ok((*x.value()).clone())
        })
    }

    /// Critic scores `[N]`.
    pub fn critic(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, NetError> {
        let g = Graph::new();
        g.no_grad(|| {
            let p = self.dis.bind_frozen(&g);
            let (s, _) = arch::discriminator(&self.arch, &p, g.constant(x.clone()), false)?;
            let n = s.value().len();
            Ok((*s.value()).clone().reshaped(vec![n])?)
        })
    }
}

/// How [`ModelBundle::encode`] turns moments into latents.
pub enum EncodeMode<'a> {
    Mean,
    Sample(&'a mut ChaCha8Rng),
}

/// `mu + exp(logvar / 2) * eps` with standard normal `eps`.
pub fn reparameterise<R: Rng>(mu: &Tensor<f32>, logvar: &Tensor<f32>, rng: &mut R) -> Tensor<f32> {
    let eps: Tensor<f32> = Tensor::from_fn(mu.shape(), |_| rng.sample::<f32, _>(StandardNormal));
    Tensor::from_fn(mu.shape(), |i| {
        mu.data()[i] + (0.5 * logvar.data()[i]).exp() * eps.data()[i]
    })
}

/// Maps a byte to `[-1, 1]`.
pub fn to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// All frames as a `[N, 3, H, W]` tensor in `[-1, 1]`.
pub fn frames_tensor(ds: &MazeDataset) -> Tensor<f32> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    frames_batch(ds, &idx)
}

/// Selected frames as a `[len, 3, H, W]` tensor in `[-1, 1]`.
pub fn frames_batch(ds: &MazeDataset, indices: &[usize]) -> Tensor<f32> {
    let (h, w) = (ds.height, ds.width);
    let plane = h * w;
    let mut data = vec![0.0f32; indices.len() * 3 * plane];
    for (b, &i) in indices.iter().enumerate() {
        let frame = ds.frame(i);
        let out = &mut data[b * 3 * plane..(b + 1) * 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                out[c * plane + p] = to_unit(frame[p * 3 + c]);
            }
        }
    }
    Tensor::new(vec![indices.len(), 3, h, w], data).expect("consistent frame sizes")
}

/// Rows `indices` of a `[N, ...]` tensor.
pub fn gather(t: &Tensor<f32>, indices: &[usize]) -> Tensor<f32> {
    let per: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(indices.len() * per);
    for &i in indices {
        data.extend_from_slice(&t.data()[i * per..(i + 1) * per]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = indices.len();
    Tensor::new(shape, data).expect("row gather keeps sizes")
}
