//! Training schedule: five critic updates, then one Enc/Gen update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{encoder, generator};
use super::losses::{gan_loss, kl_prior, layer_loss, mean_score, pixel_loss};
use super::{gather, reparameterise, ModelBundle, NetError, Variant};
use crate::diffengine::{AdamConfig, Graph, NormMode, OptimState, Tensor, TensorError, Var};

/// Where the gradient penalty is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PenaltyPoint {
    /// At the generated images themselves.
    #[default]
    Generated,
    /// At random real/generated interpolates.
    Interpolated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub critic_steps: usize,
    pub checkpoint_interval: u64,
    pub adam: AdamConfig,
    pub penalty_point: PenaltyPoint,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            iterations: 10_000,
            critic_steps: 5,
            checkpoint_interval: 1000,
            adam: AdamConfig::default(),
            penalty_point: PenaltyPoint::Generated,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.batch_size == 0 || self.iterations == 0 || self.checkpoint_interval == 0 {
            return Err(NetError::Config(
                "batch size, iterations and checkpoint interval must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Losses of one iteration. Critic fields are zero when no critic runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub kl: f32,
    pub recon: f32,
    /// `-alpha * mean Dis(x_hat)` as seen by Gen.
    pub adversarial: f32,
    /// L_GAN of the last critic step.
    pub critic: f32,
    pub penalty: f32,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "iteration,kl,recon,adversarial,critic,penalty";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration, self.kl, self.recon, self.adversarial, self.critic, self.penalty
        )
    }
}

/// A bundle together with the optimiser state of each network.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub bundle: ModelBundle,
    pub opt_enc: OptimState<f32>,
    pub opt_gen: OptimState<f32>,
    pub opt_dis: OptimState<f32>,
}

fn values(vars: &[Var<'_, f32>]) -> Vec<Tensor<f32>> {
    vars.iter().map(|v| (*v.value()).clone()).collect()
}

impl Trainer {
    pub fn new(bundle: ModelBundle, adam: AdamConfig) -> Self {
        Self {
            opt_enc: OptimState::new(&bundle.enc, adam),
            opt_gen: OptimState::new(&bundle.gen, adam),
            opt_dis: OptimState::new(&bundle.dis, adam),
            bundle,
        }
    }

    /// Random stream for one purpose within one iteration; independent of
    /// everything that happened before, so resumed runs match.
    fn stream(&self, iteration: u64, purpose: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.bundle.seed);
        rng.set_stream(iteration * 16 + purpose);
        rng
    }

    fn critic_active(&self) -> bool {
        self.bundle.variant.uses_critic(self.bundle.alpha)
    }

    /// Start indices `t` with `t + tau` inside the sequence.
    fn sample_batch(
        &self,
        frames: &Tensor<f32>,
        batch: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor<f32>, Tensor<f32>), NetError> {
        let n = frames.shape()[0];
        let tau = self.bundle.tau;
        if n <= tau {
            return Err(NetError::Config(format!(
                "dataset of {n} frames is too short for tau = {tau}"
            )));
        }
        let starts: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n - tau)).collect();
        let targets: Vec<usize> = starts.iter().map(|t| t + tau).collect();
        Ok((gather(frames, &starts), gather(frames, &targets)))
    }

    /// One full iteration on `frames` (`[N, 3, H, W]` in `[-1, 1]`).
    pub fn step(
        &mut self,
        frames: &Tensor<f32>,
        config: &TrainConfig,
    ) -> Result<LossRecord, NetError> {
        let iteration = self.bundle.iteration + 1;
        let diverged = |source: TensorError| NetError::Diverged { iteration, source };
        let lift = |e: NetError| match e {
            NetError::Tensor(t) => diverged(t),
            other => other,
        };
        let mut critic = (0.0, 0.0);
        if self.critic_active() {
            for k in 0..config.critic_steps {
                let mut rng = self.stream(iteration, 1 + k as u64);
                critic = self.critic_step(frames, config, &mut rng).map_err(lift)?;
            }
        }
        let mut rng = self.stream(iteration, 0);
        let (kl, recon, adversarial) = self
            .generator_step(frames, config, &mut rng)
            .map_err(lift)?;
        self.bundle.iteration = iteration;
        Ok(LossRecord {
            iteration,
            kl,
            recon,
            adversarial,
            critic: critic.0,
            penalty: critic.1,
        })
    }

    /// One Dis update; returns L_GAN and the penalty.
    pub fn critic_step(
        &mut self,
        frames: &Tensor<f32>,
        config: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f32, f32), NetError> {
        let (x_in, x_tgt) = self.sample_batch(frames, config.batch_size, rng)?;
        let b = &self.bundle;
        let (mu, lv) = b.encode_moments(&x_in)?;
        let z = reparameterise(&mu, &lv, rng);
        let fake = {
            let g = Graph::new();
            let mut stats = b.gen_stats.clone();
            g.no_grad(|| -> Result<Tensor<f32>, NetError> {
                let p = b.gen.bind_frozen(&g);
                let x = generator(
                    &b.arch,
                    &p,
                    &mut stats,
                    g.constant(z),
                    NormMode::Train { update: false },
                )?;
                Ok((*x.value()).clone())
            })?
        };
        let interp = match config.penalty_point {
            PenaltyPoint::Generated => None,
            PenaltyPoint::Interpolated => {
                let per = fake.len() / fake.shape()[0];
                let eps: Vec<f32> = (0..fake.shape()[0]).map(|_| rng.random::<f32>()).collect();
                Some(Tensor::from_fn(fake.shape(), |i| {
                    let e = eps[i / per];
                    e * x_tgt.data()[i] + (1.0 - e) * fake.data()[i]
                }))
            }
        };
        let g = Graph::new();
        let dis = b.dis.bind(&g);
        let terms = gan_loss(
            &b.arch,
            &dis,
            g.constant(x_tgt),
            g.leaf(fake),
            interp.map(|t| g.leaf(t)),
            b.lambda as f64,
        )?;
        let grads = g.grad(terms.total, dis.vars(), false)?;
        let out = (
            terms.total.item().unwrap_or(0.0),
            terms.penalty.item().unwrap_or(0.0),
        );
        self.opt_dis.step(&mut self.bundle.dis, &values(&grads))?;
        Ok(out)
    }

    /// One joint Enc/Gen update; returns KL, reconstruction and adversarial terms.
    pub fn generator_step(
        &mut self,
        frames: &Tensor<f32>,
        config: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<(f32, f32, f32), NetError> {
        let (x_in, x_tgt) = self.sample_batch(frames, config.batch_size, rng)?;
        let critic = self.critic_active();
        let b = &mut self.bundle;
        let g = Graph::new();
        let enc = b.enc.bind(&g);
        let gen = b.gen.bind(&g);
        let dis = b.dis.bind_frozen(&g);
        let (mu, lv) = encoder(&b.arch, &enc, g.constant(x_in))?;
        let eps = reparameterise(
            &Tensor::zeros(&mu.shape()),
            &Tensor::zeros(&mu.shape()),
            rng,
        );
        let z = mu.add(lv.scale(0.5)?.exp()?.mul(g.constant(eps))?)?;
        let xhat = generator(
            &b.arch,
            &gen,
            &mut b.gen_stats,
            z,
            NormMode::Train { update: true },
        )?;
        let target = g.constant(x_tgt);
        let kl = kl_prior(mu, lv)?;
        let recon = match b.variant {
            Variant::VaeGanLayer => layer_loss(&b.arch, &dis, xhat, target)?,
            _ => pixel_loss(xhat, target)?,
        };
        let enc_grads = g.grad(kl.add(recon)?, enc.vars(), false)?;
        let (gen_loss, adversarial) = if critic {
            let adv = mean_score(&b.arch, &dis, xhat)?.scale(-(b.alpha as f64))?;
            (recon.add(adv)?, adv.item().unwrap_or(0.0))
        } else {
            (recon, 0.0)
        };
        let gen_grads = g.grad(gen_loss, gen.vars(), false)?;
        let out = (
            kl.item().unwrap_or(0.0),
            recon.item().unwrap_or(0.0),
            adversarial,
        );
        self.opt_enc
            .step(&mut self.bundle.enc, &values(&enc_grads))?;
        self.opt_gen
            .step(&mut self.bundle.gen, &values(&gen_grads))?;
        Ok(out)
    }

    /// Runs until `config.iterations` total iterations, calling
    /// `on_checkpoint` after every `checkpoint_interval`-th iteration and
    /// `on_record` after every iteration.
    pub fn run(
        &mut self,
        frames: &Tensor<f32>,
        config: &TrainConfig,
        mut on_record: impl FnMut(&LossRecord),
        mut on_checkpoint: impl FnMut(&Trainer) -> Result<(), NetError>,
    ) -> Result<(), NetError> {
        config.validate()?;
        while self.bundle.iteration < config.iterations {
            let rec = self.step(frames, config)?;
            on_record(&rec);
            if rec.iteration % config.checkpoint_interval == 0 || rec.iteration == config.iterations
            {
                on_checkpoint(self)?;
            }
        }
        Ok(())
    }
}
