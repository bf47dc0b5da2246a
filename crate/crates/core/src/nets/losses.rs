//! Loss terms. Every scalar is averaged over the batch.

use super::arch::{discriminator, Arch};
use super::NetError;
use crate::diffengine::{Bound, Element, Var};

/// KL divergence from `N(mu, exp(logvar))` to `N(0, I)`.
pub fn kl_prior<'g, T: Element>(
    mu: Var<'g, T>,
    logvar: Var<'g, T>,
) -> Result<Var<'g, T>, NetError> {
    let n = mu.shape()[0] as f64;
    let inner = logvar
        .add_scalar(1.0)?
        .sub(mu.square()?)?
        .sub(logvar.exp()?)?;
    Ok(inner.sum()?.scale(-0.5 / n)?)
}

/// Half the squared error summed over each sample.
pub fn pixel_loss<'g, T: Element>(
    xhat: Var<'g, T>,
    target: Var<'g, T>,
) -> Result<Var<'g, T>, NetError> {
    let n = xhat.shape()[0] as f64;
    Ok(xhat.sub(target)?.sq_norm()?.scale(0.5 / n)?)
}

/// Mean critic score.
pub fn mean_score<'g, T: Element>(
    arch: &Arch,
    dis: &Bound<'g, T>,
    x: Var<'g, T>,
) -> Result<Var<'g, T>, NetError> {
    let (s, _) = discriminator(arch, dis, x, false)?;
    Ok(s.mean()?)
}

/// Mean of `(|grad_x s| - 1)^2` over the batch where `s` holds per-sample
/// critic scores computed from the leaf `x`; differentiable with respect to
/// the critic parameters.
pub fn penalty_from_scores<'g, T: Element>(
    scores: Var<'g, T>,
    x: Var<'g, T>,
) -> Result<Var<'g, T>, NetError> {
    let gx = x.graph().grad(scores.sum()?, &[x], true)?[0];
    let norms = gx.square()?.sum_per_sample()?.sqrt()?;
    Ok(norms.add_scalar(-1.0)?.square()?.mean()?)
}

/// Gradient penalty of the critic at the differentiable leaf `x`.
pub fn gradient_penalty<'g, T: Element>(
    arch: &Arch,
    dis: &Bound<'g, T>,
    x: Var<'g, T>,
) -> Result<Var<'g, T>, NetError> {
    let (s, _) = discriminator(arch, dis, x, false)?;
    penalty_from_scores(s, x)
}

/// The critic objective `Dis(fake) - Dis(real) + lambda * penalty`.
///
/// `fake` must be a differentiable leaf. The penalty is taken at `fake`
/// unless `interpolate` supplies another leaf.
pub fn gan_loss<'g, T: Element>(
    arch: &Arch,
    dis: &Bound<'g, T>,
    real: Var<'g, T>,
    fake: Var<'g, T>,
    interpolate: Option<Var<'g, T>>,
    lambda: f64,
) -> Result<GanTerms<'g, T>, NetError> {
    let (fake_scores, _) = discriminator(arch, dis, fake, false)?;
    let fake_score = fake_scores.mean()?;
    let real_score = mean_score(arch, dis, real)?;
    let penalty = match interpolate {
        None => penalty_from_scores(fake_scores, fake)?,
        Some(x) => gradient_penalty(arch, dis, x)?,
    };
    let total = fake_score.sub(real_score)?.add(penalty.scale(lambda)?)?;
    Ok(GanTerms {
        total,
        fake_score,
        real_score,
        penalty,
    })
}

pub struct GanTerms<'g, T: Element> {
    pub total: Var<'g, T>,
    pub fake_score: Var<'g, T>,
    pub real_score: Var<'g, T>,
    pub penalty: Var<'g, T>,
}

/// Half the squared distance between middle-layer Dis activations,
/// summed per sample.
pub fn layer_loss<'g, T: Element>(
    arch: &Arch,
    dis: &Bound<'g, T>,
    xhat: Var<'g, T>,
    target: Var<'g, T>,
) -> Result<Var<'g, T>, NetError> {
    let (_, a) = discriminator(arch, dis, xhat, true)?;
    let (_, b) = discriminator(arch, dis, target, true)?;
    let (a, b) = (
        a.expect("middle layer requested"),
        b.expect("middle layer requested"),
    );
    pixel_loss(a, b)
}
