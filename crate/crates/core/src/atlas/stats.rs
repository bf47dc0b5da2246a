use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, StandardNormal};

use super::AtlasError;

/// Monte Carlo draws of the studentized range per test.
pub const TUKEY_DRAWS: usize = 1_000_000;

/// One pairwise comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairTest {
    pub i: usize,
    pub j: usize,
    /// `mean_i - mean_j`.
    pub diff: f64,
    pub q: f64,
    pub p: f64,
}

/// Sorted draws of the studentized range for `k` groups and `df` residual
/// degrees of freedom.
fn range_draws(k: usize, df: usize, draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    let mut out: Vec<f64> = (0..draws)
        .map(|_| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for _ in 0..k {
                let v: f64 = rng.sample(StandardNormal);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let s = (rng.sample(chi) / df as f64).sqrt();
            (hi - lo) / s
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Monte Carlo quantile of the studentized range distribution.
pub fn studentized_range_quantile(prob: f64, k: usize, df: usize, draws: usize, seed: u64) -> f64 {
    let d = range_draws(k, df, draws, seed);
    let idx = ((prob * draws as f64).ceil() as usize).clamp(1, draws) - 1;
    d[idx]
}

/// Tukey's honestly significant difference test (Tukey-Kramer for unequal
/// sizes) with Monte Carlo tail probabilities.
pub fn tukey_hsd(
    groups: &[Vec<f64>],
    draws: usize,
    seed: u64,
) -> Result<Vec<PairTest>, AtlasError> {
    let k = groups.len();
    if k < 2 {
        return Err(AtlasError::TooFew { needed: 2, got: k });
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(AtlasError::TooFew {
            needed: 2,
            got: g.len(),
        });
    }
    let total: usize = groups.iter().map(Vec::len).sum();
    let df = total - k;
    let means: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        .collect();
    let ss: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let mse = ss / df as f64;
    if !mse.is_finite() {
        return Err(AtlasError::NonFinite("Tukey HSD samples"));
    }
    if mse == 0.0 {
        return Err(AtlasError::Degenerate("zero within-group variance"));
    }
    let dist = range_draws(k, df, draws, seed);
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let se =
                (0.5 * mse * (1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64)).sqrt();
            let diff = means[i] - means[j];
            let q = diff.abs() / se;
            let below = dist.partition_point(|&d| d < q);
            let p = (draws - below) as f64 / draws as f64;
            out.push(PairTest { i, j, diff, q, p });
        }
    }
    Ok(out)
}
