//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the engine's kernels.
#![allow(dead_code)]

use cogmap::diffengine::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Uniform values bounded away from zero (for kinks and reciprocals).
pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng, min: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let mag = rng.random_range(min..1.0);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

/// Direct summation cross-correlation.
pub fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (i * stride + ki) as isize - pad as isize;
                                let iw = (j * stride + kj) as isize - pad as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue;
                                }
                                let xv =
                                    x.data()[((b * c + ic) * h + ih as usize) * w + iw as usize];
                                let kv = k.data()[((oc * c + ic) * kh + ki) * kw + kj];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * o + oc) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, o, oh, ow], out).unwrap()
}

/// Triple-loop matrix product.
/// Transposed convolution by direct scattering of every input value.
pub fn deconv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, o, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c, kh, kw) = (k.shape()[1], k.shape()[2], k.shape()[3]);
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (w - 1) * stride + kw - 2 * pad;
    let mut out = vec![0.0; n * c * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for i in 0..h {
                for j in 0..w {
                    let xv = x.data()[((b * o + oc) * h + i) * w + j];
                    for ic in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let r = (i * stride + ki) as isize - pad as isize;
                                let q = (j * stride + kj) as isize - pad as isize;
                                if r < 0 || q < 0 || r >= oh as isize || q >= ow as isize {
                                    continue;
                                }
                                let kv = k.data()[((oc * c + ic) * kh + ki) * kw + kj];
                                out[((b * c + ic) * oh + r as usize) * ow + q as usize] += xv * kv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).unwrap()
}

pub fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a.data()[i * k + l] * b.data()[l * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of a scalar function of several tensors.
pub fn central_differences(
    inputs: &[Tensor<f64>],
    h: f64,
    f: &dyn Fn(&[Tensor<f64>]) -> f64,
) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[t].len());
        for i in 0..inputs[t].len() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + h;
            let plus = f(&work);
            work[t].data_mut()[i] = orig - h;
            let minus = f(&work);
            work[t].data_mut()[i] = orig;
            g.push((plus - minus) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

pub type Builder<'a> = dyn for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64> + 'a;

/// Boxes a closure with the higher-ranked signature `gradient_check` wants.
pub fn builder<'a, F>(f: F) -> Box<Builder<'a>>
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64> + 'a,
{
    Box::new(f)
}

/// Relative error between analytic gradients of `build` and central
/// differences with step `h`, over all inputs jointly.
pub fn gradient_check(inputs: &[Tensor<f64>], h: f64, build: &Builder<'_>) -> f64 {
    let g = Graph::new();
    let leaves: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&g, &leaves);
    let grads = g.grad(loss, &leaves, false).unwrap();
    let analytic: Vec<f64> = grads
        .iter()
        .flat_map(|v| v.value().data().to_vec())
        .collect();
    let eval = |ts: &[Tensor<f64>]| {
        let g = Graph::new();
        let vars: Vec<_> = ts.iter().map(|t| g.constant(t.clone())).collect();
        build(&g, &vars).item().unwrap()
    };
    let numeric: Vec<f64> = central_differences(inputs, h, &eval)
        .into_iter()
        .flatten()
        .collect();
    rel_err(&analytic, &numeric)
}

/// Weighted sum `sum(w * y)` with a fixed pseudo-random weight so every
/// output coordinate contributes a distinct cotangent.
pub fn probe<'g>(y: Var<'g, f64>) -> Var<'g, f64> {
    let shape = y.shape();
    let w = Tensor::from_fn(&shape, |i| ((i * 7919 + 13) % 97) as f64 / 48.5 - 1.0);
    y.mul(y.graph().constant(w)).unwrap().sum().unwrap()
}

/// Full objective `KL + recon + alpha * L_GAN` with the penalty taken
/// at the generated batch, built from the library's forward passes in f64.
/// `params` holds Enc, Gen and Dis tensors in that order; `names` their names.
pub fn full_vaegan_loss<'g>(
    arch: &cogmap::nets::Arch,
    names: &[String],
    params: &[Var<'g, f64>],
    stats: &cogmap::diffengine::ParamSet<f64>,
    x_in: &Tensor<f64>,
    x_tgt: &Tensor<f64>,
    eps: &Tensor<f64>,
    alpha: f64,
    lambda: f64,
) -> Var<'g, f64> {
    use cogmap::diffengine::NormMode;
    use cogmap::nets::arch::{discriminator, encoder, generator};
    use cogmap::nets::losses::{kl_prior, penalty_from_scores, pixel_loss};
    let g = params[0].graph();
    let bound = cogmap::diffengine::Bound::from_vars(names, params);
    let (mu, lv) = encoder(arch, &bound, g.constant(x_in.clone())).unwrap();
    let z = mu
        .add(
            lv.scale(0.5)
                .unwrap()
                .exp()
                .unwrap()
                .mul(g.constant(eps.clone()))
                .unwrap(),
        )
        .unwrap();
    let mut stats = stats.clone();
    let xhat = generator(
        arch,
        &bound,
        &mut stats,
        z,
        NormMode::Train { update: false },
    )
    .unwrap();
    let target = g.constant(x_tgt.clone());
    let (fake, _) = discriminator(arch, &bound, xhat, false).unwrap();
    let (real, _) = discriminator(arch, &bound, target, false).unwrap();
    let penalty = penalty_from_scores(fake, xhat).unwrap();
    let gan = fake
        .mean()
        .unwrap()
        .sub(real.mean().unwrap())
        .unwrap()
        .add(penalty.scale(lambda).unwrap())
        .unwrap();
    kl_prior(mu, lv)
        .unwrap()
        .add(pixel_loss(xhat, target).unwrap())
        .unwrap()
        .add(gan.scale(alpha).unwrap())
        .unwrap()
}

/// Textbook Pearson via raw sums.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

pub fn upper_oracle(p: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            out.push(
                p[i].iter()
                    .zip(&p[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            );
        }
    }
    out
}

/// Mean cosine of turning angles from atan2 headings.
pub fn smoothness_oracle(p: &[[f64; 2]]) -> f64 {
    let heads: Vec<f64> = p
        .windows(2)
        .map(|w| (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0]))
        .collect();
    heads.windows(2).map(|h| (h[1] - h[0]).cos()).sum::<f64>() / (heads.len() - 1) as f64
}

pub fn median_oracle(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn d_lr_oracle(p: &[[f64; 2]], l: usize, r: usize, t: usize) -> f64 {
    let d = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let aligned: Vec<f64> = (0..t).map(|k| d(p[l + k], p[r + k])).collect();
    let mut all = Vec::new();
    for a in 0..t {
        for b in 0..t {
            all.push(d(p[l + a], p[r + b]));
        }
    }
    median_oracle(aligned) / median_oracle(all)
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j].powi(2))
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
    ev
}

pub fn covariance_oracle(p: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, d) = (p.len(), p[0].len());
    let mean: Vec<f64> = (0..d)
        .map(|j| p.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    (0..d)
        .map(|a| {
            (0..d)
                .map(|b| {
                    p.iter()
                        .map(|r| (r[a] - mean[a]) * (r[b] - mean[b]))
                        .sum::<f64>()
                        / (n - 1) as f64
                })
                .collect()
        })
        .collect()
}
