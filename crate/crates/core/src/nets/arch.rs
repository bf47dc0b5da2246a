//! Layer plans, initialisation and forward passes of Enc, Gen and Dis.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::NetError;
use crate::diffengine::{batch_norm, Bound, Element, NormMode, ParamSet, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;
/// Spatial extent at the deepest convolution.
pub const BOTTOM: usize = 8;

/// Network shape: image size, base channel width and latent dimension.
/// Width 64 at size 64 gives the full-size networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Arch {
    pub size: usize,
    pub width: usize,
    pub d_z: usize,
}

/// One convolution or transposed convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl LayerSpec {
    fn down(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            k: 4,
            stride: 2,
            pad: 1,
        }
    }

    fn same(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            k: 3,
            stride: 1,
            pad: 1,
        }
    }
}

impl Arch {
    pub fn new(size: usize, width: usize, d_z: usize) -> Result<Self, NetError> {
        let arch = Self { size, width, d_z };
        if width == 0 || d_z == 0 || ![16, 32, 64].contains(&size) {
            return Err(NetError::Arch(arch));
        }
        Ok(arch)
    }

    /// Number of stride-2 stages between the input and the 8×8 bottom.
    pub fn stages(&self) -> usize {
        (self.size / BOTTOM).trailing_zeros() as usize
    }

    /// Channel multipliers of the stride-2 stages actually used; smaller
    /// images drop the leading (highest resolution) stages.
    fn multipliers(&self, full: [usize; 3]) -> Vec<usize> {
        full[3 - self.stages()..].to_vec()
    }

    /// Convolutions shared by Enc and Dis.
    pub fn conv_plan(&self) -> Vec<LayerSpec> {
        let c = self.width;
        let mut plan = vec![LayerSpec::same(3, c)];
        let mut prev = c;
        for m in self.multipliers([2, 4, 8]) {
            plan.push(LayerSpec::down(prev, m * c));
            plan.push(LayerSpec::same(m * c, m * c));
            prev = m * c;
        }
        plan
    }

    /// Index in [`Arch::conv_plan`] of the Dis layer used for the
    /// layer-wise reconstruction loss: the 4×4 convolution to 4c channels,
    /// or the last 4×4 convolution when the image is too small to have it.
    pub fn middle_layer(&self) -> usize {
        let plan = self.conv_plan();
        let strided: Vec<usize> = (0..plan.len()).filter(|&i| plan[i].stride == 2).collect();
        strided
            .iter()
            .copied()
            .find(|&i| plan[i].cout == 4 * self.width)
            .unwrap_or(*strided.last().unwrap())
    }

    fn bottom_channels(&self) -> usize {
        8 * self.width
    }

    fn flat(&self) -> usize {
        self.bottom_channels() * BOTTOM * BOTTOM
    }

    /// Transposed convolutions of Gen after the fully-connected layer,
    /// excluding the image-forming output layer.
    pub fn deconv_plan(&self) -> Vec<LayerSpec> {
        let c = self.width;
        let mut plan = Vec::new();
        let mut prev = self.bottom_channels();
        for m in self.multipliers([8, 4, 2]) {
            plan.push(LayerSpec::down(prev, m * c));
            prev = m * c;
        }
        plan.push(LayerSpec::same(prev, c));
        plan
    }

    fn output_layer(&self) -> LayerSpec {
        LayerSpec::same(self.width, 3)
    }

    pub fn init_enc<R: Rng>(&self, rng: &mut R) -> ParamSet<f32> {
        let mut p = ParamSet::new();
        for (i, l) in self.conv_plan().iter().enumerate() {
            p.insert(
                format!("enc/conv{i}.w"),
                he(&[l.cout, l.cin, l.k, l.k], l.cin * l.k * l.k, rng),
            );
            p.insert(format!("enc/conv{i}.b"), Tensor::zeros(&[l.cout]));
        }
        p.insert(
            "enc/fc.w",
            he(&[self.flat(), 2 * self.d_z], self.flat(), rng),
        );
        p.insert("enc/fc.b", Tensor::zeros(&[2 * self.d_z]));
        p
    }

    pub fn init_dis<R: Rng>(&self, rng: &mut R) -> ParamSet<f32> {
        let mut p = ParamSet::new();
        for (i, l) in self.conv_plan().iter().enumerate() {
            p.insert(
                format!("dis/conv{i}.w"),
                he(&[l.cout, l.cin, l.k, l.k], l.cin * l.k * l.k, rng),
            );
            p.insert(format!("dis/conv{i}.b"), Tensor::zeros(&[l.cout]));
        }
        p.insert("dis/fc.w", he(&[self.flat(), 1], self.flat(), rng));
        p.insert("dis/fc.b", Tensor::zeros(&[1]));
        p
    }

    /// Gen parameters and its batch-normalisation running statistics.
    pub fn init_gen<R: Rng>(&self, rng: &mut R) -> (ParamSet<f32>, ParamSet<f32>) {
        let mut p = ParamSet::new();
        let mut stats = ParamSet::new();
        let mut norm = |p: &mut ParamSet<f32>, name: &str, n: usize| {
            p.insert(format!("gen/{name}.gamma"), Tensor::full(&[n], 1.0));
            p.insert(format!("gen/{name}.beta"), Tensor::zeros(&[n]));
            stats.insert(format!("gen/{name}.mean"), Tensor::zeros(&[n]));
            stats.insert(format!("gen/{name}.var"), Tensor::full(&[n], 1.0));
        };
        p.insert("gen/fc.w", he(&[self.d_z, self.flat()], self.d_z, rng));
        norm(&mut p, "fc", self.flat());
        for (i, l) in self.deconv_plan().iter().enumerate() {
            let fan_in = l.cin * l.k * l.k / (l.stride * l.stride);
            p.insert(
                format!("gen/deconv{i}.w"),
                he(&[l.cin, l.cout, l.k, l.k], fan_in, rng),
            );
            norm(&mut p, &format!("bn{i}"), l.cout);
        }
        let o = self.output_layer();
        p.insert(
            "gen/out.w",
            he(&[o.cin, o.cout, o.k, o.k], o.cin * o.k * o.k, rng),
        );
        p.insert("gen/out.b", Tensor::zeros(&[o.cout]));
        (p, stats)
    }

    /// Recovers the architecture from Enc and Gen parameter shapes.
    pub fn infer(enc: &ParamSet<f32>, gen: &ParamSet<f32>) -> Result<Self, NetError> {
        let shape = |p: &ParamSet<f32>, n: &str| {
            p.get(n)
                .map(|t| t.shape().to_vec())
                .ok_or_else(|| NetError::Missing(n.to_string()))
        };
        let width = shape(enc, "enc/conv0.w")?[0];
        let d_z = shape(gen, "gen/fc.w")?[0];
        let convs = enc
            .names()
            .iter()
            .filter(|n| n.ends_with(".w") && n.contains("/conv"))
            .count();
        let stages = convs.saturating_sub(1) / 2;
        let arch = Self::new(BOTTOM << stages, width, d_z)?;
        let expected = arch.init_enc(&mut ChaCha8Rng::seed_from_u64(0));
        check_shapes(&expected, enc)?;
        Ok(arch)
    }
}

fn check_shapes(expected: &ParamSet<f32>, actual: &ParamSet<f32>) -> Result<(), NetError> {
    for (name, t) in expected.iter() {
        let got = actual
            .get(name)
            .ok_or_else(|| NetError::Missing(name.to_string()))?;
        if got.shape() != t.shape() {
            return Err(NetError::Shape {
                name: name.to_string(),
                expected: t.shape().to_vec(),
                found: got.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// He-style scaled normal initialisation.
fn he<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<f32> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).unwrap();
    Tensor::from_fn(shape, |_| normal.sample(rng) as f32)
}

fn lrelu<'g, T: Element>(x: Var<'g, T>) -> Result<Var<'g, T>, NetError> {
    Ok(x.leaky_relu(LEAKY_SLOPE)?)
}

/// Convolution stack shared by Enc and Dis. Returns the flattened bottom
/// features and the activation of `keep` (if any).
fn conv_stack<'g, T: Element>(
    arch: &Arch,
    p: &Bound<'g, T>,
    prefix: &str,
    x: Var<'g, T>,
    keep: Option<usize>,
) -> Result<(Var<'g, T>, Option<Var<'g, T>>), NetError> {
    let xs = x.shape();
    if xs.len() != 4 || xs[1] != 3 || xs[2] != arch.size || xs[3] != arch.size {
        return Err(NetError::InputShape {
            expected: vec![3, arch.size, arch.size],
            found: xs,
        });
    }
    let mut h = x;
    let mut kept = None;
    for (i, l) in arch.conv_plan().iter().enumerate() {
        let w = p.get(&format!("{prefix}/conv{i}.w"))?;
        let b = p.get(&format!("{prefix}/conv{i}.b"))?;
        h = lrelu(h.conv2d(w, l.stride, l.pad)?.add_channel(b)?)?;
        if keep == Some(i) {
            kept = Some(h);
        }
    }
    Ok((h.flatten()?, kept))
}

/// Enc: mean and log-variance, each `[N, d_z]`.
pub fn encoder<'g, T: Element>(
    arch: &Arch,
    p: &Bound<'g, T>,
    x: Var<'g, T>,
) -> Result<(Var<'g, T>, Var<'g, T>), NetError> {
    let (h, _) = conv_stack(arch, p, "enc", x, None)?;
    let out = h.dense(p.get("enc/fc.w")?, p.get("enc/fc.b")?)?;
    Ok((
        out.slice_cols(0, arch.d_z)?,
        out.slice_cols(arch.d_z, arch.d_z)?,
    ))
}

/// Dis: one unbounded score per image (`[N, 1]`) and, on request, the
/// middle-layer activation.
pub fn discriminator<'g, T: Element>(
    arch: &Arch,
    p: &Bound<'g, T>,
    x: Var<'g, T>,
    with_middle: bool,
) -> Result<(Var<'g, T>, Option<Var<'g, T>>), NetError> {
    let keep = with_middle.then(|| arch.middle_layer());
    let (h, mid) = conv_stack(arch, p, "dis", x, keep)?;
    Ok((h.dense(p.get("dis/fc.w")?, p.get("dis/fc.b")?)?, mid))
}

/// Gen: images `[N, 3, size, size]` in `[-1, 1]`.
pub fn generator<'g, T: Element>(
    arch: &Arch,
    p: &Bound<'g, T>,
    stats: &mut ParamSet<T>,
    z: Var<'g, T>,
    mode: NormMode,
) -> Result<Var<'g, T>, NetError> {
    let zs = z.shape();
    if zs.len() != 2 || zs[1] != arch.d_z {
        return Err(NetError::InputShape {
            expected: vec![arch.d_z],
            found: zs,
        });
    }
    let n = zs[0];
    let mut norm = |h: Var<'g, T>, name: &str| -> Result<Var<'g, T>, NetError> {
        let gamma = p.get(&format!("gen/{name}.gamma"))?;
        let beta = p.get(&format!("gen/{name}.beta"))?;
        let mean_name = format!("gen/{name}.mean");
        let var_name = format!("gen/{name}.var");
        let mut mean = stats
            .get(&mean_name)
            .cloned()
            .ok_or(NetError::Missing(mean_name.clone()))?;
        let mut var = stats
            .get(&var_name)
            .cloned()
            .ok_or(NetError::Missing(var_name.clone()))?;
        let y = batch_norm(h, gamma, beta, (&mut mean, &mut var), mode)?;
        stats.insert(mean_name, mean);
        stats.insert(var_name, var);
        lrelu(y)
    };
    let h = z.matmul(p.get("gen/fc.w")?)?;
    let h = norm(h, "fc")?;
    let mut h = h.reshape(&[n, arch.bottom_channels(), BOTTOM, BOTTOM])?;
    for (i, l) in arch.deconv_plan().iter().enumerate() {
        let w = p.get(&format!("gen/deconv{i}.w"))?;
        h = norm(h.deconv2d(w, l.stride, l.pad)?, &format!("bn{i}"))?;
    }
    let o = arch.output_layer();
    let out = h
        .deconv2d(p.get("gen/out.w")?, o.stride, o.pad)?
        .add_channel(p.get("gen/out.b")?)?;
    Ok(out.tanh()?)
}
