//! Checkpoint file: header, metadata, then named f32 tensors until EOF.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Arch, ModelBundle, NetError, Trainer, Variant};
use crate::diffengine::{AdamConfig, OptimState, ParamSet, Tensor};

const MAGIC: [u8; 4] = *b"CGMP";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_tensor(w: &mut impl Write, name: &str, t: &Tensor<f32>) -> Result<(), NetError> {
    let bytes = name.as_bytes();
    let len = u16::try_from(bytes.len())
        .map_err(|_| NetError::Corrupt(format!("name too long: {name}")))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(bytes)?;
    w.write_all(&[t.ndim() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn put_optim(
    w: &mut impl Write,
    key: &str,
    params: &ParamSet<f32>,
    s: &OptimState<f32>,
) -> Result<(), NetError> {
    put_tensor(
        w,
        &format!("opt/{key}/step"),
        &Tensor::scalar(s.step as f32),
    )?;
    for (i, name) in params.names().iter().enumerate() {
        put_tensor(w, &format!("opt/{key}/m/{name}"), &s.first[i])?;
        put_tensor(w, &format!("opt/{key}/v/{name}"), &s.second[i])?;
    }
    Ok(())
}

pub fn write_checkpoint(t: &Trainer, mut w: impl Write) -> Result<(), NetError> {
    let b = &t.bundle;
    w.write_all(&MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[b.variant as u8])?;
    w.write_all(&(b.arch.d_z as u32).to_le_bytes())?;
    w.write_all(&(b.tau as u32).to_le_bytes())?;
    w.write_all(&b.alpha.to_le_bytes())?;
    w.write_all(&b.lambda.to_le_bytes())?;
    w.write_all(&b.seed.to_le_bytes())?;
    w.write_all(&b.iteration.to_le_bytes())?;
    for set in [&b.enc, &b.gen, &b.gen_stats, &b.dis] {
        for (name, tensor) in set.iter() {
            put_tensor(&mut w, name, tensor)?;
        }
    }
    put_optim(&mut w, "enc", &b.enc, &t.opt_enc)?;
    put_optim(&mut w, "gen", &b.gen, &t.opt_gen)?;
    put_optim(&mut w, "dis", &b.dis, &t.opt_dis)?;
    Ok(())
}

pub fn save_checkpoint(t: &Trainer, path: impl AsRef<Path>) -> Result<(), NetError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(t, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer, NetError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    read_checkpoint(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(NetError::Truncated(self.bytes.len()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, NetError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Trainer, NetError> {
    let mut c = Cursor { bytes, at: 0 };
    let magic: [u8; 4] = c.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(NetError::BadMagic(magic));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(NetError::Version(version));
    }
    let raw_variant = c.u8()?;
    let variant = Variant::from_u8(raw_variant)
        .ok_or_else(|| NetError::Corrupt(format!("unknown variant {raw_variant}")))?;
    let d_z = c.u32()? as usize;
    let tau = c.u32()? as usize;
    let alpha = c.f32()?;
    let lambda = c.f32()?;
    let seed = c.u64()?;
    let iteration = c.u64()?;

    let mut all = ParamSet::new();
    while !c.done() {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| NetError::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = c.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let data: Vec<f32> = c
            .take(n * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        all.insert(name, Tensor::new(shape, data)?);
    }

    let pick = |keep: &dyn Fn(&str) -> bool| {
        let mut p = ParamSet::new();
        for (name, t) in all.iter().filter(|(n, _)| keep(n)) {
            p.insert(name, t.clone());
        }
        p
    };
    let is_stat = |n: &str| n.ends_with(".mean") || n.ends_with(".var");
    let enc = pick(&|n| n.starts_with("enc/"));
    let gen = pick(&|n| n.starts_with("gen/") && !is_stat(n));
    let gen_stats = pick(&|n| n.starts_with("gen/") && is_stat(n));
    let dis = pick(&|n| n.starts_with("dis/"));

    let arch = Arch::infer(&enc, &gen)?;
    if arch.d_z != d_z {
        return Err(NetError::Corrupt(format!(
            "header d_z {d_z} disagrees with tensor shapes ({})",
            arch.d_z
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (gen_ref, stats_ref) = arch.init_gen(&mut rng);
    let enc = ordered(&arch.init_enc(&mut rng), &enc)?;
    let gen = ordered(&gen_ref, &gen)?;
    let gen_stats = ordered(&stats_ref, &gen_stats)?;
    let dis = ordered(&arch.init_dis(&mut rng), &dis)?;

    let optim = |key: &str, params: &ParamSet<f32>| -> Result<OptimState<f32>, NetError> {
        let get = |name: String| all.get(&name).cloned().ok_or(NetError::Missing(name));
        let step = get(format!("opt/{key}/step"))?
            .item()
            .ok_or_else(|| NetError::Corrupt(format!("opt/{key}/step is not a scalar")))?;
        let mut s = OptimState::new(params, AdamConfig::default());
        s.step = step as u64;
        for (i, name) in params.names().iter().enumerate() {
            s.first[i] = same_shape(
                get(format!("opt/{key}/m/{name}"))?,
                &params.tensors()[i],
                name,
            )?;
            s.second[i] = same_shape(
                get(format!("opt/{key}/v/{name}"))?,
                &params.tensors()[i],
                name,
            )?;
        }
        Ok(s)
    };
    let opt_enc = optim("enc", &enc)?;
    let opt_gen = optim("gen", &gen)?;
    let opt_dis = optim("dis", &dis)?;

    Ok(Trainer {
        bundle: ModelBundle {
            arch,
            variant,
            tau,
            alpha,
            lambda,
            seed,
            iteration,
            enc,
            gen,
            gen_stats,
            dis,
        },
        opt_enc,
        opt_gen,
        opt_dis,
    })
}

fn same_shape(t: Tensor<f32>, like: &Tensor<f32>, name: &str) -> Result<Tensor<f32>, NetError> {
    if t.shape() != like.shape() {
        return Err(NetError::Shape {
            name: name.to_string(),
            expected: like.shape().to_vec(),
            found: t.shape().to_vec(),
        });
    }
    Ok(t)
}

/// `actual` re-ordered like `reference`, with every shape checked.
fn ordered(reference: &ParamSet<f32>, actual: &ParamSet<f32>) -> Result<ParamSet<f32>, NetError> {
    if actual.len() != reference.len() {
        return Err(NetError::Corrupt(format!(
            "expected {} tensors, found {}",
            reference.len(),
            actual.len()
        )));
    }
    let mut out = ParamSet::new();
    for (name, like) in reference.iter() {
        let t = actual
            .get(name)
            .cloned()
            .ok_or_else(|| NetError::Missing(name.to_string()))?;
        out.insert(name, same_shape(t, like, name)?);
    }
    Ok(out)
}
