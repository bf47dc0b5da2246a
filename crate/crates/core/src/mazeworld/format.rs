//! Binary dataset file: header, pose records, then raw RGB frames.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{MazeDataset, MazeError, PathLabel, Pose};

const MAGIC: [u8; 4] = *b"CGDS";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 * 5 + 8;
const POSE_BYTES: usize = 13;

pub fn write_to(ds: &MazeDataset, mut w: impl Write) -> Result<(), MazeError> {
    w.write_all(&MAGIC)?;
    for v in [
        FORMAT_VERSION,
        ds.len() as u32,
        ds.height as u32,
        ds.width as u32,
        3,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&ds.seed.to_le_bytes())?;
    for (p, l) in ds.poses.iter().zip(&ds.labels) {
        w.write_all(&p.x.to_le_bytes())?;
        w.write_all(&p.y.to_le_bytes())?;
        w.write_all(&p.heading.to_le_bytes())?;
        w.write_all(&[*l as u8])?;
    }
    w.write_all(&ds.pixels)?;
    Ok(())
}

pub fn save(ds: &MazeDataset, path: impl AsRef<Path>) -> Result<(), MazeError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(ds, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<MazeDataset, MazeError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    read_from(&bytes)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn read_from(bytes: &[u8]) -> Result<MazeDataset, MazeError> {
    if bytes.len() < HEADER_BYTES {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(MazeError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(MazeError::Truncated {
            expected: HEADER_BYTES,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(MazeError::BadMagic(magic));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(MazeError::Version(version));
    }
    let n = u32_at(bytes, 8) as usize;
    let height = u32_at(bytes, 12) as usize;
    let width = u32_at(bytes, 16) as usize;
    let channels = u32_at(bytes, 20) as usize;
    let seed = u64::from_le_bytes(bytes[24..32].try_into().unwrap());
    let expected = n * POSE_BYTES + n * height * width * channels;
    let found = bytes.len() - HEADER_BYTES;
    if found < expected {
        return Err(MazeError::Truncated { expected, found });
    }
    if found != expected || channels != 3 {
        return Err(MazeError::PayloadLength { expected, found });
    }
    let mut poses = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let at = HEADER_BYTES + i * POSE_BYTES;
        poses.push(Pose {
            x: f32_at(bytes, at),
            y: f32_at(bytes, at + 4),
            heading: f32_at(bytes, at + 8),
        });
        let raw = bytes[at + 12];
        labels.push(PathLabel::from_u8(raw).ok_or(MazeError::Label(raw))?);
    }
    let start = HEADER_BYTES + n * POSE_BYTES;
    Ok(MazeDataset {
        height,
        width,
        seed,
        poses,
        labels,
        pixels: bytes[start..].to_vec(),
    })
}
