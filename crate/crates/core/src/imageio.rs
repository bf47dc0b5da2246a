//! 8-bit RGB PNG files and image grids.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("pixel buffer of {len} bytes does not match {width}x{height} RGB")]
    Size {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("expected 8-bit RGB, found {0}")]
    Format(String),
    #[error(transparent)]
    Encode(#[from] png::EncodingError),
    #[error(transparent)]
    Decode(#[from] png::DecodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if data.len() != width * height * 3 {
            return Err(ImageError::Size {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: rgb.repeat(width * height),
        }
    }

    /// Converts a `[3, H, W]` float image in `[-1, 1]` to bytes.
    pub fn from_chw(chw: &[f32], height: usize, width: usize) -> Result<Self, ImageError> {
        if chw.len() != 3 * height * width {
            return Err(ImageError::Size {
                width,
                height,
                len: chw.len(),
            });
        }
        let plane = height * width;
        let mut data = vec![0u8; plane * 3];
        for c in 0..3 {
            for p in 0..plane {
                data[p * 3 + c] = to_byte(chw[c * plane + p]);
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let w = BufWriter::new(File::create(path)?);
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.data)?;
        writer.finish()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
        let mut reader = decoder.read_info()?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf)?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(ImageError::Format(format!(
                "{:?} {:?}",
                info.color_type, info.bit_depth
            )));
        }
        buf.truncate(info.buffer_size());
        Self::new(info.width as usize, info.height as usize, buf)
    }
}

/// Maps `[-1, 1]` onto `0..=255`, the inverse of `v / 127.5 - 1`.
pub fn to_byte(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Tiles equally sized images into a `rows`×`cols` grid separated by a
/// one-pixel border. Missing cells stay border-coloured.
pub fn grid(images: &[RgbImage], rows: usize, cols: usize) -> Result<RgbImage, ImageError> {
    let (w, h) = images
        .first()
        .map(|im| (im.width, im.height))
        .unwrap_or((1, 1));
    let gw = cols * (w + 1) + 1;
    let gh = rows * (h + 1) + 1;
    let mut out = RgbImage::filled(gw, gh, [255, 255, 255]);
    for (k, im) in images.iter().enumerate().take(rows * cols) {
        if im.width != w || im.height != h {
            return Err(ImageError::Size {
                width: w,
                height: h,
                len: im.data.len(),
            });
        }
        let (r, c) = (k / cols, k % cols);
        let (ox, oy) = (c * (w + 1) + 1, r * (h + 1) + 1);
        for y in 0..h {
            let dst = ((oy + y) * gw + ox) * 3;
            out.data[dst..dst + w * 3].copy_from_slice(&im.data[y * w * 3..(y + 1) * w * 3]);
        }
    }
    Ok(out)
}
