//! Binary PGM (P5) / PPM (P6) reading and writing.
//!
//! Pixels map to reals in `[0, 255]`; grayscale gives one channel, colour three.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};
use crate::tensor::{Mask, Tensor};

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?;
    Ok(from_dynamic(img))
}

pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Pnm)?;
    Ok(from_dynamic(img))
}

fn from_dynamic(img: DynamicImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img.color() {
        ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16 => {
            let gray = img.into_luma8();
            Tensor::from_vec(1, h, w, gray.into_raw().into_iter().map(f32::from).collect())
                .expect("decoded image has consistent size")
        }
        _ => {
            let rgb = img.into_rgb8();
            Tensor::from_fn(3, h, w, |c, y, x| {
                f32::from(rgb.get_pixel(x as u32, y as u32)[c])
            })
            .expect("decoded image has consistent size")
        }
    }
}

fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Encodes a 1- or 3-channel tensor as P5 / P6, rounding and clamping to 8 bits.
pub fn encode_image<W: Write>(img: &Tensor, w: W) -> Result<()> {
    let (c, h, wd) = img.shape();
    let (subtype, color, bytes) = match c {
        1 => (
            PnmSubtype::Graymap(SampleEncoding::Binary),
            ExtendedColorType::L8,
            img.data().iter().map(|&v| to_u8(v)).collect::<Vec<u8>>(),
        ),
        3 => {
            let mut bytes = Vec::with_capacity(3 * h * wd);
            for y in 0..h {
                for x in 0..wd {
                    for ch in 0..3 {
                        bytes.push(to_u8(img.get(ch, y, x)));
                    }
                }
            }
            (
                PnmSubtype::Pixmap(SampleEncoding::Binary),
                ExtendedColorType::Rgb8,
                bytes,
            )
        }
        _ => {
            return Err(Error::Dimension(format!(
                "cannot encode a {c}-channel tensor as an image"
            )))
        }
    };
    PnmEncoder::new(w)
        .with_subtype(subtype)
        .write_image(&bytes, wd as u32, h as u32, color)?;
    Ok(())
}

pub fn save_image(img: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_image(img, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a mask as a P5 image: 255 for valid, 0 for excluded.
pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let img = Tensor::from_vec(
        1,
        mask.height(),
        mask.width(),
        mask.data().iter().map(|&v| if v { 255.0 } else { 0.0 }).collect(),
    )?;
    save_image(&img, path)
}
