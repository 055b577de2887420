//! PNG images, instance-id maps and masks.
//!
//! Intensities are written as 16-bit samples (`round(v · 65535)`); 8- and
//! 16-bit files are both accepted on input.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use planesweep_core::{Grid, Image};

use crate::error::{Error, Result};

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn encode(img: DynamicImage, path: &Path) -> Result<()> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::parse(path, "png", e))?;
    super::write_bytes(path, buf.get_ref())
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| Error::parse(path, "png", e))
}

/// Writes a 1- or 3-channel image with values in `[0, 1]`.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = img.dims();
    let (w32, h32) = (w as u32, h as u32);
    let dynamic = match img.channels() {
        1 => {
            let data = img.plane(0).as_slice().iter().map(|&v| to_u16(v)).collect();
            DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w32, h32, data).expect("buffer size"))
        }
        3 => {
            let mut data = Vec::with_capacity(3 * w * h);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        data.push(to_u16(img.get(x, y, c)));
                    }
                }
            }
            DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w32, h32, data).expect("buffer size"))
        }
        n => return Err(Error::argument("image", format!("cannot write {n}-channel PNG"))),
    };
    encode(dynamic, path)
}

pub fn read_image(path: &Path) -> Result<Image> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let planes = if img.color().has_color() {
        let rgb = img.into_rgb16();
        (0..3)
            .map(|c| Grid::from_fn(w, h, |x, y| rgb.get_pixel(x as u32, y as u32)[c] as f64 / 65535.0))
            .collect()
    } else {
        let gray = img.into_luma16();
        vec![Grid::from_fn(w, h, |x, y| {
            gray.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0
        })]
    };
    Image::from_planes(planes).map_err(|e| Error::parse(path, "image", e))
}

/// Grayscale values scaled to `[0, 1]`; soft masks are stored this way.
pub fn read_unit(path: &Path) -> Result<Grid<f64>> {
    let img = decode(path)?;
    if img.color().has_color() {
        return Err(Error::parse(path, "channels", "expected a grayscale PNG"));
    }
    let gray = img.into_luma16();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok(Grid::from_fn(w, h, |x, y| {
        gray.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0
    }))
}

/// Binary mask as 8-bit 0/255.
pub fn write_mask(path: &Path, mask: &Grid<bool>) -> Result<()> {
    let (w, h) = mask.dims();
    let data = mask.as_slice().iter().map(|&b| if b { 255u8 } else { 0 }).collect();
    let buf = ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, data).expect("buffer size");
    encode(DynamicImage::ImageLuma8(buf), path)
}

/// Any non-zero pixel is set.
pub fn read_mask(path: &Path) -> Result<Grid<bool>> {
    Ok(read_unit(path)?.map(|&v| v > 0.0))
}

/// Instance-id map: the 16-bit pixel value is the instance id, 0 for none.
pub fn write_ids(path: &Path, ids: &Grid<u32>) -> Result<()> {
    let (w, h) = ids.dims();
    let data = ids
        .as_slice()
        .iter()
        .map(|&id| u16::try_from(id).map_err(|_| Error::argument("instance id", format!("{id} exceeds 65535"))))
        .collect::<Result<Vec<u16>>>()?;
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, data).expect("buffer size");
    encode(DynamicImage::ImageLuma16(buf), path)
}

pub fn read_ids(path: &Path) -> Result<Grid<u32>> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(b) => Ok(Grid::from_fn(w, h, |x, y| b.get_pixel(x as u32, y as u32)[0] as u32)),
        DynamicImage::ImageLuma16(b) => Ok(Grid::from_fn(w, h, |x, y| b.get_pixel(x as u32, y as u32)[0] as u32)),
        _ => Err(Error::parse(
            path,
            "channels",
            "instance map must be 8- or 16-bit grayscale",
        )),
    }
}
