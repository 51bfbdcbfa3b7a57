//! 8-bit PNG export of rendered channels and label images.

use std::path::Path;

use image::{GrayAlphaImage, GrayImage, ImageBuffer, RgbImage, RgbaImage};

use crate::error::{Error, Result};

use super::{Grid, RenderedView};

pub fn quantize(value: f32) -> u8 {
    (255.0 * value.clamp(0.0, 1.0)).round() as u8
}

pub fn dequantize(value: u8) -> f32 {
    value as f32 / 255.0
}

/// Interleaved 8-bit pixels of a 1-4 channel view.
pub fn interleave(channels: &[Grid<f32>]) -> Vec<u8> {
    let n = channels.first().map_or(0, |c| c.data().len());
    let mut out = Vec::with_capacity(n * channels.len());
    for i in 0..n {
        for c in channels {
            out.push(quantize(c.data()[i]));
        }
    }
    out
}

fn save<P: image::Pixel<Subpixel = u8> + image::PixelWithColorType>(
    path: &Path,
    w: u32,
    h: u32,
    raw: Vec<u8>,
) -> Result<()>
where
    [P::Subpixel]: image::EncodableLayout,
{
    let img: ImageBuffer<P, Vec<u8>> = ImageBuffer::from_raw(w, h, raw).expect("buffer matches image size");
    img.save_with_format(path, image::ImageFormat::Png).map_err(|source| Error::Image { path: path.into(), source })
}

/// Writes channels as grayscale, gray+alpha, RGB or RGBA PNG by channel count.
pub fn write_channels_png(path: &Path, channels: &[Grid<f32>]) -> Result<()> {
    let first = channels.first().ok_or_else(|| Error::Invalid("no channels to export".into()))?;
    let (w, h) = (first.width() as u32, first.height() as u32);
    let raw = interleave(channels);
    match channels.len() {
        1 => save::<image::Luma<u8>>(path, w, h, raw),
        2 => save::<image::LumaA<u8>>(path, w, h, raw),
        3 => save::<image::Rgb<u8>>(path, w, h, raw),
        4 => save::<image::Rgba<u8>>(path, w, h, raw),
        n => Err(Error::Invalid(format!("cannot export {n} channels as PNG"))),
    }
}

pub fn write_view_png(path: &Path, view: &RenderedView) -> Result<()> {
    write_channels_png(path, &view.channels)
}

pub fn write_label_png(path: &Path, labels: &Grid<u8>) -> Result<()> {
    save::<image::Luma<u8>>(path, labels.width() as u32, labels.height() as u32, labels.data().to_vec())
}

/// Reads an 8-bit PNG back into `[0, 1]` channel grids.
pub fn read_channels_png(path: &Path) -> Result<Vec<Grid<f32>>> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (raw, n): (Vec<u8>, usize) = match img.color().channel_count() {
        1 => (GrayImage::from(img.to_luma8()).into_raw(), 1),
        2 => (GrayAlphaImage::from(img.to_luma_alpha8()).into_raw(), 2),
        3 => (RgbImage::from(img.to_rgb8()).into_raw(), 3),
        _ => (RgbaImage::from(img.to_rgba8()).into_raw(), 4),
    };
    Ok((0..n)
        .map(|c| Grid::from_vec(w, h, raw.iter().skip(c).step_by(n).map(|&v| dequantize(v)).collect()))
        .collect())
}

pub fn read_label_png(path: &Path) -> Result<Grid<u8>> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?;
    let g = img.to_luma8();
    Ok(Grid::from_vec(g.width() as usize, g.height() as usize, g.into_raw()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.499 / 255.0), 0);
        assert_eq!(quantize(0.501 / 255.0), 1);
    }

    #[test]
    fn png_round_trip_within_one_step() {
        let dir = tempfile::tempdir().unwrap();
        for n in 1..=4 {
            let chans: Vec<Grid<f32>> = (0..n)
                .map(|c| Grid::from_vec(5, 3, (0..15).map(|i| ((i * 7 + c * 3) % 16) as f32 / 15.0).collect()))
                .collect();
            let path = dir.path().join(format!("v{n}.png"));
            write_channels_png(&path, &chans).unwrap();
            let back = read_channels_png(&path).unwrap();
            assert_eq!(back.len(), n);
            for (a, b) in chans.iter().zip(&back) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() <= 0.5 / 255.0 + 1e-7);
                }
            }
        }
        let labels = Grid::from_vec(2, 2, vec![0u8, 3, 255, 7]);
        let path = dir.path().join("l.png");
        write_label_png(&path, &labels).unwrap();
        assert_eq!(read_label_png(&path).unwrap(), labels);
    }
}
