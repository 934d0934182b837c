use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use super::{Image, ImagingError};

/// `[0, 1]` sample to 8-bit, rounding to nearest.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn read(path: &Path) -> Result<Vec<u8>, ImagingError> {
    std::fs::read(path).map_err(|source| ImagingError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn decode(bytes: &[u8]) -> Result<DynamicImage, ImagingError> {
    image::load_from_memory(bytes).map_err(|e| ImagingError::Decode(e.to_string()))
}

/// Decodes PNG or JPEG bytes into a 3-channel image.
pub fn decode_rgb(bytes: &[u8]) -> Result<Image, ImagingError> {
    let rgb = decode(bytes)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Image::from_data(w as usize, h as usize, 3, data)
}

/// Decodes an image into a single-channel plane (luma for color input).
pub fn decode_gray(bytes: &[u8]) -> Result<Image, ImagingError> {
    let gray = decode(bytes)?.to_luma8();
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Image::from_data(w as usize, h as usize, 1, data)
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<Image, ImagingError> {
    decode_rgb(&read(path.as_ref())?)
}

pub fn load_gray(path: impl AsRef<Path>) -> Result<Image, ImagingError> {
    decode_gray(&read(path.as_ref())?)
}

pub fn encode_png_rgb(img: &Image) -> Result<Vec<u8>, ImagingError> {
    let raw: Vec<u8> = (0..img.pixel_count())
        .flat_map(|i| img.rgb(i % img.width(), i / img.width()).map(quantize))
        .collect();
    let buf = RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .ok_or_else(|| ImagingError::Encode("buffer size".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ImagingError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// Encodes the first channel as 8-bit grayscale PNG.
pub fn encode_png_gray(img: &Image) -> Result<Vec<u8>, ImagingError> {
    let raw: Vec<u8> = img.data().chunks_exact(img.channels()).map(|p| quantize(p[0])).collect();
    encode_gray_bytes(img.width(), img.height(), raw)
}

pub(crate) fn encode_gray_bytes(width: usize, height: usize, raw: Vec<u8>) -> Result<Vec<u8>, ImagingError> {
    let buf = GrayImage::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| ImagingError::Encode("buffer size".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ImagingError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ImagingError> {
    std::fs::write(path, bytes).map_err(|source| ImagingError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn save_png_rgb(path: impl AsRef<Path>, img: &Image) -> Result<(), ImagingError> {
    write(path.as_ref(), &encode_png_rgb(img)?)
}

pub fn save_png_gray(path: impl AsRef<Path>, img: &Image) -> Result<(), ImagingError> {
    write(path.as_ref(), &encode_png_gray(img)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_levels() {
        let img = Image::from_fn(7, 3, 3, |x, y| {
            [(x * 30) as f64 / 255.0, (y * 80) as f64 / 255.0, 1.0]
        });
        let back = decode_rgb(&encode_png_rgb(&img).unwrap()).unwrap();
        assert_eq!(back, img);
        let gray = Image::from_fn(4, 4, 1, |x, _| [(x * 85) as f64 / 255.0; 3]);
        assert_eq!(decode_gray(&encode_png_gray(&gray).unwrap()).unwrap(), gray);
    }

    #[test]
    fn garbage_is_a_decode_error() {
        assert!(matches!(decode_rgb(b"not an image"), Err(ImagingError::Decode(_))));
    }
}
