//! Image files: a raw little-endian tensor format and PNG.
//!
//! Raw layout: the four bytes `HIMG`, then `channels`, `height`, `width` as
//! little-endian `u32`, then `C·H·W` little-endian `f32` values in `[0, 1]`.

use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::io::write_atomic;
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"HIMG";

pub fn encode_raw(img: &Tensor<f32>) -> Result<Vec<u8>> {
    if img.ndim() != 3 {
        return shape_err(format!("image must be [C, H, W], got {:?}", img.shape()));
    }
    let mut out = Vec::with_capacity(16 + img.len() * 4);
    out.extend_from_slice(MAGIC);
    for &d in img.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in img.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raw(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Image("not a raw image file".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = [dim(0), dim(1), dim(2)];
    let n: usize = shape.iter().product();
    if bytes.len() != 16 + 4 * n {
        return Err(Error::Image(format!("raw image payload does not match shape {shape:?}")));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&shape, data)
}

/// Read a `.png` or raw image as `[C, H, W]` in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let is_png = path
        .extension()
        .map_or(false, |e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0f32; 3 * h * w];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = p.0[c] as f32 / 255.0;
            }
        }
        Tensor::new(&[3, h, w], data)
    } else {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        decode_raw(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

pub fn save_raw(path: &Path, img: &Tensor<f32>) -> Result<()> {
    write_atomic(path, &encode_raw(img)?)
}

/// Write a 3-channel image as 8-bit PNG.
pub fn save_png(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return shape_err(format!("PNG output needs [3, H, W], got {s:?}"));
    }
    let (h, w) = (s[1], s[2]);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = img.data()[(c * h + y as usize) * w + x as usize];
            p.0[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let mut bytes = Vec::new();
    buf.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor<f32> {
        Tensor::new(&[3, 2, 4], (0..24).map(|i| i as f32 / 23.0).collect()).unwrap()
    }

    #[test]
    fn raw_round_trip() {
        let img = sample();
        assert_eq!(decode_raw(&encode_raw(&img).unwrap()).unwrap(), img);
        assert!(decode_raw(b"HIMG").is_err());
        let mut bad = encode_raw(&img).unwrap();
        bad.pop();
        assert!(decode_raw(&bad).is_err());
    }

    #[test]
    fn png_round_trip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let img = sample();
        save_png(&p, &img).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn unreadable_image_is_an_image_error() {
        let err = load_image(Path::new("/nonexistent/file.bin")).unwrap_err();
        assert!(matches!(err, Error::Image(_)));
    }
}
