//! 8-bit PNG and binary PPM/PGM reading and writing.

use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::analysis::Plane;
use crate::error::{Error, Result};
use crate::metrics::luma;
use crate::tensor::{Float, Shape, Tensor};

pub const EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

pub fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Decodes to a `(1, 3, h, w)` tensor in `[0, 1]`; gray inputs are
/// replicated across channels.
pub fn load_rgb<T: Float>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path)
        .map_err(|e| Error::ingest(path, e.to_string()))?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![T::zero(); 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = T::lit(px[c] as f64 / 255.0);
        }
    }
    Tensor::new(Shape::new(1, 3, h, w), data)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the first batch item; the format follows the extension.
pub fn save_rgb<T: Float>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let s = t.shape();
    if s.c != 3 && s.c != 1 {
        return Err(Error::dim(format!("cannot save {s} as an image")));
    }
    let buf = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        let at = |c: usize| to_u8(t.at(0, c.min(s.c - 1), y as usize, x as usize).as_f64());
        Rgb([at(0), at(1), at(2)])
    });
    buf.save(path)?;
    Ok(())
}

/// Gray plane of the first batch item.
pub fn gray_plane<T: Float>(t: &Tensor<T>) -> Plane {
    let s = t.shape();
    let data = luma(t).into_iter().next().unwrap_or_default();
    Plane {
        h: s.h,
        w: s.w,
        data,
    }
}

pub fn load_gray(path: &Path) -> Result<Plane> {
    Ok(gray_plane(&load_rgb::<f64>(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_ppm_round_trip_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..3 * 4 * 5)
            .map(|i| ((i * 17) % 256) as f64 / 255.0)
            .collect();
        let t = Tensor::<f32>::from_f64(Shape::new(1, 3, 4, 5), &data).unwrap();
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            save_rgb(&p, &t).unwrap();
            assert_eq!(load_rgb::<f32>(&p).unwrap(), t);
        }
    }

    #[test]
    fn undecodable_file_is_an_ingest_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not an image").unwrap();
        assert!(matches!(load_rgb::<f32>(&p), Err(Error::Ingest { .. })));
        assert!(is_image(&p));
        assert!(!is_image(Path::new("x.txt")));
    }
}
