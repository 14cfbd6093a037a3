//! Image quality metrics.

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Peak signal-to-noise ratio in dB; identical inputs give `+inf`.
pub fn psnr<T: Float>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("psnr: {} vs {}", a.shape(), b.shape())));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum::<f64>()
        / a.numel().max(1) as f64;
    Ok(psnr_from_mse(mse, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// BT.601 luma for three channels, the channel mean otherwise. One plane per
/// batch item.
pub fn luma<T: Float>(x: &Tensor<T>) -> Vec<Vec<f64>> {
    let s = x.shape();
    let weights: Vec<f64> = if s.c == 3 {
        vec![0.299, 0.587, 0.114]
    } else {
        vec![1.0 / s.c as f64; s.c]
    };
    (0..s.n)
        .map(|n| {
            let mut plane = vec![0.0; s.plane()];
            for (c, &wc) in weights.iter().enumerate() {
                let off = x.index(n, c, 0, 0);
                for (p, v) in plane.iter_mut().zip(&x.data()[off..off + s.plane()]) {
                    *p += wc * v.as_f64();
                }
            }
            plane
        })
        .collect()
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over gray planes with dynamic range 1,
/// averaged over the batch.
pub fn ssim<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let s = a.shape();
    if s != b.shape() {
        return Err(Error::dim(format!("ssim: {} vs {}", s, b.shape())));
    }
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::contract(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {s}"
        )));
    }
    let k = gaussian_window();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let (ga, gb) = (luma(a), luma(b));
    let mut total = 0.0;
    for (pa, pb) in ga.iter().zip(&gb) {
        let f = |p: &[f64]| filter(p, s.h, s.w, &k);
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).collect::<Vec<_>>();
        let (mu_a, mu_b) = (f(pa), f(pb));
        let (saa, sbb, sab) = (f(&prod(pa, pa)), f(&prod(pb, pb)), f(&prod(pa, pb)));
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / s.n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn noise(shape: Shape, seed: u32) -> Tensor<f64> {
        let mut x = seed.wrapping_mul(2654435761) | 1;
        let data: Vec<f64> = (0..shape.numel())
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 17;
                x ^= x << 5;
                x as f64 / u32::MAX as f64
            })
            .collect();
        Tensor::from_f64(shape, &data).unwrap()
    }

    #[test]
    fn psnr_values() {
        let a = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2));
        let b = Tensor::<f64>::full(Shape::new(1, 1, 2, 2), 1.0);
        assert!((psnr(&a, &b, 255.0).unwrap() - 48.130803608679).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let c = Tensor::<f64>::full(Shape::new(1, 1, 2, 2), 10.0);
        let drop = psnr(&a, &b, 255.0).unwrap() - psnr(&a, &c, 255.0).unwrap();
        assert!((drop - 20.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = noise(Shape::new(2, 3, 16, 20), 1);
        let b = noise(Shape::new(2, 3, 16, 20), 2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!(ssim(&a, &b).unwrap() < 0.5);
    }

    #[test]
    fn ssim_on_constants_is_the_luminance_term() {
        let (x, y) = (0.2, 0.9);
        let a = Tensor::<f64>::full(Shape::new(1, 1, 12, 12), x);
        let b = Tensor::<f64>::full(Shape::new(1, 1, 12, 12), y);
        let c1 = K1 * K1;
        let want = (2.0 * x * y + c1) / (x * x + y * y + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::<f64>::zeros(Shape::new(1, 1, 10, 12));
        assert!(matches!(ssim(&a, &a), Err(Error::Contract(_))));
    }
}
