//! Frequency/entropy analysis of image corpora.
//!
//! Each grayscale image is optionally downscaled, split by a Gaussian
//! low-pass into LF and HF (`hf = img - lf`), and summarized by the Shannon
//! entropy of its intensity histogram. Two corpora are compared per band and
//! scale by the Jensen-Shannon divergence of their entropy distributions.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Single-channel image in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::dim(format!(
                "plane {h}x{w} with {} values",
                data.len()
            )));
        }
        Ok(Plane { h, w, data })
    }

    pub fn constant(h: usize, w: usize, v: f64) -> Self {
        Plane {
            h,
            w,
            data: vec![v; h * w],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    /// Mean over non-overlapping `f x f` blocks; trailing rows and columns
    /// that do not fill a block are dropped.
    pub fn downscale(&self, f: usize) -> Plane {
        if f == 1 {
            return self.clone();
        }
        let (h, w) = (self.h / f, self.w / f);
        let inv = 1.0 / (f * f) as f64;
        let mut data = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for dy in 0..f {
                    for dx in 0..f {
                        s += self.at(y * f + dy, x * f + dx);
                    }
                }
                data[y * w + x] = s * inv;
            }
        }
        Plane { h, w, data }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Scale {
    Full,
    Half,
    Quarter,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Full, Scale::Half, Scale::Quarter];

    pub fn factor(self) -> usize {
        match self {
            Scale::Full => 1,
            Scale::Half => 2,
            Scale::Quarter => 4,
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Full => "1",
            Scale::Half => "1/2",
            Scale::Quarter => "1/4",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Band {
    Lf,
    Hf,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Band::Lf => "LF",
            Band::Hf => "HF",
        })
    }
}

/// Normalized 1-D Gaussian taps of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::contract(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    Ok(k.into_iter().map(|v| v / s).collect())
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur with reflective borders.
pub fn gaussian_blur(p: &Plane, sigma: f64) -> Result<Plane> {
    let k = gaussian_kernel(sigma)?;
    let r = (k.len() / 2) as isize;
    let (h, w) = (p.h, p.w);
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * p.data[y * w + reflect(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[reflect(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    Ok(Plane { h, w, data: out })
}

/// Values are snapped to multiples of this so that `img - lf` is exact and
/// `lf + hf` reproduces `img` bit for bit.
const GRID: f64 = 1.0 / (1u64 << 40) as f64;

fn snap(v: f64) -> f64 {
    (v / GRID).round() * GRID
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreqDecomposition {
    /// The (downscaled, grid-snapped) image that `lf + hf` reproduces.
    pub image: Plane,
    pub lf: Plane,
    pub hf: Plane,
    pub scale: Scale,
}

pub fn freq_decompose(img: &Plane, sigma: f64, scale: Scale) -> Result<FreqDecomposition> {
    let mut image = img.downscale(scale.factor());
    image.data.iter_mut().for_each(|v| *v = snap(*v));
    let mut lf = gaussian_blur(&image, sigma)?;
    lf.data.iter_mut().for_each(|v| *v = snap(*v));
    let hf = Plane {
        h: image.h,
        w: image.w,
        data: image
            .data
            .iter()
            .zip(&lf.data)
            .map(|(a, b)| a - b)
            .collect(),
    };
    Ok(FreqDecomposition {
        image,
        lf,
        hf,
        scale,
    })
}

/// Fixed-range histogram, normalized to probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub probs: Vec<f64>,
}

impl Histogram {
    /// Values outside `[lo, hi]` go to the end bins. A degenerate range puts
    /// everything in the first bin.
    pub fn build(values: &[f64], bins: usize, lo: f64, hi: f64) -> Self {
        let mut counts = vec![0usize; bins.max(1)];
        let width = hi - lo;
        for &v in values {
            let b = if width > 0.0 {
                (((v - lo) / width) * bins as f64)
                    .floor()
                    .clamp(0.0, (bins - 1) as f64) as usize
            } else {
                0
            };
            counts[b] += 1;
        }
        let n = values.len().max(1) as f64;
        Histogram {
            lo,
            hi,
            probs: counts.into_iter().map(|c| c as f64 / n).collect(),
        }
    }

    pub fn bins(&self) -> usize {
        self.probs.len()
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.bins() as f64;
        (self.lo + w * i as f64, self.lo + w * (i + 1) as f64)
    }
}

fn entropy_of(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

/// Shannon entropy in bits of the histogram of `values` over `[lo, hi]`.
pub fn shannon_entropy(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<f64> {
    if bins < 2 {
        return Err(Error::contract(format!(
            "entropy needs at least 2 bins, got {bins}"
        )));
    }
    Ok(entropy_of(&Histogram::build(values, bins, lo, hi).probs))
}

/// Jensen-Shannon divergence in bits; 0 for identical, 1 for disjoint.
pub fn js_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.bins() != q.bins() || p.lo != q.lo || p.hi != q.hi {
        return Err(Error::contract("histograms have different binning"));
    }
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &y)| x * (x / y).log2())
            .sum()
    };
    let m: Vec<f64> = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let js = 0.5 * kl(&p.probs, &m) + 0.5 * kl(&q.probs, &m);
    Ok(js.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisConfig {
    pub sigma: f64,
    /// Intensity histogram bins for per-image entropy.
    pub intensity_bins: usize,
    /// Bins of the entropy-value histograms compared by JS divergence.
    pub js_bins: usize,
    /// Intensity range for HF entropy; LF and images use `[0, 1]`.
    pub hf_range: (f64, f64),
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            sigma: 2.0,
            intensity_bins: 256,
            js_bins: 64,
            hf_range: (-0.5, 0.5),
        }
    }
}

/// Per-image `(LF, HF)` entropies at `scale`.
pub fn band_entropies(img: &Plane, scale: Scale, cfg: &AnalysisConfig) -> Result<(f64, f64)> {
    let d = freq_decompose(img, cfg.sigma, scale)?;
    let lf = shannon_entropy(&d.lf.data, cfg.intensity_bins, 0.0, 1.0)?;
    let hf = shannon_entropy(
        &d.hf.data,
        cfg.intensity_bins,
        cfg.hf_range.0,
        cfg.hf_range.1,
    )?;
    Ok((lf, hf))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyDistribution {
    pub label: String,
    pub entropies: Vec<f64>,
    pub histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub band: Band,
    pub scale: Scale,
    pub js_bits: f64,
    pub a: EntropyDistribution,
    pub b: EntropyDistribution,
}

impl ReportRow {
    pub fn mean_a(&self) -> f64 {
        mean(&self.a.entropies)
    }

    pub fn mean_b(&self) -> f64 {
        mean(&self.b.entropies)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyReport {
    pub rows: Vec<ReportRow>,
    pub n_images: usize,
}

impl EntropyReport {
    pub fn js(&self, band: Band, scale: Scale) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.band == band && r.scale == scale)
            .map(|r| r.js_bits)
    }

    /// HF diverges more than LF at every scale, and more at full than at
    /// quarter resolution.
    pub fn hf_ordering_holds(&self) -> bool {
        let js = |b, s| self.js(b, s).unwrap_or(f64::NAN);
        Scale::ALL
            .iter()
            .all(|&s| js(Band::Hf, s) > js(Band::Lf, s))
            && js(Band::Hf, Scale::Full) > js(Band::Hf, Scale::Quarter)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "band",
            "scale",
            "js_bits",
            "mean_entropy_a",
            "mean_entropy_b",
            "n_images",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.band.to_string(),
                r.scale.to_string(),
                format!("{:.6}", r.js_bits),
                format!("{:.6}", r.mean_a()),
                format!("{:.6}", r.mean_b()),
                self.n_images.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One row per histogram bin of every (band, scale) cell.
    pub fn write_histograms(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["band", "scale", "bin", "lo", "hi", "p_a", "p_b"])?;
        for r in &self.rows {
            for i in 0..r.a.histogram.bins() {
                let (lo, hi) = r.a.histogram.edges(i);
                w.write_record([
                    r.band.to_string(),
                    r.scale.to_string(),
                    i.to_string(),
                    format!("{lo:.6}"),
                    format!("{hi:.6}"),
                    format!("{:.6}", r.a.histogram.probs[i]),
                    format!("{:.6}", r.b.histogram.probs[i]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Compares paired corpora `a` and `b` in both bands at all three scales.
pub fn entropy_report(a: &[Plane], b: &[Plane], cfg: &AnalysisConfig) -> Result<EntropyReport> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::contract(format!(
            "corpora must be non-empty and paired, got {} and {} images",
            a.len(),
            b.len()
        )));
    }
    let per_image = |corpus: &[Plane]| -> Result<Vec<[(f64, f64); 3]>> {
        corpus
            .par_iter()
            .map(|img| {
                let mut out = [(0.0, 0.0); 3];
                for (i, &s) in Scale::ALL.iter().enumerate() {
                    out[i] = band_entropies(img, s, cfg)?;
                }
                Ok(out)
            })
            .collect()
    };
    let (ea, eb) = (per_image(a)?, per_image(b)?);
    let mut rows = Vec::new();
    for band in [Band::Lf, Band::Hf] {
        for (si, &scale) in Scale::ALL.iter().enumerate() {
            let pick = |e: &[[(f64, f64); 3]]| -> Vec<f64> {
                e.iter()
                    .map(|v| if band == Band::Lf { v[si].0 } else { v[si].1 })
                    .collect()
            };
            let (va, vb) = (pick(&ea), pick(&eb));
            let lo = va.iter().chain(&vb).copied().fold(f64::INFINITY, f64::min);
            let hi = va
                .iter()
                .chain(&vb)
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let ha = Histogram::build(&va, cfg.js_bins, lo, hi);
            let hb = Histogram::build(&vb, cfg.js_bins, lo, hi);
            let js_bits = js_divergence(&ha, &hb)?;
            let label = |c: &str| format!("{c}/{band}/{scale}");
            rows.push(ReportRow {
                band,
                scale,
                js_bits,
                a: EntropyDistribution {
                    label: label("a"),
                    entropies: va,
                    histogram: ha,
                },
                b: EntropyDistribution {
                    label: label("b"),
                    entropies: vb,
                    histogram: hb,
                },
            });
        }
    }
    Ok(EntropyReport {
        rows,
        n_images: a.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Plane {
        let data = (0..h * w)
            .map(|i| ((i * 37 % 101) as f64) / 100.0)
            .collect();
        Plane::new(h, w, data).unwrap()
    }

    #[test]
    fn constant_image_has_no_hf() {
        let d = freq_decompose(&Plane::constant(9, 12, 0.37), 2.0, Scale::Full).unwrap();
        assert!(d.hf.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reconstruction_is_exact() {
        for scale in Scale::ALL {
            let d = freq_decompose(&ramp(16, 20), 1.3, scale).unwrap();
            for i in 0..d.image.data.len() {
                assert_eq!(d.lf.data[i] + d.hf.data[i], d.image.data[i]);
            }
        }
    }

    #[test]
    fn impulse_center_is_kernel_center_squared() {
        let mut p = Plane::constant(21, 21, 0.0);
        p.data[10 * 21 + 10] = 1.0;
        let k = gaussian_kernel(1.0).unwrap();
        let c = k[k.len() / 2];
        let blurred = gaussian_blur(&p, 1.0).unwrap();
        assert!((blurred.at(10, 10) - c * c).abs() < 1e-15);
        let norm: f64 = (-3..=3).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).sum();
        assert!((c - 1.0 / norm).abs() < 1e-15);
    }

    #[test]
    fn sigma_must_be_positive() {
        assert!(matches!(gaussian_kernel(0.0), Err(Error::Contract(_))));
        assert!(freq_decompose(&ramp(4, 4), -1.0, Scale::Full).is_err());
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn entropy_values() {
        assert_eq!(shannon_entropy(&[0.3; 50], 256, 0.0, 1.0).unwrap(), 0.0);
        let two: Vec<f64> = (0..40)
            .map(|i| if i % 2 == 0 { 0.1 } else { 0.9 })
            .collect();
        assert_eq!(shannon_entropy(&two, 256, 0.0, 1.0).unwrap(), 1.0);
        let levels: Vec<f64> = (0..256).map(|i| (i as f64 + 0.5) / 256.0).collect();
        assert!((shannon_entropy(&levels, 256, 0.0, 1.0).unwrap() - 8.0).abs() < 1e-12);
        assert!(shannon_entropy(&levels, 1, 0.0, 1.0).is_err());
    }

    #[test]
    fn js_values() {
        let h = |p: Vec<f64>| Histogram {
            lo: 0.0,
            hi: 1.0,
            probs: p,
        };
        assert_eq!(
            js_divergence(&h(vec![0.2, 0.8]), &h(vec![0.2, 0.8])).unwrap(),
            0.0
        );
        assert!(
            (js_divergence(&h(vec![1.0, 0.0]), &h(vec![0.0, 1.0])).unwrap() - 1.0).abs() < 1e-15
        );
        // 1.5 - 0.75 log2 3, rounded
        let v = js_divergence(&h(vec![0.5, 0.5]), &h(vec![1.0, 0.0])).unwrap();
        assert!((v - (1.5 - 0.75 * 3f64.log2())).abs() < 1e-15);
        assert!((v - 0.3113).abs() < 1e-4);
        let other = Histogram {
            lo: 0.0,
            hi: 2.0,
            probs: vec![0.5, 0.5],
        };
        assert!(matches!(
            js_divergence(&h(vec![0.5, 0.5]), &other),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn self_report_is_zero() {
        let corpus: Vec<Plane> = (0..4).map(|i| ramp(16 + 4 * i, 16)).collect();
        let r = entropy_report(&corpus, &corpus, &AnalysisConfig::default()).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert!(r.rows.iter().all(|row| row.js_bits == 0.0));
        assert!(entropy_report(&corpus, &corpus[..2], &AnalysisConfig::default()).is_err());
    }

    #[test]
    fn downscale_averages_blocks() {
        let p = Plane::new(2, 4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(p.downscale(2).data, vec![3.5, 5.5]);
    }
}
