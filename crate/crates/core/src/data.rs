//! Paired datasets: directory ingestion, the synthetic corpus, and batch
//! sampling with crops and flips.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{gaussian_blur, Plane};
use crate::error::{Error, Result};
use crate::image_io::{is_image, load_rgb, save_rgb};
use crate::tensor::{Shape, Tensor};

/// Image sides must be multiples of this.
pub const SIDE_MULTIPLE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub name: String,
    pub blurry: Tensor<f32>,
    pub sharp: Tensor<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<Pair>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Writes `blurry/` and `sharp/` subdirectories of PNG files.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for sub in ["blurry", "sharp"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        for p in &self.pairs {
            save_rgb(&dir.join("blurry").join(&p.name), &p.blurry)?;
            save_rgb(&dir.join("sharp").join(&p.name), &p.sharp)?;
        }
        Ok(())
    }
}

fn image_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::ingest(dir, e.to_string()))?;
    let mut names = BTreeSet::new();
    for e in entries {
        let path = e?.path();
        if path.is_file() && is_image(&path) {
            names.insert(
                path.file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned(),
            );
        }
    }
    Ok(names)
}

fn check_extent(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let s = t.shape();
    if !s.h.is_multiple_of(SIDE_MULTIPLE)
        || !s.w.is_multiple_of(SIDE_MULTIPLE)
        || s.h == 0
        || s.w == 0
    {
        return Err(Error::ingest(
            path,
            format!(
                "{}x{} is not a multiple of {SIDE_MULTIPLE} on each side",
                s.w, s.h
            ),
        ));
    }
    Ok(())
}

/// Image files present in both directories, matched by name and sorted.
/// Any file without a partner is an error naming every such file.
pub fn paired_files(dir_a: &Path, dir_b: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let (a, b) = (image_names(dir_a)?, image_names(dir_b)?);
    let unpaired: Vec<PathBuf> = a
        .difference(&b)
        .map(|n| dir_a.join(n))
        .chain(b.difference(&a).map(|n| dir_b.join(n)))
        .collect();
    if let Some(first) = unpaired.first() {
        let list: Vec<String> = unpaired.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::ingest(
            first,
            format!("unpaired files: {}", list.join(", ")),
        ));
    }
    if a.is_empty() {
        return Err(Error::ingest(dir_a, "no images found"));
    }
    Ok(a.into_iter()
        .map(|n| (dir_a.join(&n), dir_b.join(n)))
        .collect())
}

/// Loads name-matched pairs, sorted by name.
pub fn ingest_pairs(blurry_dir: &Path, sharp_dir: &Path) -> Result<Dataset> {
    let files = paired_files(blurry_dir, sharp_dir)?;
    let mut pairs = Vec::with_capacity(files.len());
    for (pb, ps) in files {
        let name = pb
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        let blurry = load_rgb(&pb)?;
        let sharp = load_rgb(&ps)?;
        check_extent(&pb, &blurry)?;
        check_extent(&ps, &sharp)?;
        if blurry.shape() != sharp.shape() {
            return Err(Error::ingest(
                &pb,
                format!(
                    "size {} differs from its sharp counterpart {}",
                    blurry.shape(),
                    sharp.shape()
                ),
            ));
        }
        pairs.push(Pair {
            name,
            blurry,
            sharp,
        });
    }
    Ok(Dataset { pairs })
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// One procedurally drawn RGB scene: a gradient background, filled
/// rectangles, half-plane edges and stripe patches.
fn scene(rng: &mut ChaCha8Rng, size: usize) -> [Plane; 3] {
    let mut col = || {
        [
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
        ]
    };
    let (c0, c1) = (col(), col());
    let mut planes: [Plane; 3] = std::array::from_fn(|_| Plane::constant(size, size, 0.0));
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    for y in 0..size {
        for x in 0..size {
            let t = 0.5 + 0.5 * ((x as f64 * dx + y as f64 * dy) / size as f64);
            for c in 0..3 {
                planes[c].data[y * size + x] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }
    let s = size as f64;
    let n_shapes = rng.random_range(4..10);
    for _ in 0..n_shapes {
        let color = [
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random::<f64>(),
        ];
        let kind = rng.random_range(0..3);
        let (x0, y0) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let (w, h) = (
            rng.random_range(s / 8.0..s / 2.0),
            rng.random_range(s / 8.0..s / 2.0),
        );
        let (nx, ny) = {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            (a.cos(), a.sin())
        };
        let period = rng.random_range(2.0..6.0);
        for y in 0..size {
            for x in 0..size {
                let (fx, fy) = (x as f64, y as f64);
                let inside = match kind {
                    0 => fx >= x0 && fx < x0 + w && fy >= y0 && fy < y0 + h,
                    1 => (fx - x0) * nx + (fy - y0) * ny > 0.0 && (fx - x0).abs() < w,
                    _ => {
                        fx >= x0
                            && fx < x0 + w
                            && fy >= y0
                            && fy < y0 + h
                            && (((fx * nx + fy * ny) / period).floor() as i64) % 2 == 0
                    }
                };
                if inside {
                    for c in 0..3 {
                        planes[c].data[y * size + x] = color[c];
                    }
                }
            }
        }
    }
    planes
}

fn planes_to_tensor(planes: &[Plane; 3], size: usize) -> Tensor<f32> {
    let data: Vec<f64> = planes
        .iter()
        .flat_map(|p| p.data.iter().map(|&v| quantize(v)))
        .collect();
    Tensor::from_f64(Shape::new(1, 3, size, size), &data).expect("plane sizes")
}

/// `n` sharp scenes and their Gaussian-blurred versions (sigma drawn from
/// `[1, 3]`), quantized to 8 bits. Deterministic in `seed`.
pub fn synth_corpus(n: usize, size: usize, seed: u64) -> Result<Dataset> {
    if size == 0 || !size.is_multiple_of(SIDE_MULTIPLE) {
        return Err(Error::contract(format!(
            "size {size} is not a positive multiple of {SIDE_MULTIPLE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let sharp = scene(&mut rng, size);
        let sigma = rng.random_range(1.0..=3.0);
        let mut blurred: [Plane; 3] = sharp.clone();
        for c in 0..3 {
            blurred[c] = gaussian_blur(&sharp[c], sigma)?;
        }
        pairs.push(Pair {
            name: format!("{i:05}.png"),
            blurry: planes_to_tensor(&blurred, size),
            sharp: planes_to_tensor(&sharp, size),
        });
    }
    Ok(Dataset { pairs })
}

/// Random `crop x crop` window (the whole image when it is smaller) with an
/// optional horizontal flip, applied identically to both sides of a pair.
pub fn crop_pair(
    pair: &Pair,
    crop: usize,
    flip: bool,
    rng: &mut impl Rng,
) -> (Tensor<f32>, Tensor<f32>) {
    let s = pair.sharp.shape();
    let (ch, cw) = (crop.min(s.h), crop.min(s.w));
    let y0 = rng.random_range(0..=s.h - ch);
    let x0 = rng.random_range(0..=s.w - cw);
    let mirror = flip && rng.random_bool(0.5);
    let cut = |t: &Tensor<f32>| {
        let mut out = Vec::with_capacity(s.c * ch * cw);
        for c in 0..s.c {
            for y in 0..ch {
                for x in 0..cw {
                    let xs = if mirror { x0 + cw - 1 - x } else { x0 + x };
                    out.push(t.at(0, c, y0 + y, xs));
                }
            }
        }
        Tensor::new(Shape::new(1, s.c, ch, cw), out).expect("crop size")
    };
    (cut(&pair.blurry), cut(&pair.sharp))
}

/// Dataset indices in a random order, grouped into batches.
pub fn batches(n: usize, batch: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch.max(1)).map(|c| c.to_vec()).collect()
}
