//! Property checks shared by the proptest suite and the acceptance runner.
#![allow(dead_code)]

use msfs::analysis::{freq_decompose, js_divergence, Histogram, Plane, Scale};
use msfs::blocks::Rcab;
use msfs::freq::{split_channels, Bands, FrequencyPair, Fsm, OctConv};
use msfs::params::{ParamSpec, ParamStore};
use msfs::tensor::pixel_unshuffle;
use msfs::{Float, Graph, Shape, Tensor};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CASES: u32 = 1000;
pub const DEGENERACY_CASES: u32 = 100;

type Check = Result<(), TestCaseError>;

pub fn random<T: Float>(shape: Shape, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..shape.numel())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Tensor::from_f64(shape, &data).unwrap()
}

fn specs(f: impl FnOnce(&mut Vec<ParamSpec>)) -> Vec<ParamSpec> {
    let mut v = Vec::new();
    f(&mut v);
    v
}

const ALPHAS: [f64; 3] = [0.0, 0.5, 1.0];

#[derive(Clone, Debug)]
pub struct OctCase {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub alpha_in: f64,
    pub alpha_out: f64,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub seed: u64,
}

pub fn oct_case() -> impl Strategy<Value = OctCase> {
    (
        1usize..=4,
        1usize..=4,
        prop_oneof![Just(1), Just(3)],
        0usize..3,
        0usize..3,
        1usize..=2,
        1usize..=6,
        1usize..=6,
        any::<u64>(),
    )
        .prop_map(|(ci, co, k, ai, ao, n, h, w, seed)| OctCase {
            c_in: 2 * ci,
            c_out: 2 * co,
            k,
            alpha_in: ALPHAS[ai],
            alpha_out: ALPHAS[ao],
            n,
            h: 2 * h,
            w: 2 * w,
            seed,
        })
}

pub fn check_octconv_shapes(c: &OctCase) -> Check {
    let oc = OctConv::new("oc", c.c_in, c.c_out, c.k, c.alpha_in, c.alpha_out).unwrap();
    let params = ParamStore::<f32>::init(&specs(|v| oc.specs(v)), c.seed);
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let (hi, li) = split_channels(c.c_in, c.alpha_in).unwrap();
    let (ho, lo) = split_channels(c.c_out, c.alpha_out).unwrap();
    let mut band = |ch: usize, f: usize, s: u64| {
        (ch > 0).then(|| g.constant(random(Shape::new(c.n, ch, c.h / f, c.w / f), s)))
    };
    let x = Bands {
        hf: band(hi, 1, c.seed ^ 1),
        lf: band(li, 2, c.seed ^ 2),
    };
    let y = oc.forward(&mut g, &p, x).unwrap();
    let shape = |v: Option<msfs::Var>| v.map(|v| g.shape(v));
    prop_assert_eq!(shape(y.hf), (ho > 0).then(|| Shape::new(c.n, ho, c.h, c.w)));
    prop_assert_eq!(
        shape(y.lf),
        (lo > 0).then(|| Shape::new(c.n, lo, c.h / 2, c.w / 2))
    );
    if ho > 0 && lo > 0 {
        prop_assert!(y.values(&g, c.alpha_out).unwrap().validate().is_ok());
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct FsmCase {
    pub channels: usize,
    pub separate: bool,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub seed: u64,
}

pub fn fsm_case() -> impl Strategy<Value = FsmCase> {
    (
        1usize..=4,
        any::<bool>(),
        1usize..=2,
        1usize..=6,
        1usize..=6,
        any::<u64>(),
    )
        .prop_map(|(c, separate, n, h, w, seed)| FsmCase {
            channels: 2 * c,
            separate,
            n,
            h: 2 * h,
            w: 2 * w,
            seed,
        })
}

/// Output keeps the input shape, taps form a valid pair, and zeroing the
/// merge convolution leaves exactly the input.
pub fn check_fsm(c: &FsmCase) -> Check {
    let fsm = Fsm::new("f", c.channels, c.separate).unwrap();
    let mut params = ParamStore::<f32>::init(&specs(|v| fsm.specs(v)), c.seed);
    let x_val = random::<f32>(Shape::new(c.n, c.channels, c.h, c.w), c.seed ^ 7);
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(x_val.clone());
    let o = fsm.forward(&mut g, &p, x).unwrap();
    prop_assert_eq!(g.shape(o.out), x_val.shape());
    if c.separate {
        prop_assert!(o.taps.values(&g, 0.5).unwrap().validate().is_ok());
    } else {
        prop_assert_eq!(o.lf(), o.hf());
    }

    for (name, t) in params.iter_mut() {
        if name.starts_with("f.merge") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(x_val.clone());
    let o = fsm.forward(&mut g, &p, x).unwrap();
    prop_assert_eq!(g.value(o.out), &x_val);
    Ok(())
}

#[derive(Clone, Debug)]
pub struct RcabCase {
    pub ratio: usize,
    pub channels: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub seed: u64,
}

pub fn rcab_case() -> impl Strategy<Value = RcabCase> {
    (
        prop_oneof![Just(1usize), Just(2), Just(4)],
        1usize..=3,
        1usize..=2,
        1usize..=9,
        1usize..=9,
        any::<u64>(),
    )
        .prop_map(|(ratio, m, n, h, w, seed)| RcabCase {
            ratio,
            channels: ratio * m,
            n,
            h,
            w,
            seed,
        })
}

pub fn check_rcab(c: &RcabCase) -> Check {
    let r = Rcab::new("r", c.channels, c.ratio, 0.2).unwrap();
    let params = ParamStore::<f32>::init(&specs(|v| r.specs(v)), c.seed);
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(random(Shape::new(c.n, c.channels, c.h, c.w), c.seed ^ 3));
    let feat = g.constant(random(Shape::new(c.n, c.channels, c.h, c.w), c.seed ^ 5));
    let y = r.forward(&mut g, &p, x).unwrap();
    prop_assert_eq!(g.shape(y), g.shape(x));
    let a = r.attention(&mut g, &p, feat).unwrap();
    prop_assert_eq!(g.shape(a), Shape::new(c.n, c.channels, 1, 1));
    prop_assert!(g.value(a).data().iter().all(|&v| v > 0.0 && v < 1.0));
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ShuffleCase {
    pub r: usize,
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub seed: u64,
}

pub fn shuffle_case() -> impl Strategy<Value = ShuffleCase> {
    (
        1usize..=3,
        1usize..=3,
        1usize..=2,
        1usize..=5,
        1usize..=5,
        any::<u64>(),
    )
        .prop_map(|(r, c, n, h, w, seed)| ShuffleCase {
            r,
            c,
            n,
            h,
            w,
            seed,
        })
}

/// Shape law, element placement against the index formula, and exact
/// inversion by unshuffle.
pub fn check_pixel_shuffle(c: &ShuffleCase) -> Check {
    let r = c.r;
    let xv = random::<f64>(Shape::new(c.n, c.c * r * r, c.h, c.w), c.seed);
    let mut g = Graph::new();
    let x = g.constant(xv.clone());
    let y = g.pixel_shuffle(x, r).unwrap();
    let yv = g.value(y);
    prop_assert_eq!(yv.shape(), Shape::new(c.n, c.c, c.h * r, c.w * r));
    for n in 0..c.n {
        for ch in 0..c.c {
            for yy in 0..c.h * r {
                for xx in 0..c.w * r {
                    let src = xv.at(n, ch * r * r + (yy % r) * r + xx % r, yy / r, xx / r);
                    prop_assert_eq!(yv.at(n, ch, yy, xx), src);
                }
            }
        }
    }
    prop_assert_eq!(&pixel_unshuffle(yv, r).unwrap(), &xv);
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PairCase {
    pub c: usize,
    pub alpha: f64,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub defect: usize,
}

pub fn pair_case() -> impl Strategy<Value = PairCase> {
    (
        1usize..=4,
        1usize..=3,
        1usize..=2,
        1usize..=6,
        1usize..=6,
        0usize..4,
    )
        .prop_map(|(c, a, n, h, w, defect)| PairCase {
            c: 4 * c,
            alpha: [0.25, 0.5, 0.75][a - 1],
            n,
            h: 2 * h,
            w: 2 * w,
            defect,
        })
}

/// A well-formed pair validates; each single defect is rejected.
pub fn check_frequency_pair(c: &PairCase) -> Check {
    let (hc, lc) = split_channels(c.c, c.alpha).unwrap();
    let make = |hs: Shape, ls: Shape| FrequencyPair::<f32> {
        hf: Tensor::zeros(hs),
        lf: Tensor::zeros(ls),
        alpha: c.alpha,
    };
    let hs = Shape::new(c.n, hc, c.h, c.w);
    let ls = Shape::new(c.n, lc, c.h / 2, c.w / 2);
    prop_assert!(make(hs, ls).validate().is_ok());
    let bad = match c.defect {
        0 => make(hs, ls.with_hw(ls.h + 1, ls.w)),
        1 => make(hs, ls.with_hw(ls.h, ls.w * 2)),
        2 => make(hs.with_c(hc + 1), ls.with_c(lc.max(2) - 1)),
        _ => make(hs, Shape::new(c.n + 1, lc, ls.h, ls.w)),
    };
    prop_assert!(bad.validate().is_err());
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PlaneCase {
    pub plane: Plane,
    pub sigma: f64,
    pub scale: Scale,
}

pub fn plane_case() -> impl Strategy<Value = PlaneCase> {
    (
        4usize..=24,
        4usize..=24,
        0.3f64..4.0,
        0usize..3,
        any::<u64>(),
    )
        .prop_map(|(h, w, sigma, s, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..h * w).map(|_| rng.random::<f64>()).collect();
            PlaneCase {
                plane: Plane::new(h, w, data).unwrap(),
                sigma,
                scale: Scale::ALL[s],
            }
        })
}

/// `lf + hf` reproduces the image exactly and the low band stays within the
/// image's range.
pub fn check_reconstruction(c: &PlaneCase) -> Check {
    let d = freq_decompose(&c.plane, c.sigma, c.scale).unwrap();
    let f = c.scale.factor();
    prop_assert_eq!((d.image.h, d.image.w), (c.plane.h / f, c.plane.w / f));
    let lo = d.image.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d
        .image
        .data
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    for ((&i, &l), &h) in d.image.data.iter().zip(&d.lf.data).zip(&d.hf.data) {
        prop_assert_eq!(l + h, i);
        prop_assert!(l >= lo - 1e-12 && l <= hi + 1e-12);
    }
    Ok(())
}

pub fn histogram_pair() -> impl Strategy<Value = (Histogram, Histogram)> {
    (
        2usize..=32,
        prop::collection::vec(0.0f64..1.0, 1..64),
        prop::collection::vec(0.0f64..1.0, 1..64),
    )
        .prop_map(|(bins, a, b)| {
            (
                Histogram::build(&a, bins, 0.0, 1.0),
                Histogram::build(&b, bins, 0.0, 1.0),
            )
        })
}

/// Symmetric, within `[0, 1]` bits, and zero against itself.
pub fn check_js(p: &Histogram, q: &Histogram) -> Check {
    let pq = js_divergence(p, q).unwrap();
    let qp = js_divergence(q, p).unwrap();
    prop_assert!((pq - qp).abs() < 1e-12);
    prop_assert!((0.0..=1.0).contains(&pq));
    prop_assert_eq!(js_divergence(p, p).unwrap(), 0.0);
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ConvCase {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub seed: u64,
}

pub fn conv_case() -> impl Strategy<Value = ConvCase> {
    (
        1usize..=4,
        1usize..=4,
        prop_oneof![Just(1usize), Just(3)],
        1usize..=2,
        1usize..=8,
        1usize..=8,
        any::<u64>(),
    )
        .prop_map(|(c_in, c_out, k, n, h, w, seed)| ConvCase {
            c_in,
            c_out,
            k,
            n,
            h,
            w,
            seed,
        })
}

/// Direct same-padded convolution, accumulated in f64.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (k, pad) = (ws.h, (ws.h / 2) as isize);
    let mut out = Vec::with_capacity(xs.n * ws.n * xs.h * xs.w);
    for n in 0..xs.n {
        for o in 0..ws.n {
            for y in 0..xs.h {
                for xx in 0..xs.w {
                    let mut s = b.data()[o];
                    for i in 0..ws.c {
                        for dy in 0..k {
                            for dx in 0..k {
                                let (sy, sx) = (
                                    y as isize + dy as isize - pad,
                                    xx as isize + dx as isize - pad,
                                );
                                if sy >= 0
                                    && sx >= 0
                                    && (sy as usize) < xs.h
                                    && (sx as usize) < xs.w
                                {
                                    s += x.at(n, i, sy as usize, sx as usize) * w.at(o, i, dy, dx);
                                }
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
    }
    Tensor::new(Shape::new(xs.n, ws.n, xs.h, xs.w), out).unwrap()
}

/// Octave convolution with both ratios zero against a plain convolution:
/// within 1e-6 of the library conv at f32 and of the direct loop at f64.
pub fn check_degeneracy(c: &ConvCase) -> Check {
    let oc = OctConv::new("oc", c.c_in, c.c_out, c.k, 0.0, 0.0).unwrap();
    let params = ParamStore::<f64>::init(&specs(|v| oc.specs(v)), c.seed);
    let xv = random::<f64>(Shape::new(c.n, c.c_in, c.h, c.w), c.seed ^ 11);
    let (wn, bn) = ("oc.hh.w", "oc.hh.b");

    let mut g = Graph::<f32>::new();
    let p32 = params.cast::<f32>();
    let p = p32.bind(&mut g, false);
    let x = g.constant(xv.cast());
    let y = oc
        .forward(&mut g, &p, Bands::plain(x))
        .unwrap()
        .into_plain()
        .unwrap();
    let (w, b) = (p.get(wn).unwrap(), p.get(bn).unwrap());
    let reference = g.conv2d(x, w, Some(b), 1, c.k / 2).unwrap();
    prop_assert!(g.value(y).max_abs_diff(g.value(reference)) < 1e-6);

    let mut g = Graph::<f64>::new();
    let p = params.bind(&mut g, false);
    let x = g.constant(xv.clone());
    let y = oc
        .forward(&mut g, &p, Bands::plain(x))
        .unwrap()
        .into_plain()
        .unwrap();
    let direct = naive_conv(&xv, params.get(wn).unwrap(), params.get(bn).unwrap());
    prop_assert!(g.value(y).max_abs_diff(&direct) < 1e-6);
    Ok(())
}
