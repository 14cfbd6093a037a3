//! Octave convolution and the frequency separation module.
//!
//! A feature map is carried as two bands: a high-frequency part at full
//! resolution and a low-frequency part at half resolution. The split ratio
//! `alpha` is the fraction of channels in the low band.

use crate::error::{Error, Result};
use crate::nn::Conv;
use crate::params::{Bindings, ParamSpec};
use crate::tensor::{Float, Graph, Tensor, Var};

/// Splits `c` channels into `(high, low)` counts for ratio `alpha`.
pub fn split_channels(c: usize, alpha: f64) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::dim(format!("alpha {alpha} outside [0, 1]")));
    }
    let low = alpha * c as f64;
    if (low - low.round()).abs() > 1e-9 {
        return Err(Error::dim(format!(
            "alpha {alpha} does not split {c} channels evenly"
        )));
    }
    let low = low.round() as usize;
    Ok((c - low, low))
}

/// Concrete two-band feature values.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyPair<T> {
    pub hf: Tensor<T>,
    pub lf: Tensor<T>,
    pub alpha: f64,
}

impl<T: Float> FrequencyPair<T> {
    /// Low band is exactly half the spatial size of the high band and the
    /// channel counts follow `alpha`.
    pub fn validate(&self) -> Result<()> {
        let (h, l) = (self.hf.shape(), self.lf.shape());
        if h.n != l.n || l.h * 2 != h.h || l.w * 2 != h.w {
            return Err(Error::dim(format!(
                "low band {l} is not half of high band {h}"
            )));
        }
        let (hc, lc) = split_channels(h.c + l.c, self.alpha)?;
        if hc != h.c || lc != l.c {
            return Err(Error::dim(format!(
                "channel split {}/{} does not match alpha {}",
                h.c, l.c, self.alpha
            )));
        }
        Ok(())
    }
}

/// Two-band feature on a graph. A plain tensor is the `alpha = 0` case
/// (`lf` absent); `alpha = 1` leaves `hf` absent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bands {
    pub hf: Option<Var>,
    pub lf: Option<Var>,
}

impl Bands {
    pub fn plain(x: Var) -> Self {
        Bands {
            hf: Some(x),
            lf: None,
        }
    }

    pub fn pair(hf: Var, lf: Var) -> Self {
        Bands {
            hf: Some(hf),
            lf: Some(lf),
        }
    }

    pub fn into_plain(self) -> Result<Var> {
        match (self.hf, self.lf) {
            (Some(h), None) => Ok(h),
            _ => Err(Error::contract("expected a single-band feature")),
        }
    }

    pub fn values<T: Float>(&self, g: &Graph<T>, alpha: f64) -> Result<FrequencyPair<T>> {
        match (self.hf, self.lf) {
            (Some(h), Some(l)) => Ok(FrequencyPair {
                hf: g.value(h).clone(),
                lf: g.value(l).clone(),
                alpha,
            }),
            _ => Err(Error::contract("feature does not carry both bands")),
        }
    }
}

/// Octave convolution with intra- and inter-band paths.
#[derive(Clone, Debug, PartialEq)]
pub struct OctConv {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub alpha_in: f64,
    pub alpha_out: f64,
    pub k: usize,
    pub h_to_h: Option<Conv>,
    pub l_to_h: Option<Conv>,
    pub l_to_l: Option<Conv>,
    pub h_to_l: Option<Conv>,
}

impl OctConv {
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        alpha_in: f64,
        alpha_out: f64,
    ) -> Result<Self> {
        let name = name.into();
        let (hi, li) = split_channels(c_in, alpha_in)?;
        let (ho, lo) = split_channels(c_out, alpha_out)?;
        let path = |tag: &str, from: usize, to: usize| {
            (from > 0 && to > 0).then(|| Conv::new(format!("{name}.{tag}"), from, to, k, 1))
        };
        Ok(OctConv {
            h_to_h: path("hh", hi, ho),
            l_to_h: path("lh", li, ho),
            l_to_l: path("ll", li, lo),
            h_to_l: path("hl", hi, lo),
            name,
            c_in,
            c_out,
            alpha_in,
            alpha_out,
            k,
        })
    }

    pub fn paths(&self) -> impl Iterator<Item = &Conv> {
        [&self.h_to_h, &self.l_to_h, &self.l_to_l, &self.h_to_l]
            .into_iter()
            .flatten()
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        for p in self.paths() {
            p.specs(out);
        }
    }

    fn check_input<T: Float>(&self, g: &Graph<T>, x: Bands) -> Result<()> {
        let (hi, li) = split_channels(self.c_in, self.alpha_in)?;
        let band = |v: Option<Var>, want: usize, which: &str| -> Result<()> {
            match (v, want) {
                (None, 0) => Ok(()),
                (Some(v), w) if w > 0 && g.shape(v).c == w => Ok(()),
                (v, w) => Err(Error::dim(format!(
                    "{}: {which} band has {} channels, alpha_in {} expects {w}",
                    self.name,
                    v.map_or(0, |v| g.shape(v).c),
                    self.alpha_in
                ))),
            }
        };
        band(x.hf, hi, "high")?;
        band(x.lf, li, "low")?;
        if let (Some(h), Some(l)) = (x.hf, x.lf) {
            let (hs, ls) = (g.shape(h), g.shape(l));
            if ls.h * 2 != hs.h || ls.w * 2 != hs.w || ls.n != hs.n {
                return Err(Error::dim(format!(
                    "{}: low band {ls} is not half of high band {hs}",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// `Y^H = f(X^H; W^{H->H}) + up(f(X^L; W^{L->H}))`,
    /// `Y^L = f(X^L; W^{L->L}) + f(pool(X^H); W^{H->L})`.
    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bindings, x: Bands) -> Result<Bands> {
        self.check_input(g, x)?;
        let mut hf = None;
        if let (Some(conv), Some(xh)) = (&self.h_to_h, x.hf) {
            hf = Some(conv.forward(g, p, xh)?);
        }
        if let (Some(conv), Some(xl)) = (&self.l_to_h, x.lf) {
            let t = conv.forward(g, p, xl)?;
            let up = g.up_nearest2(t)?;
            hf = Some(match hf {
                Some(h) => g.add(h, up)?,
                None => up,
            });
        }
        let mut lf = None;
        if let (Some(conv), Some(xl)) = (&self.l_to_l, x.lf) {
            lf = Some(conv.forward(g, p, xl)?);
        }
        if let (Some(conv), Some(xh)) = (&self.h_to_l, x.hf) {
            let pooled = g.avg_pool2(xh)?;
            let t = conv.forward(g, p, pooled)?;
            lf = Some(match lf {
                Some(l) => g.add(l, t)?,
                None => t,
            });
        }
        Ok(Bands { hf, lf })
    }
}

/// Output of one FSM: the residual output and the middle convolution's bands.
#[derive(Clone, Copy, Debug)]
pub struct FsmOutput {
    pub out: Var,
    pub taps: Bands,
}

impl FsmOutput {
    pub fn lf(&self) -> Var {
        self.taps
            .lf
            .or(self.taps.hf)
            .expect("fsm taps are never empty")
    }

    pub fn hf(&self) -> Var {
        self.taps
            .hf
            .or(self.taps.lf)
            .expect("fsm taps are never empty")
    }
}

/// Frequency separation module: 1×1 split, 3×3 two-band conv, 1×1 merge,
/// plus the input residual.
///
/// With `separate = false` every ratio is zero and the block is a plain
/// three-conv residual block whose single middle feature is reported as both
/// taps.
#[derive(Clone, Debug, PartialEq)]
pub struct Fsm {
    pub name: String,
    pub channels: usize,
    pub separate: bool,
    pub split: OctConv,
    pub mid: OctConv,
    pub merge: OctConv,
}

pub const FSM_ALPHA: f64 = 0.5;

impl Fsm {
    pub fn new(name: impl Into<String>, channels: usize, separate: bool) -> Result<Self> {
        let name = name.into();
        let a = if separate { FSM_ALPHA } else { 0.0 };
        Ok(Fsm {
            split: OctConv::new(format!("{name}.split"), channels, channels, 1, 0.0, a)?,
            mid: OctConv::new(format!("{name}.mid"), channels, channels, 3, a, a)?,
            merge: OctConv::new(format!("{name}.merge"), channels, channels, 1, a, 0.0)?,
            name,
            channels,
            separate,
        })
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.split.specs(out);
        self.mid.specs(out);
        self.merge.specs(out);
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bindings, x: Var) -> Result<FsmOutput> {
        let s = g.shape(x);
        if self.separate
            && (!s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) || !s.c.is_multiple_of(2))
        {
            return Err(Error::dim(format!(
                "{}: FSM needs even extents, got {s}",
                self.name
            )));
        }
        let a = self.split.forward(g, p, Bands::plain(x))?;
        let taps = self.mid.forward(g, p, a)?;
        let merged = self.merge.forward(g, p, taps)?.into_plain()?;
        let out = g.add(x, merged)?;
        Ok(FsmOutput { out, taps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::tensor::Shape;

    fn specs_of(f: impl Fn(&mut Vec<ParamSpec>)) -> Vec<ParamSpec> {
        let mut v = Vec::new();
        f(&mut v);
        v
    }

    #[test]
    fn split_requires_integral_channels() {
        assert_eq!(split_channels(8, 0.5).unwrap(), (4, 4));
        assert_eq!(split_channels(8, 0.0).unwrap(), (8, 0));
        assert_eq!(split_channels(8, 1.0).unwrap(), (0, 8));
        assert!(split_channels(7, 0.5).is_err());
        assert!(split_channels(8, 1.5).is_err());
    }

    #[test]
    fn split_conv_shape_law() {
        let oc = OctConv::new("oc", 8, 8, 3, 0.0, 0.5).unwrap();
        let params = ParamStore::<f32>::init(&specs_of(|v| oc.specs(v)), 1);
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(Tensor::full(Shape::new(1, 8, 16, 16), 0.3));
        let y = oc.forward(&mut g, &p, Bands::plain(x)).unwrap();
        assert_eq!(g.shape(y.hf.unwrap()), Shape::new(1, 4, 16, 16));
        assert_eq!(g.shape(y.lf.unwrap()), Shape::new(1, 4, 8, 8));
        y.values(&g, 0.5).unwrap().validate().unwrap();
    }

    #[test]
    fn degenerate_paths_are_absent() {
        let oc = OctConv::new("oc", 4, 4, 3, 0.0, 0.0).unwrap();
        assert_eq!(oc.paths().count(), 1);
        let oc = OctConv::new("oc", 4, 4, 3, 0.5, 0.0).unwrap();
        assert!(oc.l_to_l.is_none() && oc.h_to_l.is_none());
        let oc = OctConv::new("oc", 4, 4, 3, 1.0, 1.0).unwrap();
        assert_eq!(oc.paths().count(), 1);
        assert!(oc.l_to_l.is_some());
    }

    #[test]
    fn zero_weights_give_zero_bands() {
        let oc = OctConv::new("oc", 4, 4, 3, 0.5, 0.5).unwrap();
        let mut params = ParamStore::<f64>::init(&specs_of(|v| oc.specs(v)), 3);
        for (_, t) in params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let h = g.constant(Tensor::full(Shape::new(1, 2, 4, 4), 1.0));
        let l = g.constant(Tensor::full(Shape::new(1, 2, 2, 2), 1.0));
        let y = oc.forward(&mut g, &p, Bands::pair(h, l)).unwrap();
        assert!(g.value(y.hf.unwrap()).data().iter().all(|&v| v == 0.0));
        assert!(g.value(y.lf.unwrap()).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inconsistent_input_is_dimension_error() {
        let oc = OctConv::new("oc", 4, 4, 1, 0.5, 0.5).unwrap();
        let params = ParamStore::<f32>::init(&specs_of(|v| oc.specs(v)), 3);
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let plain = g.constant(Tensor::zeros(Shape::new(1, 4, 4, 4)));
        assert!(matches!(
            oc.forward(&mut g, &p, Bands::plain(plain)),
            Err(Error::Dimension(_))
        ));
        let h = g.constant(Tensor::zeros(Shape::new(1, 2, 4, 4)));
        let l = g.constant(Tensor::zeros(Shape::new(1, 2, 4, 4)));
        assert!(matches!(
            oc.forward(&mut g, &p, Bands::pair(h, l)),
            Err(Error::Dimension(_))
        ));

        let split = OctConv::new("s", 4, 4, 1, 0.0, 0.5).unwrap();
        let params = ParamStore::<f32>::init(&specs_of(|v| split.specs(v)), 3);
        let p = params.bind(&mut g, false);
        let odd = g.constant(Tensor::zeros(Shape::new(1, 4, 5, 4)));
        assert!(matches!(
            split.forward(&mut g, &p, Bands::plain(odd)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn fsm_shapes_and_odd_rejection() {
        let fsm = Fsm::new("fsm", 4, true).unwrap();
        let params = ParamStore::<f32>::init(&specs_of(|v| fsm.specs(v)), 5);
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(Tensor::full(Shape::new(2, 4, 6, 8), 0.1));
        let o = fsm.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(o.out), Shape::new(2, 4, 6, 8));
        assert_eq!(g.shape(o.hf()), Shape::new(2, 2, 6, 8));
        assert_eq!(g.shape(o.lf()), Shape::new(2, 2, 3, 4));
        let odd = g.constant(Tensor::zeros(Shape::new(1, 4, 5, 6)));
        assert!(matches!(
            fsm.forward(&mut g, &p, odd),
            Err(Error::Dimension(_))
        ));
        let odd_c = Fsm::new("f", 3, true);
        assert!(odd_c.is_err());
    }

    #[test]
    fn plain_fsm_reports_one_feature_for_both_taps() {
        let fsm = Fsm::new("fsm", 4, false).unwrap();
        let params = ParamStore::<f32>::init(&specs_of(|v| fsm.specs(v)), 5);
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(Tensor::full(Shape::new(1, 4, 4, 4), 0.1));
        let o = fsm.forward(&mut g, &p, x).unwrap();
        assert_eq!(o.lf(), o.hf());
        assert_eq!(g.shape(o.hf()), Shape::new(1, 4, 4, 4));
    }
}
