//! Residual channel-attention block and the resampling modules.

use crate::error::{Error, Result};
use crate::nn::Conv;
use crate::params::{Bindings, ParamSpec};
use crate::tensor::{Float, Graph, Var};

/// Residual channel-attention block:
/// `x + body(x) * sigmoid(up(relu(down(avgpool(body(x))))))` with
/// `body = conv3x3 -> leaky_relu -> conv3x3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rcab {
    pub name: String,
    pub channels: usize,
    pub slope: f64,
    pub body1: Conv,
    pub body2: Conv,
    pub att_down: Conv,
    pub att_up: Conv,
}

impl Rcab {
    pub fn new(name: impl Into<String>, channels: usize, ratio: usize, slope: f64) -> Result<Self> {
        let name = name.into();
        if ratio == 0 || !channels.is_multiple_of(ratio) || channels < ratio {
            return Err(Error::dim(format!(
                "{name}: {channels} channels not divisible by attention ratio {ratio}"
            )));
        }
        Ok(Rcab {
            body1: Conv::new(format!("{name}.body1"), channels, channels, 3, 1),
            body2: Conv::new(format!("{name}.body2"), channels, channels, 3, 1),
            att_down: Conv::new(format!("{name}.att_down"), channels, channels / ratio, 1, 1),
            att_up: Conv::new(format!("{name}.att_up"), channels / ratio, channels, 1, 1),
            name,
            channels,
            slope,
        })
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        for c in [&self.body1, &self.body2, &self.att_down, &self.att_up] {
            c.specs(out);
        }
    }

    /// Per-channel weights in (0, 1), shape `(n, c, 1, 1)`.
    pub fn attention<T: Float>(&self, g: &mut Graph<T>, p: &Bindings, feat: Var) -> Result<Var> {
        let pooled = g.global_avg_pool(feat);
        let d = self.att_down.forward(g, p, pooled)?;
        let d = g.leaky_relu(d, 0.0);
        let u = self.att_up.forward(g, p, d)?;
        Ok(g.sigmoid(u))
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bindings, x: Var) -> Result<Var> {
        let c = g.shape(x).c;
        if c != self.channels {
            return Err(Error::dim(format!(
                "{}: expected {} channels, got {c}",
                self.name, self.channels
            )));
        }
        let b = self.body1.forward(g, p, x)?;
        let b = g.leaky_relu(b, self.slope);
        let b = self.body2.forward(g, p, b)?;
        let att = self.attention(g, p, b)?;
        let scaled = g.channel_scale(b, att)?;
        g.add(x, scaled)
    }
}

/// Stride-2 3×3 convolution followed by LeakyReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Downsample {
    pub conv: Conv,
    pub slope: f64,
}

impl Downsample {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, slope: f64) -> Self {
        Downsample {
            conv: Conv::new(name, c_in, c_out, 3, 2),
            slope,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.conv.specs(out);
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bindings, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
            return Err(Error::dim(format!(
                "{}: odd spatial extent in {s}",
                self.conv.name
            )));
        }
        let y = self.conv.forward(g, p, x)?;
        Ok(g.leaky_relu(y, self.slope))
    }
}

/// Optional 1×1 width reduction, RCAB, then a 3×3 conv to `4 * c_out`
/// channels rearranged by pixel shuffle into `c_out` channels at twice the
/// resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Upsample {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub reduce: Option<Conv>,
    pub rcab: Rcab,
    pub expand: Conv,
}

impl Upsample {
    /// `c_mid` is the width the RCAB runs at.
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_mid: usize,
        c_out: usize,
        ratio: usize,
        slope: f64,
    ) -> Result<Self> {
        let name = name.into();
        Ok(Upsample {
            reduce: (c_in != c_mid).then(|| Conv::new(format!("{name}.reduce"), c_in, c_mid, 1, 1)),
            rcab: Rcab::new(format!("{name}.rcab"), c_mid, ratio, slope)?,
            expand: Conv::new(format!("{name}.expand"), c_mid, 4 * c_out, 3, 1),
            name,
            c_in,
            c_out,
        })
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        if let Some(r) = &self.reduce {
            r.specs(out);
        }
        self.rcab.specs(out);
        self.expand.specs(out);
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bindings, x: Var) -> Result<Var> {
        let mut h = x;
        if let Some(r) = &self.reduce {
            h = r.forward(g, p, h)?;
        }
        h = self.rcab.forward(g, p, h)?;
        h = self.expand.forward(g, p, h)?;
        g.pixel_shuffle(h, 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::tensor::{Shape, Tensor};

    fn store<T: Float>(f: impl Fn(&mut Vec<ParamSpec>), seed: u64) -> ParamStore<T> {
        let mut v = Vec::new();
        f(&mut v);
        ParamStore::init(&v, seed)
    }

    fn zero_prefix<T: Float>(p: &mut ParamStore<T>, prefix: &str) {
        for (k, t) in p.iter_mut() {
            if k.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    #[test]
    fn rcab_preserves_shape_and_rejects_bad_ratio() {
        let r = Rcab::new("r", 8, 4, 0.2).unwrap();
        let params = store::<f32>(|v| r.specs(v), 1);
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(Tensor::full(Shape::new(2, 8, 5, 6), 0.5));
        let y = r.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(y), g.shape(x));
        assert!(matches!(
            Rcab::new("r", 6, 4, 0.2),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn rcab_zero_body_passes_input() {
        let r = Rcab::new("r", 4, 4, 0.2).unwrap();
        let mut params = store::<f64>(|v| r.specs(v), 2);
        zero_prefix(&mut params, "r.body");
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let data: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = g.constant(Tensor::from_f64(Shape::new(1, 4, 4, 4), &data).unwrap());
        let y = r.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn rcab_zero_attention_scales_by_half() {
        let r = Rcab::new("r", 4, 2, 0.2).unwrap();
        let mut params = store::<f64>(|v| r.specs(v), 3);
        zero_prefix(&mut params, "r.att");
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let feat = g.constant(Tensor::full(Shape::new(1, 4, 3, 3), 2.0));
        let a = r.attention(&mut g, &p, feat).unwrap();
        assert!(g.value(a).data().iter().all(|&v| v == 0.5));

        // zero features: attention collapses to sigmoid of the expand bias
        let mut params = store::<f64>(|v| r.specs(v), 4);
        zero_prefix(&mut params, "r.att_up.w");
        let bias = params.get("r.att_up.b").unwrap().clone();
        let p = params.bind(&mut g, false);
        let zero = g.constant(Tensor::zeros(Shape::new(1, 4, 3, 3)));
        let a = r.attention(&mut g, &p, zero).unwrap();
        for (v, b) in g.value(a).data().iter().zip(bias.data()) {
            assert!((v - 1.0 / (1.0 + (-b).exp())).abs() < 1e-15);
        }
    }

    #[test]
    fn down_and_up_shapes() {
        let d = Downsample::new("d", 4, 8, 0.2);
        let u = Upsample::new("u", 8, 8, 4, 4, 0.2).unwrap();
        let params = store::<f32>(
            |v| {
                d.specs(v);
                u.specs(v);
            },
            5,
        );
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(Tensor::full(Shape::new(1, 4, 32, 32), 0.2));
        let y = d.forward(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 8, 16, 16));
        let z = u.forward(&mut g, &p, y).unwrap();
        assert_eq!(g.shape(z), Shape::new(1, 4, 32, 32));

        let odd = g.constant(Tensor::zeros(Shape::new(1, 4, 7, 8)));
        assert!(matches!(
            d.forward(&mut g, &p, odd),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn downsample_zero_weights_give_zero() {
        let d = Downsample::new("d", 3, 6, 0.2);
        let mut params = store::<f32>(|v| d.specs(v), 6);
        zero_prefix(&mut params, "d");
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(Tensor::full(Shape::new(1, 3, 8, 8), 0.7));
        let y = d.forward(&mut g, &p, x).unwrap();
        let y2 = Downsample::new("d", 3, 6, 0.2);
        assert_eq!(y2, d);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_downsamples_quarter_extents() {
        let d1 = Downsample::new("d1", 2, 4, 0.2);
        let d2 = Downsample::new("d2", 4, 8, 0.2);
        let params = store::<f32>(
            |v| {
                d1.specs(v);
                d2.specs(v);
            },
            7,
        );
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(Shape::new(1, 2, 16, 24)));
        let y = d1.forward(&mut g, &p, x).unwrap();
        let y = d2.forward(&mut g, &p, y).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 8, 4, 6));
    }
}
