//! Training objective: reconstruction, low-frequency consistency and the
//! high-frequency contrastive ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ScaleTaps;
use crate::tensor::{Float, Graph, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the contrastive HF term.
    pub lambda1: f64,
    /// Weight of the LF consistency term.
    pub lambda2: f64,
    pub eps_contrastive: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.05,
            lambda2: 0.05,
            eps_contrastive: 1e-7,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.eps_contrastive > 0.0) {
            return Err(Error::Config("eps_contrastive must be positive".into()));
        }
        Ok(())
    }
}

fn sum_scalars<T: Float>(g: &mut Graph<T>, terms: &[Var]) -> Result<Var> {
    let (&first, rest) = terms
        .split_first()
        .ok_or_else(|| Error::contract("no scales to sum"))?;
    rest.iter().try_fold(first, |acc, &t| g.add(acc, t))
}

fn need(taps: &[Var], other: &[Var], what: &str) -> Result<()> {
    if taps.is_empty() || taps.len() != other.len() {
        return Err(Error::contract(format!("{what} taps missing")));
    }
    Ok(())
}

/// Sum over scales of the mean absolute distance between encoder LF taps of
/// the input and of the output image.
pub fn loss_low<T: Float>(g: &mut Graph<T>, taps: &ScaleTaps) -> Result<Var> {
    need(&taps.en_lf, &taps.out_lf, "low-frequency")?;
    let terms = taps
        .en_lf
        .iter()
        .zip(&taps.out_lf)
        .map(|(&a, &b)| g.l1_mean(a, b))
        .collect::<Result<Vec<_>>>()?;
    sum_scalars(g, &terms)
}

/// Sum over scales of `d(anchor, positive) / (d(anchor, negative) + eps)`
/// with decoder HF as anchor, output HF as positive and input HF as negative.
pub fn loss_high<T: Float>(g: &mut Graph<T>, taps: &ScaleTaps, w: &LossWeights) -> Result<Var> {
    need(&taps.de_hf, &taps.out_hf, "high-frequency")?;
    need(&taps.de_hf, &taps.en_hf, "high-frequency")?;
    let mut terms = Vec::with_capacity(taps.de_hf.len());
    for k in 0..taps.de_hf.len() {
        let pos = g.l1_mean(taps.de_hf[k], taps.out_hf[k])?;
        let neg = g.l1_mean(taps.de_hf[k], taps.en_hf[k])?;
        let den = g.affine(neg, 1.0, w.eps_contrastive);
        terms.push(g.div(pos, den)?);
    }
    sum_scalars(g, &terms)
}

/// The loss terms of one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub low: Var,
    pub high: Var,
    pub recon: Var,
}

impl LossTerms {
    pub fn values<T: Float>(&self, g: &Graph<T>) -> LossValues {
        let v = |x: Var| g.value(x).item().as_f64();
        LossValues {
            total: v(self.total),
            low: v(self.low),
            high: v(self.high),
            recon: v(self.recon),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub low: f64,
    pub high: f64,
    pub recon: f64,
}

/// `lambda1 * high + lambda2 * low + l1(sharp, gt)`.
pub fn loss_total<T: Float>(
    g: &mut Graph<T>,
    sharp: Var,
    gt: Var,
    taps: &ScaleTaps,
    w: &LossWeights,
) -> Result<LossTerms> {
    let recon = g.l1_mean(sharp, gt)?;
    let low = loss_low(g, taps)?;
    let high = loss_high(g, taps, w)?;
    let total = combine(g, recon, high, low, w)?;
    Ok(LossTerms {
        total,
        low,
        high,
        recon,
    })
}

pub(crate) fn combine<T: Float>(
    g: &mut Graph<T>,
    recon: Var,
    high: Var,
    low: Var,
    w: &LossWeights,
) -> Result<Var> {
    let h = g.scale(high, w.lambda1);
    let l = g.scale(low, w.lambda2);
    let hl = g.add(h, l)?;
    g.add(recon, hl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn t(g: &mut Graph<f64>, v: &[f64]) -> Var {
        g.constant(Tensor::from_f64(Shape::new(1, 1, 1, v.len()), v).unwrap())
    }

    fn taps(g: &mut Graph<f64>, en: &[&[f64]], out: &[&[f64]]) -> ScaleTaps {
        let en_lf: Vec<Var> = en.iter().map(|v| t(g, v)).collect();
        let out_lf: Vec<Var> = out.iter().map(|v| t(g, v)).collect();
        ScaleTaps {
            en_hf: en_lf.clone(),
            de_hf: en_lf.clone(),
            out_hf: en_lf.clone(),
            en_lf,
            out_lf,
        }
    }

    #[test]
    fn low_hand_values() {
        let mut g = Graph::new();
        let tp = taps(
            &mut g,
            &[&[1.0, 2.0], &[5.0], &[7.0]],
            &[&[0.0, 0.0], &[5.0], &[7.0]],
        );
        let l = loss_low(&mut g, &tp).unwrap();
        assert_eq!(g.value(l).item(), 1.5);

        let same = taps(&mut g, &[&[1.0], &[2.0], &[3.0]], &[&[1.0], &[2.0], &[3.0]]);
        let l = loss_low(&mut g, &same).unwrap();
        assert_eq!(g.value(l).item(), 0.0);

        let mut perm = tp.clone();
        perm.en_lf.rotate_left(1);
        perm.out_lf.rotate_left(1);
        let l = loss_low(&mut g, &perm).unwrap();
        assert_eq!(g.value(l).item(), 1.5);
    }

    #[test]
    fn high_hand_values() {
        let mut g = Graph::new();
        let anchor = t(&mut g, &[1.0]);
        let pos = t(&mut g, &[0.0]);
        let neg = t(&mut g, &[3.0]);
        let tp = ScaleTaps {
            en_lf: vec![neg],
            en_hf: vec![neg],
            de_hf: vec![anchor],
            out_lf: vec![neg],
            out_hf: vec![pos],
        };
        let w = LossWeights {
            eps_contrastive: 0.0,
            ..LossWeights::default()
        };
        let l = loss_high(&mut g, &tp, &w).unwrap();
        assert_eq!(g.value(l).item(), 0.5);

        // anchor == positive == negative: the guard keeps the ratio finite
        let all = ScaleTaps {
            en_hf: vec![anchor],
            out_hf: vec![anchor],
            ..tp.clone()
        };
        let l = loss_high(&mut g, &all, &LossWeights::default()).unwrap();
        assert_eq!(g.value(l).item(), 0.0);

        let missing = ScaleTaps {
            out_hf: vec![],
            ..tp
        };
        assert!(matches!(
            loss_high(&mut g, &missing, &w),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn total_combines_terms() {
        let mut g = Graph::<f64>::new();
        let recon = g.constant(Tensor::scalar(0.1));
        let high = g.constant(Tensor::scalar(2.0));
        let low = g.constant(Tensor::scalar(4.0));
        let tot = combine(&mut g, recon, high, low, &LossWeights::default()).unwrap();
        assert!((g.value(tot).item() - 0.4).abs() < 1e-15);
        let w0 = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            ..LossWeights::default()
        };
        let tot = combine(&mut g, recon, high, low, &w0).unwrap();
        assert_eq!(g.value(tot).item(), 0.1);
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights {
            lambda1: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossWeights {
            eps_contrastive: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
