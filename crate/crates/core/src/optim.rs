//! AdamW with decoupled weight decay, and the step-halving schedule.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.9,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamStore<f32>,
    pub v: ParamStore<f32>,
}

impl AdamState {
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros = |p: &ParamStore<f32>| {
            let mut s = ParamStore::new();
            for (k, t) in p.iter() {
                s.insert(k.clone(), Tensor::zeros(t.shape()));
            }
            s
        };
        AdamState {
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }
}

/// One update of every parameter that has a gradient. Moment arithmetic is
/// done in f64 and stored in f32.
pub fn adamw_step(
    params: &mut ParamStore<f32>,
    grads: &BTreeMap<String, Tensor<f32>>,
    state: &mut AdamState,
    cfg: &AdamWConfig,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        if !g.all_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient for `{name}`"
            )));
        }
        let p = params
            .get(name)
            .ok_or_else(|| Error::contract(format!("gradient for unknown parameter `{name}`")))?;
        if p.shape() != g.shape() {
            return Err(Error::dim(format!(
                "gradient {} for `{name}` of shape {}",
                g.shape(),
                p.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state
            .m
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("no moment for `{name}`")))?;
        let v = state
            .v
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("no moment for `{name}`")))?;
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            let gi = gi as f64;
            let mn = b1 * *mi as f64 + (1.0 - b1) * gi;
            let vn = b2 * *vi as f64 + (1.0 - b2) * gi * gi;
            *mi = mn as f32;
            *vi = vn as f32;
            let update = (mn / c1) / ((vn / c2).sqrt() + cfg.eps);
            let x = *pi as f64;
            *pi = (x - lr * update - lr * cfg.weight_decay * x) as f32;
        }
    }
    Ok(())
}

/// `lr0 * 0.5^floor(epoch / halve_every)`.
pub fn lr_at(epoch: u64, lr0: f64, halve_every: u64) -> f64 {
    let halvings = epoch / halve_every.max(1);
    lr0 * 0.5f64.powi(halvings.min(i32::MAX as u64) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn one(v: f32) -> Tensor<f32> {
        Tensor::full(Shape::new(1, 1, 1, 1), v)
    }

    fn setup(p0: f32) -> (ParamStore<f32>, AdamState) {
        let mut p = ParamStore::new();
        p.insert("x", one(p0));
        let s = AdamState::new(&p);
        (p, s)
    }

    #[test]
    fn zero_grad_leaves_params() {
        let (mut p, mut s) = setup(0.7);
        let g = BTreeMap::from([("x".to_string(), one(0.0))]);
        adamw_step(&mut p, &g, &mut s, &AdamWConfig::default(), 1e-3).unwrap();
        assert_eq!(p.get("x").unwrap().item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut p, mut s) = setup(0.0);
        let g = BTreeMap::from([("x".to_string(), one(1.0))]);
        adamw_step(&mut p, &g, &mut s, &AdamWConfig::default(), 1e-4).unwrap();
        let want = -1e-4 / (1.0 + 1e-8);
        assert!((p.get("x").unwrap().item() as f64 - want).abs() < 1e-11);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..AdamWConfig::default()
        };
        let (mut p, mut s) = setup(2.0);
        let g = BTreeMap::from([("x".to_string(), one(0.0))]);
        adamw_step(&mut p, &g, &mut s, &cfg, 0.5).unwrap();
        assert!((p.get("x").unwrap().item() - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-7);
    }

    #[test]
    fn nan_gradient_aborts_untouched() {
        let (mut p, mut s) = setup(1.0);
        let g = BTreeMap::from([("x".to_string(), one(f32::NAN))]);
        let err = adamw_step(&mut p, &g, &mut s, &AdamWConfig::default(), 1e-3).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert_eq!(p.get("x").unwrap().item(), 1.0);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn schedule() {
        assert_eq!(lr_at(0, 1e-4, 500), 1e-4);
        assert_eq!(lr_at(499, 1e-4, 500), 1e-4);
        assert_eq!(lr_at(500, 1e-4, 500), 5e-5);
        assert_eq!(lr_at(1000, 1e-4, 500), 2.5e-5);
    }
}
