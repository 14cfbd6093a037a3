//! Training loop, evaluation and full-image inference.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{batches, crop_pair, Dataset};
use crate::error::{Error, Result};
use crate::losses::{loss_total, LossValues};
use crate::metrics::{psnr, ssim};
use crate::network::{Msfs, NetworkConfig};
use crate::optim::{adamw_step, lr_at, AdamState};
use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_low: f64,
    pub loss_high: f64,
    pub loss_recon: f64,
    /// Mean PSNR of the training outputs against their targets.
    pub psnr: f64,
}

pub const METRICS_HEADER: [&str; 7] = [
    "epoch",
    "lr",
    "loss_total",
    "loss_low",
    "loss_high",
    "loss_recon",
    "psnr",
];

pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for m in rows {
        w.write_record([
            m.epoch.to_string(),
            format!("{:e}", m.lr),
            format!("{:.8}", m.loss_total),
            format!("{:.8}", m.loss_low),
            format!("{:.8}", m.loss_high),
            format!("{:.8}", m.loss_recon),
            format!("{:.4}", m.psnr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Model, weights and optimizer state between steps.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: Msfs,
    pub cfg: TrainConfig,
    pub params: ParamStore<f32>,
    pub adam: AdamState,
    /// Next epoch to run.
    pub epoch: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let net = Msfs::new(cfg.net.clone())?;
        let params = net.init(cfg.seed);
        let adam = AdamState::new(&params);
        Ok(Trainer {
            net,
            cfg,
            params,
            adam,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let net = Msfs::new(ckpt.config.net.clone())?;
        let specs = net.specs();
        for store in [&ckpt.params, &ckpt.adam.m, &ckpt.adam.v] {
            store
                .validate(&specs)
                .map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(Trainer {
            net,
            cfg: ckpt.config,
            params: ckpt.params,
            adam: ckpt.adam,
            epoch: ckpt.epoch,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            config: self.cfg.clone(),
        }
    }

    /// One optimizer step on a batch. Returns the loss terms and the output
    /// PSNR. State is untouched when the loss or a gradient is not finite.
    pub fn step(
        &mut self,
        blurry: &Tensor<f32>,
        sharp: &Tensor<f32>,
        lr: f64,
    ) -> Result<(LossValues, f64)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, true);
        let x = g.constant(blurry.clone());
        let y = g.constant(sharp.clone());
        let (f, taps) = self.net.forward(&mut g, &p, x)?;
        let taps = self.net.encode_output(&mut g, &p, f.sharp, taps)?;
        let terms = loss_total(&mut g, f.sharp, y, &taps, &self.cfg.loss)?;
        let values = terms.values(&g);
        if !values.total.is_finite() {
            return Err(Error::Numerical(format!(
                "loss is {} at epoch {} (step {})",
                values.total, self.epoch, self.adam.step
            )));
        }
        let out_psnr = psnr(g.value(f.sharp), sharp, 1.0)?;
        g.backward(terms.total)?;
        let grads = p.grads(&g);
        adamw_step(
            &mut self.params,
            &grads,
            &mut self.adam,
            &self.cfg.adamw(),
            lr,
        )?;
        Ok((values, out_psnr))
    }

    fn crop_size(&self, data: &Dataset) -> usize {
        let m = NetworkConfig::SIZE_MULTIPLE;
        let smallest = data
            .pairs
            .iter()
            .map(|p| p.sharp.shape().h.min(p.sharp.shape().w))
            .min()
            .unwrap_or(0);
        (self.cfg.crop.min(smallest) / m) * m
    }

    /// Runs epoch `self.epoch` and advances it. Shuffling, crops and flips
    /// come from a stream keyed by `(seed, epoch)`, so an epoch replays
    /// identically after a resume.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<EpochMetrics> {
        if data.is_empty() {
            return Err(Error::contract("empty dataset"));
        }
        let crop = self.crop_size(data);
        if crop == 0 {
            return Err(Error::dim(format!(
                "images must be at least {} pixels on each side",
                NetworkConfig::SIZE_MULTIPLE
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.epoch);
        let lr = lr_at(self.epoch, self.cfg.lr0, self.cfg.lr_halve_every);
        let mut sum = LossValues::default();
        let mut psnr_sum = 0.0;
        let order = batches(data.len(), self.cfg.batch, &mut rng);
        for idx in &order {
            let (bs, ss): (Vec<_>, Vec<_>) = idx
                .iter()
                .map(|&i| crop_pair(&data.pairs[i], crop, self.cfg.flip, &mut rng))
                .unzip();
            let (v, p) = self.step(&Tensor::stack(&bs)?, &Tensor::stack(&ss)?, lr)?;
            sum.total += v.total;
            sum.low += v.low;
            sum.high += v.high;
            sum.recon += v.recon;
            psnr_sum += p;
        }
        let n = order.len() as f64;
        let m = EpochMetrics {
            epoch: self.epoch,
            lr,
            loss_total: sum.total / n,
            loss_low: sum.low / n,
            loss_high: sum.high / n,
            loss_recon: sum.recon / n,
            psnr: psnr_sum / n,
        };
        self.epoch += 1;
        Ok(m)
    }

    /// Runs epochs until `self.epoch == until`, calling `on_epoch` after each.
    pub fn train_until(
        &mut self,
        data: &Dataset,
        until: u64,
        mut on_epoch: impl FnMut(&EpochMetrics, &Trainer) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        let mut log = Vec::new();
        while self.epoch < until {
            let m = self.run_epoch(data)?;
            on_epoch(&m, self)?;
            log.push(m);
        }
        Ok(log)
    }
}

/// Deblurs one `(1, c, h, w)` image of any size: edges are replicated up to
/// the next multiple of 8 and the result is cropped back.
pub fn deblur(net: &Msfs, params: &ParamStore<f32>, img: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = img.shape();
    let m = NetworkConfig::SIZE_MULTIPLE;
    let (h, w) = (s.h.div_ceil(m) * m, s.w.div_ceil(m) * m);
    if (h, w) == (s.h, s.w) {
        return net.infer(params, img);
    }
    let mut padded = Vec::with_capacity(s.n * s.c * h * w);
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..h {
                for x in 0..w {
                    padded.push(img.at(n, c, y.min(s.h - 1), x.min(s.w - 1)));
                }
            }
        }
    }
    let out = net.infer(params, &Tensor::new(s.with_hw(h, w), padded)?)?;
    let mut data = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    data.push(out.at(n, c, y, x));
                }
            }
        }
    }
    Tensor::new(s, data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub psnr_input: f64,
    pub psnr_output: f64,
    pub ssim_input: f64,
    pub ssim_output: f64,
}

/// Mean metrics over full images, inputs and outputs clamped to `[0, 1]`.
pub fn evaluate(net: &Msfs, params: &ParamStore<f32>, data: &Dataset) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::contract("empty dataset"));
    }
    let mut acc = [0.0; 4];
    for p in &data.pairs {
        let out = deblur(net, params, &p.blurry)?.map(|v| v.clamp(0.0, 1.0));
        acc[0] += psnr(&p.blurry, &p.sharp, 1.0)?;
        acc[1] += psnr(&out, &p.sharp, 1.0)?;
        acc[2] += ssim(&p.blurry, &p.sharp)?;
        acc[3] += ssim(&out, &p.sharp)?;
    }
    let n = data.len() as f64;
    Ok(EvalMetrics {
        psnr_input: acc[0] / n,
        psnr_output: acc[1] / n,
        ssim_input: acc[2] / n,
        ssim_output: acc[3] / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_corpus;
    use crate::tensor::Shape;

    fn tiny() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch: 2,
            crop: 16,
            lr0: 1e-3,
            seed: 5,
            net: NetworkConfig {
                base_channels: 4,
                rcab_count: 1,
                ..NetworkConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn epochs_are_deterministic_and_resumable() {
        let data = synth_corpus(3, 24, 1).unwrap();
        let mut a = Trainer::new(tiny()).unwrap();
        let la = a.train_until(&data, 3, |_, _| Ok(())).unwrap();

        let mut b = Trainer::new(tiny()).unwrap();
        b.train_until(&data, 1, |_, _| Ok(())).unwrap();
        let bytes = b.checkpoint().to_bytes();
        let mut c = Trainer::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        let lc = c.train_until(&data, 3, |_, _| Ok(())).unwrap();

        assert_eq!(la[1..], lc[..]);
        assert_eq!(a.params, c.params);
        assert_eq!(a.adam, c.adam);
    }

    #[test]
    fn deblur_pads_odd_sizes() {
        let t = Trainer::new(tiny()).unwrap();
        let img = Tensor::<f32>::full(Shape::new(1, 3, 13, 10), 0.5);
        let out = deblur(&t.net, &t.params, &img).unwrap();
        assert_eq!(out.shape(), img.shape());
    }

    #[test]
    fn metrics_csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let row = EpochMetrics {
            epoch: 0,
            lr: 1e-4,
            loss_total: 1.0,
            loss_low: 0.5,
            loss_high: 0.25,
            loss_recon: 0.125,
            psnr: 20.0,
        };
        write_metrics_csv(&p, &[row]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("epoch,lr,loss_total,loss_low,loss_high,loss_recon,psnr\n0,"));
    }
}
