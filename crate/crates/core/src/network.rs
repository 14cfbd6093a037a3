//! The multi-scale frequency-separation deblurring network.
//!
//! Scale index `k` is 0 for full resolution, 1 for half, 2 for quarter.
//!
//! ```text
//! blurry -> conv3x3 -> FSM -> down -> FSM -> down -> FSM -> RCAB xN
//!                       e0            e1            e2        |
//!                                                           FSM d2
//!            fuse(e2, d2) -> up -> FSM d1 -> fuse(e1, d1) -> up -> FSM d0
//!                                                                  |
//!                                          sharp = blurry + conv3x3(d0)
//! ```

use serde::{Deserialize, Serialize};

use crate::blocks::{Downsample, Rcab, Upsample};
use crate::error::{Error, Result};
use crate::freq::Fsm;
use crate::nn::Conv;
use crate::params::{Bindings, Init, ParamSpec, ParamStore};
use crate::tensor::{Float, Graph, Shape, Var};

pub const SCALES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub image_channels: usize,
    pub base_channels: usize,
    pub scales: usize,
    pub fsm_per_scale: usize,
    pub rcab_count: usize,
    pub attention_ratio: usize,
    pub leaky_slope: f64,
    /// Two-band FSMs; off gives plain residual blocks whose single feature
    /// stands in for both taps.
    pub use_fsm: bool,
    /// Gated encoder/decoder fusion before each upsample; off feeds the
    /// decoder feature alone.
    pub use_csffm: bool,
    /// Stop gradients through the encoder HF taps used as negatives.
    pub detach_negatives: bool,
    /// Start the output conv at zero so the untrained network is the
    /// identity.
    pub zero_head: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            image_channels: 3,
            base_channels: 16,
            scales: SCALES,
            fsm_per_scale: 1,
            rcab_count: 4,
            attention_ratio: 4,
            leaky_slope: 0.2,
            use_fsm: true,
            use_csffm: true,
            detach_negatives: false,
            zero_head: false,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scales != SCALES {
            return bad(format!("scales must be {SCALES}, got {}", self.scales));
        }
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(4) {
            return bad(format!(
                "base_channels must be a positive multiple of 4, got {}",
                self.base_channels
            ));
        }
        if self.image_channels == 0 {
            return bad("image_channels must be positive".into());
        }
        if self.fsm_per_scale == 0 {
            return bad("fsm_per_scale must be at least 1".into());
        }
        if self.attention_ratio == 0
            || !(2 * self.base_channels).is_multiple_of(self.attention_ratio)
        {
            return bad(format!(
                "attention_ratio {} must divide {}",
                self.attention_ratio,
                2 * self.base_channels
            ));
        }
        if !self.leaky_slope.is_finite() {
            return bad("leaky_slope must be finite".into());
        }
        Ok(())
    }

    /// Spatial extents must survive two halvings and still be even for the
    /// quarter-scale FSM.
    pub const SIZE_MULTIPLE: usize = 8;

    pub fn channels_at(&self, k: usize) -> usize {
        self.base_channels << k
    }
}

/// Per-scale features feeding the consistency and contrastive losses.
/// Index `k` follows the module convention (0 = full resolution).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScaleTaps {
    pub en_lf: Vec<Var>,
    pub en_hf: Vec<Var>,
    pub de_hf: Vec<Var>,
    pub out_lf: Vec<Var>,
    pub out_hf: Vec<Var>,
}

impl ScaleTaps {
    pub fn scales(&self) -> usize {
        self.en_lf.len()
    }

    pub fn has_output(&self) -> bool {
        !self.out_lf.is_empty()
    }

    /// Same count everywhere; HF taps share a shape per scale, as do LF taps.
    pub fn check<T: Float>(&self, g: &Graph<T>) -> Result<()> {
        let n = self.en_lf.len();
        if n == 0 || self.en_hf.len() != n || self.de_hf.len() != n {
            return Err(Error::contract("encoder/decoder taps missing or uneven"));
        }
        if self.has_output() && (self.out_lf.len() != n || self.out_hf.len() != n) {
            return Err(Error::contract("output taps do not cover every scale"));
        }
        for k in 0..n {
            let hf = g.shape(self.en_hf[k]);
            let lf = g.shape(self.en_lf[k]);
            let mut hfs = vec![self.de_hf[k]];
            let mut lfs = vec![];
            if self.has_output() {
                hfs.push(self.out_hf[k]);
                lfs.push(self.out_lf[k]);
            }
            if hfs.iter().any(|&v| g.shape(v) != hf) || lfs.iter().any(|&v| g.shape(v) != lf) {
                return Err(Error::contract(format!("tap shapes disagree at scale {k}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub sharp: Var,
    /// Encoder outputs per scale, after the FSMs.
    pub encoder: [Var; SCALES],
}

/// Encoder half of the network; shared by the blurry and the output pass.
#[derive(Clone, Debug, PartialEq)]
struct Encoder {
    shallow: Conv,
    fsms: Vec<Vec<Fsm>>,
    downs: Vec<Downsample>,
}

struct EncoderOut {
    features: [Var; SCALES],
    lf: Vec<Var>,
    hf: Vec<Var>,
}

impl Encoder {
    fn forward<T: Float>(&self, g: &mut Graph<T>, p: &Bindings, x: Var) -> Result<EncoderOut> {
        let mut h = self.shallow.forward(g, p, x)?;
        let mut features = [h; SCALES];
        let (mut lf, mut hf) = (Vec::new(), Vec::new());
        for k in 0..SCALES {
            if k > 0 {
                h = self.downs[k - 1].forward(g, p, h)?;
            }
            let mut last = None;
            for fsm in &self.fsms[k] {
                let o = fsm.forward(g, p, h)?;
                h = o.out;
                last = Some(o);
            }
            let last = last.expect("at least one FSM per scale");
            lf.push(last.lf());
            hf.push(last.hf());
            features[k] = h;
        }
        Ok(EncoderOut { features, lf, hf })
    }
}

/// Network structure. Weights live in a [`ParamStore`] keyed by the names
/// in [`Msfs::specs`].
#[derive(Clone, Debug, PartialEq)]
pub struct Msfs {
    pub cfg: NetworkConfig,
    encoder: Encoder,
    bottleneck: Vec<Rcab>,
    dec_fsms: Vec<Vec<Fsm>>,
    ups: Vec<Upsample>,
    head: Conv,
}

pub const THETA: &str = "csffm.theta";
pub const GAMMA: &str = "csffm.gamma";

impl Msfs {
    pub fn new(cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let (img, slope, ratio) = (cfg.image_channels, cfg.leaky_slope, cfg.attention_ratio);
        let fsm_stack = |prefix: &str, k: usize| -> Result<Vec<Fsm>> {
            (0..cfg.fsm_per_scale)
                .map(|i| {
                    Fsm::new(
                        format!("{prefix}{k}.fsm{i}"),
                        cfg.channels_at(k),
                        cfg.use_fsm,
                    )
                })
                .collect()
        };
        let encoder = Encoder {
            shallow: Conv::new("enc.shallow", img, cfg.base_channels, 3, 1),
            fsms: (0..SCALES)
                .map(|k| fsm_stack("enc", k))
                .collect::<Result<_>>()?,
            downs: (1..SCALES)
                .map(|k| {
                    Downsample::new(
                        format!("enc.down{k}"),
                        cfg.channels_at(k - 1),
                        cfg.channels_at(k),
                        slope,
                    )
                })
                .collect(),
        };
        let deep = cfg.channels_at(SCALES - 1);
        let bottleneck = (0..cfg.rcab_count)
            .map(|i| Rcab::new(format!("mid.rcab{i}"), deep, ratio, slope))
            .collect::<Result<_>>()?;
        let dec_fsms = (0..SCALES)
            .map(|k| fsm_stack("dec", k))
            .collect::<Result<_>>()?;
        // ups[k] lifts scale k+1 to scale k
        let ups = (0..SCALES - 1)
            .map(|k| {
                let c = cfg.channels_at(k + 1);
                let c_in = if cfg.use_csffm { 2 * c } else { c };
                Upsample::new(
                    format!("dec.up{}", k + 1),
                    c_in,
                    c,
                    cfg.channels_at(k),
                    ratio,
                    slope,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Msfs {
            head: Conv::new("dec.head", cfg.base_channels, img, 3, 1),
            cfg,
            encoder,
            bottleneck,
            dec_fsms,
            ups,
        })
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut v = Vec::new();
        self.encoder.shallow.specs(&mut v);
        for k in 0..SCALES {
            self.encoder.fsms[k].iter().for_each(|f| f.specs(&mut v));
            if k > 0 {
                self.encoder.downs[k - 1].specs(&mut v);
            }
        }
        self.bottleneck.iter().for_each(|r| r.specs(&mut v));
        for k in (0..SCALES).rev() {
            self.dec_fsms[k].iter().for_each(|f| f.specs(&mut v));
            if k > 0 {
                self.ups[k - 1].specs(&mut v);
            }
        }
        let start = v.len();
        self.head.specs(&mut v);
        if self.cfg.zero_head {
            v[start..].iter_mut().for_each(|s| s.init = Init::Zeros);
        }
        if self.cfg.use_csffm {
            for name in [THETA, GAMMA] {
                v.push(ParamSpec::new(name, Shape::new(1, 1, 1, 1), Init::Zeros));
            }
        }
        v
    }

    pub fn init<T: Float>(&self, seed: u64) -> ParamStore<T> {
        ParamStore::init(&self.specs(), seed)
    }

    fn check_input(&self, s: Shape) -> Result<()> {
        let m = NetworkConfig::SIZE_MULTIPLE;
        if s.c != self.cfg.image_channels {
            return Err(Error::dim(format!(
                "expected {} image channels, got {s}",
                self.cfg.image_channels
            )));
        }
        if !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) || s.h == 0 || s.w == 0 {
            return Err(Error::dim(format!(
                "image extents {s} must be positive multiples of {m}"
            )));
        }
        Ok(())
    }

    /// Gated mix `sigmoid(t) * en + (1 - sigmoid(t)) * de` for the scalar
    /// parameter named `gate`.
    pub fn mix<T: Float>(
        g: &mut Graph<T>,
        p: &Bindings,
        gate: &str,
        en: Var,
        de: Var,
    ) -> Result<Var> {
        if g.shape(en) != g.shape(de) {
            return Err(Error::dim(format!(
                "cannot mix encoder {} with decoder {}",
                g.shape(en),
                g.shape(de)
            )));
        }
        let t = p.get(gate)?;
        let s = g.sigmoid(t);
        let rest = g.affine(s, -1.0, 1.0);
        let a = g.mul_scalar(en, s)?;
        let b = g.mul_scalar(de, rest)?;
        g.add(a, b)
    }

    /// Cross-scale fusion from scale `k + 1` to scale `k`: concatenates the
    /// gated mix with the encoder feature and upsamples.
    pub fn csffm<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &Bindings,
        k: usize,
        en: Var,
        de: Var,
    ) -> Result<Var> {
        let fused = if self.cfg.use_csffm {
            let gate = if k + 1 == SCALES - 1 { THETA } else { GAMMA };
            let mixed = Self::mix(g, p, gate, en, de)?;
            g.concat_channels(mixed, en)?
        } else {
            de
        };
        self.ups[k].forward(g, p, fused)
    }

    /// Deblurs `blurry` and records encoder and decoder taps.
    pub fn forward<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &Bindings,
        blurry: Var,
    ) -> Result<(Forward, ScaleTaps)> {
        self.check_input(g.shape(blurry))?;
        let enc = self.encoder.forward(g, p, blurry)?;
        let mut h = enc.features[SCALES - 1];
        for r in &self.bottleneck {
            h = r.forward(g, p, h)?;
        }
        let mut de_hf = vec![h; SCALES];
        for k in (0..SCALES).rev() {
            if k + 1 < SCALES {
                h = self.csffm(g, p, k, enc.features[k + 1], h)?;
            }
            let mut last = None;
            for fsm in &self.dec_fsms[k] {
                let o = fsm.forward(g, p, h)?;
                h = o.out;
                last = Some(o);
            }
            de_hf[k] = last.expect("at least one FSM per scale").hf();
        }
        let residual = self.head.forward(g, p, h)?;
        let sharp = g.add(blurry, residual)?;
        let en_hf = if self.cfg.detach_negatives {
            enc.hf.iter().map(|&v| g.detach(v)).collect()
        } else {
            enc.hf
        };
        let taps = ScaleTaps {
            en_lf: enc.lf,
            en_hf,
            de_hf,
            out_lf: Vec::new(),
            out_hf: Vec::new(),
        };
        Ok((
            Forward {
                sharp,
                encoder: enc.features,
            },
            taps,
        ))
    }

    /// Runs the shared encoder over the network output and fills the
    /// `out_*` taps.
    pub fn encode_output<T: Float>(
        &self,
        g: &mut Graph<T>,
        p: &Bindings,
        sharp: Var,
        mut taps: ScaleTaps,
    ) -> Result<ScaleTaps> {
        if taps.en_lf.len() != SCALES {
            return Err(Error::contract(
                "encode_output needs the taps of a forward pass",
            ));
        }
        self.check_input(g.shape(sharp))
            .map_err(|e| Error::contract(e.to_string()))?;
        let enc = self.encoder.forward(g, p, sharp)?;
        taps.out_lf = enc.lf;
        taps.out_hf = enc.hf;
        taps.check(g)?;
        Ok(taps)
    }

    /// Tape-free deblurring of a batch.
    pub fn infer<T: Float>(
        &self,
        params: &ParamStore<T>,
        blurry: &crate::Tensor<T>,
    ) -> Result<crate::Tensor<T>> {
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let x = g.constant(blurry.clone());
        let (f, _) = self.forward(&mut g, &p, x)?;
        Ok(g.value(f.sharp).clone())
    }
}
