//! Component ablation: the same training run with parts of the model or the
//! objective switched off.

use std::fmt;
use std::path::Path;

use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::error::Result;
use crate::train::{evaluate, EvalMetrics, Trainer};

/// Which components a run keeps. `clm` is the contrastive term and
/// `consistency` the low-frequency term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub fsm: bool,
    pub csffm: bool,
    pub clm: bool,
    pub consistency: bool,
}

pub const VARIANTS: [Variant; 6] = [
    Variant::new(false, true, true, false),
    Variant::new(false, true, false, true),
    Variant::new(true, false, true, true),
    Variant::new(true, true, false, true),
    Variant::new(true, true, true, false),
    Variant::new(true, true, true, true),
];

impl Variant {
    pub const fn new(fsm: bool, csffm: bool, clm: bool, consistency: bool) -> Self {
        Variant {
            fsm,
            csffm,
            clm,
            consistency,
        }
    }

    pub fn is_full(&self) -> bool {
        self.fsm && self.csffm && self.clm && self.consistency
    }

    /// `base` with the missing components disabled.
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.net.use_fsm &= self.fsm;
        cfg.net.use_csffm &= self.csffm;
        if !self.clm {
            cfg.loss.lambda1 = 0.0;
        }
        if !self.consistency {
            cfg.loss.lambda2 = 0.0;
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_full() {
            return f.write_str("full");
        }
        let mut parts = Vec::new();
        for (on, name) in [
            (self.fsm, "FSM"),
            (self.csffm, "CSFFM"),
            (self.clm, "CLM"),
            (self.consistency, "Consistency"),
        ] {
            if !on {
                parts.push(format!("w/o {name}"));
            }
        }
        if !self.fsm {
            let kept = if self.clm { "CLM" } else { "Consistency" };
            parts.push(format!("w/ {kept}"));
        }
        f.write_str(&parts.join(" "))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub final_loss: f64,
    pub eval: EvalMetrics,
}

pub const ABLATION_HEADER: [&str; 9] = [
    "variant",
    "fsm",
    "csffm",
    "clm",
    "consistency",
    "psnr",
    "ssim",
    "psnr_input",
    "ssim_input",
];

/// Trains every variant from the same seed for `base.epochs` epochs and
/// scores it on `eval`.
pub fn ablate(
    base: &TrainConfig,
    train: &Dataset,
    eval: &Dataset,
    mut progress: impl FnMut(&Variant, &AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(VARIANTS.len());
    for v in &VARIANTS {
        let row = run_variant(base, *v, train, eval)?;
        progress(v, &row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn run_variant(
    base: &TrainConfig,
    variant: Variant,
    train: &Dataset,
    eval: &Dataset,
) -> Result<AblationRow> {
    let mut t = Trainer::new(variant.apply(base))?;
    let log = t.train_until(train, base.epochs, |_, _| Ok(()))?;
    Ok(AblationRow {
        variant,
        final_loss: log.last().map_or(f64::NAN, |m| m.loss_total),
        eval: evaluate(&t.net, &t.params, eval)?,
    })
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ABLATION_HEADER)?;
    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    for r in rows {
        let v = r.variant;
        w.write_record([
            v.to_string(),
            flag(v.fsm),
            flag(v.csffm),
            flag(v.clm),
            flag(v.consistency),
            format!("{:.4}", r.eval.psnr_output),
            format!("{:.6}", r.eval.ssim_output),
            format!("{:.4}", r.eval.psnr_input),
            format!("{:.6}", r.eval.ssim_input),
        ])?;
    }
    w.flush()?;
    Ok(())
}
