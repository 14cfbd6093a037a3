//! Overfits the toy network to eight synthetic 64×64 pairs and reports the
//! PSNR gain over the blurry input every 25 epochs.
//!
//! `cargo run --release --example train_toy [lr] [epochs]`

use std::time::Instant;

use msfs::config::TrainConfig;
use msfs::data::synth_corpus;
use msfs::train::{evaluate, Trainer};

fn main() -> msfs::Result<()> {
    let arg = |i: usize| std::env::args().nth(i).and_then(|s| s.parse::<f64>().ok());
    let data = synth_corpus(8, 64, 7)?;
    let mut cfg = TrainConfig::toy();
    cfg.lr0 = arg(1).unwrap_or(cfg.lr0);
    cfg.epochs = arg(2).map_or(cfg.epochs, |e| e as u64);
    let mut t = Trainer::new(cfg.clone())?;
    let start = Instant::now();
    t.train_until(&data, cfg.epochs, |m, t| {
        if m.epoch % 25 == 24 {
            let e = evaluate(&t.net, &t.params, &data)?;
            println!(
                "epoch {:>4}  step {:>5}  loss {:.4}  psnr {:.2} -> {:.2} ({:+.2} dB)  {:.0?}",
                m.epoch,
                t.adam.step,
                m.loss_total,
                e.psnr_input,
                e.psnr_output,
                e.psnr_output - e.psnr_input,
                start.elapsed()
            );
        }
        Ok(())
    })?;
    Ok(())
}
