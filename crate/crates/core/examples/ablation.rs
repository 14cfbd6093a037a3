//! Trains every component ablation briefly on a synthetic corpus and prints
//! the scores.
//!
//! `cargo run --release --example ablation [epochs]`

use msfs::ablation::ablate;
use msfs::config::TrainConfig;
use msfs::data::synth_corpus;

fn main() -> msfs::Result<()> {
    let mut cfg = TrainConfig::toy();
    cfg.epochs = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20);
    let data = synth_corpus(4, 32, 5)?;
    println!("{:<36} {:>8} {:>8}", "variant", "psnr", "ssim");
    ablate(&cfg, &data, &data, |v, r| {
        println!(
            "{:<36} {:>8.3} {:>8.4}",
            v.to_string(),
            r.eval.psnr_output,
            r.eval.ssim_output
        );
    })?;
    Ok(())
}
