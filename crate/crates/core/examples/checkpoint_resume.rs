//! Stops training half way, saves a checkpoint, resumes from it and checks
//! the result against an uninterrupted run.

use msfs::checkpoint::Checkpoint;
use msfs::config::TrainConfig;
use msfs::data::synth_corpus;
use msfs::train::Trainer;

fn main() -> msfs::Result<()> {
    let data = synth_corpus(4, 32, 2)?;
    let mut cfg = TrainConfig::toy();
    cfg.epochs = 6;

    let mut straight = Trainer::new(cfg.clone())?;
    straight.train_until(&data, cfg.epochs, |_, _| Ok(()))?;

    let path = std::env::temp_dir().join("msfs-resume.ckpt");
    let mut first = Trainer::new(cfg.clone())?;
    first.train_until(&data, cfg.epochs / 2, |_, _| Ok(()))?;
    first.checkpoint().save(&path)?;

    let mut resumed = Trainer::from_checkpoint(Checkpoint::load(&path)?)?;
    resumed.train_until(&data, cfg.epochs, |_, _| Ok(()))?;

    println!("checkpoint {} bytes", std::fs::metadata(&path)?.len());
    println!("weights identical: {}", resumed.params == straight.params);
    println!(
        "optimizer state identical: {}",
        resumed.adam == straight.adam
    );
    Ok(())
}
