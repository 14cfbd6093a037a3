//! Trains briefly, then deblurs an image of arbitrary size and saves it.
//!
//! `cargo run --release --example deblur_image [input.png] [output.png]`

use std::path::PathBuf;

use msfs::config::TrainConfig;
use msfs::data::synth_corpus;
use msfs::image_io::{load_rgb, save_rgb};
use msfs::metrics::psnr;
use msfs::train::{deblur, Trainer};

fn main() -> msfs::Result<()> {
    let data = synth_corpus(4, 32, 3)?;
    let mut t = Trainer::new(TrainConfig::toy())?;
    t.train_until(&data, 30, |_, _| Ok(()))?;

    let args: Vec<String> = std::env::args().skip(1).collect();
    let (input, output) = match args.as_slice() {
        [i, o, ..] => (load_rgb::<f32>(&PathBuf::from(i))?, PathBuf::from(o)),
        _ => (
            data.pairs[0].blurry.clone(),
            std::env::temp_dir().join("msfs-deblurred.png"),
        ),
    };
    let out = deblur(&t.net, &t.params, &input)?.map(|v| v.clamp(0.0, 1.0));
    println!(
        "input {}  psnr of output against input {:.2} dB",
        input.shape(),
        psnr(&out, &input, 1.0)?
    );
    save_rgb(&output, &out)?;
    println!("saved {}", output.display());
    Ok(())
}
