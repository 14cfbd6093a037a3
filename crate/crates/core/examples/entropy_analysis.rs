use std::time::Instant;

use msfs::analysis::{entropy_report, AnalysisConfig};
use msfs::data::synth_corpus;
use msfs::image_io::gray_plane;

fn main() -> msfs::Result<()> {
    let start = Instant::now();
    let corpus = synth_corpus(100, 64, 2024)?;
    let sharp: Vec<_> = corpus.pairs.iter().map(|p| gray_plane(&p.sharp)).collect();
    let blurry: Vec<_> = corpus.pairs.iter().map(|p| gray_plane(&p.blurry)).collect();
    let report = entropy_report(&sharp, &blurry, &AnalysisConfig::default())?;
    println!("band scale  js_bits  H(sharp)  H(blurry)");
    for r in &report.rows {
        println!(
            "{:<4} {:<5} {:>8.4} {:>9.3} {:>10.3}",
            r.band.to_string(),
            r.scale.to_string(),
            r.js_bits,
            r.mean_a(),
            r.mean_b()
        );
    }
    println!("HF ordering holds: {}", report.hf_ordering_holds());
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
