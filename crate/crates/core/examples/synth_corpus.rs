//! Writes a small procedural blurry/sharp corpus and reads it back.
//!
//! `cargo run --example synth_corpus [out_dir]`

use std::path::PathBuf;

use msfs::data::{ingest_pairs, synth_corpus};
use msfs::metrics::psnr;

fn main() -> msfs::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("msfs-synth"), PathBuf::from);
    let corpus = synth_corpus(6, 64, 11)?;
    corpus.write(&out)?;
    let back = ingest_pairs(&out.join("blurry"), &out.join("sharp"))?;
    assert_eq!(back, corpus);
    for p in &back.pairs {
        println!(
            "{}  blurry psnr {:.2} dB",
            p.name,
            psnr(&p.blurry, &p.sharp, 1.0)?
        );
    }
    println!("wrote {} pairs under {}", back.len(), out.display());
    Ok(())
}
