use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use msfs::ablation::{ablate, write_ablation_csv};
use msfs::analysis::{entropy_report, AnalysisConfig};
use msfs::checkpoint::Checkpoint;
use msfs::config::TrainConfig;
use msfs::data::{ingest_pairs, paired_files, synth_corpus};
use msfs::gradsuite::{run_suite, SuiteReport};
use msfs::image_io::{load_gray, load_rgb, save_rgb};
use msfs::train::{deblur, write_metrics_csv, Trainer};
use msfs::{Error, Result};

#[derive(Parser)]
#[command(
    name = "msfs",
    version,
    about = "Multi-scale frequency-separation deblurring"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on paired blurry/sharp images.
    Train {
        #[arg(long)]
        blurry: PathBuf,
        #[arg(long)]
        sharp: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of a fresh init.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Per-epoch metrics; defaults to OUT with a .csv extension.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Deblur one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// LF/HF entropy divergence between two name-matched corpora.
    Analyze {
        #[arg(long)]
        corpus_a: PathBuf,
        #[arg(long)]
        corpus_b: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a procedural blurry/sharp corpus to OUT/blurry and OUT/sharp.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train each component ablation and score it on the training pairs.
    Ablate {
        #[arg(long)]
        blurry: PathBuf,
        #[arg(long)]
        sharp: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every primitive, block and the full loss.
    Gradcheck {
        #[arg(long)]
        f64: bool,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn set_threads(n: usize) {
    if n > 0 {
        // Fails only if a pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn train(
    blurry: &Path,
    sharp: &Path,
    config: &Path,
    out: &Path,
    resume: Option<&Path>,
    metrics: Option<&Path>,
) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    set_threads(cfg.threads);
    let data = ingest_pairs(blurry, sharp)?;
    let mut trainer = match resume {
        Some(p) => {
            let mut t = Trainer::from_checkpoint(Checkpoint::load(p)?)?;
            t.cfg.epochs = cfg.epochs;
            t
        }
        None => Trainer::new(cfg)?,
    };
    let metrics = metrics.map_or_else(|| out.with_extension("csv"), Path::to_path_buf);
    eprintln!(
        "training on {} pairs, {} parameters, epochs {}..{}",
        data.len(),
        trainer.params.num_scalars(),
        trainer.epoch,
        trainer.cfg.epochs
    );
    let mut last_good = trainer.checkpoint();
    let mut log = Vec::new();
    let every = trainer.cfg.checkpoint_every;
    let until = trainer.cfg.epochs;
    let result = trainer.train_until(&data, until, |m, t| {
        log.push(*m);
        last_good = t.checkpoint();
        eprintln!(
            "epoch {:>5}  lr {:.2e}  loss {:.5}  low {:.5}  high {:.4}  recon {:.5}  psnr {:.2}",
            m.epoch, m.lr, m.loss_total, m.loss_low, m.loss_high, m.loss_recon, m.psnr
        );
        if every > 0 && t.epoch % every == 0 {
            write_metrics_csv(&metrics, &log)?;
            last_good.save(out)?;
        }
        Ok(())
    });
    write_metrics_csv(&metrics, &log)?;
    if let Err(e) = result {
        if matches!(e, Error::Numerical(_)) {
            let dump = with_suffix(out, ".last-good");
            last_good.save(&dump)?;
            eprintln!("last good state written to {}", dump.display());
        }
        return Err(e);
    }
    trainer.checkpoint().save(out)
}

fn infer(ckpt: &Path, input: &Path, output: &Path) -> Result<()> {
    let t = Trainer::from_checkpoint(Checkpoint::load(ckpt)?)?;
    let img = load_rgb::<f32>(input)?;
    let out = deblur(&t.net, &t.params, &img)?;
    if out.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite output for {}",
            input.display()
        )));
    }
    save_rgb(output, &out.map(|v| v.clamp(0.0, 1.0)))
}

fn analyze(a: &Path, b: &Path, sigma: f64, out: &Path) -> Result<()> {
    let files = paired_files(a, b)?;
    let mut pa = Vec::with_capacity(files.len());
    let mut pb = Vec::with_capacity(files.len());
    for (fa, fb) in &files {
        pa.push(load_gray(fa)?);
        pb.push(load_gray(fb)?);
    }
    let cfg = AnalysisConfig {
        sigma,
        ..AnalysisConfig::default()
    };
    let report = entropy_report(&pa, &pb, &cfg)?;
    report.write_csv(out)?;
    report.write_histograms(&out.with_extension("hist.csv"))?;
    for r in &report.rows {
        println!(
            "{:<2} {:<3} js {:.4} bits",
            r.band.to_string(),
            r.scale.to_string(),
            r.js_bits
        );
    }
    println!("HF ordering holds: {}", report.hf_ordering_holds());
    Ok(())
}

fn run_ablation(blurry: &Path, sharp: &Path, config: &Path, out: &Path) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    set_threads(cfg.threads);
    let data = ingest_pairs(blurry, sharp)?;
    let rows = ablate(&cfg, &data, &data, |v, r| {
        eprintln!(
            "{:<36} psnr {:.3} (input {:.3})  ssim {:.4}",
            v.to_string(),
            r.eval.psnr_output,
            r.eval.psnr_input,
            r.eval.ssim_output
        );
    })?;
    write_ablation_csv(out, &rows)
}

fn print_suite(r: &SuiteReport) {
    for c in &r.checks {
        println!(
            "{:<36} {:>5} entries  max rel {:.3e}  {}",
            c.name,
            c.report.checked(),
            c.report.max_rel_error,
            if c.report.passed() { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{}: {} checks, max rel {:.3e}, {:.1?}",
        r.precision,
        r.checks.len(),
        r.max_rel_error(),
        r.elapsed
    );
}

fn gradcheck(f64: bool, seed: u64) -> Result<()> {
    let r = if f64 {
        run_suite::<f64>(seed)?
    } else {
        run_suite::<f32>(seed)?
    };
    print_suite(&r);
    if r.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = r.failures().map(|c| c.name.as_str()).collect();
        Err(Error::Numerical(format!(
            "gradient check failed: {}",
            names.join(", ")
        )))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Train {
            blurry,
            sharp,
            config,
            out,
            resume,
            metrics,
        } => train(
            &blurry,
            &sharp,
            &config,
            &out,
            resume.as_deref(),
            metrics.as_deref(),
        ),
        Command::Infer {
            ckpt,
            input,
            output,
        } => infer(&ckpt, &input, &output),
        Command::Analyze {
            corpus_a,
            corpus_b,
            sigma,
            out,
        } => analyze(&corpus_a, &corpus_b, sigma, &out),
        Command::Synth { n, size, seed, out } => synth_corpus(n, size, seed)?.write(&out),
        Command::Ablate {
            blurry,
            sharp,
            config,
            out,
        } => run_ablation(&blurry, &sharp, &config, &out),
        Command::Gradcheck { f64, seed } => gradcheck(f64, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("msfs: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
