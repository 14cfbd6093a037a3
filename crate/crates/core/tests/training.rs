use msfs::ablation::{run_variant, VARIANTS};
use msfs::config::TrainConfig;
use msfs::data::{synth_corpus, Dataset, Pair};
use msfs::losses::LossWeights;
use msfs::network::NetworkConfig;
use msfs::train::{evaluate, Trainer};

fn small_net() -> NetworkConfig {
    NetworkConfig {
        base_channels: 4,
        rcab_count: 1,
        ..NetworkConfig::default()
    }
}

#[test]
fn identity_target_is_reached() {
    let corpus = synth_corpus(2, 16, 9).unwrap();
    let data = Dataset {
        pairs: corpus
            .pairs
            .into_iter()
            .map(|p| Pair {
                name: p.name,
                sharp: p.blurry.clone(),
                blurry: p.blurry,
            })
            .collect(),
    };
    let cfg = TrainConfig {
        lr0: 1e-2,
        lr_halve_every: 100,
        batch: 2,
        crop: 16,
        flip: false,
        seed: 3,
        loss: LossWeights {
            lambda1: 0.0,
            ..LossWeights::default()
        },
        net: small_net(),
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg).unwrap();
    let log = t.train_until(&data, 500, |_, _| Ok(())).unwrap();
    assert_eq!(t.adam.step, 500);
    let last = log.last().unwrap().loss_total;
    assert!(last < 1e-3, "loss after 500 steps: {last}");
}

#[test]
fn unregularized_loss_decreases_over_fifty_epochs() {
    let data = synth_corpus(4, 16, 4).unwrap();
    let cfg = TrainConfig {
        lr0: 1e-3,
        batch: 2,
        crop: 16,
        flip: false,
        seed: 1,
        loss: LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            ..LossWeights::default()
        },
        net: small_net(),
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg).unwrap();
    let log = t.train_until(&data, 50, |_, _| Ok(())).unwrap();
    for w in log.windows(2) {
        assert!(
            w[1].loss_total <= w[0].loss_total * 1.05,
            "epoch {}: {} after {}",
            w[1].epoch,
            w[1].loss_total,
            w[0].loss_total
        );
    }
    assert!(log[49].loss_total < log[0].loss_total);
}

#[test]
fn full_ablation_row_matches_plain_training() {
    let data = synth_corpus(2, 16, 6).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        lr0: 1e-3,
        crop: 16,
        seed: 8,
        net: small_net(),
        ..TrainConfig::default()
    };
    let full = VARIANTS.iter().find(|v| v.is_full()).unwrap();
    let row = run_variant(&cfg, *full, &data, &data).unwrap();

    let mut t = Trainer::new(cfg.clone()).unwrap();
    let log = t.train_until(&data, cfg.epochs, |_, _| Ok(())).unwrap();
    assert_eq!(row.eval, evaluate(&t.net, &t.params, &data).unwrap());
    assert_eq!(row.final_loss, log.last().unwrap().loss_total);
}

#[test]
fn training_is_deterministic() {
    let data = synth_corpus(3, 16, 2).unwrap();
    let cfg = TrainConfig {
        lr0: 1e-3,
        crop: 16,
        seed: 4,
        net: small_net(),
        ..TrainConfig::default()
    };
    let run = || {
        let mut t = Trainer::new(cfg.clone()).unwrap();
        let log = t.train_until(&data, 4, |_, _| Ok(())).unwrap();
        (log, t.params)
    };
    assert_eq!(run(), run());
}
