//! Trains the desk-scale model on eight synthetic videos until it memorises
//! them, then reports caption accuracy and localization IoU.
//!
//! cargo run --release --example overfit_synthetic -- [epochs] [lr] [batch]

use std::time::Instant;

use densecap::datapipe::{build_vocabulary, generate_synthetic_dataset, Agent, Dataset, SyntheticSpec};
use densecap::inference::fit_report;
use densecap::model::ModelConfig;
use densecap::trainer::{prepare_examples, train, TrainConfig};

fn main() -> densecap::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let epochs: usize = arg(0, "200").parse().expect("epochs");
    let lr: f64 = arg(1, "1e-3").parse().expect("lr");
    let batch: usize = arg(2, "4").parse().expect("batch");

    let spec = SyntheticSpec::default();
    let ds = Dataset::from_synthetic(&generate_synthetic_dataset(&spec, 7));
    let vocab = build_vocabulary(&ds.captions(Agent::Pedestrian), 1, "wts_normal")?;
    let model_cfg = ModelConfig::desk(spec.feature_dim, vocab.len());
    let cfg = TrainConfig {
        epochs,
        lr,
        batch_size: batch,
        seed: 7,
        ..TrainConfig::default()
    };

    let t0 = Instant::now();
    let ckpt = train(&cfg, &ds, &model_cfg, &vocab)?;
    let secs = t0.elapsed().as_secs_f64();
    for (i, h) in ckpt.history.iter().enumerate() {
        if i % 10 == 0 || i + 1 == ckpt.history.len() {
            println!("epoch {:>3}  total {:.4}  giou {:.4}  cls {:.4}  ec {:.4}  cap {:.4}", i + 1, h.total, h.giou, h.cls, h.ec, h.cap);
        }
    }
    let examples = prepare_examples(&ds, &vocab, &model_cfg, cfg.agent)?;
    let videos: Vec<_> = examples.into_iter().map(|e| (e.features, e.targets)).collect();
    let fit = fit_report(&ckpt.to_model()?, &videos, &cfg.loss)?;
    let first = ckpt.history.first().map_or(f64::NAN, |h| h.total);
    let last = ckpt.history.last().map_or(f64::NAN, |h| h.total);
    println!("loss ratio {:.4}  captions {}/{}  mean IoU {:.4}  {:.1}s", last / first, fit.exact_captions, fit.events, fit.mean_iou, secs);
    Ok(())
}
