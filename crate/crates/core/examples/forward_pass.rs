//! One forward pass of the captioning model: per-layer segments, event
//! counts and greedy captions from an untrained desk-scale model.

use densecap::diffcore::{Tape, Tensor};
use densecap::matching::layer_predictions;
use densecap::model::{ModelConfig, Pdvc};

fn main() -> densecap::Result<()> {
    let cfg = ModelConfig::desk(32, 40);
    let model = Pdvc::new(cfg.clone(), 0)?;
    println!("{} parameter tensors, {} scalars", model.params.len(), model.params.numel());

    let feats = Tensor::matrix(cfg.t_frames, 32, (0..cfg.t_frames * 32).map(|i| ((i * 7) % 13) as f64 / 13.0 - 0.5).collect())?;
    let mut tape = Tape::new();
    let p = model.bind_constant(&mut tape);
    let out = model.forward(&mut tape, &p, &feats)?;
    for (i, layer) in out.layers.iter().enumerate() {
        let preds = layer_predictions(&tape, layer);
        println!("decoder layer {i}: query 0 centre {:.3} width {:.3} confidence {:.3}", preds[0].center, preds[0].width, preds[0].confidence);
    }
    println!("counter logits: {:?}", tape.value(out.counter_logits).data().iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>());
    let caps = model.generate(&mut tape, &p, out.last().queries, &[0, 1])?;
    for c in caps {
        println!("greedy ids {:?} (log-prob {:.2})", &c.ids[..c.ids.len().min(8)], c.logprob);
    }
    Ok(())
}
