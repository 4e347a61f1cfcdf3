use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, clip_grad_norm, AdamState};
use super::checkpoint::{Checkpoint, Stage};
use super::config::TrainConfig;
use super::examples::{prepare_examples, TrainingExample};
use crate::datapipe::{align_vocabularies, Dataset, Vocabulary, UNK};
use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::matching::{total_loss, LossBreakdown, LossConfig};
use crate::model::{ModelConfig, Pdvc, VOCAB_OUT_BIAS, VOCAB_OUT_WEIGHT, WORD_EMBED};

/// Visiting order of `n` examples in epoch `epoch`: one ChaCha8 stream per
/// epoch, so resuming at any epoch reproduces the uninterrupted order.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Loss and parameter gradients for one video.
fn example_gradients(model: &Pdvc, ex: &TrainingExample, cfg: &LossConfig) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape);
    let out = model.forward(&mut tape, &p, &ex.features)?;
    let (loss, breakdown) = total_loss(&mut tape, model, &p, &out, &ex.targets, cfg)?;
    if !breakdown.total.is_finite() {
        return Err(Error::invalid(format!("non-finite loss on video {}", ex.video_id)));
    }
    let g = tape.backward(loss)?;
    let grads = p
        .vars()
        .iter()
        .zip(model.params.tensors())
        .map(|(&v, t)| g.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((breakdown, grads))
}

/// Per-video losses and gradients of a batch, in batch order. Videos are
/// split into contiguous runs, one per worker thread.
fn batch_gradients(
    model: &Pdvc,
    batch: &[&TrainingExample],
    cfg: &LossConfig,
    workers: usize,
) -> Result<Vec<(LossBreakdown, Vec<Tensor>)>> {
    if workers <= 1 || batch.len() <= 1 {
        return batch.iter().map(|ex| example_gradients(model, ex, cfg)).collect();
    }
    let per = batch.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(per)
            .map(|part| s.spawn(move || part.iter().map(|ex| example_gradients(model, ex, cfg)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("loss worker panicked"))
            .collect()
    })
}

/// Mean loss of `model` over `examples` without updating anything.
pub fn evaluate_loss(model: &Pdvc, examples: &[TrainingExample], cfg: &LossConfig) -> Result<LossBreakdown> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to evaluate"));
    }
    let mut acc = LossBreakdown::default();
    for ex in examples {
        let mut tape = Tape::new();
        let p = model.bind_constant(&mut tape);
        let out = model.forward(&mut tape, &p, &ex.features)?;
        let (_, b) = total_loss(&mut tape, model, &p, &out, &ex.targets, cfg)?;
        acc.accumulate(&b);
    }
    Ok(acc.scaled(1.0 / examples.len() as f64))
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    lr: f64,
    examples: &'a [TrainingExample],
}

impl Run<'_> {
    fn epochs(&self, model: &mut Pdvc, ckpt: &mut Checkpoint, epochs: usize) -> Result<()> {
        let n = self.examples.len();
        for _ in 0..epochs {
            let epoch = ckpt.history.len();
            let order = epoch_order(self.cfg.seed, epoch, n);
            let mut acc = LossBreakdown::default();
            for chunk in order.chunks(self.cfg.batch_size) {
                let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &self.examples[i]).collect();
                let results = batch_gradients(model, &batch, &self.cfg.loss, self.cfg.workers)?;
                let mut grads: Vec<Tensor> = model.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
                let mut batch_total = 0.0;
                for (b, g) in &results {
                    acc.accumulate(b);
                    batch_total += b.total;
                    for (dst, src) in grads.iter_mut().zip(g) {
                        dst.data_mut().iter_mut().zip(src.data()).for_each(|(d, s)| *d += s);
                    }
                }
                let k = results.len() as f64;
                for g in grads.iter_mut() {
                    g.data_mut().iter_mut().for_each(|x| *x /= k);
                }
                if let Some(max) = self.cfg.grad_clip {
                    clip_grad_norm(&mut grads, max);
                }
                adam_step(
                    model.params.tensors_mut(),
                    &grads,
                    &mut ckpt.adam,
                    self.lr,
                    self.cfg.beta1,
                    self.cfg.beta2,
                    self.cfg.adam_eps,
                )?;
                ckpt.batch_losses.push(batch_total / k);
            }
            let mean = acc.scaled(1.0 / n as f64);
            log::info!(
                "epoch {} total {:.4} (giou {:.4} cls {:.4} ec {:.4} cap {:.4})",
                epoch + 1,
                mean.total,
                mean.giou,
                mean.cls,
                mean.ec,
                mean.cap
            );
            ckpt.history.push(mean);
        }
        ckpt.params = model.params.clone();
        Ok(())
    }
}

/// Trains a fresh model (initialised from `cfg.seed`) on the `cfg.agent`
/// captions of `dataset`.
///
/// Each step averages the per-video gradients of one batch; with
/// `cfg.epochs == 0` the returned checkpoint holds the initial parameters.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, model_cfg: &ModelConfig, vocab: &Vocabulary) -> Result<Checkpoint> {
    cfg.validate()?;
    model_cfg.validate()?;
    let examples = prepare_examples(dataset, vocab, model_cfg, cfg.agent)?;
    let mut model = Pdvc::new(model_cfg.clone(), cfg.seed)?;
    let mut ckpt = Checkpoint {
        model: model_cfg.clone(),
        train: cfg.clone(),
        stage: Stage::Train,
        vocab: vocab.clone(),
        params: model.params.clone(),
        adam: AdamState::new(model.params.tensors()),
        history: Vec::new(),
        batch_losses: Vec::new(),
    };
    let run = Run {
        cfg,
        lr: cfg.lr,
        examples: &examples,
    };
    run.epochs(&mut model, &mut ckpt, cfg.epochs)?;
    Ok(ckpt)
}

/// Continues `ckpt` for `epochs` more epochs with its own config, seed stream
/// and optimiser state.
pub fn resume(mut ckpt: Checkpoint, dataset: &Dataset, epochs: usize) -> Result<Checkpoint> {
    let cfg = ckpt.train.clone();
    let examples = prepare_examples(dataset, &ckpt.vocab, &ckpt.model, cfg.agent)?;
    let mut model = ckpt.to_model()?;
    let run = Run {
        cfg: &cfg,
        lr: ckpt.active_lr(),
        examples: &examples,
    };
    run.epochs(&mut model, &mut ckpt, epochs)?;
    Ok(ckpt)
}

fn vocab_dependent(name: &str) -> bool {
    name == WORD_EMBED || name == VOCAB_OUT_WEIGHT || name == VOCAB_OUT_BIAS
}

/// Builds a `target`-shaped model from pretrained weights.
///
/// Every parameter that does not depend on the vocabulary is copied. For the
/// word embedding and the output projection, tokens shared with the
/// pretrained vocabulary (and the special tokens) copy their pretrained
/// row/column; new tokens keep a fresh draw from the usual init law, seeded
/// with `seed`.
pub fn transfer_parameters(pretrained: &Checkpoint, target: &ModelConfig, target_vocab: &Vocabulary, seed: u64) -> Result<Pdvc> {
    let src = &pretrained.model;
    let same_except_vocab = ModelConfig {
        vocab_size: src.vocab_size,
        ..target.clone()
    };
    if target.d_model != src.d_model {
        return Err(Error::shape(format!("d_model {} vs pretrained {}", target.d_model, src.d_model)));
    }
    if same_except_vocab != *src {
        return Err(Error::Config("target model config differs from the pretrained one beyond vocab_size".into()));
    }
    if target_vocab.len() != target.vocab_size {
        return Err(Error::shape(format!(
            "target vocabulary has {} tokens, config says {}",
            target_vocab.len(),
            target.vocab_size
        )));
    }
    let mut model = Pdvc::new(target.clone(), seed)?;
    for (name, t) in pretrained.params.iter() {
        if !vocab_dependent(name) {
            let dst = model.params.by_name_mut(name).ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
            dst.clone_from(t);
        }
    }
    let map = align_vocabularies(&pretrained.vocab, target_vocab);
    let shared: Vec<(usize, usize)> = map
        .iter()
        .enumerate()
        .filter(|&(s, &t)| Vocabulary::is_special(s) || t != UNK)
        .map(|(s, &t)| (s, t))
        .collect();
    let get = |name: &str| pretrained.params.by_name(name).ok_or_else(|| Error::Format(format!("missing {name}")));
    let (emb, w, b) = (get(WORD_EMBED)?, get(VOCAB_OUT_WEIGHT)?, get(VOCAB_OUT_BIAS)?);
    let p = &mut model.params;
    let dst = p.by_name_mut(WORD_EMBED).expect("embedding");
    for &(s, t) in &shared {
        dst.row_mut(t).copy_from_slice(emb.row(s));
    }
    let dst = p.by_name_mut(VOCAB_OUT_WEIGHT).expect("output weight");
    let (rows, src_cols, dst_cols) = (w.rows(), w.cols(), dst.cols());
    for r in 0..rows {
        for &(s, t) in &shared {
            dst.data_mut()[r * dst_cols + t] = w.data()[r * src_cols + s];
        }
    }
    let dst = p.by_name_mut(VOCAB_OUT_BIAS).expect("output bias");
    for &(s, t) in &shared {
        dst.data_mut()[t] = b.data()[s];
    }
    Ok(model)
}

/// Knowledge transfer: remaps `pretrained` onto `target_vocab`, then trains
/// all parameters on `dataset` at `cfg.lr_finetune` with fresh optimiser
/// state.
pub fn finetune(pretrained: &Checkpoint, target_vocab: &Vocabulary, dataset: &Dataset, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let target = ModelConfig {
        vocab_size: target_vocab.len(),
        ..pretrained.model.clone()
    };
    let examples = prepare_examples(dataset, target_vocab, &target, cfg.agent)?;
    let mut model = transfer_parameters(pretrained, &target, target_vocab, cfg.seed)?;
    let mut ckpt = Checkpoint {
        model: target,
        train: cfg.clone(),
        stage: Stage::Finetune,
        vocab: target_vocab.clone(),
        params: model.params.clone(),
        adam: AdamState::new(model.params.tensors()),
        history: Vec::new(),
        batch_losses: Vec::new(),
    };
    let run = Run {
        cfg,
        lr: cfg.lr_finetune,
        examples: &examples,
    };
    run.epochs(&mut model, &mut ckpt, cfg.epochs)?;
    Ok(ckpt)
}
