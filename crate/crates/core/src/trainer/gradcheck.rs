use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datapipe::{BOS, EOS, SPECIALS};
use crate::diffcore::{grad_check, GradCheckReport, Tape, Tensor};
use crate::error::Result;
use crate::matching::{total_loss, EventTarget, LossConfig};
use crate::model::{Bound, ModelConfig, Pdvc};

/// A random one-video batch sized for `config`.
pub fn toy_batch(config: &ModelConfig, seed: u64) -> (Tensor, Vec<EventTarget>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, d) = (config.t_frames, config.feature_dim);
    let features = Tensor::matrix(t, d, (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape");
    let events = 2.min(config.num_queries);
    let targets = (0..events)
        .map(|e| {
            let lo = e as f64 / events as f64;
            let hi = (e + 1) as f64 / events as f64;
            let start = lo + rng.random_range(0.0..0.3) * (hi - lo);
            let end = hi - rng.random_range(0.0..0.3) * (hi - lo);
            let len = rng.random_range(2..=4).min(config.max_caption_len.saturating_sub(1).max(1));
            let mut tokens = vec![BOS];
            tokens.extend((0..len).map(|_| rng.random_range(SPECIALS.len()..config.vocab_size)));
            tokens.push(EOS);
            EventTarget { start, end, tokens }
        })
        .collect();
    (features, targets)
}

/// Finite-difference check of the full training loss with respect to every
/// model parameter.
///
/// Parameters are jittered away from their initial values first: zero-valued
/// sampling offsets would put every sampling point on an integer position,
/// where linear interpolation has a kink.
pub fn check_loss_gradients(config: &ModelConfig, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let mut model = Pdvc::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for t in model.params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let (features, targets) = toy_batch(config, seed);
    let cfg = LossConfig::default();
    let params = model.params.tensors().to_vec();
    grad_check(
        |tape: &mut Tape, vars| {
            let p = Bound::from_vars(vars.to_vec());
            let out = model.forward(tape, &p, &features)?;
            let (loss, _) = total_loss(tape, &model, &p, &out, &targets, &cfg)?;
            Ok(loss)
        },
        &params,
        eps,
    )
}

pub const GRAD_CHECK_EPS: f64 = 1e-4;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn micro_model_gradients_match_finite_differences() {
        let cfg = ModelConfig::micro(8, 20);
        let r = check_loss_gradients(&cfg, 0, GRAD_CHECK_EPS).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert_eq!(r.entries, Pdvc::new(cfg, 0).unwrap().params.numel());
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let cfg = ModelConfig::micro(8, 20);
        let model = Pdvc::new(cfg.clone(), 1).unwrap();
        let (features, targets) = toy_batch(&cfg, 1);
        let mut tape = Tape::new();
        let p = model.bind(&mut tape);
        let out = model.forward(&mut tape, &p, &features).unwrap();
        let (loss, _) = total_loss(&mut tape, &model, &p, &out, &targets, &LossConfig::default()).unwrap();
        let g = tape.backward(loss).unwrap();
        for (i, name) in model.params.names().iter().enumerate() {
            let gi = g.get(p.vars()[i]).unwrap();
            assert!(gi.data().iter().any(|&x| x != 0.0), "{name} has no gradient");
        }
    }
}
