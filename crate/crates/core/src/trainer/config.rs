use serde::{Deserialize, Serialize};

use crate::datapipe::{Agent, Domain};
use crate::error::{Error, Result};
use crate::matching::LossConfig;

/// Optimisation settings for one (domain, agent) model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Learning rate used by [`finetune`](super::finetune).
    pub lr_finetune: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Max global gradient norm; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub domain: Domain,
    pub agent: Agent,
    pub loss: LossConfig,
    /// Threads computing per-video gradients within a batch. Results do not
    /// depend on this.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_finetune: 5e-4,
            epochs: 30,
            batch_size: 4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            grad_clip: None,
            domain: Domain::WtsNormal,
            agent: Agent::Pedestrian,
            loss: LossConfig::default(),
            workers: 1,
        }
    }
}

impl TrainConfig {
    /// Defaults for the large source domain: batch size 8.
    pub fn bdd(agent: Agent) -> Self {
        TrainConfig {
            batch_size: 8,
            domain: Domain::Bdd,
            agent,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if !(self.lr_finetune > 0.0 && self.lr_finetune.is_finite()) {
            return bad("lr_finetune must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be > 0");
            }
        }
        self.loss.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.lr_finetune, c.epochs, c.batch_size), (1e-3, 5e-4, 30, 4));
        assert_eq!(TrainConfig::bdd(Agent::Vehicle).batch_size, 8);
        c.validate().unwrap();
        for broken in [
            TrainConfig { lr: 0.0, ..c.clone() },
            TrainConfig { batch_size: 0, ..c.clone() },
            TrainConfig { beta2: 1.0, ..c.clone() },
            TrainConfig { grad_clip: Some(0.0), ..c.clone() },
        ] {
            assert!(broken.validate().is_err());
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 0.01, "momentum": 0.9}"#).is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"agent": "vehicle", "grad_clip": 1.0}"#).unwrap();
        assert_eq!(c.agent, Agent::Vehicle);
        assert_eq!(c.grad_clip, Some(1.0));
    }
}
