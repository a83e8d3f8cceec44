use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{batch_grad, TrainExample};
use super::{ImportedVectors, Model, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Decoding threshold used for dev-set evaluation.
    pub theta_decode: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 16,
            epochs: 10,
            theta_decode: 0.1,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0 < self.beta1 && self.beta1 < 1.0 && 0.0 < self.beta2 && self.beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("Adam eps must be positive");
        }
        if !self.theta_decode.is_finite() {
            return bad("theta must be finite");
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Params,
    pub v: Params,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        AdamState {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut Params, grad: &Params, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_em: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

pub type DevEval<'a> = dyn Fn(&Model) -> Result<f64> + Sync + 'a;

/// Resumable training loop. Epoch `e` shuffles with a ChaCha stream keyed by
/// `(seed, e)`, so a resumed run replays the uninterrupted one exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub adam: AdamState,
    pub epochs_done: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &Model) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            adam: AdamState::new(&model.params),
            config,
            epochs_done: 0,
        })
    }

    /// Runs the remaining epochs up to `config.epochs`.
    pub fn run(
        &mut self,
        model: &mut Model,
        data: &[TrainExample],
        vectors: Option<&ImportedVectors>,
        dev: Option<&DevEval<'_>>,
    ) -> Result<TrainingLog> {
        let mut log = TrainingLog::default();
        let mut order: Vec<usize> = (0..data.len()).collect();
        while self.epochs_done < self.config.epochs {
            let epoch = self.epochs_done;
            order.sort_unstable();
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);

            let mut total = 0.0;
            for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
                let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &data[i]).collect();
                let (loss, grad) = batch_grad(model, &batch, vectors)?;
                if !loss.is_finite() || !grad.all_finite() {
                    return Err(Error::Diverged { epoch, batch: b });
                }
                self.adam.update(&mut model.params, &grad, &self.config);
                total += loss * batch.len() as f64;
            }
            let mean_loss = if data.is_empty() { 0.0 } else { total / data.len() as f64 };
            let dev_em = dev.map(|f| f(model)).transpose()?;
            log::info!("epoch {epoch}: loss {mean_loss:.6}{}", dev_em.map(|e| format!(", dev EM {e:.4}")).unwrap_or_default());
            log.epochs.push(EpochLog {
                epoch,
                mean_loss,
                dev_em,
            });
            self.epochs_done += 1;
        }
        Ok(log)
    }
}

/// Fresh Adam run of `config.epochs` epochs.
pub fn train(
    model: &mut Model,
    data: &[TrainExample],
    config: &TrainConfig,
    vectors: Option<&ImportedVectors>,
) -> Result<TrainingLog> {
    Trainer::new(config.clone(), model)?.run(model, data, vectors, None)
}
