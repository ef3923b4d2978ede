use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Example;
use crate::textrep::{Vocabulary, ZipfWeights};

use super::network::example_loss_and_grad;
use super::{GenConfig, GenError, GenExample, GenModel, GenParams};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    /// Summed loss of each update's examples, in visiting order.
    pub step_losses: Vec<f64>,
    /// Mean per-token loss over each epoch.
    pub epoch_nll: Vec<f64>,
}

/// Plain SGD with the gradient rescaled to at most `clip_norm` in global L2
/// norm. Returns the pre-clip norm.
pub fn sgd_update(params: &mut GenParams, grad: &GenParams, lr: f64, clip_norm: f64) -> f64 {
    let norm = grad.sq_norm().sqrt();
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    for (w, g) in params.blocks_mut().into_iter().zip(grad.blocks()) {
        for (wi, gi) in w.iter_mut().zip(g) {
            *wi -= lr * scale * gi;
        }
    }
    norm
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    order.shuffle(&mut rng);
    order
}

/// Trains on already encoded instances, starting from `params`.
pub fn train_params(
    params: &mut GenParams,
    zipf: &ZipfWeights,
    data: &[GenExample],
    cfg: &GenConfig,
) -> Result<TrainHistory, GenError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(GenError::EmptyExamples);
    }
    let mut history = TrainHistory::default();
    let mut grad = GenParams::zeros(params.vocab_size, params.emb_dim, params.hidden);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate / (1.0 + cfg.lr_decay * epoch as f64);
        let (mut total, mut tokens) = (0.0, 0usize);
        let order = epoch_order(data.len(), cfg.seed, epoch);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.blocks_mut().into_iter().for_each(|b| b.fill(0.0));
            let mut loss = 0.0;
            for &i in batch {
                loss += example_loss_and_grad(params, cfg.mode, zipf, &data[i], &mut grad);
                tokens += data[i].target.len() + 1;
            }
            if !loss.is_finite() || !grad.is_finite() {
                return Err(GenError::NonFiniteLoss { epoch, step });
            }
            if batch.len() > 1 {
                let inv = 1.0 / batch.len() as f64;
                grad.blocks_mut().into_iter().flatten().for_each(|g| *g *= inv);
            }
            sgd_update(params, &grad, lr, cfg.clip_norm);
            history.step_losses.push(loss);
            total += loss;
        }
        let nll = total / tokens as f64;
        log::debug!("generative epoch {epoch}: {nll:.4} nats/token");
        history.epoch_nll.push(nll);
    }
    Ok(history)
}

/// Encodes `examples` for `cfg.mode` and trains a fresh model seeded by
/// `cfg.seed`.
pub fn train_generative(
    examples: &[Example],
    vocab: Vocabulary,
    cfg: &GenConfig,
) -> Result<(GenModel, TrainHistory), GenError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(GenError::EmptyExamples);
    }
    let params = GenParams::random(vocab.len(), cfg.emb_dim, cfg.hidden, cfg.init_scale, cfg.seed);
    let mut model = GenModel::new(vocab, params, cfg);
    let data: Vec<GenExample> = examples.iter().map(|e| model.example(e)).collect();
    let history = train_params(&mut model.params, &model.zipf, &data, cfg)?;
    Ok((model, history))
}
