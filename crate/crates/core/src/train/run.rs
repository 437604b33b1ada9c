use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::Adam;
use super::config::{lr_at, TrainConfig};
use super::history::{EpochRecord, TrainHistory};
use super::metrics::{compute_metrics, Metrics};
use crate::error::{Error, Result};
use crate::graph::TEXT_DIM;
use crate::io::SampleBundle;
use crate::model::{GameOn, ModelConfig, ModelInput, SampleGraphs, VariantGraph};
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 128;
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// A sample prepared for one model variant.
#[derive(Debug, Clone)]
pub struct Example {
    pub graph: VariantGraph<f32>,
    pub label: usize,
}

/// Builds the variant's graphs for every bundle.
pub fn prepare(bundles: &[SampleBundle], config: &ModelConfig) -> Result<Vec<Example>> {
    if config.d_in != TEXT_DIM {
        return Err(Error::Contract(format!(
            "model expects {}-dimensional node features, bundles provide {TEXT_DIM}",
            config.d_in
        )));
    }
    bundles
        .par_iter()
        .map(|b| {
            let graphs = SampleGraphs::<f32>::from_bundle(b, config.self_loops)?;
            Ok(Example {
                graph: graphs.for_variant(config.variant)?,
                label: b.label as usize,
            })
        })
        .collect()
}

/// Mixes seed components into one 64-bit seed (SplitMix64 finaliser).
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x9E37_79B9_7F4A_7C15u64, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

fn batch_input(examples: &[Example], idx: &[usize]) -> Result<(ModelInput<f32>, Vec<usize>)> {
    let graphs: Vec<&VariantGraph<f32>> = idx.iter().map(|&i| &examples[i].graph).collect();
    let labels = idx.iter().map(|&i| examples[i].label).collect();
    Ok((ModelInput::batch(&graphs)?, labels))
}

/// Evaluation-mode class predictions, in example order.
pub fn predict_classes(model: &GameOn<f32>, examples: &[Example]) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..examples.len()).collect();
    let chunks = idx
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let (input, _) = batch_input(examples, chunk)?;
            Ok(model.predict(&input)?.iter().map(|p| p.class()).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Metrics of `model` over `examples` with dropout disabled.
pub fn evaluate(model: &GameOn<f32>, examples: &[Example]) -> Result<Metrics> {
    if examples.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty split".into()));
    }
    let preds = predict_classes(model, examples)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    compute_metrics(&preds, &labels)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch, or the final ones without
    /// validation data.
    pub best: GameOn<f32>,
    pub last: GameOn<f32>,
    pub history: TrainHistory,
}

/// Trains a freshly initialised model seeded from `config.seed`.
pub fn train(
    model_config: &ModelConfig,
    config: &TrainConfig,
    train_set: &[Example],
    val_set: Option<&[Example]>,
) -> Result<TrainOutcome> {
    let model = GameOn::new(model_config.clone(), config.seed)?;
    train_from(model, config, train_set, val_set)
}

/// Mean loss and gradient of one batch, accumulated over micro-batches in
/// a fixed order so the result does not depend on thread scheduling.
fn batch_gradient(
    model: &GameOn<f32>,
    examples: &[Example],
    batch: &[usize],
    micro_size: usize,
    seeds: [u64; 3],
) -> Result<(f32, Vec<Tensor<f32>>)> {
    let parts = batch
        .par_chunks(micro_size)
        .enumerate()
        .map(|(m, idx)| {
            let (input, labels) = batch_input(examples, idx)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seeds[0], DROPOUT_STREAM, seeds[1], seeds[2], m as u64]));
            let (loss, grads) = model.loss_and_grads(&input, &labels, Some(&mut rng))?;
            Ok((idx.len(), loss, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let total = batch.len() as f32;
    let mut parts = parts.into_iter();
    let (n0, l0, mut grads) = parts.next().expect("batch is non-empty");
    let w0 = n0 as f32 / total;
    let mut loss = l0 * w0;
    if parts.len() > 0 {
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|x| *x *= w0);
        }
    }
    for (n, l, g) in parts {
        let w = n as f32 / total;
        loss += l * w;
        for (acc, g) in grads.iter_mut().zip(&g) {
            for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += w * x;
            }
        }
    }
    Ok((loss, grads))
}

/// Continues training `model` with the given schedule.
pub fn train_from(
    mut model: GameOn<f32>,
    config: &TrainConfig,
    train_set: &[Example],
    val_set: Option<&[Example]>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Contract("training split has no samples".into()));
    }
    let val_set = val_set.filter(|v| !v.is_empty());
    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let micro = config.micro_batch_size.min(config.batch_size);
    let mut adam = Adam::new(model.params().tensors(), config.betas, config.eps_adam, config.weight_decay);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, usize, GameOn<f32>)> = None;
    let mut stale = 0usize;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, SHUFFLE_STREAM, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        let epoch_lr = lr_at(step, total_steps, config);
        let mut loss_sum = 0.0f64;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let lr = lr_at(step, total_steps, config);
            let context = |e: Error| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {b}: {msg}")),
                other => other,
            };
            let (loss, grads) = batch_gradient(&model, train_set, batch, micro, [config.seed, epoch as u64, b as u64])
                .map_err(context)?;
            if let Some(t) = grads.iter().position(|g| !g.all_finite()) {
                return Err(Error::Numeric(format!(
                    "epoch {epoch}, batch {b}: non-finite gradient for {}",
                    model.params().names()[t]
                )));
            }
            adam.step(model.params_mut().tensors_mut(), &grads, lr)?;
            loss_sum += loss as f64 * batch.len() as f64;
            step += 1;
        }
        let loss = loss_sum / train_set.len() as f64;
        let train_metrics = evaluate(&model, train_set)?;
        let eval_now = epoch % config.eval_every == 0 || epoch == config.epochs;
        let val_metrics = match val_set {
            Some(v) if eval_now => Some(evaluate(&model, v)?),
            _ => None,
        };
        let mut stop = false;
        if let Some(v) = &val_metrics {
            let prev = best.as_ref().map(|(f1, _, _)| *f1);
            if prev.is_none_or(|f1| v.f1 > f1) {
                stale = 0;
            } else {
                stale += 1;
            }
            // Ties keep the later, longer-trained parameters.
            if prev.is_none_or(|f1| v.f1 >= f1) {
                best = Some((v.f1, epoch, model.clone()));
            }
            stop = config.early_stop_patience.is_some_and(|p| stale >= p);
        }
        let record = EpochRecord {
            epoch,
            loss,
            lr: epoch_lr,
            train: train_metrics,
            val: val_metrics,
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: loss {:.5} lr {:.2e} train acc {:.4}{}",
            record.loss,
            record.lr,
            record.train.accuracy,
            record.val.as_ref().map(|v| format!(" val acc {:.4} f1 {:.4}", v.accuracy, v.f1)).unwrap_or_default()
        );
        history.push(record)?;
        if stop {
            debug!("early stop after epoch {epoch}: {stale} rounds without improvement");
            history.stopped_early = true;
            break;
        }
    }
    let last_epoch = history.last().map(|r| r.epoch);
    let (best_model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, Some(epoch)),
        None => (model.clone(), last_epoch),
    };
    history.best_epoch = best_epoch;
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        history,
    })
}
