use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::eval::metrics::{pearson, rmse};
use crate::model::QualityModel;
use crate::params::{Gradients, ParamStore};
use crate::scores::{clip_score, Dimension, QualityScores};
use crate::tensor::Tensor;
use crate::train::autodiff::Graph;

use super::adam::{adam_step, OptimizerState};
use super::schedule::PlateauController;
use super::TrainError;

/// Samples whose gradients are held in memory at once. Summation order is
/// always sample order, so this only bounds memory.
const GRAD_CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Monitor {
    /// `PCC − RMSE` of validation MOS.
    PccMinusRmse,
    Pcc,
    NegRmse,
}

impl std::str::FromStr for Monitor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pcc_minus_rmse" => Ok(Monitor::PccMinusRmse),
            "pcc" => Ok(Monitor::Pcc),
            "neg_rmse" => Ok(Monitor::NegRmse),
            other => Err(format!(
                "unknown monitor '{other}' (expected pcc_minus_rmse, pcc or neg_rmse)"
            )),
        }
    }
}

impl std::fmt::Display for Monitor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Monitor::PccMinusRmse => "pcc_minus_rmse",
            Monitor::Pcc => "pcc",
            Monitor::NegRmse => "neg_rmse",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_factor: f64,
    pub min_lr: f64,
    pub monitor: Monitor,
}

impl TrainConfig {
    /// CNN protocol: Adam 1e-3, 500 epochs, early stop 20, LR patience 15,
    /// batches of 100.
    pub fn cnn_protocol() -> Self {
        Self {
            learning_rate: 1e-3,
            max_epochs: 500,
            early_stop_patience: 20,
            lr_patience: 15,
            batch_size: 100,
            seed: 0,
            lr_factor: 0.5,
            min_lr: 1e-8,
            monitor: Monitor::PccMinusRmse,
        }
    }

    /// Transformer defaults: same schedule with Adam 1e-6.
    pub fn ast_default() -> Self {
        Self {
            learning_rate: 1e-6,
            ..Self::cnn_protocol()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.early_stop_patience == 0 || self.lr_patience == 0 {
            return Err(TrainError::Config(
                "patience values must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) || !(self.min_lr > 0.0) {
            return Err(TrainError::Config(
                "lr_factor must be in (0, 1) and min_lr positive".into(),
            ));
        }
        Ok(())
    }
}

/// Prepared model input with its labels.
#[derive(Clone, Debug)]
pub struct Sample<I> {
    pub input: I,
    pub labels: QualityScores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared error per head over the epoch's labelled samples.
    pub train_loss: [Option<f64>; 5],
    pub val_pcc_mos: Option<f64>,
    pub val_rmse_mos: Option<f64>,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub monitor: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch");
        for d in Dimension::ALL {
            let _ = write!(out, ",train_loss_{}", d.key());
        }
        out.push_str(",val_pcc_mos,val_rmse_mos,lr,monitor\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        for r in &self.epochs {
            let _ = write!(out, "{}", r.epoch);
            for l in r.train_loss {
                let _ = write!(out, ",{}", opt(l));
            }
            let _ = writeln!(
                out,
                ",{},{},{:e},{:.9}",
                opt(r.val_pcc_mos),
                opt(r.val_rmse_mos),
                r.lr,
                r.monitor
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub best_params: ParamStore,
    pub history: History,
}

/// One sample's forward and backward pass. `seed_fn` maps the five raw
/// outputs to `d(loss)/d(output)` per head (`None` leaves a head unseeded).
pub fn sample_backward<M, F>(
    model: &M,
    input: &M::Input,
    seed_fn: F,
) -> Result<(Gradients, [f64; 5]), TrainError>
where
    M: QualityModel,
    F: Fn(&[f64; 5]) -> [Option<f64>; 5],
{
    let mut g = Graph::new();
    let outs = model.forward(&mut g, input)?;
    let raw = outs.map(|n| g.value(n).data[0]);
    let seeds: Vec<_> = outs
        .iter()
        .zip(seed_fn(&raw))
        .filter_map(|(&n, s)| s.map(|v| (n, Tensor::scalar(v))))
        .collect();
    Ok((g.backward(&seeds, model.params()), raw))
}

/// Summed-over-tasks MSE gradient of a batch: each head's loss is the mean
/// over samples labelled for that head; unlabelled heads contribute nothing.
/// Returns the gradient and per-head `(sum of squared errors, count)`.
pub fn batch_gradients<M: QualityModel>(
    model: &M,
    batch: &[&Sample<M::Input>],
) -> Result<(Gradients, [(f64, usize); 5]), TrainError> {
    let mut counts = [0usize; 5];
    for s in batch {
        for (c, &p) in counts.iter_mut().zip(&s.labels.present) {
            *c += usize::from(p);
        }
    }
    let mut total = Gradients::zeros_like(model.params());
    let mut sq = [(0.0, 0usize); 5];
    for chunk in batch.chunks(GRAD_CHUNK) {
        let results: Vec<Result<(Gradients, [f64; 5]), TrainError>> = chunk
            .par_iter()
            .map(|s| {
                sample_backward(model, &s.input, |raw| {
                    std::array::from_fn(|k| {
                        s.labels.present[k]
                            .then(|| 2.0 * (raw[k] - s.labels.values[k]) / counts[k] as f64)
                    })
                })
            })
            .collect();
        for (s, r) in chunk.iter().zip(results) {
            let (g, raw) = r?;
            total.add_assign(&g);
            for k in 0..5 {
                if s.labels.present[k] {
                    let e = raw[k] - s.labels.values[k];
                    sq[k].0 += e * e;
                    sq[k].1 += 1;
                }
            }
        }
    }
    if !total.all_finite() {
        return Err(TrainError::Divergence);
    }
    Ok((total, sq))
}

/// Clipped predictions for each sample, in order.
pub fn predict_all<M: QualityModel>(
    model: &M,
    samples: &[Sample<M::Input>],
) -> Result<Vec<[f64; 5]>, TrainError> {
    samples
        .par_iter()
        .map(|s| Ok(model.raw_outputs(&s.input)?.map(clip_score)))
        .collect()
}

/// Validation PCC and RMSE on MOS and the monitored scalar (NEG_INFINITY
/// when the correlation is undefined).
fn validation_metrics(
    preds: &[[f64; 5]],
    samples: &[Sample<impl Sized>],
    monitor: Monitor,
) -> (Option<f64>, Option<f64>, f64) {
    let k = Dimension::Mos.index();
    let (p, y): (Vec<f64>, Vec<f64>) = preds
        .iter()
        .zip(samples)
        .filter(|(_, s)| s.labels.present[k])
        .map(|(p, s)| (p[k], s.labels.values[k]))
        .unzip();
    let pcc = pearson(&p, &y).ok();
    let err = rmse(&p, &y).ok();
    let value = match (monitor, pcc, err) {
        (Monitor::PccMinusRmse, Some(c), Some(e)) => c - e,
        (Monitor::Pcc, Some(c), _) => c,
        (Monitor::NegRmse, _, Some(e)) => -e,
        _ => f64::NEG_INFINITY,
    };
    (pcc, err, value)
}

fn permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    idx.shuffle(&mut rng);
    idx
}

/// Train with Adam on summed per-task MSE, validating after every epoch.
/// On return `model` holds the best parameters by the monitor.
pub fn fit<M: QualityModel>(
    model: &mut M,
    train: &[Sample<M::Input>],
    val: &[Sample<M::Input>],
    config: &TrainConfig,
) -> Result<FitOutcome, TrainError> {
    config.validate()?;
    if config.max_epochs == 0 {
        return Err(TrainError::NoTraining);
    }
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let mut state = OptimizerState::new(model.params());
    let mut controller = PlateauController::new(
        config.learning_rate,
        config.early_stop_patience,
        config.lr_patience,
        config.lr_factor,
        config.min_lr,
    );
    let mut history = History::default();
    let mut best_params = model.params().clone();

    for epoch in 1..=config.max_epochs {
        let lr = controller.lr();
        let order = permutation(train.len(), config.seed, epoch);
        let mut epoch_sq = [(0.0, 0usize); 5];
        for batch_idx in order.chunks(config.batch_size) {
            let batch: Vec<&Sample<M::Input>> = batch_idx.iter().map(|&i| &train[i]).collect();
            let (grads, sq) = batch_gradients(model, &batch)?;
            adam_step(model.params_mut(), &grads, &mut state, lr)?;
            for (acc, s) in epoch_sq.iter_mut().zip(sq) {
                acc.0 += s.0;
                acc.1 += s.1;
            }
        }
        let preds = predict_all(model, val)?;
        let (pcc, err, monitor) = validation_metrics(&preds, val, config.monitor);
        let decision = controller.observe(monitor);
        if decision.improved {
            best_params = model.params().clone();
            history.best_epoch = epoch;
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_sq.map(|(s, n)| (n > 0).then(|| s / n as f64)),
            val_pcc_mos: pcc,
            val_rmse_mos: err,
            lr,
            monitor,
        });
        if decision.stop {
            history.stopped_early = true;
            break;
        }
    }
    *model.params_mut() = best_params.clone();
    Ok(FitOutcome {
        best_params,
        history,
    })
}
