use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::diffengine::{adam_step, AdamConfig, AdamState, Checkpoint, DiffError, OptimizerRecord, Tape};
use crate::linalg3::Mat3;
use crate::molgraph::Molecule;
use crate::svtnet::{Batch, Model, Prepared};

use super::metrics::{Metric, MetricValues};
use super::TrainError;

/// Mean isotropic polarizability per atom, `tr(α) / (3·n_atoms)`, over a
/// labelled set. Used as the model's output scale.
pub fn per_atom_scale(mols: &[&Molecule<f64>]) -> Result<f64, TrainError> {
    if mols.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut sum = 0.0;
    for m in mols {
        let a = m.polarizability.ok_or_else(|| TrainError::MissingLabel(m.molecule_id.clone()))?;
        sum += a.trace() / (3.0 * m.n_atoms() as f64);
    }
    let scale = sum / mols.len() as f64;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(TrainError::Config(format!("per-atom target scale {scale} is not positive")));
    }
    Ok(scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: Metric,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Validate every `eval_every` epochs (and after the last one).
    pub eval_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 1000, batch_size: 32, lr: 1e-4, loss: Metric::Tensor, seed: 0, eval_every: 1, adam: AdamConfig::default() }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        if self.eval_every == 0 {
            return Err(TrainError::Config("eval cadence must be positive".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        [
            ("train.epochs", self.epochs.to_string()),
            ("train.batch", self.batch_size.to_string()),
            ("train.lr", format!("{:?}", self.lr)),
            ("train.loss", self.loss.name().to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.eval_every", self.eval_every.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Selected loss metric averaged over training molecules.
    pub train_loss: f64,
    pub val: Option<MetricValues>,
}

impl EpochRecord {
    /// `epoch  train_loss  val_tensor  val_trace  val_aniso  val_frob`, tab-separated;
    /// `nan` where validation was skipped.
    pub fn history_line(&self) -> String {
        let v = self.val.map(|v| v.as_array()).unwrap_or([f64::NAN; 4]);
        format!("{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}", self.epoch, self.train_loss, v[0], v[1], v[2], v[3])
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last step.
    pub last: Model<f64>,
    /// Parameters with the lowest validation loss metric (the last ones when
    /// there is no validation data).
    pub best: Model<f64>,
    /// 0 when the best model is the initialization.
    pub best_epoch: usize,
    pub best_optimizer: AdamState<f64>,
    pub history: Vec<EpochRecord>,
    pub steps: u64,
}

impl TrainOutcome {
    pub fn history_text(&self) -> String {
        self.history.iter().map(|r| r.history_line() + "\n").collect()
    }

    /// Best parameters with model and training configuration echo and the
    /// optimizer state that accompanied them.
    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let mut config = self.best.config.to_pairs();
        config.extend(cfg.to_pairs());
        config.push(("train.best_epoch".into(), self.best_epoch.to_string()));
        Checkpoint {
            config,
            params: self.best.params.clone(),
            optimizer: Some(OptimizerRecord { lr: cfg.lr, adam: cfg.adam, state: self.best_optimizer.clone() }),
        }
    }
}

fn targets(preps: &[&Prepared<f64>]) -> Result<Vec<f64>, TrainError> {
    let mut out = Vec::with_capacity(9 * preps.len());
    for p in preps {
        let t = p.target.ok_or_else(|| TrainError::MissingLabel(p.molecule_id.clone()))?;
        out.extend_from_slice(&t.to_flat());
    }
    Ok(out)
}

/// Loss averaged over `members` and its parameter gradients. The members are
/// split into contiguous chunks, one tape per chunk; chunk gradients are
/// summed in chunk order.
pub fn batch_gradient(
    model: &Model<f64>,
    members: &[&Prepared<f64>],
    metric: Metric,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    let n_chunks = rayon::current_num_threads().clamp(1, members.len().max(1));
    let chunk = members.len().div_ceil(n_chunks).max(1);
    let weight = 1.0 / members.len() as f64;
    let parts = members
        .par_chunks(chunk)
        .map(|group| {
            let mut tape = Tape::new();
            let pred = model.forward(&mut tape, &Batch::new(group))?;
            let truth = tape.constant(group.len(), 9, targets(group)?)?;
            let mean = metric.loss(&mut tape, pred, truth)?;
            let loss = tape.scale(mean, group.len() as f64 * weight);
            let grads = tape.backward(loss)?.param_grads(&tape, &model.params);
            Ok((tape.scalar(loss), grads))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter.next().ok_or(TrainError::EmptyDataset)?;
    for (l, g) in iter {
        loss += l;
        for (a, b) in grads.iter_mut().zip(g) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
    Ok((loss, grads))
}

/// Batched predictions for prepared molecules, in order.
pub fn predict_prepared(model: &Model<f64>, preps: &[&Prepared<f64>], batch: usize) -> Result<Vec<Mat3<f64>>, TrainError> {
    let chunks = preps
        .par_chunks(batch.max(1))
        .map(|group| {
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &Batch::new(group))?;
            Ok(tape.value(out).chunks_exact(9).map(Mat3::from_slice).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

fn validate(model: &Model<f64>, preps: &[&Prepared<f64>], batch: usize) -> Result<MetricValues, TrainError> {
    let preds = predict_prepared(model, preps, batch)?;
    let mut sum = MetricValues::default();
    for (p, prep) in preds.iter().zip(preps) {
        let truth = prep.target.ok_or_else(|| TrainError::MissingLabel(prep.molecule_id.clone()))?;
        sum.add(&MetricValues::between(p, &truth));
    }
    sum.scale(1.0 / preps.len() as f64);
    Ok(sum)
}

/// Minibatch Adam on `train_set`, validating on `val_set`.
///
/// Deterministic for a fixed seed and thread count. `on_epoch` sees each
/// record as soon as it is complete.
pub fn train(
    model: Model<f64>,
    cfg: &TrainConfig,
    train_set: &[&Molecule<f64>],
    val_set: &[&Molecule<f64>],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let prepare = |set: &[&Molecule<f64>]| -> Result<Vec<Prepared<f64>>, TrainError> {
        set.iter()
            .map(|m| {
                if m.polarizability.is_none() {
                    return Err(TrainError::MissingLabel(m.molecule_id.clone()));
                }
                Ok(model.prepare(m)?)
            })
            .collect()
    };
    let train_prep = prepare(train_set)?;
    let val_prep = prepare(val_set)?;
    let val_refs: Vec<&Prepared<f64>> = val_prep.iter().collect();

    let mut model = model;
    let mut state = AdamState::new(&model.params);
    let mut best = (model.clone(), 0usize, state.clone(), f64::INFINITY);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_prep.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let members: Vec<&Prepared<f64>> = idx.iter().map(|&k| &train_prep[k]).collect();
            let (loss, grads) = batch_gradient(&model, &members, cfg.loss)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            adam_step(&mut model.params, &grads, &mut state, cfg.lr, &cfg.adam).map_err(|e| match e {
                DiffError::NonFiniteGradient(param) => TrainError::NonFiniteGradient { epoch, batch: b, param },
                other => other.into(),
            })?;
            total += loss * members.len() as f64;
        }
        let val = if !val_refs.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            Some(validate(&model, &val_refs, cfg.batch_size)?)
        } else {
            None
        };
        if let Some(v) = &val {
            if v.get(cfg.loss) < best.3 {
                best = (model.clone(), epoch, state.clone(), v.get(cfg.loss));
            }
        }
        let rec = EpochRecord { epoch, train_loss: total / train_prep.len() as f64, val };
        on_epoch(&rec);
        history.push(rec);
    }
    if val_refs.is_empty() && cfg.epochs > 0 {
        best = (model.clone(), cfg.epochs, state.clone(), f64::NAN);
    }
    let steps = state.step;
    Ok(TrainOutcome { last: model, best: best.0, best_epoch: best.1, best_optimizer: best.2, history, steps })
}
