//! Training regimens.
//!
//! | regimen            | what is trained                                        |
//! |--------------------|--------------------------------------------------------|
//! | `individual`       | one AudioNet on a single dataset                       |
//! | `all`              | one AudioNet on every dataset at once                  |
//! | `all-bal`          | as `all`, with per-dataset least-squares scale/shift   |
//! | `all-mdf`          | pretrain on the reference, finetune on every dataset   |
//! | `all-mdf-alignnet` | as `all-mdf`, with an AlignmentNet on top              |
//!
//! Every multi-dataset loss is the dataset-balanced mean of per-dataset MSEs.
//! Each optimizer step draws one minibatch per dataset and weights each
//! minibatch term by `1 / N_d`.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::DatasetCollection;
use crate::metrics::lcc;
use crate::model::{AlignModel, Estimator, ModelConfig, ModelGrads};
use crate::nn::{mse, mse_gradient, OptimizerKind, OptimizerState, ParamVector};
use crate::numeric::{exact_sum, hash_f64s};
use crate::sim::derive_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimenKind {
    Individual,
    All,
    AllBal,
    AllMdf,
    AllMdfAlignnet,
}

impl RegimenKind {
    pub const ALL: [RegimenKind; 5] = [
        RegimenKind::Individual,
        RegimenKind::All,
        RegimenKind::AllBal,
        RegimenKind::AllMdf,
        RegimenKind::AllMdfAlignnet,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RegimenKind::Individual => "individual",
            RegimenKind::All => "all",
            RegimenKind::AllBal => "all-bal",
            RegimenKind::AllMdf => "all-mdf",
            RegimenKind::AllMdfAlignnet => "all-mdf-alignnet",
        }
    }

    /// Row label used in result tables.
    pub fn label(&self) -> &'static str {
        match self {
            RegimenKind::Individual => "Individual",
            RegimenKind::All => "All",
            RegimenKind::AllBal => "All (+ BAL)",
            RegimenKind::AllMdf => "All (+ MDF)",
            RegimenKind::AllMdfAlignnet => "All (+ MDF + AlignNet)",
        }
    }
}

impl fmt::Display for RegimenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegimenKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown regimen {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    /// Finetuning epochs during which the AudioNet stays frozen.
    pub freeze_epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    /// Training-correlation threshold that switches on the BAL transforms.
    pub r_th: f64,
    pub seed: u64,
    pub patience: usize,
    pub optimizer: OptimizerKind,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_pretrain: 300,
            epochs_finetune: 300,
            freeze_epochs: 1,
            batch_size: 32,
            step_size: 1e-3,
            r_th: 0.6,
            seed: 0,
            patience: 30,
            optimizer: OptimizerKind::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.r_th > 0.0 && self.r_th <= 1.0) {
            return Err(Error::Config(format!("r_th {} outside (0, 1]", self.r_th)));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("invalid step_size {}", self.step_size)));
        }
        if self.model.audio_hidden.contains(&0) {
            return Err(Error::Config("AudioNet hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Per-dataset affine correction used by the BAL baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleShift {
    pub a: f64,
    pub b: f64,
}

impl ScaleShift {
    pub const IDENTITY: ScaleShift = ScaleShift { a: 1.0, b: 0.0 };

    pub fn apply(&self, x: f64) -> f64 {
        self.a * x + self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleShiftFit {
    pub shift: ScaleShift,
    /// Estimates had no variance; `shift` is the identity.
    pub degenerate: bool,
}

/// Closed-form least squares for `targets ~ a * estimates + b`.
pub fn ls_fit_scale_shift(targets: &[f64], estimates: &[f64]) -> Result<ScaleShiftFit> {
    if targets.len() != estimates.len() {
        return Err(Error::Shape(format!(
            "{} targets against {} estimates",
            targets.len(),
            estimates.len()
        )));
    }
    if targets.len() < 2 {
        return Err(Error::Shape("scale/shift fit needs at least 2 points".into()));
    }
    let n = targets.len() as f64;
    let mx = exact_sum(estimates.iter().copied()) / n;
    let my = exact_sum(targets.iter().copied()) / n;
    let sxx = exact_sum(estimates.iter().map(|x| (x - mx) * (x - mx)));
    let sxy = exact_sum(estimates.iter().zip(targets).map(|(x, y)| (x - mx) * (y - my)));
    if !(sxx > 1e-12 * n) {
        return Ok(ScaleShiftFit {
            shift: ScaleShift::IDENTITY,
            degenerate: true,
        });
    }
    let a = sxy / sxx;
    Ok(ScaleShiftFit {
        shift: ScaleShift { a, b: my - a * mx },
        degenerate: false,
    })
}

/// Mean over datasets of each dataset's MSE, so every dataset weighs the
/// same regardless of its size.
pub fn weighted_loss(per_dataset: &[(&[f64], &[f64])]) -> Result<f64> {
    if per_dataset.is_empty() {
        return Err(Error::Shape("weighted loss over zero datasets".into()));
    }
    let losses = per_dataset
        .iter()
        .map(|(t, e)| mse(e, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(exact_sum(losses) / per_dataset.len() as f64)
}

/// Patience-based early stopping over a validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
            epoch: 0,
        }
    }

    /// Records one epoch's validation loss. Stops once `patience` epochs in a
    /// row failed to improve on the best loss (immediately when patience is 0).
    pub fn record(&mut self, loss: f64) -> Verdict {
        self.epoch += 1;
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Verdict {
            improved,
            stop: self.since_best >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub phase: String,
    pub epoch: usize,
    pub train_loss: Vec<f64>,
    pub validation_loss: f64,
    /// Pooled training correlation, tracked when BAL is on.
    pub train_lcc: Option<f64>,
    pub frozen: bool,
    pub bal_active: bool,
    /// Transforms in force after this epoch's refit.
    pub scale_shift: Option<Vec<ScaleShift>>,
    pub audio_hash: String,
    pub alignment_hash: Option<String>,
}

/// Serializable result of a regimen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub regimen: RegimenKind,
    pub datasets: Vec<String>,
    pub reference_index: usize,
    pub feature_dim: usize,
    pub estimator: Estimator,
    /// Final BAL transforms, for information; never applied at inference.
    pub scale_shift: Option<Vec<ScaleShift>>,
}

impl Checkpoint {
    pub fn reference_name(&self) -> &str {
        &self.datasets[self.reference_index]
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, Copy)]
struct BalSettings {
    r_th: f64,
}

#[derive(Debug, Clone)]
struct PhaseOptions {
    name: &'static str,
    max_epochs: usize,
    freeze_epochs: usize,
    bal: Option<BalSettings>,
    shuffle_seed: u64,
}

/// Mutable state of one training phase.
struct Phase<'a> {
    collection: &'a DatasetCollection,
    config: &'a TrainConfig,
    options: PhaseOptions,
    estimator: Estimator,
    opt_audio: OptimizerState,
    opt_align: Option<(OptimizerState, OptimizerState)>,
    rng: ChaCha8Rng,
    orders: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    shifts: Option<Vec<ScaleShift>>,
    epoch: usize,
}

impl<'a> Phase<'a> {
    fn new(
        collection: &'a DatasetCollection,
        config: &'a TrainConfig,
        options: PhaseOptions,
        estimator: Estimator,
    ) -> Self {
        let opt_audio = OptimizerState::new(config.optimizer, estimator.audio().len());
        let opt_align = match &estimator {
            Estimator::Aligned(m) => Some((
                OptimizerState::new(config.optimizer, m.align_params().len()),
                OptimizerState::new(config.optimizer, m.embeddings().values().len()),
            )),
            Estimator::Bare { .. } => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(options.shuffle_seed);
        let orders = collection
            .datasets()
            .iter()
            .map(|d| {
                let mut o: Vec<usize> = (0..d.train().len()).collect();
                o.shuffle(&mut rng);
                o
            })
            .collect();
        Self {
            collection,
            config,
            cursors: vec![0; collection.len()],
            options,
            estimator,
            opt_audio,
            opt_align,
            rng,
            orders,
            shifts: None,
            epoch: 0,
        }
    }

    fn steps_per_epoch(&self) -> usize {
        let total: usize = self.collection.datasets().iter().map(|d| d.train().len()).sum();
        let per_step = self.collection.len() * self.config.batch_size;
        total.div_ceil(per_step).max(1)
    }

    fn frozen(&self) -> bool {
        matches!(self.estimator, Estimator::Aligned(_)) && self.epoch < self.options.freeze_epochs
    }

    fn next_indices(&mut self, j: usize) -> Vec<usize> {
        let n = self.orders[j].len();
        let take = self.config.batch_size.min(n);
        let mut out = Vec::with_capacity(take);
        while out.len() < take {
            if self.cursors[j] == n {
                self.orders[j].shuffle(&mut self.rng);
                self.cursors[j] = 0;
            }
            out.push(self.orders[j][self.cursors[j]]);
            self.cursors[j] += 1;
        }
        out
    }

    /// One optimizer step over one minibatch from every dataset.
    fn step(&mut self) -> Result<f64> {
        let weight = 1.0 / self.collection.len() as f64;
        let train_audio = !self.frozen();
        let mut total = 0.0;
        let mut acc: Option<ModelGrads> = None;
        for j in 0..self.collection.len() {
            let idx = self.next_indices(j);
            let (x, y) = self.collection.datasets()[j].train().select(&idx);
            let shift = self.shifts.as_ref().map(|s| s[j]);
            let (loss, grads) = term_grads(&self.estimator, x.view(), &y, j, weight, shift, train_audio)?;
            total += loss;
            match acc.as_mut() {
                Some(a) => a.accumulate(&grads),
                None => acc = Some(grads),
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} loss in epoch {}",
                self.options.name,
                self.epoch + 1
            )));
        }
        let grads = acc.expect("collection is nonempty");
        let step = self.config.step_size;
        match &mut self.estimator {
            Estimator::Bare { audio } => {
                let g = grads.audio.expect("bare networks always train");
                self.opt_audio.step(audio.values_mut(), &g, step)?;
            }
            Estimator::Aligned(m) => {
                let (opt_align, opt_emb) = self.opt_align.as_mut().expect("aligned optimizer state");
                opt_align.step(m.align_mut().values_mut(), &grads.align, step)?;
                opt_emb.step(m.embeddings_mut().values_mut(), &grads.embeddings, step)?;
                if let Some(g) = grads.audio {
                    self.opt_audio.step(m.audio_mut().values_mut(), &g, step)?;
                }
            }
        }
        Ok(total)
    }

    fn predict_raw(&self, x: ArrayView2<'_, f64>, j: usize) -> Result<Vec<f64>> {
        Ok(self.estimator.predict(x, j)?.to_vec())
    }

    fn predict(&self, x: ArrayView2<'_, f64>, j: usize) -> Result<Vec<f64>> {
        let raw = self.predict_raw(x, j)?;
        Ok(match self.shifts.as_ref() {
            Some(s) => raw.into_iter().map(|v| s[j].apply(v)).collect(),
            None => raw,
        })
    }

    /// Runs one epoch and the end-of-epoch bookkeeping.
    fn run_epoch(&mut self) -> Result<EpochLog> {
        let frozen = self.frozen();
        for _ in 0..self.steps_per_epoch() {
            self.step()?;
        }
        self.epoch += 1;

        let mut train_loss = Vec::with_capacity(self.collection.len());
        let mut train_lcc = None;
        let bal_active = self.shifts.is_some();
        if let Some(bal) = self.options.bal {
            // Pooled correlation of untransformed estimates with targets.
            let mut all_est = Vec::new();
            let mut all_tgt = Vec::new();
            let mut per: Vec<Vec<f64>> = Vec::new();
            for (j, d) in self.collection.datasets().iter().enumerate() {
                let est = self.predict_raw(d.train().features().view(), j)?;
                all_est.extend_from_slice(&est);
                all_tgt.extend_from_slice(d.train().scores());
                per.push(est);
            }
            let r = lcc(&all_est, &all_tgt).unwrap_or(f64::NAN);
            train_lcc = Some(r);
            if self.shifts.is_none() && r > bal.r_th {
                self.shifts = Some(vec![ScaleShift::IDENTITY; self.collection.len()]);
            }
            if let Some(shifts) = self.shifts.as_mut() {
                for (j, d) in self.collection.datasets().iter().enumerate() {
                    if j != self.collection.reference_index() {
                        shifts[j] = ls_fit_scale_shift(d.train().scores(), &per[j])?.shift;
                    }
                }
            }
        }
        for (j, d) in self.collection.datasets().iter().enumerate() {
            let est = self.predict(d.train().features().view(), j)?;
            train_loss.push(mse(&est, d.train().scores())?);
        }
        let validation_loss = self.validation_loss(&train_loss)?;
        if !validation_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} validation loss in epoch {}",
                self.options.name, self.epoch
            )));
        }
        let (audio_hash, alignment_hash) = match &self.estimator {
            Estimator::Bare { audio } => (hash_f64s(audio.values()), None),
            Estimator::Aligned(m) => (m.audio_hash(), Some(format!("{:016x}", m.alignment_hash()))),
        };
        Ok(EpochLog {
            phase: self.options.name.to_string(),
            epoch: self.epoch,
            train_loss,
            validation_loss,
            train_lcc,
            frozen,
            bal_active,
            scale_shift: self.shifts.clone(),
            audio_hash: format!("{audio_hash:016x}"),
            alignment_hash,
        })
    }

    /// Dataset-balanced validation loss; falls back to the training loss of
    /// datasets without validation files.
    fn validation_loss(&self, train_loss: &[f64]) -> Result<f64> {
        let mut losses = Vec::with_capacity(self.collection.len());
        for (j, d) in self.collection.datasets().iter().enumerate() {
            if d.validation().is_empty() {
                losses.push(train_loss[j]);
            } else {
                let est = self.predict(d.validation().features().view(), j)?;
                losses.push(mse(&est, d.validation().scores())?);
            }
        }
        Ok(exact_sum(losses.iter().copied()) / losses.len() as f64)
    }

    /// Epoch loop with early stopping; returns the best-validation estimator.
    fn run(mut self, log: &mut Vec<EpochLog>) -> Result<(Estimator, Option<Vec<ScaleShift>>)> {
        let mut stopper = EarlyStopping::new(self.config.patience);
        let mut best = (self.estimator.clone(), self.shifts.clone());
        for _ in 0..self.options.max_epochs {
            let entry = self.run_epoch()?;
            let verdict = stopper.record(entry.validation_loss);
            log.push(entry);
            if verdict.improved {
                best = (self.estimator.clone(), self.shifts.clone());
            }
            if verdict.stop && self.epoch >= self.options.freeze_epochs {
                break;
            }
        }
        Ok(best)
    }
}

/// Loss and gradients of one `weight * mse` term. `shift` applies a BAL
/// transform to a bare network's output.
fn term_grads(
    estimator: &Estimator,
    x: ArrayView2<'_, f64>,
    y: &[f64],
    index: usize,
    weight: f64,
    shift: Option<ScaleShift>,
    train_audio: bool,
) -> Result<(f64, ModelGrads)> {
    match estimator {
        Estimator::Aligned(m) => m.loss_and_grads(x, y, m.indicator(index)?, weight, train_audio),
        Estimator::Bare { audio } => {
            let trace = audio.trace(x)?;
            let raw = trace.output();
            let (pred, scale): (Vec<f64>, f64) = match shift {
                Some(s) => (raw.iter().map(|&v| s.apply(v)).collect(), s.a),
                None => (raw.to_vec(), 1.0),
            };
            let loss = weight * mse(&pred, y)?;
            let mut upstream = mse_gradient(ndarray::ArrayView1::from(&pred[..]), y, weight);
            if shift.is_some() {
                upstream.mapv_inplace(|g| scale * g);
            }
            let (g, _) = audio.backward_traced(&trace, upstream.view())?;
            Ok((
                loss,
                ModelGrads {
                    audio: Some(g.values),
                    align: Vec::new(),
                    embeddings: Vec::new(),
                },
            ))
        }
    }
}

fn fresh_audio(feature_dim: usize, config: &TrainConfig) -> Result<ParamVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "audionet", "init"));
    Ok(ParamVector::glorot(config.model.audio_layout(feature_dim)?, &mut rng))
}

fn checkpoint(
    regimen: RegimenKind,
    collection: &DatasetCollection,
    estimator: Estimator,
    scale_shift: Option<Vec<ScaleShift>>,
) -> Checkpoint {
    Checkpoint {
        regimen,
        datasets: collection.names(),
        reference_index: collection.reference_index(),
        feature_dim: collection.feature_dim(),
        estimator,
        scale_shift,
    }
}

fn single_phase(
    regimen: RegimenKind,
    audio: ParamVector,
    collection: &DatasetCollection,
    config: &TrainConfig,
    max_epochs: usize,
    bal: Option<BalSettings>,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_audio(&audio, collection)?;
    let options = PhaseOptions {
        name: "train",
        max_epochs,
        freeze_epochs: 0,
        bal,
        shuffle_seed: derive_seed(config.seed, "train", "shuffle"),
    };
    let mut log = Vec::new();
    let (best, shifts) = Phase::new(collection, config, options, Estimator::Bare { audio }).run(&mut log)?;
    Ok(TrainOutcome {
        checkpoint: checkpoint(regimen, collection, best, shifts),
        log,
    })
}

fn check_audio(audio: &ParamVector, collection: &DatasetCollection) -> Result<()> {
    if audio.layout().input_width() != Some(collection.feature_dim()) {
        return Err(Error::Shape(format!(
            "AudioNet expects {:?} features, collection has {}",
            audio.layout().input_width(),
            collection.feature_dim()
        )));
    }
    Ok(())
}

/// Trains an AudioNet on the collection's reference dataset alone.
pub fn pretrain(audio: ParamVector, collection: &DatasetCollection, config: &TrainConfig) -> Result<TrainOutcome> {
    let single = collection.single(collection.reference_index())?;
    let mut out = single_phase(RegimenKind::Individual, audio, &single, config, config.epochs_pretrain, None)?;
    for e in &mut out.log {
        e.phase = "pretrain".into();
    }
    Ok(out)
}

/// Trains an AudioNet on dataset `index` alone.
pub fn train_individual(
    audio: ParamVector,
    collection: &DatasetCollection,
    index: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let single = collection.single(index)?;
    single_phase(RegimenKind::Individual, audio, &single, config, config.epochs_pretrain, None)
}

/// Pooled training on every dataset at once, no pretraining.
pub fn train_conventional(
    audio: ParamVector,
    collection: &DatasetCollection,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let epochs = config.epochs_pretrain + config.epochs_finetune;
    single_phase(RegimenKind::All, audio, collection, config, epochs, None)
}

/// Pooled training with per-dataset scale/shift refit after every epoch once
/// the pooled training correlation exceeds `config.r_th`.
pub fn train_bal(audio: ParamVector, collection: &DatasetCollection, config: &TrainConfig) -> Result<TrainOutcome> {
    let epochs = config.epochs_pretrain + config.epochs_finetune;
    let bal = BalSettings { r_th: config.r_th };
    single_phase(RegimenKind::AllBal, audio, collection, config, epochs, Some(bal))
}

/// Finetunes a pretrained AudioNet on every dataset at once, optionally with
/// a fresh AlignmentNet. Optimizer state starts from scratch.
pub fn finetune_mdf(
    pretrained: &Checkpoint,
    collection: &DatasetCollection,
    config: &TrainConfig,
    with_alignnet: bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    if pretrained.reference_name() != collection.reference().name() {
        return Err(Error::Config(format!(
            "checkpoint was pretrained on {} but the collection's reference is {}",
            pretrained.reference_name(),
            collection.reference().name()
        )));
    }
    let audio = pretrained.estimator.audio().clone();
    check_audio(&audio, collection)?;
    let (estimator, regimen, freeze_epochs) = if with_alignnet {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "alignnet", "init"));
        let model = AlignModel::with_audio(
            audio,
            collection.len(),
            collection.reference_index(),
            &config.model,
            &mut rng,
        )?;
        (Estimator::Aligned(model), RegimenKind::AllMdfAlignnet, config.freeze_epochs)
    } else {
        (Estimator::Bare { audio }, RegimenKind::AllMdf, 0)
    };
    let options = PhaseOptions {
        name: "finetune",
        max_epochs: config.epochs_finetune,
        freeze_epochs,
        bal: None,
        shuffle_seed: derive_seed(config.seed, "finetune", "shuffle"),
    };
    let mut log = Vec::new();
    let (best, _) = Phase::new(collection, config, options, estimator).run(&mut log)?;
    Ok(TrainOutcome {
        checkpoint: checkpoint(regimen, collection, best, None),
        log,
    })
}

/// Pretrain on the reference, then finetune on all datasets.
pub fn train_mdf(collection: &DatasetCollection, config: &TrainConfig, with_alignnet: bool) -> Result<TrainOutcome> {
    let pre = pretrain(fresh_audio(collection.feature_dim(), config)?, collection, config)?;
    let mut out = finetune_mdf(&pre.checkpoint, collection, config, with_alignnet)?;
    let mut log = pre.log;
    log.append(&mut out.log);
    out.log = log;
    Ok(out)
}

/// Runs a regimen from a freshly initialized AudioNet. `individual` needs
/// `dataset`.
pub fn train_regimen(
    regimen: RegimenKind,
    collection: &DatasetCollection,
    config: &TrainConfig,
    dataset: Option<usize>,
) -> Result<TrainOutcome> {
    let audio = || fresh_audio(collection.feature_dim(), config);
    match regimen {
        RegimenKind::Individual => {
            let index = dataset.ok_or_else(|| Error::Config("individual training needs a dataset".into()))?;
            train_individual(audio()?, collection, index, config)
        }
        RegimenKind::All => train_conventional(audio()?, collection, config),
        RegimenKind::AllBal => train_bal(audio()?, collection, config),
        RegimenKind::AllMdf => train_mdf(collection, config, false),
        RegimenKind::AllMdfAlignnet => train_mdf(collection, config, true),
    }
}

/// Full-batch dataset-balanced loss over the training splits and its
/// gradient, accumulated sample by sample with correctly rounded sums.
///
/// Meant for checks on small fixtures: the result is independent of sample
/// order, and duplicating every sample of a dataset `2^k` times leaves both
/// the loss and the gradient bit-identical.
pub fn weighted_objective(estimator: &Estimator, collection: &DatasetCollection) -> Result<(f64, ModelGrads)> {
    let n_d = collection.len() as f64;
    let mut per_loss = Vec::with_capacity(collection.len());
    let mut per_grads: Vec<ModelGrads> = Vec::with_capacity(collection.len());
    for (j, d) in collection.datasets().iter().enumerate() {
        let train = d.train();
        let est = estimator.predict(train.features().view(), j)?;
        per_loss.push(mse(est.as_slice().expect("contiguous"), train.scores())?);
        // d/dθ of sum_i (ŷ_i - y_i)^2 / 2, one sample at a time.
        let mut samples: Vec<ModelGrads> = Vec::with_capacity(train.len());
        for i in 0..train.len() {
            let x = train.features().slice(ndarray::s![i..i + 1, ..]);
            let (_, g) = term_grads(estimator, x, &train.scores()[i..i + 1], j, 0.5, None, true)?;
            samples.push(g);
        }
        let scale = 2.0 / train.len() as f64;
        let sum_col = |pick: &dyn Fn(&ModelGrads) -> &[f64]| -> Vec<f64> {
            let width = pick(&samples[0]).len();
            (0..width)
                .map(|p| exact_sum(samples.iter().map(|g| pick(g)[p])) * scale)
                .collect()
        };
        per_grads.push(ModelGrads {
            audio: Some(sum_col(&|g| g.audio.as_deref().unwrap_or(&[]))),
            align: sum_col(&|g| &g.align),
            embeddings: sum_col(&|g| &g.embeddings),
        });
    }
    let combine = |pick: &dyn Fn(&ModelGrads) -> &[f64]| -> Vec<f64> {
        let width = pick(&per_grads[0]).len();
        (0..width)
            .map(|p| exact_sum(per_grads.iter().map(|g| pick(g)[p])) / n_d)
            .collect()
    };
    let grads = ModelGrads {
        audio: Some(combine(&|g| g.audio.as_deref().unwrap_or(&[]))),
        align: combine(&|g| &g.align),
        embeddings: combine(&|g| &g.embeddings),
    };
    Ok((exact_sum(per_loss) / n_d, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs_pretrain: 5,
            epochs_finetune: 5,
            batch_size: 4,
            step_size: 0.01,
            patience: 100,
            model: ModelConfig {
                audio_hidden: vec![8],
                embedding_dim: 2,
                align_width: 4,
                align_hidden_layers: 2,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn weighted_loss_examples() {
        let a = [1.0, 2.0];
        assert_eq!(weighted_loss(&[(&a, &a)]).unwrap(), 0.0);
        // per-dataset MSEs 4 and 2
        let loss = weighted_loss(&[(&[0.0, 0.0], &[2.0, 2.0]), (&[0.0], &[2f64.sqrt()])]).unwrap();
        assert!((loss - 3.0).abs() < 1e-15);
        assert!(weighted_loss(&[]).is_err());
        assert!(weighted_loss(&[(&[], &[])]).is_err());
    }

    #[test]
    fn weighted_loss_is_not_sample_pooled() {
        let ta = [0.0, 0.0];
        let ea = [1.0, -1.0];
        let tb = vec![3.0; 1000];
        let l = weighted_loss(&[(&ta, &ea), (&tb, &tb)]).unwrap();
        assert_eq!(l, 0.5);
        // brute-force pooled MSE over all 1002 samples
        let pooled: f64 = (1.0 + 1.0) / 1002.0;
        assert!((pooled - 0.002).abs() < 1e-4);
        assert!(l > 100.0 * pooled);
    }

    #[test]
    fn ls_fit_examples() {
        let x = [1.0, 2.0, 3.5, 4.0];
        let fit = ls_fit_scale_shift(&x, &x).unwrap();
        assert!(!fit.degenerate);
        assert!((fit.shift.a - 1.0).abs() < 1e-15 && fit.shift.b.abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let fit = ls_fit_scale_shift(&y, &x).unwrap();
        assert!((fit.shift.a - 2.0).abs() < 1e-14 && (fit.shift.b - 1.0).abs() < 1e-14);
        let flat = ls_fit_scale_shift(&x, &[2.0; 4]).unwrap();
        assert!(flat.degenerate);
        assert_eq!(flat.shift, ScaleShift::IDENTITY);
        assert!(ls_fit_scale_shift(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn early_stopping_rules() {
        let mut s = EarlyStopping::new(0);
        assert!(s.record(1.0).stop);

        let mut s = EarlyStopping::new(3);
        let stops: Vec<bool> = (0..5).map(|_| s.record(2.0).stop).collect();
        assert_eq!(stops, vec![false, false, false, true, true]);

        let mut s = EarlyStopping::new(2);
        assert!((0..10).all(|i| !s.record(10.0 - i as f64).stop));
        assert_eq!(s.best_epoch(), 10);
    }

    #[test]
    fn patience_zero_runs_one_epoch() {
        let c = fixtures::conflicting_targets();
        let cfg = TrainConfig {
            patience: 0,
            ..tiny_config()
        };
        let out = train_conventional(fresh_audio(c.feature_dim(), &cfg).unwrap(), &c, &cfg).unwrap();
        assert_eq!(out.log.len(), 1);
    }

    #[test]
    fn plateau_stops_after_patience() {
        let c = fixtures::conflicting_targets();
        let cfg = TrainConfig {
            patience: 3,
            step_size: 0.0,
            ..tiny_config()
        };
        let out = train_conventional(fresh_audio(c.feature_dim(), &cfg).unwrap(), &c, &cfg).unwrap();
        assert_eq!(out.log.len(), 4);
    }

    #[test]
    fn improving_run_reaches_epoch_limit() {
        let c = fixtures::affine_corpus().single(0).unwrap();
        let cfg = TrainConfig {
            patience: 2,
            optimizer: OptimizerKind::Sgd,
            step_size: 1e-3,
            ..tiny_config()
        };
        let out = train_conventional(fresh_audio(c.feature_dim(), &cfg).unwrap(), &c, &cfg).unwrap();
        assert_eq!(out.log.len(), 10);
        assert!(out.log.windows(2).all(|w| w[1].validation_loss < w[0].validation_loss));
    }

    #[test]
    fn freeze_holds_audio_fixed_each_step() {
        let c = fixtures::conflicting_targets();
        let cfg = TrainConfig {
            freeze_epochs: 2,
            ..tiny_config()
        };
        let audio = fresh_audio(c.feature_dim(), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = AlignModel::with_audio(audio, c.len(), 0, &cfg.model, &mut rng).unwrap();
        let before_audio = model.audio_hash();
        let before_align = model.alignment_hash();
        let options = PhaseOptions {
            name: "finetune",
            max_epochs: 3,
            freeze_epochs: 2,
            bal: None,
            shuffle_seed: 0,
        };
        let mut phase = Phase::new(&c, &cfg, options, Estimator::Aligned(model));
        let hash = |p: &Phase| match &p.estimator {
            Estimator::Aligned(m) => (m.audio_hash(), m.alignment_hash()),
            _ => unreachable!(),
        };
        for _ in 0..2 * phase.steps_per_epoch() {
            phase.step().unwrap();
            assert_eq!(hash(&phase).0, before_audio);
        }
        assert_ne!(hash(&phase).1, before_align);
        phase.epoch = 2;
        phase.step().unwrap();
        assert_ne!(hash(&phase).0, before_audio);
    }

    #[test]
    fn regimen_names_round_trip() {
        for r in RegimenKind::ALL {
            assert_eq!(r.as_str().parse::<RegimenKind>().unwrap(), r);
        }
        assert!("mdf".parse::<RegimenKind>().is_err());
    }

    #[test]
    fn reference_mismatch_is_rejected() {
        let c = fixtures::conflicting_targets();
        let cfg = tiny_config();
        let pre = pretrain(fresh_audio(c.feature_dim(), &cfg).unwrap(), &c, &cfg).unwrap();
        let swapped = DatasetCollection::new(vec![
            c.datasets()[0].clone().with_reference(false),
            c.datasets()[1].clone().with_reference(true),
        ])
        .unwrap();
        assert!(matches!(finetune_mdf(&pre.checkpoint, &swapped, &cfg, true), Err(Error::Config(_))));
    }

    #[test]
    fn individual_needs_dataset() {
        let c = fixtures::conflicting_targets();
        assert!(train_regimen(RegimenKind::Individual, &c, &tiny_config(), None).is_err());
    }

    #[test]
    fn weighted_objective_matches_finite_differences() {
        let c = fixtures::conflicting_targets();
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = AlignModel::new(c.feature_dim(), c.len(), 0, &cfg.model, &mut rng).unwrap();
        let est = Estimator::Aligned(m.clone());
        let (_, g) = weighted_objective(&est, &c).unwrap();
        let eps = 1e-6;
        for i in 0..m.align_params().len() {
            let mut up = m.clone();
            up.align_mut().values_mut()[i] += eps;
            let mut down = m.clone();
            down.align_mut().values_mut()[i] -= eps;
            let lu = weighted_objective(&Estimator::Aligned(up), &c).unwrap().0;
            let ld = weighted_objective(&Estimator::Aligned(down), &c).unwrap().0;
            let numeric = (lu - ld) / (2.0 * eps);
            assert!((numeric - g.align[i]).abs() < 1e-6 * numeric.abs().max(1.0), "{i}");
        }
    }
}
