//! The optimisation loop: per-sentence losses, Adam with global-norm
//! clipping, validation-driven learning-rate decay and best-checkpoint
//! selection.

mod optim;

pub use optim::{clip_global_norm, global_norm, Adam};

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::data::{make_batches, Batch, SentencePair};
use crate::model::{
    decode_fixed, rollout_adaptive, Checkpoint, Dropout, ModelConfig, ModelError, ModelParams,
    Network, Policy, RolloutMode,
};
use crate::objectives::{ctc_loss, delay_penalty, sce_masked, LossBundle, ObjectiveError};
use crate::par;
use crate::tensor::{set_precision, Precision, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("non-finite loss in batch {batch}, sentence {sentence}: ent={ent} ctc={ctc} del={del}{}", diagnostic.as_ref().map(|d| format!(" ({d})")).unwrap_or_default())]
    NonFinite {
        batch: usize,
        sentence: usize,
        ent: f64,
        ctc: f64,
        del: f64,
        diagnostic: Option<String>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Which policy is trained, and therefore which losses are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    WaitK,
    Adaptive,
    FullSentence,
}

impl Mode {
    pub fn policy(self, k: usize) -> Policy {
        match self {
            Mode::WaitK => Policy::WaitK(k),
            Mode::Adaptive => Policy::Adaptive,
            Mode::FullSentence => Policy::FullSentence,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::WaitK => "waitk",
            Mode::Adaptive => "adaptive",
            Mode::FullSentence => "full-sentence",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "waitk" | "wait-k" => Ok(Mode::WaitK),
            "adaptive" => Ok(Mode::Adaptive),
            "full-sentence" | "full" => Ok(Mode::FullSentence),
            _ => Err(format!("unknown mode {s:?} (expected waitk, adaptive or full-sentence)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub k: usize,
    pub alpha: f64,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Initial output bias of `<wait>` in adaptive mode.
    pub wait_bias: f64,
    pub init_scale: f64,
    /// Record elapsed seconds in the training log; off keeps logs reproducible.
    pub log_wallclock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Adaptive,
            k: 3,
            alpha: 0.0,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            dropout: 0.3,
            batch_size: 64,
            embed_dim: 512,
            hidden_dim: 512,
            layers: 2,
            max_epochs: 10,
            seed: 1,
            precision: Precision::F32,
            wait_bias: 3.0,
            init_scale: 0.1,
            log_wallclock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return fail(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.batch_size == 0 || self.embed_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return fail("batch_size, embed_dim, hidden_dim and layers must be positive".into());
        }
        if self.mode == Mode::WaitK && self.k == 0 {
            return fail("k must be >= 1".into());
        }
        Ok(())
    }

    pub fn model_config(&self, source_vocab: usize, target_vocab: usize) -> ModelConfig {
        ModelConfig {
            source_vocab,
            target_vocab,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            init_scale: self.init_scale,
            wait_bias: if self.mode == Mode::Adaptive { self.wait_bias } else { 0.0 },
        }
    }

    pub fn policy(&self) -> Policy {
        self.mode.policy(self.k)
    }
}

/// Optimiser and schedule state carried across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub adam: Adam,
    pub learning_rate: f64,
    pub previous_val: Option<f64>,
    pub best_val: f64,
    pub best_epoch: Option<usize>,
    pub best_checkpoint: Option<PathBuf>,
    pub best_params: Option<ModelParams>,
    pub lr_history: Vec<f64>,
}

impl TrainState {
    pub fn new(params: &ModelParams, config: &TrainConfig) -> Self {
        let sizes: Vec<usize> = params.params.iter().map(|p| p.len()).collect();
        Self {
            epoch: 0,
            adam: Adam::new(&sizes),
            learning_rate: config.learning_rate,
            previous_val: None,
            best_val: f64::INFINITY,
            best_epoch: None,
            best_checkpoint: None,
            best_params: None,
            lr_history: vec![config.learning_rate],
        }
    }
}

/// Loss of one sentence under the configured mode. Dropout is active when
/// the network carries it.
///
/// When `<wait>` was only available at steps too few to separate the
/// repeated tokens of the reference, no CTC path exists. The CTC term is
/// then left out for this sentence and its diagnostic is returned.
pub fn sentence_loss(
    net: &Network<'_>,
    pair: &SentencePair,
    config: &TrainConfig,
) -> Result<(LossBundle, Option<String>), TrainError> {
    match config.mode {
        Mode::WaitK | Mode::FullSentence => {
            let r = decode_fixed(net, &pair.source, config.policy(), Some(&pair.target), 0, false)?;
            Ok((LossBundle::sce_only(sce_masked(&r, &pair.target)?)?, None))
        }
        Mode::Adaptive => {
            let r = rollout_adaptive(
                net,
                &pair.source,
                RolloutMode::Train {
                    reference: &pair.target,
                },
                false,
            )?;
            let ent = sce_masked(&r, &pair.target)?;
            let ctc = ctc_loss(&r.log_probs, &pair.target)?;
            let del = delay_penalty(&r)?;
            let (ctc_term, dropped) = match ctc.diagnostic {
                Some(d) if ctc.value.item() == f64::INFINITY => (Tensor::scalar(0.0), Some(d)),
                _ => (ctc.value, None),
            };
            Ok((LossBundle::new(ent, ctc_term, del, config.alpha)?, dropped))
        }
    }
}

/// Loss terms `[ent, ctc, del, total]` of one sentence.
pub type LossValues = [f64; 4];

/// Mean loss terms and mean gradient over a batch.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: LossValues,
    pub grads: Vec<Vec<f64>>,
    /// Sentences whose CTC term was left out as infeasible.
    pub ctc_dropped: usize,
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed ^ 0x5DEE_CE66_D1CE_4E5B, |h, &p| {
        let mut z = h.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

/// Number of partial sums a batch is reduced through. Fixed, so results do
/// not depend on the thread count.
const REDUCTION_CHUNKS: usize = 8;

struct Partial {
    loss: LossValues,
    grads: Vec<Vec<f64>>,
    ctc_dropped: usize,
}

fn add_into(acc: &mut [Vec<f64>], g: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
}

/// Mean loss and gradient of `pairs`. Sentences are split into a fixed
/// number of contiguous chunks that run in parallel; each chunk sums in
/// sentence order and the chunk sums are added in chunk order.
pub fn batch_gradient(
    params: &ModelParams,
    pairs: &[SentencePair],
    config: &TrainConfig,
    dropout_seed: Option<u64>,
    batch_index: usize,
) -> Result<BatchGradient, TrainError> {
    let n = pairs.len().max(1);
    let chunk = n.div_ceil(REDUCTION_CHUNKS);
    let chunks: Vec<(usize, &[SentencePair])> = pairs
        .chunks(chunk)
        .enumerate()
        .map(|(c, s)| (c * chunk, s))
        .collect();
    let partials = par::map(&chunks, |_, &(offset, members)| -> Result<Partial, TrainError> {
        let mut loss = [0.0; 4];
        let mut grads: Vec<Vec<f64>> = params.params.iter().map(|p| vec![0.0; p.len()]).collect();
        let mut ctc_dropped = 0;
        for (i, pair) in members.iter().enumerate() {
            let sentence = offset + i;
            let bound = params.bind(true)?;
            let dropout = dropout_seed.map(|s| Dropout::new(config.dropout, mix(s, &[sentence as u64])));
            let net = Network::new(&bound, dropout.as_ref());
            let (bundle, dropped) = sentence_loss(&net, pair, config)?;
            let values = bundle.values();
            if !values.iter().all(|v| v.is_finite()) {
                return Err(TrainError::NonFinite {
                    batch: batch_index,
                    sentence,
                    ent: values[0],
                    ctc: values[1],
                    del: values[2],
                    diagnostic: dropped,
                });
            }
            ctc_dropped += usize::from(dropped.is_some());
            bundle.total.backward().map_err(ModelError::from)?;
            add_into(&mut grads, &bound.grads());
            loss.iter_mut().zip(values).for_each(|(a, b)| *a += b);
        }
        Ok(Partial {
            loss,
            grads,
            ctc_dropped,
        })
    });
    let mut loss = [0.0; 4];
    let mut grads: Vec<Vec<f64>> = params.params.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut ctc_dropped = 0;
    for p in partials {
        let p = p?;
        ctc_dropped += p.ctc_dropped;
        add_into(&mut grads, &p.grads);
        loss.iter_mut().zip(p.loss).for_each(|(a, b)| *a += b);
    }
    let scale = 1.0 / n as f64;
    grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= scale);
    loss.iter_mut().for_each(|v| *v *= scale);
    Ok(BatchGradient {
        loss,
        grads,
        ctc_dropped,
    })
}

/// Mean loss over `pairs` without dropout or gradients.
pub fn evaluate_loss(params: &ModelParams, pairs: &[SentencePair], config: &TrainConfig) -> Result<LossValues, TrainError> {
    let per = par::map(pairs, |_, pair| -> Result<LossValues, TrainError> {
        let bound = params.bind(false)?;
        let net = Network::new(&bound, None);
        Ok(sentence_loss(&net, pair, config)?.0.values())
    });
    let mut total = [0.0; 4];
    for v in per {
        total.iter_mut().zip(v?).for_each(|(a, b)| *a += b);
    }
    let n = pairs.len().max(1) as f64;
    total.iter_mut().for_each(|v| *v /= n);
    Ok(total)
}

/// One clipped Adam step.
pub fn apply_gradient(
    params: &mut ModelParams,
    state: &mut TrainState,
    mut grads: Vec<Vec<f64>>,
    clip_norm: f64,
) -> f64 {
    let norm = clip_global_norm(&mut grads, clip_norm);
    let mut slices: Vec<&mut [f64]> = params
        .params
        .iter_mut()
        .map(|p| Arc::make_mut(&mut p.value).as_mut_slice())
        .collect();
    state.adam.update(&mut slices, &grads, state.learning_rate);
    params.round_to_precision();
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sentence loss terms `[ent, ctc, del, total]` over the epoch.
    pub train_loss: LossValues,
    pub max_grad_norm: f64,
    pub steps: usize,
    pub ctc_dropped: usize,
}

/// One pass over `batches` with dropout on.
pub fn train_epoch(
    params: &mut ModelParams,
    state: &mut TrainState,
    batches: &[Batch],
    config: &TrainConfig,
) -> Result<EpochStats, TrainError> {
    config.validate()?;
    let mut sum = [0.0; 4];
    let mut sentences = 0.0;
    let mut max_norm: f64 = 0.0;
    let mut ctc_dropped = 0;
    for (b, batch) in batches.iter().enumerate() {
        let pairs = batch.pairs();
        let seed = mix(config.seed, &[state.epoch as u64, b as u64]);
        let g = batch_gradient(params, &pairs, config, Some(seed), b)?;
        let weight = pairs.len() as f64;
        sum.iter_mut().zip(g.loss).for_each(|(a, v)| *a += v * weight);
        sentences += weight;
        ctc_dropped += g.ctc_dropped;
        max_norm = max_norm.max(apply_gradient(params, state, g.grads, config.clip_norm));
    }
    let stats = EpochStats {
        epoch: state.epoch,
        train_loss: sum.map(|v| v / sentences.max(1.0)),
        max_grad_norm: max_norm,
        steps: batches.len(),
        ctc_dropped,
    };
    state.epoch += 1;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOutcome {
    pub val_loss: f64,
    pub decayed: bool,
    pub improved: bool,
}

pub const LR_DECAY: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Applies one epoch's validation loss to the schedule: decay the learning
/// rate by 1/sqrt(2) if the loss is strictly larger than the previous
/// epoch's, and record (and optionally write) a new best checkpoint if it
/// is strictly smaller than every earlier one.
pub fn schedule_step(
    params: &ModelParams,
    state: &mut TrainState,
    val_loss: f64,
    checkpoint: Option<(&Path, &[(String, String)])>,
) -> Result<ValidationOutcome, TrainError> {
    let decayed = state.previous_val.is_some_and(|prev| val_loss > prev);
    if decayed {
        state.learning_rate *= LR_DECAY;
    }
    state.lr_history.push(state.learning_rate);
    state.previous_val = Some(val_loss);
    let improved = val_loss < state.best_val;
    if improved {
        state.best_val = val_loss;
        state.best_epoch = Some(state.epoch);
        state.best_params = Some(params.clone());
        if let Some((path, meta)) = checkpoint {
            Checkpoint {
                params: params.clone(),
                epoch: state.epoch,
                val_loss,
                meta: meta.to_vec(),
            }
            .save(path)?;
            state.best_checkpoint = Some(path.to_path_buf());
        }
    }
    Ok(ValidationOutcome {
        val_loss,
        decayed,
        improved,
    })
}

/// Computes the validation loss (dropout off, same objective as training)
/// and feeds it to [`schedule_step`].
pub fn validate_and_schedule(
    params: &ModelParams,
    state: &mut TrainState,
    val_pairs: &[SentencePair],
    config: &TrainConfig,
    checkpoint: Option<(&Path, &[(String, String)])>,
) -> Result<ValidationOutcome, TrainError> {
    if val_pairs.is_empty() {
        return Err(TrainError::Config("validation set is empty".into()));
    }
    let val = evaluate_loss(params, val_pairs, config)?[3];
    schedule_step(params, state, val, checkpoint)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
    pub seconds: Option<f64>,
}

impl LogRow {
    /// Tab-separated: epoch, train loss, val loss, learning rate, seconds
    /// (`-` when wall-clock logging is off).
    pub fn to_tsv(&self) -> String {
        let secs = self.seconds.map_or_else(|| "-".to_owned(), |s| format!("{s:.3}"));
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6e}\t{}",
            self.epoch, self.train_loss, self.val_loss, self.learning_rate, secs
        )
    }
}

/// Where a training run writes its artefacts.
#[derive(Debug, Clone)]
pub struct RunOutput<'a> {
    pub checkpoint: &'a Path,
    pub log: &'a Path,
    pub meta: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelParams,
    pub best_val: f64,
    /// 1-based epoch of the best validation loss.
    pub best_epoch: usize,
    pub log: Vec<LogRow>,
    /// The initial rate followed by the rate after each epoch.
    pub lr_history: Vec<f64>,
}

/// Full training run: seeded initialisation, `max_epochs` epochs, per-epoch
/// validation, learning-rate schedule and best-model selection. Sets the
/// process-wide arithmetic precision from `config`.
pub fn fit(
    config: &TrainConfig,
    source_vocab: usize,
    target_vocab: usize,
    train: &[SentencePair],
    valid: &[SentencePair],
    output: Option<&RunOutput<'_>>,
    mut progress: impl FnMut(&LogRow),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::Config("training set is empty".into()));
    }
    set_precision(config.precision);
    let mut params = ModelParams::init(config.model_config(source_vocab, target_vocab), config.seed);
    let mut state = TrainState::new(&params, config);
    let mut log_file = match output {
        Some(out) => Some(std::fs::File::create(out.log).map_err(|source| TrainError::Io {
            path: out.log.to_path_buf(),
            source,
        })?),
        None => None,
    };
    let start = std::time::Instant::now();
    let mut rows = Vec::with_capacity(config.max_epochs);
    for epoch in 0..config.max_epochs {
        let batches = make_batches(train, config.batch_size, mix(config.seed, &[epoch as u64, 0xBA7C]));
        let stats = train_epoch(&mut params, &mut state, &batches, config)?;
        let outcome = validate_and_schedule(
            &params,
            &mut state,
            valid,
            config,
            output.map(|o| (o.checkpoint, o.meta.as_slice())),
        )?;
        let row = LogRow {
            epoch: epoch + 1,
            train_loss: stats.train_loss[3],
            val_loss: outcome.val_loss,
            learning_rate: state.learning_rate,
            seconds: config.log_wallclock.then(|| start.elapsed().as_secs_f64()),
        };
        if let (Some(f), Some(out)) = (log_file.as_mut(), output) {
            writeln!(f, "{}", row.to_tsv()).map_err(|source| TrainError::Io {
                path: out.log.to_path_buf(),
                source,
            })?;
        }
        progress(&row);
        rows.push(row);
    }
    Ok(TrainOutcome {
        best: state.best_params.unwrap_or(params),
        best_val: state.best_val,
        best_epoch: state.best_epoch.unwrap_or(0),
        log: rows,
        lr_history: state.lr_history,
    })
}
