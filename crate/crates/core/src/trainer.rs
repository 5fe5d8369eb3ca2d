//! Per-sentence SGD with BPTT, sparse l2 decay, dropout and early stopping.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sgd_step, AutodiffError, Graph, NodeId, Tensor, LOG_FLOOR};
use crate::corpus::{delexicalize_all, EncodedDa, Example, Vocab, EOS_ID};
use crate::error::{Error, Result};
use crate::generator::{evaluate, BeamConfig};
use crate::metrics::EvalReport;
use crate::model::{checkpoint, CellVariant, Model, ModelConfig, StepMasks};

pub const CHECKPOINT_FILE: &str = "model.ckpt";

pub struct SequenceLoss {
    /// Scalar `−Σ_t ln p_t[y_t]`.
    pub loss: NodeId,
    /// Steps whose target probability fell below the log floor.
    pub clamped: usize,
}

/// Negative log-likelihood of `targets` under the softmax of each logit
/// vector.
pub fn sequence_nll(g: &mut Graph, logits: &[NodeId], targets: &[usize]) -> Result<SequenceLoss> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::Config(format!(
            "{} logit vectors for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let mut terms = Vec::with_capacity(targets.len());
    let mut clamped = 0;
    for (&l, &y) in logits.iter().zip(targets) {
        let p = g.softmax(l)?;
        let py = g.select(p, y)?;
        if g.value(py).item() < LOG_FLOOR {
            clamped += 1;
        }
        terms.push(g.log(py)?);
    }
    if clamped > 0 {
        log::warn!("{clamped} target probabilities clamped to {LOG_FLOOR:e} in the loss");
    }
    let total = g.add_all(&terms)?;
    let loss = g.neg(total)?;
    Ok(SequenceLoss { loss, clamped })
}

/// How the l2 term enters the updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L2Mode {
    /// Per-sentence updates; every `cadence`-th one also applies decay.
    #[default]
    EveryNth,
    /// Gradients of `cadence` sentences are summed into one update that
    /// includes decay.
    Accumulate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub variant: CellVariant,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after an epoch without
    /// validation-loss improvement.
    pub lr_decay: f64,
    pub l2: f64,
    pub l2_cadence: usize,
    pub l2_mode: L2Mode,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Stop as soon as the epoch's per-token training loss is below this.
    pub target_train_loss: Option<f64>,
    /// Pick the checkpoint by validation BLEU (ties: lower loss). When off,
    /// validation loss alone decides and no decoding happens per epoch.
    pub select_by_bleu: bool,
    pub eval_beam: BeamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 80,
            variant: CellVariant::Full,
            learning_rate: 0.1,
            lr_decay: 0.5,
            l2: 1e-4,
            l2_cadence: 5,
            l2_mode: L2Mode::EveryNth,
            dropout: 0.7,
            max_epochs: 50,
            patience: 5,
            seed: 1,
            clip_norm: 5.0,
            target_train_loss: None,
            select_by_bleu: true,
            eval_beam: BeamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Every problem with the configuration, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.hidden == 0 || !self.hidden.is_multiple_of(2) {
            p.push(format!("hidden size must be a positive even number, got {}", self.hidden));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            p.push(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            p.push(format!("lr decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            p.push(format!("l2 must be nonnegative, got {}", self.l2));
        }
        if self.l2_cadence == 0 {
            p.push("l2 cadence must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            p.push(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.max_epochs == 0 {
            p.push("max epochs must be at least 1".into());
        }
        if self.patience == 0 {
            p.push("patience must be at least 1".into());
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            p.push(format!("clip norm must be positive, got {}", self.clip_norm));
        }
        p.extend(self.eval_beam.validate());
        p
    }

    /// Whether the update after the `index`-th example (counted over the
    /// whole run from zero) includes the l2 term.
    pub fn l2_due(&self, index: usize) -> bool {
        (index + 1).is_multiple_of(self.l2_cadence)
    }
}

/// Patience counter on a loss that should decrease.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records one epoch. Returns `(improved, stop)`.
    pub fn observe(&mut self, loss: f64) -> (bool, bool) {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            (true, false)
        } else {
            self.bad_epochs += 1;
            (false, self.bad_epochs >= self.patience)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Per-token NLL over the epoch's training updates.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_bleu: Option<f64>,
    pub val_err: Option<f64>,
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub seed: u64,
    pub variant: CellVariant,
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub stop_reason: String,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_val_bleu: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters of the selected epoch.
    pub model: Model,
}

pub struct TrainData<'a> {
    pub vocab: &'a Vocab,
    pub train: &'a [Example],
    pub validation: &'a [Example],
}

struct Prepared {
    da: EncodedDa,
    targets: Vec<usize>,
}

fn prepare(vocab: &Vocab, examples: &[Example]) -> Result<Vec<Prepared>> {
    delexicalize_all(examples, &vocab.schema)
        .into_iter()
        .map(|ex| {
            let mut targets = vocab.ids(&ex.tokens);
            targets.push(EOS_ID);
            Ok(Prepared {
                da: vocab.encode_da(&ex.da)?,
                targets,
            })
        })
        .collect()
}

fn dropout_mask(g: &mut Graph, rng: &mut ChaCha8Rng, n: usize, rate: f64) -> NodeId {
    let keep = 1.0 - rate;
    let data = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    g.input(Tensor::vector(data))
}

/// Total NLL and token count of one sentence without dropout.
pub fn sentence_loss(model: &Model, da: &EncodedDa, targets: &[usize]) -> Result<f64> {
    let mut g = Graph::new(&model.params);
    let logits = model.teacher_forced_logits(&mut g, da, targets, |_| None)?;
    let nll = sequence_nll(&mut g, &logits, targets)?;
    Ok(g.value(nll.loss).item())
}

fn mean_loss(model: &Model, data: &[Prepared]) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0;
    for ex in data {
        total += sentence_loss(model, &ex.da, &ex.targets)?;
        tokens += ex.targets.len();
    }
    Ok(total / tokens.max(1) as f64)
}

/// Fresh model for a configuration and vocabulary.
pub fn init_model(vocab: &Vocab, cfg: &TrainConfig) -> Result<Model> {
    Model::init(ModelConfig::for_vocab(vocab, cfg.hidden, cfg.variant), cfg.seed)
}

fn diverged(epoch: usize, example: usize, reason: String, last_good: &Option<PathBuf>) -> Error {
    Error::Diverged {
        epoch,
        example,
        reason,
        last_good: last_good.clone(),
    }
}

/// Trains one model. `init` warm-starts from existing parameters; `out_dir`
/// receives the selected checkpoint; `on_epoch` sees every epoch record as
/// it is produced.
pub fn train(
    data: &TrainData,
    cfg: &TrainConfig,
    init: Option<Model>,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::Config("training needs nonempty train and validation splits".into()));
    }
    let expected = ModelConfig::for_vocab(data.vocab, cfg.hidden, cfg.variant);
    let mut model = match init {
        Some(m) if m.config != expected => {
            return Err(Error::Config(format!(
                "warm-start model {:?} does not match {:?}",
                m.config, expected
            )))
        }
        Some(m) => m,
        None => Model::init(expected, cfg.seed)?,
    };
    let train_set = prepare(data.vocab, data.train)?;
    let val_set = prepare(data.vocab, data.validation)?;
    let vocab_hash = data.vocab.hash();
    let ckpt_path = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(dir.join(CHECKPOINT_FILE))
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let n = model.hidden();
    let mut lr = cfg.learning_rate;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut grads = model.params.zero_grads();
    let mut seen = 0usize;
    let mut pending = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut epochs = Vec::new();
    let mut best: Option<(f64, f64, usize)> = None; // (bleu, val loss, epoch)
    let mut best_model = model.clone();
    let mut saved: Option<PathBuf> = None;
    let mut stop_reason = format!("reached max epochs ({})", cfg.max_epochs);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0;
        let mut clamped = 0;
        for (pos, &i) in order.iter().enumerate() {
            let ex = &train_set[i];
            let loss_value = {
                let mut g = Graph::new(&model.params);
                let rate = cfg.dropout;
                let logits = model.teacher_forced_logits(&mut g, &ex.da, &ex.targets, |g| {
                    (rate > 0.0).then(|| StepMasks {
                        input: dropout_mask(g, &mut rng, n, rate),
                        output: dropout_mask(g, &mut rng, n, rate),
                    })
                })?;
                let nll = sequence_nll(&mut g, &logits, &ex.targets)?;
                clamped += nll.clamped;
                let value = g.value(nll.loss).item();
                if !value.is_finite() {
                    return Err(diverged(epoch, i, format!("loss is {value}"), &saved));
                }
                let back = g.backward(nll.loss)?;
                g.accumulate_param_grads(&back, &mut grads);
                value
            };
            epoch_loss += loss_value;
            epoch_tokens += ex.targets.len();
            pending += 1;

            let (update, apply_l2) = match cfg.l2_mode {
                L2Mode::EveryNth => (true, cfg.l2_due(seen)),
                L2Mode::Accumulate => {
                    let due = cfg.l2_due(seen) || pos + 1 == order.len();
                    (due, due)
                }
            };
            seen += 1;
            if update {
                grads.clip_global_norm(cfg.clip_norm);
                match sgd_step(&mut model.params, &mut grads, lr, cfg.l2, apply_l2) {
                    Ok(()) => {}
                    Err(AutodiffError::NonFiniteGradient(name)) => {
                        return Err(diverged(
                            epoch,
                            i,
                            format!("non-finite gradient for {name}"),
                            &saved,
                        ))
                    }
                    Err(e) => return Err(e.into()),
                }
                pending = 0;
            }
        }
        debug_assert_eq!(pending, 0);

        let train_loss = epoch_loss / epoch_tokens.max(1) as f64;
        let val_loss = mean_loss(&model, &val_set)?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, 0, format!("validation loss is {val_loss}"), &saved));
        }
        let eval: Option<EvalReport> = if cfg.select_by_bleu {
            Some(evaluate(&model, data.vocab, data.validation, &cfg.eval_beam, "validation")?)
        } else {
            None
        };
        let val_bleu = eval.as_ref().map(|r| r.bleu.bleu);
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            val_loss,
            val_bleu,
            val_err: eval.as_ref().map(|r| r.err.corpus),
            clamped,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.4} train {train_loss:.4} val {val_loss:.4} bleu {}",
            val_bleu.map(|b| format!("{b:.4}")).unwrap_or_else(|| "-".into())
        );
        on_epoch(&record);
        epochs.push(record);

        let bleu = val_bleu.unwrap_or(0.0);
        let better = match best {
            None => true,
            Some((b, l, _)) => bleu > b || (bleu == b && val_loss < l),
        };
        if better {
            best = Some((bleu, val_loss, epoch));
            best_model = model.clone();
            if let Some(path) = &ckpt_path {
                checkpoint::save(path, &model, &vocab_hash)?;
                saved = Some(path.clone());
            }
        }

        if cfg.target_train_loss.is_some_and(|t| train_loss < t) {
            stop_reason = format!("training loss {train_loss:.5} below target");
            break;
        }
        let (improved, stop) = stopper.observe(val_loss);
        if stop {
            stop_reason = format!("no validation improvement for {} epochs", cfg.patience);
            break;
        }
        if !improved {
            lr *= cfg.lr_decay;
        }
    }

    let (best_bleu, best_val_loss, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        report: TrainReport {
            seed: cfg.seed,
            variant: cfg.variant,
            stopped_epoch: epochs.len(),
            epochs,
            stop_reason,
            best_epoch,
            best_val_loss,
            best_val_bleu: cfg.select_by_bleu.then_some(best_bleu),
            best_checkpoint: saved,
        },
        model: best_model,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedRun {
    pub report: TrainReport,
    pub test: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MultiSeedReport {
    pub runs: Vec<SeedRun>,
    /// Index of the run with the highest validation BLEU (lowest validation
    /// loss when BLEU selection is off).
    pub selected: usize,
    pub mean_val_bleu: Option<f64>,
    pub max_val_bleu: Option<f64>,
    pub mean_test_bleu: Option<f64>,
    pub mean_test_err: Option<f64>,
}

impl MultiSeedReport {
    /// Summary over finished runs. `runs` must not be empty.
    pub fn from_runs(runs: Vec<SeedRun>) -> Self {
        let reports: Vec<TrainReport> = runs.iter().map(|r| r.report.clone()).collect();
        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let val: Vec<f64> = reports.iter().filter_map(|r| r.best_val_bleu).collect();
        let tests: Vec<&EvalReport> = runs.iter().filter_map(|r| r.test.as_ref()).collect();
        MultiSeedReport {
            selected: select_run(&reports),
            max_val_bleu: val.iter().copied().reduce(f64::max),
            mean_val_bleu: mean(val),
            mean_test_bleu: mean(tests.iter().map(|t| t.bleu.bleu).collect()),
            mean_test_err: mean(tests.iter().map(|t| t.err.corpus).collect()),
            runs,
        }
    }
}

/// Index of the best run: highest validation BLEU, ties to the earlier run.
pub fn select_run(runs: &[TrainReport]) -> usize {
    let mut best = 0;
    for (i, r) in runs.iter().enumerate().skip(1) {
        let b = &runs[best];
        let better = match (r.best_val_bleu, b.best_val_bleu) {
            (Some(x), Some(y)) => x > y,
            _ => r.best_val_loss < b.best_val_loss,
        };
        if better {
            best = i;
        }
    }
    best
}

/// `k` runs with seeds `cfg.seed, cfg.seed + 1, ...`. Each run writes into
/// `out_dir/seed-<s>` when a directory is given. Test metrics are computed
/// for every run when a test split is supplied.
pub fn run_multi_seed(
    data: &TrainData,
    cfg: &TrainConfig,
    k: usize,
    test: Option<&[Example]>,
    out_dir: Option<&Path>,
) -> Result<(MultiSeedReport, Model)> {
    if k == 0 {
        return Err(Error::Config("need at least one run".into()));
    }
    let mut runs = Vec::with_capacity(k);
    let mut models = Vec::with_capacity(k);
    for i in 0..k {
        let seed = cfg.seed.wrapping_add(i as u64);
        let run_cfg = TrainConfig {
            seed,
            ..cfg.clone()
        };
        let dir = out_dir.map(|d| d.join(format!("seed-{seed}")));
        let outcome = train(data, &run_cfg, None, dir.as_deref(), &mut |_| {})?;
        let test_report = match test {
            Some(t) if !t.is_empty() => Some(evaluate(
                &outcome.model,
                data.vocab,
                t,
                &cfg.eval_beam,
                &format!("seed-{seed}"),
            )?),
            _ => None,
        };
        runs.push(SeedRun {
            report: outcome.report,
            test: test_report,
        });
        models.push(outcome.model);
    }
    let report = MultiSeedReport::from_runs(runs);
    let selected = report.selected;
    Ok((report, models.swap_remove(selected)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_three_stops_at_four() {
        let mut s = EarlyStopping::new(3);
        let mut stopped = None;
        for (epoch, loss) in [1.0, 2.0, 3.0, 4.0, 5.0, 6.0].iter().enumerate() {
            if s.observe(*loss).1 {
                stopped = Some(epoch + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(4));
    }

    #[test]
    fn l2_every_fifth() {
        let cfg = TrainConfig::default();
        let due: Vec<usize> = (0..10).filter(|&i| cfg.l2_due(i)).collect();
        assert_eq!(due, vec![4, 9]);
    }

    #[test]
    fn config_errors_listed_together() {
        let cfg = TrainConfig {
            hidden: 3,
            dropout: 1.0,
            patience: 0,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.validate().len(), 3);
    }

    #[test]
    fn uniform_loss_is_t_ln_v() {
        let store = crate::autodiff::ParamStore::new();
        let mut g = Graph::new(&store);
        let logits: Vec<NodeId> = (0..3).map(|_| g.input(Tensor::zeros(&[7]))).collect();
        let nll = sequence_nll(&mut g, &logits, &[1, 2, 6]).unwrap();
        assert!((g.value(nll.loss).item() - 3.0 * 7f64.ln()).abs() < 1e-12);
    }
}
