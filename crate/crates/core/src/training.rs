//! Training objective and optimization loop for the generator.
//!
//! The objective combines four terms:
//!
//! * `l1`: per-token negative log-likelihood of the gold response under
//!   teacher forcing, conditioned on the recognized intent and gold emotion;
//! * `l2`: `KL(q_r || p_i)` between the recognition distribution of the
//!   response and the context prior;
//! * `l3`: emotion cross-entropy;
//! * `l4`: binary cross-entropy between the copy rate and keyword membership
//!   of each gold token.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, Graph, Var};
use crate::corpus::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::labels::{EmotionLabel, IntentLabel, NUM_INTENTS};
use crate::model::{Ablations, EmphiModel, IntentDistribution, StepOverrides};
use crate::nn::Adam;
use crate::rng::{self, Stream};

/// Which keyword list decides whether a gold token should be copied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeywordSupervision {
    /// Keywords of the response's recognized intent.
    #[default]
    Active,
    /// Keywords of any intent.
    Union,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub loss_weights: [f64; 4],
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub grad_clip: f64,
    pub keyword_supervision: KeywordSupervision,
    pub ablations: Ablations,
    /// Filled from the run seed; not read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            loss_weights: [1.0, 0.5, 0.5, 1.0],
            learning_rate: 1e-4,
            batch_size: 16,
            max_epochs: 30,
            patience: 3,
            grad_clip: 5.0,
            keyword_supervision: KeywordSupervision::Active,
            ablations: Ablations::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.loss_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || self.batch_size == 0
            || self.grad_clip.is_nan()
            || self.grad_clip <= 0.0
        {
            return Err(Error::Config(
                "learning rate, batch size and clip norm must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Loss weights after ablations switch off the terms they remove.
    pub fn effective_weights(&self) -> [f64; 4] {
        let mut w = self.loss_weights;
        if self.ablations.disable_intent {
            w[1] = 0.0;
            w[3] = 0.0;
        }
        if self.ablations.disable_copy {
            w[3] = 0.0;
        }
        w
    }
}

/// One dialogue turn ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub context: Vec<usize>,
    /// Response ids without BOS/EOS.
    pub response: Vec<usize>,
    pub emotion: EmotionLabel,
    /// Recognition distribution of the gold response.
    pub recognition: IntentDistribution,
}

impl TrainingExample {
    pub fn intent(&self) -> IntentLabel {
        self.recognition.argmax()
    }
}

/// Keyword vocabulary ids per intent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeywordIds(pub Vec<HashSet<usize>>);

impl KeywordIds {
    pub fn new(lists: Vec<Vec<usize>>) -> Self {
        KeywordIds(lists.into_iter().map(|l| l.into_iter().collect()).collect())
    }

    pub fn empty() -> Self {
        KeywordIds(vec![HashSet::new(); NUM_INTENTS])
    }

    fn is_keyword(&self, id: usize, intent: IntentLabel, mode: KeywordSupervision) -> bool {
        match mode {
            KeywordSupervision::Active => self.0.get(intent.id()).is_some_and(|s| s.contains(&id)),
            KeywordSupervision::Union => self.0.iter().any(|s| s.contains(&id)),
        }
    }
}

/// Padded, time-major batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub contexts: Vec<Vec<usize>>,
    /// `inputs[t][b]` is the token fed at step `t` (BOS first).
    pub inputs: Vec<Vec<usize>>,
    /// `targets[t][b]` is the gold token at step `t` (EOS last, PAD after).
    pub targets: Vec<Vec<usize>>,
    /// `T x B`, 1 on real target positions.
    pub mask: Array2<f64>,
    /// `T x B` copy supervision.
    pub copy_targets: Array2<f64>,
    pub emotions: Vec<EmotionLabel>,
    /// `B x 9`.
    pub recognition: Array2<f64>,
    pub intents: Vec<IntentLabel>,
}

impl TrainingBatch {
    pub fn new(
        examples: &[&TrainingExample],
        keywords: &KeywordIds,
        mode: KeywordSupervision,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let b = examples.len();
        let t_max = examples
            .iter()
            .map(|e| e.response.len() + 1)
            .max()
            .unwrap_or(1);
        let mut inputs = vec![vec![PAD; b]; t_max];
        let mut targets = vec![vec![PAD; b]; t_max];
        let mut mask = Array2::zeros((t_max, b));
        let mut copy_targets = Array2::zeros((t_max, b));
        let mut recognition = Array2::zeros((b, NUM_INTENTS));
        let mut intents = Vec::with_capacity(b);
        for (col, ex) in examples.iter().enumerate() {
            if !ex.recognition.is_valid() {
                return Err(Error::InvalidArgument(
                    "recognition row is not a distribution".into(),
                ));
            }
            let intent = ex.intent();
            intents.push(intent);
            recognition.row_mut(col).assign(&ex.recognition.0);
            let mut prev = BOS;
            for (t, &tok) in ex.response.iter().chain(std::iter::once(&EOS)).enumerate() {
                inputs[t][col] = prev;
                targets[t][col] = tok;
                mask[[t, col]] = 1.0;
                if keywords.is_keyword(tok, intent, mode) {
                    copy_targets[[t, col]] = 1.0;
                }
                prev = tok;
            }
        }
        Ok(TrainingBatch {
            contexts: examples.iter().map(|e| e.context.clone()).collect(),
            inputs,
            targets,
            mask,
            copy_targets,
            emotions: examples.iter().map(|e| e.emotion).collect(),
            recognition,
            intents,
        })
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn token_count(&self) -> f64 {
        self.mask.sum()
    }

    /// Appends `extra` all-padding decoder steps.
    pub fn with_extra_padding(&self, extra: usize) -> Self {
        let (t, b) = self.mask.dim();
        let mut out = self.clone();
        out.inputs.extend(std::iter::repeat_n(vec![PAD; b], extra));
        out.targets.extend(std::iter::repeat_n(vec![PAD; b], extra));
        let mut mask = Array2::zeros((t + extra, b));
        mask.slice_mut(ndarray::s![..t, ..]).assign(&self.mask);
        let mut copy = Array2::zeros((t + extra, b));
        copy.slice_mut(ndarray::s![..t, ..])
            .assign(&self.copy_targets);
        out.mask = mask;
        out.copy_targets = copy;
        out
    }
}

/// Batch means of the four terms and their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn recombine(&self, w: [f64; 4]) -> f64 {
        w[0] * self.l1 + w[1] * self.l2 + w[2] * self.l3 + w[3] * self.l4
    }
}

/// Graph handles of the loss terms.
pub struct LossVars {
    pub l1: Var,
    pub l2: Var,
    pub l3: Var,
    pub l4: Var,
    pub total: Var,
}

/// Builds the objective on `g`.
pub fn loss_graph(
    model: &EmphiModel,
    g: &mut Graph,
    batch: &TrainingBatch,
    weights: [f64; 4],
) -> Result<LossVars> {
    let b = batch.len() as f64;
    let n_tokens = batch.token_count().max(1.0);
    let enc = model.encode_graph(g, &batch.contexts)?;

    let prior = model.prior_logits_graph(g, enc.final_state);
    let log_prior = g.log_softmax(prior);
    let entropy_term: f64 = batch
        .recognition
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| q * q.ln())
        .sum();
    let cross = g.mul_const(log_prior, batch.recognition.clone());
    let cross = g.sum_all(cross);
    let l2 = g.scale(cross, -1.0 / b);
    let l2 = g.add_scalar(l2, entropy_term / b);

    let emotion = model.emotion_logits_graph(g, enc.final_state);
    let log_emotion = g.log_softmax(emotion);
    let gold: Vec<usize> = batch.emotions.iter().map(|e| e.id()).collect();
    let picked = g.pick(log_emotion, &gold);
    let picked = g.sum_all(picked);
    let l3 = g.scale(picked, -1.0 / b);

    let mut state = model.initial_state_graph(g, enc.final_state);
    let iv = model.intent_vectors(g, &batch.intents);
    let ev = model.emotion_vectors(g, &batch.emotions);
    let overrides = StepOverrides::default();
    let mut nll_sum: Option<Var> = None;
    let mut bce_sum: Option<Var> = None;
    let accumulate = |g: &mut Graph, acc: Option<Var>, term: Var| match acc {
        None => term,
        Some(a) => g.add(a, term),
    };
    for t in 0..batch.inputs.len() {
        let mask = batch.mask.row(t).to_owned().insert_axis(ndarray::Axis(1));
        let step = model.step_graph(
            g,
            &batch.inputs[t],
            &state,
            &enc,
            &batch.intents,
            iv,
            ev,
            &overrides,
        );
        let log_pg = g.log_softmax(step.generic_logits);
        let pg_target = g.pick(log_pg, &batch.targets[t]);
        let token_lp = match (step.intent_logits, step.copy_logit) {
            (Some(il), Some(a)) => {
                let log_pi = g.log_softmax(il);
                let pi_target = g.pick(log_pi, &batch.targets[t]);
                let neg_a = g.scale(a, -1.0);
                let log_keep = g.log_sigmoid(neg_a);
                let log_copy = g.log_sigmoid(a);
                let generic = g.add(log_keep, pg_target);
                let keyword = g.add(log_copy, pi_target);
                let q = batch
                    .copy_targets
                    .row(t)
                    .to_owned()
                    .insert_axis(ndarray::Axis(1));
                let pos = g.mul_const(log_copy, &q * &mask);
                let neg = g.mul_const(log_keep, (1.0 - &q) * &mask);
                let ll = g.add(pos, neg);
                let ll = g.sum_all(ll);
                bce_sum = Some(accumulate(g, bce_sum, ll));
                g.log_add_exp(generic, keyword)
            }
            _ => pg_target,
        };
        let masked = g.mul_const(token_lp, mask);
        let s = g.sum_all(masked);
        nll_sum = Some(accumulate(g, nll_sum, s));
        state = step.state;
    }
    let l1 = g.scale(nll_sum.expect("at least one step"), -1.0 / n_tokens);
    let l4 = match bce_sum {
        Some(s) => g.scale(s, -1.0 / n_tokens),
        None => g.constant(Array2::zeros((1, 1))),
    };

    let terms = [l1, l2, l3, l4];
    let mut total = g.scale(l1, weights[0]);
    for (&w, &term) in weights.iter().zip(&terms).skip(1) {
        let weighted = g.scale(term, w);
        total = g.add(total, weighted);
    }
    Ok(LossVars {
        l1,
        l2,
        l3,
        l4,
        total,
    })
}

fn breakdown(g: &Graph, vars: &LossVars) -> Result<LossBreakdown> {
    let out = LossBreakdown {
        l1: g.scalar(vars.l1),
        l2: g.scalar(vars.l2),
        l3: g.scalar(vars.l3),
        l4: g.scalar(vars.l4),
        total: g.scalar(vars.total),
    };
    for (name, v) in [
        ("l1", out.l1),
        ("l2", out.l2),
        ("l3", out.l3),
        ("l4", out.l4),
        ("total", out.total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term: name });
        }
    }
    Ok(out)
}

/// Loss values without gradients.
pub fn compute_losses(
    model: &EmphiModel,
    batch: &TrainingBatch,
    config: &TrainingConfig,
) -> Result<LossBreakdown> {
    let mut g = Graph::new(&model.params);
    let vars = loss_graph(model, &mut g, batch, config.effective_weights())?;
    breakdown(&g, &vars)
}

/// Loss values and gradients of the weighted total.
pub fn compute_gradients(
    model: &EmphiModel,
    batch: &TrainingBatch,
    config: &TrainingConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let mut g = Graph::new(&model.params);
    let vars = loss_graph(model, &mut g, batch, config.effective_weights())?;
    let losses = breakdown(&g, &vars)?;
    Ok((losses, g.backward(vars.total)))
}

/// Largest relative error between analytic and central-difference gradients
/// of the total loss over a random sample of scalar parameters. The relative
/// error of each entry is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    model: &EmphiModel,
    batch: &TrainingBatch,
    config: &TrainingConfig,
    samples: usize,
    step: f64,
    floor: f64,
    seed: u64,
) -> Result<f64> {
    let (_, grads) = compute_gradients(model, batch, config)?;
    let mut candidates = Vec::new();
    for (id, gmat) in grads.iter() {
        for r in 0..gmat.nrows() {
            for c in 0..gmat.ncols() {
                candidates.push((id, r, c));
            }
        }
    }
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let mut rng = rng::stream(seed, Stream::GradientCheck);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let (id, r, c) = candidates[rng.random_range(0..candidates.len())];
        let analytic = grads.get(id).map_or(0.0, |m| m[[r, c]]);
        let original = probe.params.get(id)[[r, c]];
        probe.params.get_mut(id)[[r, c]] = original + step;
        let up = compute_losses(&probe, batch, config)?.total;
        probe.params.get_mut(id)[[r, c]] = original - step;
        let down = compute_losses(&probe, batch, config)?.total;
        probe.params.get_mut(id)[[r, c]] = original;
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(worst)
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub valid: Option<LossBreakdown>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Token- and example-weighted running means.
#[derive(Default)]
struct LossAccumulator {
    tokens: f64,
    examples: f64,
    sums: [f64; 4],
}

impl LossAccumulator {
    fn add(&mut self, l: &LossBreakdown, batch: &TrainingBatch) {
        let n = batch.token_count();
        let b = batch.len() as f64;
        self.tokens += n;
        self.examples += b;
        self.sums[0] += l.l1 * n;
        self.sums[1] += l.l2 * b;
        self.sums[2] += l.l3 * b;
        self.sums[3] += l.l4 * n;
    }

    fn finish(&self, w: [f64; 4]) -> LossBreakdown {
        let mut out = LossBreakdown {
            l1: self.sums[0] / self.tokens.max(1.0),
            l2: self.sums[1] / self.examples.max(1.0),
            l3: self.sums[2] / self.examples.max(1.0),
            l4: self.sums[3] / self.tokens.max(1.0),
            total: 0.0,
        };
        out.total = out.recombine(w);
        out
    }
}

fn batches<'a>(
    data: &'a [TrainingExample],
    order: &[usize],
    size: usize,
    keywords: &KeywordIds,
    mode: KeywordSupervision,
) -> Result<Vec<TrainingBatch>> {
    order
        .chunks(size)
        .map(|chunk| {
            let refs: Vec<&'a TrainingExample> = chunk.iter().map(|&i| &data[i]).collect();
            TrainingBatch::new(&refs, keywords, mode)
        })
        .collect()
}

/// Mean losses over `data` without updating parameters.
pub fn evaluate_losses(
    model: &EmphiModel,
    data: &[TrainingExample],
    keywords: &KeywordIds,
    config: &TrainingConfig,
) -> Result<LossBreakdown> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let mut acc = LossAccumulator::default();
    for batch in batches(
        data,
        &order,
        config.batch_size,
        keywords,
        config.keyword_supervision,
    )? {
        acc.add(&compute_losses(model, &batch, config)?, &batch);
    }
    Ok(acc.finish(config.effective_weights()))
}

/// Aborts when the epoch total exceeds ten times the first epoch's total
/// for three consecutive epochs.
#[derive(Debug, Clone, Default)]
pub struct DivergenceMonitor {
    initial: Option<f64>,
    strikes: usize,
}

impl DivergenceMonitor {
    pub fn observe(&mut self, total: f64) -> Result<()> {
        let initial = *self.initial.get_or_insert(total);
        if total > 10.0 * initial {
            self.strikes += 1;
            if self.strikes >= 3 {
                return Err(Error::Diverged(format!(
                    "total loss {total:.4} exceeded 10x the initial {initial:.4} for 3 epochs"
                )));
            }
        } else {
            self.strikes = 0;
        }
        Ok(())
    }
}

/// Runs minibatch Adam with teacher forcing. After every epoch `on_epoch`
/// receives the record; returning `false` stops training. The model ends up
/// holding the parameters of the best monitored epoch (validation total if
/// `valid` is nonempty, otherwise training total).
pub fn train(
    model: &mut EmphiModel,
    train_data: &[TrainingExample],
    valid_data: &[TrainingExample],
    keywords: &KeywordIds,
    config: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if config.ablations != model.ablations {
        return Err(Error::Config(
            "training ablations differ from the model's".into(),
        ));
    }
    let weights = config.effective_weights();
    let mut opt = Adam::new(&model.params, config.learning_rate);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut log = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut divergence = DivergenceMonitor::default();
    let mut stopped_early = false;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng::substream(
            config.seed,
            Stream::BatchShuffle,
            epoch as u32,
        ));
        let mut acc = LossAccumulator::default();
        for batch in batches(
            train_data,
            &order,
            config.batch_size,
            keywords,
            config.keyword_supervision,
        )? {
            let (losses, mut grads) = compute_gradients(model, &batch, config)?;
            grads.clip_global_norm(config.grad_clip);
            opt.step(&mut model.params, &grads);
            acc.add(&losses, &batch);
        }
        let train_losses = acc.finish(weights);
        let valid = if valid_data.is_empty() {
            None
        } else {
            Some(evaluate_losses(model, valid_data, keywords, config)?)
        };
        let record = EpochRecord {
            epoch,
            train: train_losses,
            valid,
        };
        log::info!(
            "epoch {epoch}: train total {:.4} (l1 {:.4}) valid {}",
            train_losses.total,
            train_losses.l1,
            valid.map_or("-".to_string(), |v| format!("{:.4}", v.total))
        );
        log.push(record);

        divergence.observe(train_losses.total)?;

        let monitored = valid.map_or(train_losses.total, |v| v.total);
        if monitored < best {
            best = monitored;
            best_epoch = epoch;
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if !on_epoch(&record) {
            break;
        }
        if since_best > config.patience {
            stopped_early = true;
            break;
        }
    }
    if !log.is_empty() {
        model.params = best_params;
    }
    Ok(TrainOutcome {
        log,
        best_epoch,
        stopped_early,
    })
}
