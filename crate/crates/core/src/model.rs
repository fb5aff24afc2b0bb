//! The intent- and emotion-conditioned generator.
//!
//! A bidirectional GRU encodes the flattened context; its final state feeds
//! the intent prior and the emotion classifier. The decoder is a GRU whose
//! input at each step is `[E(prev); gate_z * v(z); gate_e * v(e); c_att]`,
//! where both gates are recomputed from `[E(prev); c_att; s_{t-1}]`. The
//! output distribution mixes a generic head and an intent head with the copy
//! rate `alpha_t = sigmoid(v_s . s_t)`.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::corpus::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::labels::{EmotionLabel, IntentLabel, NUM_EMOTIONS, NUM_INTENTS};
use crate::nn::{normal, BiGru, Ffn, GruLayer, Linear};
use crate::rng::Rng;

/// Added to attention scores of padded positions and to masked logits.
const MASKED: f64 = -1e30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub decoder_hidden: usize,
    pub decoder_layers: usize,
    /// Width of the intent and emotion embeddings.
    pub latent_dim: usize,
    pub ffn_hidden: usize,
    pub attention_dim: usize,
    /// Restrict the intent head to the active intent's keywords.
    pub copy_mask: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embedding_dim: 300,
            encoder_hidden: 300,
            encoder_layers: 2,
            decoder_hidden: 300,
            decoder_layers: 2,
            latent_dim: 300,
            ffn_hidden: 300,
            attention_dim: 300,
            copy_mask: false,
        }
    }
}

impl ModelConfig {
    pub fn context_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.embedding_dim,
            self.encoder_hidden,
            self.encoder_layers,
            self.decoder_hidden,
            self.decoder_layers,
            self.latent_dim,
            self.ffn_hidden,
            self.attention_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.vocab_size <= EOS {
            return Err(Error::Config("vocabulary too small".into()));
        }
        Ok(())
    }
}

/// Ablation switches. `no_intent` drops the intent embedding and the keyword
/// copy path, `no_gate` feeds raw embeddings, `no_copy` fixes `alpha_t = 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    pub disable_intent: bool,
    pub disable_gate: bool,
    pub disable_copy: bool,
}

impl Ablations {
    pub fn uses_copy(&self) -> bool {
        !self.disable_copy && !self.disable_intent
    }
}

#[derive(Debug, Clone)]
struct Layout {
    embedding: ParamId,
    encoder: BiGru,
    bridge: Linear,
    intent_embedding: Option<ParamId>,
    emotion_embedding: ParamId,
    prior: Ffn,
    emotion_head: Ffn,
    attn_encoder: Linear,
    attn_decoder: Linear,
    attn_score: Linear,
    decoder: Vec<GruLayer>,
    intent_gate: Option<Ffn>,
    emotion_gate: Option<Ffn>,
    copy_scorer: Option<ParamId>,
    generic_head: ParamId,
    intent_head: Option<ParamId>,
}

/// Trainable state of the generator.
#[derive(Debug, Clone)]
pub struct EmphiModel {
    pub config: ModelConfig,
    pub ablations: Ablations,
    pub params: ParamStore,
    layout: Layout,
    keyword_ids: Option<Vec<Vec<usize>>>,
}

/// Encoder states for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `m x 2H`, one row per input position.
    pub states: Array2<f64>,
    /// Concatenated final forward and backward top-layer states.
    pub final_state: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    /// One state per decoder layer, top layer last.
    pub layers: Vec<Array1<f64>>,
    /// Attention context used by the step that produced this state.
    pub attention_context: Array1<f64>,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub token_probs: Array1<f64>,
    pub copy_rate: f64,
    pub generic_probs: Array1<f64>,
    /// `None` when the copy path is ablated.
    pub intent_probs: Option<Array1<f64>>,
    pub intent_gate: Option<Array1<f64>>,
    pub emotion_gate: Option<Array1<f64>>,
    pub attention: Array1<f64>,
}

/// Test hooks that pin the copy rate or the gate activations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepOverrides {
    pub copy_rate: Option<f64>,
    pub gate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedResponse {
    pub tokens: Vec<usize>,
    pub intent: IntentLabel,
    /// Prior probability of `intent` under the context.
    pub intent_prob: f64,
    pub emotion: EmotionLabel,
}

/// Graph handles for an encoded batch.
pub struct EncodedBatch {
    pub states: Vec<Var>,
    pub final_state: Var,
    projected: Vec<Var>,
    /// `B x T`, 0 on real positions, a large negative value on padding.
    score_mask: Array2<f64>,
}

/// Graph handles produced by one decoder step.
pub struct StepVars {
    pub generic_logits: Var,
    pub intent_logits: Option<Var>,
    /// Pre-sigmoid copy score; `None` when copying is disabled.
    pub copy_logit: Option<Var>,
    pub intent_gate: Option<Var>,
    pub emotion_gate: Option<Var>,
    pub attention: Var,
    pub attention_context: Var,
    pub state: Vec<Var>,
}

impl EmphiModel {
    pub fn new(config: ModelConfig, ablations: Ablations, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut p = ParamStore::new();
        let ctx = c.context_dim();
        let embedding = p.add("embedding", normal(rng, c.vocab_size, c.embedding_dim, 1.0));
        let encoder = BiGru::new(
            &mut p,
            "encoder",
            c.embedding_dim,
            c.encoder_hidden,
            c.encoder_layers,
            rng,
        );
        let bridge = Linear::new(
            &mut p,
            "bridge",
            ctx,
            c.decoder_layers * c.decoder_hidden,
            true,
            rng,
        );
        let intent_embedding = (!ablations.disable_intent).then(|| {
            p.add(
                "intent_embedding",
                normal(rng, NUM_INTENTS, c.latent_dim, 1.0),
            )
        });
        let emotion_embedding = p.add(
            "emotion_embedding",
            normal(rng, NUM_EMOTIONS, c.latent_dim, 1.0),
        );
        let prior = Ffn::new(&mut p, "prior", ctx, c.ffn_hidden, NUM_INTENTS, rng);
        let emotion_head = Ffn::new(&mut p, "emotion_head", ctx, c.ffn_hidden, NUM_EMOTIONS, rng);
        let attn_encoder = Linear::new(
            &mut p,
            "attention.encoder",
            ctx,
            c.attention_dim,
            false,
            rng,
        );
        let attn_decoder = Linear::new(
            &mut p,
            "attention.decoder",
            c.decoder_hidden,
            c.attention_dim,
            true,
            rng,
        );
        let attn_score = Linear::new(&mut p, "attention.score", c.attention_dim, 1, false, rng);
        let latent_slots = if ablations.disable_intent { 1 } else { 2 };
        let dec_input = c.embedding_dim + latent_slots * c.latent_dim + ctx;
        let decoder = (0..c.decoder_layers)
            .map(|l| {
                let inp = if l == 0 { dec_input } else { c.decoder_hidden };
                GruLayer::new(&mut p, &format!("decoder.l{l}"), inp, c.decoder_hidden, rng)
            })
            .collect();
        let gate_input = c.embedding_dim + ctx + c.decoder_hidden;
        let gated = !ablations.disable_gate;
        let intent_gate = (gated && !ablations.disable_intent).then(|| {
            Ffn::new(
                &mut p,
                "intent_gate",
                gate_input,
                c.ffn_hidden,
                c.latent_dim,
                rng,
            )
        });
        let emotion_gate = gated.then(|| {
            Ffn::new(
                &mut p,
                "emotion_gate",
                gate_input,
                c.ffn_hidden,
                c.latent_dim,
                rng,
            )
        });
        let bound = 1.0 / (c.decoder_hidden as f64).sqrt();
        let copy = ablations.uses_copy();
        let copy_scorer = copy.then(|| {
            p.add(
                "copy_scorer",
                crate::nn::uniform(rng, c.decoder_hidden, 1, bound),
            )
        });
        let generic_head = p.add(
            "generic_head",
            crate::nn::uniform(rng, c.decoder_hidden, c.vocab_size, bound),
        );
        let intent_head = copy.then(|| {
            p.add(
                "intent_head",
                crate::nn::uniform(rng, c.decoder_hidden, c.vocab_size, bound),
            )
        });
        let layout = Layout {
            embedding,
            encoder,
            bridge,
            intent_embedding,
            emotion_embedding,
            prior,
            emotion_head,
            attn_encoder,
            attn_decoder,
            attn_score,
            decoder,
            intent_gate,
            emotion_gate,
            copy_scorer,
            generic_head,
            intent_head,
        };
        log::info!("generator has {} trainable parameters", p.scalar_count());
        Ok(EmphiModel {
            config,
            ablations,
            params: p,
            layout,
            keyword_ids: None,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Keyword ids per intent, used by the masked copy mode.
    pub fn set_keyword_ids(&mut self, ids: Vec<Vec<usize>>) -> Result<()> {
        if ids.len() != NUM_INTENTS || ids.iter().flatten().any(|&i| i >= self.config.vocab_size) {
            return Err(Error::InvalidArgument("bad keyword id table".into()));
        }
        self.keyword_ids = Some(ids);
        Ok(())
    }

    pub fn embedding_param(&self) -> ParamId {
        self.layout.embedding
    }

    /// Parameters of the named heads, for tests and diagnostics.
    pub fn head_params(&self, head: Head) -> Vec<ParamId> {
        let l = &self.layout;
        let ffn = |f: &Ffn| {
            let mut v = vec![f.hidden.weight, f.output.weight];
            v.extend(f.hidden.bias);
            v.extend(f.output.bias);
            v
        };
        match head {
            Head::Prior => ffn(&l.prior),
            Head::Emotion => ffn(&l.emotion_head),
            Head::Copy => l.copy_scorer.into_iter().collect(),
            Head::IntentEmbedding => l.intent_embedding.into_iter().collect(),
        }
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.config.vocab_size) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id,
                size: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    // ---- graph-level building blocks -------------------------------------

    /// Encodes a right-padded batch of id sequences.
    pub fn encode_graph(&self, g: &mut Graph, batch: &[Vec<usize>]) -> Result<EncodedBatch> {
        let b = batch.len();
        let t_max = batch.iter().map(Vec::len).max().unwrap_or(0);
        if b == 0 || batch.iter().any(Vec::is_empty) {
            return Err(Error::Empty("context"));
        }
        for ids in batch {
            self.check_ids(ids)?;
        }
        let mut inputs = Vec::with_capacity(t_max);
        let mut masks = Vec::with_capacity(t_max);
        let mut score_mask = Array2::zeros((b, t_max));
        for t in 0..t_max {
            let ids: Vec<usize> = batch
                .iter()
                .map(|s| s.get(t).copied().unwrap_or(0))
                .collect();
            inputs.push(g.gather(self.layout.embedding, &ids));
            let m =
                Array2::from_shape_fn((b, 1), |(r, _)| if t < batch[r].len() { 1.0 } else { 0.0 });
            for r in 0..b {
                if t >= batch[r].len() {
                    score_mask[[r, t]] = MASKED;
                }
            }
            masks.push(m);
        }
        let out = self.layout.encoder.forward(g, &inputs, &masks);
        let projected = out
            .states
            .iter()
            .map(|&h| self.layout.attn_encoder.forward(g, h))
            .collect();
        Ok(EncodedBatch {
            states: out.states,
            final_state: out.final_state,
            projected,
            score_mask,
        })
    }

    pub fn prior_logits_graph(&self, g: &mut Graph, final_state: Var) -> Var {
        self.layout.prior.forward(g, final_state)
    }

    pub fn emotion_logits_graph(&self, g: &mut Graph, final_state: Var) -> Var {
        self.layout.emotion_head.forward(g, final_state)
    }

    pub fn initial_state_graph(&self, g: &mut Graph, final_state: Var) -> Vec<Var> {
        let h = self.layout.bridge.forward(g, final_state);
        let h = g.tanh(h);
        let hs = self.config.decoder_hidden;
        (0..self.config.decoder_layers)
            .map(|l| g.slice_cols(h, l * hs, (l + 1) * hs))
            .collect()
    }

    /// Additive attention of `query` (`B x H_dec`) over the encoded batch.
    /// Returns `(context, weights)`.
    pub fn attend_graph(&self, g: &mut Graph, query: Var, enc: &EncodedBatch) -> (Var, Var) {
        let q = self.layout.attn_decoder.forward(g, query);
        let scores: Vec<Var> = enc
            .projected
            .iter()
            .map(|&p| {
                let e = g.add(p, q);
                let e = g.tanh(e);
                self.layout.attn_score.forward(g, e)
            })
            .collect();
        let scores = g.concat(&scores);
        let scores = g.add_const(scores, &enc.score_mask);
        let weights = g.softmax(scores);
        let mut ctx = None;
        for (i, &h) in enc.states.iter().enumerate() {
            let w = g.slice_cols(weights, i, i + 1);
            let term = g.mul_col(h, w);
            ctx = Some(match ctx {
                None => term,
                Some(acc) => g.add(acc, term),
            });
        }
        (ctx.expect("nonempty context"), weights)
    }

    /// Intent embedding rows for `intents`; `None` under `disable_intent`.
    pub fn intent_vectors(&self, g: &mut Graph, intents: &[IntentLabel]) -> Option<Var> {
        let ids: Vec<usize> = intents.iter().map(|i| i.id()).collect();
        self.layout.intent_embedding.map(|p| g.gather(p, &ids))
    }

    pub fn emotion_vectors(&self, g: &mut Graph, emotions: &[EmotionLabel]) -> Var {
        let ids: Vec<usize> = emotions.iter().map(|e| e.id()).collect();
        g.gather(self.layout.emotion_embedding, &ids)
    }

    /// One decoder step for a batch.
    #[allow(clippy::too_many_arguments)]
    pub fn step_graph(
        &self,
        g: &mut Graph,
        prev: &[usize],
        state: &[Var],
        enc: &EncodedBatch,
        intents: &[IntentLabel],
        intent_vec: Option<Var>,
        emotion_vec: Var,
        overrides: &StepOverrides,
    ) -> StepVars {
        let l = &self.layout;
        let b = prev.len();
        let word = g.gather(l.embedding, prev);
        let top = *state.last().expect("decoder has layers");
        let (c_att, weights) = self.attend_graph(g, top, enc);

        let gate_input = (l.intent_gate.is_some() || l.emotion_gate.is_some())
            .then(|| g.concat(&[word, c_att, top]));
        let gate = |g: &mut Graph, net: &Option<Ffn>| -> Option<Var> {
            let net = net.as_ref()?;
            Some(match overrides.gate {
                Some(v) => g.constant(Array2::from_elem((b, self.config.latent_dim), v)),
                None => {
                    let pre = net.forward(g, gate_input.expect("gate input"));
                    g.sigmoid(pre)
                }
            })
        };
        let intent_gate = gate(g, &l.intent_gate);
        let emotion_gate = gate(g, &l.emotion_gate);

        let mut parts = vec![word];
        if let Some(v) = intent_vec {
            parts.push(match intent_gate {
                Some(gt) => g.mul(gt, v),
                None => v,
            });
        }
        parts.push(match emotion_gate {
            Some(gt) => g.mul(gt, emotion_vec),
            None => emotion_vec,
        });
        parts.push(c_att);
        let mut x = g.concat(&parts);
        let mut next = Vec::with_capacity(state.len());
        for (layer, &s) in l.decoder.iter().zip(state) {
            x = layer.step(g, x, s);
            next.push(x);
        }
        let top = x;

        let wg = g.param(l.generic_head);
        let generic_logits = g.matmul(top, wg);
        let (intent_logits, copy_logit) = match (l.intent_head, l.copy_scorer) {
            (Some(wi), Some(vs)) => {
                let wi = g.param(wi);
                let mut logits = g.matmul(top, wi);
                if self.config.copy_mask {
                    if let Some(kw) = &self.keyword_ids {
                        let mut mask = Array2::from_elem((b, self.config.vocab_size), MASKED);
                        for (r, intent) in intents.iter().enumerate() {
                            for &id in &kw[intent.id()] {
                                mask[[r, id]] = 0.0;
                            }
                        }
                        logits = g.add_const(logits, &mask);
                    }
                }
                let copy = match overrides.copy_rate {
                    Some(a) => {
                        let logit = (a / (1.0 - a)).ln();
                        g.constant(Array2::from_elem((b, 1), logit))
                    }
                    None => {
                        let vs = g.param(vs);
                        g.matmul(top, vs)
                    }
                };
                (Some(logits), Some(copy))
            }
            _ => (None, None),
        };
        StepVars {
            generic_logits,
            intent_logits,
            copy_logit,
            intent_gate,
            emotion_gate,
            attention: weights,
            attention_context: c_att,
            state: next,
        }
    }

    /// Mixture token probabilities `(1 - a) p_g + a p_i` for each batch row,
    /// together with the copy rates.
    pub fn step_probabilities(
        &self,
        g: &mut Graph,
        step: &StepVars,
        overrides: &StepOverrides,
    ) -> (Array2<f64>, Vec<f64>) {
        let pg = g.softmax(step.generic_logits);
        let pg = g.value(pg).clone();
        match (step.intent_logits, step.copy_logit) {
            (Some(il), Some(cl)) => {
                let pi = g.softmax(il);
                let pi = g.value(pi).clone();
                let alpha: Vec<f64> = match overrides.copy_rate {
                    Some(a) => vec![a; pg.nrows()],
                    None => {
                        let a = g.sigmoid(cl);
                        g.value(a).column(0).to_vec()
                    }
                };
                let mut p = pg.clone();
                for (r, &a) in alpha.iter().enumerate() {
                    let mixed = &pg.row(r) * (1.0 - a) + &pi.row(r) * a;
                    p.row_mut(r).assign(&mixed);
                }
                (p, alpha)
            }
            _ => {
                let n = pg.nrows();
                (pg, vec![0.0; n])
            }
        }
    }

    // ---- single-example inference API -------------------------------------

    pub fn encode_context(&self, context_ids: &[usize]) -> Result<EncoderOutput> {
        if context_ids.is_empty() {
            return Err(Error::Empty("context"));
        }
        if context_ids.len() > crate::corpus::MAX_CONTEXT_TOKENS {
            return Err(Error::InvalidArgument(format!(
                "context longer than {} tokens",
                crate::corpus::MAX_CONTEXT_TOKENS
            )));
        }
        let mut g = Graph::new(&self.params);
        let enc = self.encode_graph(&mut g, &[context_ids.to_vec()])?;
        let rows: Vec<_> = enc
            .states
            .iter()
            .map(|&s| g.value(s).row(0).to_owned())
            .collect();
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        Ok(EncoderOutput {
            states: ndarray::stack(Axis(0), &views).expect("equal widths"),
            final_state: g.value(enc.final_state).row(0).to_owned(),
        })
    }

    fn row_input<'a>(&'a self, g: &mut Graph<'a>, v: &Array1<f64>) -> Var {
        g.constant(v.clone().insert_axis(Axis(0)))
    }

    fn softmax_row(g: &Graph, v: Var) -> Array1<f64> {
        g.value(v).row(0).to_owned()
    }

    pub fn prior_intent(&self, context_state: &Array1<f64>) -> IntentDistribution {
        let mut g = Graph::new(&self.params);
        let h = self.row_input(&mut g, context_state);
        let logits = self.prior_logits_graph(&mut g, h);
        let p = g.softmax(logits);
        IntentDistribution(Self::softmax_row(&g, p))
    }

    pub fn classify_emotion(&self, context_state: &Array1<f64>) -> EmotionDistribution {
        let mut g = Graph::new(&self.params);
        let h = self.row_input(&mut g, context_state);
        let logits = self.emotion_logits_graph(&mut g, h);
        let p = g.softmax(logits);
        EmotionDistribution(Self::softmax_row(&g, p))
    }

    fn encoded_from_output<'a>(&'a self, g: &mut Graph<'a>, enc: &EncoderOutput) -> EncodedBatch {
        let states: Vec<Var> = enc
            .states
            .rows()
            .into_iter()
            .map(|r| g.constant(r.to_owned().insert_axis(Axis(0))))
            .collect();
        let projected = states
            .iter()
            .map(|&h| self.layout.attn_encoder.forward(g, h))
            .collect();
        let final_state = self.row_input(g, &enc.final_state);
        EncodedBatch {
            score_mask: Array2::zeros((1, states.len())),
            states,
            final_state,
            projected,
        }
    }

    /// Attention of decoder state `query` over `encoder_states` (`m x 2H`).
    pub fn attend(
        &self,
        query: &Array1<f64>,
        encoder_states: &Array2<f64>,
    ) -> (Array1<f64>, Array1<f64>) {
        let mut g = Graph::new(&self.params);
        let enc = EncoderOutput {
            states: encoder_states.clone(),
            final_state: Array1::zeros(encoder_states.ncols()),
        };
        let enc = self.encoded_from_output(&mut g, &enc);
        let q = self.row_input(&mut g, query);
        let (ctx, w) = self.attend_graph(&mut g, q, &enc);
        (g.value(ctx).row(0).to_owned(), g.value(w).row(0).to_owned())
    }

    pub fn initial_state(&self, enc: &EncoderOutput) -> DecoderState {
        let mut g = Graph::new(&self.params);
        let h = self.row_input(&mut g, &enc.final_state);
        let layers = self.initial_state_graph(&mut g, h);
        DecoderState {
            layers: layers
                .iter()
                .map(|&l| g.value(l).row(0).to_owned())
                .collect(),
            attention_context: Array1::zeros(self.config.context_dim()),
            step: 0,
        }
    }

    pub fn decode_step(
        &self,
        prev_token: usize,
        state: &DecoderState,
        enc: &EncoderOutput,
        intent: IntentLabel,
        emotion: EmotionLabel,
        overrides: &StepOverrides,
    ) -> Result<(StepOutput, DecoderState)> {
        self.check_ids(&[prev_token])?;
        let mut g = Graph::new(&self.params);
        let encb = self.encoded_from_output(&mut g, enc);
        let layers: Vec<Var> = state
            .layers
            .iter()
            .map(|l| self.row_input(&mut g, l))
            .collect();
        let iv = self.intent_vectors(&mut g, &[intent]);
        let ev = self.emotion_vectors(&mut g, &[emotion]);
        let step = self.step_graph(
            &mut g,
            &[prev_token],
            &layers,
            &encb,
            &[intent],
            iv,
            ev,
            overrides,
        );
        let (probs, alpha) = self.step_probabilities(&mut g, &step, overrides);
        let generic = g.softmax(step.generic_logits);
        let intent_probs = step.intent_logits.map(|il| {
            let p = g.softmax(il);
            Self::softmax_row(&g, p)
        });
        let out = StepOutput {
            token_probs: probs.row(0).to_owned(),
            copy_rate: alpha[0],
            generic_probs: Self::softmax_row(&g, generic),
            intent_probs,
            intent_gate: step.intent_gate.map(|v| g.value(v).row(0).to_owned()),
            emotion_gate: step.emotion_gate.map(|v| g.value(v).row(0).to_owned()),
            attention: g.value(step.attention).row(0).to_owned(),
        };
        let next = DecoderState {
            layers: step
                .state
                .iter()
                .map(|&s| g.value(s).row(0).to_owned())
                .collect(),
            attention_context: g.value(step.attention_context).row(0).to_owned(),
            step: state.step + 1,
        };
        Ok((out, next))
    }

    /// Greedy decoding of `count` responses. With `intent = None`, each
    /// response samples its intent from the prior independently. The emotion
    /// is the argmax of the model's own emotion classifier.
    pub fn generate(
        &self,
        context_ids: &[usize],
        intent: Option<IntentLabel>,
        max_len: usize,
        count: usize,
        rng: &mut Rng,
    ) -> Result<Vec<GeneratedResponse>> {
        if count == 0 {
            return Err(Error::InvalidArgument("count must be at least 1".into()));
        }
        let enc = self.encode_context(context_ids)?;
        let prior = self.prior_intent(&enc.final_state);
        let emotion = self.classify_emotion(&enc.final_state).argmax();
        let intents: Vec<IntentLabel> = (0..count)
            .map(|_| intent.unwrap_or_else(|| prior.sample(rng)))
            .collect();
        let emotions = vec![emotion; count];
        let tokens = self.greedy_batch(&enc, &intents, &emotions, max_len)?;
        Ok(tokens
            .into_iter()
            .zip(&intents)
            .map(|(tokens, &i)| GeneratedResponse {
                tokens,
                intent: i,
                intent_prob: prior.0[i.id()],
                emotion,
            })
            .collect())
    }

    /// Greedy decoding of one row per `(intent, emotion)` pair against a
    /// shared encoded context. Output excludes BOS and EOS.
    pub fn greedy_batch(
        &self,
        enc: &EncoderOutput,
        intents: &[IntentLabel],
        emotions: &[EmotionLabel],
        max_len: usize,
    ) -> Result<Vec<Vec<usize>>> {
        let b = intents.len();
        let mut g = Graph::new(&self.params);
        let tile = |g: &mut Graph, v: Array1<f64>| {
            let row = v.insert_axis(Axis(0));
            g.constant(row.broadcast((b, row.ncols())).unwrap().to_owned())
        };
        let states: Vec<Var> = enc
            .states
            .rows()
            .into_iter()
            .map(|r| tile(&mut g, r.to_owned()))
            .collect();
        let projected = states
            .iter()
            .map(|&h| self.layout.attn_encoder.forward(&mut g, h))
            .collect();
        let final_state = tile(&mut g, enc.final_state.clone());
        let encb = EncodedBatch {
            score_mask: Array2::zeros((b, states.len())),
            states,
            final_state,
            projected,
        };
        let mut state = self.initial_state_graph(&mut g, encb.final_state);
        let iv = self.intent_vectors(&mut g, intents);
        let ev = self.emotion_vectors(&mut g, emotions);
        let mut prev = vec![BOS; b];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); b];
        let mut done = vec![false; b];
        let overrides = StepOverrides::default();
        for _ in 0..max_len {
            let step = self.step_graph(&mut g, &prev, &state, &encb, intents, iv, ev, &overrides);
            let (probs, _) = self.step_probabilities(&mut g, &step, &overrides);
            for r in 0..b {
                let next = greedy_token(probs.row(r).iter().copied());
                prev[r] = next;
                if !done[r] {
                    if next == EOS {
                        done[r] = true;
                    } else {
                        out[r].push(next);
                    }
                }
            }
            state = step.state;
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Prior,
    Emotion,
    Copy,
    IntentEmbedding,
}

/// Greedy choice of the next token. Padding and the start marker are never
/// emitted.
pub fn greedy_token(probs: impl IntoIterator<Item = f64>) -> usize {
    argmax(probs.into_iter().enumerate().map(|(i, p)| {
        if i == PAD || i == BOS {
            f64::NEG_INFINITY
        } else {
            p
        }
    }))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Probability vector over the nine intents.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentDistribution(pub Array1<f64>);

impl IntentDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.len() != NUM_INTENTS {
            return Err(Error::InvalidArgument(format!(
                "expected {NUM_INTENTS} probabilities"
            )));
        }
        let d = IntentDistribution(Array1::from(p));
        if !d.is_valid() {
            return Err(Error::InvalidArgument("not a probability vector".into()));
        }
        Ok(d)
    }

    pub fn uniform() -> Self {
        IntentDistribution(Array1::from_elem(NUM_INTENTS, 1.0 / NUM_INTENTS as f64))
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|&x| x >= 0.0 && x.is_finite()) && (self.0.sum() - 1.0).abs() <= 1e-6
    }

    pub fn probs(&self) -> &[f64] {
        self.0.as_slice().expect("contiguous")
    }

    pub fn argmax(&self) -> IntentLabel {
        IntentLabel::new(argmax(self.0.iter().copied())).expect("in range")
    }

    pub fn sample(&self, rng: &mut Rng) -> IntentLabel {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in self.0.iter().enumerate() {
            acc += p;
            if u < acc {
                return IntentLabel::new(i).expect("in range");
            }
        }
        // rounding left u above the cumulative sum
        let last = self
            .0
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(NUM_INTENTS - 1);
        IntentLabel::new(last).expect("in range")
    }
}

/// Probability vector over the 32 emotions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionDistribution(pub Array1<f64>);

impl EmotionDistribution {
    pub fn argmax(&self) -> EmotionLabel {
        EmotionLabel::new(argmax(self.0.iter().copied())).expect("in range")
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|&x| x >= 0.0) && (self.0.sum() - 1.0).abs() <= 1e-6
    }
}
