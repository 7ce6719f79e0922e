use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Ontology, Span, Turn};
use crate::numerics::{
    read_checkpoint, sgd_step, sigmoid, write_checkpoint, AdamState, Gradients, Graph, NodeId, ParamId,
    ParamStore, StreamRng,
};
use crate::scalar::Scalar;

use super::state::{mispredicts_label, TurnPrediction, TurnPredictor};
use super::TrackerError;

pub const UNK: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub embedding_dim: usize,
    /// Width of the concatenated bidirectional hidden state.
    pub encoder_dim: usize,
    pub scorer_hidden: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub threshold: f64,
    pub clip_norm: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 50,
            encoder_dim: 200,
            scorer_hidden: 200,
            dropout: 0.2,
            learning_rate: 1e-3,
            batch_size: 16,
            threshold: 0.5,
            clip_norm: 5.0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let bad = |m: String| Err(TrackerError::Config(m));
        if self.embedding_dim == 0 || self.scorer_hidden == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.encoder_dim == 0 || self.encoder_dim % 2 != 0 {
            return bad(format!("encoder_dim {} must be even and positive", self.encoder_dim));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0, 1)", self.threshold));
        }
        if self.batch_size == 0 || !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return bad("batch_size, learning_rate and clip_norm must be positive".into());
        }
        Ok(())
    }
}

/// Token → embedding row. Row 0 is the shared out-of-vocabulary entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: Vec<&str> = tokens.into_iter().filter(|t| *t != UNK).collect();
        words.sort_unstable();
        words.dedup();
        let tokens: Vec<String> = std::iter::once(UNK)
            .chain(words)
            .map(str::to_string)
            .collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Rnn {
    wx: ParamId,
    wh: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct BiEncoder {
    fwd: Rnn,
    bwd: Rnn,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Layout {
    embed: ParamId,
    user: BiEncoder,
    system: BiEncoder,
    w_user: ParamId,
    w_system: ParamId,
    w_pair: ParamId,
    /// Projects the user summary into embedding space for matching against pairs.
    w_query: ParamId,
    w_match: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct Pair {
    slot: String,
    value: String,
    /// Embedding rows of the slot name and value words.
    rows: Vec<usize>,
}

enum Optimizer<'a, T> {
    Adam(&'a mut AdamState<T>),
    Sgd(T),
}

/// Forward/backward pass counts, for cost accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PassCount {
    pub forward: usize,
    pub backward: usize,
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub validation_accuracy: Option<f64>,
}

/// Reference tracker: bidirectional recurrent encoders over the user
/// utterance and system input, and a two-layer scorer applied to every
/// ontology (slot, value) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackerModel<T> {
    config: TrackerConfig,
    vocab: Vocab,
    ontology: Arc<Ontology>,
    pairs: Vec<Pair>,
    params: ParamStore<T>,
    layout: Layout,
    seed: u64,
    /// ADAM moments from the training that produced these parameters;
    /// later training and fine-tuning continue from them.
    optimizer: Option<AdamState<T>>,
}

impl<T: Scalar> TrackerModel<T> {
    /// Fresh model: embeddings uniform(−0.1, 0.1), dense layers Xavier-uniform,
    /// biases zero.
    pub fn new<R: Rng + ?Sized>(
        config: TrackerConfig,
        vocab: Vocab,
        ontology: Arc<Ontology>,
        seed: u64,
        rng: &mut R,
    ) -> Result<Self, TrackerError> {
        config.validate()?;
        let (e, d, s) = (config.embedding_dim, config.encoder_dim, config.scorer_hidden);
        let h = d / 2;
        let mut params = ParamStore::new();
        let embed = params.add_uniform("embed", vec![vocab.len(), e], 0.1, rng);
        let mut rnn = |params: &mut ParamStore<T>, name: &str| Rnn {
            wx: params.add_xavier(&format!("{name}.wx"), h, e, rng),
            wh: params.add_xavier(&format!("{name}.wh"), h, h, rng),
            b: params.add_zeros(&format!("{name}.b"), vec![h]),
        };
        let user = BiEncoder {
            fwd: rnn(&mut params, "user.fwd"),
            bwd: rnn(&mut params, "user.bwd"),
        };
        let system = BiEncoder {
            fwd: rnn(&mut params, "system.fwd"),
            bwd: rnn(&mut params, "system.bwd"),
        };
        // The first scorer layer acts on [user; system; pair; query ∘ pair];
        // its column blocks are stored separately so the shared part is
        // computed once per turn.
        let fan = 2 * d + 2 * e;
        let bound = (6.0 / (s + fan) as f64).sqrt();
        let w_user = params.add_uniform("scorer.w_user", vec![s, d], bound, rng);
        let w_system = params.add_uniform("scorer.w_system", vec![s, d], bound, rng);
        let w_pair = params.add_uniform("scorer.w_pair", vec![s, e], bound, rng);
        let w_query = params.add_xavier("scorer.w_query", e, d, rng);
        let w_match = params.add_uniform("scorer.w_match", vec![s, e], bound, rng);
        let b1 = params.add_zeros("scorer.b1", vec![s]);
        let w2 = params.add_xavier("scorer.w2", 1, s, rng);
        let b2 = params.add_zeros("scorer.b2", vec![1]);
        let layout = Layout {
            embed,
            user,
            system,
            w_user,
            w_system,
            w_pair,
            w_query,
            w_match,
            b1,
            w2,
            b2,
        };
        let pairs = build_pairs(&ontology, &vocab);
        Ok(Self {
            config,
            vocab,
            ontology,
            pairs,
            params,
            layout,
            seed,
            optimizer: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn ontology(&self) -> &Arc<Ontology> {
        &self.ontology
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn encoder_dim(&self) -> usize {
        self.config.encoder_dim
    }

    /// Changes the learning rate used by later training and fine-tuning.
    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        self.config.learning_rate = learning_rate;
    }

    /// Zeroes the scorer's output layer, making every probability exactly 0.5.
    pub fn zero_output_layer(&mut self) {
        self.params.get_mut(self.layout.w2).fill(T::zero());
        self.params.get_mut(self.layout.b2).fill(T::zero());
    }

    /// Multiplies every scorer logit by `k` (by scaling the output layer).
    pub fn scale_logits(&mut self, k: T) {
        self.params.get_mut(self.layout.w2).scale(k);
        self.params.get_mut(self.layout.b2).scale(k);
    }

    /// Overwrites embedding rows from `word v1 v2 ...` lines. Returns the
    /// number of rows replaced; lines with another width are errors.
    pub fn load_embeddings(&mut self, text: &str) -> Result<usize, TrackerError> {
        let e = self.config.embedding_dim;
        let mut replaced = 0;
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let values = values.map_err(|err| {
                TrackerError::Embeddings(format!("line {}: {err}", lineno + 1))
            })?;
            if values.len() != e {
                return Err(TrackerError::Embeddings(format!(
                    "line {}: expected {e} values, found {}",
                    lineno + 1,
                    values.len()
                )));
            }
            if !self.vocab.contains(word) {
                continue;
            }
            let row = self.vocab.id(word);
            let table = self.params.get_mut(self.layout.embed);
            for (dst, v) in table.data_mut()[row * e..(row + 1) * e].iter_mut().zip(&values) {
                *dst = T::of(*v);
            }
            replaced += 1;
        }
        Ok(replaced)
    }

    /// Mean word embedding of a phrase (out-of-vocabulary words use the shared row).
    pub fn phrase_embedding(&self, tokens: &[String]) -> Vec<T> {
        let e = self.config.embedding_dim;
        let table = self.params.get(self.layout.embed);
        let mut out = vec![T::zero(); e];
        if tokens.is_empty() {
            return out;
        }
        for t in tokens {
            for (o, v) in out.iter_mut().zip(table.row(self.vocab.id(t))) {
                *o += *v;
            }
        }
        let n = T::of(tokens.len() as f64);
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    fn token_rows(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    /// Hidden state per position (concatenated directions) and their mean.
    fn encode(
        &self,
        g: &mut Graph<'_, T>,
        rows: &[usize],
        enc: &BiEncoder,
        mut dropout: Option<&mut StreamRng>,
    ) -> Result<(Vec<NodeId>, NodeId), TrackerError> {
        let h = self.config.encoder_dim / 2;
        if rows.is_empty() {
            let z = g.vector(vec![T::zero(); 2 * h]);
            return Ok((Vec::new(), z));
        }
        let mut xs = Vec::with_capacity(rows.len());
        for &r in rows {
            let x = g.row(self.layout.embed, r)?;
            let x = match dropout.as_deref_mut() {
                Some(rng) => g.dropout(x, self.config.dropout, rng),
                None => x,
            };
            xs.push(x);
        }
        let run = |g: &mut Graph<'_, T>, cell: &Rnn, order: &mut dyn Iterator<Item = usize>| {
            let mut out = vec![None; xs.len()];
            let mut prev: Option<NodeId> = None;
            for i in order {
                let mut pre = g.affine(cell.wx, xs[i], cell.b)?;
                if let Some(p) = prev {
                    let wh = g.param(cell.wh);
                    let r = g.matvec(wh, p)?;
                    pre = g.add(pre, r)?;
                }
                let s = g.tanh(pre);
                out[i] = Some(s);
                prev = Some(s);
            }
            Ok::<_, TrackerError>(out.into_iter().map(|o| o.expect("visited")).collect::<Vec<_>>())
        };
        let n = xs.len();
        let fwd = run(g, &enc.fwd, &mut (0..n))?;
        let bwd = run(g, &enc.bwd, &mut (0..n).rev())?;
        let states = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| g.concat(&[*f, *b]))
            .collect::<Result<Vec<_>, _>>()?;
        let mean = g.mean(&states)?;
        Ok((states, mean))
    }

    /// Logits for every ontology pair, in `ontology.pairs()` order.
    fn logits(
        &self,
        g: &mut Graph<'_, T>,
        turn: &Turn,
        mut dropout: Option<&mut StreamRng>,
    ) -> Result<NodeId, TrackerError> {
        let l = &self.layout;
        let (positions, user) = self.encode(
            g,
            &self.token_rows(&turn.user),
            &l.user,
            dropout.as_deref_mut(),
        )?;
        let (_, system) = self.encode(g, &self.token_rows(&turn.system), &l.system, dropout)?;
        let wu = g.param(l.w_user);
        let ws = g.param(l.w_system);
        let wp = g.param(l.w_pair);
        let wq = g.param(l.w_query);
        let wm = g.param(l.w_match);
        let b1 = g.param(l.b1);
        let w2 = g.param(l.w2);
        let b2 = g.param(l.b2);
        let a = g.matvec(wu, user)?;
        let b = g.matvec(ws, system)?;
        let shared = g.add(a, b)?;
        let shared = g.add(shared, b1)?;
        let queries = positions
            .iter()
            .map(|h| g.matvec(wq, *h))
            .collect::<Result<Vec<_>, _>>()?;
        let zero = g.vector(vec![T::zero(); self.config.embedding_dim]);
        let mut logits = Vec::with_capacity(self.pairs.len());
        for pair in &self.pairs {
            let rows = pair
                .rows
                .iter()
                .map(|r| g.row(l.embed, *r))
                .collect::<Result<Vec<_>, _>>()?;
            let emb = g.mean(&rows)?;
            let pe = g.matvec(wp, emb)?;
            // Each position's agreement with the pair, gated by itself and
            // summed so one strong mention is not diluted by sentence length.
            let matched = if queries.is_empty() {
                zero
            } else {
                let mut gated = Vec::with_capacity(queries.len());
                for q in &queries {
                    let m = g.mul(*q, emb)?;
                    let s = g.sigmoid(m);
                    gated.push(g.mul(s, m)?);
                }
                let mean = g.mean(&gated)?;
                g.scale(mean, T::of(gated.len() as f64))
            };
            let pm = g.matvec(wm, matched)?;
            let hidden = g.add(shared, pe)?;
            let hidden = g.add(hidden, pm)?;
            let hidden = g.tanh(hidden);
            let o = g.matvec(w2, hidden)?;
            logits.push(g.add(o, b2)?);
        }
        Ok(g.concat(&logits)?)
    }

    fn targets(&self, turn: &Turn) -> Vec<T> {
        self.pairs
            .iter()
            .map(|p| {
                let gold = turn
                    .turn_label
                    .get(&p.slot)
                    .unwrap_or(crate::corpus::NONE_VALUE);
                if gold == p.value {
                    T::one()
                } else {
                    T::zero()
                }
            })
            .collect()
    }

    /// Summed binary cross-entropy of one turn, evaluated without dropout.
    pub fn turn_loss(&self, turn: &Turn) -> Result<T, TrackerError> {
        let mut g = Graph::new(&self.params);
        let z = self.logits(&mut g, turn, None)?;
        let loss = g.bce_with_logits(z, self.targets(turn))?;
        Ok(g.scalar(loss))
    }

    /// Loss of one turn with gradients accumulated into `grads`.
    pub fn turn_loss_and_grads(
        &self,
        turn: &Turn,
        grads: &mut Gradients<T>,
        dropout: Option<&mut StreamRng>,
    ) -> Result<T, TrackerError> {
        let mut g = Graph::new(&self.params);
        let z = self.logits(&mut g, turn, dropout)?;
        let loss = g.bce_with_logits(z, self.targets(turn))?;
        g.backward(loss, grads)?;
        Ok(g.scalar(loss))
    }

    /// Raw scorer logits for every ontology pair as `(slot, value, logit)`.
    pub fn pair_logits(&self, turn: &Turn) -> Vec<(String, String, f64)> {
        let mut g = Graph::new(&self.params);
        let z = self
            .logits(&mut g, turn, None)
            .expect("tracker layout is internally consistent");
        self.pairs
            .iter()
            .zip(g.value(z).data())
            .map(|(p, v)| (p.slot.clone(), p.value.clone(), v.as_f64()))
            .collect()
    }

    /// Mean of the user-encoder hidden states over `span`.
    pub fn encode_span(&self, turn: &Turn, span: Span) -> Result<Vec<T>, TrackerError> {
        if span.is_empty() || span.end > turn.user.len() {
            return Err(TrackerError::SpanOutOfBounds {
                start: span.start,
                end: span.end,
                len: turn.user.len(),
            });
        }
        let states = self.user_states(turn)?;
        let d = self.config.encoder_dim;
        let mut out = vec![T::zero(); d];
        for s in &states[span.start..span.end] {
            for (o, v) in out.iter_mut().zip(s) {
                *o += *v;
            }
        }
        let n = T::of(span.len() as f64);
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }

    /// User-encoder hidden state at every position, without dropout.
    pub fn user_states(&self, turn: &Turn) -> Result<Vec<Vec<T>>, TrackerError> {
        let mut g = Graph::new(&self.params);
        let (states, _) = self.encode(&mut g, &self.token_rows(&turn.user), &self.layout.user, None)?;
        Ok(states.iter().map(|s| g.value(*s).data().to_vec()).collect())
    }

    /// Whether this model, at its update threshold, fails to reproduce the
    /// turn's new slot values exactly.
    pub fn is_large_loss(&self, turn: &Turn) -> bool {
        mispredicts_label(&self.predict_turn(turn), turn, self.config.threshold)
    }

    /// One mini-batch pass over `turns` in `order`; returns the mean turn loss.
    fn run_pass(
        &mut self,
        optimizer: &mut Optimizer<'_, T>,
        turns: &[&Turn],
        order: &[usize],
        rng: &mut StreamRng,
        count: &mut PassCount,
    ) -> Result<f64, TrackerError> {
        let mut total = 0.0;
        let mut grads = Gradients::zeros_like(&self.params);
        for batch in order.chunks(self.config.batch_size) {
            grads.zero();
            for &i in batch {
                let loss = self.turn_loss_and_grads(turns[i], &mut grads, Some(&mut *rng))?;
                count.forward += 1;
                count.backward += 1;
                let loss = loss.as_f64();
                if !loss.is_finite() {
                    return Err(TrackerError::Divergence(format!("loss {loss}")));
                }
                total += loss;
            }
            grads.scale(T::one() / T::of(batch.len() as f64));
            let stepped = match optimizer {
                Optimizer::Adam(adam) => adam.step(&mut self.params, &mut grads),
                Optimizer::Sgd(lr) => sgd_step(&mut self.params, &mut grads, *lr, None),
            };
            stepped.map_err(|e| match e {
                crate::numerics::NumericsError::NonFiniteGradient(p)
                | crate::numerics::NumericsError::NonFiniteParameter(p) => {
                    TrackerError::Divergence(format!("parameter {p}"))
                }
                other => other.into(),
            })?;
        }
        Ok(total / order.len().max(1) as f64)
    }

    /// Optimizer steps taken so far by the carried ADAM state.
    pub fn optimizer_steps(&self) -> u64 {
        self.optimizer.as_ref().map_or(0, AdamState::step_count)
    }

    /// Drops the carried optimizer state, so the next training starts afresh.
    pub fn reset_optimizer(&mut self) {
        self.optimizer = None;
    }

    fn new_optimizer(&self) -> AdamState<T> {
        let mut adam = self
            .optimizer
            .clone()
            .unwrap_or_else(|| AdamState::new(&self.params, self.config.learning_rate));
        adam.learning_rate = T::of(self.config.learning_rate);
        adam.clip_norm = Some(T::of(self.config.clip_norm));
        adam
    }

    /// Trains on `turns` for `epochs` shuffled passes and returns the epoch
    /// model with the best validation accuracy (the last one without
    /// validation data), together with per-epoch metrics.
    pub fn train(
        &self,
        turns: &[&Turn],
        validation: Option<&[crate::corpus::Dialogue]>,
        epochs: usize,
        rng: &mut StreamRng,
    ) -> Result<(TrackerModel<T>, Vec<EpochMetrics>), TrackerError> {
        if turns.is_empty() {
            return Err(TrackerError::EmptyInput("training turns"));
        }
        let mut model = self.clone();
        let mut best: Option<(f64, TrackerModel<T>)> = None;
        let mut metrics = Vec::with_capacity(epochs);
        let mut adam = model.new_optimizer();
        let mut count = PassCount::default();
        let mut order: Vec<usize> = (0..turns.len()).collect();
        for epoch in 1..=epochs {
            order.shuffle(rng);
            let loss = model.run_pass(&mut Optimizer::Adam(&mut adam), turns, &order, rng, &mut count)?;
            let acc = validation
                .map(|v| super::joint_goal_accuracy(&model, v, model.config.threshold))
                .transpose()?;
            if let Some(a) = acc {
                if best.as_ref().is_none_or(|(b, _)| a > *b) {
                    model.optimizer = Some(adam.clone());
                    best = Some((a, model.clone()));
                }
            }
            metrics.push(EpochMetrics {
                epoch,
                loss,
                validation_accuracy: acc,
            });
        }
        if epochs > 0 {
            model.optimizer = Some(adam);
        }
        Ok((best.map(|(_, m)| m).unwrap_or(model), metrics))
    }

    /// Copy of this model fine-tuned on `bag` for `passes` passes of plain,
    /// unclipped gradient descent; `self` is untouched.
    pub fn fine_tune(
        &self,
        bag: &[&Turn],
        passes: usize,
        learning_rate: f64,
        rng: &mut StreamRng,
    ) -> Result<TrackerModel<T>, TrackerError> {
        self.fine_tune_counted(bag, passes, learning_rate, rng).map(|(m, _)| m)
    }

    pub fn fine_tune_counted(
        &self,
        bag: &[&Turn],
        passes: usize,
        learning_rate: f64,
        rng: &mut StreamRng,
    ) -> Result<(TrackerModel<T>, PassCount), TrackerError> {
        if bag.is_empty() {
            return Err(TrackerError::EmptyInput("fine-tuning bag"));
        }
        let mut model = self.clone();
        let mut count = PassCount::default();
        let mut sgd = Optimizer::Sgd(T::of(learning_rate));
        let mut order: Vec<usize> = (0..bag.len()).collect();
        for _ in 0..passes {
            order.shuffle(rng);
            model.run_pass(&mut sgd, bag, &order, rng, &mut count)?;
        }
        Ok((model, count))
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "tracker",
            "config": self.config,
            "vocab": self.vocab.tokens,
            "ontology": self.ontology.as_map(),
            "optimizer_steps": self.optimizer.as_ref().map(AdamState::step_count),
        })
    }

    /// Writes parameters, followed by the carried ADAM moments if any.
    pub fn save<W: Write>(&self, out: W) -> Result<(), TrackerError> {
        let mut store = self.params.clone();
        if let Some(adam) = &self.optimizer {
            for (name, t) in adam.moments(&self.params).iter() {
                store.add(format!("adam.{name}"), t.clone());
            }
        }
        Ok(write_checkpoint(out, self.seed, self.meta(), &store)?)
    }

    pub fn load<R: Read>(input: R) -> Result<Self, TrackerError> {
        let (header, params) = read_checkpoint::<T, _>(input)?;
        let meta = &header.meta;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("tracker") {
            return Err(TrackerError::Checkpoint("not a tracker checkpoint".into()));
        }
        let parse = |key: &str| {
            meta.get(key)
                .cloned()
                .ok_or_else(|| TrackerError::Checkpoint(format!("missing {key}")))
        };
        let config: TrackerConfig = serde_json::from_value(parse("config")?)
            .map_err(|e| TrackerError::Checkpoint(e.to_string()))?;
        let tokens: Vec<String> = serde_json::from_value(parse("vocab")?)
            .map_err(|e| TrackerError::Checkpoint(e.to_string()))?;
        let ontology: BTreeMap<String, Vec<String>> = serde_json::from_value(parse("ontology")?)
            .map_err(|e| TrackerError::Checkpoint(e.to_string()))?;
        let ontology = Arc::new(
            Ontology::new(ontology).map_err(|e| TrackerError::Checkpoint(e.to_string()))?,
        );
        let vocab = Vocab::build(tokens.iter().map(String::as_str));
        if vocab.tokens != tokens {
            return Err(TrackerError::Checkpoint("vocabulary is not canonical".into()));
        }
        let mut model = TrackerModel::new(
            config,
            vocab,
            ontology,
            header.seed,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        let n = model.params.len();
        let (mut own, mut moments) = (ParamStore::new(), ParamStore::new());
        for (i, (name, t)) in params.iter().enumerate() {
            if i < n {
                own.add(name, t.clone());
            } else {
                moments.add(name, t.clone());
            }
        }
        model.params.load_from(&own)?;
        match meta.get("optimizer_steps").and_then(|v| v.as_u64()) {
            Some(steps) => {
                model.optimizer = Some(AdamState::from_moments(
                    &model.params,
                    model.config.learning_rate,
                    steps,
                    &moments,
                )?);
            }
            None if !moments.is_empty() => {
                return Err(TrackerError::Checkpoint("unexpected trailing tensors".into()));
            }
            None => {}
        }
        Ok(model)
    }
}

impl<T: Scalar> TurnPredictor for TrackerModel<T> {
    fn predict_turn(&self, turn: &Turn) -> TurnPrediction {
        let mut slots: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
        for (slot, value, z) in self.pair_logits(turn) {
            slots.entry(slot).or_default().push((value, sigmoid(z)));
        }
        TurnPrediction::from_probabilities(slots)
    }
}

fn build_pairs(ontology: &Ontology, vocab: &Vocab) -> Vec<Pair> {
    ontology
        .pairs()
        .map(|(slot, value)| Pair {
            slot: slot.to_string(),
            value: value.to_string(),
            rows: slot
                .split(' ')
                .chain(value.split(' '))
                .map(|t| vocab.id(t))
                .collect(),
        })
        .collect()
}
