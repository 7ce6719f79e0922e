use std::io::{Read, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::numerics::{
    read_checkpoint, sigmoid, write_checkpoint, Gradients, Graph, NodeId, ParamId, ParamStore,
    Tensor,
};
use crate::scalar::Scalar;

use super::GeneratorError;

pub const DEFAULT_POLICY_HIDDEN: usize = 200;

/// Policy input `[p_ctx; p′_emb; p′_emb − p_emb; p′_emb ∘ p_emb]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState<T>(Vec<T>);

impl<T: Scalar> PolicyState<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }
}

/// Builds the state for replacing a span (context `p_ctx`, embedding `p_emb`)
/// with a candidate whose embedding is `cand_emb`.
pub fn featurize<T: Scalar>(
    p_ctx: &[T],
    p_emb: &[T],
    cand_emb: &[T],
) -> Result<PolicyState<T>, GeneratorError> {
    if p_emb.len() != cand_emb.len() {
        return Err(GeneratorError::Dimension {
            what: "candidate embedding",
            expected: p_emb.len(),
            got: cand_emb.len(),
        });
    }
    let mut s = Vec::with_capacity(p_ctx.len() + 3 * p_emb.len());
    s.extend_from_slice(p_ctx);
    s.extend_from_slice(cand_emb);
    s.extend(cand_emb.iter().zip(p_emb).map(|(c, p)| *c - *p));
    s.extend(cand_emb.iter().zip(p_emb).map(|(c, p)| *c * *p));
    Ok(PolicyState(s))
}

/// One sampled action for a policy-gradient update.
#[derive(Clone, Copy, Debug)]
pub struct Instance<'a, T> {
    /// States of every candidate at the site, in candidate order.
    pub states: &'a [PolicyState<T>],
    pub chosen: usize,
    pub reward: f64,
}

/// Two-layer scorer `f(s) = sigmoid(w2 · tanh(W1 s + b1) + b2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet<T> {
    params: ParamStore<T>,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    input_dim: usize,
    hidden: usize,
}

impl<T: Scalar> PolicyNet<T> {
    /// Fresh policy: Xavier-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let w1 = params.add_xavier("policy.w1", hidden, input_dim, rng);
        let b1 = params.add_zeros("policy.b1", vec![hidden]);
        let w2 = params.add_xavier("policy.w2", 1, hidden, rng);
        let b2 = params.add_zeros("policy.b2", vec![1]);
        Self {
            params,
            w1,
            b1,
            w2,
            b2,
            input_dim,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn check(&self, s: &PolicyState<T>) -> Result<(), GeneratorError> {
        if s.len() != self.input_dim {
            return Err(GeneratorError::Dimension {
                what: "policy state",
                expected: self.input_dim,
                got: s.len(),
            });
        }
        Ok(())
    }

    /// Pre-sigmoid score of one state.
    pub fn logit(&self, s: &PolicyState<T>) -> Result<T, GeneratorError> {
        self.check(s)?;
        let w1 = self.params.get(self.w1).data();
        let b1 = self.params.get(self.b1).data();
        let w2 = self.params.get(self.w2).data();
        let mut z = self.params.get(self.b2).data()[0];
        for (r, (b, v)) in b1.iter().zip(w2).enumerate() {
            let row = &w1[r * self.input_dim..(r + 1) * self.input_dim];
            let a: T = row.iter().zip(&s.0).map(|(w, x)| *w * *x).sum();
            z += *v * (a + *b).tanh();
        }
        Ok(z)
    }

    /// `f(s)`, strictly inside (0, 1).
    pub fn score(&self, s: &PolicyState<T>) -> Result<T, GeneratorError> {
        self.logit(s).map(sigmoid)
    }

    /// Scores normalized over a candidate set.
    pub fn distribution(&self, states: &[PolicyState<T>]) -> Result<Vec<f64>, GeneratorError> {
        if states.is_empty() {
            return Err(GeneratorError::EmptyCandidates);
        }
        let f = states
            .iter()
            .map(|s| self.score(s).map(Scalar::as_f64))
            .collect::<Result<Vec<_>, _>>()?;
        let total: f64 = f.iter().sum();
        Ok(f.into_iter().map(|v| v / total).collect())
    }

    /// Draws a candidate index and returns it with its log-probability.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        states: &[PolicyState<T>],
        rng: &mut R,
    ) -> Result<(usize, f64), GeneratorError> {
        let probs = self.distribution(states)?;
        Ok(sample_from(&probs, rng))
    }

    /// `log π(s_k) = log f(s_k) − log Σ_j f(s_j)` as a graph node.
    pub fn log_prob_node(
        &self,
        g: &mut Graph<'_, T>,
        states: &[PolicyState<T>],
        chosen: usize,
    ) -> Result<NodeId, GeneratorError> {
        if states.is_empty() {
            return Err(GeneratorError::EmptyCandidates);
        }
        if chosen >= states.len() {
            return Err(GeneratorError::ChosenOutOfRange {
                chosen,
                candidates: states.len(),
            });
        }
        let mut scores = Vec::with_capacity(states.len());
        for s in states {
            self.check(s)?;
            let x = g.input(Tensor::vector(s.0.clone()));
            let h = g.affine(self.w1, x, self.b1)?;
            let h = g.tanh(h);
            let z = g.affine(self.w2, h, self.b2)?;
            scores.push(g.sigmoid(z));
        }
        let all = g.concat(&scores)?;
        let total = g.sum(all);
        let log_total = g.log(total);
        let log_f = g.log(scores[chosen]);
        Ok(g.sub(log_f, log_total)?)
    }

    /// REINFORCE surrogate `−(1/m) Σ R · log π` over `instances`, with its
    /// gradient accumulated into `grads`.
    pub fn reinforce_loss_and_grads(
        &self,
        instances: &[Instance<'_, T>],
        num_bags: usize,
        grads: &mut Gradients<T>,
    ) -> Result<f64, GeneratorError> {
        let m = T::of(num_bags.max(1) as f64);
        let mut total = 0.0;
        for inst in instances {
            if inst.reward == 0.0 {
                continue;
            }
            let mut g = Graph::new(&self.params);
            let lp = self.log_prob_node(&mut g, inst.states, inst.chosen)?;
            let loss = g.scale(lp, -T::of(inst.reward) / m);
            g.backward(loss, grads)?;
            total += g.scalar(loss).as_f64();
        }
        Ok(total)
    }

    pub fn save<W: Write>(&self, out: W, seed: u64) -> Result<(), GeneratorError> {
        let meta = serde_json::json!({
            "kind": "policy",
            "input_dim": self.input_dim,
            "hidden": self.hidden,
        });
        Ok(write_checkpoint(out, seed, meta, &self.params)?)
    }

    pub fn load<R: Read>(input: R) -> Result<Self, GeneratorError> {
        let (header, params) = read_checkpoint::<T, _>(input)?;
        let meta = &header.meta;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("policy") {
            return Err(GeneratorError::Checkpoint("not a policy checkpoint".into()));
        }
        let dim = |key: &str| {
            meta.get(key)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| GeneratorError::Checkpoint(format!("missing {key}")))
        };
        let mut net = Self::new(
            dim("input_dim")?,
            dim("hidden")?,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        );
        net.params.load_from(&params)?;
        Ok(net)
    }
}

/// Draws an index from normalized `probs`; returns it with its log-probability.
pub fn sample_from<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> (usize, f64) {
    if probs.len() == 1 {
        return (0, 0.0);
    }
    let dist = WeightedIndex::new(probs).expect("probabilities are positive and finite");
    let k = dist.sample(rng);
    (k, probs[k].ln())
}
