use crate::scalar::Scalar;

use super::{Gradients, NumericsError, ParamId, ParamStore, Tensor};

/// ADAM with bias correction and optional global-norm gradient clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub clip_norm: Option<T>,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, learning_rate: f64) -> Self {
        let zeros = || -> Vec<Tensor<T>> {
            params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
                .collect()
        };
        Self {
            learning_rate: T::of(learning_rate),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
            clip_norm: Some(T::of(5.0)),
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn without_clipping(mut self) -> Self {
        self.clip_norm = None;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Moment estimates as a store with entries `m/<name>` then `v/<name>`.
    pub fn moments(&self, params: &ParamStore<T>) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (prefix, moments) in [("m", &self.first), ("v", &self.second)] {
            for ((name, _), t) in params.iter().zip(moments) {
                out.add(format!("{prefix}/{name}"), t.clone());
            }
        }
        out
    }

    /// Rebuilds a state saved with [`moments`](Self::moments).
    pub fn from_moments(
        params: &ParamStore<T>,
        learning_rate: f64,
        step: u64,
        moments: &ParamStore<T>,
    ) -> Result<Self, NumericsError> {
        let n = params.len();
        if moments.len() != 2 * n {
            return Err(NumericsError::LayoutMismatch(format!(
                "{} moment tensors for {n} parameters",
                moments.len()
            )));
        }
        let mut state = Self::new(params, learning_rate);
        let all: Vec<&Tensor<T>> = moments.iter().map(|(_, t)| t).collect();
        for (i, (_, p)) in params.iter().enumerate() {
            for t in [all[i], all[n + i]] {
                if t.shape() != p.shape() {
                    return Err(NumericsError::LayoutMismatch(format!(
                        "moment shape {:?} for parameter shape {:?}",
                        t.shape(),
                        p.shape()
                    )));
                }
            }
            state.first[i] = all[i].clone();
            state.second[i] = all[n + i].clone();
        }
        state.step = step;
        Ok(state)
    }

    /// Applies one update. `grads` is clipped in place when it exceeds the clip norm.
    /// Non-finite gradients abort the step before any parameter is touched.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &mut Gradients<T>,
    ) -> Result<(), NumericsError> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(NumericsError::LayoutMismatch(format!(
                "{} parameters, {} gradients, {} moments",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        if let Some(i) = grads.first_non_finite() {
            let name = params.iter().nth(i).map(|(n, _)| n.to_string()).unwrap_or_default();
            return Err(NumericsError::NonFiniteGradient(name));
        }
        if let Some(max) = self.clip_norm {
            let norm = grads.global_norm();
            if norm > max {
                grads.scale(max / norm);
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads.get(ParamId(i)).data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *mi = b1 * *mi + (T::one() - b1) * *gi;
                *vi = b2 * *vi + (T::one() - b2) * *gi * *gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        if let Some(name) = params.first_non_finite() {
            return Err(NumericsError::NonFiniteParameter(name.to_string()));
        }
        Ok(())
    }
}

/// Plain gradient descent, `w -= lr * g`, after the same non-finite check
/// and global-norm clipping as [`AdamState::step`].
pub fn sgd_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &mut Gradients<T>,
    learning_rate: T,
    clip_norm: Option<T>,
) -> Result<(), NumericsError> {
    if grads.len() != params.len() {
        return Err(NumericsError::LayoutMismatch(format!(
            "{} parameters, {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if let Some(i) = grads.first_non_finite() {
        let name = params.iter().nth(i).map(|(n, _)| n.to_string()).unwrap_or_default();
        return Err(NumericsError::NonFiniteGradient(name));
    }
    if let Some(max) = clip_norm {
        let norm = grads.global_norm();
        if norm > max {
            grads.scale(max / norm);
        }
    }
    for (i, p) in params.iter_mut().enumerate() {
        for (w, g) in p.data_mut().iter_mut().zip(grads.get(ParamId(i)).data()) {
            *w -= learning_rate * *g;
        }
    }
    if let Some(name) = params.first_non_finite() {
        return Err(NumericsError::NonFiniteParameter(name.to_string()));
    }
    Ok(())
}
