//! Prompt-conditioned linear classifier: `softmax(W x + U p)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::dot;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurrogateModel {
    classes: usize,
    input_dim: usize,
    prompt_len: usize,
    /// `classes x input_dim`, row-major.
    weights: Vec<f64>,
    /// `classes x prompt_len`, row-major.
    prompt_weights: Vec<f64>,
}

/// Negative log-likelihood of one sample with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LmLoss {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_prompt_weights: Vec<f64>,
    /// Gradient with respect to the composed prompt values.
    pub grad_prompt: Vec<f64>,
}

impl SurrogateModel {
    pub fn zeros(classes: usize, input_dim: usize, prompt_len: usize) -> Result<Self> {
        if classes == 0 || input_dim == 0 {
            return Err(Error::invalid("model", "classes and input_dim must be positive"));
        }
        Ok(Self {
            classes,
            input_dim,
            prompt_len,
            weights: vec![0.0; classes * input_dim],
            prompt_weights: vec![0.0; classes * prompt_len],
        })
    }

    /// `W = 0`, `U ~ N(0, scale^2)`.
    pub fn init<R: Rng + ?Sized>(
        classes: usize,
        input_dim: usize,
        prompt_len: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(classes, input_dim, prompt_len)?;
        let normal =
            Normal::new(0.0, scale).map_err(|_| Error::invalid("scale", "must be finite and >= 0"))?;
        model
            .prompt_weights
            .iter_mut()
            .for_each(|u| *u = normal.sample(rng));
        Ok(model)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn prompt_weights(&self) -> &[f64] {
        &self.prompt_weights
    }

    pub fn prompt_weights_mut(&mut self) -> &mut [f64] {
        &mut self.prompt_weights
    }

    fn check(&self, x: &[f64], prompt: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if prompt.len() != self.prompt_len {
            return Err(Error::DimensionMismatch {
                expected: self.prompt_len,
                got: prompt.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64], prompt: &[f64]) -> Result<Vec<f64>> {
        self.check(x, prompt)?;
        Ok((0..self.classes)
            .map(|c| {
                let w = &self.weights[c * self.input_dim..(c + 1) * self.input_dim];
                let u = &self.prompt_weights[c * self.prompt_len..(c + 1) * self.prompt_len];
                dot(w, x) + dot(u, prompt)
            })
            .collect())
    }

    /// Class probabilities.
    pub fn forward(&self, x: &[f64], prompt: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x, prompt)?))
    }

    /// Most probable class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64], prompt: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x, prompt)?))
    }

    /// `-ln p(label)` and gradients for `W`, `U` and the prompt values.
    pub fn lm_loss(&self, x: &[f64], label: usize, prompt: &[f64]) -> Result<LmLoss> {
        if label >= self.classes {
            return Err(Error::invalid("label", "label out of range"));
        }
        let logits = self.logits(x, prompt)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + libm::log(logits.iter().map(|z| libm::exp(z - max)).sum::<f64>());
        let loss = log_z - logits[label];
        let probs: Vec<f64> = logits.iter().map(|z| libm::exp(z - log_z)).collect();

        let mut residual = probs.clone();
        residual[label] -= 1.0;

        let mut grad_weights = vec![0.0; self.weights.len()];
        let mut grad_prompt_weights = vec![0.0; self.prompt_weights.len()];
        let mut grad_prompt = vec![0.0; self.prompt_len];
        for (c, r) in residual.iter().enumerate() {
            let gw = &mut grad_weights[c * self.input_dim..(c + 1) * self.input_dim];
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g = r * xi);
            let gu = &mut grad_prompt_weights[c * self.prompt_len..(c + 1) * self.prompt_len];
            gu.iter_mut().zip(prompt).for_each(|(g, pi)| *g = r * pi);
            let u = &self.prompt_weights[c * self.prompt_len..(c + 1) * self.prompt_len];
            grad_prompt.iter_mut().zip(u).for_each(|(g, ui)| *g += r * ui);
        }
        Ok(LmLoss {
            loss,
            probs,
            grad_weights,
            grad_prompt_weights,
            grad_prompt,
        })
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| libm::exp(z - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
