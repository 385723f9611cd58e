//! Per-block parameter updates. Only blocks that received a gradient in a
//! step are touched.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::composer::PromptSlot;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
#[derive(Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}


impl OptimizerKind {
    pub fn adamw() -> Self {
        Self::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Identifies a parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamId {
    Weights,
    PromptWeights,
    Prompt(PromptSlot),
    TaskKey(usize),
    MetaKey(usize),
}

#[derive(Debug, Clone)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    state: BTreeMap<ParamId, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            state: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, id: ParamId, params: &mut [f64], grad: &[f64], lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::AdamW {
                beta1,
                beta2,
                eps,
                weight_decay,
            } => {
                let m = self.state.entry(id).or_insert_with(|| Moments {
                    first: vec![0.0; params.len()],
                    second: vec![0.0; params.len()],
                    steps: 0,
                });
                m.steps += 1;
                let c1 = 1.0 - libm::pow(beta1, m.steps as f64);
                let c2 = 1.0 - libm::pow(beta2, m.steps as f64);
                for (((p, g), m1), m2) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(m.first.iter_mut())
                    .zip(m.second.iter_mut())
                {
                    *m1 = beta1 * *m1 + (1.0 - beta1) * g;
                    *m2 = beta2 * *m2 + (1.0 - beta2) * g * g;
                    let update = (*m1 / c1) / (libm::sqrt(*m2 / c2) + eps);
                    *p -= lr * (update + weight_decay * *p);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_moves_against_gradient() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd);
        let mut p = [1.0, 2.0];
        opt.step(ParamId::Weights, &mut p, &[0.5, -1.0], 0.1);
        assert_eq!(p, [0.95, 2.1]);
    }

    #[test]
    fn adamw_first_step_is_lr_sized() {
        let mut opt = Optimizer::new(OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 0.0,
            weight_decay: 0.0,
        });
        let mut p = [0.0, 0.0];
        opt.step(ParamId::MetaKey(3), &mut p, &[4.0, -0.01], 0.1);
        assert!((p[0] + 0.1).abs() < 1e-12);
        assert!((p[1] - 0.1).abs() < 1e-12);
    }
}
