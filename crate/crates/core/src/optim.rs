//! Adam with global-norm gradient clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoder::{SparseRows, Tensor};
use crate::model::{Grads, Model};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm above which gradients are rescaled.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Per-tensor moment estimates, keyed by a stable slot number. Encoder
/// tensors occupy slots `0..10`, head `h` slots `10 + 3h ..`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    state: BTreeMap<usize, Moments>,
}

enum GradRef<'a> {
    Dense(&'a [f64]),
    Sparse(&'a SparseRows),
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            state: BTreeMap::new(),
        }
    }

    /// Clips `grads` in place and applies one update to every tensor the
    /// gradient covers. Returns the pre-clipping global norm.
    pub fn step(&mut self, model: &mut Model, grads: &mut Grads) -> f64 {
        let norm = grads.norm_sq().sqrt();
        if norm > self.config.clip_norm {
            grads.scale(self.config.clip_norm / norm);
        }
        let e = &grads.encoder;
        let enc_grads: [GradRef; 10] = [
            GradRef::Sparse(&e.word_emb),
            GradRef::Sparse(&e.char_emb),
            GradRef::Dense(&e.char_fwd.weight.data),
            GradRef::Dense(&e.char_fwd.bias.data),
            GradRef::Dense(&e.char_bwd.weight.data),
            GradRef::Dense(&e.char_bwd.bias.data),
            GradRef::Dense(&e.word_fwd.weight.data),
            GradRef::Dense(&e.word_fwd.bias.data),
            GradRef::Dense(&e.word_bwd.weight.data),
            GradRef::Dense(&e.word_bwd.bias.data),
        ];
        for (slot, (t, g)) in model.encoder.tensors_mut().into_iter().zip(enc_grads).enumerate() {
            self.update(slot, t, g);
        }
        for (h, (head, g)) in model.heads.iter_mut().zip(&grads.heads).enumerate() {
            if let Some(g) = g {
                for (k, (t, (_, gt))) in head.params.tensors_mut().into_iter().zip(g.tensors()).enumerate() {
                    self.update(10 + 3 * h + k, t, GradRef::Dense(&gt.data));
                }
            }
        }
        norm
    }

    fn update(&mut self, slot: usize, tensor: &mut Tensor, grad: GradRef) {
        let c = self.config;
        let n = tensor.data.len();
        let s = self.state.entry(slot).or_insert_with(|| Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        });
        s.step += 1;
        let bc1 = 1.0 - c.beta1.powi(s.step as i32);
        let bc2 = 1.0 - c.beta2.powi(s.step as i32);
        let mut apply = |i: usize, g: f64| {
            s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g;
            s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * g * g;
            let mhat = s.m[i] / bc1;
            let vhat = s.v[i] / bc2;
            tensor.data[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
        };
        match grad {
            GradRef::Dense(g) => {
                for (i, &gi) in g.iter().enumerate() {
                    apply(i, gi);
                }
            }
            GradRef::Sparse(rows) => {
                let cols = rows.cols;
                for r in 0..n / cols.max(1) {
                    let row = rows.rows.get(&r);
                    for k in 0..cols {
                        apply(r * cols + k, row.map_or(0.0, |v| v[k]));
                    }
                }
            }
        }
    }

    /// Forgets the moments of one head's slots (used when a head is replaced).
    pub fn reset_head(&mut self, head: usize) {
        for k in 0..3 {
            self.state.remove(&(10 + 3 * head + k));
        }
    }
}
