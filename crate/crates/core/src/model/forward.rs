//! Differentiable forward pass recorded on a [`Tape`].
//!
//! Second-level pre-activations are split as
//! `W₂ₜ[q_i; q_j; z_v] = W₂ₜᴬ q_i + W₂ₜᴮ q_j + W₂ₜᶜ z_v`, and each block
//! product is memoised per (network, row) so a batch computes it once.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::RcfConfig;
use super::encoder::{AttentionLayout, HistoryEncoder};
use crate::corpus::{Corpus, RecTriple, LATENT_VALUE};
use crate::params::{ParamStore, Tape, Var};
use crate::real::Real;

/// Inverted dropout with its own random stream.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Keep-mask scaled by `1/(1-rate)`, or `None` when dropout is off.
    pub fn mask<T: Real>(&mut self, len: usize) -> Option<Vec<T>> {
        if self.rate <= 0.0 {
            return None;
        }
        let keep = T::from_f64(1.0 / (1.0 - self.rate));
        Some(
            (0..len)
                .map(|_| if self.rng.random::<f64>() < self.rate { T::ZERO } else { keep })
                .collect(),
        )
    }
}

/// Builds prediction and loss graphs for one batch on a fresh tape.
pub struct GraphBuilder<'a, T: Real> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    corpus: &'a Corpus,
    config: &'a RcfConfig,
    encoder: &'a dyn HistoryEncoder,
    item_block: HashMap<(u32, u8, u32), Var>,
    value_block: HashMap<(u32, u32), Var>,
    alpha: HashMap<u32, Var>,
}

impl<'a, T: Real> GraphBuilder<'a, T> {
    pub fn new(
        store: &'a ParamStore<T>,
        corpus: &'a Corpus,
        config: &'a RcfConfig,
        encoder: &'a dyn HistoryEncoder,
    ) -> Self {
        Self {
            tape: Tape::new(),
            store,
            corpus,
            config,
            encoder,
            item_block: HashMap::new(),
            value_block: HashMap::new(),
            alpha: HashMap::new(),
        }
    }

    pub fn with_finite_check(mut self, on: bool) -> Self {
        self.tape = self.tape.with_finite_check(on);
        self
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn into_tape(self) -> Tape<T> {
        self.tape
    }

    fn d(&self) -> usize {
        self.store.dims().d
    }

    fn item(&mut self, i: u32) -> Var {
        let q = self.store.layout().item;
        self.tape.param_row(self.store, q, i)
    }

    /// `W₂ₜ` block product with an item embedding (`block` 0 = target, 1 = history).
    fn item_projection(&mut self, net: u32, block: u8, i: u32) -> Var {
        if let Some(&v) = self.item_block.get(&(net, block, i)) {
            return v;
        }
        let d = self.d();
        let w = self.tape.param(self.store, self.store.layout().w2[net as usize]);
        let q = self.item(i);
        let v = self.tape.matvec_block(w, 3 * d, block as usize * d, q);
        self.item_block.insert((net, block, i), v);
        v
    }

    fn value_projection(&mut self, net: u32, value: u32) -> Var {
        if let Some(&v) = self.value_block.get(&(net, value)) {
            return v;
        }
        let d = self.d();
        let w = self.tape.param(self.store, self.store.layout().w2[net as usize]);
        let z = self.tape.param_row(self.store, self.store.layout().value, value);
        let v = self.tape.matvec_block(w, 3 * d, 2 * d, z);
        self.value_block.insert((net, value), v);
        v
    }

    /// First-level attention vector over all relation types for `user`.
    pub fn first_level(&mut self, user: u32) -> Var {
        if let Some(&v) = self.alpha.get(&user) {
            return v;
        }
        let n_types = self.store.dims().n_types;
        let alpha = if self.config.attn_override.uniform_first_level() {
            self.tape
                .constant(vec![T::from_f64(1.0 / n_types as f64); n_types])
        } else {
            let l = self.store.layout();
            let d = self.d();
            let p = self.tape.param_row(self.store, l.user, user);
            let w1 = self.tape.param(self.store, l.w1);
            let b1 = self.tape.param(self.store, l.b1);
            let h1 = self.tape.param(self.store, l.h1);
            let scores: Vec<Var> = (0..n_types as u32)
                .map(|t| {
                    let x = self.tape.param_row(self.store, l.rtype, t);
                    let px = self.tape.mul(p, x);
                    let pre = self.tape.matvec(w1, d, px);
                    self.tape.attention_score(vec![pre, b1], h1)
                })
                .collect();
            let stacked = self.tape.stack(scores);
            self.tape.softmax(stacked)
        };
        self.alpha.insert(user, alpha);
        alpha
    }

    /// Target-aware user embedding `m_{u,i}`.
    pub fn user_embedding(&mut self, user: u32, target: u32) -> Var {
        let partition = self.corpus.partition(user, target);
        let layout = self.encoder.layout(partition);
        self.user_embedding_from_layout(user, target, &layout)
    }

    pub fn user_embedding_from_layout(&mut self, user: u32, target: u32, layout: &AttentionLayout) -> Var {
        let l = self.store.layout();
        let p = self.tape.param_row(self.store, l.user, user);
        let alpha = layout.first_level.then(|| self.first_level(user));
        let mut terms = vec![p];
        for group in &layout.groups {
            if group.entries.is_empty() {
                continue;
            }
            let n = group.entries.len();
            let beta = if self.config.attn_override.uniform_second_level() {
                self.tape.constant(vec![T::from_f64(1.0 / n as f64); n])
            } else {
                let a = self.item_projection(group.network, 0, target);
                let b2 = self.tape.param(self.store, l.b2[group.network as usize]);
                let h2 = self.tape.param(self.store, l.h2[group.network as usize]);
                let scores: Vec<Var> = group
                    .entries
                    .iter()
                    .map(|e| {
                        let mut parts = vec![a, self.item_projection(group.network, 1, e.item)];
                        if group.use_value && e.value != LATENT_VALUE {
                            parts.push(self.value_projection(group.network, e.value));
                        }
                        parts.push(b2);
                        self.tape.attention_score(parts, h2)
                    })
                    .collect();
                let stacked = self.tape.stack(scores);
                self.tape.smoothed_softmax(stacked, self.config.rho)
            };
            let items: Vec<Var> = group.entries.iter().map(|e| self.item(e.item)).collect();
            let profile = self.tape.weighted_sum(beta, items);
            let term = match alpha {
                Some(alpha) => {
                    let a = self.tape.index(alpha, group.slot as usize);
                    self.tape.scale(profile, a)
                }
                None => profile,
            };
            terms.push(term);
        }
        if terms.len() == 1 {
            p
        } else {
            self.tape.add_n(terms)
        }
    }

    /// Predicted score `ŷ_ui`. Dropout applies to the MLP input and hidden
    /// layer when `dropout` is given.
    pub fn predict(&mut self, user: u32, target: u32, dropout: Option<&mut Dropout>) -> Var {
        let m = self.user_embedding(user, target);
        self.head(m, target, dropout)
    }

    fn head(&mut self, m: Var, target: u32, mut dropout: Option<&mut Dropout>) -> Var {
        let l = self.store.layout();
        let d = self.d();
        let q = self.item(target);
        let mut x = self.tape.mul(m, q);
        if let Some(mask) = dropout.as_deref_mut().and_then(|dr| dr.mask::<T>(d)) {
            x = self.tape.mask(x, mask);
        }
        let wm = self.tape.param(self.store, l.mlp_w);
        let bm = self.tape.param(self.store, l.mlp_b);
        let pre = self.tape.matvec(wm, d, x);
        let pre = self.tape.add(pre, bm);
        let mut hidden = self.tape.relu(pre);
        if let Some(mask) = dropout.and_then(|dr| dr.mask::<T>(self.store.dims().hidden)) {
            hidden = self.tape.mask(hidden, mask);
        }
        let w_out = self.tape.param(self.store, l.out_w);
        let b_out = self.tape.param(self.store, l.out_b);
        let out = self.tape.dot(w_out, hidden);
        self.tape.add(out, b_out)
    }

    /// Mean BPR loss `mean −ln σ(ŷ_ui − ŷ_uk)` over the batch.
    pub fn rec_loss(&mut self, batch: &[RecTriple], mut dropout: Option<&mut Dropout>) -> Var {
        assert!(!batch.is_empty(), "empty recommendation batch");
        let terms: Vec<Var> = batch
            .iter()
            .map(|t| {
                let pos = self.predict(t.user, t.pos, dropout.as_deref_mut());
                let neg = self.predict(t.user, t.neg, dropout.as_deref_mut());
                let diff = self.tape.sub(pos, neg);
                self.tape.log_sigmoid(diff)
            })
            .collect();
        let mean = self.tape.mean(terms);
        let zero = self.tape.constant_scalar(T::ZERO);
        self.tape.sub(zero, mean)
    }
}
