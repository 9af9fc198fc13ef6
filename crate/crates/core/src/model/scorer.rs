//! Evaluation-mode scoring in `f64` with per-network projections cached.
//!
//! For every second-level network the products `W₂ₜᴬ Q`, `W₂ₜᴮ Q` and
//! `W₂ₜᶜ Z` are computed once, so scoring a (user, item) pair costs one
//! `f`-vector addition per history entry.

use std::sync::Arc;

use serde::Serialize;

use super::config::RcfConfig;
use super::encoder::{AttentionLayout, HistoryEncoder};
use super::ops::{mlp_head, smoothed_softmax, softmax};
use crate::corpus::{Corpus, LATENT_VALUE};
use crate::error::Result;
use crate::params::ParamStore;
use crate::real::Real;

/// Second-level weights of one attention group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTrace {
    pub network: u32,
    pub slot: u32,
    /// `(history item, value, β)` in bucket order.
    pub entries: Vec<(u32, u32, f64)>,
}

/// Score with its attention traces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub score: f64,
    /// `α(u, t)` over all types; empty when the mode has no first level.
    pub first_level: Vec<f64>,
    pub second_level: Vec<GroupTrace>,
}

pub struct Scorer<'a, T: Real> {
    store: &'a ParamStore<T>,
    corpus: &'a Corpus,
    config: RcfConfig,
    encoder: Arc<dyn HistoryEncoder>,
    // per network, row-major [rows × f]
    target_proj: Vec<Vec<f64>>,
    history_proj: Vec<Vec<f64>>,
    value_proj: Vec<Vec<f64>>,
}

fn project_rows<T: Real>(w: &[T], cols: usize, offset: usize, rows: &[T], d: usize, f: usize) -> Vec<f64> {
    let n = rows.len() / d;
    let mut out = vec![0.0; n * f];
    for r in 0..n {
        let x = &rows[r * d..(r + 1) * d];
        for k in 0..f {
            let wrow = &w[k * cols + offset..k * cols + offset + d];
            out[r * f + k] = wrow.iter().zip(x).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
        }
    }
    out
}

impl<'a, T: Real> Scorer<'a, T> {
    pub fn new(store: &'a ParamStore<T>, corpus: &'a Corpus, config: &RcfConfig) -> Result<Self> {
        config.validate()?;
        let encoder = config.encoder()?;
        let dims = *store.dims();
        let (d, f) = (dims.d, dims.f);
        let l = store.layout();
        let q = &store.tensor(l.item).data;
        let z = &store.tensor(l.value).data;
        let mut target_proj = Vec::with_capacity(dims.n_types);
        let mut history_proj = Vec::with_capacity(dims.n_types);
        let mut value_proj = Vec::with_capacity(dims.n_types);
        for t in 0..dims.n_types {
            let w = &store.tensor(l.w2[t]).data;
            target_proj.push(project_rows(w, 3 * d, 0, q, d, f));
            history_proj.push(project_rows(w, 3 * d, d, q, d, f));
            value_proj.push(project_rows(w, 3 * d, 2 * d, z, d, f));
        }
        Ok(Self {
            store,
            corpus,
            config: config.clone(),
            encoder,
            target_proj,
            history_proj,
            value_proj,
        })
    }

    pub fn corpus(&self) -> &'a Corpus {
        self.corpus
    }

    pub fn config(&self) -> &RcfConfig {
        &self.config
    }

    /// First-level weights `α(u, ·)` over all types.
    pub fn first_level(&self, user: u32) -> Vec<f64> {
        let n_types = self.store.dims().n_types;
        if self.config.attn_override.uniform_first_level() {
            return vec![1.0 / n_types as f64; n_types];
        }
        let l = self.store.layout();
        let p = self.store.row(l.user, user);
        let w1 = &self.store.tensor(l.w1).data;
        let b1 = &self.store.tensor(l.b1).data;
        let h1 = &self.store.tensor(l.h1).data;
        let scores: Vec<f64> = (0..n_types as u32)
            .map(|t| super::ops::first_level_score(p, self.store.row(l.rtype, t), w1, b1, h1))
            .collect();
        softmax(&scores)
    }

    fn second_level_scores(&self, target: u32, group: &super::encoder::Group) -> Vec<f64> {
        let f = self.store.dims().f;
        let net = group.network as usize;
        let l = self.store.layout();
        let b2 = &self.store.tensor(l.b2[net]).data;
        let h2 = &self.store.tensor(l.h2[net]).data;
        let a = &self.target_proj[net][target as usize * f..(target as usize + 1) * f];
        group
            .entries
            .iter()
            .map(|e| {
                let b = &self.history_proj[net][e.item as usize * f..(e.item as usize + 1) * f];
                let c = (group.use_value && e.value != LATENT_VALUE)
                    .then(|| &self.value_proj[net][e.value as usize * f..(e.value as usize + 1) * f]);
                let mut s = 0.0;
                for k in 0..f {
                    let mut pre = a[k] + b[k];
                    if let Some(c) = c {
                        pre += c[k];
                    }
                    pre += b2[k].to_f64();
                    if pre > 0.0 {
                        s += h2[k].to_f64() * pre;
                    }
                }
                s
            })
            .collect()
    }

    fn evaluate_layout(&self, user: u32, target: u32, layout: &AttentionLayout, alpha: &[f64], trace: bool) -> Prediction {
        let l = self.store.layout();
        let d = self.store.dims().d;
        let mut m: Vec<f64> = self.store.row(l.user, user).iter().map(|x| x.to_f64()).collect();
        let mut traces = Vec::new();
        for group in &layout.groups {
            if group.entries.is_empty() {
                continue;
            }
            let n = group.entries.len();
            let beta = if self.config.attn_override.uniform_second_level() {
                vec![1.0 / n as f64; n]
            } else {
                smoothed_softmax(&self.second_level_scores(target, group), self.config.rho)
            };
            let mut profile = vec![0.0; d];
            for (e, &b) in group.entries.iter().zip(&beta) {
                for (acc, q) in profile.iter_mut().zip(self.store.row(l.item, e.item)) {
                    *acc += b * q.to_f64();
                }
            }
            let w = if layout.first_level { alpha[group.slot as usize] } else { 1.0 };
            for (acc, s) in m.iter_mut().zip(&profile) {
                *acc += if layout.first_level { s * w } else { *s };
            }
            if trace {
                traces.push(GroupTrace {
                    network: group.network,
                    slot: group.slot,
                    entries: group.entries.iter().zip(&beta).map(|(e, &b)| (e.item, e.value, b)).collect(),
                });
            }
        }
        let x: Vec<f64> = m
            .iter()
            .zip(self.store.row(l.item, target))
            .map(|(a, b)| a * b.to_f64())
            .collect();
        let score = mlp_head(
            &x,
            &self.store.tensor(l.mlp_w).data,
            &self.store.tensor(l.mlp_b).data,
            &self.store.tensor(l.out_w).data,
            self.store.tensor(l.out_b).data[0],
        );
        Prediction {
            score,
            first_level: if layout.first_level { alpha.to_vec() } else { Vec::new() },
            second_level: traces,
        }
    }

    fn alpha_for(&self, user: u32) -> Vec<f64> {
        if self.encoder.uses_first_level() {
            self.first_level(user)
        } else {
            Vec::new()
        }
    }

    /// `ŷ_ui` in evaluation mode.
    pub fn score(&self, user: u32, target: u32) -> f64 {
        let alpha = self.alpha_for(user);
        let layout = self.encoder.layout(self.corpus.partition(user, target));
        self.evaluate_layout(user, target, &layout, &alpha, false).score
    }

    /// Scores for many candidates of one user, sharing `α(u, ·)`.
    pub fn score_many(&self, user: u32, targets: &[u32]) -> Vec<f64> {
        let alpha = self.alpha_for(user);
        targets
            .iter()
            .map(|&i| {
                let layout = self.encoder.layout(self.corpus.partition(user, i));
                self.evaluate_layout(user, i, &layout, &alpha, false).score
            })
            .collect()
    }

    /// Score with attention traces.
    pub fn predict(&self, user: u32, target: u32) -> Prediction {
        let alpha = self.alpha_for(user);
        let layout = self.encoder.layout(self.corpus.partition(user, target));
        self.evaluate_layout(user, target, &layout, &alpha, true)
    }
}
