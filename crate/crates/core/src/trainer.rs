//! Joint training: one recommendation batch and one relational batch per step,
//! Adagrad on `L = L_rec + γ L_rel`, then projection of the updated
//! embedding rows onto the unit ball.

use std::time::Instant;

use serde::Serialize;

use crate::corpus::{Corpus, Sampler};
use crate::error::{RcfError, Result};
use crate::eval::{evaluate_with, CandidateMode, EvalOptions, Split};
use crate::model::{Dropout, GraphBuilder, HistoryEncoder, RcfConfig, Scorer};
use crate::params::{adagrad_step, project_touched_rows, ModelDims, ParamStore, ADAGRAD_EPSILON};
use crate::real::Real;
use crate::relation::{rel_loss, rel_loss_value};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Weight of the relational loss; 0 trains the recommendation task alone.
    pub gamma: f64,
    pub epochs: usize,
    /// Validation interval in epochs; 0 disables validation and early stopping.
    pub eval_every: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub deterministic: bool,
    /// Validation candidates; `None` picks by corpus size.
    pub eval_candidates: Option<CandidateMode>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            batch_size: 512,
            gamma: 0.01,
            epochs: 50,
            eval_every: 1,
            patience: 10,
            seed: 42,
            deterministic: true,
            eval_candidates: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(RcfError::Config(format!("gamma must be a finite value >= 0, got {}", self.gamma)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(RcfError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(RcfError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Steps per epoch: one pass over the training interactions.
pub fn epoch_size(n_train: usize, batch_size: usize) -> usize {
    n_train.div_ceil(batch_size).max(1)
}

/// Independent stream seeds derived from the run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

const INIT_STREAM: u64 = 0;
const SAMPLER_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_rec: f64,
    /// Unweighted relational loss; absent when the corpus has no triplets.
    pub l_rel: Option<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub projected_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Absent for the untrained state.
    pub mean_loss: Option<f64>,
    pub valid_ndcg10: Option<f64>,
    pub valid_hr10: Option<f64>,
    pub wall_ms: u128,
    pub projected_rows: usize,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Epoch(e) => Some(e),
            _ => None,
        })
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    /// Newline-delimited JSON.
    pub fn to_ndjson(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("log record serialises") + "\n")
            .collect()
    }
}

/// What the epoch hook is told after each epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochEvent {
    pub epoch: usize,
    pub mean_loss: Option<f64>,
    /// Present on validation epochs.
    pub valid_ndcg10: Option<f64>,
    pub valid_hr10: Option<f64>,
    pub best: bool,
}

pub struct TrainOutcome<T> {
    /// Parameters at the best validation epoch, or the last epoch without validation.
    pub store: ParamStore<T>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub log: TrainLog,
}

pub struct Trainer<'a, T: Real> {
    corpus: &'a Corpus,
    model: RcfConfig,
    config: TrainConfig,
    encoder: std::sync::Arc<dyn HistoryEncoder>,
    store: ParamStore<T>,
    sampler: Sampler,
    dropout: Dropout,
    steps_done: usize,
    log: TrainLog,
}

impl<'a, T: Real> Trainer<'a, T> {
    /// Trainer over freshly initialised parameters.
    pub fn new(corpus: &'a Corpus, model: &RcfConfig, config: &TrainConfig) -> Result<Self> {
        let dims = model.dims(corpus.n_users(), corpus.n_items(), corpus.n_types(), corpus.n_values());
        let store = ParamStore::init(dims, derive_seed(config.seed, INIT_STREAM));
        Self::with_store(corpus, model, config, store)
    }

    pub fn with_store(corpus: &'a Corpus, model: &RcfConfig, config: &TrainConfig, store: ParamStore<T>) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        let expected: ModelDims = model.dims(corpus.n_users(), corpus.n_items(), corpus.n_types(), corpus.n_values());
        store.check_same_shapes(&ParamStore::<T>::zeros(expected))?;
        Ok(Self {
            corpus,
            model: model.clone(),
            config: config.clone(),
            encoder: model.encoder()?,
            store,
            sampler: Sampler::new(derive_seed(config.seed, SAMPLER_STREAM)),
            dropout: Dropout::new(model.dropout, derive_seed(config.seed, DROPOUT_STREAM)),
            steps_done: 0,
            log: TrainLog::default(),
        })
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn steps_per_epoch(&self) -> usize {
        epoch_size(self.corpus.interactions.n_train(), self.config.batch_size)
    }

    /// One optimisation step; `epoch` only labels the record.
    pub fn step(&mut self, epoch: usize) -> Result<StepRecord> {
        let step = self.steps_done;
        let rec_batch = self.sampler.rec_batch(self.corpus, self.config.batch_size)?;
        let rel_batch = if self.corpus.relations.triplets().is_empty() {
            None
        } else {
            Some(self.sampler.rel_batch(self.corpus, self.config.batch_size)?)
        };

        let mut g = GraphBuilder::new(&self.store, self.corpus, &self.model, self.encoder.as_ref())
            .with_finite_check(cfg!(debug_assertions));
        let l_rec = g.rec_loss(&rec_batch, Some(&mut self.dropout));
        let mut tape = g.into_tape();
        let l_rec_value = tape.scalar(l_rec).to_f64();
        let (loss, l_rel_value) = match &rel_batch {
            Some(batch) if self.config.gamma > 0.0 => {
                let l_rel = rel_loss(&mut tape, &self.store, batch);
                let gamma = tape.constant_scalar(T::from_f64(self.config.gamma));
                let weighted = tape.scale(l_rel, gamma);
                let total = tape.add(l_rec, weighted);
                (total, Some(tape.scalar(l_rel).to_f64()))
            }
            Some(batch) => (l_rec, Some(rel_loss_value(&self.store, batch))),
            None => (l_rec, None),
        };
        let loss_value = tape.scalar(loss).to_f64();
        if !loss_value.is_finite() || l_rel_value.is_some_and(|v| !v.is_finite()) {
            return Err(RcfError::Numerical(format!(
                "non-finite loss at epoch {epoch}, step {step} (L_rec {l_rec_value}, L_rel {l_rel_value:?}); first triple {:?}",
                rec_batch.first()
            )));
        }
        tape.backward(loss, &mut self.store)
            .map_err(|e| RcfError::Numerical(format!("epoch {epoch}, step {step}: {e}")))?;
        let grad_norm = self.store.grad_norm();
        adagrad_step(&mut self.store, self.config.lr, ADAGRAD_EPSILON);
        let projected_rows = project_touched_rows(&mut self.store);
        if cfg!(debug_assertions) {
            self.store.check_finite()?;
        }
        self.steps_done += 1;
        Ok(StepRecord {
            epoch,
            step,
            l_rec: l_rec_value,
            l_rel: l_rel_value,
            loss: loss_value,
            grad_norm,
            projected_rows,
        })
    }

    /// Validation NDCG@10 and HR@10 of the current parameters.
    pub fn validate(&self) -> Result<(f64, f64)> {
        let scorer = Scorer::new(&self.store, self.corpus, &self.model)?;
        let opts = EvalOptions {
            split: Split::Valid,
            mode: self.config.eval_candidates.unwrap_or(CandidateMode::default_for(self.corpus.n_items())),
            seed: self.config.seed,
        };
        let (_, summary) = evaluate_with(self.corpus, opts, |u, c| scorer.score_many(u, c))?;
        Ok((summary.get("NDCG@10").unwrap(), summary.get("HR@10").unwrap()))
    }

    /// Runs up to `epochs`, stopping early when validation stalls. `hook` sees
    /// the parameters after every epoch (epoch 0 is the untrained state).
    pub fn train(mut self, mut hook: impl FnMut(EpochEvent, &ParamStore<T>) -> Result<()>) -> Result<TrainOutcome<T>> {
        let validating = self.config.eval_every > 0;
        let mut best: Option<(usize, f64, ParamStore<T>)> = None;
        if validating {
            let (ndcg, hr) = self.validate()?;
            best = Some((0, ndcg, self.store.clone()));
            self.log.records.push(LogRecord::Epoch(EpochRecord {
                epoch: 0,
                mean_loss: None,
                valid_ndcg10: Some(ndcg),
                valid_hr10: Some(hr),
                wall_ms: 0,
                projected_rows: 0,
                best: true,
            }));
            log::info!("epoch 0: valid NDCG@10 {ndcg:.4} HR@10 {hr:.4}");
            hook(
                EpochEvent { epoch: 0, mean_loss: None, valid_ndcg10: Some(ndcg), valid_hr10: Some(hr), best: true },
                &self.store,
            )?;
        }
        let mut epochs_run = 0;
        let started = Instant::now();
        for epoch in 1..=self.config.epochs {
            let mut loss_sum = 0.0;
            let mut projected = 0;
            let steps = self.steps_per_epoch();
            for _ in 0..steps {
                let rec = self.step(epoch)?;
                loss_sum += rec.loss;
                projected += rec.projected_rows;
                self.log.records.push(LogRecord::Step(rec));
            }
            epochs_run = epoch;
            let evaluated = validating && epoch % self.config.eval_every == 0;
            let (mut ndcg, mut hr, mut is_best) = (None, None, false);
            if evaluated {
                let (n, h) = self.validate()?;
                ndcg = Some(n);
                hr = Some(h);
                if best.as_ref().is_none_or(|b| n > b.1) {
                    best = Some((epoch, n, self.store.clone()));
                    is_best = true;
                }
            }
            let mean_loss = loss_sum / steps as f64;
            log::info!(
                "epoch {epoch}: loss {mean_loss:.5}{}",
                ndcg.map(|n| format!(", valid NDCG@10 {n:.4}")).unwrap_or_default()
            );
            self.log.records.push(LogRecord::Epoch(EpochRecord {
                epoch,
                mean_loss: Some(mean_loss),
                valid_ndcg10: ndcg,
                valid_hr10: hr,
                wall_ms: started.elapsed().as_millis(),
                projected_rows: projected,
                best: is_best,
            }));
            hook(
                EpochEvent { epoch, mean_loss: Some(mean_loss), valid_ndcg10: ndcg, valid_hr10: hr, best: is_best },
                &self.store,
            )?;
            if let Some((best_epoch, _, _)) = &best {
                if validating && epoch - best_epoch >= self.config.patience {
                    log::info!("early stop at epoch {epoch}: no improvement since epoch {best_epoch}");
                    break;
                }
            }
        }
        let (store, best_epoch) = match best {
            Some((e, _, s)) => (s, e),
            None => (self.store, epochs_run),
        };
        Ok(TrainOutcome { store, best_epoch, epochs_run, log: self.log })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::UNIT_BALL_TOLERANCE;

    fn corpus() -> Corpus {
        let mut s = String::new();
        for u in 0..8 {
            for k in 0..5 {
                s.push_str(&format!("u{u}\ti{}\n", (u * 3 + k * 2) % 12));
            }
        }
        let rel = "i0\ti1\tg\ta\ni1\ti2\tg\ta\ni3\ti4\tg\tb\ni5\ti6\tc\tx\ni7\ti9\tc\ty\ni2\ti8\tg\tb\n";
        Corpus::from_tsv(&s, Some(rel), false, 3).unwrap()
    }

    fn small_model() -> RcfConfig {
        RcfConfig { d: 8, f: 4, mlp_hidden: 8, ..Default::default() }
    }

    #[test]
    fn epoch_size_examples() {
        assert_eq!(epoch_size(100_000, 512), 196);
        assert_eq!(epoch_size(10, 512), 1);
        assert_eq!(epoch_size(512, 512), 1);
    }

    #[test]
    fn steps_are_reproducible() {
        let c = corpus();
        let tc = TrainConfig { batch_size: 16, ..Default::default() };
        let run = || {
            let mut t = Trainer::<f32>::new(&c, &small_model(), &tc).unwrap();
            let r = t.step(1).unwrap();
            (r, t.store().clone())
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert!(sa.bits_equal(&sb));
    }

    #[test]
    fn norms_stay_in_unit_ball() {
        let c = corpus();
        let tc = TrainConfig { batch_size: 16, lr: 0.5, ..Default::default() };
        let mut t = Trainer::<f32>::new(&c, &small_model(), &tc).unwrap();
        for _ in 0..40 {
            t.step(1).unwrap();
            assert!(t.store().max_embedding_row_norm() <= 1.0 + UNIT_BALL_TOLERANCE);
        }
    }

    #[test]
    fn zero_gamma_leaves_relation_out_of_the_gradient() {
        let c = corpus();
        let tc = TrainConfig { batch_size: 16, gamma: 0.0, ..Default::default() };
        let mut t = Trainer::<f64>::new(&c, &small_model(), &tc).unwrap();
        let r = t.step(1).unwrap();
        assert_eq!(r.loss, r.l_rec);
        assert!(r.l_rel.unwrap() > 0.0);
    }

    #[test]
    fn negative_gamma_rejected() {
        let tc = TrainConfig { gamma: -0.1, ..Default::default() };
        assert!(matches!(tc.validate(), Err(RcfError::Config(_))));
    }

    #[test]
    fn log_is_ndjson() {
        let c = corpus();
        let tc = TrainConfig { batch_size: 16, epochs: 2, ..Default::default() };
        let out = Trainer::<f32>::new(&c, &small_model(), &tc).unwrap().train(|_, _| Ok(())).unwrap();
        let text = out.log.to_ndjson();
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v["kind"] == "step" || v["kind"] == "epoch");
        }
        assert_eq!(out.log.epochs().count(), 3);
    }
}
