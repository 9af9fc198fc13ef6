//! Finite-difference verification of the analytic gradients.
//!
//! Every tape primitive and the composed losses `L_rec`, `L_rel` and
//! `L = L_rec + γ L_rel` are checked in `f64` against central differences.
//! The error of one tensor is `‖a − n‖ / max(‖a‖, ‖n‖)`; a component reports
//! the worst tensor. Fixtures whose ReLU pre-activations come within
//! [`KINK_MARGIN`] of zero are redrawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::corpus::{Corpus, RecTriple, RelQuad, Sampler};
use crate::error::{RcfError, Result};
use crate::model::{Dropout, GraphBuilder, RcfConfig};
use crate::params::{ParamStore, Tape, Var};
use crate::real::norm_sq;
use crate::relation::rel_loss;

/// Minimum distance of any ReLU pre-activation from its kink.
pub const KINK_MARGIN: f64 = 1e-3;
const MAX_RESAMPLES: u64 = 200;
const DROPOUT_MASK_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    /// Explicit relation types (the latent type comes on top).
    pub n_types: usize,
    /// Explicit relation values (the latent value comes on top).
    pub n_values: usize,
    pub d: usize,
    pub f: usize,
    pub hidden: usize,
    pub eps: f64,
    pub tolerance: f64,
    pub gamma: f64,
    pub rho: f64,
    pub dropout: f64,
    pub batch: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_users: 4,
            n_items: 10,
            n_types: 3,
            n_values: 5,
            d: 8,
            f: 4,
            hidden: 8,
            eps: 1e-4,
            tolerance: 1e-4,
            gamma: 0.01,
            rho: 0.5,
            dropout: 0.2,
            batch: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentResult {
    pub component: String,
    pub max_rel_error: f64,
    /// Tensor or input with the largest error.
    pub worst: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub resamples: u64,
    pub components: Vec<ComponentResult>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &ComponentResult> {
        self.components.iter().filter(|c| !c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.components {
            out.push_str(&format!(
                "{:<18} {:>10.3e}  {:<4} (worst: {})\n",
                c.component,
                c.max_rel_error,
                if c.passed { "ok" } else { "FAIL" },
                c.worst
            ));
        }
        out
    }
}

/// Denominator floor of [`relative_error`]: gradients that vanish in exact
/// arithmetic (e.g. a bias shared by every softmax input) are compared absolutely.
pub const GRADIENT_FLOOR: f64 = 1e-8;

/// Norm-wise relative error of two gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm_sq(analytic).sqrt().max(norm_sq(numeric).sqrt()).max(GRADIENT_FLOOR);
    norm_sq(&diff).sqrt() / scale
}

struct Fixture {
    corpus: Corpus,
    model: RcfConfig,
    store: ParamStore<f64>,
    rec: Vec<RecTriple>,
    rel: Vec<RelQuad>,
}

fn fixture(cfg: &GradcheckConfig, seed: u64) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inter = String::new();
    let per_user = 5.min(cfg.n_items - 2).max(3);
    for u in 0..cfg.n_users {
        for k in rand::seq::index::sample(&mut rng, cfg.n_items, per_user).iter() {
            inter.push_str(&format!("u{u}\ti{k}\n"));
        }
    }
    // every item id appears so the vocabulary has `n_items` entries
    for i in 0..cfg.n_items {
        inter.push_str(&format!("w{}\ti{i}\n", i % 3));
    }
    let mut rel = String::new();
    for _ in 0..3 * cfg.n_items {
        let a = rng.random_range(0..cfg.n_items);
        let b = rng.random_range(0..cfg.n_items);
        if a != b {
            let t = rng.random_range(0..cfg.n_types);
            let v = rng.random_range(0..cfg.n_values);
            rel.push_str(&format!("i{a}\ti{b}\tt{t}\tv{v}\n"));
        }
    }
    let corpus = Corpus::from_tsv(&inter, Some(&rel), false, seed)?;
    let model = RcfConfig {
        d: cfg.d,
        f: cfg.f,
        mlp_hidden: cfg.hidden,
        rho: cfg.rho,
        dropout: cfg.dropout,
        ..Default::default()
    };
    let dims = model.dims(corpus.n_users(), corpus.n_items(), corpus.n_types(), corpus.n_values());
    let mut store = ParamStore::<f64>::zeros(dims);
    let weights = Normal::new(0.0, 0.6).expect("valid std");
    for id in store.ids().collect::<Vec<_>>() {
        let embedding = store.is_embedding(id);
        let t = store.tensor_mut(id);
        for x in &mut t.data {
            *x = weights.sample(&mut rng);
        }
        if embedding {
            for r in 0..t.n_rows() {
                let row = t.row_mut(r);
                let n = norm_sq(row).sqrt();
                let target = rng.random_range(0.3..0.95);
                for x in row.iter_mut() {
                    *x *= target / n;
                }
            }
        }
    }
    let z = store.layout().value;
    store.tensor_mut(z).row_mut(0).fill(0.0);
    let mut sampler = Sampler::new(seed);
    let rec = sampler.rec_batch(&corpus, cfg.batch)?;
    let rel = sampler.rel_batch(&corpus, cfg.batch)?;
    Ok(Fixture { corpus, model, store, rec, rel })
}

#[derive(Clone, Copy, PartialEq)]
enum Loss {
    Rec,
    Rel,
    Joint,
}

fn build_loss(fx: &Fixture, store: &ParamStore<f64>, which: Loss, gamma: f64) -> (Tape<f64>, Var) {
    let encoder = fx.model.encoder().expect("registered mode");
    let mut dropout = Dropout::new(fx.model.dropout, DROPOUT_MASK_SEED);
    let mut g = GraphBuilder::new(store, &fx.corpus, &fx.model, encoder.as_ref());
    let rec = (which != Loss::Rel).then(|| g.rec_loss(&fx.rec, Some(&mut dropout)));
    let mut tape = g.into_tape();
    let loss = match which {
        Loss::Rec => rec.unwrap(),
        Loss::Rel => rel_loss(&mut tape, store, &fx.rel),
        Loss::Joint => {
            let r = rel_loss(&mut tape, store, &fx.rel);
            let gm = tape.constant_scalar(gamma);
            let w = tape.scale(r, gm);
            tape.add(rec.unwrap(), w)
        }
    };
    (tape, loss)
}

fn check_loss(fx: &Fixture, cfg: &GradcheckConfig, name: &str, which: Loss, corrupt: bool) -> Result<ComponentResult> {
    let (tape, loss) = build_loss(fx, &fx.store, which, cfg.gamma);
    let mut analytic_store = fx.store.clone();
    analytic_store.zero_grads();
    tape.backward(loss, &mut analytic_store)?;
    let mut worst = (0.0f64, String::from("-"));
    let mut probe = fx.store.clone();
    for id in fx.store.ids().collect::<Vec<_>>() {
        let mut analytic = analytic_store.grad(id).to_vec();
        if corrupt {
            for g in &mut analytic {
                *g *= 1.01;
            }
        }
        let mut numeric = vec![0.0; analytic.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.tensor(id).data[k];
            probe.tensor_mut(id).data[k] = orig + cfg.eps;
            let (t, l) = build_loss(fx, &probe, which, cfg.gamma);
            let plus = t.scalar(l);
            probe.tensor_mut(id).data[k] = orig - cfg.eps;
            let (t, l) = build_loss(fx, &probe, which, cfg.gamma);
            let minus = t.scalar(l);
            probe.tensor_mut(id).data[k] = orig;
            *slot = (plus - minus) / (2.0 * cfg.eps);
        }
        let e = relative_error(&analytic, &numeric);
        if e > worst.0 || worst.1 == "-" {
            worst = (e, fx.store.name(id).to_string());
        }
    }
    Ok(ComponentResult {
        component: name.into(),
        max_rel_error: worst.0,
        worst: worst.1,
        passed: worst.0 < cfg.tolerance,
    })
}

type Build = fn(&mut Tape<f64>, &[Var]) -> Var;

/// Primitive fixtures: input lengths and the expression under test.
fn primitives() -> Vec<(&'static str, Vec<usize>, Build)> {
    vec![
        ("matvec", vec![12, 4], |t, v| t.matvec(v[0], 4, v[1])),
        ("matvec_block", vec![18, 2], |t, v| t.matvec_block(v[0], 6, 2, v[1])),
        ("add", vec![5, 5], |t, v| t.add(v[0], v[1])),
        ("sub", vec![5, 5], |t, v| t.sub(v[0], v[1])),
        ("mul", vec![5, 5], |t, v| t.mul(v[0], v[1])),
        ("scale", vec![5, 1], |t, v| t.scale(v[0], v[1])),
        ("add_n", vec![4, 4, 4], |t, v| t.add_n(v.to_vec())),
        ("concat", vec![3, 2, 4], |t, v| t.concat(v.to_vec())),
        ("relu", vec![6], |t, v| t.relu(v[0])),
        ("sigmoid", vec![6], |t, v| t.sigmoid(v[0])),
        ("log", vec![6], |t, v| {
            let e = t.exp(v[0]);
            t.log(e)
        }),
        ("exp", vec![6], |t, v| t.exp(v[0])),
        ("log_sigmoid", vec![6], |t, v| t.log_sigmoid(v[0])),
        ("sum", vec![6], |t, v| t.sum(v[0])),
        ("dot", vec![6, 6], |t, v| t.dot(v[0], v[1])),
        ("mean", vec![1, 1, 1], |t, v| t.mean(v.to_vec())),
        ("stack", vec![1, 1, 1], |t, v| t.stack(v.to_vec())),
        ("index", vec![5], |t, v| t.index(v[0], 3)),
        ("softmax", vec![5], |t, v| t.softmax(v[0])),
        ("smoothed_softmax", vec![5], |t, v| t.smoothed_softmax(v[0], 0.5)),
        ("weighted_sum", vec![3, 4, 4, 4], |t, v| t.weighted_sum(v[0], v[1..].to_vec())),
        ("attention_score", vec![4, 4, 4, 4], |t, v| t.attention_score(v[..3].to_vec(), v[3])),
        ("mask", vec![6], |t, v| t.mask(v[0], vec![0.0, 1.25, 1.25, 0.0, 1.25, 1.25])),
    ]
}

/// Scalarises an output with fixed random weights.
fn primitive_loss(build: Build, inputs: &[Vec<f64>], weights: &[f64]) -> (Tape<f64>, Vec<Var>, Var) {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
    let y = build(&mut t, &vars);
    let loss = if t.value(y).len() == 1 {
        y
    } else {
        let w = t.constant(weights[..t.value(y).len()].to_vec());
        t.dot(y, w)
    };
    (t, vars, loss)
}

fn check_primitive(
    name: &str,
    sizes: &[usize],
    build: Build,
    cfg: &GradcheckConfig,
    rng: &mut ChaCha8Rng,
    corrupt: bool,
) -> Result<ComponentResult> {
    let weights: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut inputs;
    let mut attempts = 0;
    loop {
        // magnitudes kept away from zero so element-wise ReLUs are smooth
        inputs = sizes
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|_| {
                        let m: f64 = rng.random_range(0.1..1.0);
                        if rng.random::<bool>() { m } else { -m }
                    })
                    .collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>();
        let (t, _, _) = primitive_loss(build, &inputs, &weights);
        attempts += 1;
        if t.relu_margin() > KINK_MARGIN || attempts > MAX_RESAMPLES {
            break;
        }
    }
    let (t, vars, loss) = primitive_loss(build, &inputs, &weights);
    let grads = t.gradients(loss)?;
    let mut worst = (0.0f64, String::from("-"));
    for (k, v) in vars.iter().enumerate() {
        let mut analytic = grads[v.index()].clone().unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        if corrupt {
            for g in &mut analytic {
                *g *= 1.01;
            }
        }
        let mut numeric = vec![0.0; inputs[k].len()];
        for c in 0..inputs[k].len() {
            let mut probe = inputs.clone();
            probe[k][c] += cfg.eps;
            let (tp, _, lp) = primitive_loss(build, &probe, &weights);
            probe[k][c] -= 2.0 * cfg.eps;
            let (tm, _, lm) = primitive_loss(build, &probe, &weights);
            numeric[c] = (tp.scalar(lp) - tm.scalar(lm)) / (2.0 * cfg.eps);
        }
        let e = relative_error(&analytic, &numeric);
        if e > worst.0 || worst.1 == "-" {
            worst = (e, format!("input {k}"));
        }
    }
    Ok(ComponentResult {
        component: name.into(),
        max_rel_error: worst.0,
        worst: worst.1,
        passed: worst.0 < cfg.tolerance,
    })
}

/// Runs every check. `corrupt` names a component whose analytic gradient is
/// deliberately scaled by 1.01 (harness self-test).
pub fn run(cfg: &GradcheckConfig, corrupt: Option<&str>) -> Result<GradcheckReport> {
    if cfg.n_items < 5 || cfg.n_users == 0 || cfg.n_types == 0 || cfg.n_values == 0 {
        return Err(RcfError::Config("gradcheck needs >= 5 items and at least one user, type and value".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut components = Vec::new();
    for (name, sizes, build) in primitives() {
        components.push(check_primitive(name, &sizes, build, cfg, &mut rng, corrupt == Some(name))?);
    }

    let mut resamples = 0;
    let fx = loop {
        let fx = fixture(cfg, cfg.seed.wrapping_add(resamples))?;
        let margin = [Loss::Rec, Loss::Joint]
            .iter()
            .map(|&w| build_loss(&fx, &fx.store, w, cfg.gamma).0.relu_margin())
            .fold(f64::INFINITY, f64::min);
        if margin > KINK_MARGIN {
            break fx;
        }
        resamples += 1;
        if resamples > MAX_RESAMPLES {
            return Err(RcfError::Numerical("could not draw a fixture away from ReLU kinks".into()));
        }
    };
    for (name, which) in [("L_rec", Loss::Rec), ("L_rel", Loss::Rel), ("L", Loss::Joint)] {
        components.push(check_loss(&fx, cfg, name, which, corrupt == Some(name))?);
    }
    let passed = components.iter().all(|c| c.passed);
    Ok(GradcheckReport { config: cfg.clone(), resamples, components, passed })
}

/// Names accepted by the corruption hook.
pub fn component_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = primitives().into_iter().map(|p| p.0).collect();
    names.extend(["L_rec", "L_rel", "L"]);
    names
}
