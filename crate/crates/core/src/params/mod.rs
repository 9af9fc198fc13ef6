//! Parameter storage, reverse-mode differentiation, Adagrad and the unit-ball
//! constraint on embedding rows.

mod checkpoint;
mod optim;
pub mod tape;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_id, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use optim::{adagrad_step, project_touched_rows, project_unit_ball, ADAGRAD_EPSILON, PROJECTION_SLACK};
pub use tape::{Tape, Var};

use crate::error::{RcfError, Result};
use crate::real::{norm_sq, Real};

/// Row norm bound enforced on every embedding row, with float slack.
pub const UNIT_BALL_TOLERANCE: f64 = 1e-6;

/// Sizes that fix every tensor shape in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_users: usize,
    pub n_items: usize,
    /// Relation types including the latent type.
    pub n_types: usize,
    /// Relation values including the latent value.
    pub n_values: usize,
    /// Embedding size.
    pub d: usize,
    /// Attention factor (hidden width of both attention networks).
    pub f: usize,
    /// Hidden width of the prediction MLP.
    pub hidden: usize,
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![T::ZERO; dims.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Width of one row (last dimension); a vector is a single row.
    pub fn row_len(&self) -> usize {
        *self.dims.last().unwrap_or(&1)
    }

    pub fn n_rows(&self) -> usize {
        if self.dims.len() <= 1 {
            1
        } else {
            self.dims[..self.dims.len() - 1].iter().product()
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        let w = self.row_len();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let w = self.row_len();
        &mut self.data[r * w..(r + 1) * w]
    }
}

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ids of the named tensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub user: ParamId,
    pub item: ParamId,
    pub rtype: ParamId,
    pub value: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub h1: ParamId,
    /// Second-level attention, one set per relation type (latent included).
    pub w2: Vec<ParamId>,
    pub b2: Vec<ParamId>,
    pub h2: Vec<ParamId>,
    pub mlp_w: ParamId,
    pub mlp_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl Layout {
    pub fn embeddings(&self) -> [ParamId; 4] {
        [self.user, self.item, self.rtype, self.value]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Embedding,
    Weight,
    Bias,
}

/// Named parameter tensors with gradient buffers and Adagrad accumulators.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    dims: ModelDims,
    layout: Layout,
    names: Vec<String>,
    kinds: Vec<Kind>,
    tensors: Vec<Tensor<T>>,
    grads: Vec<Vec<T>>,
    accum: Vec<Vec<T>>,
    // rows with a gradient contribution since the last projection
    touched: Vec<Vec<bool>>,
    touched_list: Vec<Vec<u32>>,
}

impl<T: Real> ParamStore<T> {
    /// Allocates all tensors as zeros.
    pub fn zeros(dims: ModelDims) -> Self {
        let ModelDims {
            n_users,
            n_items,
            n_types,
            n_values,
            d,
            f,
            hidden,
        } = dims;
        let mut names = Vec::new();
        let mut kinds = Vec::new();
        let mut tensors = Vec::new();
        let mut add = |name: String, kind: Kind, shape: &[usize]| {
            names.push(name);
            kinds.push(kind);
            tensors.push(Tensor::zeros(shape));
            ParamId(tensors.len() - 1)
        };
        let user = add("P".into(), Kind::Embedding, &[n_users, d]);
        let item = add("Q".into(), Kind::Embedding, &[n_items, d]);
        let rtype = add("X".into(), Kind::Embedding, &[n_types, d]);
        let value = add("Z".into(), Kind::Embedding, &[n_values, d]);
        let w1 = add("W1".into(), Kind::Weight, &[f, d]);
        let b1 = add("b1".into(), Kind::Bias, &[f]);
        let h1 = add("h1".into(), Kind::Weight, &[f]);
        let mut w2 = Vec::with_capacity(n_types);
        let mut b2 = Vec::with_capacity(n_types);
        let mut h2 = Vec::with_capacity(n_types);
        for t in 0..n_types {
            w2.push(add(format!("W2.{t}"), Kind::Weight, &[f, 3 * d]));
            b2.push(add(format!("b2.{t}"), Kind::Bias, &[f]));
            h2.push(add(format!("h2.{t}"), Kind::Weight, &[f]));
        }
        let mlp_w = add("Wm".into(), Kind::Weight, &[hidden, d]);
        let mlp_b = add("bm".into(), Kind::Bias, &[hidden]);
        let out_w = add("w_out".into(), Kind::Weight, &[hidden]);
        let out_b = add("b_out".into(), Kind::Bias, &[1]);

        let grads = tensors.iter().map(|t| vec![T::ZERO; t.len()]).collect();
        let accum = tensors.iter().map(|t| vec![T::ZERO; t.len()]).collect();
        let touched = tensors.iter().map(|t| vec![false; t.n_rows()]).collect();
        let touched_list = vec![Vec::new(); tensors.len()];
        Self {
            dims,
            layout: Layout {
                user,
                item,
                rtype,
                value,
                w1,
                b1,
                h1,
                w2,
                b2,
                h2,
                mlp_w,
                mlp_b,
                out_w,
                out_b,
            },
            names,
            kinds,
            tensors,
            grads,
            accum,
            touched,
            touched_list,
        }
    }

    /// Gaussian initialisation, std `0.1/sqrt(d)`, biases zero. The latent
    /// value row of `Z` stays zero.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut store = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.1 / (dims.d as f64).sqrt()).expect("valid std");
        for (tensor, kind) in store.tensors.iter_mut().zip(&store.kinds) {
            if *kind == Kind::Bias {
                continue;
            }
            for x in &mut tensor.data {
                *x = T::from_f64(normal.sample(&mut rng));
            }
        }
        let z = store.layout.value;
        store.tensors[z.0].row_mut(0).fill(T::ZERO);
        store
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_tensors(&self) -> usize {
        self.tensors.len()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn row(&self, id: ParamId, r: u32) -> &[T] {
        self.tensors[id.0].row(r as usize)
    }

    pub fn is_embedding(&self, id: ParamId) -> bool {
        self.kinds[id.0] == Kind::Embedding
    }

    pub fn grad(&self, id: ParamId) -> &[T] {
        &self.grads[id.0]
    }

    pub fn accumulator(&self, id: ParamId) -> &[T] {
        &self.accum[id.0]
    }

    /// Adds `g` into the gradient of row `row` (or the whole tensor for
    /// `None`) and marks the rows touched.
    pub fn accumulate_grad(&mut self, id: ParamId, row: Option<u32>, g: &[T]) {
        let t = &self.tensors[id.0];
        let (offset, rows) = match row {
            Some(r) => (r as usize * t.row_len(), r as usize..r as usize + 1),
            None => (0, 0..t.n_rows()),
        };
        debug_assert_eq!(g.len(), rows.len() * t.row_len());
        for (dst, &src) in self.grads[id.0][offset..offset + g.len()].iter_mut().zip(g) {
            *dst += src;
        }
        for r in rows {
            if !self.touched[id.0][r] {
                self.touched[id.0][r] = true;
                self.touched_list[id.0].push(r as u32);
            }
        }
    }

    /// Rows of `id` that received gradient since the last projection, in
    /// first-touched order.
    pub fn touched_rows(&self, id: ParamId) -> &[u32] {
        &self.touched_list[id.0]
    }

    pub(crate) fn clear_touched(&mut self) {
        for (flags, list) in self.touched.iter_mut().zip(&mut self.touched_list) {
            for &r in list.iter() {
                flags[r as usize] = false;
            }
            list.clear();
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(T::ZERO);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(|g| norm_sq(g)).sum::<f64>().sqrt()
    }

    /// Maximum L2 norm over all embedding rows.
    pub fn max_embedding_row_norm(&self) -> f64 {
        self.layout
            .embeddings()
            .iter()
            .flat_map(|&id| {
                let t = &self.tensors[id.0];
                (0..t.n_rows()).map(move |r| norm_sq(t.row(r)).sqrt())
            })
            .fold(0.0, f64::max)
    }

    /// Errors if any parameter is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.names.iter().zip(&self.tensors) {
            if let Some(pos) = t.data.iter().position(|x| !x.is_finite()) {
                return Err(RcfError::Numerical(format!(
                    "non-finite value in tensor `{name}` at offset {pos}"
                )));
            }
        }
        Ok(())
    }

    /// Errors naming the first tensor whose shape differs from `other`.
    pub fn check_same_shapes<U: Real>(&self, other: &ParamStore<U>) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(RcfError::Shape {
                tensor: "<tensor count>".into(),
                expected: vec![self.tensors.len()],
                found: vec![other.tensors.len()],
            });
        }
        for (i, (a, b)) in self.tensors.iter().zip(&other.tensors).enumerate() {
            if a.dims != b.dims || self.names[i] != other.names[i] {
                return Err(RcfError::Shape {
                    tensor: self.names[i].clone(),
                    expected: a.dims.clone(),
                    found: b.dims.clone(),
                });
            }
        }
        Ok(())
    }

    /// Converts the store to another precision. Gradients and accumulators
    /// are converted too.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.to_f64())).collect::<Vec<U>>();
        ParamStore {
            dims: self.dims,
            layout: self.layout.clone(),
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    dims: t.dims.clone(),
                    data: conv(&t.data),
                })
                .collect(),
            grads: self.grads.iter().map(conv).collect(),
            accum: self.accum.iter().map(conv).collect(),
            touched: self.touched.clone(),
            touched_list: self.touched_list.clone(),
        }
    }

    /// Whether all tensor values are bitwise equal (`f32` view).
    pub fn bits_equal(&self, other: &ParamStore<T>) -> bool {
        self.names == other.names
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| {
                a.dims == b.dims
                    && a
                        .data
                        .iter()
                        .zip(&b.data)
                        .all(|(x, y)| x.to_f64().to_bits() == y.to_f64().to_bits())
            })
    }
}
