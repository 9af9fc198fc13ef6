//! Item-item relational task: relation embeddings `r = x_t + z_v`, DistMult
//! scores and the pairwise relational loss.

use crate::corpus::RelQuad;
use crate::model::ops::{distmult, neg_log_sigmoid};
use crate::params::{ParamStore, Tape, Var};
use crate::real::Real;

/// `x_t + z_v`.
pub fn relation_embedding<T: Real>(store: &ParamStore<T>, rtype: u32, value: u32) -> Vec<T> {
    let l = store.layout();
    store
        .row(l.rtype, rtype)
        .iter()
        .zip(store.row(l.value, value))
        .map(|(&x, &z)| x + z)
        .collect()
}

/// `f(i, r, j) = Σ_k q_i[k] r[k] q_j[k]`; equal bit for bit to `f(j, r, i)`.
pub fn distmult_score<T: Real>(q_i: &[T], r: &[T], q_j: &[T]) -> f64 {
    distmult(q_i, r, q_j)
}

/// Relational loss on the current parameters without recording a graph.
pub fn rel_loss_value<T: Real>(store: &ParamStore<T>, batch: &[RelQuad]) -> f64 {
    let q = store.layout().item;
    let total: f64 = batch
        .iter()
        .map(|b| {
            let r = relation_embedding(store, b.rtype, b.value);
            let pos = distmult(store.row(q, b.head), &r, store.row(q, b.tail));
            let neg = distmult(store.row(q, b.head), &r, store.row(q, b.neg));
            neg_log_sigmoid(pos - neg)
        })
        .sum();
    total / batch.len() as f64
}

/// Records `mean −ln σ(f(i,r,j) − f(i,r,j⁻))` on `tape`.
pub fn rel_loss<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, batch: &[RelQuad]) -> Var {
    assert!(!batch.is_empty(), "empty relational batch");
    let l = store.layout();
    let terms: Vec<Var> = batch
        .iter()
        .map(|b| {
            let qi = tape.param_row(store, l.item, b.head);
            let qj = tape.param_row(store, l.item, b.tail);
            let qn = tape.param_row(store, l.item, b.neg);
            let x = tape.param_row(store, l.rtype, b.rtype);
            let z = tape.param_row(store, l.value, b.value);
            let r = tape.add(x, z);
            let pij = tape.mul(qi, qj);
            let pin = tape.mul(qi, qn);
            let pos = tape.dot(pij, r);
            let neg = tape.dot(pin, r);
            let diff = tape.sub(pos, neg);
            tape.log_sigmoid(diff)
        })
        .collect();
    let mean = tape.mean(terms);
    let zero = tape.constant_scalar(T::ZERO);
    tape.sub(zero, mean)
}
