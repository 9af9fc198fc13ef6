use super::{Kind, ParamStore};
use crate::real::{norm_sq, Real};

pub const ADAGRAD_EPSILON: f64 = 1e-8;

/// Rows are rescaled only when their norm exceeds `1 + PROJECTION_SLACK`, so a
/// freshly projected `f32` row (norm `1 ± ulp`) is a fixed point.
pub const PROJECTION_SLACK: f64 = 1e-7;

#[inline]
fn adagrad_coord<T: Real>(theta: &mut T, acc: &mut T, g: &mut T, lr: f64, eps: f64) {
    let gv = g.to_f64();
    if gv == 0.0 {
        return;
    }
    let a = acc.to_f64() + gv * gv;
    *acc = T::from_f64(a);
    *theta = T::from_f64(theta.to_f64() - lr * gv / (a + eps).sqrt());
    *g = T::ZERO;
}

/// One Adagrad update over every coordinate with a gradient, then zeroes the
/// gradient buffers. Embedding tables are visited only on touched rows; the
/// touched set is kept for the projection that follows.
pub fn adagrad_step<T: Real>(store: &mut ParamStore<T>, lr: f64, eps: f64) {
    for id in 0..store.tensors.len() {
        let tensor = &mut store.tensors[id];
        let grads = &mut store.grads[id];
        let accum = &mut store.accum[id];
        if store.kinds[id] == Kind::Embedding {
            let w = tensor.row_len();
            for &r in &store.touched_list[id] {
                let span = r as usize * w..(r as usize + 1) * w;
                for ((theta, acc), g) in tensor.data[span.clone()]
                    .iter_mut()
                    .zip(&mut accum[span.clone()])
                    .zip(&mut grads[span])
                {
                    adagrad_coord(theta, acc, g, lr, eps);
                }
            }
        } else {
            for ((theta, acc), g) in tensor.data.iter_mut().zip(accum.iter_mut()).zip(grads.iter_mut()) {
                adagrad_coord(theta, acc, g, lr, eps);
            }
        }
    }
}

#[inline]
fn project_row<T: Real>(row: &mut [T]) -> bool {
    let norm = norm_sq(row).sqrt();
    if norm > 1.0 + PROJECTION_SLACK {
        for x in row.iter_mut() {
            *x = T::from_f64(x.to_f64() / norm);
        }
        true
    } else {
        false
    }
}

/// `r <- r / max(1, ||r||)` on every row of P, Q, X and Z. Returns the number
/// of rows that were rescaled.
pub fn project_unit_ball<T: Real>(store: &mut ParamStore<T>) -> usize {
    let mut count = 0;
    for id in store.layout.embeddings() {
        let t = &mut store.tensors[id.0];
        for r in 0..t.n_rows() {
            count += project_row(t.row_mut(r)) as usize;
        }
    }
    store.clear_touched();
    count
}

/// Projection restricted to rows touched since the last projection.
pub fn project_touched_rows<T: Real>(store: &mut ParamStore<T>) -> usize {
    let mut count = 0;
    for id in store.layout.embeddings() {
        let t = &mut store.tensors[id.0];
        for &r in &store.touched_list[id.0] {
            count += project_row(t.row_mut(r as usize)) as usize;
        }
    }
    store.clear_touched();
    count
}

#[cfg(test)]
mod tests {
    use super::super::{tests::dims, ParamStore};
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s: ParamStore<f64> = ParamStore::zeros(dims());
        let h = s.layout().h1;
        s.accumulate_grad(h, None, &[1.0, 0.0]);
        adagrad_step(&mut s, 0.05, 1e-8);
        let theta = s.tensor(h).data[0];
        assert!((theta + 0.05).abs() < 1e-9, "{theta}");
        // zero gradient leaves coordinate and accumulator alone
        assert_eq!(s.tensor(h).data[1], 0.0);
        assert_eq!(s.accumulator(h)[1], 0.0);
        assert_eq!(s.accumulator(h)[0], 1.0);
        assert!(s.grad(h).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn second_step_is_scaled_by_root_two() {
        let mut s: ParamStore<f64> = ParamStore::zeros(dims());
        let h = s.layout().h1;
        s.accumulate_grad(h, None, &[1.0, 0.0]);
        adagrad_step(&mut s, 0.05, 1e-8);
        let after_one = s.tensor(h).data[0];
        s.accumulate_grad(h, None, &[1.0, 0.0]);
        adagrad_step(&mut s, 0.05, 1e-8);
        let step = after_one - s.tensor(h).data[0];
        let expected = 0.05 / (2.0f64 + 1e-8).sqrt();
        assert!((step - expected).abs() < 1e-15, "{step} vs {expected}");
    }

    #[test]
    fn embedding_rows_update_only_when_touched() {
        let mut s: ParamStore<f64> = ParamStore::init(dims(), 1);
        let q = s.layout().item;
        let before = s.tensor(q).clone();
        s.accumulate_grad(q, Some(2), &[0.5; 4]);
        adagrad_step(&mut s, 0.05, 1e-8);
        for r in 0..5 {
            if r == 2 {
                assert_ne!(s.tensor(q).row(r), before.row(r));
            } else {
                assert_eq!(s.tensor(q).row(r), before.row(r));
            }
        }
    }

    #[test]
    fn projection_examples() {
        let mut s: ParamStore<f64> = ParamStore::zeros(dims());
        let p = s.layout().user;
        s.tensor_mut(p).row_mut(0).copy_from_slice(&[2.0, 0.0, 0.0, 0.0]);
        s.tensor_mut(p).row_mut(1).copy_from_slice(&[0.25, 0.25, 0.25, 0.25]);
        s.tensor_mut(p).row_mut(2).copy_from_slice(&[1.0, 1.0, 1.0, 1.0]);
        let w1 = s.layout().w1;
        s.tensor_mut(w1).data.fill(5.0);
        let n = project_unit_ball(&mut s);
        assert_eq!(n, 2);
        assert_eq!(s.row(p, 0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.row(p, 1), &[0.25; 4]);
        assert_eq!(s.row(p, 2), &[0.5; 4]);
        // zero rows stay zero, attention weights are never projected
        assert!(s.row(s.layout().item, 0).iter().all(|&x| x == 0.0));
        assert!(s.tensor(w1).data.iter().all(|&x| x == 5.0));
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_bounded(vals in prop::collection::vec(-3.0f32..3.0, 20)) {
            let mut s: ParamStore<f32> = ParamStore::zeros(dims());
            let q = s.layout().item;
            s.tensor_mut(q).data.copy_from_slice(&vals);
            project_unit_ball(&mut s);
            let once = s.clone();
            project_unit_ball(&mut s);
            prop_assert!(s.bits_equal(&once));
            prop_assert!(s.max_embedding_row_norm() <= 1.0 + 1e-6);
        }

        #[test]
        fn accumulator_is_non_decreasing(gs in prop::collection::vec(-2.0f64..2.0, 1..10)) {
            let mut s: ParamStore<f64> = ParamStore::zeros(dims());
            let h = s.layout().h1;
            let mut last = 0.0;
            for g in gs {
                s.accumulate_grad(h, None, &[g, -g]);
                adagrad_step(&mut s, 0.05, 1e-8);
                let a = s.accumulator(h)[0];
                prop_assert!(a >= last);
                last = a;
            }
        }
    }
}
