//! Scalar building blocks of the forward pass, written directly over slices.
//!
//! These are the reference forms; the tape and the cached scorer compute the
//! same quantities with shared sub-expressions factored out.

use crate::real::Real;

pub use crate::params::tape::{smoothed_softmax, softmax};

/// `hᵀ ReLU(W x + b)` for `W` stored row-major as `h.len() × x.len()`.
pub fn feedforward_score<T: Real>(w: &[T], b: &[T], h: &[T], x: &[f64]) -> f64 {
    let cols = x.len();
    debug_assert_eq!(w.len(), h.len() * cols);
    let mut s = 0.0;
    for k in 0..h.len() {
        let row = &w[k * cols..(k + 1) * cols];
        let pre: f64 = row.iter().zip(x).map(|(a, b)| a.to_f64() * b).sum::<f64>() + b[k].to_f64();
        if pre > 0.0 {
            s += h[k].to_f64() * pre;
        }
    }
    s
}

/// First-level score `a(p_u, x_t) = h₁ᵀ ReLU(W₁ (p_u ⊙ x_t) + b₁)`.
pub fn first_level_score<T: Real>(p_u: &[T], x_t: &[T], w1: &[T], b1: &[T], h1: &[T]) -> f64 {
    let x: Vec<f64> = p_u.iter().zip(x_t).map(|(a, b)| a.to_f64() * b.to_f64()).collect();
    feedforward_score(w1, b1, h1, &x)
}

/// First-level weights: standard softmax over the type scores.
pub fn first_level_weights(scores: &[f64]) -> Vec<f64> {
    softmax(scores)
}

/// Second-level score `b_t = h₂ₜᵀ ReLU(W₂ₜ [q_i; q_j; z_v] + b₂ₜ)`.
pub fn second_level_score<T: Real>(q_i: &[T], q_j: &[T], z_v: &[T], w2: &[T], b2: &[T], h2: &[T]) -> f64 {
    let x: Vec<f64> = q_i.iter().chain(q_j).chain(z_v).map(|v| v.to_f64()).collect();
    feedforward_score(w2, b2, h2, &x)
}

/// Second-level weights: smoothed softmax with exponent `rho`.
pub fn second_level_weights(scores: &[f64], rho: f64) -> Vec<f64> {
    smoothed_softmax(scores, rho)
}

/// `Σ_k β_k q_{j_k}`; zero for an empty bucket.
pub fn type_profile<T: Real>(items: &[&[T]], beta: &[f64], d: usize) -> Vec<f64> {
    debug_assert_eq!(items.len(), beta.len());
    let mut s = vec![0.0; d];
    for (q, &b) in items.iter().zip(beta) {
        for (acc, x) in s.iter_mut().zip(q.iter()) {
            *acc += b * x.to_f64();
        }
    }
    s
}

/// MLP head `w_outᵀ ReLU(W_m x + b_m) + b_out` in evaluation mode.
pub fn mlp_head<T: Real>(x: &[f64], wm: &[T], bm: &[T], w_out: &[T], b_out: T) -> f64 {
    feedforward_score(wm, bm, w_out, x) + b_out.to_f64()
}

/// DistMult triple product `Σ_k q_i[k] r[k] q_j[k]`, symmetric in `q_i, q_j`
/// bit for bit.
pub fn distmult<T: Real>(q_i: &[T], r: &[T], q_j: &[T]) -> f64 {
    let mut s = 0.0f64;
    for k in 0..r.len() {
        s += (q_i[k].to_f64() * q_j[k].to_f64()) * r[k].to_f64();
    }
    s
}

/// Stable `−ln σ(x)`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    (-x).max(0.0) + (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_user_gives_bias_only_score() {
        let w1 = [0.3, -0.2, 0.5, 0.1, 0.7, -0.4, 0.2, 0.9];
        let b1 = [0.5, -1.0];
        let h1 = [2.0, 3.0];
        let s = first_level_score(&[0.0f64; 4], &[1.0, 2.0, 3.0, 4.0], &w1, &b1, &h1);
        assert_eq!(s, 2.0 * 0.5);
        let s = first_level_score(&[1.0f64; 4], &[1.0; 4], &w1, &b1, &[0.0, 0.0]);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn first_level_score_matches_hand_arithmetic() {
        // d = 4, f = 2
        let p = [0.1, -0.2, 0.3, 0.4];
        let x = [0.5, 0.5, -1.0, 2.0];
        let w1 = [1.0, 0.0, 2.0, -1.0, 0.5, 0.5, 0.5, 0.5];
        let b1 = [0.1, -0.3];
        let h1 = [1.5, -2.0];
        // p ⊙ x = (0.05, -0.1, -0.3, 0.8)
        // row0: 0.05 - 0.6 - 0.8 + 0.1 = -1.25 -> 0
        // row1: 0.5 * 0.45 - 0.3 = -0.075 -> 0
        assert_eq!(first_level_score(&p, &x, &w1, &b1, &h1), 0.0);
        let b1 = [2.0, 1.0];
        // row0: -1.35 + 2 = 0.65 ; row1: 0.225 + 1 = 1.225
        let s = first_level_score(&p, &x, &w1, &b1, &h1);
        assert!((s - (1.5 * 0.65 - 2.0 * 1.225)).abs() < 1e-12, "{s}");
    }

    #[test]
    fn second_level_constant_path() {
        let f = 5;
        let d = 2;
        let w2 = vec![0.0f64; f * 3 * d];
        let s = second_level_score(&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0], &w2, &[1.0; 5], &[1.0; 5]);
        assert_eq!(s, f as f64);
        let s = second_level_score(&[0.0; 2], &[0.0; 2], &[0.0; 2], &vec![0.7; f * 6], &[0.5, -1.0, 0.0, 2.0, 1.0], &[1.0, 1.0, 1.0, 2.0, -1.0]);
        assert_eq!(s, 0.5 + 4.0 - 1.0);
    }

    #[test]
    fn weights_closed_forms() {
        assert_eq!(first_level_weights(&[0.3]), vec![1.0]);
        let p = first_level_weights(&[0.0, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        assert!(first_level_weights(&[1.2; 4]).iter().all(|&a| (a - 0.25).abs() < 1e-15));
        assert_eq!(second_level_weights(&[0.0], 0.5), vec![1.0]);
        assert_eq!(second_level_weights(&[0.0, 0.0], 1.0), vec![0.5, 0.5]);
        let b = second_level_weights(&[0.0, 0.0], 0.5);
        assert!(b.iter().all(|&x| (x - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12));
        assert!(second_level_weights(&[], 0.5).is_empty());
    }

    #[test]
    fn profile_examples() {
        let q = [0.5f64, -1.0, 2.0];
        assert_eq!(type_profile::<f64>(&[], &[], 3), vec![0.0; 3]);
        assert_eq!(type_profile(&[&q[..]], &[1.0], 3), q.to_vec());
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let s = type_profile(&[&q[..], &q[..]], &[r, r], 3);
        for (a, b) in s.iter().zip(q) {
            assert!((a - 2f64.sqrt() * b).abs() < 1e-12);
        }
    }

    #[test]
    fn distmult_examples() {
        assert_eq!(distmult(&[1.0f64, 1.0], &[1.0, 1.0], &[1.0, 1.0]), 2.0);
    }

    proptest! {
        #[test]
        fn smoothed_softmax_matches_naive_formula(bs in prop::collection::vec(-5.0f64..5.0, 1..20), rho in 0.05f64..1.0) {
            let fast = second_level_weights(&bs, rho);
            let denom: f64 = bs.iter().map(|b| b.exp()).sum::<f64>().powf(rho);
            for (f, b) in fast.iter().zip(&bs) {
                prop_assert!((f - b.exp() / denom).abs() < 1e-6);
                prop_assert!(*f >= 0.0);
            }
        }

        #[test]
        fn rho_one_is_softmax(bs in prop::collection::vec(-30.0f64..30.0, 1..20)) {
            let a = second_level_weights(&bs, 1.0);
            let b = softmax(&bs);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn raising_one_score_is_monotone(bs in prop::collection::vec(-5.0f64..5.0, 2..10), k in 0usize..10, delta in 0.01f64..3.0, rho in 0.1f64..1.0) {
            let k = k % bs.len();
            let before = second_level_weights(&bs, rho);
            let mut raised = bs.clone();
            raised[k] += delta;
            let after = second_level_weights(&raised, rho);
            prop_assert!(after[k] > before[k]);
            for m in 0..bs.len() {
                if m != k {
                    prop_assert!(after[m] < before[m]);
                }
            }
        }

        #[test]
        fn distmult_is_bitwise_symmetric(q in prop::collection::vec(-1.0f32..1.0, 24)) {
            let (a, rest) = q.split_at(8);
            let (r, b) = rest.split_at(8);
            prop_assert_eq!(distmult(a, r, b).to_bits(), distmult(b, r, a).to_bits());
        }
    }
}
