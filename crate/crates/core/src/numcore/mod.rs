//! Dense values, seeded randomness and the pullback contract shared by every
//! differentiable layer.

mod rng;
mod tape;
mod tensor;

pub use rng::Rng;
pub use tape::{backprop, DiffValue, GradKind, Gradients, NodePullback, PullbackFn, Tape, Var};
pub use tensor::Tensor;

use crate::error::{param_err, Error, Result};

/// Standard central-difference step.
pub const FD_EPS: f64 = 1e-6;

/// `ln Σ exp(v_i)` with max subtraction. Returns `-inf` when every entry is `-inf`.
pub fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Central-difference Jacobian of `f` at `x`, shape `(outputs, inputs)`.
pub fn finite_diff_jacobian<F>(f: F, x: &[f64], eps: f64) -> Result<Tensor>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(eps > 0.0) {
        return Err(param_err("eps", format!("must be positive, got {eps}")));
    }
    let n = x.len();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut probe = x.to_vec();
    for i in 0..n {
        probe[i] = x[i] + eps;
        let hi = f(&probe);
        probe[i] = x[i] - eps;
        let lo = f(&probe);
        probe[i] = x[i];
        if let Some(c) = hi.iter().chain(&lo).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                input: i,
                coordinate: c % hi.len().max(1),
            });
        }
        cols.push(
            hi.iter()
                .zip(&lo)
                .map(|(a, b)| (a - b) / (2.0 * eps))
                .collect(),
        );
    }
    let m = cols.first().map_or(0, Vec::len);
    let mut data = vec![0.0; m * n];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            data[i * n + j] = *v;
        }
    }
    Tensor::matrix(m, n, data)
}

/// Materializes the Jacobian behind a pullback by pulling back each basis cotangent.
pub fn jacobian_from_pullback<F>(pullback: F, outputs: usize, inputs: usize) -> Tensor
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut data = Vec::with_capacity(outputs * inputs);
    let mut e = vec![0.0; outputs];
    for i in 0..outputs {
        e[i] = 1.0;
        data.extend(pullback(&e));
        e[i] = 0.0;
    }
    Tensor::matrix(outputs, inputs, data).expect("pullback returned wrong cotangent length")
}

/// Max entrywise discrepancy scaled by `1 + ‖reference‖∞`.
pub fn jacobian_error(candidate: &Tensor, reference: &Tensor) -> f64 {
    let diff = candidate
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    diff / (1.0 + reference.norm_inf())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn logsumexp_cases() {
        assert_abs_diff_eq!(logsumexp(&[0.0, 0.0]), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(
            logsumexp(&[1000.0, 1000.0]),
            1000.0 + 2f64.ln(),
            epsilon = 1e-12
        );
        assert_eq!(logsumexp(&[-3.25]), -3.25);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_abs_diff_eq!(logsumexp(&[f64::NEG_INFINITY, 0.0]), 0.0);
    }

    #[test]
    fn identity_chain_pulls_back_seed() {
        let mut tape = Tape::new();
        let x = tape.vector(vec![1.0, -2.0, 3.0]);
        let a = tape.offset(x, 0.0);
        let b = tape.scale(a, 1.0);
        let g = backprop(&tape, b, &[0.5, 1.5, -2.0]).unwrap();
        assert_eq!(g.wrt(x), vec![0.5, 1.5, -2.0]);
    }

    #[test]
    fn linear_layer_gives_transpose() {
        let w = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]).unwrap();
        let mut tape = Tape::new();
        let wv = tape.leaf(w.clone());
        let x = tape.vector(vec![0.3, 0.2, -0.7]);
        let y = tape.matvec(wv, x).unwrap();
        let v = [2.0, -1.0];
        let g = backprop(&tape, y, &v).unwrap();
        assert_eq!(g.wrt(x), w.transpose().matvec(&v).unwrap());
    }

    #[test]
    fn seed_shape_mismatch_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.vector(vec![1.0, 2.0]);
        let s = tape.sum(x);
        assert!(matches!(
            backprop(&tape, s, &[1.0, 1.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    fn two_layer(tape: &mut Tape, w1: &Tensor, w2: &Tensor, x: &[f64]) -> (Var, Var) {
        let xv = tape.vector(x.to_vec());
        let a = tape.leaf(w1.clone());
        let b = tape.leaf(w2.clone());
        let h = tape.matvec(a, xv).unwrap();
        let h = tape.exp(h);
        let y = tape.matvec(b, h).unwrap();
        let groups = vec![vec![0, 1], vec![1, 2]];
        let y = tape.segment_logsumexp(y, &groups).unwrap();
        (xv, y)
    }

    #[test]
    fn two_layer_composition_matches_finite_differences() {
        let w1 = Tensor::matrix(3, 2, vec![0.2, -0.4, 0.7, 0.1, -0.3, 0.5]).unwrap();
        let w2 = Tensor::matrix(3, 3, vec![1.0, 0.5, -0.2, 0.3, -1.1, 0.8, 0.0, 0.4, 0.9]).unwrap();
        let x = [0.6, -0.9];
        let mut tape = Tape::new();
        let (xv, y) = two_layer(&mut tape, &w1, &w2, &x);
        let jac = jacobian_from_pullback(|v| backprop(&tape, y, v).unwrap().wrt(xv), 2, 2);
        let fd = finite_diff_jacobian(
            |p| {
                let mut t = Tape::new();
                let (_, y) = two_layer(&mut t, &w1, &w2, p);
                t.value(y).data().to_vec()
            },
            &x,
            FD_EPS,
        )
        .unwrap();
        for (a, b) in jac.data().iter().zip(fd.data()) {
            assert!((a - b).abs() / b.abs().max(1e-3) < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn fd_identity() {
        let j = finite_diff_jacobian(|x| x.to_vec(), &[0.3, -1.0, 2.0], FD_EPS).unwrap();
        let eye = Tensor::identity(3);
        for (a, b) in j.data().iter().zip(eye.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn fd_reports_non_finite_coordinate() {
        let err = finite_diff_jacobian(
            |x| vec![x[0], if x[1] > 0.0 { f64::NAN } else { 0.0 }],
            &[0.0, 0.0],
            FD_EPS,
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::NonFinite {
                input: 1,
                coordinate: 1
            }
        );
    }

    #[test]
    fn rng_is_deterministic_and_splits() {
        let mut a = Rng::seed(7);
        let mut b = Rng::seed(7);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        let mut c1 = a.split();
        let mut c2 = a.split();
        assert_ne!(c1.next_u64(), c2.next_u64());
    }

    #[test]
    fn opaque_nodes_are_visible_downstream() {
        let mut tape = Tape::new();
        let x = tape.vector(vec![1.0]);
        let y = tape.exp(x);
        assert!(!tape.depends_on_opaque(y));
        let z = tape.opaque(
            &[y],
            Tensor::scalar(1.0),
            Box::new(|g| vec![g.to_vec()]),
            "st",
        );
        let w = tape.scale(z, 2.0);
        assert!(tape.depends_on_opaque(w));
        assert!(!tape.depends_on_opaque(y));
    }
}
