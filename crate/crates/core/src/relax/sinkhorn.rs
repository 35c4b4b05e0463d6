use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Result};
use crate::numcore::{backprop, DiffValue, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornOptions {
    /// Temperature `γ`; the input is `exp(S / γ)`.
    pub gamma: f64,
    /// Stop once every row and column sum is within `tol` of 1.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            tol: 1e-9,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// Doubly stochastic `m×m` matrix.
    pub matrix: Tensor,
    pub iterations: usize,
    /// Max deviation of a row or column sum from 1 at exit.
    pub deviation: f64,
    pub converged: bool,
}

fn max_deviation(logp: &[f64], m: usize) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..m {
        let r: f64 = (0..m).map(|j| logp[i * m + j].exp()).sum();
        let c: f64 = (0..m).map(|j| logp[j * m + i].exp()).sum();
        dev = dev.max((r - 1.0).abs()).max((c - 1.0).abs());
    }
    dev
}

/// Normalizes `x` within each group of positions, in log space.
fn normalize(tape: &mut Tape, x: Var, groups: &[Vec<usize>], owner: &[usize]) -> Result<Var> {
    let lse = tape.segment_logsumexp(x, groups)?;
    let spread = tape.gather(lse, owner)?;
    tape.sub(x, spread)
}

/// Alternating row/column normalization of `exp(S/γ)`, unrolled on a tape.
///
/// `scores` is `m×m`, row-major. Hitting `max_iter` is not an error: the
/// result carries `converged = false` and its final deviation.
pub fn sinkhorn(
    scores: &[f64],
    m: usize,
    opts: SinkhornOptions,
) -> Result<DiffValue<SinkhornResult>> {
    if scores.len() != m * m {
        return Err(shape_err(format!("{m}x{m} scores"), scores.len()));
    }
    if !(opts.gamma > 0.0) {
        return Err(param_err("gamma", "must be positive"));
    }
    if scores.iter().any(|x| !x.is_finite()) {
        return Err(param_err("scores", "must be finite"));
    }
    let rows: Vec<Vec<usize>> = (0..m)
        .map(|i| (0..m).map(|j| i * m + j).collect())
        .collect();
    let cols: Vec<Vec<usize>> = (0..m)
        .map(|j| (0..m).map(|i| i * m + j).collect())
        .collect();
    let row_of: Vec<usize> = (0..m * m).map(|k| k / m).collect();
    let col_of: Vec<usize> = (0..m * m).map(|k| k % m).collect();

    let mut tape = Tape::new();
    let input = tape.vector(scores.to_vec());
    let mut x = tape.scale(input, 1.0 / opts.gamma);
    let mut iterations = 0;
    let mut deviation = f64::INFINITY;
    while iterations < opts.max_iter {
        x = normalize(&mut tape, x, &rows, &row_of)?;
        x = normalize(&mut tape, x, &cols, &col_of)?;
        iterations += 1;
        deviation = max_deviation(tape.value(x).data(), m);
        if deviation < opts.tol {
            break;
        }
    }
    let out = tape.exp(x);
    let matrix = Tensor::matrix(m, m, tape.value(out).data().to_vec())?;
    let result = SinkhornResult {
        matrix,
        iterations,
        deviation,
        converged: deviation < opts.tol,
    };
    Ok(DiffValue::exact(result, m * m, m * m, move |v| {
        backprop(&tape, out, v)
            .expect("cotangent length checked by DiffValue")
            .wrt(input)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{
        finite_diff_jacobian, jacobian_error, jacobian_from_pullback, Rng, FD_EPS,
    };

    #[test]
    fn zero_scores_are_uniform() {
        let r = sinkhorn(&[0.0; 9], 3, SinkhornOptions::default()).unwrap();
        assert!(r.value.converged);
        assert!(r
            .value
            .matrix
            .data()
            .iter()
            .all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn random_inputs_are_doubly_stochastic() {
        let mut rng = Rng::seed(41);
        for _ in 0..20 {
            let s: Vec<f64> = (0..25).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
            let r = sinkhorn(&s, 5, SinkhornOptions::default()).unwrap().value;
            assert!(r.converged);
            let p = &r.matrix;
            for i in 0..5 {
                let row: f64 = (0..5).map(|j| p.at(i, j)).sum();
                let col: f64 = (0..5).map(|j| p.at(j, i)).sum();
                assert!((row - 1.0).abs() < 1e-7 && (col - 1.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn dominant_diagonal_approaches_identity() {
        let mut s = vec![0.0; 16];
        for i in 0..4 {
            s[i * 4 + i] = 10.0;
        }
        let opts = SinkhornOptions {
            gamma: 0.1,
            ..Default::default()
        };
        let r = sinkhorn(&s, 4, opts).unwrap().value;
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((r.matrix.at(i, j) - want).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn row_shift_invariance() {
        let mut rng = Rng::seed(42);
        let s: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let mut shifted = s.clone();
        for j in 0..4 {
            shifted[4 + j] += 2.5;
            shifted[j * 4 + 2] -= 1.0;
        }
        let a = sinkhorn(&s, 4, SinkhornOptions::default()).unwrap().value;
        let b = sinkhorn(&shifted, 4, SinkhornOptions::default())
            .unwrap()
            .value;
        for (x, y) in a.matrix.data().iter().zip(b.matrix.data()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn unconverged_is_flagged() {
        let mut rng = Rng::seed(43);
        let s: Vec<f64> = (0..16).map(|_| rng.uniform_range(-5.0, 5.0)).collect();
        let opts = SinkhornOptions {
            gamma: 0.05,
            tol: 1e-12,
            max_iter: 1,
        };
        let r = sinkhorn(&s, 4, opts).unwrap().value;
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn pullback_matches_finite_differences() {
        let mut rng = Rng::seed(44);
        let s: Vec<f64> = (0..9).map(|_| rng.normal()).collect();
        let opts = SinkhornOptions {
            gamma: 0.7,
            ..Default::default()
        };
        let layer = sinkhorn(&s, 3, opts).unwrap();
        let j = jacobian_from_pullback(|v| layer.pullback(v).unwrap(), 9, 9);
        let fd = finite_diff_jacobian(
            |x| sinkhorn(x, 3, opts).unwrap().value.matrix.into_data(),
            &s,
            FD_EPS,
        )
        .unwrap();
        assert!(jacobian_error(&j, &fd) < 1e-4);
    }
}
