use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::numcore::{dot, DiffValue, Rng};
use crate::structures::{check_len, MarginalPoint, SparseDist, StructDomain, Structure};

/// Weights below this are dropped from the active set.
const DROP_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SparseMapInit {
    /// Start from the maximizer of `⟨z, s⟩`.
    Map,
    /// Start from the maximizer of seeded Gaussian scores.
    RandomVertex(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseMapOptions {
    pub max_iter: usize,
    /// Stop when the Frank-Wolfe gap falls to `tol` or below.
    pub tol: f64,
    pub init: SparseMapInit,
}

impl Default for SparseMapOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-9,
            init: SparseMapInit::Map,
        }
    }
}

/// The solver's witness: a sparse distribution whose mean is the solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    pub dist: SparseDist,
    pub iterations: usize,
    /// Frank-Wolfe duality gap at exit.
    pub gap: f64,
    pub converged: bool,
    /// `⟨μ, s⟩ − ½‖μ‖²` after every weight update.
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMapSolution {
    pub mu: MarginalPoint,
    pub active: ActiveSet,
}

fn objective(mu: &[f64], s: &[f64]) -> f64 {
    dot(mu, s) - 0.5 * dot(mu, mu)
}

fn combine(support: &[Structure], alpha: &[f64], parts: usize) -> Vec<f64> {
    let mut mu = vec![0.0; parts];
    for (z, &a) in support.iter().zip(alpha) {
        for p in z.active() {
            mu[p] += a;
        }
    }
    mu
}

/// Bordered Gram system `[MᵀM 1; 1ᵀ 0]` for the active vertices.
fn kkt_matrix(support: &[Structure]) -> DMatrix<f64> {
    let k = support.len();
    let mut a = DMatrix::zeros(k + 1, k + 1);
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] = support[i]
                .bits
                .iter()
                .zip(&support[j].bits)
                .filter(|(&x, &y)| x == 1 && y == 1)
                .count() as f64;
        }
        a[(i, k)] = 1.0;
        a[(k, i)] = 1.0;
    }
    a
}

fn solve(a: &DMatrix<f64>, b: DVector<f64>) -> DVector<f64> {
    a.clone()
        .lu()
        .solve(&b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| {
            a.clone()
                .svd(true, true)
                .solve(&b, 1e-12)
                .expect("SVD computed with both factors")
        })
}

/// Weights minimizing `‖Mα − s‖²` subject to `1ᵀα = 1` (signs unconstrained).
fn affine_weights(support: &[Structure], s: &[f64]) -> Vec<f64> {
    let k = support.len();
    let mut b = DVector::zeros(k + 1);
    for (i, z) in support.iter().enumerate() {
        b[i] = z.score(s);
    }
    b[k] = 1.0;
    solve(&kkt_matrix(support), b)
        .rows(0, k)
        .iter()
        .copied()
        .collect()
}

/// Weights `x` solving the bordered system with right-hand side `[rhs; 0]`:
/// the derivative of the active-set weights applied to `rhs`.
pub(crate) fn bordered_solve(support: &[Structure], rhs: &[f64]) -> Vec<f64> {
    let k = support.len();
    let mut b = DVector::zeros(k + 1);
    b.rows_mut(0, k).copy_from_slice(rhs);
    solve(&kkt_matrix(support), b)
        .rows(0, k)
        .iter()
        .copied()
        .collect()
}

/// `argmax_{μ ∈ conv(Z)} ⟨μ, s⟩ − ½‖μ‖²`, i.e. the Euclidean projection of
/// `s` onto the marginal polytope, using only maximization-oracle calls.
///
/// Active-set (min-norm-point) iterations: solve the equality-constrained
/// problem on the current vertices; if some weight turns negative, move to the
/// boundary and drop vertices; otherwise query the oracle at `s − μ` and add
/// the returned vertex unless the Frank-Wolfe gap is within `tol`.
///
/// The pullback differentiates the solution on its final support by solving
/// the same bordered system with right-hand side `[Mᵀv; 0]`.
pub fn sparsemap<D: StructDomain + ?Sized>(
    d: &D,
    s: &[f64],
    opts: SparseMapOptions,
) -> Result<DiffValue<SparseMapSolution>> {
    check_len(d, s)?;
    if s.iter().any(|x| !x.is_finite()) {
        return Err(param_err("scores", "must be finite"));
    }
    if opts.max_iter == 0 {
        return Err(param_err("max_iter", "must be at least 1"));
    }
    let parts = s.len();
    let first = match opts.init {
        SparseMapInit::Map => d.argmax(s)?,
        SparseMapInit::RandomVertex(seed) => {
            let noise = Rng::seed(seed).normal_vec(parts);
            d.raw_argmax(&noise)?
        }
    };
    let mut support = vec![first];
    let mut alpha = vec![1.0];
    let mut mu = combine(&support, &alpha, parts);
    let mut trace = vec![objective(&mu, s)];
    let mut gap = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let target = affine_weights(&support, s);
        if target.iter().all(|&w| w >= 0.0) {
            alpha = target;
            mu = combine(&support, &alpha, parts);
            trace.push(objective(&mu, s));
            let residual: Vec<f64> = s.iter().zip(&mu).map(|(a, b)| a - b).collect();
            let z = d.raw_argmax(&residual)?;
            gap = z.score(&residual) - dot(&mu, &residual);
            if gap <= opts.tol || support.contains(&z) {
                converged = gap <= opts.tol;
                break;
            }
            support.push(z);
            alpha.push(0.0);
        } else {
            // Step toward the affine minimizer until the first weight hits zero.
            let t = alpha
                .iter()
                .zip(&target)
                .filter(|(_, &b)| b < 0.0)
                .map(|(&a, &b)| a / (a - b))
                .fold(1.0, f64::min);
            for (a, b) in alpha.iter_mut().zip(&target) {
                *a += t * (b - *a);
            }
            let keep: Vec<bool> = alpha.iter().map(|&a| a > DROP_WEIGHT).collect();
            support = support
                .into_iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(z, _)| z)
                .collect();
            alpha = alpha
                .into_iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(a, _)| a)
                .collect();
            let total: f64 = alpha.iter().sum();
            alpha.iter_mut().for_each(|a| *a /= total);
            mu = combine(&support, &alpha, parts);
            trace.push(objective(&mu, s));
        }
    }

    // Drop zero-weight vertices left by an early exit.
    let keep: Vec<bool> = alpha.iter().map(|&a| a > DROP_WEIGHT).collect();
    let support: Vec<Structure> = support
        .into_iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(z, _)| z)
        .collect();
    let alpha: Vec<f64> = alpha
        .into_iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(a, _)| a)
        .collect();

    let kkt = kkt_matrix(&support);
    let basis = support.clone();
    let pullback = move |v: &[f64]| {
        let k = basis.len();
        let mut b = DVector::zeros(k + 1);
        for (i, z) in basis.iter().enumerate() {
            b[i] = z.score(v);
        }
        let x = solve(&kkt, b);
        let w: Vec<f64> = x.rows(0, k).iter().copied().collect();
        combine(&basis, &w, v.len())
    };
    let solution = SparseMapSolution {
        mu: MarginalPoint { mu },
        active: ActiveSet {
            dist: SparseDist {
                support,
                weights: alpha,
            },
            iterations,
            gap,
            converged,
            objective: trace,
        },
    };
    Ok(DiffValue::exact(solution, parts, parts, pullback))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_jacobian, jacobian_error, jacobian_from_pullback, FD_EPS};
    use crate::simplex::sparsemax;
    use crate::structures::{enumerate, Arborescence, LinearChain, OneOfK, ENUM_CAP};

    /// Euclidean projection onto the simplex by bisection on the threshold.
    fn simplex_projection(y: &[f64]) -> Vec<f64> {
        let (mut lo, mut hi) = (
            y.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0,
            y.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let total: f64 = y.iter().map(|v| (v - mid).max(0.0)).sum();
            if total > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tau = 0.5 * (lo + hi);
        let p: Vec<f64> = y.iter().map(|v| (v - tau).max(0.0)).collect();
        let t: f64 = p.iter().sum();
        p.iter().map(|x| x / t).collect()
    }

    /// Projection of `s` onto the hull of `vertices` by projected gradient on
    /// the vertex weights.
    fn hull_projection(vertices: &[Structure], s: &[f64]) -> Vec<f64> {
        let k = vertices.len();
        let m: Vec<Vec<f64>> = vertices.iter().map(Structure::to_f64).collect();
        let lipschitz: f64 = m
            .iter()
            .map(|r| r.iter().sum::<f64>())
            .sum::<f64>()
            .max(1.0);
        let mut a = vec![1.0 / k as f64; k];
        for _ in 0..200_000 {
            let mu = combine(vertices, &a, s.len());
            let r: Vec<f64> = mu.iter().zip(s).map(|(x, y)| x - y).collect();
            let g: Vec<f64> = m.iter().map(|row| dot(row, &r)).collect();
            let step: Vec<f64> = a.iter().zip(&g).map(|(x, gi)| x - gi / lipschitz).collect();
            let next = simplex_projection(&step);
            let moved = next
                .iter()
                .zip(&a)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            a = next;
            if moved < 1e-14 {
                break;
            }
        }
        combine(vertices, &a, s.len())
    }

    #[test]
    fn one_of_k_matches_sparsemax() {
        let mut rng = Rng::seed(50);
        for _ in 0..30 {
            let s: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let sol = sparsemap(&OneOfK::new(6), &s, SparseMapOptions::default()).unwrap();
            let want = sparsemax(&s).unwrap();
            for (a, b) in sol.value.mu.mu.iter().zip(&want.probs.probs) {
                assert!((a - b).abs() < 1e-9);
            }
            let v: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let got = sol.pullback(&v).unwrap();
            // Sparsemax Jacobian: centre `v` on the support, zero elsewhere.
            let on: Vec<bool> = want.probs.probs.iter().map(|&p| p > 0.0).collect();
            let k = on.iter().filter(|&&b| b).count() as f64;
            let mean: f64 = v
                .iter()
                .zip(&on)
                .filter(|(_, &b)| b)
                .map(|(x, _)| x)
                .sum::<f64>()
                / k;
            let want: Vec<f64> = v
                .iter()
                .zip(&on)
                .map(|(x, &b)| if b { x - mean } else { 0.0 })
                .collect();
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn large_margin_lands_on_vertex() {
        let d = LinearChain::new(3, 2).unwrap();
        let path = d.from_tags(&[1, 0, 1]);
        let s: Vec<f64> = path.to_f64().iter().map(|b| 10.0 * b).collect();
        let sol = sparsemap(&d, &s, SparseMapOptions::default())
            .unwrap()
            .value;
        assert_eq!(sol.active.dist.support, vec![path.clone()]);
        assert_eq!(sol.mu.mu, path.to_f64());
    }

    #[test]
    fn matches_hull_projection_oracle() {
        let mut rng = Rng::seed(51);
        let domains: Vec<Box<dyn StructDomain>> = vec![
            Box::new(LinearChain::new(2, 2).unwrap()),
            Box::new(LinearChain::new(3, 2).unwrap()),
            Box::new(Arborescence::new(3).unwrap()),
        ];
        for d in &domains {
            let vertices = enumerate(d.as_ref(), ENUM_CAP).unwrap();
            for _ in 0..5 {
                let s: Vec<f64> = (0..d.part_count()).map(|_| rng.normal()).collect();
                let sol = sparsemap(d.as_ref(), &s, SparseMapOptions::default())
                    .unwrap()
                    .value;
                assert!(sol.active.converged);
                let want = hull_projection(&vertices, &s);
                for (a, b) in sol.mu.mu.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-6, "{}: {a} vs {b}", d.tag());
                }
                let witness = sol.active.dist.mean();
                for (a, b) in witness.iter().zip(&sol.mu.mu) {
                    assert!((a - b).abs() < 1e-7);
                }
                assert!(sol.active.dist.is_valid(1e-9));
                assert!(sol.active.dist.len() <= d.part_count() + 1);
                for w in sol.active.objective.windows(2) {
                    assert!(w[1] >= w[0] - 1e-12);
                }
            }
        }
    }

    #[test]
    fn random_init_reaches_same_point() {
        let d = LinearChain::new(3, 3).unwrap();
        let s: Vec<f64> = Rng::seed(52).normal_vec(d.part_count());
        let a = sparsemap(&d, &s, SparseMapOptions::default())
            .unwrap()
            .value;
        let opts = SparseMapOptions {
            init: SparseMapInit::RandomVertex(7),
            ..Default::default()
        };
        let b = sparsemap(&d, &s, opts).unwrap().value;
        for (x, y) in a.mu.mu.iter().zip(&b.mu.mu) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn pullback_matches_finite_differences() {
        let d = LinearChain::new(3, 2).unwrap();
        let s: Vec<f64> = Rng::seed(53).normal_vec(d.part_count());
        let layer = sparsemap(&d, &s, SparseMapOptions::default()).unwrap();
        let p = d.part_count();
        let j = jacobian_from_pullback(|v| layer.pullback(v).unwrap(), p, p);
        let fd = finite_diff_jacobian(
            |x| {
                sparsemap(&d, x, SparseMapOptions::default())
                    .unwrap()
                    .value
                    .mu
                    .mu
            },
            &s,
            FD_EPS,
        )
        .unwrap();
        assert!(jacobian_error(&j, &fd) < 1e-4);
    }

    #[test]
    fn iteration_cap_flags_unconverged() {
        let d = LinearChain::new(4, 3).unwrap();
        let s: Vec<f64> = Rng::seed(54).normal_vec(d.part_count());
        let opts = SparseMapOptions {
            max_iter: 1,
            ..Default::default()
        };
        let sol = sparsemap(&d, &s, opts).unwrap().value;
        assert!(!sol.active.converged);
        assert!(sol.active.gap > 0.0);
    }
}
