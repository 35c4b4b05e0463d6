//! Regularized argmax maps onto the probability simplex: softmax, sparsemax,
//! α-entmax (bisection) and top-k sparsemax, together with their pullbacks.
//!
//! Entries equal to `-inf` act as hard masks: they are dropped before solving
//! and come back as exact zeros.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::numcore::{dot, logsumexp, DiffValue};

/// Default bisection iteration count for [`entmax_bisect`].
pub const ENTMAX_ITERS: usize = 60;

/// A point of the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexPoint {
    pub probs: Vec<f64>,
}

impl SimplexPoint {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn support(&self) -> Vec<usize> {
        support_of(&self.probs)
    }

    /// Nonnegative and summing to one within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        self.probs.iter().all(|&p| p >= 0.0) && (self.probs.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

/// Thresholded solution `p_i = [(α−1)s_i − τ]_+^{1/(α−1)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntmaxSolution {
    pub probs: SimplexPoint,
    pub tau: f64,
    pub alpha: f64,
    pub support: Vec<usize>,
    /// Only meaningful for [`topk_sparsemax`]: the ℓ0 constraint was loose, so
    /// the result coincides with unconstrained sparsemax.
    pub exact: bool,
}

fn support_of(p: &[f64]) -> Vec<usize> {
    p.iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0)
        .map(|(i, _)| i)
        .collect()
}

fn check_scores(s: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = s.iter().position(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(param_err("s", format!("entry {i} is not finite")));
    }
    let live: Vec<usize> = (0..s.len()).filter(|&i| s[i].is_finite()).collect();
    if live.is_empty() {
        return Err(Error::EmptySupport);
    }
    Ok(live)
}

pub fn softmax(s: &[f64]) -> Result<SimplexPoint> {
    check_scores(s)?;
    let lse = logsumexp(s);
    Ok(SimplexPoint {
        probs: s.iter().map(|x| (x - lse).exp()).collect(),
    })
}

/// `(diag(z) − z zᵀ) v`.
pub fn softmax_pullback(z: &SimplexPoint, v: &[f64]) -> Vec<f64> {
    let zv = dot(&z.probs, v);
    z.probs.iter().zip(v).map(|(p, vi)| p * (vi - zv)).collect()
}

pub fn softmax_layer(s: &[f64]) -> Result<DiffValue<SimplexPoint>> {
    let z = softmax(s)?;
    let keep = z.clone();
    let k = s.len();
    Ok(DiffValue::exact(z, k, k, move |v| {
        softmax_pullback(&keep, v)
    }))
}

/// Euclidean projection onto the simplex via the sort-based threshold.
pub fn sparsemax(s: &[f64]) -> Result<EntmaxSolution> {
    let live = check_scores(s)?;
    let mut sorted: Vec<f64> = live.iter().map(|&i| s[i]).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = sorted[0] - 1.0;
    for (k, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if x > t {
            tau = t;
        } else {
            break;
        }
    }
    let mut probs = vec![0.0; s.len()];
    for &i in &live {
        probs[i] = (s[i] - tau).max(0.0);
    }
    let support = support_of(&probs);
    Ok(EntmaxSolution {
        probs: SimplexPoint { probs },
        tau,
        alpha: 2.0,
        support,
        exact: true,
    })
}

/// α-entmax by bisection on the threshold τ, for any `alpha > 1`.
///
/// The bracket starts at `[(α−1)max(s) − 1, (α−1)max(s) − d^{1−α}]`; the
/// final vector is renormalized so it sums to exactly one.
pub fn entmax_bisect(s: &[f64], alpha: f64, iters: usize) -> Result<EntmaxSolution> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(param_err(
            "alpha",
            format!("must be finite and > 1, got {alpha}"),
        ));
    }
    if iters == 0 {
        return Err(param_err("iters", "must be at least 1"));
    }
    let live = check_scores(s)?;
    let am1 = alpha - 1.0;
    let x: Vec<f64> = live.iter().map(|&i| am1 * s[i]).collect();
    let d = x.len() as f64;
    let xmax = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p_of = |tau: f64| -> Vec<f64> {
        x.iter()
            .map(|&xi| (xi - tau).max(0.0).powf(1.0 / am1))
            .collect()
    };
    // Total mass is >= 1 at `lo` and <= 1 at `hi`.
    let mut lo = xmax - 1.0;
    let mut hi = xmax - d.powf(-am1);
    let mut tau = 0.5 * (lo + hi);
    let mut p = p_of(tau);
    for _ in 0..iters {
        tau = 0.5 * (lo + hi);
        p = p_of(tau);
        if p.iter().sum::<f64>() < 1.0 {
            hi = tau;
        } else {
            lo = tau;
        }
    }
    let total: f64 = p.iter().sum();
    let mut probs = vec![0.0; s.len()];
    for (&i, pi) in live.iter().zip(&p) {
        probs[i] = pi / total;
    }
    let support = support_of(&probs);
    Ok(EntmaxSolution {
        probs: SimplexPoint { probs },
        tau,
        alpha,
        support,
        exact: true,
    })
}

/// α-entmax, dispatching to the exact sort for α = 2 and bisection otherwise.
pub fn entmax(s: &[f64], alpha: f64) -> Result<EntmaxSolution> {
    if alpha == 2.0 {
        sparsemax(s)
    } else {
        entmax_bisect(s, alpha, ENTMAX_ITERS)
    }
}

/// `(diag(q) − q qᵀ / 1ᵀq) v` with `q_i = p_i^{2−α}` on the support.
///
/// Valid for every `alpha >= 1`; at `alpha = 1` it is the softmax Jacobian.
pub fn tsallis_pullback(probs: &[f64], alpha: f64, v: &[f64]) -> Vec<f64> {
    let q: Vec<f64> = probs
        .iter()
        .map(|&p| if p > 0.0 { p.powf(2.0 - alpha) } else { 0.0 })
        .collect();
    let qsum: f64 = q.iter().sum();
    let qv = dot(&q, v) / qsum;
    q.iter().zip(v).map(|(qi, vi)| qi * (vi - qv)).collect()
}

pub fn entmax_pullback(sol: &EntmaxSolution, v: &[f64]) -> Vec<f64> {
    tsallis_pullback(&sol.probs.probs, sol.alpha, v)
}

pub fn entmax_layer(s: &[f64], alpha: f64) -> Result<DiffValue<EntmaxSolution>> {
    let sol = entmax(s, alpha)?;
    let probs = sol.probs.probs.clone();
    let k = s.len();
    Ok(DiffValue::exact(sol, k, k, move |v| {
        tsallis_pullback(&probs, alpha, v)
    }))
}

pub fn sparsemax_layer(s: &[f64]) -> Result<DiffValue<EntmaxSolution>> {
    entmax_layer(s, 2.0)
}

/// Indices of the `k` largest entries, larger value first and lower index on ties.
pub(crate) fn top_indices(s: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Sparsemax over the `k` highest-scored entries, zero elsewhere.
pub fn topk_sparsemax(s: &[f64], k: usize) -> Result<EntmaxSolution> {
    if k == 0 || k > s.len() {
        return Err(param_err(
            "k",
            format!("must lie in 1..={}, got {k}", s.len()),
        ));
    }
    check_scores(s)?;
    let top = top_indices(s, k);
    let restricted: Vec<f64> = top.iter().map(|&i| s[i]).collect();
    let inner = sparsemax(&restricted)?;
    let mut probs = vec![0.0; s.len()];
    for (&i, &p) in top.iter().zip(&inner.probs.probs) {
        probs[i] = p;
    }
    let support = support_of(&probs);
    let exact = support.len() < k || k == s.len();
    Ok(EntmaxSolution {
        probs: SimplexPoint { probs },
        tau: inner.tau,
        alpha: 2.0,
        support,
        exact,
    })
}
