use super::downstream::{DownstreamFn, EstimatorReport};
use crate::error::Result;
use crate::relax::{bordered_solve, sparsemap, SparseMapOptions};
use crate::simplex::{sparsemax, topk_sparsemax};
use crate::structures::{check_len, enumerate, StructDomain, Structure, ENUM_CAP};

/// Value and exact score gradient of `Σ_z α(z) g(z)` over a sparse support,
/// given the derivative weights `x` of `α` applied to `g`.
fn report_over_support(
    support: &[Structure],
    weights: &[f64],
    gvals: &[f64],
    dweights: &[f64],
    parts: usize,
) -> EstimatorReport {
    let value = weights.iter().zip(gvals).map(|(a, b)| a * b).sum();
    let mut grad = vec![0.0; parts];
    for (z, x) in support.iter().zip(dweights) {
        for p in z.active() {
            grad[p] += x;
        }
    }
    let mut report = EstimatorReport::exact(grad, value, support.len());
    report.support_size = Some(support.len());
    report
}

/// Exact marginalization under `sparsemax` of the structure scores `⟨z, s⟩`
/// (optionally restricted to the `k` best), calling `g` only on the support.
pub fn sparsemax_marginal<D: StructDomain + ?Sized>(
    d: &D,
    s: &[f64],
    g: &DownstreamFn,
    k: Option<usize>,
) -> Result<EstimatorReport> {
    check_len(d, s)?;
    let all = enumerate(d, ENUM_CAP)?;
    let theta: Vec<f64> = all.iter().map(|z| z.score(s)).collect();
    let sol = match k {
        Some(k) => topk_sparsemax(&theta, k)?,
        None => sparsemax(&theta)?,
    };
    let support: Vec<Structure> = sol.support.iter().map(|&i| all[i].clone()).collect();
    let weights: Vec<f64> = sol.support.iter().map(|&i| sol.probs.probs[i]).collect();
    let gvals: Vec<f64> = support.iter().map(|z| g.eval(z)).collect();
    // Sparsemax Jacobian on its support: centre, then zero elsewhere.
    let mean = gvals.iter().sum::<f64>() / gvals.len() as f64;
    let dweights: Vec<f64> = gvals.iter().map(|x| x - mean).collect();
    Ok(report_over_support(
        &support,
        &weights,
        &gvals,
        &dweights,
        s.len(),
    ))
}

/// Exact marginalization under the SparseMAP active set, calling `g` only on
/// its support. The report is flagged when the solver did not converge.
pub fn sparsemap_marginal<D: StructDomain + ?Sized>(
    d: &D,
    s: &[f64],
    g: &DownstreamFn,
    opts: SparseMapOptions,
) -> Result<EstimatorReport> {
    let sol = sparsemap(d, s, opts)?.value;
    let dist = &sol.active.dist;
    let gvals: Vec<f64> = dist.support.iter().map(|z| g.eval(z)).collect();
    let dweights = bordered_solve(&dist.support, &gvals);
    let mut report = report_over_support(&dist.support, &dist.weights, &gvals, &dweights, s.len());
    report.converged = sol.active.converged;
    Ok(report)
}
