use super::downstream::{Baseline, BaselineConfig, DownstreamFn, EstimatorReport, Moments};
use crate::error::{param_err, Result};
use crate::numcore::{Rng, Tape, Tensor, Var};
use crate::structures::{
    check_len, gibbs_enum, score_function, SparseDist, StructDomain, Structure,
};

/// Attempts at drawing a tail structure by rejection before falling back to
/// sampling the tail directly.
const MAX_REJECTIONS: usize = 100_000;

/// `E[g(Z)]` and its exact gradient `Σ_z Pr(z) g(z) (z − E[Z])` by
/// enumeration. Calls `g` once per structure.
pub fn explicit_marginal<D: StructDomain + ?Sized>(
    d: &D,
    s: &[f64],
    g: &DownstreamFn,
) -> Result<EstimatorReport> {
    let dist = gibbs_enum(d, s)?;
    let mu = dist.mean();
    let mut grad = vec![0.0; s.len()];
    let mut value = 0.0;
    for (z, &p) in dist.support.iter().zip(&dist.weights) {
        let gz = g.eval(z);
        value += p * gz;
        for (acc, sc) in grad.iter_mut().zip(score_function(z, &mu)) {
            *acc += p * gz * sc;
        }
    }
    let mut report = EstimatorReport::exact(grad, value, dist.len());
    report.support_size = Some(dist.len());
    Ok(report)
}

fn require_sampler<D: StructDomain + ?Sized>(d: &D) -> Result<()> {
    let caps = d.capabilities();
    if !caps.has_sampler {
        return Err(d.unsupported("exact sampling"));
    }
    if !caps.has_marginals {
        return Err(d.unsupported("marginal inference"));
    }
    Ok(())
}

/// Score-function (REINFORCE) estimate
/// `(1/S) Σ_i (g(z_i) − β_i) ∇_s log Pr(z_i | s)` with `∇_s log Pr(z) = z − E[Z]`.
///
/// The EMA baseline is read before sampling and updated with this batch's mean
/// afterwards. Self-critic evaluates `g` at the maximizer once; sample-critic
/// draws one extra independent structure per sample.
pub fn sfe_gradient<D: StructDomain + ?Sized>(
    d: &D,
    s: &[f64],
    g: &DownstreamFn,
    samples: usize,
    baseline: &mut BaselineConfig,
    rng: &mut Rng,
) -> Result<EstimatorReport> {
    check_len(d, s)?;
    require_sampler(d)?;
    baseline.validate()?;
    if samples == 0 {
        return Err(param_err("samples", "need at least one sample"));
    }
    let start = g.calls();
    let (mu, _) = d.marginals(s)?;
    let fixed = match baseline.kind {
        Baseline::None => Some(0.0),
        Baseline::Constant(c) => Some(c),
        Baseline::Ema(_) => Some(baseline.running),
        Baseline::SelfCritic => Some(g.eval(&d.argmax(s)?)),
        Baseline::SampleCritic => None,
    };
    let mut moments = Moments::new(s.len());
    let mut values = Vec::with_capacity(samples);
    let mut term = vec![0.0; s.len()];
    for _ in 0..samples {
        let z = d.sample(s, rng)?;
        let gz = g.eval(&z);
        let beta = match fixed {
            Some(b) => b,
            None => g.eval(&d.sample(s, rng)?),
        };
        for ((t, &b), m) in term.iter_mut().zip(&z.bits).zip(&mu.mu) {
            *t = (gz - beta) * (b as f64 - m);
        }
        moments.push(&term);
        values.push(gz);
    }
    let mean = values.iter().sum::<f64>() / samples as f64;
    baseline.update(mean);
    Ok(moments.finish(mean, values, g.calls() - start))
}

/// Structures of `dist` by decreasing probability, ties in support order.
fn by_probability(dist: &SparseDist) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist.weights[b].total_cmp(&dist.weights[a]));
    order
}

/// Sum-and-sample: exact over the `m` most probable structures `C`, plus one
/// draw `z′` from the renormalized remainder per sample:
/// `Σ_{z∈C} Pr(z) g(z) (z − μ) + (1 − Pr(C)) g(z′) (z′ − μ)`.
///
/// The score uses the full-distribution marginals `μ`, which keeps the
/// estimator unbiased. Tail draws come from the domain sampler by rejection
/// (or directly from the enumerated tail when the domain has no sampler).
/// `m ≥ |Z|` returns [`explicit_marginal`].
pub fn sum_and_sample<D: StructDomain + ?Sized>(
    d: &D,
    s: &[f64],
    g: &DownstreamFn,
    m: usize,
    samples: usize,
    rng: &mut Rng,
) -> Result<EstimatorReport> {
    let dist = gibbs_enum(d, s)?;
    if m >= dist.len() {
        return explicit_marginal(d, s, g);
    }
    if samples == 0 {
        return Err(param_err("samples", "need at least one tail sample"));
    }
    let start = g.calls();
    let mu = dist.mean();
    let order = by_probability(&dist);
    let (top, tail) = order.split_at(m);
    let mut exact = vec![0.0; s.len()];
    let mut exact_value = 0.0;
    let mut top_mass = 0.0;
    for &i in top {
        let (z, p) = (&dist.support[i], dist.weights[i]);
        let gz = g.eval(z);
        exact_value += p * gz;
        top_mass += p;
        for (acc, sc) in exact.iter_mut().zip(score_function(z, &mu)) {
            *acc += p * gz * sc;
        }
    }
    let rest = 1.0 - top_mass;
    let in_top = |z: &Structure| top.iter().any(|&i| dist.support[i] == *z);
    let tail_weights: Vec<f64> = tail.iter().map(|&i| dist.weights[i]).collect();
    let use_sampler = d.capabilities().has_sampler;

    let mut moments = Moments::new(s.len());
    let mut values = Vec::with_capacity(samples);
    let mut term = vec![0.0; s.len()];
    for _ in 0..samples {
        let mut drawn = None;
        if use_sampler {
            for _ in 0..MAX_REJECTIONS {
                let z = d.sample(s, rng)?;
                if !in_top(&z) {
                    drawn = Some(z);
                    break;
                }
            }
        }
        let z = match drawn {
            Some(z) => z,
            None => dist.support[tail[rng.categorical(&tail_weights)]].clone(),
        };
        let gz = g.eval(&z);
        for ((t, e), sc) in term.iter_mut().zip(&exact).zip(score_function(&z, &mu)) {
            *t = e + rest * gz * sc;
        }
        moments.push(&term);
        values.push(exact_value + rest * gz);
    }
    let value = values.iter().sum::<f64>() / samples as f64;
    let mut report = moments.finish(value, values, g.calls() - start);
    report.support_size = Some(m);
    Ok(report)
}

/// Records `log Pr(z | s) = ⟨z, s⟩ − log Z(s)` reading scores from `s`.
pub fn record_log_prob<D: StructDomain + ?Sized>(
    tape: &mut Tape,
    d: &D,
    s: Var,
    z: &Structure,
) -> Result<Var> {
    let scores = tape.value(s).data().to_vec();
    check_len(d, &scores)?;
    let (mu, logz) = d.marginals(&scores)?;
    let value = z.score(&scores) - logz;
    let score = score_function(z, &mu.mu);
    Ok(tape.custom(
        &[s],
        Tensor::vector(vec![value]),
        Box::new(move |g| vec![score.iter().map(|x| g[0] * x).collect()]),
        "log_prob",
    ))
}

/// Surrogate objective `stop_gradient(g(z) − β) · log Pr(z | s)` whose
/// gradient is the single-sample score-function estimate.
///
/// Only its gradient is meaningful; its forward value is not `E[g]` and
/// should not be reported.
pub fn sfe_surrogate<D: StructDomain + ?Sized>(
    tape: &mut Tape,
    d: &D,
    s: Var,
    z: &Structure,
    centered_value: f64,
) -> Result<Var> {
    let logp = record_log_prob(tape, d, s, z)?;
    let w = tape.vector(vec![centered_value]);
    let w = tape.stop_gradient(w);
    tape.mul(w, logp)
}
