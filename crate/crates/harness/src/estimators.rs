//! Side-by-side comparison of gradient estimators on a small enumerable problem.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use latstruct::numcore::Rng;
use latstruct::relax::{Noise, SparseMapOptions};
use latstruct::stochastic::{
    explicit_marginal, sfe_gradient, sparsemap_marginal, sparsemax_marginal, st_gumbel,
    sum_and_sample, Baseline, BaselineConfig, DownstreamFn,
};
use latstruct::structures::{BitVector, OneOfK, StructDomain, Structure};
use latstruct::surrogate::imle;

use crate::error::{config_err, Result};
use crate::output::{num, Artifact, Table, SCHEMA_VERSION};
use crate::stats::{mean_and_variance, norm2};

/// Largest bit-vector dimension accepted (16 structures).
pub const MAX_BITS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProblemDomain {
    OneOfK,
    BitVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorsConfig {
    pub domain: ProblemDomain,
    /// `K` for one-of-K, `D` for bit vectors.
    pub size: usize,
    /// Samples per estimator call.
    pub samples: usize,
    /// Independent estimator calls per row.
    pub replicates: usize,
    /// Exactly summed head size for sum-and-sample.
    pub topk: usize,
    /// ST-Gumbel temperature.
    pub temperature: f64,
    /// I-MLE step size.
    pub eta: f64,
    /// Adds a wall-time column; breaks bitwise reproducibility.
    pub wall_time: bool,
}

impl Default for EstimatorsConfig {
    fn default() -> Self {
        Self {
            domain: ProblemDomain::OneOfK,
            size: 10,
            samples: 1000,
            replicates: 20,
            topk: 2,
            temperature: 1.0,
            eta: 1.0,
            wall_time: false,
        }
    }
}

impl EstimatorsConfig {
    fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(config_err("problem size must be at least 2"));
        }
        if self.domain == ProblemDomain::BitVector && self.size > MAX_BITS {
            return Err(config_err(format!(
                "bit vectors are limited to D <= {MAX_BITS}"
            )));
        }
        if self.samples < 2 || self.replicates == 0 {
            return Err(config_err("need at least 2 samples and 1 replicate"));
        }
        if self.topk == 0 {
            return Err(config_err("topk must be at least 1"));
        }
        if !(self.temperature > 0.0 && self.eta > 0.0) {
            return Err(config_err("temperature and eta must be positive"));
        }
        Ok(())
    }
}

/// Scores of the default problem: peaked at part 0, no ties.
pub fn shipped_scores(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 2.5 - 0.4 * i as f64 + 0.3 * (2.0 * i as f64).sin())
        .collect()
}

fn shipped_weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.5 * (1.0 + i as f64).sin()).collect()
}

/// Default decoder `g(z) = 3 + (⟨w, z⟩ − ½)² + 2 z₀`, with its gradient.
pub fn shipped_decoder(n: usize) -> DownstreamFn {
    let w = shipped_weights(n);
    let w2 = w.clone();
    DownstreamFn::new(move |z| {
        let lin: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum();
        3.0 + (lin - 0.5).powi(2) + 2.0 * z[0]
    })
    .with_grad(move |z| {
        let lin: f64 = z.iter().zip(&w2).map(|(a, b)| a * b).sum();
        let mut g: Vec<f64> = w2.iter().map(|wi| 2.0 * (lin - 0.5) * wi).collect();
        g[0] += 2.0;
        g
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Explicit,
    Sfe(Baseline),
    SumAndSample,
    StGumbel,
    Imle,
    SparsemaxMarginal,
    SparsemapMarginal,
}

impl EstimatorKind {
    pub fn all() -> Vec<EstimatorKind> {
        use EstimatorKind::*;
        vec![
            Explicit,
            Sfe(Baseline::None),
            Sfe(Baseline::Constant(3.0)),
            Sfe(Baseline::Ema(0.9)),
            Sfe(Baseline::SelfCritic),
            Sfe(Baseline::SampleCritic),
            SumAndSample,
            StGumbel,
            Imle,
            SparsemaxMarginal,
            SparsemapMarginal,
        ]
    }

    pub fn name(&self) -> String {
        match self {
            EstimatorKind::Explicit => "explicit".into(),
            EstimatorKind::Sfe(b) => format!("sfe_{}", BaselineConfig::new(*b).name()),
            EstimatorKind::SumAndSample => "sum_and_sample".into(),
            EstimatorKind::StGumbel => "st_gumbel".into(),
            EstimatorKind::Imle => "imle".into(),
            EstimatorKind::SparsemaxMarginal => "sparsemax_marginal".into(),
            EstimatorKind::SparsemapMarginal => "sparsemap_marginal".into(),
        }
    }

    /// Whether the estimator targets `∂E_{softmax}[g]/∂s` without bias.
    pub fn unbiased(&self) -> bool {
        matches!(
            self,
            EstimatorKind::Explicit | EstimatorKind::Sfe(_) | EstimatorKind::SumAndSample
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorRow {
    pub estimator: String,
    pub unbiased: bool,
    /// `‖mean estimate − explicit gradient‖₂` over all replicates.
    pub bias: f64,
    /// `‖standard error of that mean‖₂`.
    pub std_error: f64,
    /// Per-sample gradient variance summed over coordinates, averaged over calls.
    pub variance: f64,
    /// Decoder calls per estimator call.
    pub decoder_calls: f64,
    /// `bias < 3 · std_error`, for unbiased estimators.
    pub within_3se: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorsReport {
    pub schema_version: u32,
    pub seed: u64,
    pub config: EstimatorsConfig,
    pub exact_gradient: Vec<f64>,
    pub rows: Vec<EstimatorRow>,
    /// No-baseline SFE variance exceeds self-critic SFE variance.
    pub self_critic_reduces_variance: bool,
    pub passed: bool,
}

impl EstimatorsReport {
    pub fn row(&self, name: &str) -> Option<&EstimatorRow> {
        self.rows.iter().find(|r| r.estimator == name)
    }
}

impl Artifact for EstimatorsReport {
    fn table(&self) -> Table {
        let mut header = vec![
            "estimator",
            "unbiased",
            "bias",
            "std_error",
            "variance",
            "decoder_calls",
            "within_3se",
        ];
        if self.config.wall_time {
            header.push("wall_time_ms");
        }
        let mut t = Table::new(&header);
        for r in &self.rows {
            let mut row = vec![
                r.estimator.clone(),
                r.unbiased.to_string(),
                num(r.bias),
                num(r.std_error),
                num(r.variance),
                num(r.decoder_calls),
                r.within_3se.map_or(String::new(), |b| b.to_string()),
            ];
            if self.config.wall_time {
                row.push(r.wall_time_ms.map_or(String::new(), num));
            }
            t.push(row);
        }
        t
    }

    fn passed(&self) -> bool {
        self.passed
    }
}

/// One estimator call: gradient, per-sample variance and decoder calls.
struct Estimate {
    gradient: Vec<f64>,
    variance: Vec<f64>,
    samples: usize,
    calls: usize,
}

/// Mean and variance of per-sample terms from a pathwise or perturbation rule.
fn from_terms(terms: &[Vec<f64>], calls: usize) -> Estimate {
    let (gradient, variance) = mean_and_variance(terms);
    Estimate {
        gradient,
        variance,
        samples: terms.len(),
        calls,
    }
}

/// `∂g/∂z` at a discrete structure; counts one decoder call.
fn decoder_grad(g: &DownstreamFn, z: &Structure) -> Result<Vec<f64>> {
    Ok(g.value_and_grad(&z.to_f64())?.1)
}

fn st_gumbel_terms(
    domain: ProblemDomain,
    s: &[f64],
    g: &DownstreamFn,
    cfg: &EstimatorsConfig,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut terms = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        match domain {
            ProblemDomain::OneOfK => {
                let layer = st_gumbel(s, cfg.temperature, rng)?;
                let dg = decoder_grad(g, &layer.value)?;
                terms.push(layer.pullback(&dg)?);
            }
            ProblemDomain::BitVector => {
                // Each bit is a two-way choice between scores 0 and s_i.
                let layers = s
                    .iter()
                    .map(|&si| st_gumbel(&[0.0, si], cfg.temperature, rng))
                    .collect::<latstruct::Result<Vec<_>>>()?;
                let active: Vec<usize> = (0..s.len())
                    .filter(|&i| layers[i].value.bits[1] == 1)
                    .collect();
                let dg = decoder_grad(g, &Structure::from_active(s.len(), &active))?;
                let mut term = Vec::with_capacity(s.len());
                for (layer, d) in layers.iter().zip(&dg) {
                    term.push(layer.pullback(&[0.0, *d])?[1]);
                }
                terms.push(term);
            }
        }
    }
    Ok(terms)
}

fn imle_terms<D: StructDomain + Clone + 'static>(
    d: &D,
    s: &[f64],
    g: &DownstreamFn,
    cfg: &EstimatorsConfig,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    let mut terms = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let layer = imle(d, s, cfg.eta, 1.0, Noise::Gumbel, rng)?;
        let dg = decoder_grad(g, &layer.value)?;
        terms.push(layer.pullback(&dg)?.iter().map(|x| x / cfg.eta).collect());
    }
    Ok(terms)
}

fn estimate<D: StructDomain + Clone + 'static>(
    kind: EstimatorKind,
    d: &D,
    domain: ProblemDomain,
    s: &[f64],
    cfg: &EstimatorsConfig,
    baseline: &mut BaselineConfig,
    rng: &mut Rng,
) -> Result<Estimate> {
    let g = shipped_decoder(s.len());
    let report = match kind {
        EstimatorKind::Explicit => explicit_marginal(d, s, &g)?,
        EstimatorKind::Sfe(_) => sfe_gradient(d, s, &g, cfg.samples, baseline, rng)?,
        EstimatorKind::SumAndSample => sum_and_sample(d, s, &g, cfg.topk, cfg.samples, rng)?,
        EstimatorKind::SparsemaxMarginal => sparsemax_marginal(d, s, &g, None)?,
        EstimatorKind::SparsemapMarginal => {
            sparsemap_marginal(d, s, &g, SparseMapOptions::default())?
        }
        EstimatorKind::StGumbel => {
            let terms = st_gumbel_terms(domain, s, &g, cfg, rng)?;
            return Ok(from_terms(&terms, g.calls()));
        }
        EstimatorKind::Imle => {
            let terms = imle_terms(d, s, &g, cfg, rng)?;
            return Ok(from_terms(&terms, g.calls()));
        }
    };
    Ok(Estimate {
        gradient: report.gradient,
        variance: report.grad_variance,
        samples: report.samples,
        calls: report.decoder_calls,
    })
}

fn run_row<D: StructDomain + Clone + 'static>(
    kind: EstimatorKind,
    d: &D,
    cfg: &EstimatorsConfig,
    exact: &[f64],
    mut rng: Rng,
) -> Result<EstimatorRow> {
    let s = shipped_scores(d.part_count());
    let mut baseline = match kind {
        EstimatorKind::Sfe(b) => BaselineConfig::new(b),
        _ => BaselineConfig::none(),
    };
    let start = Instant::now();
    let mut grads = Vec::with_capacity(cfg.replicates);
    let (mut var_sum, mut calls) = (vec![0.0; s.len()], 0usize);
    let mut total_var = 0.0;
    let mut total_samples = 0usize;
    for _ in 0..cfg.replicates {
        let e = estimate(kind, d, cfg.domain, &s, cfg, &mut baseline, &mut rng)?;
        var_sum
            .iter_mut()
            .zip(&e.variance)
            .for_each(|(a, b)| *a += b);
        total_var += e.variance.iter().sum::<f64>();
        total_samples += e.samples;
        calls += e.calls;
        grads.push(e.gradient);
    }
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    let r = cfg.replicates as f64;
    let (mean, _) = mean_and_variance(&grads);
    let diff: Vec<f64> = mean.iter().zip(exact).map(|(a, b)| a - b).collect();
    let bias = norm2(&diff);
    // Pooled per-sample variance over every draw behind the mean.
    let se: Vec<f64> = if total_samples == 0 {
        vec![0.0; s.len()]
    } else {
        var_sum
            .iter()
            .map(|v| (v / r / total_samples as f64).sqrt())
            .collect()
    };
    let std_error = norm2(&se);
    Ok(EstimatorRow {
        estimator: kind.name(),
        unbiased: kind.unbiased(),
        bias,
        std_error,
        variance: total_var / r,
        decoder_calls: calls as f64 / r,
        within_3se: kind.unbiased().then_some(bias < 3.0 * std_error + 1e-12),
        wall_time_ms: cfg.wall_time.then_some(elapsed),
    })
}

fn run_domain<D: StructDomain + Clone + 'static>(
    d: &D,
    cfg: &EstimatorsConfig,
    seed: u64,
    jobs: usize,
) -> Result<EstimatorsReport> {
    let s = shipped_scores(d.part_count());
    let exact = explicit_marginal(d, &s, &shipped_decoder(s.len()))?.gradient;
    let kinds = EstimatorKind::all();
    let rngs = Rng::seed(seed).split_n(kinds.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| config_err(format!("thread pool: {e}")))?;
    let rows: Vec<EstimatorRow> = pool.install(|| {
        kinds
            .par_iter()
            .zip(rngs)
            .map(|(&k, rng)| run_row(k, d, cfg, &exact, rng))
            .collect::<Result<Vec<_>>>()
    })?;
    let var = |name: &str| {
        rows.iter()
            .find(|r| r.estimator == name)
            .map(|r| r.variance)
    };
    let reduces = matches!(
        (var("sfe_none"), var("sfe_self_critic")),
        (Some(a), Some(b)) if a > b
    );
    let passed = reduces && rows.iter().all(|r| r.within_3se != Some(false));
    Ok(EstimatorsReport {
        schema_version: SCHEMA_VERSION,
        seed,
        config: cfg.clone(),
        exact_gradient: exact,
        rows,
        self_critic_reduces_variance: reduces,
        passed,
    })
}

/// Runs every estimator on the configured problem; `jobs` threads share the rows.
pub fn run(cfg: &EstimatorsConfig, seed: u64, jobs: usize) -> Result<EstimatorsReport> {
    cfg.validate()?;
    match cfg.domain {
        ProblemDomain::OneOfK => run_domain(&OneOfK::new(cfg.size), cfg, seed, jobs),
        ProblemDomain::BitVector => run_domain(&BitVector::new(cfg.size), cfg, seed, jobs),
    }
}
