use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::structures::Structure;

type ValueFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// The downstream model `g`, evaluated on structures (or relaxed points) and
/// counting its evaluations.
pub struct DownstreamFn {
    value: ValueFn,
    grad: Option<GradFn>,
    calls: AtomicUsize,
}

impl fmt::Debug for DownstreamFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DownstreamFn")
            .field("calls", &self.calls())
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

impl DownstreamFn {
    pub fn new(value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Box::new(value),
            grad: None,
            calls: AtomicUsize::new(0),
        }
    }

    /// Adds `∂g/∂z`, used by estimators that differentiate through a relaxed `z`.
    pub fn with_grad(mut self, grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.grad = Some(Box::new(grad));
        self
    }

    /// `g(z)`; counts one evaluation.
    pub fn eval(&self, z: &Structure) -> f64 {
        self.eval_point(&z.to_f64())
    }

    /// `g` at a relaxed point; counts one evaluation.
    pub fn eval_point(&self, z: &[f64]) -> f64 {
        self.calls.fetch_add(1, Ordering::Relaxed);
        (self.value)(z)
    }

    /// `(g(z), ∂g/∂z)`; counts one evaluation.
    pub fn value_and_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let grad = self
            .grad
            .as_ref()
            .ok_or_else(|| param_err("g", "downstream function has no gradient"))?;
        let v = self.eval_point(z);
        Ok((v, grad(z)))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    None,
    Constant(f64),
    /// Exponential moving average of batch means with the given decay.
    Ema(f64),
    /// `g` at the maximizer.
    SelfCritic,
    /// `g` at an independent draw, one per sample.
    SampleCritic,
}

/// Baseline kind with its running state. The EMA value is frozen within one
/// estimator call and updated afterwards, so each call stays unbiased.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: Baseline,
    pub running: f64,
}

impl BaselineConfig {
    pub fn new(kind: Baseline) -> Self {
        Self { kind, running: 0.0 }
    }

    pub fn none() -> Self {
        Self::new(Baseline::None)
    }

    pub fn ema() -> Self {
        Self::new(Baseline::Ema(0.9))
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            Baseline::None => "none",
            Baseline::Constant(_) => "constant",
            Baseline::Ema(_) => "ema",
            Baseline::SelfCritic => "self_critic",
            Baseline::SampleCritic => "sample_critic",
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if let Baseline::Ema(decay) = self.kind {
            if !(0.0..1.0).contains(&decay) {
                return Err(param_err("decay", "must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    pub(crate) fn update(&mut self, batch_mean: f64) {
        if let Baseline::Ema(decay) = self.kind {
            self.running = decay * self.running + (1.0 - decay) * batch_mean;
        }
    }
}

/// Output of one estimator call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    /// Estimate of `∂E[g]/∂s`.
    pub gradient: Vec<f64>,
    /// Estimate (or exact value) of `E[g]`.
    pub value: f64,
    /// Downstream values of the sampled structures, in draw order.
    pub sample_values: Vec<f64>,
    /// Per-coordinate sample variance of the per-sample gradient terms.
    pub grad_variance: Vec<f64>,
    /// Sum of `grad_variance`.
    pub variance: f64,
    pub samples: usize,
    pub decoder_calls: usize,
    /// Size of the distribution's support, for sparse marginalization.
    pub support_size: Option<usize>,
    /// False when an inner solver stopped before its tolerance.
    pub converged: bool,
}

impl EstimatorReport {
    pub(crate) fn exact(gradient: Vec<f64>, value: f64, calls: usize) -> Self {
        let n = gradient.len();
        Self {
            gradient,
            value,
            sample_values: Vec::new(),
            grad_variance: vec![0.0; n],
            variance: 0.0,
            samples: 0,
            decoder_calls: calls,
            support_size: None,
            converged: true,
        }
    }

    /// Standard error of the mean gradient, per coordinate.
    pub fn std_error(&self) -> Vec<f64> {
        let n = self.samples.max(1) as f64;
        self.grad_variance.iter().map(|v| (v / n).sqrt()).collect()
    }
}

/// Running mean and variance of per-sample gradient vectors.
pub(crate) struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub(crate) fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub(crate) fn finish(
        self,
        value: f64,
        sample_values: Vec<f64>,
        decoder_calls: usize,
    ) -> EstimatorReport {
        let denom = self.n.saturating_sub(1).max(1) as f64;
        let grad_variance: Vec<f64> = self.m2.iter().map(|s| s / denom).collect();
        EstimatorReport {
            variance: grad_variance.iter().sum(),
            gradient: self.mean,
            value,
            sample_values,
            grad_variance,
            samples: self.n,
            decoder_calls,
            support_size: None,
            converged: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_each_evaluation_once() {
        let g = DownstreamFn::new(|z| z.iter().sum()).with_grad(|z| vec![1.0; z.len()]);
        let z = Structure::from_active(3, &[0, 2]);
        assert_eq!(g.eval(&z), 2.0);
        assert_eq!(g.value_and_grad(&[0.5, 0.5]).unwrap().0, 1.0);
        assert_eq!(g.calls(), 2);
        assert!(DownstreamFn::new(|_| 0.0).value_and_grad(&[1.0]).is_err());
    }

    #[test]
    fn moments_match_two_pass() {
        let xs = [[1.0, 2.0], [3.0, -1.0], [0.5, 0.5], [2.0, 4.0]];
        let mut m = Moments::new(2);
        xs.iter().for_each(|x| m.push(x));
        let r = m.finish(0.0, vec![], 0);
        for c in 0..2 {
            let mean = xs.iter().map(|x| x[c]).sum::<f64>() / 4.0;
            let var = xs.iter().map(|x| (x[c] - mean).powi(2)).sum::<f64>() / 3.0;
            assert!((r.gradient[c] - mean).abs() < 1e-14);
            assert!((r.grad_variance[c] - var).abs() < 1e-14);
        }
    }

    #[test]
    fn ema_tracks_batch_means() {
        let mut b = BaselineConfig::ema();
        b.update(1.0);
        assert!((b.running - 0.1).abs() < 1e-15);
        b.update(1.0);
        assert!((b.running - 0.19).abs() < 1e-15);
        assert!(BaselineConfig::new(Baseline::Ema(1.0)).validate().is_err());
    }
}
