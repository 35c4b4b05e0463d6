use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::numcore::{DiffValue, Rng};
use crate::structures::{check_len, MarginalPoint, StructDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    Gumbel,
    Gaussian,
}

impl Noise {
    pub fn draw(self, rng: &mut Rng, n: usize) -> Vec<f64> {
        match self {
            Noise::Gumbel => rng.gumbel_vec(n),
            Noise::Gaussian => rng.normal_vec(n),
        }
    }

    /// `−∇ log density` of the noise at `u`.
    fn score(self, u: f64) -> f64 {
        match self {
            Noise::Gumbel => 1.0 - (-u).exp(),
            Noise::Gaussian => u,
        }
    }
}

/// How the backward pass estimates the Jacobian of the smoothed maximizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbedPullback {
    /// `(1/σM) Σ_i ψ(u_i) ⟨y_i, v⟩`, where `ψ = −∇ log density`.
    NoiseCorrelation,
    /// Same, with `⟨ȳ, v⟩` subtracted from every term as a control variate.
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbedOptions {
    pub noise: Noise,
    /// Noise scale `σ ≥ 0`.
    pub scale: f64,
    /// Number of perturbations `M ≥ 1`.
    pub samples: usize,
    pub pullback: PerturbedPullback,
}

impl Default for PerturbedOptions {
    fn default() -> Self {
        Self {
            noise: Noise::Gumbel,
            scale: 1.0,
            samples: 1000,
            pullback: PerturbedPullback::NoiseCorrelation,
        }
    }
}

/// `(1/M) Σ_i argmax(s + σ u_i)` with a Monte Carlo pullback reusing the same
/// perturbations.
///
/// The pullback estimates the derivative of the smoothed maximizer
/// `E[argmax(s + σU)]`, not of the returned sample mean (which is piecewise
/// constant), so the result is tagged as a surrogate. At `σ = 0` the forward
/// value is the canonical maximizer and the pullback is zero.
pub fn perturbed_argmax<D: StructDomain + ?Sized>(
    d: &D,
    s: &[f64],
    opts: PerturbedOptions,
    rng: &mut Rng,
) -> Result<DiffValue<MarginalPoint>> {
    check_len(d, s)?;
    if opts.samples == 0 {
        return Err(param_err("samples", "need at least one perturbation"));
    }
    if !(opts.scale >= 0.0) {
        return Err(param_err("scale", "must be nonnegative"));
    }
    let parts = s.len();
    if opts.scale == 0.0 {
        let z = d.argmax(s)?;
        return Ok(DiffValue::surrogate(
            MarginalPoint { mu: z.to_f64() },
            parts,
            parts,
            move |_| vec![0.0; parts],
        ));
    }
    let mut noises = Vec::with_capacity(opts.samples);
    let mut maxima = Vec::with_capacity(opts.samples);
    let mut mean = vec![0.0; parts];
    for _ in 0..opts.samples {
        let u = opts.noise.draw(rng, parts);
        let perturbed: Vec<f64> = s.iter().zip(&u).map(|(a, b)| a + opts.scale * b).collect();
        let z = d.raw_argmax(&perturbed)?;
        for p in z.active() {
            mean[p] += 1.0;
        }
        noises.push(
            u.into_iter()
                .map(|x| opts.noise.score(x))
                .collect::<Vec<f64>>(),
        );
        maxima.push(z);
    }
    let m = opts.samples as f64;
    mean.iter_mut().for_each(|x| *x /= m);
    let centre = mean.clone();
    let (sigma, kind) = (opts.scale, opts.pullback);
    Ok(DiffValue::surrogate(
        MarginalPoint { mu: mean },
        parts,
        parts,
        move |v| {
            let baseline = match kind {
                PerturbedPullback::NoiseCorrelation => 0.0,
                PerturbedPullback::Centered => centre.iter().zip(v).map(|(a, b)| a * b).sum(),
            };
            let mut g = vec![0.0; v.len()];
            for (z, psi) in maxima.iter().zip(&noises) {
                let w = z.score(v) - baseline;
                g.iter_mut().zip(psi).for_each(|(gi, p)| *gi += w * p);
            }
            g.iter_mut().for_each(|x| *x /= sigma * m);
            g
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::softmax;
    use crate::structures::{LinearChain, OneOfK};

    #[test]
    fn zero_noise_is_map() {
        let d = LinearChain::new(3, 2).unwrap();
        let s: Vec<f64> = Rng::seed(60).normal_vec(d.part_count());
        let opts = PerturbedOptions {
            scale: 0.0,
            ..Default::default()
        };
        let r = perturbed_argmax(&d, &s, opts, &mut Rng::seed(1)).unwrap();
        assert_eq!(r.value.mu, d.argmax(&s).unwrap().to_f64());
        assert!(r.pullback(&[1.0; 8]).unwrap().iter().all(|&x| x == 0.0));
        assert!(r.is_surrogate());
    }

    #[test]
    fn gumbel_mean_approaches_softmax() {
        let s = [0.5, -0.3, 1.2, 0.0];
        let opts = PerturbedOptions {
            samples: 100_000,
            ..Default::default()
        };
        let r = perturbed_argmax(&OneOfK::new(4), &s, opts, &mut Rng::seed(61)).unwrap();
        let p = softmax(&s).unwrap();
        for (a, b) in r.value.mu.iter().zip(&p.probs) {
            assert!((a - b).abs() < 0.01);
        }
    }

    #[test]
    fn gumbel_pullback_estimates_softmax_jacobian() {
        let s = [0.5, -0.3, 1.2];
        let opts = PerturbedOptions {
            samples: 200_000,
            pullback: PerturbedPullback::Centered,
            ..Default::default()
        };
        let r = perturbed_argmax(&OneOfK::new(3), &s, opts, &mut Rng::seed(62)).unwrap();
        let p = softmax(&s).unwrap().probs;
        let v = [1.0, 0.0, -0.5];
        let pv: f64 = p.iter().zip(&v).map(|(a, b)| a * b).sum();
        let want: Vec<f64> = p.iter().zip(&v).map(|(pi, vi)| pi * (vi - pv)).collect();
        for (a, b) in r.pullback(&v).unwrap().iter().zip(&want) {
            assert!((a - b).abs() < 0.02, "{a} vs {b}");
        }
    }

    #[test]
    fn error_shrinks_with_more_samples() {
        let s = [0.3, -0.2, 0.8];
        let p = softmax(&s).unwrap().probs;
        let mut rng = Rng::seed(63);
        let mut err = |m: usize| -> f64 {
            let opts = PerturbedOptions {
                samples: m,
                ..Default::default()
            };
            (0..20)
                .map(|_| {
                    let r = perturbed_argmax(&OneOfK::new(3), &s, opts, &mut rng).unwrap();
                    r.value
                        .mu
                        .iter()
                        .zip(&p)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / 20.0
        };
        let ratio = err(100) / err(10_000);
        assert!(ratio > 5.0 && ratio < 20.0, "ratio {ratio}");
    }
}
