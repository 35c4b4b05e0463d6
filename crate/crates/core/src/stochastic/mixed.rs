use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::numcore::Rng;
use crate::simplex::{sparsemax, SimplexPoint};

/// Continuous base distribution for [`rectified_sample`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RectifiedBase {
    Gaussian {
        mean: f64,
        std: f64,
    },
    /// Binary concrete with location `log_alpha` and temperature, stretched
    /// to `(lo, hi)` with `lo < 0 < 1 < hi`.
    StretchedConcrete {
        log_alpha: f64,
        temperature: f64,
        lo: f64,
        hi: f64,
    },
}

impl RectifiedBase {
    fn validate(&self) -> Result<()> {
        match *self {
            RectifiedBase::Gaussian { mean, std } => {
                if !mean.is_finite() || !(std > 0.0 && std.is_finite()) {
                    return Err(param_err("std", "need finite mean and positive std"));
                }
            }
            RectifiedBase::StretchedConcrete {
                log_alpha,
                temperature,
                lo,
                hi,
            } => {
                if !log_alpha.is_finite() || !(temperature > 0.0) || !(lo < hi) {
                    return Err(param_err(
                        "temperature",
                        "need positive temperature and lo < hi",
                    ));
                }
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut Rng) -> f64 {
        match *self {
            RectifiedBase::Gaussian { mean, std } => mean + std * rng.normal(),
            RectifiedBase::StretchedConcrete {
                log_alpha,
                temperature,
                lo,
                hi,
            } => {
                let u = rng.uniform();
                let logit = (u.ln() - (-u).ln_1p() + log_alpha) / temperature;
                let y = 1.0 / (1.0 + (-logit).exp());
                lo + (hi - lo) * y
            }
        }
    }
}

/// `clamp(U, 0, 1)` for a base draw `U`: a mixed variable with atoms at 0 and 1.
pub fn rectified_sample(base: RectifiedBase, rng: &mut Rng) -> Result<f64> {
    base.validate()?;
    Ok(base.draw(rng).clamp(0.0, 1.0))
}

/// `sparsemax(s + σ N)` with `N` standard Gaussian: a simplex-valued variable
/// with mass on faces and vertices.
pub fn gaussian_sparsemax_sample(s: &[f64], sigma: f64, rng: &mut Rng) -> Result<SimplexPoint> {
    if !(sigma >= 0.0) {
        return Err(param_err("sigma", "must be nonnegative"));
    }
    let noise = rng.normal_vec(s.len());
    let perturbed: Vec<f64> = s.iter().zip(&noise).map(|(a, b)| a + sigma * b).collect();
    Ok(sparsemax(&perturbed)?.probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn rectified_gaussian_atoms() {
        let base = RectifiedBase::Gaussian {
            mean: 0.0,
            std: 1.0,
        };
        let mut rng = Rng::seed(110);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| rectified_sample(base, &mut rng).unwrap())
            .collect();
        assert!(draws.iter().all(|x| (0.0..=1.0).contains(x)));
        let zeros = draws.iter().filter(|&&x| x == 0.0).count() as f64 / n as f64;
        let ones = draws.iter().filter(|&&x| x == 1.0).count() as f64 / n as f64;
        let tail = 1.0 - Normal::standard().cdf(1.0);
        assert!((zeros - 0.5).abs() < 0.01);
        assert!((ones - tail).abs() < 0.01);
    }

    #[test]
    fn stretched_concrete_hits_both_ends() {
        let base = RectifiedBase::StretchedConcrete {
            log_alpha: 0.0,
            temperature: 2.0 / 3.0,
            lo: -0.1,
            hi: 1.1,
        };
        let mut rng = Rng::seed(111);
        let draws: Vec<f64> = (0..20_000)
            .map(|_| rectified_sample(base, &mut rng).unwrap())
            .collect();
        assert!(draws.contains(&0.0));
        assert!(draws.contains(&1.0));
        assert!(draws.iter().any(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn gaussian_sparsemax_has_vertex_atoms() {
        let s = [0.3, -0.1, 0.5];
        let det = gaussian_sparsemax_sample(&s, 0.0, &mut Rng::seed(1)).unwrap();
        assert_eq!(det, sparsemax(&s).unwrap().probs);

        let mut rng = Rng::seed(112);
        let mut vertices = 0;
        for _ in 0..100_000 {
            let p = gaussian_sparsemax_sample(&[0.0; 3], 1.0, &mut rng).unwrap();
            assert!(p.is_valid(1e-12));
            vertices += p.probs.contains(&1.0) as usize;
        }
        assert!(vertices > 0);
    }
}
