use serde_json::json;

use super::{check_len, Capabilities, MarginalPoint, StructDomain, Structure};
use crate::error::Result;
use crate::numcore::{Rng, Tape, Tensor, Var};

/// Independent bits, `Z = {0,1}^D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitVector {
    d: usize,
}

impl BitVector {
    pub fn new(d: usize) -> Self {
        Self { d }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl StructDomain for BitVector {
    fn tag(&self) -> &'static str {
        "bit_vector"
    }

    fn params(&self) -> serde_json::Value {
        json!({ "d": self.d })
    }

    fn part_count(&self) -> usize {
        self.d
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_marginals: true,
            has_sampler: true,
            has_topk: true,
            enumerable: true,
        }
    }

    fn is_valid(&self, z: &Structure) -> bool {
        z.len() == self.d && z.bits.iter().all(|&b| b <= 1)
    }

    fn size_estimate(&self) -> f64 {
        2f64.powi(self.d as i32)
    }

    fn enumerate_unchecked(&self) -> Vec<Structure> {
        (0u64..1 << self.d)
            .map(|m| Structure {
                bits: (0..self.d)
                    .map(|p| ((m >> (self.d - 1 - p)) & 1) as u8)
                    .collect(),
            })
            .collect()
    }

    fn raw_argmax(&self, s: &[f64]) -> Result<Structure> {
        check_len(self, s)?;
        Ok(Structure {
            bits: s.iter().map(|&x| (x > 0.0) as u8).collect(),
        })
    }

    fn marginals(&self, s: &[f64]) -> Result<(MarginalPoint, f64)> {
        check_len(self, s)?;
        let mu = s.iter().map(|&x| sigmoid(x)).collect();
        Ok((MarginalPoint { mu }, s.iter().map(|&x| softplus(x)).sum()))
    }

    fn sample(&self, s: &[f64], rng: &mut Rng) -> Result<Structure> {
        check_len(self, s)?;
        Ok(Structure {
            bits: s.iter().map(|&x| rng.bernoulli(sigmoid(x)) as u8).collect(),
        })
    }

    fn record_marginals(&self, tape: &mut Tape, s: Var) -> Result<Var> {
        let mu: Vec<f64> = tape.value(s).data().iter().map(|&x| sigmoid(x)).collect();
        let keep = mu.clone();
        Ok(tape.custom(
            &[s],
            Tensor::vector(mu),
            Box::new(move |g| {
                vec![g
                    .iter()
                    .zip(&keep)
                    .map(|(g, m)| g * m * (1.0 - m))
                    .collect()]
            }),
            "sigmoid",
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::{gibbs_enum, log_partition_enum};

    #[test]
    fn closed_forms_match_enumeration() {
        let d = BitVector::new(3);
        let s = [0.4, -1.3, 2.2];
        let (mu, logz) = d.marginals(&s).unwrap();
        let dist = gibbs_enum(&d, &s).unwrap();
        for (a, b) in mu.mu.iter().zip(dist.mean()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((logz - log_partition_enum(&d, &s).unwrap()).abs() < 1e-12);
        assert_eq!(d.argmax(&[0.5, 0.0, -0.1]).unwrap().bits, vec![1, 0, 0]);
    }
}
