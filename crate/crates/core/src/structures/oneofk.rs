use serde_json::json;

use super::{check_len, record_softmax, Capabilities, MarginalPoint, StructDomain, Structure};
use crate::error::Result;
use crate::numcore::{argmax_first, logsumexp, Rng, Tape, Var};
use crate::simplex::softmax;

/// Categorical domain `Z = {e_1, …, e_K}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneOfK {
    k: usize,
}

impl OneOfK {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "one-of-K needs at least one category");
        Self { k }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vertex(&self, i: usize) -> Structure {
        Structure::from_active(self.k, &[i])
    }
}

impl StructDomain for OneOfK {
    fn tag(&self) -> &'static str {
        "one_of_k"
    }

    fn params(&self) -> serde_json::Value {
        json!({ "k": self.k })
    }

    fn part_count(&self) -> usize {
        self.k
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
        z.len() == self.k && z.bits.iter().map(|&b| b as usize).sum::<usize>() == 1
    }

    fn size_estimate(&self) -> f64 {
        self.k as f64
    }

    fn enumerate_unchecked(&self) -> Vec<Structure> {
        (0..self.k).map(|i| self.vertex(i)).collect()
    }

    fn raw_argmax(&self, s: &[f64]) -> Result<Structure> {
        check_len(self, s)?;
        Ok(self.vertex(argmax_first(s)))
    }

    fn argmax_is_enumerative(&self) -> bool {
        true
    }

    fn marginals(&self, s: &[f64]) -> Result<(MarginalPoint, f64)> {
        check_len(self, s)?;
        let p = softmax(s)?;
        Ok((MarginalPoint { mu: p.probs }, logsumexp(s)))
    }

    fn sample(&self, s: &[f64], rng: &mut Rng) -> Result<Structure> {
        let p = softmax(s)?;
        Ok(self.vertex(rng.categorical(&p.probs)))
    }

    fn record_marginals(&self, tape: &mut Tape, s: Var) -> Result<Var> {
        record_softmax(tape, s)
    }
}
