//! Part-factored structured domains.
//!
//! A domain fixes a set of parts `P` and a set `Z ⊆ {0,1}^|P|` of valid
//! structures. Scores are one real per part and a structure's score is
//! `⟨z, s⟩`. Each domain provides what it can of: maximization, marginal
//! inference (with log-partition), exact sampling and enumeration.
//!
//! Score layouts:
//! - [`OneOfK`]: one score per category.
//! - [`BitVector`]: one score per independent bit.
//! - [`LinearChain`]: tag bigrams `(i, t, t′)` between tag positions `i` and
//!   `i+1`, at index `(i·T + t)·T + t′` for `i` in `0..L−1`.
//! - [`Assignment`]: the `m×m` matrix, row-major.
//! - [`Arborescence`]: arcs `head → modifier`, row-major over heads
//!   `0..=n` (0 is the root) and modifiers `1..=n`, at `h·n + (m−1)`.
//!   Self-loop slots `h == m` exist in the layout but are never selected.
//! - [`BinaryTreeSr`]: one score per action position; a shift is a 1.
//!
//! Ties in maximization resolve to the lexicographically smallest bit vector,
//! except for [`OneOfK`] where the lowest category index wins.

mod arborescence;
mod assignment;
mod bitvec;
mod chain;
mod json;
mod oneofk;
mod srtree;
mod transition;

pub use arborescence::{chu_liu_edmonds, matrix_tree_marginals, Arborescence};
pub use assignment::{kuhn_munkres, Assignment};
pub use bitvec::BitVector;
pub use chain::{ffbs_sample, forward_backward, LinearChain};
pub use json::{DistRecord, StructureRecord, SCHEMA_VERSION};
pub use oneofk::OneOfK;
pub use srtree::{sr_tree_distribution, BinaryTreeSr, ShiftReduceModel, SrAction, SrState};
pub use transition::{
    ancestral_sample, beam_search, BeamOptions, Hypothesis, TableModel, TransitionModel,
};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numcore::{dot, logsumexp, Rng, Tape, Var};

/// Default ceiling on the number of structures an enumeration may produce.
pub const ENUM_CAP: usize = 1_000_000;

/// A binary indicator vector over a domain's parts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Structure {
    pub bits: Vec<u8>,
}

impl Structure {
    pub fn zeros(parts: usize) -> Self {
        Self {
            bits: vec![0; parts],
        }
    }

    pub fn from_active(parts: usize, active: &[usize]) -> Self {
        let mut z = Self::zeros(parts);
        for &p in active {
            z.bits[p] = 1;
        }
        z
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn active(&self) -> Vec<usize> {
        (0..self.bits.len())
            .filter(|&p| self.bits[p] == 1)
            .collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }

    /// `⟨z, s⟩`.
    pub fn score(&self, s: &[f64]) -> f64 {
        self.bits
            .iter()
            .zip(s)
            .filter(|(&b, _)| b == 1)
            .map(|(_, &x)| x)
            .sum()
    }
}

/// A point of the marginal polytope `conv(Z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalPoint {
    pub mu: Vec<f64>,
}

impl MarginalPoint {
    pub fn as_slice(&self) -> &[f64] {
        &self.mu
    }
}

/// Finite-support distribution over structures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDist {
    pub support: Vec<Structure>,
    pub weights: Vec<f64>,
}

impl SparseDist {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// `E[Z]` under the distribution.
    pub fn mean(&self) -> Vec<f64> {
        let parts = self.support.first().map_or(0, Structure::len);
        let mut mu = vec![0.0; parts];
        for (z, &w) in self.support.iter().zip(&self.weights) {
            for p in z.active() {
                mu[p] += w;
            }
        }
        mu
    }

    pub fn weight_of(&self, z: &Structure) -> f64 {
        self.support
            .iter()
            .position(|x| x == z)
            .map_or(0.0, |i| self.weights[i])
    }

    /// Weights nonnegative, summing to one within `tol`, support distinct.
    pub fn is_valid(&self, tol: f64) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.weights.iter().all(|&w| w >= 0.0)
            && (self.weights.iter().sum::<f64>() - 1.0).abs() <= tol
            && self.support.iter().all(|z| seen.insert(z))
    }
}

/// Which oracles a domain provides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub has_marginals: bool,
    pub has_sampler: bool,
    pub has_topk: bool,
    pub enumerable: bool,
}

pub trait StructDomain: std::fmt::Debug + Send + Sync {
    /// Domain tag used in serialized records.
    fn tag(&self) -> &'static str;

    /// Shape parameters used in serialized records.
    fn params(&self) -> serde_json::Value;

    fn part_count(&self) -> usize;

    fn capabilities(&self) -> Capabilities;

    fn is_valid(&self, z: &Structure) -> bool;

    /// `|Z|`, as a float so large domains do not overflow.
    fn size_estimate(&self) -> f64;

    /// Every valid structure, in any order. Only called on enumerable domains
    /// after the cap check.
    fn enumerate_unchecked(&self) -> Vec<Structure>;

    /// A maximizer of `⟨z, s⟩` with no tie-break guarantee. Enumeration-backed
    /// unless the domain has a dedicated algorithm.
    fn raw_argmax(&self, s: &[f64]) -> Result<Structure> {
        let all = enumerate(self, ENUM_CAP)?;
        Ok(best_by_score(&all, s))
    }

    /// Whether [`StructDomain::raw_argmax`] is the enumeration fallback, in
    /// which case ties are already broken canonically.
    fn argmax_is_enumerative(&self) -> bool {
        true
    }

    /// The canonical maximizer.
    fn argmax(&self, s: &[f64]) -> Result<Structure> {
        check_len(self, s)?;
        if self.argmax_is_enumerative() {
            return self.raw_argmax(s);
        }
        canonical_argmax(self, s)
    }

    /// `E[Z]` and `ln Σ_z exp⟨z, s⟩` under the Gibbs distribution.
    fn marginals(&self, _s: &[f64]) -> Result<(MarginalPoint, f64)> {
        Err(self.unsupported("marginal inference"))
    }

    /// An exact draw from the Gibbs distribution.
    fn sample(&self, _s: &[f64], _rng: &mut Rng) -> Result<Structure> {
        Err(self.unsupported("exact sampling"))
    }

    /// Records marginal inference on `tape`, reading scores from `s`.
    fn record_marginals(&self, _tape: &mut Tape, _s: Var) -> Result<Var> {
        Err(self.unsupported("recorded marginal inference"))
    }

    fn unsupported(&self, capability: &'static str) -> Error {
        Error::Unsupported {
            domain: self.tag(),
            capability,
        }
    }
}

pub(crate) fn check_len<D: StructDomain + ?Sized>(d: &D, s: &[f64]) -> Result<()> {
    if s.len() != d.part_count() {
        return Err(shape_err(
            format!("{} scores for {}", d.part_count(), d.tag()),
            s.len(),
        ));
    }
    Ok(())
}

/// Highest-scoring structure; ties go to the lexicographically smallest.
pub(crate) fn best_by_score(all: &[Structure], s: &[f64]) -> Structure {
    let mut best: Option<(&Structure, f64)> = None;
    for z in all {
        let v = z.score(s);
        best = match best {
            Some((b, bv)) if bv > v || (bv == v && b <= z) => Some((b, bv)),
            _ => Some((z, v)),
        };
    }
    best.expect("non-empty structure set").0.clone()
}

/// Lexicographically smallest maximizer, obtained by greedily forbidding
/// parts in index order whenever an equally good structure avoids them.
fn canonical_argmax<D: StructDomain + ?Sized>(d: &D, s: &[f64]) -> Result<Structure> {
    let mut current = d.raw_argmax(s)?;
    let best = current.score(s);
    let scale: f64 = s.iter().map(|x| x.abs()).sum::<f64>() + 1.0;
    let tol = 1e-12 * scale;
    let low = -3.0 * scale;
    let mut forbidden = vec![false; s.len()];
    let mut probe = s.to_vec();
    for p in 0..s.len() {
        if current.bits[p] == 0 {
            forbidden[p] = true;
            probe[p] = low;
            continue;
        }
        let keep = probe[p];
        probe[p] = low;
        let cand = d.raw_argmax(&probe)?;
        let avoids = cand.active().iter().all(|&q| !forbidden[q] && q != p);
        if avoids && cand.score(s) >= best - tol {
            forbidden[p] = true;
            current = cand;
        } else {
            probe[p] = keep;
        }
    }
    Ok(current)
}

/// Maximizer of `⟨z, s⟩` over the domain, with the canonical tie-break.
pub fn argmax_oracle<D: StructDomain + ?Sized>(d: &D, s: &[f64]) -> Result<Structure> {
    d.argmax(s)
}

/// All valid structures in lexicographic order, refusing beyond `cap`.
pub fn enumerate<D: StructDomain + ?Sized>(d: &D, cap: usize) -> Result<Vec<Structure>> {
    if !d.capabilities().enumerable {
        return Err(d.unsupported("enumeration"));
    }
    let estimate = d.size_estimate();
    if estimate > cap as f64 {
        return Err(Error::EnumerationCap { estimate, cap });
    }
    let mut all = d.enumerate_unchecked();
    all.sort();
    Ok(all)
}

/// Exact Gibbs distribution `Pr(z) ∝ exp⟨z, s⟩` by enumeration.
pub fn gibbs_enum<D: StructDomain + ?Sized>(d: &D, s: &[f64]) -> Result<SparseDist> {
    check_len(d, s)?;
    let support = enumerate(d, ENUM_CAP)?;
    let scores: Vec<f64> = support.iter().map(|z| z.score(s)).collect();
    let lse = logsumexp(&scores);
    let weights = scores.iter().map(|v| (v - lse).exp()).collect();
    Ok(SparseDist { support, weights })
}

/// `ln Σ_z exp⟨z, s⟩` by enumeration.
pub fn log_partition_enum<D: StructDomain + ?Sized>(d: &D, s: &[f64]) -> Result<f64> {
    check_len(d, s)?;
    let scores: Vec<f64> = enumerate(d, ENUM_CAP)?.iter().map(|z| z.score(s)).collect();
    Ok(logsumexp(&scores))
}

/// Marginals and log-partition by enumeration.
pub(crate) fn marginals_enum<D: StructDomain + ?Sized>(
    d: &D,
    s: &[f64],
) -> Result<(MarginalPoint, f64)> {
    let dist = gibbs_enum(d, s)?;
    let logz = log_partition_enum(d, s)?;
    Ok((MarginalPoint { mu: dist.mean() }, logz))
}

/// Records `Mᵀ softmax(M s)` for the enumerated structure matrix `M`.
pub(crate) fn record_marginals_enum<D: StructDomain + ?Sized>(
    d: &D,
    tape: &mut Tape,
    s: Var,
) -> Result<Var> {
    let all = enumerate(d, ENUM_CAP)?;
    let rows: Vec<Vec<(usize, f64)>> = all
        .iter()
        .map(|z| z.active().into_iter().map(|p| (p, 1.0)).collect())
        .collect();
    let scores = tape.sparse_linear(s, &rows)?;
    let probs = record_softmax(tape, scores)?;
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); d.part_count()];
    for (k, z) in all.iter().enumerate() {
        for p in z.active() {
            cols[p].push((k, 1.0));
        }
    }
    tape.sparse_linear(probs, &cols)
}

/// Records `exp(x − logsumexp(x))`.
pub(crate) fn record_softmax(tape: &mut Tape, x: Var) -> Result<Var> {
    let n = tape.value(x).len();
    let lse = tape.segment_logsumexp(x, &[(0..n).collect()])?;
    let lse = tape.gather(lse, &vec![0; n])?;
    let centered = tape.sub(x, lse)?;
    Ok(tape.exp(centered))
}

/// Exact draw by enumeration.
pub(crate) fn sample_enum<D: StructDomain + ?Sized>(
    d: &D,
    s: &[f64],
    rng: &mut Rng,
) -> Result<Structure> {
    let dist = gibbs_enum(d, s)?;
    let i = rng.categorical(&dist.weights);
    Ok(dist.support[i].clone())
}

/// `∂ ln Pr(z | s) / ∂s = z − E[Z]` for Gibbs distributions.
pub fn score_function(z: &Structure, mu: &[f64]) -> Vec<f64> {
    z.bits.iter().zip(mu).map(|(&b, m)| b as f64 - m).collect()
}

/// `⟨z, s⟩ − ln Z`.
pub fn log_prob(z: &Structure, s: &[f64], log_partition: f64) -> f64 {
    dot(&z.to_f64(), s) - log_partition
}
