//! Linear-chain tagging with bigram parts.

use serde_json::json;

use super::{check_len, Capabilities, MarginalPoint, StructDomain, Structure};
use crate::error::{param_err, Result};
use crate::numcore::{logsumexp, Rng, Tape, Var};

/// Tag sequences of length `len` over `tags` tags, scored by bigrams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearChain {
    len: usize,
    tags: usize,
}

impl LinearChain {
    pub fn new(len: usize, tags: usize) -> Result<Self> {
        if len < 2 {
            return Err(param_err(
                "len",
                "a bigram chain needs at least 2 positions",
            ));
        }
        if tags < 1 {
            return Err(param_err("tags", "need at least one tag"));
        }
        Ok(Self { len, tags })
    }

    pub fn positions(&self) -> usize {
        self.len
    }

    pub fn tags(&self) -> usize {
        self.tags
    }

    /// Part index of bigram `(i, t, t2)`: tag `t` at `i`, tag `t2` at `i + 1`.
    pub fn part(&self, i: usize, t: usize, t2: usize) -> usize {
        (i * self.tags + t) * self.tags + t2
    }

    fn bigrams(&self) -> usize {
        self.len - 1
    }

    pub fn from_tags(&self, tags: &[usize]) -> Structure {
        let active: Vec<usize> = (0..self.bigrams())
            .map(|i| self.part(i, tags[i], tags[i + 1]))
            .collect();
        Structure::from_active(self.part_count(), &active)
    }

    /// Tag sequence of a valid structure.
    pub fn to_tags(&self, z: &Structure) -> Option<Vec<usize>> {
        if !self.is_valid(z) {
            return None;
        }
        let t = self.tags;
        let mut out = Vec::with_capacity(self.len);
        for i in 0..self.bigrams() {
            let p = (0..t * t).find(|&k| z.bits[i * t * t + k] == 1)?;
            if i == 0 {
                out.push(p / t);
            }
            out.push(p % t);
        }
        Some(out)
    }

    fn log_alphas(&self, s: &[f64]) -> Vec<Vec<f64>> {
        let t = self.tags;
        let mut alpha = vec![vec![0.0; t]];
        for i in 0..self.bigrams() {
            let prev = &alpha[i];
            let next = (0..t)
                .map(|b| {
                    let terms: Vec<f64> = (0..t).map(|a| prev[a] + s[self.part(i, a, b)]).collect();
                    logsumexp(&terms)
                })
                .collect();
            alpha.push(next);
        }
        alpha
    }

    fn log_betas(&self, s: &[f64]) -> Vec<Vec<f64>> {
        let t = self.tags;
        let mut beta = vec![vec![0.0; t]; self.len];
        for i in (0..self.bigrams()).rev() {
            for a in 0..t {
                let terms: Vec<f64> = (0..t)
                    .map(|b| s[self.part(i, a, b)] + beta[i + 1][b])
                    .collect();
                beta[i][a] = logsumexp(&terms);
            }
        }
        beta
    }
}

/// Bigram marginals and log-partition by log-space forward-backward.
pub fn forward_backward(chain: &LinearChain, s: &[f64]) -> Result<(MarginalPoint, f64)> {
    check_len(chain, s)?;
    let alpha = chain.log_alphas(s);
    let beta = chain.log_betas(s);
    let logz = logsumexp(&alpha[chain.len - 1]);
    let t = chain.tags;
    let mut mu = vec![0.0; chain.part_count()];
    for i in 0..chain.bigrams() {
        for (a, &al) in alpha[i].iter().enumerate().take(t) {
            for (b, &be) in beta[i + 1].iter().enumerate().take(t) {
                let p = chain.part(i, a, b);
                mu[p] = (al + s[p] + be - logz).exp();
            }
        }
    }
    Ok((MarginalPoint { mu }, logz))
}

/// Exact Gibbs sample by forward filtering, backward sampling.
pub fn ffbs_sample(chain: &LinearChain, s: &[f64], rng: &mut Rng) -> Result<Structure> {
    check_len(chain, s)?;
    let alpha = chain.log_alphas(s);
    let t = chain.tags;
    let weights = |logw: &[f64]| -> Vec<f64> {
        let m = logsumexp(logw);
        logw.iter().map(|x| (x - m).exp()).collect()
    };
    let mut tags = vec![0; chain.len];
    tags[chain.len - 1] = rng.categorical(&weights(&alpha[chain.len - 1]));
    for i in (0..chain.bigrams()).rev() {
        let next = tags[i + 1];
        let logw: Vec<f64> = (0..t)
            .map(|a| alpha[i][a] + s[chain.part(i, a, next)])
            .collect();
        tags[i] = rng.categorical(&weights(&logw));
    }
    Ok(chain.from_tags(&tags))
}

impl StructDomain for LinearChain {
    fn tag(&self) -> &'static str {
        "linear_chain"
    }

    fn params(&self) -> serde_json::Value {
        json!({ "len": self.len, "tags": self.tags })
    }

    fn part_count(&self) -> usize {
        self.bigrams() * self.tags * self.tags
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
        if z.len() != self.part_count() || z.bits.iter().any(|&b| b > 1) {
            return false;
        }
        let t = self.tags;
        let mut prev_next: Option<usize> = None;
        for i in 0..self.bigrams() {
            let on: Vec<usize> = (0..t * t).filter(|&k| z.bits[i * t * t + k] == 1).collect();
            if on.len() != 1 {
                return false;
            }
            let (a, b) = (on[0] / t, on[0] % t);
            if prev_next.is_some_and(|p| p != a) {
                return false;
            }
            prev_next = Some(b);
        }
        true
    }

    fn size_estimate(&self) -> f64 {
        (self.tags as f64).powi(self.len as i32)
    }

    fn enumerate_unchecked(&self) -> Vec<Structure> {
        let total = self.tags.pow(self.len as u32);
        (0..total)
            .map(|mut code| {
                let mut tags = vec![0; self.len];
                for slot in tags.iter_mut().rev() {
                    *slot = code % self.tags;
                    code /= self.tags;
                }
                self.from_tags(&tags)
            })
            .collect()
    }

    /// Viterbi.
    fn raw_argmax(&self, s: &[f64]) -> Result<Structure> {
        check_len(self, s)?;
        let t = self.tags;
        let mut delta = vec![0.0; t];
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(self.bigrams());
        for i in 0..self.bigrams() {
            let mut next = vec![f64::NEG_INFINITY; t];
            let mut ptr = vec![0; t];
            for b in 0..t {
                for a in 0..t {
                    let v = delta[a] + s[self.part(i, a, b)];
                    if v > next[b] {
                        next[b] = v;
                        ptr[b] = a;
                    }
                }
            }
            delta = next;
            back.push(ptr);
        }
        let mut last = 0;
        for b in 1..t {
            if delta[b] > delta[last] {
                last = b;
            }
        }
        let mut tags = vec![0; self.len];
        tags[self.len - 1] = last;
        for i in (0..self.bigrams()).rev() {
            tags[i] = back[i][tags[i + 1]];
        }
        Ok(self.from_tags(&tags))
    }

    fn argmax_is_enumerative(&self) -> bool {
        false
    }

    fn marginals(&self, s: &[f64]) -> Result<(MarginalPoint, f64)> {
        forward_backward(self, s)
    }

    fn sample(&self, s: &[f64], rng: &mut Rng) -> Result<Structure> {
        ffbs_sample(self, s, rng)
    }

    /// Forward and backward recursions recorded op by op, then
    /// `μ(i,a,b) = exp(α_i[a] + s(i,a,b) + β_{i+1}[b] − ln Z)`.
    fn record_marginals(&self, tape: &mut Tape, s: Var) -> Result<Var> {
        let t = self.tags;
        let n = self.bigrams();
        let block = |i: usize| -> Vec<usize> { (0..t * t).map(|k| i * t * t + k).collect() };
        // Bigram (a, b) within a block sits at a·T + b.
        let from_a: Vec<usize> = (0..t * t).map(|k| k / t).collect();
        let to_b: Vec<usize> = (0..t * t).map(|k| k % t).collect();
        let by_b: Vec<Vec<usize>> = (0..t)
            .map(|b| (0..t).map(|a| a * t + b).collect())
            .collect();
        let by_a: Vec<Vec<usize>> = (0..t)
            .map(|a| (0..t).map(|b| a * t + b).collect())
            .collect();

        let mut scores = Vec::with_capacity(n);
        for i in 0..n {
            scores.push(tape.gather(s, &block(i))?);
        }
        let mut alpha = vec![tape.vector(vec![0.0; t])];
        for i in 0..n {
            let prev = tape.gather(alpha[i], &from_a)?;
            let x = tape.add(prev, scores[i])?;
            alpha.push(tape.segment_logsumexp(x, &by_b)?);
        }
        let mut beta = vec![tape.vector(vec![0.0; t]); self.len];
        for i in (0..n).rev() {
            let next = tape.gather(beta[i + 1], &to_b)?;
            let x = tape.add(scores[i], next)?;
            beta[i] = tape.segment_logsumexp(x, &by_a)?;
        }
        let logz = tape.segment_logsumexp(alpha[n], &[(0..t).collect()])?;
        let logz = tape.gather(logz, &vec![0; t * t])?;
        let mut blocks = Vec::with_capacity(n);
        for i in 0..n {
            let a = tape.gather(alpha[i], &from_a)?;
            let b = tape.gather(beta[i + 1], &to_b)?;
            let x = tape.add(a, scores[i])?;
            let x = tape.add(x, b)?;
            let x = tape.sub(x, logz)?;
            blocks.push(tape.exp(x));
        }
        Ok(tape.concat(&blocks))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{backprop, finite_diff_jacobian, jacobian_from_pullback, FD_EPS};
    use crate::structures::{enumerate, gibbs_enum, log_partition_enum, ENUM_CAP};

    fn random_scores(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform_range(-2.0, 2.0)).collect()
    }

    #[test]
    fn zero_scores_give_uniform_bigrams() {
        for (l, t) in [(2, 2), (3, 3), (4, 2)] {
            let c = LinearChain::new(l, t).unwrap();
            let (mu, logz) = forward_backward(&c, &vec![0.0; c.part_count()]).unwrap();
            let want = 1.0 / (t * t) as f64;
            assert!(mu.mu.iter().all(|m| (m - want).abs() < 1e-12));
            assert!((logz - (t as f64).powi(l as i32).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = Rng::seed(21);
        let c = LinearChain::new(2, 2).unwrap();
        for _ in 0..10 {
            let s = random_scores(&mut rng, c.part_count());
            let (mu, logz) = forward_backward(&c, &s).unwrap();
            let dist = gibbs_enum(&c, &s).unwrap();
            for (a, b) in mu.mu.iter().zip(dist.mean()) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!((logz - log_partition_enum(&c, &s).unwrap()).abs() < 1e-10);
            let all = enumerate(&c, ENUM_CAP).unwrap();
            assert_eq!(all.len(), 4);
        }
    }

    #[test]
    fn log_partition_gradient_is_marginals() {
        let mut rng = Rng::seed(2);
        let c = LinearChain::new(3, 3).unwrap();
        let s = random_scores(&mut rng, c.part_count());
        let (mu, _) = forward_backward(&c, &s).unwrap();
        let g =
            finite_diff_jacobian(|x| vec![forward_backward(&c, x).unwrap().1], &s, FD_EPS).unwrap();
        for (a, b) in g.data().iter().zip(&mu.mu) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn tags_round_trip_and_validity() {
        let c = LinearChain::new(4, 3).unwrap();
        let z = c.from_tags(&[2, 0, 1, 1]);
        assert!(c.is_valid(&z));
        assert_eq!(c.to_tags(&z).unwrap(), vec![2, 0, 1, 1]);
        let mut broken = z.clone();
        broken.bits[c.part(1, 0, 1)] = 0;
        broken.bits[c.part(1, 2, 1)] = 1;
        assert!(!c.is_valid(&broken));
    }

    #[test]
    fn ffbs_is_deterministic_and_respects_masks() {
        let c = LinearChain::new(3, 2).unwrap();
        let target = c.from_tags(&[1, 0, 1]);
        let s: Vec<f64> = target
            .bits
            .iter()
            .map(|&b| if b == 1 { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        let mut rng = Rng::seed(4);
        for _ in 0..50 {
            assert_eq!(ffbs_sample(&c, &s, &mut rng).unwrap(), target);
        }
        let s2 = random_scores(&mut Rng::seed(9), c.part_count());
        let (mut a, mut b) = (Rng::seed(77), Rng::seed(77));
        for _ in 0..20 {
            assert_eq!(
                ffbs_sample(&c, &s2, &mut a).unwrap(),
                ffbs_sample(&c, &s2, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn recorded_marginals_match_and_differentiate() {
        let c = LinearChain::new(3, 2).unwrap();
        let s = random_scores(&mut Rng::seed(31), c.part_count());
        let mut tape = Tape::new();
        let sv = tape.vector(s.clone());
        let mu = c.record_marginals(&mut tape, sv).unwrap();
        let (want, _) = forward_backward(&c, &s).unwrap();
        for (a, b) in tape.value(mu).data().iter().zip(&want.mu) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = c.part_count();
        let j = jacobian_from_pullback(|v| backprop(&tape, mu, v).unwrap().wrt(sv), p, p);
        let fd =
            finite_diff_jacobian(|x| forward_backward(&c, x).unwrap().0.mu, &s, FD_EPS).unwrap();
        for (a, b) in j.data().iter().zip(fd.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
