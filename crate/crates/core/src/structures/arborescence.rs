//! Non-projective dependency trees: arborescences over words `1..=n`
//! rooted at node 0. The root may take several children.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde_json::json;

use super::{check_len, Capabilities, MarginalPoint, StructDomain, Structure};
use crate::error::{param_err, shape_err, Error, Result};
use crate::numcore::{Tape, Tensor, Var};

/// Largest tolerated condition number of the root-augmented Laplacian.
pub const MAX_LAPLACIAN_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arborescence {
    n: usize,
}

impl Arborescence {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(param_err("n", "need at least one word"));
        }
        Ok(Self { n })
    }

    pub fn words(&self) -> usize {
        self.n
    }

    /// Part index of arc `head → modifier`, `head ∈ 0..=n`, `modifier ∈ 1..=n`.
    pub fn arc(&self, head: usize, modifier: usize) -> usize {
        head * self.n + (modifier - 1)
    }

    fn arcs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..=self.n).flat_map(move |h| (1..=self.n).filter(move |&m| m != h).map(move |m| (h, m)))
    }

    /// Structure from a head vector; `heads[m-1]` is the head of word `m`.
    pub fn from_heads(&self, heads: &[usize]) -> Structure {
        let active: Vec<usize> = heads
            .iter()
            .enumerate()
            .map(|(i, &h)| self.arc(h, i + 1))
            .collect();
        Structure::from_active(self.part_count(), &active)
    }

    pub fn to_heads(&self, z: &Structure) -> Option<Vec<usize>> {
        if !self.is_valid(z) {
            return None;
        }
        Some(
            (1..=self.n)
                .map(|m| {
                    (0..=self.n)
                        .find(|&h| h != m && z.bits[self.arc(h, m)] == 1)
                        .unwrap()
                })
                .collect(),
        )
    }

    fn heads_acyclic(&self, heads: &[usize]) -> bool {
        (1..=self.n).all(|start| {
            let mut node = start;
            for _ in 0..=self.n {
                if node == 0 {
                    return true;
                }
                node = heads[node - 1];
            }
            false
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    from: usize,
    to: usize,
    weight: f64,
    id: usize,
}

/// Maximum arborescence on nodes `0..nodes` rooted at `root`, by recursive
/// cycle contraction. Returns the ids of the chosen edges.
fn cle_recursive(nodes: usize, root: usize, edges: &[Edge]) -> Vec<usize> {
    let mut best: Vec<Option<Edge>> = vec![None; nodes];
    for e in edges {
        if e.to == root || e.from == e.to {
            continue;
        }
        match best[e.to] {
            Some(b) if b.weight > e.weight || (b.weight == e.weight && b.id < e.id) => {}
            _ => best[e.to] = Some(*e),
        }
    }
    // Find a cycle among the chosen incoming edges.
    let mut color = vec![0u8; nodes];
    let mut cycle: Option<Vec<usize>> = None;
    'outer: for start in 0..nodes {
        if color[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut v = start;
        loop {
            if v == root || color[v] == 2 {
                break;
            }
            if color[v] == 1 {
                let pos = path.iter().position(|&x| x == v).unwrap();
                cycle = Some(path[pos..].to_vec());
                break 'outer;
            }
            color[v] = 1;
            path.push(v);
            match best[v] {
                Some(e) => v = e.from,
                None => break,
            }
        }
        for &p in &path {
            color[p] = 2;
        }
    }
    let Some(cycle) = cycle else {
        return best.iter().flatten().map(|e| e.id).collect();
    };

    let in_cycle: Vec<bool> = (0..nodes).map(|v| cycle.contains(&v)).collect();
    let mut relabel = vec![0; nodes];
    let mut next = 0;
    for v in 0..nodes {
        if !in_cycle[v] {
            relabel[v] = next;
            next += 1;
        }
    }
    let merged = next;
    let mut contracted = Vec::new();
    let mut origin: HashMap<usize, Edge> = HashMap::new();
    for e in edges {
        let (fc, tc) = (in_cycle[e.from], in_cycle[e.to]);
        if fc && tc {
            continue;
        }
        let weight = if tc {
            e.weight - best[e.to].unwrap().weight
        } else {
            e.weight
        };
        contracted.push(Edge {
            from: if fc { merged } else { relabel[e.from] },
            to: if tc { merged } else { relabel[e.to] },
            weight,
            id: e.id,
        });
        origin.insert(e.id, *e);
    }
    let chosen = cle_recursive(merged + 1, relabel[root], &contracted);
    let entering = chosen
        .iter()
        .map(|id| origin[id])
        .find(|e| in_cycle[e.to])
        .expect("contracted node has an incoming edge");
    let mut out = chosen;
    for &v in &cycle {
        if v != entering.to {
            out.push(best[v].unwrap().id);
        }
    }
    out
}

/// Maximum-scoring arborescence rooted at 0 for `n` words.
///
/// `scores` follows the [`Arborescence`] arc layout.
pub fn chu_liu_edmonds(scores: &[f64], n: usize) -> Result<Structure> {
    let d = Arborescence::new(n)?;
    check_len(&d, scores)?;
    let edges: Vec<Edge> = d
        .arcs()
        .map(|(h, m)| Edge {
            from: h,
            to: m,
            weight: scores[d.arc(h, m)],
            id: d.arc(h, m),
        })
        .collect();
    let ids = cle_recursive(n + 1, 0, &edges);
    Ok(Structure::from_active(d.part_count(), &ids))
}

/// Root-augmented Laplacian `L̂` over words, built from shifted arc weights.
fn laplacian(d: &Arborescence, scores: &[f64], shift: f64) -> DMatrix<f64> {
    let n = d.n;
    let mut l = DMatrix::zeros(n, n);
    for (h, m) in d.arcs() {
        let w = (scores[d.arc(h, m)] - shift).exp();
        l[(m - 1, m - 1)] += w;
        if h > 0 {
            l[(h - 1, m - 1)] -= w;
        }
    }
    l
}

fn arc_shift(d: &Arborescence, scores: &[f64]) -> f64 {
    d.arcs()
        .map(|(h, m)| scores[d.arc(h, m)])
        .fold(f64::NEG_INFINITY, f64::max)
}

fn checked_inverse(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sv = l.clone().singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    if !(lo > 0.0) || hi / lo > MAX_LAPLACIAN_CONDITION {
        return Err(Error::Degenerate(format!(
            "Laplacian condition number {:.3e} exceeds {MAX_LAPLACIAN_CONDITION:.0e}",
            hi / lo
        )));
    }
    l.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular Laplacian".into()))
}

/// Arc marginals and log-partition via the matrix-tree theorem.
pub fn matrix_tree_marginals(scores: &[f64], n: usize) -> Result<(MarginalPoint, f64)> {
    let d = Arborescence::new(n)?;
    check_len(&d, scores)?;
    if d.arcs().any(|(h, m)| !scores[d.arc(h, m)].is_finite()) {
        return Err(param_err("scores", "arc scores must be finite"));
    }
    let shift = arc_shift(&d, scores);
    let l = laplacian(&d, scores, shift);
    let inv = checked_inverse(&l)?;
    let logz = l.clone().lu().determinant().ln() + n as f64 * shift;
    let mut mu = vec![0.0; d.part_count()];
    for (h, m) in d.arcs() {
        let p = d.arc(h, m);
        let w = (scores[p] - shift).exp();
        let (mi, hi) = (m - 1, h.wrapping_sub(1));
        mu[p] = if h == 0 {
            w * inv[(mi, mi)]
        } else {
            w * (inv[(mi, mi)] - inv[(mi, hi)])
        };
    }
    Ok((MarginalPoint { mu }, logz))
}

impl StructDomain for Arborescence {
    fn tag(&self) -> &'static str {
        "arborescence"
    }

    fn params(&self) -> serde_json::Value {
        json!({ "n": self.n })
    }

    fn part_count(&self) -> usize {
        (self.n + 1) * self.n
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_marginals: true,
            has_sampler: false,
            has_topk: true,
            enumerable: true,
        }
    }

    fn is_valid(&self, z: &Structure) -> bool {
        if z.len() != self.part_count() || z.bits.iter().any(|&b| b > 1) {
            return false;
        }
        if (1..=self.n).any(|m| z.bits[self.arc(m, m)] == 1) {
            return false;
        }
        let mut heads = Vec::with_capacity(self.n);
        for m in 1..=self.n {
            let hs: Vec<usize> = (0..=self.n)
                .filter(|&h| h != m && z.bits[self.arc(h, m)] == 1)
                .collect();
            if hs.len() != 1 {
                return false;
            }
            heads.push(hs[0]);
        }
        self.heads_acyclic(&heads)
    }

    fn size_estimate(&self) -> f64 {
        (self.n as f64 + 1.0).powi(self.n as i32 - 1)
    }

    fn enumerate_unchecked(&self) -> Vec<Structure> {
        let n = self.n;
        let total = n.pow(n as u32);
        let mut out = Vec::new();
        for mut code in 0..total {
            // Word m picks its head among the n candidates other than itself.
            let heads: Vec<usize> = (1..=n)
                .map(|m| {
                    let c = code % n;
                    code /= n;
                    if c >= m {
                        c + 1
                    } else {
                        c
                    }
                })
                .collect();
            if self.heads_acyclic(&heads) {
                out.push(self.from_heads(&heads));
            }
        }
        out
    }

    fn raw_argmax(&self, s: &[f64]) -> Result<Structure> {
        chu_liu_edmonds(s, self.n)
    }

    fn argmax_is_enumerative(&self) -> bool {
        false
    }

    fn marginals(&self, s: &[f64]) -> Result<(MarginalPoint, f64)> {
        matrix_tree_marginals(s, self.n)
    }

    /// Laplacian assembly and arc products are recorded as linear ops; the
    /// inverse is a single node with pullback `−L̂⁻ᵀ G L̂⁻ᵀ`.
    fn record_marginals(&self, tape: &mut Tape, s: Var) -> Result<Var> {
        let n = self.n;
        let arcs: Vec<(usize, usize)> = self.arcs().collect();
        let idx: Vec<usize> = arcs.iter().map(|&(h, m)| self.arc(h, m)).collect();
        let scores = tape.value(s).data().to_vec();
        if scores.len() != self.part_count() {
            return Err(shape_err(self.part_count(), scores.len()));
        }
        let shift = arc_shift(self, &scores);
        let valid = tape.gather(s, &idx)?;
        let shifted = tape.offset(valid, -shift);
        let w = tape.exp(shifted);

        let mut entries: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n * n];
        for (k, &(h, m)) in arcs.iter().enumerate() {
            entries[(m - 1) * n + (m - 1)].push((k, 1.0));
            if h > 0 {
                entries[(h - 1) * n + (m - 1)].push((k, -1.0));
            }
        }
        let lap = tape.sparse_linear(w, &entries)?;
        let l = DMatrix::from_row_slice(n, n, tape.value(lap).data());
        let inv = checked_inverse(&l)?;
        let inv_t = inv.transpose();
        let inv_rows: Vec<f64> = inv_t.iter().copied().collect();
        let inv_var = tape.custom(
            &[lap],
            Tensor::matrix(n, n, inv_rows)?,
            Box::new(move |g| {
                let gm = DMatrix::from_row_slice(n, n, g);
                let dl = -(&inv_t * gm * &inv_t);
                vec![dl.transpose().iter().copied().collect()]
            }),
            "inverse",
        );
        let coeff: Vec<Vec<(usize, f64)>> = arcs
            .iter()
            .map(|&(h, m)| {
                let diag = (m - 1) * n + (m - 1);
                if h == 0 {
                    vec![(diag, 1.0)]
                } else {
                    vec![(diag, 1.0), ((m - 1) * n + (h - 1), -1.0)]
                }
            })
            .collect();
        let e = tape.sparse_linear(inv_var, &coeff)?;
        let mu_valid = tape.mul(w, e)?;
        let scatter: Vec<Vec<(usize, f64)>> = (0..self.part_count())
            .map(|p| {
                idx.iter()
                    .position(|&q| q == p)
                    .map(|k| vec![(k, 1.0)])
                    .unwrap_or_default()
            })
            .collect();
        tape.sparse_linear(mu_valid, &scatter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{backprop, finite_diff_jacobian, jacobian_from_pullback, Rng, FD_EPS};
    use crate::structures::{enumerate, gibbs_enum, log_partition_enum, ENUM_CAP};

    fn random_scores(rng: &mut Rng, d: &Arborescence) -> Vec<f64> {
        (0..d.part_count())
            .map(|_| rng.uniform_range(-2.0, 2.0))
            .collect()
    }

    #[test]
    fn single_word_attaches_to_root() {
        let z = chu_liu_edmonds(&[0.3, -5.0], 1).unwrap();
        assert_eq!(z.bits, vec![1, 0]);
    }

    #[test]
    fn dominant_chain_for_two_words() {
        let d = Arborescence::new(2).unwrap();
        let mut s = vec![0.0; d.part_count()];
        s[d.arc(0, 1)] = 5.0;
        s[d.arc(1, 2)] = 5.0;
        let z = chu_liu_edmonds(&s, 2).unwrap();
        assert_eq!(d.to_heads(&z).unwrap(), vec![0, 1]);
        // All three candidate trees.
        let all = enumerate(&d, ENUM_CAP).unwrap();
        assert_eq!(all.len(), 3);
        let best = all
            .iter()
            .map(|t| t.score(&s))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(z.score(&s), best);
    }

    #[test]
    fn cle_matches_enumeration_with_cycles() {
        let mut rng = Rng::seed(12);
        for n in 2..=5 {
            let d = Arborescence::new(n).unwrap();
            let all = enumerate(&d, ENUM_CAP).unwrap();
            assert_eq!(all.len(), (n + 1).pow(n as u32 - 1));
            for _ in 0..40 {
                let s = random_scores(&mut rng, &d);
                let z = chu_liu_edmonds(&s, n).unwrap();
                assert!(d.is_valid(&z));
                let best = all
                    .iter()
                    .map(|t| t.score(&s))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((z.score(&s) - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_two_word_marginals() {
        let d = Arborescence::new(2).unwrap();
        let (mu, logz) = matrix_tree_marginals(&vec![0.0; d.part_count()], 2).unwrap();
        assert!((mu.mu[d.arc(0, 1)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((mu.mu[d.arc(0, 2)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((mu.mu[d.arc(1, 2)] - 1.0 / 3.0).abs() < 1e-12);
        assert!((mu.mu[d.arc(2, 1)] - 1.0 / 3.0).abs() < 1e-12);
        assert!((logz - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matrix_tree_matches_enumeration() {
        let mut rng = Rng::seed(13);
        let d = Arborescence::new(3).unwrap();
        for _ in 0..10 {
            let s = random_scores(&mut rng, &d);
            let (mu, logz) = matrix_tree_marginals(&s, 3).unwrap();
            let dist = gibbs_enum(&d, &s).unwrap();
            for (a, b) in mu.mu.iter().zip(dist.mean()) {
                assert!((a - b).abs() < 1e-8);
            }
            assert!((logz - log_partition_enum(&d, &s).unwrap()).abs() < 1e-10);
            for m in 1..=3 {
                let total: f64 = (0..=3)
                    .filter(|&h| h != m)
                    .map(|h| mu.mu[d.arc(h, m)])
                    .sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_laplacian_is_reported() {
        let d = Arborescence::new(2).unwrap();
        let mut s = vec![0.0; d.part_count()];
        // Word-to-word arcs dwarf every root arc: the Laplacian is nearly singular.
        s[d.arc(1, 2)] = 60.0;
        s[d.arc(2, 1)] = 60.0;
        assert!(matches!(
            matrix_tree_marginals(&s, 2),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn recorded_marginals_differentiate() {
        let d = Arborescence::new(3).unwrap();
        let s = random_scores(&mut Rng::seed(14), &d);
        let mut tape = Tape::new();
        let sv = tape.vector(s.clone());
        let mu = d.record_marginals(&mut tape, sv).unwrap();
        let (want, _) = matrix_tree_marginals(&s, 3).unwrap();
        for (a, b) in tape.value(mu).data().iter().zip(&want.mu) {
            assert!((a - b).abs() < 1e-12);
        }
        let p = d.part_count();
        let j = jacobian_from_pullback(|v| backprop(&tape, mu, v).unwrap().wrt(sv), p, p);
        let fd = finite_diff_jacobian(|x| matrix_tree_marginals(x, 3).unwrap().0.mu, &s, FD_EPS)
            .unwrap();
        for (a, b) in j.data().iter().zip(fd.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}
