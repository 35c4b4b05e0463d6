use serde_json::json;

use super::{check_len, Capabilities, StructDomain, Structure};
use crate::error::{param_err, shape_err, Result};

/// Perfect matchings of an `m×m` bipartite graph (permutation matrices).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    m: usize,
}

impl Assignment {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(param_err("m", "need at least one row"));
        }
        Ok(Self { m })
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn from_permutation(&self, perm: &[usize]) -> Structure {
        let active: Vec<usize> = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| i * self.m + j)
            .collect();
        Structure::from_active(self.m * self.m, &active)
    }

    /// Column matched to each row.
    pub fn to_permutation(&self, z: &Structure) -> Option<Vec<usize>> {
        if !self.is_valid(z) {
            return None;
        }
        Some(
            (0..self.m)
                .map(|i| (0..self.m).find(|&j| z.bits[i * self.m + j] == 1).unwrap())
                .collect(),
        )
    }
}

/// Maximum-weight perfect matching by the O(m³) shortest augmenting path
/// method with row and column potentials.
///
/// `scores` is `m×m`, row-major. Returns the permutation structure and its value.
pub fn kuhn_munkres(scores: &[f64], m: usize) -> Result<(Structure, f64)> {
    if scores.len() != m * m {
        return Err(shape_err(m * m, scores.len()));
    }
    if scores.iter().any(|x| !x.is_finite()) {
        return Err(param_err("scores", "must be finite"));
    }
    let cost = |i: usize, j: usize| -scores[i * m + j];
    // 1-based rows and columns; column 0 is the virtual start.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; m];
    for j in 1..=m {
        perm[row_of[j] - 1] = j - 1;
    }
    let value = perm
        .iter()
        .enumerate()
        .map(|(i, &j)| scores[i * m + j])
        .sum();
    Ok((Assignment { m }.from_permutation(&perm), value))
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                prefix.push(j);
                rec(prefix, used, out);
                prefix.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; m], &mut out);
    out
}

impl StructDomain for Assignment {
    fn tag(&self) -> &'static str {
        "assignment"
    }

    fn params(&self) -> serde_json::Value {
        json!({ "m": self.m })
    }

    fn part_count(&self) -> usize {
        self.m * self.m
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            has_marginals: false,
            has_sampler: false,
            has_topk: true,
            enumerable: true,
        }
    }

    fn is_valid(&self, z: &Structure) -> bool {
        let m = self.m;
        z.len() == m * m
            && z.bits.iter().all(|&b| b <= 1)
            && (0..m).all(|i| (0..m).map(|j| z.bits[i * m + j] as usize).sum::<usize>() == 1)
            && (0..m).all(|j| (0..m).map(|i| z.bits[i * m + j] as usize).sum::<usize>() == 1)
    }

    fn size_estimate(&self) -> f64 {
        (1..=self.m).map(|k| k as f64).product()
    }

    fn enumerate_unchecked(&self) -> Vec<Structure> {
        permutations(self.m)
            .iter()
            .map(|p| self.from_permutation(p))
            .collect()
    }

    fn raw_argmax(&self, s: &[f64]) -> Result<Structure> {
        check_len(self, s)?;
        Ok(kuhn_munkres(s, self.m)?.0)
    }

    fn argmax_is_enumerative(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn small_cases() {
        let (z, v) = kuhn_munkres(&[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(z.bits, vec![1, 0, 0, 1]);
        assert_eq!(v, 2.0);
        let (z, v) = kuhn_munkres(&[0.0, 1.0, 1.0, 0.0], 2).unwrap();
        assert_eq!(z.bits, vec![0, 1, 1, 0]);
        assert_eq!(v, 2.0);
        let mut s = vec![0.1; 9];
        for i in 0..3 {
            s[i * 3 + i] = 5.0;
        }
        let a = Assignment::new(3).unwrap();
        assert_eq!(
            a.to_permutation(&kuhn_munkres(&s, 3).unwrap().0).unwrap(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = Rng::seed(8);
        let a = Assignment::new(4).unwrap();
        for _ in 0..50 {
            let s: Vec<f64> = (0..16).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
            let (_, v) = kuhn_munkres(&s, 4).unwrap();
            let best = permutations(4)
                .iter()
                .map(|p| {
                    p.iter()
                        .enumerate()
                        .map(|(i, &j)| s[i * 4 + j])
                        .sum::<f64>()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((v - best).abs() < 1e-12);
            assert!(a.is_valid(&a.argmax(&s).unwrap()));
        }
    }
}
