//! Soft and hard alignment between two token-embedding lists with scores
//! `S_ij = ⟨h_i, h′_j⟩`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use latstruct::numcore::Rng;
use latstruct::relax::{sinkhorn, sparsemap, SinkhornOptions, SparseMapOptions};
use latstruct::structures::{kuhn_munkres, Assignment};

use crate::error::{config_err, Result};
use crate::output::{num, Artifact, Table, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    /// Tokens per list, for synthetic input.
    pub tokens: usize,
    /// Embedding dimension, for synthetic input.
    pub dim: usize,
    /// The second list is the first plus this much Gaussian noise.
    pub noise: f64,
    /// Sinkhorn temperature.
    pub gamma: f64,
    /// Sinkhorn iteration budget.
    pub max_iter: usize,
    /// JSON file `{"left": [[..]], "right": [[..]]}` replacing synthetic input.
    pub input: Option<PathBuf>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            tokens: 5,
            dim: 8,
            noise: 0.5,
            gamma: 1.0,
            max_iter: 1000,
            input: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embeddings {
    pub left: Vec<Vec<f64>>,
    pub right: Vec<Vec<f64>>,
}

impl Embeddings {
    /// Entries `N(0, 1/dim)`, so inner products stay of order one.
    pub fn synthetic(tokens: usize, dim: usize, noise: f64, rng: &mut Rng) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let left: Vec<Vec<f64>> = (0..tokens)
            .map(|_| rng.normal_vec(dim).into_iter().map(|x| scale * x).collect())
            .collect();
        let right = left
            .iter()
            .map(|h| h.iter().map(|x| x + noise * scale * rng.normal()).collect())
            .collect();
        Self { left, right }
    }

    /// Row-major `m×m` inner products.
    pub fn scores(&self) -> Result<Vec<f64>> {
        let m = self.left.len();
        if m == 0 || self.right.len() != m {
            return Err(config_err(format!(
                "need two non-empty lists of equal length, got {} and {}",
                self.left.len(),
                self.right.len()
            )));
        }
        let dim = self.left[0].len();
        if self.left.iter().chain(&self.right).any(|h| h.len() != dim) {
            return Err(config_err("all embeddings must share one dimension"));
        }
        let mut s = Vec::with_capacity(m * m);
        for a in &self.left {
            for b in &self.right {
                s.push(a.iter().zip(b).map(|(x, y)| x * y).sum());
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SinkhornOutput {
    pub matrix: Vec<Vec<f64>>,
    pub iterations: usize,
    pub deviation: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparseMapOutput {
    pub matrix: Vec<Vec<f64>>,
    /// Permutations with nonzero weight in the solver's witness.
    pub support_size: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardOutput {
    /// Column matched to each row.
    pub permutation: Vec<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchReport {
    pub schema_version: u32,
    pub seed: u64,
    pub tokens: usize,
    pub scores: Vec<Vec<f64>>,
    pub sinkhorn: SinkhornOutput,
    pub sparsemap: SparseMapOutput,
    pub hard: HardOutput,
}

impl Artifact for MatchReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&["method", "row", "col", "value"]);
        for (name, mat) in [
            ("sinkhorn", &self.sinkhorn.matrix),
            ("sparsemap", &self.sparsemap.matrix),
        ] {
            for (i, row) in mat.iter().enumerate() {
                for (j, &x) in row.iter().enumerate() {
                    t.push(vec![name.into(), i.to_string(), j.to_string(), num(x)]);
                }
            }
        }
        for (i, &j) in self.hard.permutation.iter().enumerate() {
            t.push(vec![
                "hard".into(),
                i.to_string(),
                j.to_string(),
                "1".into(),
            ]);
        }
        t
    }

    fn passed(&self) -> bool {
        let m = self.tokens;
        self.sinkhorn.deviation <= 1e-7 && self.sparsemap.support_size <= m * m + 1
    }
}

fn rows(flat: &[f64], m: usize) -> Vec<Vec<f64>> {
    flat.chunks(m).map(<[f64]>::to_vec).collect()
}

pub fn run(cfg: &MatchConfig, seed: u64) -> Result<MatchReport> {
    if !(cfg.gamma > 0.0) {
        return Err(config_err("gamma must be positive"));
    }
    let emb = match &cfg.input {
        Some(path) => {
            let bytes =
                std::fs::read(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            serde_json::from_slice::<Embeddings>(&bytes)
                .map_err(|e| config_err(format!("{}: {e}", path.display())))?
        }
        None => {
            if cfg.tokens == 0 || cfg.dim == 0 {
                return Err(config_err("tokens and dim must be positive"));
            }
            Embeddings::synthetic(cfg.tokens, cfg.dim, cfg.noise, &mut Rng::seed(seed))
        }
    };
    let opts = SinkhornOptions {
        gamma: cfg.gamma,
        max_iter: cfg.max_iter,
        ..Default::default()
    };
    run_on(&emb, opts, seed)
}

/// Both relaxations and the hard matching for explicit embeddings.
pub fn run_on(emb: &Embeddings, opts: SinkhornOptions, seed: u64) -> Result<MatchReport> {
    let s = emb.scores()?;
    let m = emb.left.len();
    let sk = sinkhorn(&s, m, opts)?.value;
    let domain = Assignment::new(m)?;
    let sm = sparsemap(&domain, &s, SparseMapOptions::default())?.value;
    let (hard, score) = kuhn_munkres(&s, m)?;
    let permutation = domain
        .to_permutation(&hard)
        .expect("Kuhn-Munkres returns a permutation");
    Ok(MatchReport {
        schema_version: SCHEMA_VERSION,
        seed,
        tokens: m,
        scores: rows(&s, m),
        sinkhorn: SinkhornOutput {
            matrix: rows(sk.matrix.data(), m),
            iterations: sk.iterations,
            deviation: sk.deviation,
            converged: sk.converged,
        },
        sparsemap: SparseMapOutput {
            matrix: rows(&sm.mu.mu, m),
            support_size: sm.active.dist.len(),
            converged: sm.active.converged,
        },
        hard: HardOutput { permutation, score },
    })
}
