//! Exact distribution over binary trees induced by a shift-reduce policy
//! with a constant shift probability.

use serde::{Deserialize, Serialize};

use latstruct::structures::{sr_tree_distribution, BinaryTreeSr};

use crate::error::Result;
use crate::output::{num, Artifact, Table, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeSkewConfig {
    pub leaves: usize,
    pub p_shift: f64,
}

impl Default for TreeSkewConfig {
    fn default() -> Self {
        Self {
            leaves: 5,
            p_shift: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeRow {
    pub bracketing: String,
    /// Action string, `S` for shift and `R` for reduce.
    pub actions: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeSkewReport {
    pub schema_version: u32,
    pub config: TreeSkewConfig,
    pub trees: Vec<TreeRow>,
    /// Probability of the most likely tree.
    pub skew: f64,
    pub total: f64,
}

impl Artifact for TreeSkewReport {
    fn table(&self) -> Table {
        let mut t = Table::new(&["bracketing", "actions", "probability"]);
        for r in &self.trees {
            t.push(vec![
                r.bracketing.clone(),
                r.actions.clone(),
                num(r.probability),
            ]);
        }
        t
    }

    fn passed(&self) -> bool {
        (self.total - 1.0).abs() <= 1e-12
    }
}

pub fn run(cfg: &TreeSkewConfig) -> Result<TreeSkewReport> {
    let domain = BinaryTreeSr::new(cfg.leaves)?;
    let dist = sr_tree_distribution(cfg.leaves, cfg.p_shift)?;
    let trees: Vec<TreeRow> = dist
        .support
        .iter()
        .zip(&dist.weights)
        .map(|(z, &p)| TreeRow {
            bracketing: domain.bracketing(z).unwrap_or_default(),
            actions: z
                .bits
                .iter()
                .map(|&b| if b == 1 { 'S' } else { 'R' })
                .collect(),
            probability: p,
        })
        .collect();
    Ok(TreeSkewReport {
        schema_version: SCHEMA_VERSION,
        config: *cfg,
        skew: trees.iter().map(|t| t.probability).fold(0.0, f64::max),
        total: trees.iter().map(|t| t.probability).sum(),
        trees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_leaves_uniform() {
        let r = run(&TreeSkewConfig {
            leaves: 3,
            p_shift: 0.5,
        })
        .unwrap();
        assert_eq!(r.trees.len(), 2);
        assert!(r.trees.iter().all(|t| (t.probability - 0.5).abs() < 1e-15));
        assert!(r.trees.iter().all(|t| t.actions.len() == 5));
    }

    #[test]
    fn over_cap_is_config_error() {
        let err = run(&TreeSkewConfig {
            leaves: 13,
            p_shift: 0.5,
        })
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
