//! Incremental structure prediction: a transition system adds one part per
//! step, with a locally normalized distribution over admissible actions.

use std::collections::HashMap;
use std::fmt::Debug;

use crate::error::{param_err, Error, Result};
use crate::numcore::Rng;

/// A locally normalized transition system.
///
/// For any non-final state the admissible set is non-empty and
/// `Σ_a exp(log_prob(state, a)) = 1` over admissible actions. Actions with
/// zero probability may be admissible; they report `−∞`.
pub trait TransitionModel {
    type State: Clone;
    type Action: Clone + PartialEq + Debug;

    fn initial(&self) -> Self::State;

    fn admissible(&self, state: &Self::State) -> Vec<Self::Action>;

    fn log_prob(&self, state: &Self::State, action: &Self::Action) -> f64;

    fn is_final(&self, state: &Self::State) -> bool;

    fn step(&self, state: &Self::State, action: &Self::Action) -> Self::State;
}

/// Conditionals stored per prefix. A prefix without an entry is final.
#[derive(Debug, Clone, Default)]
pub struct TableModel {
    table: HashMap<Vec<usize>, Vec<f64>>,
}

impl TableModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `p(· | prefix)`; probabilities must be nonnegative and sum to 1.
    pub fn with(mut self, prefix: &[usize], probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(param_err("probs", "must be a probability vector"));
        }
        self.table.insert(prefix.to_vec(), probs.to_vec());
        Ok(self)
    }
}

impl TransitionModel for TableModel {
    type State = Vec<usize>;
    type Action = usize;

    fn initial(&self) -> Vec<usize> {
        Vec::new()
    }

    fn admissible(&self, state: &Vec<usize>) -> Vec<usize> {
        self.table
            .get(state)
            .map_or_else(Vec::new, |p| (0..p.len()).collect())
    }

    fn log_prob(&self, state: &Vec<usize>, action: &usize) -> f64 {
        self.table
            .get(state)
            .and_then(|p| p.get(*action))
            .map_or(f64::NEG_INFINITY, |p| p.ln())
    }

    fn is_final(&self, state: &Vec<usize>) -> bool {
        !self.table.contains_key(state)
    }

    fn step(&self, state: &Vec<usize>, action: &usize) -> Vec<usize> {
        let mut next = state.clone();
        next.push(*action);
        next
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis<A> {
    pub actions: Vec<A>,
    /// Cumulative log-probability.
    pub score: f64,
    /// Whether the hypothesis reached a final state.
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamOptions {
    pub k: usize,
    pub max_len: usize,
    /// Rank by `score / len^x` when set; off by default.
    pub length_norm: Option<f64>,
}

impl BeamOptions {
    pub fn new(k: usize, max_len: usize) -> Self {
        Self {
            k,
            max_len,
            length_norm: None,
        }
    }
}

fn rank_key<A>(h: &Hypothesis<A>, length_norm: Option<f64>) -> f64 {
    match length_norm {
        Some(x) if !h.actions.is_empty() => h.score / (h.actions.len() as f64).powf(x),
        _ => h.score,
    }
}

/// Beam search over cumulative log-probability, best first.
///
/// Ties keep generation order (beam position, then action order). Hypotheses
/// still running when `max_len` is reached come back with `complete = false`.
pub fn beam_search<M: TransitionModel>(
    model: &M,
    opts: BeamOptions,
) -> Result<Vec<Hypothesis<M::Action>>> {
    if opts.k == 0 {
        return Err(param_err("k", "beam width must be at least 1"));
    }
    let init = model.initial();
    let mut beam = vec![(
        Hypothesis {
            actions: Vec::new(),
            score: 0.0,
            complete: model.is_final(&init),
        },
        init,
    )];
    for _ in 0..opts.max_len {
        if beam.iter().all(|(h, _)| h.complete) {
            break;
        }
        let mut next = Vec::new();
        for (h, state) in &beam {
            if h.complete {
                next.push((h.clone(), state.clone()));
                continue;
            }
            for a in model.admissible(state) {
                let lp = model.log_prob(state, &a);
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let s2 = model.step(state, &a);
                let mut actions = h.actions.clone();
                actions.push(a);
                next.push((
                    Hypothesis {
                        actions,
                        score: h.score + lp,
                        complete: model.is_final(&s2),
                    },
                    s2,
                ));
            }
        }
        // Stable sort keeps generation order among equal keys.
        next.sort_by(|(a, _), (b, _)| {
            rank_key(b, opts.length_norm).total_cmp(&rank_key(a, opts.length_norm))
        });
        next.truncate(opts.k);
        beam = next;
    }
    Ok(beam.into_iter().map(|(h, _)| h).collect())
}

/// Draws a complete action sequence from the model's conditionals.
pub fn ancestral_sample<M: TransitionModel>(
    model: &M,
    rng: &mut Rng,
    max_len: usize,
) -> Result<Vec<M::Action>> {
    let mut state = model.initial();
    let mut actions = Vec::new();
    while !model.is_final(&state) {
        if actions.len() >= max_len {
            return Err(Error::IncompleteSample {
                steps: actions.len(),
            });
        }
        let adm = model.admissible(&state);
        let w: Vec<f64> = adm
            .iter()
            .map(|a| model.log_prob(&state, a).exp())
            .collect();
        let a = adm[rng.categorical(&w)].clone();
        state = model.step(&state, &a);
        actions.push(a);
    }
    Ok(actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn two_step() -> TableModel {
        TableModel::new()
            .with(&[], &[0.6, 0.4])
            .unwrap()
            .with(&[0], &[0.5, 0.5])
            .unwrap()
            .with(&[1], &[0.9, 0.1])
            .unwrap()
    }

    #[test]
    fn greedy_and_wider_beams() {
        let m = two_step();
        let greedy = beam_search(&m, BeamOptions::new(1, 10)).unwrap();
        assert_eq!(greedy[0].actions, vec![0, 0]);
        assert!((greedy[0].score.exp() - 0.30).abs() < 1e-12);
        assert!(greedy[0].complete);
        let wide = beam_search(&m, BeamOptions::new(2, 10)).unwrap();
        assert_eq!(wide[0].actions, vec![1, 0]);
        assert!((wide[0].score.exp() - 0.36).abs() < 1e-12);
        // Exhaustive beam lists all four sequences best first.
        let all = beam_search(&m, BeamOptions::new(4, 10)).unwrap();
        let probs: Vec<f64> = all.iter().map(|h| h.score.exp()).collect();
        assert_eq!(all.len(), 4);
        assert!((probs[0] - 0.36).abs() < 1e-12);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_flags_incomplete() {
        let hs = beam_search(&two_step(), BeamOptions::new(2, 1)).unwrap();
        assert!(hs.iter().all(|h| !h.complete && h.actions.len() == 1));
        let err = ancestral_sample(&two_step(), &mut Rng::seed(0), 1).unwrap_err();
        assert_eq!(err, Error::IncompleteSample { steps: 1 });
        assert!(beam_search(&two_step(), BeamOptions::new(0, 3)).is_err());
    }

    #[test]
    fn deterministic_model() {
        let m = TableModel::new()
            .with(&[], &[0.0, 1.0])
            .unwrap()
            .with(&[1], &[1.0])
            .unwrap();
        for k in 1..4 {
            let hs = beam_search(&m, BeamOptions::new(k, 5)).unwrap();
            assert_eq!(hs[0].actions, vec![1, 0]);
        }
        assert_eq!(
            ancestral_sample(&m, &mut Rng::seed(3), 5).unwrap(),
            vec![1, 0]
        );
    }

    #[test]
    fn ancestral_frequencies_match_products() {
        let m = two_step();
        let mut rng = Rng::seed(21);
        let n = 50_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let seq = ancestral_sample(&m, &mut rng, 4).unwrap();
            counts[seq[0] * 2 + seq[1]] += 1;
        }
        let expected = [0.30, 0.30, 0.36, 0.04];
        let stat: f64 = counts
            .iter()
            .zip(expected)
            .map(|(&c, p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        let pval = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
        assert!(pval > 0.001, "p = {pval}");

        let a = ancestral_sample(&m, &mut Rng::seed(5), 4).unwrap();
        let b = ancestral_sample(&m, &mut Rng::seed(5), 4).unwrap();
        assert_eq!(a, b);
    }
}
