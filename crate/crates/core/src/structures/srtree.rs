//! Binary trees over `N` leaves encoded as shift-reduce action sequences of
//! length `2N − 1` (shift = 1, reduce = 0).

use serde_json::json;

use super::transition::TransitionModel;
use super::{
    enumerate, marginals_enum, record_marginals_enum, sample_enum, Capabilities, MarginalPoint,
    SparseDist, StructDomain, Structure, ENUM_CAP,
};
use crate::error::{param_err, Error, Result};
use crate::numcore::{Rng, Tape, Var};

/// Largest supported leaf count; `C₁₁ = 58 786` trees.
pub const MAX_LEAVES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryTreeSr {
    n: usize,
}

impl BinaryTreeSr {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(param_err("n", "need at least two leaves"));
        }
        if n > MAX_LEAVES {
            return Err(Error::EnumerationCap {
                estimate: catalan(n - 1),
                cap: ENUM_CAP.min(catalan(MAX_LEAVES - 1) as usize),
            });
        }
        Ok(Self { n })
    }

    pub fn leaves(&self) -> usize {
        self.n
    }

    /// Bracketing such as `((0 1) 2)`; leaves are numbered left to right.
    pub fn bracketing(&self, z: &Structure) -> Option<String> {
        if !self.is_valid(z) {
            return None;
        }
        let mut stack: Vec<String> = Vec::new();
        let mut next = 0;
        for &b in &z.bits {
            if b == 1 {
                stack.push(next.to_string());
                next += 1;
            } else {
                let r = stack.pop()?;
                let l = stack.pop()?;
                stack.push(format!("({l} {r})"));
            }
        }
        stack.pop()
    }
}

fn catalan(k: usize) -> f64 {
    (0..k).fold(1.0, |c, i| c * 2.0 * (2 * i + 1) as f64 / (i + 2) as f64)
}

impl StructDomain for BinaryTreeSr {
    fn tag(&self) -> &'static str {
        "binary_tree_sr"
    }

    fn params(&self) -> serde_json::Value {
        json!({ "n": self.n })
    }

    fn part_count(&self) -> usize {
        2 * self.n - 1
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
        if z.len() != self.part_count() {
            return false;
        }
        let (mut shifts, mut reduces) = (0usize, 0usize);
        for &b in &z.bits {
            match b {
                1 => shifts += 1,
                0 => reduces += 1,
                _ => return false,
            }
            if shifts <= reduces {
                return false;
            }
        }
        shifts == self.n
    }

    fn size_estimate(&self) -> f64 {
        catalan(self.n - 1)
    }

    fn enumerate_unchecked(&self) -> Vec<Structure> {
        fn rec(
            n: usize,
            bits: &mut Vec<u8>,
            shifts: usize,
            stack: usize,
            out: &mut Vec<Structure>,
        ) {
            if bits.len() == 2 * n - 1 {
                out.push(Structure { bits: bits.clone() });
                return;
            }
            if stack >= 2 {
                bits.push(0);
                rec(n, bits, shifts, stack - 1, out);
                bits.pop();
            }
            if shifts < n {
                bits.push(1);
                rec(n, bits, shifts + 1, stack + 1, out);
                bits.pop();
            }
        }
        let mut out = Vec::new();
        rec(self.n, &mut Vec::new(), 0, 0, &mut out);
        out
    }

    fn marginals(&self, s: &[f64]) -> Result<(MarginalPoint, f64)> {
        marginals_enum(self, s)
    }

    fn sample(&self, s: &[f64], rng: &mut Rng) -> Result<Structure> {
        sample_enum(self, s, rng)
    }

    fn record_marginals(&self, tape: &mut Tape, s: Var) -> Result<Var> {
        record_marginals_enum(self, tape, s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SrAction {
    Shift,
    Reduce,
}

/// State of a shift-reduce derivation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrState {
    pub shifts: usize,
    pub stack: usize,
}

/// Shift-reduce parser that shifts with probability `p_shift` whenever both
/// actions are admissible and takes the forced action otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftReduceModel {
    pub n: usize,
    pub p_shift: f64,
}

impl ShiftReduceModel {
    pub fn new(n: usize, p_shift: f64) -> Result<Self> {
        if n < 2 {
            return Err(param_err("n", "need at least two leaves"));
        }
        if !(p_shift > 0.0 && p_shift <= 1.0) {
            return Err(param_err("p_shift", "must lie in (0, 1]"));
        }
        Ok(Self { n, p_shift })
    }
}

impl TransitionModel for ShiftReduceModel {
    type State = SrState;
    type Action = SrAction;

    fn initial(&self) -> SrState {
        SrState {
            shifts: 0,
            stack: 0,
        }
    }

    fn admissible(&self, st: &SrState) -> Vec<SrAction> {
        let mut out = Vec::with_capacity(2);
        if st.shifts < self.n {
            out.push(SrAction::Shift);
        }
        if st.stack >= 2 {
            out.push(SrAction::Reduce);
        }
        out
    }

    fn log_prob(&self, st: &SrState, a: &SrAction) -> f64 {
        let adm = self.admissible(st);
        if !adm.contains(a) {
            return f64::NEG_INFINITY;
        }
        if adm.len() == 1 {
            return 0.0;
        }
        match a {
            SrAction::Shift => self.p_shift.ln(),
            SrAction::Reduce => (1.0 - self.p_shift).ln(),
        }
    }

    fn is_final(&self, st: &SrState) -> bool {
        st.shifts == self.n && st.stack == 1
    }

    fn step(&self, st: &SrState, a: &SrAction) -> SrState {
        match a {
            SrAction::Shift => SrState {
                shifts: st.shifts + 1,
                stack: st.stack + 1,
            },
            SrAction::Reduce => SrState {
                shifts: st.shifts,
                stack: st.stack - 1,
            },
        }
    }
}

/// Exact tree distribution induced by [`ShiftReduceModel`], by exhaustive
/// traversal. The support lists every tree in lexicographic order, including
/// unreachable ones with weight zero.
pub fn sr_tree_distribution(n: usize, p_shift: f64) -> Result<SparseDist> {
    let domain = BinaryTreeSr::new(n)?;
    let model = ShiftReduceModel::new(n, p_shift)?;
    let support = enumerate(&domain, ENUM_CAP)?;
    let weights = support
        .iter()
        .map(|z| {
            let mut st = model.initial();
            let mut lp = 0.0;
            for &b in &z.bits {
                let a = if b == 1 {
                    SrAction::Shift
                } else {
                    SrAction::Reduce
                };
                lp += model.log_prob(&st, &a);
                st = model.step(&st, &a);
            }
            lp.exp()
        })
        .collect();
    Ok(SparseDist { support, weights })
}
