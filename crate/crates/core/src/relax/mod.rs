//! Continuous relaxations of structured maximization.
//!
//! Each layer maps part scores to a point of the marginal polytope (or, for
//! Sinkhorn, the Birkhoff polytope) and carries a pullback:
//! - [`marginal_layer`]: Gibbs expectation, differentiated through the
//!   recorded inference recursions.
//! - [`sinkhorn`]: entropic assignment by alternating log-space normalization.
//! - [`sparsemap`]: Euclidean projection onto `conv(Z)` by an active-set
//!   method that only queries the maximization oracle.
//! - [`perturbed_argmax`]: Monte Carlo mean of noisy maximizers.

mod perturbed;
mod sinkhorn;
mod sparsemap;

pub use perturbed::{perturbed_argmax, Noise, PerturbedOptions, PerturbedPullback};
pub use sinkhorn::{sinkhorn, SinkhornOptions, SinkhornResult};
pub(crate) use sparsemap::bordered_solve;
pub use sparsemap::{sparsemap, ActiveSet, SparseMapInit, SparseMapOptions, SparseMapSolution};

use crate::error::Result;
use crate::numcore::{backprop, DiffValue, Tape};
use crate::structures::{check_len, MarginalPoint, StructDomain};

/// Gibbs marginals `E[Z]` with the exact pullback.
///
/// The domain's inference is recorded on a private tape; the pullback replays
/// it in reverse.
pub fn marginal_layer<D: StructDomain + ?Sized>(
    d: &D,
    s: &[f64],
) -> Result<DiffValue<MarginalPoint>> {
    check_len(d, s)?;
    if !d.capabilities().has_marginals {
        return Err(d.unsupported("marginal inference"));
    }
    let mut tape = Tape::new();
    let input = tape.vector(s.to_vec());
    let out = d.record_marginals(&mut tape, input)?;
    let mu = tape.value(out).data().to_vec();
    let parts = s.len();
    Ok(DiffValue::exact(
        MarginalPoint { mu },
        parts,
        parts,
        move |v| {
            backprop(&tape, out, v)
                .expect("cotangent length checked by DiffValue")
                .wrt(input)
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{
        finite_diff_jacobian, jacobian_error, jacobian_from_pullback, Rng, FD_EPS,
    };
    use crate::simplex::softmax;
    use crate::structures::{
        Arborescence, Assignment, BinaryTreeSr, BitVector, LinearChain, OneOfK,
    };

    fn check_domain<D: StructDomain>(d: &D, rng: &mut Rng) {
        let p = d.part_count();
        for _ in 0..10 {
            let s: Vec<f64> = (0..p).map(|_| rng.uniform_range(-1.5, 1.5)).collect();
            let layer = marginal_layer(d, &s).unwrap();
            let (mu, _) = d.marginals(&s).unwrap();
            for (a, b) in layer.value.mu.iter().zip(&mu.mu) {
                assert!((a - b).abs() < 1e-10);
            }
            let j = jacobian_from_pullback(|v| layer.pullback(v).unwrap(), p, p);
            let fd = finite_diff_jacobian(|x| d.marginals(x).unwrap().0.mu, &s, FD_EPS).unwrap();
            assert!(jacobian_error(&j, &fd) < 1e-4, "{}", d.tag());
        }
    }

    #[test]
    fn one_of_k_is_softmax() {
        let s = [0.2, 1.3, -0.7, 0.0];
        let layer = marginal_layer(&OneOfK::new(4), &s).unwrap();
        let p = softmax(&s).unwrap();
        for (a, b) in layer.value.mu.iter().zip(&p.probs) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_chain_scores_give_uniform_marginals() {
        let d = LinearChain::new(3, 2).unwrap();
        let layer = marginal_layer(&d, &[0.0; 8]).unwrap();
        assert!(layer.value.mu.iter().all(|m| (m - 0.25).abs() < 1e-12));
    }

    #[test]
    fn pullbacks_match_finite_differences() {
        let mut rng = Rng::seed(40);
        check_domain(&OneOfK::new(5), &mut rng);
        check_domain(&BitVector::new(4), &mut rng);
        check_domain(&LinearChain::new(3, 2).unwrap(), &mut rng);
        check_domain(&LinearChain::new(4, 3).unwrap(), &mut rng);
        check_domain(&Arborescence::new(3).unwrap(), &mut rng);
        check_domain(&BinaryTreeSr::new(4).unwrap(), &mut rng);
    }

    #[test]
    fn assignment_has_no_marginal_layer() {
        let a = Assignment::new(2).unwrap();
        assert!(marginal_layer(&a, &[0.0; 4]).is_err());
    }
}
