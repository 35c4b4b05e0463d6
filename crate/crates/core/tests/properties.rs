//! Cross-module invariants over random scores.

use latstruct::numcore::Rng;
use latstruct::relax::{
    marginal_layer, sinkhorn, sparsemap, Noise, SinkhornOptions, SparseMapOptions,
};
use latstruct::simplex::{entmax_layer, softmax_layer, sparsemax_layer};
use latstruct::structures::{
    argmax_oracle, Arborescence, Assignment, BinaryTreeSr, BitVector, LinearChain, OneOfK,
    StructDomain,
};
use latstruct::surrogate::{imle, linear_interp, spigot, ste};
use proptest::prelude::*;

fn scores(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0..4.0f64, n)
}

fn domains() -> Vec<Box<dyn StructDomain>> {
    vec![
        Box::new(OneOfK::new(4)),
        Box::new(BitVector::new(3)),
        Box::new(LinearChain::new(3, 3).unwrap()),
        Box::new(Assignment::new(3).unwrap()),
        Box::new(Arborescence::new(3).unwrap()),
        Box::new(BinaryTreeSr::new(4).unwrap()),
    ]
}

/// Forward outputs of the rng-free and noisy surrogates on one domain.
fn surrogates_valid<D: StructDomain + Clone + 'static>(d: D, eta: f64, rng: &mut Rng) -> bool {
    let s = rng.normal_vec(d.part_count());
    d.is_valid(&linear_interp(&d, &s, eta).unwrap().value)
        && d.is_valid(&imle(&d, &s, eta, 1.0, Noise::Gumbel, rng).unwrap().value)
        && d.is_valid(
            &spigot(&d, &s, eta, SparseMapOptions::default())
                .unwrap()
                .value,
        )
}

fn lincomb(a: f64, x: &[f64], b: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decoders_return_valid_structures(seed in any::<u64>(), eta in 0.1..2.0f64) {
        let mut rng = Rng::seed(seed);
        for d in domains() {
            let s = rng.normal_vec(d.part_count());
            prop_assert!(d.is_valid(&argmax_oracle(d.as_ref(), &s).unwrap()));
            prop_assert!(d.is_valid(&ste(d.as_ref(), &s).unwrap().value));
            if d.capabilities().has_sampler {
                prop_assert!(d.is_valid(&d.sample(&s, &mut rng).unwrap()));
            }
        }
        prop_assert!(surrogates_valid(OneOfK::new(4), eta, &mut rng));
        prop_assert!(surrogates_valid(BitVector::new(3), eta, &mut rng));
        prop_assert!(surrogates_valid(LinearChain::new(3, 3).unwrap(), eta, &mut rng));
        prop_assert!(surrogates_valid(Assignment::new(3).unwrap(), eta, &mut rng));
        prop_assert!(surrogates_valid(Arborescence::new(3).unwrap(), eta, &mut rng));
        prop_assert!(surrogates_valid(BinaryTreeSr::new(4).unwrap(), eta, &mut rng));
    }

    #[test]
    fn chain_marginals_are_consistent_flows(s in scores(2 * 9)) {
        let (t, d) = (3, LinearChain::new(3, 3).unwrap());
        let mu = d.marginals(&s).unwrap().0.mu;
        prop_assert!(mu.iter().all(|&m| (-1e-12..=1.0 + 1e-12).contains(&m)));
        prop_assert!((mu[..9].iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Mass entering tag b at the middle position equals mass leaving it.
        for b in 0..t {
            let incoming: f64 = (0..t).map(|a| mu[a * t + b]).sum();
            let outgoing: f64 = (0..t).map(|c| mu[9 + b * t + c]).sum();
            prop_assert!((incoming - outgoing).abs() < 1e-9);
        }
    }

    #[test]
    fn arborescence_marginals_give_one_head_per_word(s in scores(4 * 3)) {
        let n = 3;
        let mu = Arborescence::new(n).unwrap().marginals(&s).unwrap().0.mu;
        for m in 0..n {
            prop_assert!(mu[(m + 1) * n + m].abs() < 1e-12, "self-loop slot carries mass");
            let heads: f64 = (0..=n).map(|h| mu[h * n + m]).sum();
            prop_assert!((heads - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sinkhorn_is_doubly_stochastic_and_row_shift_invariant(
        s in scores(16), row in 0usize..4, c in -3.0..3.0f64
    ) {
        let m = 4;
        let p = sinkhorn(&s, m, SinkhornOptions::default()).unwrap().value;
        let data = p.matrix.data();
        for i in 0..m {
            let r: f64 = data[i * m..(i + 1) * m].iter().sum();
            let col: f64 = (0..m).map(|j| data[j * m + i]).sum();
            prop_assert!((r - 1.0).abs() < 1e-7 && (col - 1.0).abs() < 1e-7);
        }
        let mut shifted = s.clone();
        shifted[row * m..(row + 1) * m].iter_mut().for_each(|x| *x += c);
        let q = sinkhorn(&shifted, m, SinkhornOptions::default()).unwrap().value;
        prop_assert!(max_abs_diff(data, q.matrix.data()) < 1e-7);
    }

    #[test]
    fn sparsemap_witness_reproduces_solution(seed in any::<u64>()) {
        let mut rng = Rng::seed(seed);
        for d in domains() {
            let s = rng.normal_vec(d.part_count());
            let sol = sparsemap(d.as_ref(), &s, SparseMapOptions::default()).unwrap().value;
            let dist = &sol.active.dist;
            prop_assert!(dist.is_valid(1e-9));
            prop_assert!(dist.len() <= d.part_count() + 1);
            prop_assert!(max_abs_diff(&dist.mean(), &sol.mu.mu) < 1e-7);
            prop_assert!(dist.support.iter().all(|z| d.is_valid(z)));
            prop_assert!(sol.active.objective.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        }
    }

    #[test]
    fn exact_pullbacks_are_linear(
        seed in any::<u64>(), a in -2.0..2.0f64, b in -2.0..2.0f64
    ) {
        let mut rng = Rng::seed(seed);
        let check = |pb: &dyn Fn(&[f64]) -> Vec<f64>, v1: &[f64], v2: &[f64]| {
            let lhs = pb(&lincomb(a, v1, b, v2));
            let rhs = lincomb(a, &pb(v1), b, &pb(v2));
            max_abs_diff(&lhs, &rhs)
        };
        let s = rng.normal_vec(6);
        let (v1, v2) = (rng.normal_vec(6), rng.normal_vec(6));
        let softmax = softmax_layer(&s).unwrap();
        prop_assert!(check(&|v| softmax.pullback(v).unwrap(), &v1, &v2) < 1e-10);
        let sparsemax = sparsemax_layer(&s).unwrap();
        prop_assert!(check(&|v| sparsemax.pullback(v).unwrap(), &v1, &v2) < 1e-10);
        let entmax = entmax_layer(&s, 1.5).unwrap();
        prop_assert!(check(&|v| entmax.pullback(v).unwrap(), &v1, &v2) < 1e-10);
        for d in domains().into_iter().filter(|d| d.capabilities().has_marginals) {
            let n = d.part_count();
            let s = rng.normal_vec(n);
            let (v1, v2) = (rng.normal_vec(n), rng.normal_vec(n));
            let layer = marginal_layer(d.as_ref(), &s).unwrap();
            prop_assert!(check(&|v| layer.pullback(v).unwrap(), &v1, &v2) < 1e-10);
        }
    }

    #[test]
    fn equal_seeds_give_equal_streams(seed in any::<u64>()) {
        let (mut a, mut b) = (Rng::seed(seed), Rng::seed(seed));
        let draw = |r: &mut Rng| {
            let mut child = r.split();
            let mut v = r.normal_vec(8);
            v.extend(child.gumbel_vec(8));
            v.push(r.below(1000) as f64);
            v.into_iter().map(f64::to_bits).collect::<Vec<_>>()
        };
        prop_assert_eq!(draw(&mut a), draw(&mut b));
    }
}
