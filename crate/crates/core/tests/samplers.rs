//! Every structure sampler against its enumerated Gibbs distribution.

use latstruct::numcore::Rng;
use latstruct::structures::{
    gibbs_enum, BinaryTreeSr, BitVector, LinearChain, OneOfK, StructDomain,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn goodness_of_fit(d: &dyn StructDomain, seed: u64) -> f64 {
    let mut rng = Rng::seed(seed);
    let s = rng.normal_vec(d.part_count());
    let dist = gibbs_enum(d, &s).unwrap();
    let n = 50_000;
    let mut counts = vec![0usize; dist.len()];
    for _ in 0..n {
        let z = d.sample(&s, &mut rng).unwrap();
        counts[dist.support.iter().position(|x| *x == z).unwrap()] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&dist.weights)
        .map(|(&c, p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
        .sum();
    1.0 - ChiSquared::new((dist.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn samplers_follow_gibbs_distributions() {
    let domains: Vec<Box<dyn StructDomain>> = vec![
        Box::new(OneOfK::new(5)),
        Box::new(BitVector::new(3)),
        Box::new(LinearChain::new(2, 2).unwrap()),
        Box::new(LinearChain::new(3, 3).unwrap()),
        Box::new(BinaryTreeSr::new(4).unwrap()),
    ];
    for (i, d) in domains.iter().enumerate() {
        assert!(d.size_estimate() <= 32.0);
        let p = goodness_of_fit(d.as_ref(), 100 + i as u64);
        assert!(p > 0.001, "{}: p = {p}", d.tag());
    }
}
