use crate::error::{param_err, shape_err, Result};
use crate::numcore::{argmax_first, DiffValue, Rng};
use crate::simplex::{softmax, softmax_pullback, SimplexPoint};
use crate::structures::{check_len, StructDomain, Structure};

fn check_finite(s: &[f64]) -> Result<()> {
    if s.is_empty() {
        return Err(param_err("s", "need at least one score"));
    }
    if s.iter().any(|x| !x.is_finite()) {
        return Err(param_err("s", "scores must be finite"));
    }
    Ok(())
}

fn check_temperature(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(param_err("gamma", "temperature must be positive"));
    }
    Ok(())
}

/// One-hot `argmax(s + U)` with `U` i.i.d. standard Gumbel: an exact draw
/// from `softmax(s)`.
pub fn gumbel_max_sample(s: &[f64], rng: &mut Rng) -> Result<Structure> {
    check_finite(s)?;
    let u = rng.gumbel_vec(s.len());
    let perturbed: Vec<f64> = s.iter().zip(&u).map(|(a, b)| a + b).collect();
    Ok(Structure::from_active(s.len(), &[argmax_first(&perturbed)]))
}

/// `softmax((s + u)/γ)` for a given noise vector, with the path derivative
/// with respect to `s`.
pub fn gumbel_softmax_with_noise(
    s: &[f64],
    u: &[f64],
    gamma: f64,
) -> Result<DiffValue<SimplexPoint>> {
    check_finite(s)?;
    check_temperature(gamma)?;
    if u.len() != s.len() {
        return Err(shape_err(s.len(), u.len()));
    }
    let scaled: Vec<f64> = s.iter().zip(u).map(|(a, b)| (a + b) / gamma).collect();
    let p = softmax(&scaled)?;
    let keep = p.clone();
    let n = s.len();
    Ok(DiffValue::exact(p, n, n, move |v| {
        softmax_pullback(&keep, v)
            .into_iter()
            .map(|x| x / gamma)
            .collect()
    }))
}

/// Concrete relaxation `softmax((s + U)/γ)` with fresh Gumbel noise.
pub fn gumbel_softmax(s: &[f64], gamma: f64, rng: &mut Rng) -> Result<DiffValue<SimplexPoint>> {
    check_finite(s)?;
    let u = rng.gumbel_vec(s.len());
    gumbel_softmax_with_noise(s, &u, gamma)
}

/// Forward `argmax(s + U)`, backward through `softmax((s + U)/γ)` at the same
/// noise.
pub fn st_gumbel(s: &[f64], gamma: f64, rng: &mut Rng) -> Result<DiffValue<Structure>> {
    check_finite(s)?;
    let u = rng.gumbel_vec(s.len());
    let relaxed = gumbel_softmax_with_noise(s, &u, gamma)?;
    let perturbed: Vec<f64> = s.iter().zip(&u).map(|(a, b)| a + b).collect();
    let z = Structure::from_active(s.len(), &[argmax_first(&perturbed)]);
    let n = s.len();
    Ok(DiffValue::surrogate(z, n, n, move |v| {
        relaxed
            .pullback(v)
            .expect("cotangent length checked by DiffValue")
    }))
}

/// `argmax(s + σU)` with i.i.d. Gumbel noise on every part. Valid, but not
/// Gibbs-distributed outside one-of-K.
pub fn perturb_and_map<D: StructDomain + ?Sized>(
    d: &D,
    s: &[f64],
    noise_scale: f64,
    rng: &mut Rng,
) -> Result<Structure> {
    check_len(d, s)?;
    if !(noise_scale >= 0.0) {
        return Err(param_err("noise_scale", "must be nonnegative"));
    }
    if noise_scale == 0.0 {
        return d.argmax(s);
    }
    let u = rng.gumbel_vec(s.len());
    let perturbed: Vec<f64> = s.iter().zip(&u).map(|(a, b)| a + noise_scale * b).collect();
    d.raw_argmax(&perturbed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_diff_jacobian, jacobian_from_pullback, FD_EPS};
    use crate::structures::{enumerate, LinearChain, OneOfK, ENUM_CAP};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn chi_square_p(counts: &[usize], probs: &[f64]) -> f64 {
        let n: usize = counts.iter().sum();
        let stat: f64 = counts
            .iter()
            .zip(probs)
            .map(|(&c, p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        1.0 - ChiSquared::new((counts.len() - 1) as f64)
            .unwrap()
            .cdf(stat)
    }

    #[test]
    fn gumbel_max_follows_softmax() {
        let s = [0.0, 2f64.ln(), 3f64.ln()];
        let mut rng = Rng::seed(90);
        let mut counts = [0usize; 3];
        for _ in 0..60_000 {
            counts[gumbel_max_sample(&s, &mut rng).unwrap().active()[0]] += 1;
        }
        assert!(chi_square_p(&counts, &[1.0 / 6.0, 1.0 / 3.0, 0.5]) > 0.001);
        assert_eq!(gumbel_max_sample(&[0.3], &mut rng).unwrap().bits, vec![1]);
        let a = gumbel_max_sample(&s, &mut Rng::seed(4)).unwrap();
        assert_eq!(a, gumbel_max_sample(&s, &mut Rng::seed(4)).unwrap());
    }

    #[test]
    fn gumbel_softmax_properties() {
        let s = [0.5, -1.0, 2.0];
        let mut rng = Rng::seed(91);
        for _ in 0..200 {
            let p = gumbel_softmax(&s, 1.0, &mut rng).unwrap().value;
            assert!(p.probs.iter().all(|&x| x > 0.0 && x < 1.0));
            assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let hot = gumbel_softmax(&s, 100.0, &mut rng).unwrap().value;
            assert!(hot.probs.iter().all(|x| (x - 1.0 / 3.0).abs() < 0.05));
        }
        let u = rng.gumbel_vec(3);
        let layer = gumbel_softmax_with_noise(&s, &u, 0.5).unwrap();
        let j = jacobian_from_pullback(|v| layer.pullback(v).unwrap(), 3, 3);
        let fd = finite_diff_jacobian(
            |x| gumbel_softmax_with_noise(x, &u, 0.5).unwrap().value.probs,
            &s,
            FD_EPS,
        )
        .unwrap();
        for (a, b) in j.data().iter().zip(fd.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn st_gumbel_forward_law_and_pullback() {
        let s = [0.2, -0.5, 0.9, 0.0, 0.4];
        let want = softmax(&s).unwrap().probs;
        for gamma in [0.1, 1.0, 10.0] {
            let mut rng = Rng::seed(92);
            let mut counts = [0usize; 5];
            for _ in 0..60_000 {
                let layer = st_gumbel(&s, gamma, &mut rng).unwrap();
                counts[layer.value.active()[0]] += 1;
            }
            assert!(chi_square_p(&counts, &want) > 0.001);
        }
        let layer = st_gumbel(&s, 0.7, &mut Rng::seed(5)).unwrap();
        assert!(OneOfK::new(5).is_valid(&layer.value));
        assert!(layer
            .pullback(&[1.0; 5])
            .unwrap()
            .iter()
            .all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn perturb_and_map_cases() {
        let s = [0.1, 0.7, -0.3];
        let a = perturb_and_map(&OneOfK::new(3), &s, 1.0, &mut Rng::seed(6)).unwrap();
        let b = gumbel_max_sample(&s, &mut Rng::seed(6)).unwrap();
        assert_eq!(a, b);

        let d = LinearChain::new(2, 2).unwrap();
        let s = [0.3, -0.2, 0.5, 0.1];
        assert_eq!(
            perturb_and_map(&d, &s, 0.0, &mut Rng::seed(7)).unwrap(),
            d.argmax(&s).unwrap()
        );
        let all = enumerate(&d, ENUM_CAP).unwrap();
        let mut seen = vec![false; all.len()];
        let mut rng = Rng::seed(8);
        for _ in 0..2000 {
            let z = perturb_and_map(&d, &s, 1.0, &mut rng).unwrap();
            assert!(d.is_valid(&z));
            seen[all.iter().position(|x| *x == z).unwrap()] = true;
        }
        assert!(seen.iter().all(|&x| x));
    }
}
