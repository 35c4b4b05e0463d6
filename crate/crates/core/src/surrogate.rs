//! Surrogate-gradient layers: the forward pass stays discrete and the backward
//! pass is a constructed rule rather than a derivative.
//!
//! Every layer here returns a [`DiffValue`] tagged [`GradKind::Surrogate`];
//! [`record`] puts one on a tape as an opaque node so gradient checks skip it.
//!
//! [`GradKind::Surrogate`]: crate::numcore::GradKind::Surrogate

use crate::error::{param_err, shape_err, Error, Result};
use crate::numcore::{DiffValue, Rng, Tape, Tensor, Var};
use crate::relax::{marginal_layer, sparsemap, Noise, SparseMapOptions};
use crate::structures::{check_len, StructDomain, Structure};

/// Default step size for SPIGOT, linear interpolation and I-MLE.
pub const DEFAULT_ETA: f64 = 1.0;

/// Records a structure-valued surrogate layer as an opaque tape node.
pub fn record(tape: &mut Tape, input: Var, layer: &DiffValue<Structure>) -> Result<Var> {
    let as_tensor = layer.clone().map_value(|z| Tensor::vector(z.to_f64()));
    tape.apply(input, &as_tensor)
}

/// Straight-through: forward argmax, backward identity.
pub fn ste<D: StructDomain + ?Sized>(d: &D, s: &[f64]) -> Result<DiffValue<Structure>> {
    let z = d.argmax(s)?;
    let n = s.len();
    Ok(DiffValue::surrogate(z, n, n, |v| v.to_vec()))
}

/// Forward argmax, backward through the Gibbs marginals at `s` (softmax for
/// one-of-K).
pub fn softmax_st<D: StructDomain + ?Sized>(d: &D, s: &[f64]) -> Result<DiffValue<Structure>> {
    let z = d.argmax(s)?;
    let relaxed = marginal_layer(d, s)?;
    let n = s.len();
    Ok(DiffValue::surrogate(z, n, n, move |v| {
        relaxed
            .pullback(v)
            .expect("cotangent length checked by DiffValue")
    }))
}

/// One SPIGOT backward evaluation with solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SpigotStep {
    /// `ẑ − proj(ẑ − ηv)`.
    pub grad: Vec<f64>,
    /// The projected point `proj(ẑ − ηv)`.
    pub target: Vec<f64>,
    pub converged: bool,
    pub gap: f64,
}

/// `ẑ − proj_{conv(Z)}(ẑ − ηv)` for a vertex `ẑ`, with the projection solved
/// by [`sparsemap`].
pub fn spigot_step<D: StructDomain + ?Sized>(
    d: &D,
    z: &Structure,
    v: &[f64],
    eta: f64,
    opts: SparseMapOptions,
) -> Result<SpigotStep> {
    check_len(d, v)?;
    let zf = z.to_f64();
    let point: Vec<f64> = zf.iter().zip(v).map(|(a, b)| a - eta * b).collect();
    let proj = sparsemap(d, &point, opts)?.value;
    Ok(SpigotStep {
        grad: zf.iter().zip(&proj.mu.mu).map(|(a, b)| a - b).collect(),
        target: proj.mu.mu,
        converged: proj.active.converged,
        gap: proj.active.gap,
    })
}

/// Forward argmax; backward projects a gradient step onto the marginal
/// polytope and returns the difference. Nonlinear in `v`.
///
/// The pullback panics only if the domain's maximization oracle fails; use
/// [`spigot_step`] to inspect convergence.
pub fn spigot<D>(d: &D, s: &[f64], eta: f64, opts: SparseMapOptions) -> Result<DiffValue<Structure>>
where
    D: StructDomain + Clone + 'static,
{
    check_eta(eta)?;
    let z = d.argmax(s)?;
    let (dom, vertex, n) = (d.clone(), z.clone(), s.len());
    Ok(DiffValue::surrogate(z, n, n, move |v| {
        spigot_step(&dom, &vertex, v, eta, opts)
            .expect("maximization oracle failed during projection")
            .grad
    }))
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(param_err("eta", "must be positive"));
    }
    Ok(())
}

/// Forward argmax; backward `(ẑ(s + ηv) − ẑ(s)) / η`.
pub fn linear_interp<D>(d: &D, s: &[f64], eta: f64) -> Result<DiffValue<Structure>>
where
    D: StructDomain + Clone + 'static,
{
    check_eta(eta)?;
    let z = d.argmax(s)?;
    let (dom, base, scores, n) = (d.clone(), z.to_f64(), s.to_vec(), s.len());
    Ok(DiffValue::surrogate(z, n, n, move |v| {
        let moved: Vec<f64> = scores.iter().zip(v).map(|(a, b)| a + eta * b).collect();
        let z2 = dom
            .argmax(&moved)
            .expect("maximization oracle failed")
            .to_f64();
        z2.iter().zip(&base).map(|(a, b)| (a - b) / eta).collect()
    }))
}

/// Forward `ẑ(s + σU)`; backward `ẑ(s + σU) − ẑ(s + σU − ηv)` with the same
/// noise draw `U` in both terms.
///
/// With `σ = 0` this is `−η` times [`linear_interp`] evaluated at `−v`.
pub fn imle<D>(
    d: &D,
    s: &[f64],
    eta: f64,
    noise_scale: f64,
    noise: Noise,
    rng: &mut Rng,
) -> Result<DiffValue<Structure>>
where
    D: StructDomain + Clone + 'static,
{
    check_len(d, s)?;
    check_eta(eta)?;
    if !(noise_scale >= 0.0) {
        return Err(param_err("noise_scale", "must be nonnegative"));
    }
    let u = noise.draw(rng, s.len());
    let perturbed: Vec<f64> = s.iter().zip(&u).map(|(a, b)| a + noise_scale * b).collect();
    let z = d.argmax(&perturbed)?;
    let (dom, base, n) = (d.clone(), z.to_f64(), s.len());
    Ok(DiffValue::surrogate(z, n, n, move |v| {
        let target: Vec<f64> = perturbed.iter().zip(v).map(|(a, b)| a - eta * b).collect();
        let z2 = dom
            .argmax(&target)
            .expect("maximization oracle failed")
            .to_f64();
        base.iter().zip(&z2).map(|(a, b)| a - b).collect()
    }))
}

/// Forward `⌊x⌋`, backward identity.
pub fn round_ste(x: f64) -> Result<DiffValue<i64>> {
    if !x.is_finite() {
        return Err(param_err("x", "must be finite"));
    }
    Ok(DiffValue::surrogate(x.floor() as i64, 1, 1, |v| v.to_vec()))
}

/// A finite set of anchor vectors for vector quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    anchors: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(anchors: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = anchors.first() else {
            return Err(param_err("anchors", "codebook is empty"));
        };
        let dim = first.len();
        if let Some(a) = anchors.iter().find(|a| a.len() != dim) {
            return Err(shape_err(dim, a.len()));
        }
        if anchors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(param_err("anchors", "entries must be finite"));
        }
        Ok(Self { anchors })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].len()
    }

    pub fn anchor(&self, i: usize) -> &[f64] {
        &self.anchors[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub anchor: Vec<f64>,
    pub index: usize,
    /// `‖v − anchor‖²`; zero exactly when quantization is lossless.
    pub commit_loss: f64,
}

/// Snaps `v` to its nearest anchor (lowest index on ties); the pullback to `v`
/// is the identity.
pub fn vq_quantize(v: &[f64], cb: &Codebook) -> Result<DiffValue<Quantized>> {
    if v.len() != cb.dim() {
        return Err(shape_err(cb.dim(), v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            input: 0,
            coordinate: v.iter().position(|x| !x.is_finite()).unwrap_or(0),
        });
    }
    let dist = |a: &[f64]| -> f64 { a.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum() };
    let (index, commit_loss) = cb.anchors.iter().map(|a| dist(a)).enumerate().fold(
        (0, f64::INFINITY),
        |(bi, bd), (i, d)| if d < bd { (i, d) } else { (bi, bd) },
    );
    let n = v.len();
    Ok(DiffValue::surrogate(
        Quantized {
            anchor: cb.anchors[index].clone(),
            index,
            commit_loss,
        },
        n,
        n,
        |g| g.to_vec(),
    ))
}
