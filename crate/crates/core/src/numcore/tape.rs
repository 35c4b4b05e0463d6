//! Append-only reverse-mode tape.
//!
//! Every node stores its forward value and a pullback mapping the cotangent of
//! its output to one cotangent per parent. [`backprop`] replays pullbacks in
//! reverse order of recording. Nodes flagged opaque carry a constructed
//! (surrogate) backward rule; gradient checks skip them.

use std::sync::Arc;

use super::logsumexp;
use super::tensor::Tensor;
use crate::error::{param_err, shape_err, Result};

/// Backward rule for one node: output cotangent to one cotangent per parent.
pub type NodePullback = Box<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<NodePullback>,
    opaque: bool,
    label: &'static str,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn label(&self, v: Var) -> &'static str {
        self.nodes[v.0].label
    }

    /// Whether any node feeding `out` has a constructed (surrogate) backward rule.
    pub fn depends_on_opaque(&self, out: Var) -> bool {
        let mut live = vec![false; out.0 + 1];
        live[out.0] = true;
        for i in (0..=out.0).rev() {
            if !live[i] {
                continue;
            }
            if self.nodes[i].opaque {
                return true;
            }
            for p in &self.nodes[i].parents {
                live[p.0] = true;
            }
        }
        false
    }

    fn push(
        &mut self,
        value: Tensor,
        parents: Vec<Var>,
        backward: Option<NodePullback>,
        label: &'static str,
    ) -> Var {
        self.nodes.push(Node {
            value,
            parents,
            backward,
            opaque: false,
            label,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Vec::new(), None, "leaf")
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Var {
        self.leaf(Tensor::vector(data))
    }

    /// Same value as `a`, zero gradient in the backward pass.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Vec::new(), None, "stop_gradient")
    }

    fn check_same(&self, a: Var, b: Var) -> Result<()> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(shape_err(la, lb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, data)?,
            vec![a, b],
            Some(Box::new(|g| vec![g.to_vec(), g.to_vec()])),
            "add",
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, data)?,
            vec![a, b],
            Some(Box::new(|g| {
                vec![g.to_vec(), g.iter().map(|x| -x).collect()]
            })),
            "sub",
        ))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b)?;
        let (va, vb) = (self.value(a).data().to_vec(), self.value(b).data().to_vec());
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, data)?,
            vec![a, b],
            Some(Box::new(move |g| {
                vec![
                    g.iter().zip(&vb).map(|(g, y)| g * y).collect(),
                    g.iter().zip(&va).map(|(g, x)| g * x).collect(),
                ]
            })),
            "mul",
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| c * x).collect())
            .expect("shape preserved");
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| vec![g.iter().map(|x| c * x).collect()])),
            "scale",
        )
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x + c).collect())
            .expect("shape preserved");
        self.push(
            value,
            vec![a],
            Some(Box::new(|g| vec![g.to_vec()])),
            "offset",
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = t.data().iter().map(|x| x.exp()).collect();
        let keep = out.clone();
        let value = Tensor::new(t.shape().to_vec(), out).expect("shape preserved");
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| {
                vec![g.iter().zip(&keep).map(|(g, y)| g * y).collect()]
            })),
            "exp",
        )
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let x = t.data().to_vec();
        let value = Tensor::new(t.shape().to_vec(), x.iter().map(|v| v.ln()).collect())
            .expect("shape preserved");
        self.push(
            value,
            vec![a],
            Some(Box::new(move |g| {
                vec![g.iter().zip(&x).map(|(g, x)| g / x).collect()]
            })),
            "ln",
        )
    }

    /// Sum of all entries, as a length-1 vector.
    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.value(a).data().iter().sum();
        self.push(
            Tensor::scalar(s),
            vec![a],
            Some(Box::new(move |g| vec![vec![g[0]; n]])),
            "sum",
        )
    }

    /// Inner product of two equal-length vectors, as a length-1 vector.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// `out[k] = a[index[k]]`; the pullback scatter-adds.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let n = self.value(a).len();
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(shape_err(format!("index < {n}"), bad));
        }
        let src = self.value(a).data();
        let data: Vec<f64> = index.iter().map(|&i| src[i]).collect();
        let index = index.to_vec();
        Ok(self.push(
            Tensor::vector(data),
            vec![a],
            Some(Box::new(move |g| {
                let mut out = vec![0.0; n];
                for (gk, &i) in g.iter().zip(&index) {
                    out[i] += gk;
                }
                vec![out]
            })),
            "gather",
        ))
    }

    /// `out[k] = Σ coef · a[idx]` over the `(idx, coef)` pairs of row `k`.
    pub fn sparse_linear(&mut self, a: Var, rows: &[Vec<(usize, f64)>]) -> Result<Var> {
        let n = self.value(a).len();
        if rows.iter().flatten().any(|&(i, _)| i >= n) {
            return Err(shape_err(format!("indices < {n}"), "out of range"));
        }
        let src = self.value(a).data();
        let data: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().map(|&(i, c)| c * src[i]).sum())
            .collect();
        let rows = rows.to_vec();
        Ok(self.push(
            Tensor::vector(data),
            vec![a],
            Some(Box::new(move |g| {
                let mut out = vec![0.0; n];
                for (gk, r) in g.iter().zip(&rows) {
                    for &(i, c) in r {
                        out[i] += c * gk;
                    }
                }
                vec![out]
            })),
            "sparse_linear",
        ))
    }

    /// Concatenation of the flattened inputs.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let lens: Vec<usize> = parts.iter().map(|&p| self.value(p).len()).collect();
        let data: Vec<f64> = parts
            .iter()
            .flat_map(|&p| self.value(p).data().iter().copied())
            .collect();
        self.push(
            Tensor::vector(data),
            parts.to_vec(),
            Some(Box::new(move |g| {
                let mut off = 0;
                lens.iter()
                    .map(|&l| {
                        let piece = g[off..off + l].to_vec();
                        off += l;
                        piece
                    })
                    .collect()
            })),
            "concat",
        )
    }

    /// One log-sum-exp per group of indices into `a`.
    pub fn segment_logsumexp(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let n = self.value(a).len();
        if groups.iter().flatten().any(|&i| i >= n) {
            return Err(shape_err(format!("group indices < {n}"), "out of range"));
        }
        let x = self.value(a).data().to_vec();
        let outs: Vec<f64> = groups
            .iter()
            .map(|grp| logsumexp(&grp.iter().map(|&i| x[i]).collect::<Vec<_>>()))
            .collect();
        let groups = groups.to_vec();
        let keep = outs.clone();
        Ok(self.push(
            Tensor::vector(outs),
            vec![a],
            Some(Box::new(move |g| {
                let mut out = vec![0.0; n];
                for ((grp, gk), lse) in groups.iter().zip(g).zip(&keep) {
                    if *lse == f64::NEG_INFINITY {
                        continue;
                    }
                    for &i in grp {
                        out[i] += gk * (x[i] - lse).exp();
                    }
                }
                vec![out]
            })),
            "segment_logsumexp",
        ))
    }

    /// `w x` for a 2-d `w`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let wt = self.value(w).clone();
        let xv = self.value(x).data().to_vec();
        let y = wt.matvec(&xv)?;
        let (r, c) = (wt.rows(), wt.cols());
        Ok(self.push(
            Tensor::vector(y),
            vec![w, x],
            Some(Box::new(move |g| {
                let mut gw = vec![0.0; r * c];
                let mut gx = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        gw[i * c + j] = g[i] * xv[j];
                        gx[j] += wt.at(i, j) * g[i];
                    }
                }
                vec![gw, gx]
            })),
            "matvec",
        ))
    }

    /// Records a node computed outside the tape.
    ///
    /// `pullback` maps the output cotangent to one cotangent per input.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor,
        pullback: NodePullback,
        label: &'static str,
    ) -> Var {
        self.push(value, inputs.to_vec(), Some(pullback), label)
    }

    /// Like [`Tape::custom`] for a layer whose backward rule is a constructed
    /// surrogate rather than a derivative.
    pub fn opaque(
        &mut self,
        inputs: &[Var],
        value: Tensor,
        pullback: NodePullback,
        label: &'static str,
    ) -> Var {
        let v = self.push(value, inputs.to_vec(), Some(pullback), label);
        self.nodes[v.0].opaque = true;
        v
    }

    /// Records a single-input [`DiffValue`] layer.
    pub fn apply(&mut self, input: Var, layer: &DiffValue<Tensor>) -> Result<Var> {
        let n = self.value(input).len();
        if n != layer.input_len() {
            return Err(shape_err(layer.input_len(), n));
        }
        let pb = layer.pullback.clone();
        let node: NodePullback = Box::new(move |g| vec![pb(g)]);
        Ok(if layer.is_surrogate() {
            self.opaque(&[input], layer.value.clone(), node, "layer")
        } else {
            self.custom(&[input], layer.value.clone(), node, "layer")
        })
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect()
}

/// Cotangents for every node reached by [`backprop`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        self.grads
            .get(v.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| vec![0.0; self.lens[v.0]])
    }
}

/// Replays pullbacks from `output` back to the leaves, seeded with `seed`.
pub fn backprop(tape: &Tape, output: Var, seed: &[f64]) -> Result<Gradients> {
    if output.0 >= tape.nodes.len() {
        return Err(param_err("output", "not a node of this tape"));
    }
    let out_len = tape.value(output).len();
    if seed.len() != out_len {
        return Err(shape_err(out_len, seed.len()));
    }
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; tape.nodes.len()];
    grads[output.0] = Some(seed.to_vec());
    for i in (0..=output.0).rev() {
        let node = &tape.nodes[i];
        let (Some(g), Some(backward)) = (&grads[i], &node.backward) else {
            continue;
        };
        let contribs = backward(g);
        debug_assert_eq!(contribs.len(), node.parents.len());
        for (p, c) in node.parents.iter().zip(contribs) {
            match &mut grads[p.0] {
                Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, x)| *a += x),
                slot @ None => *slot = Some(c),
            }
        }
    }
    let lens = tape.nodes.iter().map(|n| n.value.len()).collect();
    Ok(Gradients { grads, lens })
}

/// Whether a pullback is a true vector-Jacobian product or a constructed rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradKind {
    Exact,
    Surrogate,
}

pub type PullbackFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// A forward value paired with its pullback.
#[derive(Clone)]
pub struct DiffValue<T> {
    pub value: T,
    pullback: PullbackFn,
    output_len: usize,
    input_len: usize,
    kind: GradKind,
}

impl<T: std::fmt::Debug> std::fmt::Debug for DiffValue<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiffValue")
            .field("value", &self.value)
            .field("kind", &self.kind)
            .field("output_len", &self.output_len)
            .field("input_len", &self.input_len)
            .finish()
    }
}

impl<T> DiffValue<T> {
    pub fn exact(
        value: T,
        output_len: usize,
        input_len: usize,
        pullback: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            value,
            pullback: Arc::new(pullback),
            output_len,
            input_len,
            kind: GradKind::Exact,
        }
    }

    pub fn surrogate(
        value: T,
        output_len: usize,
        input_len: usize,
        pullback: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: GradKind::Surrogate,
            ..Self::exact(value, output_len, input_len, pullback)
        }
    }

    pub fn kind(&self) -> GradKind {
        self.kind
    }

    pub fn is_surrogate(&self) -> bool {
        self.kind == GradKind::Surrogate
    }

    pub fn output_len(&self) -> usize {
        self.output_len
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    /// Applies the pullback to a cotangent of the output.
    pub fn pullback(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.output_len {
            return Err(shape_err(self.output_len, v.len()));
        }
        Ok((self.pullback)(v))
    }

    pub fn map_value<U>(self, f: impl FnOnce(T) -> U) -> DiffValue<U> {
        DiffValue {
            value: f(self.value),
            pullback: self.pullback,
            output_len: self.output_len,
            input_len: self.input_len,
            kind: self.kind,
        }
    }
}
