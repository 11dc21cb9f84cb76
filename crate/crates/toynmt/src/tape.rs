//! Reverse-mode differentiation over a small set of matrix operations.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! read in place from a [`ParamStore`]; [`Tape::backward`] returns one
//! gradient matrix per parameter.

use crate::dropout::DropoutStream;
use crate::kernel::ModelScalar;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    tensors: Vec<Matrix<S>>,
    names: Vec<String>,
}

impl<S: ModelScalar> Default for ParamStore<S> {
    fn default() -> Self {
        ParamStore {
            tensors: Vec::new(),
            names: Vec::new(),
        }
    }
}

impl<S: ModelScalar> ParamStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<S>) -> ParamId {
        self.tensors.push(value);
        self.names.push(name.into());
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<S> {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensors(&self) -> &[Matrix<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix<S>] {
        &mut self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// Zero-valued tensors with the same shapes.
    pub fn zeros_like(&self) -> Vec<Matrix<S>> {
        self.tensors
            .iter()
            .map(|t| Matrix::zeros(t.rows, t.cols))
            .collect()
    }
}

/// Batched multi-head attention geometry. Query row `b * q_len + t`
/// attends to key rows `b * k_len + j` for `j < key_lengths[b]` (and
/// `j <= t` when causal).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttnLayout {
    pub batch: usize,
    pub q_len: usize,
    pub k_len: usize,
    pub key_lengths: Vec<usize>,
    pub heads: usize,
    pub causal: bool,
}

enum Op<S> {
    Param(ParamId),
    Constant,
    Gather {
        table: Var,
        ids: Vec<usize>,
        scale: S,
    },
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix<S>,
        rstd: Vec<S>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttnLayout,
        probs: Vec<S>,
    },
    Dropout {
        x: Var,
        mask: Vec<S>,
    },
}

struct Node<S> {
    /// `None` for parameters, which are read from the store.
    value: Option<Matrix<S>>,
    op: Op<S>,
}

pub struct Tape<'p, S> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    param_vars: Vec<Option<Var>>,
    dropout: Option<DropoutStream>,
}

const LN_EPS: f64 = 1e-5;

fn grad_slot<S: ModelScalar>(
    grads: &mut [Option<Matrix<S>>],
    v: Var,
    rows: usize,
    cols: usize,
) -> &mut Matrix<S> {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(rows, cols))
}

impl<'p, S: ModelScalar> Tape<'p, S> {
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            dropout: None,
        }
    }

    /// Enables dropout with masks drawn from `stream`.
    pub fn with_dropout(mut self, stream: DropoutStream) -> Self {
        self.dropout = Some(stream);
        self
    }

    fn push(&mut self, value: Matrix<S>, op: Op<S>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<S> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            (None, _) => unreachable!("only parameters are stored out of line"),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, value: Matrix<S>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Rows `ids` of `table`, multiplied by `scale`.
    pub fn gather(&mut self, table: Var, ids: &[usize], scale: S) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(ids.len(), t.cols);
        for (r, &id) in ids.iter().enumerate() {
            for (o, &x) in out.row_mut(r).iter_mut().zip(t.row(id)) {
                *o = x * scale;
            }
        }
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                scale,
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_bt(self.value(b));
        self.push(out, Op::MatMulBT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds the single-row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let mut out = self.value(a).clone();
        let b = self.value(bias);
        assert_eq!((b.rows, b.cols), (1, out.cols), "bias shape");
        for r in 0..out.rows {
            for (o, &x) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += x;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for x in &mut out.data {
            if *x < S::zero() {
                *x = S::zero();
            }
        }
        self.push(out, Op::Relu(a))
    }

    /// `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn layer_norm(&mut self, x: Var, gain: ParamId, bias: ParamId) -> Var {
        let gain = self.param(gain);
        let bias = self.param(bias);
        let xv = self.value(x);
        let (rows, cols) = (xv.rows, xv.cols);
        let n = S::from_count(cols);
        let eps = S::tol(LN_EPS);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let rs = S::one() / (var + eps).sqrt();
            rstd.push(rs);
            for (h, &v) in xhat.row_mut(r).iter_mut().zip(row) {
                *h = (v - mean) * rs;
            }
        }
        let g = self.value(gain);
        let b = self.value(bias);
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let xr = xhat.row(r);
            for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = xr[c] * g.data[c] + b.data[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttnLayout) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols;
        let (bsz, lq, lk, heads) = (layout.batch, layout.q_len, layout.k_len, layout.heads);
        assert_eq!(qv.rows, bsz * lq, "query rows");
        assert_eq!(kv.rows, bsz * lk, "key rows");
        assert_eq!(vv.rows, bsz * lk, "value rows");
        assert_eq!(d % heads, 0, "model dim divisible by heads");
        let dh = d / heads;
        let scale = S::one() / S::from_count(dh).sqrt();
        let mut probs = vec![S::zero(); bsz * heads * lq * lk];
        let mut out = Matrix::zeros(bsz * lq, d);
        let mut scores = vec![S::zero(); lk];
        for b in 0..bsz {
            let klen = layout.key_lengths[b];
            for h in 0..heads {
                let off = h * dh;
                for t in 0..lq {
                    let visible = if layout.causal { klen.min(t + 1) } else { klen };
                    let qrow = &qv.row(b * lq + t)[off..off + dh];
                    let mut max = S::neg_infinity();
                    for (j, s) in scores.iter_mut().enumerate().take(visible) {
                        let krow = &kv.row(b * lk + j)[off..off + dh];
                        let mut dot = S::zero();
                        for (&x, &y) in qrow.iter().zip(krow) {
                            dot += x * y;
                        }
                        *s = dot * scale;
                        max = max.max(*s);
                    }
                    let base = ((b * heads + h) * lq + t) * lk;
                    let mut sum = S::zero();
                    for j in 0..visible {
                        let e = (scores[j] - max).exp();
                        probs[base + j] = e;
                        sum += e;
                    }
                    let orow = &mut out.data[(b * lq + t) * d + off..(b * lq + t) * d + off + dh];
                    for j in 0..visible {
                        let p = probs[base + j] / sum;
                        probs[base + j] = p;
                        let vrow = &vv.row(b * lk + j)[off..off + dh];
                        for (o, &x) in orow.iter_mut().zip(vrow) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
        )
    }

    /// Inverted dropout with probability `p`; identity when the tape has no
    /// dropout stream.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        let Some(stream) = self.dropout.as_mut() else {
            return x;
        };
        if p <= 0.0 {
            return x;
        }
        let keep = S::tol(1.0 / (1.0 - p));
        let site = stream.next_site();
        let xv = self.value(x);
        let mut mask = Vec::with_capacity(xv.len());
        let mut out = xv.clone();
        for (i, o) in out.data.iter_mut().enumerate() {
            let m = if site.uniform(i as u64) < p {
                S::zero()
            } else {
                keep
            };
            mask.push(m);
            *o *= m;
        }
        self.push(out, Op::Dropout { x, mask })
    }

    /// Back-propagates `seed` (the gradient of the objective with respect
    /// to `root`) and returns one gradient per parameter in the store.
    pub fn backward(&self, root: Var, seed: Matrix<S>) -> Vec<Matrix<S>> {
        let mut param_grads = self.params.zeros_like();
        let mut grads: Vec<Option<Matrix<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        {
            let rv = self.value(root);
            assert_eq!((rv.rows, rv.cols), (seed.rows, seed.cols), "seed shape");
        }
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(id) => param_grads[id.0].add_assign(&g),
                Op::Constant => {}
                Op::Gather { table, ids, scale } => {
                    let t = self.value(*table);
                    let dt = grad_slot(&mut grads, *table, t.rows, t.cols);
                    for (r, &id) in ids.iter().enumerate() {
                        for (d, &x) in dt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *d += x * *scale;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    g.matmul_bt_into(bv, grad_slot(&mut grads, *a, av.rows, av.cols), true);
                    av.matmul_at_into(&g, grad_slot(&mut grads, *b, bv.rows, bv.cols), true);
                }
                Op::MatMulBT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    g.matmul_into(bv, grad_slot(&mut grads, *a, av.rows, av.cols), true);
                    g.matmul_at_into(av, grad_slot(&mut grads, *b, bv.rows, bv.cols), true);
                }
                Op::Add(a, b) => {
                    grad_slot(&mut grads, *a, g.rows, g.cols).add_assign(&g);
                    grad_slot(&mut grads, *b, g.rows, g.cols).add_assign(&g);
                }
                Op::AddRow(a, bias) => {
                    grad_slot(&mut grads, *a, g.rows, g.cols).add_assign(&g);
                    let db = grad_slot(&mut grads, *bias, 1, g.cols);
                    for r in 0..g.rows {
                        for (d, &x) in db.data.iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                }
                Op::Relu(a) => {
                    let out = node.value.as_ref().expect("relu output");
                    let da = grad_slot(&mut grads, *a, g.rows, g.cols);
                    for ((d, &x), &y) in da.data.iter_mut().zip(&g.data).zip(&out.data) {
                        if y > S::zero() {
                            *d += x;
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let cols = g.cols;
                    let n = S::from_count(cols);
                    let gv = self.value(*gain).data.clone();
                    {
                        let dg = grad_slot(&mut grads, *gain, 1, cols);
                        for r in 0..g.rows {
                            for ((d, &x), &h) in dg.data.iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                                *d += x * h;
                            }
                        }
                    }
                    {
                        let db = grad_slot(&mut grads, *bias, 1, cols);
                        for r in 0..g.rows {
                            for (d, &x) in db.data.iter_mut().zip(g.row(r)) {
                                *d += x;
                            }
                        }
                    }
                    let dx = grad_slot(&mut grads, *x, g.rows, cols);
                    let mut dxhat = vec![S::zero(); cols];
                    for r in 0..g.rows {
                        let mut sum = S::zero();
                        let mut dot = S::zero();
                        let hr = xhat.row(r);
                        for c in 0..cols {
                            dxhat[c] = g.row(r)[c] * gv[c];
                            sum += dxhat[c];
                            dot += dxhat[c] * hr[c];
                        }
                        let k = rstd[r] / n;
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d += k * (n * dxhat[c] - sum - hr[c] * dot);
                        }
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    layout,
                    probs,
                } => self.attention_backward(&g, *q, *k, *v, layout, probs, &mut grads),
                Op::Dropout { x, mask } => {
                    let dx = grad_slot(&mut grads, *x, g.rows, g.cols);
                    for ((d, &x), &m) in dx.data.iter_mut().zip(&g.data).zip(mask) {
                        *d += x * m;
                    }
                }
            }
        }
        param_grads
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &Matrix<S>,
        q: Var,
        k: Var,
        v: Var,
        layout: &AttnLayout,
        probs: &[S],
        grads: &mut [Option<Matrix<S>>],
    ) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols;
        let (bsz, lq, lk, heads) = (layout.batch, layout.q_len, layout.k_len, layout.heads);
        let dh = d / heads;
        let scale = S::one() / S::from_count(dh).sqrt();
        let mut dq = Matrix::zeros(qv.rows, d);
        let mut dk = Matrix::zeros(kv.rows, d);
        let mut dv = Matrix::zeros(vv.rows, d);
        let mut dp = vec![S::zero(); lk];
        for b in 0..bsz {
            let klen = layout.key_lengths[b];
            for h in 0..heads {
                let off = h * dh;
                for t in 0..lq {
                    let visible = if layout.causal { klen.min(t + 1) } else { klen };
                    let base = ((b * heads + h) * lq + t) * lk;
                    let qi = b * lq + t;
                    let go = &g.row(qi)[off..off + dh];
                    let mut weighted = S::zero();
                    for j in 0..visible {
                        let kj = b * lk + j;
                        let p = probs[base + j];
                        let vrow = &vv.row(kj)[off..off + dh];
                        let mut dot = S::zero();
                        for (&a, &x) in go.iter().zip(vrow) {
                            dot += a * x;
                        }
                        dp[j] = dot;
                        weighted += p * dot;
                        for (d, &a) in dv.row_mut(kj)[off..off + dh].iter_mut().zip(go) {
                            *d += p * a;
                        }
                    }
                    for j in 0..visible {
                        let kj = b * lk + j;
                        let ds = probs[base + j] * (dp[j] - weighted) * scale;
                        if ds == S::zero() {
                            continue;
                        }
                        let krow = &kv.row(kj)[off..off + dh];
                        for (d, &x) in dq.row_mut(qi)[off..off + dh].iter_mut().zip(krow) {
                            *d += ds * x;
                        }
                        let qrow = &qv.row(qi)[off..off + dh];
                        for (d, &x) in dk.row_mut(kj)[off..off + dh].iter_mut().zip(qrow) {
                            *d += ds * x;
                        }
                    }
                }
            }
        }
        grad_slot(grads, q, qv.rows, d).add_assign(&dq);
        grad_slot(grads, k, kv.rows, d).add_assign(&dk);
        grad_slot(grads, v, vv.rows, d).add_assign(&dv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(shapes: &[(usize, usize)]) -> (ParamStore<f64>, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = shapes
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                let data = (0..r * c)
                    .map(|j| ((i * 31 + j) as f64 * 0.7311).sin() * 0.8)
                    .collect();
                s.add(format!("p{i}"), Matrix::from_vec(r, c, data))
            })
            .collect();
        (s, ids)
    }

    /// Weighted sum of the output so every element has a distinct gradient.
    fn objective(m: &Matrix<f64>) -> (f64, Matrix<f64>) {
        let w: Vec<f64> = (0..m.len()).map(|i| ((i as f64) * 0.37).cos()).collect();
        let f = m.data.iter().zip(&w).map(|(a, b)| a * b).sum();
        (f, Matrix::from_vec(m.rows, m.cols, w))
    }

    fn check<F>(shapes: &[(usize, usize)], build: F)
    where
        F: Fn(&mut Tape<'_, f64>, &[ParamId]) -> Var,
    {
        let (params, ids) = store(shapes);
        let tape_grads = {
            let mut tape = Tape::new(&params);
            let out = build(&mut tape, &ids);
            let (_, seed) = objective(tape.value(out));
            tape.backward(out, seed)
        };
        let eval = |p: &ParamStore<f64>| {
            let mut tape = Tape::new(p);
            let out = build(&mut tape, &ids);
            objective(tape.value(out)).0
        };
        let h = 1e-6;
        for (pi, id) in ids.iter().enumerate() {
            for e in 0..params.get(*id).len() {
                let mut plus = params.clone();
                plus.get_mut(*id).data[e] += h;
                let mut minus = params.clone();
                minus.get_mut(*id).data[e] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = tape_grads[pi].data[e];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "param {pi} elem {e}: analytic {an} vs numeric {fd}"
                );
            }
        }
    }

    #[test]
    fn matmul_and_bias() {
        check(&[(3, 4), (4, 2), (1, 2)], |t, p| {
            let x = t.param(p[0]);
            let h = t.linear(x, p[1], p[2]);
            t.relu(h)
        });
        check(&[(3, 4), (5, 4)], |t, p| {
            let a = t.param(p[0]);
            let b = t.param(p[1]);
            t.matmul_bt(a, b)
        });
    }

    #[test]
    fn gather_add_layer_norm() {
        check(&[(5, 4), (3, 4), (1, 4), (1, 4)], |t, p| {
            let table = t.param(p[0]);
            let e = t.gather(table, &[4, 0, 4], 1.7);
            let pos = t.param(p[1]);
            let x = t.add(e, pos);
            t.layer_norm(x, p[2], p[3])
        });
    }

    #[test]
    fn attention_masks() {
        for causal in [false, true] {
            check(&[(6, 4), (8, 4), (8, 4)], |t, p| {
                let q = t.param(p[0]);
                let k = t.param(p[1]);
                let v = t.param(p[2]);
                t.attention(
                    q,
                    k,
                    v,
                    AttnLayout {
                        batch: 2,
                        q_len: 3,
                        k_len: 4,
                        key_lengths: vec![4, 2],
                        heads: 2,
                        causal,
                    },
                )
            });
        }
    }

    #[test]
    fn masked_keys_are_ignored() {
        let (mut params, ids) = store(&[(2, 2), (3, 2), (3, 2)]);
        let layout = AttnLayout {
            batch: 1,
            q_len: 2,
            k_len: 3,
            key_lengths: vec![2],
            heads: 1,
            causal: false,
        };
        let run = |p: &ParamStore<f64>| {
            let mut t = Tape::new(p);
            let (q, k, v) = (t.param(ids[0]), t.param(ids[1]), t.param(ids[2]));
            let o = t.attention(q, k, v, layout.clone());
            t.value(o).clone()
        };
        let before = run(&params);
        params.get_mut(ids[1]).data[4] = 100.0;
        params.get_mut(ids[2]).data[5] = -100.0;
        assert_eq!(run(&params), before);
    }

    #[test]
    fn dropout_is_identity_without_stream() {
        let (params, ids) = store(&[(2, 3)]);
        let mut t = Tape::new(&params);
        let x = t.param(ids[0]);
        assert_eq!(t.dropout(x, 0.5), x);
    }
}
