//! A minimal reverse-mode autodiff tape over row-major matrices. Batches are
//! stacked along rows; attention knows the batch layout and masks.

use std::rc::Rc;

use ndarray::{Array2, Axis};

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Batch layout and masking of one attention call. Rows of the query
/// matrix are `batch * tq` long, key/value rows `batch * tk`.
#[derive(Debug, Clone)]
pub struct AttnSpec {
    pub batch: usize,
    pub tq: usize,
    pub tk: usize,
    pub heads: usize,
    /// Per key row: whether it may be attended to.
    pub key_valid: Rc<Vec<bool>>,
    /// Query i may only see keys j <= i (requires tq == tk).
    pub causal: bool,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Array2<f64>, inv_std: Vec<f64> },
    Gather { table: Var, idx: Rc<Vec<usize>> },
    SelectRows { x: Var, idx: Rc<Vec<usize>> },
    ScaleRows { x: Var, scale: Rc<Vec<f64>> },
    Attention { q: Var, k: Var, v: Var, spec: AttnSpec, probs: Vec<f64> },
    SoftmaxCe { logits: Var, targets: Rc<Vec<Option<usize>>>, probs: Array2<f64>, count: usize },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn row_softmax(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        row.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    row.iter_mut().for_each(|x| *x /= z);
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value.as_standard_layout().into_owned(), Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// a · bᵀ
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// Adds a 1 x n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mu = row.sum() / d;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mu) * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    pub fn gather(&mut self, table: Var, idx: Rc<Vec<usize>>) -> Var {
        let v = self.value(table).select(Axis(0), &idx);
        self.push(v, Op::Gather { table, idx })
    }

    pub fn select_rows(&mut self, x: Var, idx: Rc<Vec<usize>>) -> Var {
        let v = self.value(x).select(Axis(0), &idx);
        self.push(v, Op::SelectRows { x, idx })
    }

    /// Multiplies row r of `x` by `scale[r]`.
    pub fn scale_rows(&mut self, x: Var, scale: Rc<Vec<f64>>) -> Var {
        let mut v = self.value(x).clone();
        for (mut row, s) in v.rows_mut().into_iter().zip(scale.iter()) {
            row *= *s;
        }
        self.push(v, Op::ScaleRows { x, scale })
    }

    /// Multi-head scaled dot-product attention; q, k, v are already
    /// projected and heads are contiguous column blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttnSpec) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / spec.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (tq, tk) = (spec.tq, spec.tk);
        let qs = qv.as_slice().expect("standard layout");
        let ks = kv.as_slice().expect("standard layout");
        let vs = vv.as_slice().expect("standard layout");
        let mut out = Array2::<f64>::zeros((spec.batch * tq, d));
        let os = out.as_slice_mut().expect("fresh array");
        let mut probs = vec![0.0; spec.batch * spec.heads * tq * tk];
        for b in 0..spec.batch {
            for h in 0..spec.heads {
                let c0 = h * dh;
                for i in 0..tq {
                    let qrow = &qs[(b * tq + i) * d + c0..][..dh];
                    let p = &mut probs[((b * spec.heads + h) * tq + i) * tk..][..tk];
                    for j in 0..tk {
                        let ok = spec.key_valid[b * tk + j] && (!spec.causal || j <= i);
                        p[j] = if ok {
                            let krow = &ks[(b * tk + j) * d + c0..][..dh];
                            qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale
                        } else {
                            f64::NEG_INFINITY
                        };
                    }
                    row_softmax(p);
                    let orow = &mut os[(b * tq + i) * d + c0..][..dh];
                    for j in 0..tk {
                        if p[j] != 0.0 {
                            let vrow = &vs[(b * tk + j) * d + c0..][..dh];
                            orow.iter_mut().zip(vrow).for_each(|(o, x)| *o += p[j] * x);
                        }
                    }
                }
            }
        }
        self.push(out, Op::Attention { q, k, v, spec, probs })
    }

    /// Attention probabilities of an attention node, laid out as
    /// [batch][head][query][key].
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Mean cross-entropy over rows with a target; rows with `None` are
    /// ignored. Returns a 1 x 1 node.
    pub fn softmax_ce(&mut self, logits: Var, targets: Rc<Vec<Option<usize>>>) -> Var {
        let mut probs = self.value(logits).clone();
        let mut loss = 0.0;
        let mut count = 0;
        for (mut row, t) in probs.rows_mut().into_iter().zip(targets.iter()) {
            let s = row.as_slice_mut().expect("standard layout");
            row_softmax(s);
            if let Some(t) = t {
                loss -= s[*t].max(1e-300).ln();
                count += 1;
            }
        }
        let value = Array2::from_elem((1, 1), if count > 0 { loss / count as f64 } else { 0.0 });
        self.push(value, Op::SoftmaxCe { logits, targets, probs, count })
    }

    /// Gradients of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut g: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[loss.0] = Some(Array2::ones(self.nodes[loss.0].value.raw_dim()));
        fn acc(g: &mut [Option<Array2<f64>>], v: Var, d: Array2<f64>) {
            match &mut g[v.0] {
                Some(x) => *x += &d,
                slot => *slot = Some(d),
            }
        }
        for i in (0..=loss.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    g[i] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    acc(&mut g, *a, dy.dot(&self.value(*b).t()));
                    acc(&mut g, *b, self.value(*a).t().dot(&dy));
                }
                Op::MatMulT(a, b) => {
                    acc(&mut g, *a, dy.dot(self.value(*b)));
                    acc(&mut g, *b, dy.t().dot(self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(&mut g, *b, dy.clone());
                    acc(&mut g, *a, dy);
                }
                Op::AddRow(a, row) => {
                    acc(&mut g, *row, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut g, *a, dy);
                }
                Op::Gelu(a) => {
                    let d = &dy * &self.value(*a).mapv(gelu_grad);
                    acc(&mut g, *a, d);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    acc(&mut g, *bias, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut g, *gain, (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let mut dxhat = &dy * self.value(*gain);
                    let n = dxhat.ncols() as f64;
                    for ((mut row, xh), is) in dxhat.rows_mut().into_iter().zip(xhat.rows()).zip(inv_std) {
                        let m1 = row.sum() / n;
                        let m2 = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        row.iter_mut().zip(xh.iter()).for_each(|(r, h)| *r = is * (*r - m1 - h * m2));
                    }
                    acc(&mut g, *x, dxhat);
                }
                Op::Gather { table, idx } => {
                    let tv = self.value(*table);
                    let mut d = Array2::zeros(tv.raw_dim());
                    for (r, &k) in idx.iter().enumerate() {
                        let mut dst = d.row_mut(k);
                        dst += &dy.row(r);
                    }
                    acc(&mut g, *table, d);
                }
                Op::SelectRows { x, idx } => {
                    let mut d = Array2::zeros(self.value(*x).raw_dim());
                    for (r, &k) in idx.iter().enumerate() {
                        let mut dst = d.row_mut(k);
                        dst += &dy.row(r);
                    }
                    acc(&mut g, *x, d);
                }
                Op::ScaleRows { x, scale } => {
                    let mut d = dy;
                    for (mut row, s) in d.rows_mut().into_iter().zip(scale.iter()) {
                        row *= *s;
                    }
                    acc(&mut g, *x, d);
                }
                Op::Attention { q, k, v, spec, probs } => {
                    let (dq, dk, dv) = self.attention_backward(*q, *k, *v, spec, probs, &dy);
                    acc(&mut g, *q, dq);
                    acc(&mut g, *k, dk);
                    acc(&mut g, *v, dv);
                }
                Op::SoftmaxCe { logits, targets, probs, count } => {
                    let mut d = probs.clone();
                    let scale = dy[[0, 0]] / (*count).max(1) as f64;
                    for (mut row, t) in d.rows_mut().into_iter().zip(targets.iter()) {
                        match t {
                            Some(t) => {
                                row[*t] -= 1.0;
                                row *= scale;
                            }
                            None => row.fill(0.0),
                        }
                    }
                    acc(&mut g, *logits, d);
                }
            }
        }
        Grads(g)
    }

    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        spec: &AttnSpec,
        probs: &[f64],
        dy: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / spec.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (tq, tk) = (spec.tq, spec.tk);
        let dy = dy.as_standard_layout();
        let (qs, ks, vs, dys) = (
            qv.as_slice().expect("standard layout"),
            kv.as_slice().expect("standard layout"),
            vv.as_slice().expect("standard layout"),
            dy.as_slice().expect("standard layout"),
        );
        let mut dq = Array2::<f64>::zeros(qv.raw_dim());
        let mut dk = Array2::<f64>::zeros(kv.raw_dim());
        let mut dv = Array2::<f64>::zeros(vv.raw_dim());
        let (dqs, dks, dvs) = (
            dq.as_slice_mut().expect("fresh"),
            dk.as_slice_mut().expect("fresh"),
            dv.as_slice_mut().expect("fresh"),
        );
        let mut dp = vec![0.0; tk];
        for b in 0..spec.batch {
            for h in 0..spec.heads {
                let c0 = h * dh;
                for i in 0..tq {
                    let p = &probs[((b * spec.heads + h) * tq + i) * tk..][..tk];
                    let dorow = &dys[(b * tq + i) * d + c0..][..dh];
                    let mut dot = 0.0;
                    for j in 0..tk {
                        if p[j] == 0.0 {
                            dp[j] = 0.0;
                            continue;
                        }
                        let vrow = &vs[(b * tk + j) * d + c0..][..dh];
                        dp[j] = dorow.iter().zip(vrow).map(|(a, b)| a * b).sum();
                        dot += dp[j] * p[j];
                        let dvrow = &mut dvs[(b * tk + j) * d + c0..][..dh];
                        dvrow.iter_mut().zip(dorow).for_each(|(x, o)| *x += p[j] * o);
                    }
                    let qrow = &qs[(b * tq + i) * d + c0..][..dh];
                    for j in 0..tk {
                        if p[j] == 0.0 {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - dot) * scale;
                        let krow = &ks[(b * tk + j) * d + c0..][..dh];
                        let dqrow = &mut dqs[(b * tq + i) * d + c0..][..dh];
                        dqrow.iter_mut().zip(krow).for_each(|(x, kk)| *x += ds * kk);
                        let dkrow = &mut dks[(b * tk + j) * d + c0..][..dh];
                        dkrow.iter_mut().zip(qrow).for_each(|(x, qq)| *x += ds * qq);
                    }
                }
            }
        }
        (dq, dk, dv)
    }
}

pub struct Grads(Vec<Option<Array2<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.0[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = util::rng(seed, 0);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    /// Checks d(loss)/d(leaf) against central differences for a graph
    /// built by `f` from the given leaves.
    fn check(leaves: Vec<Array2<f64>>, f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let build = |vals: &[Array2<f64>]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| t.leaf(v.clone())).collect();
            let out = f(&mut t, &vars);
            (t, vars, out)
        };
        let (t, vars, out) = build(&leaves);
        let grads = t.backward(out);
        let eps = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(vars[li]).cloned().unwrap_or_else(|| Array2::zeros(leaf.raw_dim()));
            for idx in 0..leaf.len() {
                let mut plus = leaves.clone();
                let mut minus = leaves.clone();
                plus[li].as_slice_mut().unwrap()[idx] += eps;
                minus[li].as_slice_mut().unwrap()[idx] -= eps;
                let (tp, _, op) = build(&plus);
                let (tm, _, om) = build(&minus);
                let num = (tp.value(op)[[0, 0]] - tm.value(om)[[0, 0]]) / (2.0 * eps);
                let a = analytic.as_slice().unwrap()[idx];
                let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
                assert!(rel < 1e-5, "leaf {li} index {idx}: analytic {a} numeric {num}");
            }
        }
    }

    fn ce(t: &mut Tape, x: Var, targets: &[usize]) -> Var {
        t.softmax_ce(x, Rc::new(targets.iter().map(|&k| Some(k)).collect()))
    }

    #[test]
    fn dense_ops_gradients() {
        check(vec![random(3, 4, 1), random(4, 5, 2), random(1, 5, 3)], |t, v| {
            let h = t.matmul(v[0], v[1]);
            let h = t.add_row(h, v[2]);
            let h = t.gelu(h);
            ce(t, h, &[0, 4, 2])
        });
        check(vec![random(3, 4, 4), random(5, 4, 5)], |t, v| {
            let h = t.matmul_t(v[0], v[1]);
            let h2 = t.add(h, h);
            ce(t, h2, &[1, 1, 3])
        });
    }

    #[test]
    fn layer_norm_and_gather_gradients() {
        check(vec![random(4, 6, 6), random(1, 6, 7), random(1, 6, 8), random(5, 6, 9)], |t, v| {
            let g = t.gather(v[3], Rc::new(vec![0, 2, 2, 4]));
            let g = t.scale_rows(g, Rc::new(vec![1.0, 0.0, 2.0, -0.5]));
            let x = t.add(v[0], g);
            let y = t.layer_norm(x, v[1], v[2]);
            let y = t.select_rows(y, Rc::new(vec![3, 0]));
            ce(t, y, &[5, 1])
        });
    }

    #[test]
    fn attention_gradients_with_masks() {
        let spec = AttnSpec {
            batch: 2,
            tq: 3,
            tk: 3,
            heads: 2,
            key_valid: Rc::new(vec![false, true, true, true, true, true]),
            causal: true,
        };
        check(vec![random(6, 4, 10), random(6, 4, 11), random(6, 4, 12)], move |t, v| {
            let o = t.attention(v[0], v[1], v[2], spec.clone());
            ce(t, o, &[0, 1, 2, 3, 0, 1])
        });
        let cross = AttnSpec {
            batch: 2,
            tq: 2,
            tk: 3,
            heads: 1,
            key_valid: Rc::new(vec![true, true, false, true, true, true]),
            causal: false,
        };
        check(vec![random(4, 3, 13), random(6, 3, 14), random(6, 3, 15)], move |t, v| {
            let o = t.attention(v[0], v[1], v[2], cross.clone());
            ce(t, o, &[0, 1, 2, 1])
        });
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut t = Tape::new();
        let q = t.leaf(random(8, 8, 20));
        let k = t.leaf(random(8, 8, 21));
        let spec = AttnSpec {
            batch: 2,
            tq: 4,
            tk: 4,
            heads: 2,
            key_valid: Rc::new(vec![true, true, false, true, false, true, true, true]),
            causal: false,
        };
        let o = t.attention(q, k, k, spec);
        for row in t.attention_probs(o).unwrap().chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ignored_targets_do_not_count() {
        let mut t = Tape::new();
        let x = t.leaf(Array2::zeros((2, 4)));
        let l = t.softmax_ce(x, Rc::new(vec![Some(1), None]));
        assert!((t.value(l)[[0, 0]] - 4f64.ln()).abs() < 1e-12);
        assert_eq!(t.backward(l).get(x).unwrap().row(1).sum(), 0.0);
    }
}
