//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the tape in reverse and accumulates gradients. Besides the usual
//! dense ops the tape has a handful of fused edge-level ops (scores,
//! per-destination softmax, weighted aggregation) so that a batch of graphs
//! costs `O(|E|·d)` instead of materializing per-edge copies of node states.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{dot, matmul_acc, Matrix};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index into a parameter store; attached to leaves created with [`Tape::param`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Shared index list (edge endpoints, segment ids).
pub type Index = Rc<[usize]>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulCol(Var, Var),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    ColSlice(Var, usize),
    GatherRows(Var, Index),
    GatherMean {
        src: Var,
        offsets: Index,
        indices: Index,
    },
    Typed {
        x: Var,
        ws: Vec<Var>,
        groups: Rc<[Vec<usize>]>,
    },
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    EdgeScore {
        center: Var,
        neighbor: Var,
        weight: Option<(Var, Index)>,
        src: Index,
        dst: Index,
    },
    SegmentSoftmax {
        scores: Var,
        seg: Index,
    },
    EdgeAggregate {
        weights: Var,
        values: Var,
        src: Index,
        dst: Index,
    },
    RowWhere {
        mask: Rc<[bool]>,
        a: Var,
        b: Var,
    },
    RowSoftmax(Var),
    SoftmaxXent {
        logits: Var,
        targets: Index,
        probs: Matrix,
    },
    SumSq(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    param: Option<ParamId>,
}

/// Records a computation for later differentiation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient w.r.t. a parameter, summed over every leaf bound to it.
    pub fn param(&self, id: ParamId) -> Option<Matrix> {
        let mut out: Option<Matrix> = None;
        for &(pid, v) in &self.params {
            if pid != id {
                continue;
            }
            if let Some(g) = &self.grads[v.0] {
                match &mut out {
                    Some(o) => o.add_assign(g),
                    None => out = Some(g.clone()),
                }
            }
        }
        out
    }
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId, value: &Matrix) -> Var {
        let v = self.push(value.clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = Matrix::from_vec(va.rows(), va.cols(), data);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Matrix::from_vec(va.rows(), va.cols(), data);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds the `1 × m` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let vb = self.value(bias);
        assert_eq!(vb.rows(), 1, "bias must be a row vector");
        assert_eq!(vb.cols(), self.value(a).cols(), "bias width mismatch");
        let b = vb.data().to_vec();
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    /// Scales row `i` of `a` by `c[i]` (`c` is `n × 1`).
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let (va, vc) = (self.value(a), self.value(c));
        assert_eq!(vc.shape(), (va.rows(), 1), "mul_col shape mismatch");
        let mut out = va.clone();
        for r in 0..out.rows() {
            let s = vc.data()[r];
            for o in out.row_mut(r) {
                *o *= s;
            }
        }
        self.push(out, Op::MulCol(a, c))
    }

    /// Column-wise concatenation.
    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "hcat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.rows(), rows, "hcat row mismatch");
            let w = vp.cols();
            for r in 0..rows {
                out.row_mut(r)[off..off + w].copy_from_slice(vp.row(r));
            }
            off += w;
        }
        self.push(out, Op::HCat(parts.to_vec()))
    }

    /// Row-wise concatenation.
    pub fn vcat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "vcat of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let vp = self.value(p);
            assert_eq!(vp.cols(), cols, "vcat column mismatch");
            data.extend_from_slice(vp.data());
        }
        let rows = data.len() / cols.max(1);
        self.push(Matrix::from_vec(rows, cols, data), Op::VCat(parts.to_vec()))
    }

    pub fn col_slice(&mut self, a: Var, start: usize, width: usize) -> Var {
        let va = self.value(a);
        assert!(start + width <= va.cols(), "col_slice out of range");
        let mut out = Matrix::zeros(va.rows(), width);
        for r in 0..va.rows() {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..start + width]);
        }
        self.push(out, Op::ColSlice(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Index) -> Var {
        let va = self.value(a);
        let mut out = Matrix::zeros(idx.len(), va.cols());
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(va.row(i));
        }
        self.push(out, Op::GatherRows(a, idx))
    }

    /// Row `g` of the output is the mean of `src` rows
    /// `indices[offsets[g]..offsets[g + 1]]`; an empty group yields zeros.
    pub fn gather_mean(&mut self, src: Var, offsets: Index, indices: Index) -> Var {
        let vs = self.value(src);
        let groups = offsets.len() - 1;
        let mut out = Matrix::zeros(groups, vs.cols());
        for g in 0..groups {
            let members = &indices[offsets[g]..offsets[g + 1]];
            if members.is_empty() {
                continue;
            }
            let inv = 1.0 / members.len() as f64;
            let orow = out.row_mut(g);
            for &i in members {
                for (o, v) in orow.iter_mut().zip(vs.row(i)) {
                    *o += v * inv;
                }
            }
        }
        self.push(
            out,
            Op::GatherMean {
                src,
                offsets,
                indices,
            },
        )
    }

    /// Row-wise typed linear map: row `i` of the output is `x_i · ws[t]` for
    /// the group `t` that contains `i`. Rows in no group are zero.
    pub fn typed_linear(&mut self, x: Var, ws: &[Var], groups: Rc<[Vec<usize>]>) -> Var {
        assert_eq!(ws.len(), groups.len(), "one weight per group");
        let vx = self.value(x);
        let out_cols = self.value(ws[0]).cols();
        let mut out = Matrix::zeros(vx.rows(), out_cols);
        for (w, rows) in ws.iter().zip(groups.iter()) {
            let vw = self.value(*w);
            assert_eq!(vw.rows(), vx.cols(), "typed_linear shape mismatch");
            for &r in rows {
                matmul_acc(vx.row(r), vw.data(), out.row_mut(r), 1, vw.rows(), out_cols);
            }
        }
        self.push(
            out,
            Op::Typed {
                x,
                ws: ws.to_vec(),
                groups,
            },
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(libm::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// Per-edge score `Σ_k w_k · center[dst_e, k] · neighbor[src_e, k]`,
    /// where `w` is row `rel_e` of `weight` or all ones. Output is `E × 1`.
    pub fn edge_score(
        &mut self,
        center: Var,
        neighbor: Var,
        weight: Option<(Var, Index)>,
        src: Index,
        dst: Index,
    ) -> Var {
        assert_eq!(src.len(), dst.len());
        let (vc, vn) = (self.value(center), self.value(neighbor));
        assert_eq!(vc.cols(), vn.cols(), "edge_score width mismatch");
        let mut out = Matrix::zeros(src.len(), 1);
        for e in 0..src.len() {
            let c = vc.row(dst[e]);
            let n = vn.row(src[e]);
            out.data_mut()[e] = match &weight {
                Some((w, rel)) => {
                    let wr = self.value(*w).row(rel[e]);
                    c.iter().zip(n).zip(wr).map(|((a, b), w)| a * b * w).sum()
                }
                None => dot(c, n),
            };
        }
        self.push(
            out,
            Op::EdgeScore {
                center,
                neighbor,
                weight,
                src,
                dst,
            },
        )
    }

    /// Softmax of `E × 1` scores within each segment (edges sharing `seg[e]`).
    pub fn segment_softmax(&mut self, scores: Var, seg: Index) -> Var {
        let vs = self.value(scores);
        assert_eq!(vs.shape(), (seg.len(), 1));
        let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
        let mut max = vec![f64::NEG_INFINITY; n_seg];
        for (e, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(vs.data()[e]);
        }
        let mut out = Matrix::zeros(seg.len(), 1);
        let mut sum = vec![0.0; n_seg];
        for (e, &s) in seg.iter().enumerate() {
            let x = libm::exp(vs.data()[e] - max[s]);
            out.data_mut()[e] = x;
            sum[s] += x;
        }
        for (e, &s) in seg.iter().enumerate() {
            out.data_mut()[e] /= sum[s];
        }
        self.push(out, Op::SegmentSoftmax { scores, seg })
    }

    /// `out[dst_e] += weights_e · values[src_e]`, with `n_out` output rows.
    pub fn edge_aggregate(
        &mut self,
        weights: Var,
        values: Var,
        src: Index,
        dst: Index,
        n_out: usize,
    ) -> Var {
        let (vw, vv) = (self.value(weights), self.value(values));
        assert_eq!(vw.shape(), (src.len(), 1));
        let mut out = Matrix::zeros(n_out, vv.cols());
        for e in 0..src.len() {
            let w = vw.data()[e];
            let v = vv.row(src[e]);
            for (o, x) in out.row_mut(dst[e]).iter_mut().zip(v) {
                *o += w * x;
            }
        }
        self.push(
            out,
            Op::EdgeAggregate {
                weights,
                values,
                src,
                dst,
            },
        )
    }

    /// Row `i` from `a` where `mask[i]`, otherwise from `b`.
    pub fn row_where(&mut self, mask: Rc<[bool]>, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape());
        assert_eq!(mask.len(), va.rows());
        let mut out = vb.clone();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(r).copy_from_slice(va.row(r));
            }
        }
        self.push(out, Op::RowWhere { mask, a, b })
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::RowSoftmax(a))
    }

    /// Mean softmax cross-entropy of each logit row against its target column.
    pub fn softmax_xent(&mut self, logits: Var, targets: Index) -> Var {
        let vl = self.value(logits);
        assert_eq!(vl.rows(), targets.len());
        let mut probs = vl.clone();
        let mut loss = 0.0;
        for r in 0..probs.rows() {
            let row = probs.row_mut(r);
            let lse = log_sum_exp(row);
            loss += lse - row[targets[r]];
            softmax_in_place(row);
        }
        let n = targets.len().max(1) as f64;
        self.push(
            Matrix::scalar(loss / n),
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            },
        )
    }

    /// `Σ a²` as a `1 × 1` value.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum_sq());
        self.push(out, Op::SumSq(a))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, Var(i))))
            .collect();
        Gradients { grads, params }
    }

    fn backprop(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.matmul_t(vb));
                accumulate(grads, *b, va.t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                // out = a bᵀ ; da = g b ; db = gᵀ a
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.matmul(vb));
                accumulate(grads, *b, g.t_matmul(va));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, hadamard(g, vb));
                accumulate(grads, *b, hadamard(g, va));
            }
            Op::AddRow(a, bias) => {
                accumulate(grads, *a, g.clone());
                let mut gb = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *bias, gb);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|v| v * s)),
            Op::MulCol(a, c) => {
                let (va, vc) = (self.value(*a), self.value(*c));
                let mut ga = g.clone();
                let mut gc = Matrix::zeros(vc.rows(), 1);
                for r in 0..g.rows() {
                    let s = vc.data()[r];
                    for o in ga.row_mut(r) {
                        *o *= s;
                    }
                    gc.data_mut()[r] = dot(g.row(r), va.row(r));
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *c, gc);
            }
            Op::HCat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut gp = Matrix::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    accumulate(grads, p, gp);
                    off += w;
                }
            }
            Op::VCat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.value(p).shape();
                    let gp = Matrix::from_vec(r, c, g.data()[off..off + r * c].to_vec());
                    accumulate(grads, p, gp);
                    off += r * c;
                }
            }
            Op::ColSlice(a, start) => {
                let va = self.value(*a);
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let va = self.value(*a);
                let mut ga = Matrix::zeros(va.rows(), va.cols());
                for (o, &i) in idx.iter().enumerate() {
                    add_into(ga.row_mut(i), g.row(o), 1.0);
                }
                accumulate(grads, *a, ga);
            }
            Op::GatherMean {
                src,
                offsets,
                indices,
            } => {
                let vs = self.value(*src);
                let mut gs = Matrix::zeros(vs.rows(), vs.cols());
                for grp in 0..offsets.len() - 1 {
                    let members = &indices[offsets[grp]..offsets[grp + 1]];
                    if members.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / members.len() as f64;
                    for &i in members {
                        add_into(gs.row_mut(i), g.row(grp), inv);
                    }
                }
                accumulate(grads, *src, gs);
            }
            Op::Typed { x, ws, groups } => {
                let vx = self.value(*x);
                let mut gx = Matrix::zeros(vx.rows(), vx.cols());
                for (w, rows) in ws.iter().zip(groups.iter()) {
                    let vw = self.value(*w);
                    let mut gw = Matrix::zeros(vw.rows(), vw.cols());
                    for &r in rows {
                        let gr = g.row(r);
                        let xr = vx.row(r);
                        // dx_r = g_r Wᵀ
                        let gxr = gx.row_mut(r);
                        for (k, o) in gxr.iter_mut().enumerate() {
                            *o += dot(gr, vw.row(k));
                        }
                        // dW += x_rᵀ g_r
                        for (k, &xv) in xr.iter().enumerate() {
                            if xv != 0.0 {
                                add_into(gw.row_mut(k), gr, xv);
                            }
                        }
                    }
                    accumulate(grads, *w, gw);
                }
                accumulate(grads, *x, gx);
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { gv * slope })
                    .collect();
                accumulate(grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
            }
            Op::Sigmoid(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| gv * y * (1.0 - y))
                    .collect();
                accumulate(grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
            }
            Op::Tanh(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                accumulate(grads, *a, Matrix::from_vec(g.rows(), g.cols(), data));
            }
            Op::EdgeScore {
                center,
                neighbor,
                weight,
                src,
                dst,
            } => {
                let (vc, vn) = (self.value(*center), self.value(*neighbor));
                let mut gc = Matrix::zeros(vc.rows(), vc.cols());
                let mut gn = Matrix::zeros(vn.rows(), vn.cols());
                let mut gw = weight
                    .as_ref()
                    .map(|(w, _)| Matrix::zeros(self.value(*w).rows(), self.value(*w).cols()));
                for e in 0..src.len() {
                    let ge = g.data()[e];
                    if ge == 0.0 {
                        continue;
                    }
                    let (c, n) = (vc.row(dst[e]), vn.row(src[e]));
                    match weight {
                        Some((w, rel)) => {
                            let wr = self.value(*w).row(rel[e]);
                            let gcr = gc.row_mut(dst[e]);
                            for k in 0..c.len() {
                                gcr[k] += ge * wr[k] * n[k];
                            }
                            let gnr = gn.row_mut(src[e]);
                            for k in 0..c.len() {
                                gnr[k] += ge * wr[k] * c[k];
                            }
                            let gwr = gw.as_mut().unwrap().row_mut(rel[e]);
                            for k in 0..c.len() {
                                gwr[k] += ge * c[k] * n[k];
                            }
                        }
                        None => {
                            add_into(gc.row_mut(dst[e]), n, ge);
                            add_into(gn.row_mut(src[e]), c, ge);
                        }
                    }
                }
                accumulate(grads, *center, gc);
                accumulate(grads, *neighbor, gn);
                if let (Some((w, _)), Some(gw)) = (weight, gw) {
                    accumulate(grads, *w, gw);
                }
            }
            Op::SegmentSoftmax { scores, seg } => {
                let y = node.value.data();
                let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut inner = vec![0.0; n_seg];
                for (e, &s) in seg.iter().enumerate() {
                    inner[s] += g.data()[e] * y[e];
                }
                let data = seg
                    .iter()
                    .enumerate()
                    .map(|(e, &s)| y[e] * (g.data()[e] - inner[s]))
                    .collect();
                accumulate(grads, *scores, Matrix::from_vec(seg.len(), 1, data));
            }
            Op::EdgeAggregate {
                weights,
                values,
                src,
                dst,
            } => {
                let (vw, vv) = (self.value(*weights), self.value(*values));
                let mut gw = Matrix::zeros(src.len(), 1);
                let mut gv = Matrix::zeros(vv.rows(), vv.cols());
                for e in 0..src.len() {
                    let go = g.row(dst[e]);
                    gw.data_mut()[e] = dot(go, vv.row(src[e]));
                    add_into(gv.row_mut(src[e]), go, vw.data()[e]);
                }
                accumulate(grads, *weights, gw);
                accumulate(grads, *values, gv);
            }
            Op::RowWhere { mask, a, b } => {
                let mut ga = g.clone();
                let mut gb = g.clone();
                for (r, &m) in mask.iter().enumerate() {
                    let zero = if m { gb.row_mut(r) } else { ga.row_mut(r) };
                    zero.iter_mut().for_each(|v| *v = 0.0);
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::RowSoftmax(a) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner = dot(g.row(r), y.row(r));
                    for (k, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = y.get(r, k) * (g.get(r, k) - inner);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SoftmaxXent {
                logits,
                targets,
                probs,
            } => {
                let scale = g.item() / targets.len().max(1) as f64;
                let mut gl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let v = gl.get(r, t);
                    gl.set(r, t, v - 1.0);
                }
                gl.scale_assign(scale);
                accumulate(grads, *logits, gl);
            }
            Op::SumSq(a) => {
                let s = 2.0 * g.item();
                accumulate(grads, *a, self.value(*a).map(|v| v * s));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    for (d, x) in dst.iter_mut().zip(src) {
        *d += s * x;
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(xs.iter().map(|x| libm::exp(x - max)).sum::<f64>())
}

pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}
