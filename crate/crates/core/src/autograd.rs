//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a scalar node walks the tape in reverse and returns
//! the gradient of that scalar with respect to every node.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::sigmoid;
use crate::tensor::{gemm, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Marker for "no source row" in gather and neighbor tables.
pub const NONE: u32 = u32::MAX;

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    HCat(Var, Var),
    Scale(Var, f64),
    Gather {
        src: Var,
        idx: Vec<u32>,
    },
    SegmentMax {
        src: Var,
        argmax: Vec<u32>,
    },
    SparseConv {
        input: Var,
        weight: Var,
        nbr: Vec<u32>,
        taps: usize,
    },
    Mix {
        src: Var,
        idx: Vec<u32>,
        weights: Vec<f64>,
        k: usize,
    },
    Injected(Vec<(Var, Matrix)>),
}

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape {
    values: Vec<Matrix>,
    ops: Vec<Op>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads[v.0].take()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.values[a.0].matmul(&self.values[b.0]);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.values[a.0].matmul_nt(&self.values[b.0]);
        self.push(out, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.values[a.0].clone();
        out.axpy(1.0, &self.values[b.0]);
        self.push(out, Op::Add(a, b))
    }

    /// Adds a `1×m` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = &self.values[row.0];
        assert_eq!(r.rows(), 1, "add_row expects a row vector");
        let mut out = self.values[a.0].clone();
        assert_eq!(out.cols(), r.cols(), "add_row width");
        let rv = r.as_slice().to_vec();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(&rv) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn hcat(&mut self, a: Var, b: Var) -> Var {
        let out = self.values[a.0].hcat(&self.values[b.0]);
        self.push(out, Op::HCat(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.values[a.0].clone();
        out.scale(s);
        self.push(out, Op::Scale(a, s))
    }

    /// Row gather: output row `i` is `src[idx[i]]`, or zeros for [`NONE`].
    pub fn gather(&mut self, src: Var, idx: Vec<u32>) -> Var {
        let s = &self.values[src.0];
        let mut out = Matrix::zeros(idx.len(), s.cols());
        for (o, &i) in idx.iter().enumerate() {
            if i != NONE {
                out.row_mut(o).copy_from_slice(s.row(i as usize));
            }
        }
        self.push(out, Op::Gather { src, idx })
    }

    /// Per-segment, per-channel maximum. `segments[r]` lists the source rows
    /// of output row `r`; empty segments produce zero rows. Ties resolve to
    /// the first listed row.
    pub fn segment_max(&mut self, src: Var, segments: &[Vec<u32>]) -> Var {
        let s = &self.values[src.0];
        let cols = s.cols();
        let mut out = Matrix::zeros(segments.len(), cols);
        let mut argmax = vec![NONE; segments.len() * cols];
        for (r, seg) in segments.iter().enumerate() {
            let Some((&first, rest)) = seg.split_first() else {
                continue;
            };
            let orow = out.row_mut(r);
            orow.copy_from_slice(s.row(first as usize));
            let arg = &mut argmax[r * cols..(r + 1) * cols];
            arg.fill(first);
            for &i in rest {
                for (c, &v) in s.row(i as usize).iter().enumerate() {
                    if v > orow[c] {
                        orow[c] = v;
                        arg[c] = i;
                    }
                }
            }
        }
        self.push(out, Op::SegmentMax { src, argmax })
    }

    /// Convolution over an explicit neighbor table.
    ///
    /// `nbr[o * taps + t]` names the input row feeding tap `t` of output row
    /// `o`, or [`NONE`] for an implicit zero. `weight` is `(taps * C_in) × C_out`
    /// laid out tap-major.
    pub fn sparse_conv(&mut self, input: Var, weight: Var, nbr: Vec<u32>, taps: usize) -> Var {
        let x = &self.values[input.0];
        let w = &self.values[weight.0];
        let c_in = x.cols();
        assert_eq!(w.rows(), taps * c_in, "sparse_conv weight rows");
        assert_eq!(nbr.len() % taps, 0, "sparse_conv table");
        let n_out = nbr.len() / taps;
        let cols = im2col(x, &nbr, taps, n_out);
        let out = cols.matmul(w);
        self.push(
            out,
            Op::SparseConv {
                input,
                weight,
                nbr,
                taps,
            },
        )
    }

    /// Row mixing: output row `i` is `Σ_j weights[i*k+j] * src[idx[i*k+j]]`.
    pub fn mix(&mut self, src: Var, idx: Vec<u32>, weights: Vec<f64>, k: usize) -> Var {
        assert_eq!(idx.len(), weights.len(), "mix table");
        let s = &self.values[src.0];
        let n = if k == 0 { 0 } else { idx.len() / k };
        let mut out = Matrix::zeros(n, s.cols());
        for i in 0..n {
            let orow = out.row_mut(i);
            for j in 0..k {
                let w = weights[i * k + j];
                let src_row = s.row(idx[i * k + j] as usize);
                for (o, v) in orow.iter_mut().zip(src_row) {
                    *o += w * v;
                }
            }
        }
        self.push(
            out,
            Op::Mix {
                src,
                idx,
                weights,
                k,
            },
        )
    }

    /// Scalar node whose gradients with respect to `parents` were computed
    /// outside the tape.
    pub fn injected(&mut self, value: f64, parents: Vec<(Var, Matrix)>) -> Var {
        for (v, g) in &parents {
            assert_eq!(self.values[v.0].shape(), g.shape(), "injected gradient shape");
        }
        self.push(Matrix::filled(1, 1, value), Op::Injected(parents))
    }

    /// `Σ a ⊙ c` for a constant `c`.
    pub fn dot_const(&mut self, a: Var, c: &Matrix) -> Var {
        let v = self.values[a.0]
            .as_slice()
            .iter()
            .zip(c.as_slice())
            .map(|(x, y)| x * y)
            .sum();
        self.injected(v, vec![(a, c.clone())])
    }

    /// Sum of several scalar nodes, each with a weight.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut total = 0.0;
        let mut parents = Vec::with_capacity(terms.len());
        for &(v, w) in terms {
            assert_eq!(self.values[v.0].shape(), (1, 1), "weighted_sum expects scalars");
            total += w * self.values[v.0][(0, 0)];
            parents.push((v, Matrix::filled(1, 1, w)));
        }
        self.injected(total, parents)
    }

    /// Back-propagates from the scalar node `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.values[root.0].shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..self.values.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let vals = &self.values;
        match &self.ops[i] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                // dA = G·Bᵀ, dB = Aᵀ·G
                let (av, bv) = (&vals[a.0], &vals[b.0]);
                accumulate_gemm(grads, *a, g, false, bv, true, av.shape());
                accumulate_gemm(grads, *b, av, true, g, false, bv.shape());
            }
            Op::MatMulNT(a, b) => {
                // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                let (av, bv) = (&vals[a.0], &vals[b.0]);
                accumulate_gemm(grads, *a, g, false, bv, false, av.shape());
                accumulate_gemm(grads, *b, g, true, av, false, bv.shape());
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g);
                let mut rg = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, v) in rg.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *row, &rg);
            }
            Op::Relu(a) => {
                let x = &vals[a.0];
                let mut d = g.clone();
                for (dv, &xv) in d.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    if xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                accumulate(grads, *a, &d);
            }
            Op::Sigmoid(a) => {
                let y = &vals[i];
                let mut d = g.clone();
                for (dv, &yv) in d.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    *dv *= yv * (1.0 - yv);
                }
                accumulate(grads, *a, &d);
            }
            Op::HCat(a, b) => {
                let ca = vals[a.0].cols();
                let cb = vals[b.0].cols();
                let mut ga = Matrix::zeros(g.rows(), ca);
                let mut gb = Matrix::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                accumulate(grads, *a, &ga);
                accumulate(grads, *b, &gb);
            }
            Op::Scale(a, s) => {
                let mut d = g.clone();
                d.scale(*s);
                accumulate(grads, *a, &d);
            }
            Op::Gather { src, idx } => {
                let s = &vals[src.0];
                let entry = grad_slot(grads, *src, s.shape());
                for (o, &r) in idx.iter().enumerate() {
                    if r != NONE {
                        for (d, v) in entry.row_mut(r as usize).iter_mut().zip(g.row(o)) {
                            *d += v;
                        }
                    }
                }
            }
            Op::SegmentMax { src, argmax } => {
                let s = &vals[src.0];
                let cols = s.cols();
                let entry = grad_slot(grads, *src, s.shape());
                for r in 0..g.rows() {
                    for c in 0..cols {
                        let a = argmax[r * cols + c];
                        if a != NONE {
                            entry[(a as usize, c)] += g[(r, c)];
                        }
                    }
                }
            }
            Op::SparseConv {
                input,
                weight,
                nbr,
                taps,
            } => {
                let x = &vals[input.0];
                let w = &vals[weight.0];
                let n_out = nbr.len() / taps;
                let cols = im2col(x, nbr, *taps, n_out);
                accumulate_gemm(grads, *weight, &cols, true, g, false, w.shape());
                drop(cols);
                let dcols = g.matmul_nt(w);
                let c_in = x.cols();
                let entry = grad_slot(grads, *input, x.shape());
                for o in 0..n_out {
                    let drow = dcols.row(o);
                    for t in 0..*taps {
                        let src = nbr[o * taps + t];
                        if src != NONE {
                            let dst = entry.row_mut(src as usize);
                            for (d, v) in dst.iter_mut().zip(&drow[t * c_in..(t + 1) * c_in]) {
                                *d += v;
                            }
                        }
                    }
                }
            }
            Op::Mix {
                src,
                idx,
                weights,
                k,
            } => {
                let s = &vals[src.0];
                let entry = grad_slot(grads, *src, s.shape());
                for o in 0..g.rows() {
                    for j in 0..*k {
                        let w = weights[o * k + j];
                        let dst = entry.row_mut(idx[o * k + j] as usize);
                        for (d, v) in dst.iter_mut().zip(g.row(o)) {
                            *d += w * v;
                        }
                    }
                }
            }
            Op::Injected(parents) => {
                let s = g[(0, 0)];
                for (v, pg) in parents {
                    let entry = grad_slot(grads, *v, pg.shape());
                    entry.axpy(s, pg);
                }
            }
        }
    }
}

fn im2col(x: &Matrix, nbr: &[u32], taps: usize, n_out: usize) -> Matrix {
    let c_in = x.cols();
    let mut cols = Matrix::zeros(n_out, taps * c_in);
    for o in 0..n_out {
        let row = cols.row_mut(o);
        for t in 0..taps {
            let src = nbr[o * taps + t];
            if src != NONE {
                row[t * c_in..(t + 1) * c_in].copy_from_slice(x.row(src as usize));
            }
        }
    }
    cols
}

fn grad_slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: &Matrix) {
    match &mut grads[v.0] {
        Some(m) => m.axpy(1.0, g),
        slot @ None => *slot = Some(g.clone()),
    }
}

fn accumulate_gemm(
    grads: &mut [Option<Matrix>],
    v: Var,
    a: &Matrix,
    ta: bool,
    b: &Matrix,
    tb: bool,
    shape: (usize, usize),
) {
    let entry = grad_slot(grads, v, shape);
    gemm(1.0, a, ta, b, tb, 1.0, entry);
}
