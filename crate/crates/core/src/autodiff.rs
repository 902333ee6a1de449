//! A small reverse-mode automatic differentiation tape over [`Matrix`].
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! node list is a valid topological order for backpropagation. The op set is
//! exactly what the encoders, hypersphere measurement, energies and losses
//! need; nothing more.

use crate::tensor::{sigmoid, softplus, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Probabilities below this are clamped before taking the log in
/// [`Tape::nll_probs`]; the clamped region has zero gradient.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + b` where `b` is a `1 x cols` row broadcast over every row.
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Softplus(Var),
    Relu(Var),
    SoftmaxRows(Var),
    /// Per-row `-ln p[target]` of a probability matrix.
    NllProbs(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    /// `out[r] = in[r - 1]` inside blocks of `block` rows, zero at block start.
    ShiftDown(Var, usize),
    /// `out[r] = in[r + 1]` inside blocks of `block` rows, zero at block end.
    ShiftUp(Var, usize),
    RowDot(Var, Var),
    RowSum(Var),
    SumAll(Var),
    /// `max(0, ||f_k - P_c|| - r_c)` for every mention row `k` and centroid row `c`;
    /// `radii` is a `1 x C` row.
    HingeDist {
        points: Var,
        centroids: Var,
        radii: Var,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of the right shape when nothing flowed into it.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(v).shape();
            Matrix::zeros(r, c)
        })
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads[v.0].take()
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

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar node");
        m.get(0, 0)
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(row));
        assert_eq!(bm.rows(), 1, "broadcast operand must be a row vector");
        assert_eq!(am.cols(), bm.cols(), "broadcast width mismatch");
        let mut v = am.clone();
        for r in 0..v.rows() {
            for (x, &b) in v.row_mut(r).iter_mut().zip(bm.row(0)) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut v = Matrix::zeros(m.rows(), m.cols());
        for r in 0..m.rows() {
            let p = crate::tensor::softmax(m.row(r));
            v.row_mut(r).copy_from_slice(&p);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn nll_probs(&mut self, probs: Var, targets: &[usize]) -> Var {
        let m = self.value(probs);
        assert_eq!(m.rows(), targets.len(), "one target per row");
        let vals: Vec<f64> = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -m.get(r, t).max(PROB_FLOOR).ln())
            .collect();
        let v = Matrix::column_vector(&vals);
        self.push(v, Op::NllProbs(probs, targets.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let m = self.value(a);
        let mut v = Matrix::zeros(indices.len(), m.cols());
        for (r, &i) in indices.iter().enumerate() {
            v.row_mut(r).copy_from_slice(m.row(i));
        }
        self.push(v, Op::GatherRows(a, indices.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let pm = self.value(p);
                assert_eq!(pm.rows(), rows, "concat row mismatch");
                v.row_mut(r)[offset..offset + pm.cols()].copy_from_slice(pm.row(r));
                offset += pm.cols();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn shift_down(&mut self, a: Var, block: usize) -> Var {
        let v = shift_rows(self.value(a), block, true);
        self.push(v, Op::ShiftDown(a, block))
    }

    pub fn shift_up(&mut self, a: Var, block: usize) -> Var {
        let v = shift_rows(self.value(a), block, false);
        self.push(v, Op::ShiftUp(a, block))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape(), "row_dot shape mismatch");
        let vals: Vec<f64> = (0..am.rows())
            .map(|r| crate::tensor::dot(am.row(r), bm.row(r)))
            .collect();
        let v = Matrix::column_vector(&vals);
        self.push(v, Op::RowDot(a, b))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let vals: Vec<f64> = (0..m.rows()).map(|r| m.row(r).iter().sum()).collect();
        let v = Matrix::column_vector(&vals);
        self.push(v, Op::RowSum(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::from_vec(1, 1, vec![self.value(a).sum()]);
        self.push(v, Op::SumAll(a))
    }

    pub fn hinge_dist(&mut self, points: Var, centroids: Var, radii: Var) -> Var {
        let (pm, cm, rm) = (self.value(points), self.value(centroids), self.value(radii));
        assert_eq!(pm.cols(), cm.cols(), "embedding / centroid width mismatch");
        assert_eq!(rm.shape(), (1, cm.rows()), "one radius per centroid");
        let mut v = Matrix::zeros(pm.rows(), cm.rows());
        for k in 0..pm.rows() {
            for c in 0..cm.rows() {
                let d = euclidean(pm.row(k), cm.row(c));
                v.set(k, c, (d - rm.get(0, c)).max(0.0));
            }
        }
        self.push(
            v,
            Op::HingeDist {
                points,
                centroids,
                radii,
            },
        )
    }

    /// Backpropagates from the scalar node `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(
            self.value(output).shape(),
            (1, 1),
            "backward needs a scalar"
        );
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_t(self.value(*b)));
                acc(*b, self.value(*a).t_matmul(g));
            }
            Op::MatMulT(a, b) => {
                // out = A B^T: dA = G B, dB = G^T A
                acc(*a, g.matmul(self.value(*b)));
                acc(*b, g.t_matmul(self.value(*a)));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                let mut d = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (x, &y) in d.row_mut(0).iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
                acc(*a, g.clone());
                acc(*row, d);
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |x, t| x * (1.0 - t * t))),
            Op::Softplus(a) => acc(*a, g.zip_map(self.value(*a), |x, z| x * sigmoid(z))),
            Op::Relu(a) => acc(
                *a,
                g.zip_map(self.value(*a), |x, z| if z > 0.0 { x } else { 0.0 }),
            ),
            Op::SoftmaxRows(a) => {
                let p = &node.value;
                let mut d = Matrix::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    let inner = crate::tensor::dot(g.row(r), p.row(r));
                    for c in 0..p.cols() {
                        d.set(r, c, p.get(r, c) * (g.get(r, c) - inner));
                    }
                }
                acc(*a, d);
            }
            Op::NllProbs(a, targets) => {
                let p = self.value(*a);
                let mut d = Matrix::zeros(p.rows(), p.cols());
                for (r, &t) in targets.iter().enumerate() {
                    let pr = p.get(r, t);
                    if pr > PROB_FLOOR {
                        d.set(r, t, -g.get(r, 0) / pr);
                    }
                }
                acc(*a, d);
            }
            Op::GatherRows(a, indices) => {
                let src = self.value(*a);
                let mut d = Matrix::zeros(src.rows(), src.cols());
                for (r, &i) in indices.iter().enumerate() {
                    for (x, &y) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    let mut d = Matrix::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        d.row_mut(r)
                            .copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    acc(p, d);
                }
            }
            Op::ShiftDown(a, block) => acc(*a, shift_rows(g, *block, false)),
            Op::ShiftUp(a, block) => acc(*a, shift_rows(g, *block, true)),
            Op::RowDot(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                let mut da = Matrix::zeros(am.rows(), am.cols());
                let mut db = Matrix::zeros(bm.rows(), bm.cols());
                for r in 0..am.rows() {
                    let gr = g.get(r, 0);
                    for c in 0..am.cols() {
                        da.set(r, c, gr * bm.get(r, c));
                        db.set(r, c, gr * am.get(r, c));
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::RowSum(a) => {
                let m = self.value(*a);
                let mut d = Matrix::zeros(m.rows(), m.cols());
                for r in 0..m.rows() {
                    d.row_mut(r).fill(g.get(r, 0));
                }
                acc(*a, d);
            }
            Op::SumAll(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Matrix::filled(r, c, g.get(0, 0)));
            }
            Op::HingeDist {
                points,
                centroids,
                radii,
            } => {
                let (pm, cm, rm) = (
                    self.value(*points),
                    self.value(*centroids),
                    self.value(*radii),
                );
                let mut dp = Matrix::zeros(pm.rows(), pm.cols());
                let mut dc = Matrix::zeros(cm.rows(), cm.cols());
                let mut dr = Matrix::zeros(1, cm.rows());
                for k in 0..pm.rows() {
                    for c in 0..cm.rows() {
                        let gkc = g.get(k, c);
                        if gkc == 0.0 {
                            continue;
                        }
                        let d = euclidean(pm.row(k), cm.row(c));
                        // Subgradient 0 on and inside the sphere.
                        if d <= rm.get(0, c) {
                            continue;
                        }
                        dr.row_mut(0)[c] -= gkc;
                        for j in 0..pm.cols() {
                            let u = (pm.get(k, j) - cm.get(c, j)) / d;
                            dp.row_mut(k)[j] += gkc * u;
                            dc.row_mut(c)[j] -= gkc * u;
                        }
                    }
                }
                acc(*points, dp);
                acc(*centroids, dc);
                acc(*radii, dr);
            }
        }
    }
}

fn shift_rows(m: &Matrix, block: usize, down: bool) -> Matrix {
    assert!(
        block > 0 && m.rows().is_multiple_of(block),
        "rows must tile into blocks"
    );
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let pos = r % block;
        let src = if down {
            (pos > 0).then(|| r - 1)
        } else {
            (pos + 1 < block).then(|| r + 1)
        };
        if let Some(s) = src {
            out.row_mut(r).copy_from_slice(m.row(s));
        }
    }
    out
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
