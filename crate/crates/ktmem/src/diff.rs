//! Reverse-mode autodiff over an append-only tape.
//!
//! Each op validates shapes, computes its forward value eagerly, and pushes
//! one node. `backward` walks the tape once in reverse, accumulating adjoints
//! per node. Graphs are rebuilt from scratch for every sequence, which keeps
//! the lifetime story trivial: a `Var` is just an index into the tape that
//! produced it, and parents always precede children.

use crate::tensor::{sigmoid, softmax_slice, softplus, Tensor, TensorError};

/// Clamp bound for probabilities entering a log in the cross-entropy op.
/// Inputs outside `[BCE_EPS, 1 - BCE_EPS]` carry zero gradient.
pub const BCE_EPS: f64 = 1e-8;

/// Norm floor in the cosine-similarity op. Each norm in the denominator is
/// clamped to at least this value, which guards zero-norm rows while keeping
/// the similarity exactly scale invariant for healthy inputs (an additive
/// guard would break invariance at the 1e-8 level).
pub const COSINE_NORM_FLOOR: f64 = 1e-8;

/// Handle to a value on the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    LookupRow { m: Var, row: usize },
    MatVec { m: Var, x: Var },
    VecMat { w: Var, m: Var },
    Affine { x: Var, w: Var, b: Var },
    Softmax { z: Var },
    Sigmoid { z: Var },
    Tanh { z: Var },
    Softplus { z: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    OneMinus { a: Var },
    AddConst { a: Var },
    ScaleVec { s: Var, v: Var },
    Concat { a: Var, b: Var },
    IndexElem { v: Var, index: usize },
    Dot { a: Var, b: Var },
    CosineSim { x: Var, m: Var },
    EraseAddWrite { m: Var, w: Var, e: Var, a: Var },
    Bce { p: Var, label: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by one backward pass, indexed by `Var`. Vars the loss
/// does not depend on have no entry.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Input node. Leaves carry no history; gradients accumulate onto them
    /// like any other node, and the caller decides which leaves are
    /// parameters.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn want_matrix(&self, op: &'static str, v: Var) -> Result<(), TensorError> {
        if !self.value(v).is_matrix() {
            return Err(TensorError::BadRank {
                op,
                expected: "a rank-2 tensor",
                found: self.value(v).shape().to_vec(),
            });
        }
        Ok(())
    }

    fn want_vector(&self, op: &'static str, v: Var) -> Result<(), TensorError> {
        if !self.value(v).is_vector() {
            return Err(TensorError::BadRank {
                op,
                expected: "a rank-1 tensor",
                found: self.value(v).shape().to_vec(),
            });
        }
        Ok(())
    }

    fn want_finite(&self, op: &'static str, v: Var) -> Result<(), TensorError> {
        if !self.value(v).all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        Ok(())
    }

    /// Row `row` of a matrix, as a vector.
    pub fn lookup_row(&mut self, m: Var, row: usize) -> Result<Var, TensorError> {
        self.want_matrix("lookup_row", m)?;
        let mt = self.value(m);
        if row >= mt.rows() {
            return Err(TensorError::IndexOutOfBounds {
                op: "lookup_row",
                index: row,
                extent: mt.rows(),
            });
        }
        let value = Tensor::vector(mt.row(row).to_vec());
        Ok(self.push(value, Op::LookupRow { m, row }))
    }

    /// y_i = sum_j M(i,j) x_j for M of shape [r,c] and x of shape [c].
    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var, TensorError> {
        self.want_matrix("matvec", m)?;
        self.want_vector("matvec", x)?;
        let (mt, xt) = (self.value(m), self.value(x));
        if mt.cols() != xt.len() {
            return Err(TensorError::ShapeMismatch {
                op: "matvec",
                left: mt.shape().to_vec(),
                right: xt.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; mt.rows()];
        for (i, o) in out.iter_mut().enumerate() {
            *o = mt
                .row(i)
                .iter()
                .zip(xt.data())
                .map(|(a, b)| a * b)
                .sum();
        }
        Ok(self.push(Tensor::vector(out), Op::MatVec { m, x }))
    }

    /// y_j = sum_i w_i M(i,j): a weighted combination of the rows of M.
    pub fn vecmat(&mut self, w: Var, m: Var) -> Result<Var, TensorError> {
        self.want_vector("vecmat", w)?;
        self.want_matrix("vecmat", m)?;
        let (wt, mt) = (self.value(w), self.value(m));
        if wt.len() != mt.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "vecmat",
                left: wt.shape().to_vec(),
                right: mt.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; mt.cols()];
        for i in 0..mt.rows() {
            let wi = wt.data()[i];
            for (o, v) in out.iter_mut().zip(mt.row(i)) {
                *o += wi * v;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::VecMat { w, m }))
    }

    /// y_j = sum_i x_i W(i,j) + b_j for W of shape [d_in, d_out].
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        self.want_vector("affine", x)?;
        self.want_matrix("affine", w)?;
        self.want_vector("affine", b)?;
        let (xt, wt, bt) = (self.value(x), self.value(w), self.value(b));
        if wt.rows() != xt.len() {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                left: xt.shape().to_vec(),
                right: wt.shape().to_vec(),
            });
        }
        if wt.cols() != bt.len() {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                left: wt.shape().to_vec(),
                right: bt.shape().to_vec(),
            });
        }
        let mut out = bt.data().to_vec();
        for (i, &xi) in xt.data().iter().enumerate() {
            for (o, v) in out.iter_mut().zip(wt.row(i)) {
                *o += xi * v;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::Affine { x, w, b }))
    }

    /// Softmax over a vector, max-subtracted so any finite input is safe.
    pub fn softmax(&mut self, z: Var) -> Result<Var, TensorError> {
        self.want_vector("softmax", z)?;
        self.want_finite("softmax", z)?;
        let out = softmax_slice(self.value(z).data());
        Ok(self.push(Tensor::vector(out), Op::Softmax { z }))
    }

    pub fn sigmoid(&mut self, z: Var) -> Result<Var, TensorError> {
        self.want_finite("sigmoid", z)?;
        let zt = self.value(z);
        let out = Tensor::from_vec(
            zt.shape(),
            zt.data().iter().map(|&v| sigmoid(v)).collect(),
        )?;
        Ok(self.push(out, Op::Sigmoid { z }))
    }

    pub fn tanh(&mut self, z: Var) -> Result<Var, TensorError> {
        self.want_finite("tanh", z)?;
        let zt = self.value(z);
        let out = Tensor::from_vec(zt.shape(), zt.data().iter().map(|v| v.tanh()).collect())?;
        Ok(self.push(out, Op::Tanh { z }))
    }

    pub fn softplus(&mut self, z: Var) -> Result<Var, TensorError> {
        self.want_finite("softplus", z)?;
        let zt = self.value(z);
        let out = Tensor::from_vec(
            zt.shape(),
            zt.data().iter().map(|&v| softplus(v)).collect(),
        )?;
        Ok(self.push(out, Op::Softplus { z }))
    }

    fn want_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.want_same_shape("add", a, b)?;
        let out = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x + y)
                .collect(),
        )?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.want_same_shape("mul", a, b)?;
        let out = Tensor::from_vec(
            self.value(a).shape(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x * y)
                .collect(),
        )?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    /// 1 - a, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let at = self.value(a);
        let out = Tensor::from_vec(at.shape(), at.data().iter().map(|v| 1.0 - v).collect())
            .expect("shape preserved");
        self.push(out, Op::OneMinus { a })
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let at = self.value(a);
        let out = Tensor::from_vec(at.shape(), at.data().iter().map(|v| v + c).collect())
            .expect("shape preserved");
        self.push(out, Op::AddConst { a })
    }

    /// s * v for a shape-[1] scale s.
    pub fn scale_vec(&mut self, s: Var, v: Var) -> Result<Var, TensorError> {
        if self.value(s).len() != 1 {
            return Err(TensorError::BadRank {
                op: "scale_vec",
                expected: "a single-element tensor",
                found: self.value(s).shape().to_vec(),
            });
        }
        let sv = self.value(s).data()[0];
        let vt = self.value(v);
        let out = Tensor::from_vec(vt.shape(), vt.data().iter().map(|x| sv * x).collect())?;
        Ok(self.push(out, Op::ScaleVec { s, v }))
    }

    /// [a; b] for vectors a and b.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.want_vector("concat", a)?;
        self.want_vector("concat", b)?;
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        Ok(self.push(Tensor::vector(data), Op::Concat { a, b }))
    }

    /// Single element of a vector, as a shape-[1] tensor.
    pub fn index_elem(&mut self, v: Var, index: usize) -> Result<Var, TensorError> {
        self.want_vector("index_elem", v)?;
        let vt = self.value(v);
        if index >= vt.len() {
            return Err(TensorError::IndexOutOfBounds {
                op: "index_elem",
                index,
                extent: vt.len(),
            });
        }
        let value = Tensor::scalar(vt.data()[index]);
        Ok(self.push(value, Op::IndexElem { v, index }))
    }

    /// Inner product of two equal-length vectors, as a shape-[1] tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.want_vector("dot", a)?;
        self.want_vector("dot", b)?;
        self.want_same_shape("dot", a, b)?;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot { a, b }))
    }

    /// K_i = (x . M(i)) / (max(|x|, floor) * max(|M(i)|, floor)).
    /// Clamping each norm separately keeps K scale invariant whenever both
    /// norms sit above the floor, and bounds |K| by 1 always.
    pub fn cosine_sim(&mut self, x: Var, m: Var) -> Result<Var, TensorError> {
        self.want_vector("cosine_sim", x)?;
        self.want_matrix("cosine_sim", m)?;
        let (xt, mt) = (self.value(x), self.value(m));
        if xt.len() != mt.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "cosine_sim",
                left: xt.shape().to_vec(),
                right: mt.shape().to_vec(),
            });
        }
        let nx = xt.l2_norm().max(COSINE_NORM_FLOOR);
        let mut out = vec![0.0; mt.rows()];
        for (i, o) in out.iter_mut().enumerate() {
            let row = mt.row(i);
            let s: f64 = row.iter().zip(xt.data()).map(|(a, b)| a * b).sum();
            let nm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(COSINE_NORM_FLOOR);
            *o = s / (nx * nm);
        }
        Ok(self.push(Tensor::vector(out), Op::CosineSim { x, m }))
    }

    /// Erase-then-add memory transition:
    /// out(i,j) = M(i,j) * (1 - w_i e_j) + w_i a_j.
    pub fn erase_add_write(&mut self, m: Var, w: Var, e: Var, a: Var) -> Result<Var, TensorError> {
        self.want_matrix("erase_add_write", m)?;
        self.want_vector("erase_add_write", w)?;
        self.want_vector("erase_add_write", e)?;
        self.want_vector("erase_add_write", a)?;
        let (mt, wt, et, at) = (self.value(m), self.value(w), self.value(e), self.value(a));
        if wt.len() != mt.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "erase_add_write",
                left: mt.shape().to_vec(),
                right: wt.shape().to_vec(),
            });
        }
        if et.len() != mt.cols() || at.len() != mt.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "erase_add_write",
                left: mt.shape().to_vec(),
                right: if et.len() != mt.cols() {
                    et.shape().to_vec()
                } else {
                    at.shape().to_vec()
                },
            });
        }
        let mut out = Tensor::zeros(mt.shape());
        for i in 0..mt.rows() {
            let wi = wt.data()[i];
            let src = mt.row(i);
            let dst = out.row_mut(i);
            for j in 0..src.len() {
                dst[j] = src[j] * (1.0 - wi * et.data()[j]) + wi * at.data()[j];
            }
        }
        Ok(self.push(out, Op::EraseAddWrite { m, w, e, a }))
    }

    /// Binary cross-entropy of a shape-[1] probability against a 0/1 label,
    /// clamping p to [BCE_EPS, 1 - BCE_EPS] before the logs. Inputs that get
    /// clamped carry zero gradient.
    pub fn bce(&mut self, p: Var, label: u8) -> Result<Var, TensorError> {
        debug_assert!(label <= 1);
        if self.value(p).len() != 1 {
            return Err(TensorError::BadRank {
                op: "bce",
                expected: "a single-element tensor",
                found: self.value(p).shape().to_vec(),
            });
        }
        self.want_finite("bce", p)?;
        let r = f64::from(label);
        let pc = self.value(p).data()[0].clamp(BCE_EPS, 1.0 - BCE_EPS);
        let loss = -(r * pc.ln() + (1.0 - r) * (1.0 - pc).ln());
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p, label: r }))
    }

    /// Adjoints of every node the loss depends on. The loss must be a
    /// single-element tensor.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::BadRank {
                op: "backward",
                expected: "a single-element loss",
                found: self.value(loss).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_parents(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc<'a>(
        &self,
        grads: &'a mut Vec<Option<Tensor>>,
        v: Var,
    ) -> &'a mut Tensor {
        let shape = self.value(v).shape().to_vec();
        grads[v.0].get_or_insert_with(|| Tensor::zeros(&shape))
    }

    fn accumulate_parents(&self, id: usize, g: &Tensor, grads: &mut Vec<Option<Tensor>>) {
        let y = &self.nodes[id].value;
        match self.nodes[id].op.clone() {
            Op::Leaf => {}
            Op::LookupRow { m, row } => {
                let gm = self.acc(grads, m);
                for (dst, src) in gm.row_mut(row).iter_mut().zip(g.data()) {
                    *dst += src;
                }
            }
            Op::MatVec { m, x } => {
                let xt = self.value(x).clone();
                let mt = self.value(m);
                let rows = mt.rows();
                {
                    let gm = self.acc(grads, m);
                    for i in 0..rows {
                        let gi = g.data()[i];
                        for (dst, xv) in gm.row_mut(i).iter_mut().zip(xt.data()) {
                            *dst += gi * xv;
                        }
                    }
                }
                let mt = self.value(m).clone();
                let gx = self.acc(grads, x);
                for i in 0..rows {
                    let gi = g.data()[i];
                    for (dst, mv) in gx.data_mut().iter_mut().zip(mt.row(i)) {
                        *dst += gi * mv;
                    }
                }
            }
            Op::VecMat { w, m } => {
                let mt = self.value(m).clone();
                let wt = self.value(w).clone();
                {
                    let gw = self.acc(grads, w);
                    for i in 0..mt.rows() {
                        gw.data_mut()[i] += mt
                            .row(i)
                            .iter()
                            .zip(g.data())
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
                let gm = self.acc(grads, m);
                for i in 0..mt.rows() {
                    let wi = wt.data()[i];
                    for (dst, gv) in gm.row_mut(i).iter_mut().zip(g.data()) {
                        *dst += wi * gv;
                    }
                }
            }
            Op::Affine { x, w, b } => {
                let xt = self.value(x).clone();
                let wt = self.value(w).clone();
                {
                    let gx = self.acc(grads, x);
                    for (i, dst) in gx.data_mut().iter_mut().enumerate() {
                        *dst += wt
                            .row(i)
                            .iter()
                            .zip(g.data())
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
                {
                    let gw = self.acc(grads, w);
                    for (i, &xi) in xt.data().iter().enumerate() {
                        for (dst, gv) in gw.row_mut(i).iter_mut().zip(g.data()) {
                            *dst += xi * gv;
                        }
                    }
                }
                self.acc(grads, b).add_assign(g);
            }
            Op::Softmax { z } => {
                let s: f64 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
                let gz = self.acc(grads, z);
                for ((dst, &yi), &gi) in gz.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                    *dst += yi * (gi - s);
                }
            }
            Op::Sigmoid { z } => {
                let gz = self.acc(grads, z);
                for ((dst, &yi), &gi) in gz.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                    *dst += gi * yi * (1.0 - yi);
                }
            }
            Op::Tanh { z } => {
                let gz = self.acc(grads, z);
                for ((dst, &yi), &gi) in gz.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                    *dst += gi * (1.0 - yi * yi);
                }
            }
            Op::Softplus { z } => {
                let zt = self.value(z).clone();
                let gz = self.acc(grads, z);
                for ((dst, &zi), &gi) in gz.data_mut().iter_mut().zip(zt.data()).zip(g.data()) {
                    *dst += gi * sigmoid(zi);
                }
            }
            Op::Add { a, b } => {
                self.acc(grads, a).add_assign(g);
                self.acc(grads, b).add_assign(g);
            }
            Op::Mul { a, b } => {
                let at = self.value(a).clone();
                let bt = self.value(b).clone();
                {
                    let ga = self.acc(grads, a);
                    for ((dst, &bv), &gv) in
                        ga.data_mut().iter_mut().zip(bt.data()).zip(g.data())
                    {
                        *dst += gv * bv;
                    }
                }
                let gb = self.acc(grads, b);
                for ((dst, &av), &gv) in gb.data_mut().iter_mut().zip(at.data()).zip(g.data()) {
                    *dst += gv * av;
                }
            }
            Op::OneMinus { a } => {
                let ga = self.acc(grads, a);
                for (dst, &gv) in ga.data_mut().iter_mut().zip(g.data()) {
                    *dst -= gv;
                }
            }
            Op::AddConst { a } => {
                self.acc(grads, a).add_assign(g);
            }
            Op::ScaleVec { s, v } => {
                let sv = self.value(s).data()[0];
                let vt = self.value(v).clone();
                self.acc(grads, s).data_mut()[0] += g
                    .data()
                    .iter()
                    .zip(vt.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
                let gv = self.acc(grads, v);
                for (dst, &gi) in gv.data_mut().iter_mut().zip(g.data()) {
                    *dst += sv * gi;
                }
            }
            Op::Concat { a, b } => {
                let la = self.value(a).len();
                {
                    let ga = self.acc(grads, a);
                    for (dst, &gv) in ga.data_mut().iter_mut().zip(&g.data()[..la]) {
                        *dst += gv;
                    }
                }
                let gb = self.acc(grads, b);
                for (dst, &gv) in gb.data_mut().iter_mut().zip(&g.data()[la..]) {
                    *dst += gv;
                }
            }
            Op::IndexElem { v, index } => {
                self.acc(grads, v).data_mut()[index] += g.data()[0];
            }
            Op::Dot { a, b } => {
                let g0 = g.data()[0];
                let at = self.value(a).clone();
                let bt = self.value(b).clone();
                {
                    let ga = self.acc(grads, a);
                    for (dst, &bv) in ga.data_mut().iter_mut().zip(bt.data()) {
                        *dst += g0 * bv;
                    }
                }
                let gb = self.acc(grads, b);
                for (dst, &av) in gb.data_mut().iter_mut().zip(at.data()) {
                    *dst += g0 * av;
                }
            }
            Op::CosineSim { x, m } => {
                let xt = self.value(x).clone();
                let mt = self.value(m).clone();
                let nx_raw = xt.l2_norm();
                let nx = nx_raw.max(COSINE_NORM_FLOOR);
                for i in 0..mt.rows() {
                    let gi = g.data()[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let row = mt.row(i);
                    let s: f64 = row.iter().zip(xt.data()).map(|(a, b)| a * b).sum();
                    let nm_raw = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let nm = nm_raw.max(COSINE_NORM_FLOOR);
                    {
                        let gx = self.acc(grads, x);
                        for (j, dst) in gx.data_mut().iter_mut().enumerate() {
                            let mut d = row[j] / (nx * nm);
                            if nx_raw > COSINE_NORM_FLOOR {
                                d -= s * xt.data()[j] / (nx_raw * nx * nx * nm);
                            }
                            *dst += gi * d;
                        }
                    }
                    let gm = self.acc(grads, m);
                    let grow = gm.row_mut(i);
                    for (j, dst) in grow.iter_mut().enumerate() {
                        let mut d = xt.data()[j] / (nx * nm);
                        if nm_raw > COSINE_NORM_FLOOR {
                            d -= s * row[j] / (nm_raw * nx * nm * nm);
                        }
                        *dst += gi * d;
                    }
                }
            }
            Op::EraseAddWrite { m, w, e, a } => {
                let mt = self.value(m).clone();
                let wt = self.value(w).clone();
                let et = self.value(e).clone();
                let at = self.value(a).clone();
                {
                    let gm = self.acc(grads, m);
                    for i in 0..mt.rows() {
                        let wi = wt.data()[i];
                        let grow = gm.row_mut(i);
                        for j in 0..grow.len() {
                            grow[j] += g.row(i)[j] * (1.0 - wi * et.data()[j]);
                        }
                    }
                }
                {
                    let gw = self.acc(grads, w);
                    for i in 0..mt.rows() {
                        let mut s = 0.0;
                        for j in 0..mt.cols() {
                            s += g.row(i)[j] * (at.data()[j] - mt.row(i)[j] * et.data()[j]);
                        }
                        gw.data_mut()[i] += s;
                    }
                }
                {
                    let ge = self.acc(grads, e);
                    for i in 0..mt.rows() {
                        let wi = wt.data()[i];
                        for (j, dst) in ge.data_mut().iter_mut().enumerate() {
                            *dst -= g.row(i)[j] * mt.row(i)[j] * wi;
                        }
                    }
                }
                let ga = self.acc(grads, a);
                for i in 0..mt.rows() {
                    let wi = wt.data()[i];
                    for (j, dst) in ga.data_mut().iter_mut().enumerate() {
                        *dst += g.row(i)[j] * wi;
                    }
                }
            }
            Op::Bce { p, label } => {
                let pv = self.value(p).data()[0];
                if pv >= BCE_EPS && pv <= 1.0 - BCE_EPS {
                    let d = -label / pv + (1.0 - label) / (1.0 - pv);
                    self.acc(grads, p).data_mut()[0] += g.data()[0] * d;
                }
            }
        }
    }
}
