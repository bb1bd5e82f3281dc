//! Reverse-mode gradient tape over matrix-valued nodes.
//!
//! Every node holds a full `RealMat`, so one recorded operation covers a
//! whole batch of rows (for instance all candidate entities scored against
//! one query box). Binary elementwise operations broadcast an operand with
//! a single row across the other's rows, and a `1 x 1` operand across
//! everything.
//!
//! Subgradient conventions at kinks: `d|x|/dx` is 0 at 0; `max(a, b)` and
//! `min(a, b)` route the gradient to `a` on ties, as do the scalar variants
//! (so `relu'(0) = 1`).

use super::{NumericError, RealMat, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<RealMat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: RealMat) -> ParamId {
        self.names.push(name.to_string());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &RealMat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut RealMat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.data().len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            values: self.values.iter().map(|v| RealMat::zeros(v.rows(), v.cols())).collect(),
        }
    }

    /// First parameter holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.values.iter().position(|v| !v.is_finite()).map(|i| self.names[i].as_str())
    }
}

/// Dense gradient buffers shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<RealMat>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &RealMat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut RealMat {
        &mut self.values[id.0]
    }

    pub fn clear(&mut self) {
        for v in &mut self.values {
            v.data_mut().fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            v.data_mut().iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }

    pub fn first_non_finite(&self) -> Option<ParamId> {
        self.values.iter().position(|v| !v.is_finite()).map(ParamId)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param { id: ParamId, rows: Option<Vec<usize>> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Max(usize, usize),
    Min(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Abs(usize),
    MaxScalar(usize, f64),
    MinScalar(usize, f64),
    Sin(usize),
    Cos(usize),
    Sigmoid(usize),
    Log(usize),
    LogSigmoid(usize),
    SumRows(usize),
    L1Rows(usize),
    Sum(usize),
    Mean(usize),
    MatVec { w: usize, x: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: RealMat,
    op: Op,
}

/// Append-only record of operations; parents always precede children.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn broadcast(op: &'static str, a: Shape, b: Shape) -> Result<Shape, NumericError> {
    let fits = |x: Shape, into: Shape| x == into || x == (1, 1) || (x.0 == 1 && x.1 == into.1);
    if fits(a, b) {
        Ok(b)
    } else if fits(b, a) {
        Ok(a)
    } else {
        Err(NumericError::ShapeMismatch { op, left: a, right: b })
    }
}

#[inline]
fn bidx(shape: Shape, r: usize, c: usize) -> usize {
    let rr = if shape.0 == 1 { 0 } else { r };
    let cc = if shape.1 == 1 { 0 } else { c };
    rr * shape.1 + cc
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
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

    pub fn value(&self, v: Var) -> &RealMat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Value of a `1 x 1` node (or the first entry otherwise).
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: RealMat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: RealMat) -> Var {
        self.push(value, Op::Const)
    }

    /// Records a whole parameter tensor.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param { id, rows: None })
    }

    /// Records selected rows of a parameter tensor (repeats allowed).
    pub fn gather(&mut self, store: &ParamStore, id: ParamId, rows: &[usize]) -> Result<Var, NumericError> {
        let src = store.get(id);
        let mut data = Vec::with_capacity(rows.len() * src.cols());
        for &r in rows {
            if r >= src.rows() {
                return Err(NumericError::RowOutOfRange {
                    param: store.name(id).to_string(),
                    row: r,
                    rows: src.rows(),
                });
            }
            data.extend_from_slice(src.row(r));
        }
        let value = RealMat::new(rows.len(), src.cols(), data)?;
        Ok(self.push(value, Op::Param { id, rows: Some(rows.to_vec()) }))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumericError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = broadcast(name, sa, sb)?;
        let (va, vb) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
        let data = if sa == sb {
            va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect()
        } else {
            let mut d = Vec::with_capacity(out.0 * out.1);
            for r in 0..out.0 {
                for c in 0..out.1 {
                    d.push(f(va[bidx(sa, r, c)], vb[bidx(sb, r, c)]));
                }
            }
            d
        };
        let value = RealMat::new(out.0, out.1, data)?;
        Ok(self.push(value, op))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = &self.nodes[a.0].value;
        let value = RealMat::new(src.rows(), src.cols(), src.data().iter().map(|x| f(*x)).collect())
            .expect("unary keeps shape");
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary("max", a, b, |x, y| if x >= y { x } else { y }, Op::Max(a.0, b.0))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.binary("min", a, b, |x, y| if x <= y { x } else { y }, Op::Min(a.0, b.0))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a.0))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a.0))
    }

    pub fn max_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| if x >= c { x } else { c }, Op::MaxScalar(a.0, c))
    }

    pub fn min_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| if x <= c { x } else { c }, Op::MinScalar(a.0, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.max_scalar(a, 0.0)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, f64::sin, Op::Sin(a.0))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a.0))
    }

    /// `log(sigmoid(x))`, finite for every finite `x`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, log_sigmoid, Op::LogSigmoid(a.0))
    }

    /// Per-row sum: `R x C -> R x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let src = &self.nodes[a.0].value;
        let data = (0..src.rows()).map(|r| src.row(r).iter().sum()).collect();
        let value = RealMat::new(src.rows(), 1, data).expect("row sums");
        self.push(value, Op::SumRows(a.0))
    }

    /// Per-row L1 norm: `R x C -> R x 1`.
    pub fn l1_rows(&mut self, a: Var) -> Var {
        let src = &self.nodes[a.0].value;
        let data = (0..src.rows()).map(|r| src.row(r).iter().map(|x| x.abs()).sum()).collect();
        let value = RealMat::new(src.rows(), 1, data).expect("row norms");
        self.push(value, Op::L1Rows(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data().iter().sum();
        self.push(RealMat::scalar(s), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.nodes[a.0].value.data();
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(RealMat::scalar(s), Op::Mean(a.0))
    }

    /// Applies `w` (`n x m`) to every row of `x` (`R x m`), giving `R x n`.
    pub fn mat_vec(&mut self, w: Var, x: Var) -> Result<Var, NumericError> {
        let (wv, xv) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        if wv.cols() != xv.cols() {
            return Err(NumericError::ShapeMismatch { op: "mat_vec", left: wv.shape(), right: xv.shape() });
        }
        let mut data = Vec::with_capacity(xv.rows() * wv.rows());
        for r in 0..xv.rows() {
            let xr = xv.row(r);
            for i in 0..wv.rows() {
                data.push(wv.row(i).iter().zip(xr).map(|(a, b)| a * b).sum());
            }
        }
        let value = RealMat::new(xv.rows(), wv.rows(), data)?;
        Ok(self.push(value, Op::MatVec { w: w.0, x: x.0 }))
    }

    /// `relu(w x + b)` or `w x + b` applied row-wise.
    pub fn affine(&mut self, w: Var, b: Var, x: Var, rectify: bool) -> Result<Var, NumericError> {
        let wx = self.mat_vec(w, x)?;
        let out = self.add(wx, b)?;
        Ok(if rectify { self.relu(out) } else { out })
    }

    /// Smallest distance from any recorded max/min/abs input to its kink.
    pub fn kink_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for node in &self.nodes {
            match node.op {
                Op::Abs(a) => {
                    for x in self.nodes[a].value.data() {
                        m = m.min(x.abs());
                    }
                }
                Op::MaxScalar(a, c) | Op::MinScalar(a, c) => {
                    for x in self.nodes[a].value.data() {
                        m = m.min((x - c).abs());
                    }
                }
                Op::Max(a, b) | Op::Min(a, b) => {
                    let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
                    let out = node.value.shape();
                    let (va, vb) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                    for r in 0..out.0 {
                        for c in 0..out.1 {
                            m = m.min((va[bidx(sa, r, c)] - vb[bidx(sb, r, c)]).abs());
                        }
                    }
                }
                Op::L1Rows(a) => {
                    for x in self.nodes[a].value.data() {
                        m = m.min(x.abs());
                    }
                }
                _ => {}
            }
        }
        m
    }

    /// Accumulates `d output / d param` into `grads` for every parameter
    /// node reachable from the scalar `output`.
    pub fn backward(&self, output: Var, grads: &mut Gradients) -> Result<(), NumericError> {
        let shape = self.shape(output);
        if shape != (1, 1) {
            return Err(NumericError::NonScalarOutput(shape));
        }
        let mut g: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        g[output.0] = Some(vec![1.0]);

        fn acc<'g>(g: &'g mut [Option<Vec<f64>>], nodes: &[Node], i: usize) -> &'g mut Vec<f64> {
            g[i].get_or_insert_with(|| vec![0.0; nodes[i].value.data().len()])
        }

        for i in (0..=output.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            let node = &self.nodes[i];
            let out_shape = node.value.shape();
            match node.op {
                Op::Const => {}
                Op::Param { id, ref rows } => {
                    let dst = grads.get_mut(id);
                    match rows {
                        None => dst.data_mut().iter_mut().zip(&gi).for_each(|(d, s)| *d += s),
                        Some(rows) => {
                            let cols = node.value.cols();
                            for (k, &r) in rows.iter().enumerate() {
                                let src = &gi[k * cols..(k + 1) * cols];
                                dst.row_mut(r).iter_mut().zip(src).for_each(|(d, s)| *d += s);
                            }
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Max(a, b) | Op::Min(a, b) => {
                    let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
                    let (va, vb) = (self.nodes[a].value.data(), self.nodes[b].value.data());
                    let mut ga = vec![0.0; va.len()];
                    let mut gb = vec![0.0; vb.len()];
                    for r in 0..out_shape.0 {
                        for c in 0..out_shape.1 {
                            let o = r * out_shape.1 + c;
                            let (ia, ib) = (bidx(sa, r, c), bidx(sb, r, c));
                            let go = gi[o];
                            match node.op {
                                Op::Add(..) => {
                                    ga[ia] += go;
                                    gb[ib] += go;
                                }
                                Op::Sub(..) => {
                                    ga[ia] += go;
                                    gb[ib] -= go;
                                }
                                Op::Mul(..) => {
                                    ga[ia] += go * vb[ib];
                                    gb[ib] += go * va[ia];
                                }
                                Op::Max(..) => {
                                    if va[ia] >= vb[ib] {
                                        ga[ia] += go
                                    } else {
                                        gb[ib] += go
                                    }
                                }
                                Op::Min(..) => {
                                    if va[ia] <= vb[ib] {
                                        ga[ia] += go
                                    } else {
                                        gb[ib] += go
                                    }
                                }
                                _ => unreachable!(),
                            }
                        }
                    }
                    acc(&mut g, &self.nodes, a).iter_mut().zip(&ga).for_each(|(d, s)| *d += s);
                    acc(&mut g, &self.nodes, b).iter_mut().zip(&gb).for_each(|(d, s)| *d += s);
                }
                Op::Neg(a) => unary_back(&mut g, &self.nodes, a, i, &gi, |_, _, go| -go),
                Op::Scale(a, c) => unary_back(&mut g, &self.nodes, a, i, &gi, |_, _, go| go * c),
                Op::AddScalar(a) => unary_back(&mut g, &self.nodes, a, i, &gi, |_, _, go| go),
                Op::Abs(a) => unary_back(&mut g, &self.nodes, a, i, &gi, |x, _, go| {
                    if x > 0.0 {
                        go
                    } else if x < 0.0 {
                        -go
                    } else {
                        0.0
                    }
                }),
                Op::MaxScalar(a, c) => {
                    unary_back(&mut g, &self.nodes, a, i, &gi, |x, _, go| if x >= c { go } else { 0.0 })
                }
                Op::MinScalar(a, c) => {
                    unary_back(&mut g, &self.nodes, a, i, &gi, |x, _, go| if x <= c { go } else { 0.0 })
                }
                Op::Sin(a) => unary_back(&mut g, &self.nodes, a, i, &gi, |x, _, go| go * x.cos()),
                Op::Cos(a) => unary_back(&mut g, &self.nodes, a, i, &gi, |x, _, go| -go * x.sin()),
                Op::Sigmoid(a) => unary_back(&mut g, &self.nodes, a, i, &gi, |_, y, go| go * y * (1.0 - y)),
                Op::Log(a) => unary_back(&mut g, &self.nodes, a, i, &gi, |x, _, go| go / x),
                Op::LogSigmoid(a) => unary_back(&mut g, &self.nodes, a, i, &gi, |x, _, go| go * sigmoid(-x)),
                Op::SumRows(a) | Op::L1Rows(a) => {
                    let src = &self.nodes[a].value;
                    let cols = src.cols();
                    let l1 = matches!(node.op, Op::L1Rows(_));
                    let vals = src.data();
                    let ga = acc(&mut g, &self.nodes, a);
                    for (idx, d) in ga.iter_mut().enumerate() {
                        let go = gi[idx / cols];
                        *d += if !l1 || vals[idx] > 0.0 {
                            go
                        } else if vals[idx] < 0.0 {
                            -go
                        } else {
                            0.0
                        };
                    }
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let n = self.nodes[a].value.data().len();
                    let go = if matches!(node.op, Op::Mean(_)) { gi[0] / n as f64 } else { gi[0] };
                    acc(&mut g, &self.nodes, a).iter_mut().for_each(|d| *d += go);
                }
                Op::MatVec { w, x } => {
                    let (wv, xv) = (&self.nodes[w].value, &self.nodes[x].value);
                    let (n, m) = wv.shape();
                    let mut gw = vec![0.0; n * m];
                    let mut gx = vec![0.0; xv.rows() * m];
                    for r in 0..xv.rows() {
                        let xr = xv.row(r);
                        for i in 0..n {
                            let go = gi[r * n + i];
                            if go == 0.0 {
                                continue;
                            }
                            let wr = wv.row(i);
                            for j in 0..m {
                                gw[i * m + j] += go * xr[j];
                                gx[r * m + j] += go * wr[j];
                            }
                        }
                    }
                    acc(&mut g, &self.nodes, w).iter_mut().zip(&gw).for_each(|(d, s)| *d += s);
                    acc(&mut g, &self.nodes, x).iter_mut().zip(&gx).for_each(|(d, s)| *d += s);
                }
            }
        }
        Ok(())
    }
}

fn unary_back(
    g: &mut [Option<Vec<f64>>],
    nodes: &[Node],
    a: usize,
    out: usize,
    gi: &[f64],
    f: impl Fn(f64, f64, f64) -> f64,
) {
    let x = nodes[a].value.data();
    let y = nodes[out].value.data();
    let dst = g[a].get_or_insert_with(|| vec![0.0; x.len()]);
    for (idx, d) in dst.iter_mut().enumerate() {
        *d += f(x[idx], y[idx], gi[idx]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::check_gradients;
    use rand::{Rng, SeedableRng};

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut s = ParamStore::new();
        let x = s.add("x", RealMat::scalar(3.0));
        let mut t = Tape::new();
        let v = t.param(&s, x);
        let y = t.mul(v, v).unwrap();
        let mut g = s.zero_gradients();
        t.backward(y, &mut g).unwrap();
        assert_eq!(t.scalar(y), 9.0);
        assert_eq!(g.get(x).data()[0], 6.0);
    }

    #[test]
    fn primitive_values() {
        let mut t = Tape::new();
        let z = t.constant(RealMat::scalar(0.0));
        let s = t.sigmoid(z);
        assert_eq!(t.scalar(s), 0.5);
        let v = t.constant(RealMat::row_vector(vec![3.0, -4.0]));
        let n = t.l1_rows(v);
        assert_eq!(t.scalar(n), 7.0);
        let big = t.constant(RealMat::scalar(-800.0));
        let ls = t.log_sigmoid(big);
        assert_eq!(t.scalar(ls), -800.0);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(RealMat::zeros(2, 3));
        let b = t.constant(RealMat::zeros(3, 3));
        assert_eq!(
            t.add(a, b).unwrap_err(),
            NumericError::ShapeMismatch { op: "add", left: (2, 3), right: (3, 3) }
        );
        let w = t.constant(RealMat::zeros(4, 2));
        assert!(t.mat_vec(w, a).is_err());
        let m = t.sum_rows(a);
        let mut g = ParamStore::new().zero_gradients();
        assert_eq!(t.backward(m, &mut g).unwrap_err(), NumericError::NonScalarOutput((2, 1)));
    }

    #[test]
    fn subgradient_conventions() {
        let mut s = ParamStore::new();
        let a = s.add("a", RealMat::row_vector(vec![0.0, 1.0]));
        let b = s.add("b", RealMat::row_vector(vec![0.0, 1.0]));
        let mut t = Tape::new();
        let (va, vb) = (t.param(&s, a), t.param(&s, b));
        let mx = t.max(va, vb).unwrap();
        let ab = t.abs(va);
        let both = t.add(mx, ab).unwrap();
        let out = t.sum(both);
        let mut g = s.zero_gradients();
        t.backward(out, &mut g).unwrap();
        // ties go to the first operand; |0|' = 0
        assert_eq!(g.get(a).data(), &[1.0, 2.0]);
        assert_eq!(g.get(b).data(), &[0.0, 0.0]);
        assert_eq!(t.kink_margin(), 0.0);
    }

    #[test]
    fn broadcast_row_gradient_sums_over_rows() {
        let mut s = ParamStore::new();
        let q = s.add("q", RealMat::row_vector(vec![1.0, 2.0]));
        let e = s.add("e", RealMat::new(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let mut t = Tape::new();
        let (vq, ve) = (t.param(&s, q), t.gather(&s, e, &[2, 0, 2]).unwrap());
        let d = t.sub(ve, vq).unwrap();
        let out = t.sum(d);
        let mut g = s.zero_gradients();
        t.backward(out, &mut g).unwrap();
        assert_eq!(g.get(q).data(), &[-3.0, -3.0]);
        assert_eq!(g.get(e).data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn gather_out_of_range_names_parameter() {
        let mut s = ParamStore::new();
        let e = s.add("entities", RealMat::zeros(2, 2));
        let err = Tape::new().gather(&s, e, &[5]).unwrap_err();
        assert!(err.to_string().contains("entities"));
    }

    fn composite(t: &mut Tape, s: &ParamStore, ids: &[ParamId]) -> Var {
        let x = t.gather(s, ids[0], &[0, 1, 0]).unwrap();
        let w = t.param(s, ids[1]);
        let b = t.param(s, ids[2]);
        let h = t.affine(w, b, x, true).unwrap();
        let sn = t.sin(h);
        let cs = t.cos(x);
        let p = t.mul(sn, cs).unwrap();
        let mn = t.min(p, b).unwrap();
        let mx = t.max_scalar(mn, -0.3);
        let ab = t.abs(mx);
        let sg = t.sigmoid(ab);
        let lg = t.log(sg);
        let r = t.l1_rows(x);
        let rs = t.sum_rows(lg);
        let u = t.sub(rs, r).unwrap();
        let ls = t.log_sigmoid(u);
        let sc = t.scale(ls, 0.7);
        let m = t.mean(sc);
        let n = t.neg(m);
        t.add_scalar(n, 2.0)
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        while checked < 20 {
            let mut s = ParamStore::new();
            let mut rand_mat = |r: usize, c: usize| {
                RealMat::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
            };
            let ids = [s.add("x", rand_mat(2, 4)), s.add("w", rand_mat(4, 4)), s.add("b", rand_mat(1, 4))];
            let mut t = Tape::new();
            let out = composite(&mut t, &s, &ids);
            if t.kink_margin() < 1e-3 {
                continue;
            }
            checked += 1;
            let mut g = s.zero_gradients();
            t.backward(out, &mut g).unwrap();
            let report = check_gradients(&mut s, &g, 1e-5, 1e-4, 1e-7, |p| {
                let mut t = Tape::new();
                let o = composite(&mut t, p, &ids);
                t.scalar(o)
            });
            assert_eq!(report.passed, report.checked, "{report:?}");
        }
    }

    #[test]
    fn forward_is_bitwise_repeatable() {
        let mut s = ParamStore::new();
        let ids = [
            s.add("x", RealMat::new(2, 4, (0..8).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()),
            s.add("w", RealMat::new(4, 4, (0..16).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap()),
            s.add("b", RealMat::row_vector(vec![0.1, -0.2, 0.3, 0.05])),
        ];
        let run = || {
            let mut t = Tape::new();
            let o = composite(&mut t, &s, &ids);
            t.scalar(o).to_bits()
        };
        assert_eq!(run(), run());
    }
}
