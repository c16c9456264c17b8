//! Reverse-mode differentiation over row-major 2-D arrays.
//!
//! Every recorded node owns its forward value; nothing is mutated after it
//! is pushed, so [`Tape::backward`] can be called any number of times and
//! returns a fresh [`Gradients`] each time.

use std::sync::Arc;

use crate::linalg3::Mat3;
use crate::scalar::Real;

use super::params::ParamStore;
use super::DiffError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub type Shape = (usize, usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Leaf,
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[R, C] + [1, C]`
    AddBias(Var, Var),
    /// `[R, C] * [R, 1]`
    MulCol(Var, Var),
    MatMul(Var, Var),
    /// Row `r` of each operand is an `n×k` (resp. `k×m`) matrix.
    BatchedMatMul { a: Var, b: Var, n: usize, k: usize, m: usize },
    Concat(Vec<Var>),
    SliceCols { src: Var, start: usize },
    SliceRows { src: Var, start: usize },
    Reshape(Var),
    SumAxis { src: Var, axis: usize },
    Tanh(Var),
    Logistic(Var),
    Scale(Var, T),
    Abs(Var),
    Sqrt(Var),
    GatherRows { src: Var, index: Arc<[usize]> },
    ScatterAddRows { src: Var, index: Arc<[usize]> },
    /// Each 3-block `v` of row `r` becomes `M_r v`.
    RotateVectors { src: Var, mats: Arc<[Mat3<T>]> },
    /// Each 9-block `A` of row `r` becomes `M_r A M_rᵀ`.
    ConjugateTensors { src: Var, mats: Arc<[Mat3<T>]> },
    /// Each 9-block `A` becomes `(A + Aᵀ)/2`.
    Symmetrize3(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Vec<T>,
    shape: Shape,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err(op: &'static str, left: Shape, right: Shape) -> DiffError {
    DiffError::Shape { op, left, right }
}

#[inline]
fn mat_of<T: Real>(s: &[T]) -> Mat3<T> {
    Mat3::from_slice(s)
}

#[inline]
fn rotate3<T: Real>(m: &Mat3<T>, v: &[T], out: &mut [T]) {
    let r = &m.m;
    out[0] = r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2];
    out[1] = r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2];
    out[2] = r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2];
}

/// `out[j] += Σ_p coeffs[p] · rows[p·width + j]`, four rows per pass.
#[inline(always)]
fn axpy_rows_body<T: Real>(out: &mut [T], coeffs: &[T], rows: &[T], width: usize) {
    let w = width;
    let out = &mut out[..w];
    let full = coeffs.len() / 4 * 4;
    for p in (0..full).step_by(4) {
        let (c0, c1, c2, c3) = (coeffs[p], coeffs[p + 1], coeffs[p + 2], coeffs[p + 3]);
        let r0 = &rows[p * w..(p + 1) * w];
        let r1 = &rows[(p + 1) * w..(p + 2) * w];
        let r2 = &rows[(p + 2) * w..(p + 3) * w];
        let r3 = &rows[(p + 3) * w..(p + 4) * w];
        for j in 0..w {
            out[j] += c0 * r0[j] + c1 * r1[j] + c2 * r2[j] + c3 * r3[j];
        }
    }
    for p in full..coeffs.len() {
        let c = coeffs[p];
        let r = &rows[p * w..(p + 1) * w];
        for j in 0..w {
            out[j] += c * r[j];
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn axpy_rows_avx2<T: Real>(out: &mut [T], coeffs: &[T], rows: &[T], width: usize) {
    axpy_rows_body(out, coeffs, rows, width)
}

/// Wider vectors when the CPU has them; no fused multiply-add, so every
/// output is rounded identically on either path.
#[inline]
fn axpy_rows<T: Real>(out: &mut [T], coeffs: &[T], rows: &[T], width: usize) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { axpy_rows_avx2(out, coeffs, rows, width) };
    }
    axpy_rows_body(out, coeffs, rows, width)
}

fn transposed<T: Real>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// `out += a · b` for row-major `a: n×k`, `b: k×m`.
fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        axpy_rows(&mut out[i * m..(i + 1) * m], &a[i * k..(i + 1) * k], b, m);
    }
}

/// `ga += g · bᵀ` (`g: n×m`, `b: k×m`).
fn matmul_grad_a<T: Real>(g: &[T], b: &[T], ga: &mut [T], n: usize, k: usize, m: usize) {
    let bt = transposed(b, k, m);
    for i in 0..n {
        axpy_rows(&mut ga[i * k..(i + 1) * k], &g[i * m..(i + 1) * m], &bt, k);
    }
}

/// `gb += aᵀ · g` (`a: n×k`, `g: n×m`).
fn matmul_grad_b<T: Real>(a: &[T], g: &[T], gb: &mut [T], n: usize, k: usize, m: usize) {
    let at = transposed(a, n, k);
    for p in 0..k {
        axpy_rows(&mut gb[p * m..(p + 1) * m], &at[p * n..(p + 1) * n], g, m);
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<T>, shape: Shape, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.0 * shape.1);
        self.nodes.push(Node { value, shape, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.node(v).shape
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.node(v).value[0]
    }

    fn check_len(op: &'static str, shape: Shape, data: &[T]) -> Result<(), DiffError> {
        if shape.0 * shape.1 != data.len() {
            return Err(shape_err(op, shape, (data.len(), 1)));
        }
        Ok(())
    }

    /// Input that is never differentiated.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var, DiffError> {
        Self::check_len("constant", (rows, cols), &data)?;
        Ok(self.push(data, (rows, cols), Op::Constant, false))
    }

    /// Free differentiable input.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var, DiffError> {
        Self::check_len("leaf", (rows, cols), &data)?;
        Ok(self.push(data, (rows, cols), Op::Leaf, true))
    }

    /// Records parameter `name` of `store`; its gradient is reported by
    /// [`Gradients::param_grads`].
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var, DiffError> {
        let idx = store.index_of(name).ok_or_else(|| DiffError::UnknownParam(name.to_string()))?;
        let p = store.get_index(idx);
        Ok(self.push(p.data.clone(), (p.rows, p.cols), Op::Param(idx), true))
    }

    fn grad2(&self, a: Var, b: Var) -> bool {
        self.node(a).needs_grad || self.node(b).needs_grad
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(sa)
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, rec: Op<T>) -> Result<Var, DiffError> {
        let shape = self.same_shape(op, a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let g = self.grad2(a, b);
        Ok(self.push(value, shape, rec, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, DiffError> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb != (1, sx.1) {
            return Err(shape_err("add_bias", sx, sb));
        }
        let b = self.value(bias);
        let mut value = self.value(x).to_vec();
        if sx.1 > 0 {
            for row in value.chunks_exact_mut(sx.1) {
                for (v, &bv) in row.iter_mut().zip(b) {
                    *v += bv;
                }
            }
        }
        let g = self.grad2(x, bias);
        Ok(self.push(value, sx, Op::AddBias(x, bias), g))
    }

    /// Scales row `r` of `x` by `s[r]`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var, DiffError> {
        let (sx, ss) = (self.shape(x), self.shape(s));
        if ss != (sx.0, 1) {
            return Err(shape_err("mul_col", sx, ss));
        }
        let sv = self.value(s);
        let mut value = self.value(x).to_vec();
        if sx.1 > 0 {
            for (row, &f) in value.chunks_exact_mut(sx.1).zip(sv) {
                for v in row.iter_mut() {
                    *v *= f;
                }
            }
        }
        let g = self.grad2(x, s);
        Ok(self.push(value, sx, Op::MulCol(x, s), g))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut value = vec![T::zero(); sa.0 * sb.1];
        matmul_acc(self.value(a), self.value(b), &mut value, sa.0, sa.1, sb.1);
        let g = self.grad2(a, b);
        Ok(self.push(value, (sa.0, sb.1), Op::MatMul(a, b), g))
    }

    /// Row-wise product of small matrices: row `r` of `a` is `n×k`, row `r`
    /// of `b` is `k×m`, row `r` of the result is `n×m`.
    pub fn batched_matmul(&mut self, a: Var, b: Var, n: usize, k: usize, m: usize) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.0 != sb.0 || sa.1 != n * k || sb.1 != k * m {
            return Err(shape_err("batched_matmul", sa, sb));
        }
        let rows = sa.0;
        let mut value = vec![T::zero(); rows * n * m];
        let (av, bv) = (self.value(a), self.value(b));
        for r in 0..rows {
            matmul_acc(
                &av[r * n * k..(r + 1) * n * k],
                &bv[r * k * m..(r + 1) * k * m],
                &mut value[r * n * m..(r + 1) * n * m],
                n,
                k,
                m,
            );
        }
        let g = self.grad2(a, b);
        Ok(self.push(value, (rows, n * m), Op::BatchedMatMul { a, b, n, k, m }, g))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let rows = self.shape(parts[0]).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err("concat", self.shape(parts[0]), self.shape(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p).1;
                value.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let g = parts.iter().any(|&p| self.node(p).needs_grad);
        Ok(self.push(value, (rows, cols), Op::Concat(parts.to_vec()), g))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, width: usize) -> Result<Var, DiffError> {
        let s = self.shape(src);
        if start + width > s.1 {
            return Err(shape_err("slice_cols", s, (start, width)));
        }
        let mut value = Vec::with_capacity(s.0 * width);
        for r in 0..s.0 {
            value.extend_from_slice(&self.value(src)[r * s.1 + start..r * s.1 + start + width]);
        }
        let g = self.node(src).needs_grad;
        Ok(self.push(value, (s.0, width), Op::SliceCols { src, start }, g))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, count: usize) -> Result<Var, DiffError> {
        let s = self.shape(src);
        if start + count > s.0 {
            return Err(shape_err("slice_rows", s, (start, count)));
        }
        let value = self.value(src)[start * s.1..(start + count) * s.1].to_vec();
        let g = self.node(src).needs_grad;
        Ok(self.push(value, (count, s.1), Op::SliceRows { src, start }, g))
    }

    pub fn reshape(&mut self, src: Var, rows: usize, cols: usize) -> Result<Var, DiffError> {
        let s = self.shape(src);
        if s.0 * s.1 != rows * cols {
            return Err(shape_err("reshape", s, (rows, cols)));
        }
        let value = self.value(src).to_vec();
        let g = self.node(src).needs_grad;
        Ok(self.push(value, (rows, cols), Op::Reshape(src), g))
    }

    /// `axis = 0` sums rows into `[1, C]`; `axis = 1` sums columns into `[R, 1]`.
    pub fn sum_axis(&mut self, src: Var, axis: usize) -> Result<Var, DiffError> {
        let (r, c) = self.shape(src);
        let v = self.value(src);
        let (value, shape) = match axis {
            0 => {
                let mut out = vec![T::zero(); c];
                for row in 0..r {
                    for (o, &x) in out.iter_mut().zip(&v[row * c..(row + 1) * c]) {
                        *o += x;
                    }
                }
                (out, (1, c))
            }
            1 => ((0..r).map(|row| v[row * c..(row + 1) * c].iter().copied().sum()).collect(), (r, 1)),
            _ => return Err(shape_err("sum_axis", (r, c), (axis, 0))),
        };
        let g = self.node(src).needs_grad;
        Ok(self.push(value, shape, Op::SumAxis { src, axis }, g))
    }

    /// Sum of every entry, `[1, 1]`.
    pub fn sum_all(&mut self, src: Var) -> Result<Var, DiffError> {
        let rows = self.sum_axis(src, 1)?;
        self.sum_axis(rows, 0)
    }

    fn map(&mut self, src: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(src).iter().map(|&x| f(x)).collect();
        let (s, g) = (self.shape(src), self.node(src).needs_grad);
        self.push(value, s, op, g)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn logistic(&mut self, x: Var) -> Var {
        self.map(x, logistic, Op::Logistic(x))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.map(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.map(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    /// Row `r` of the result is row `index[r]` of `src`.
    pub fn gather_rows(&mut self, src: Var, index: Arc<[usize]>) -> Result<Var, DiffError> {
        let (r, c) = self.shape(src);
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(shape_err("gather_rows", (r, c), (bad, 0)));
        }
        let v = self.value(src);
        let mut value = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            value.extend_from_slice(&v[i * c..(i + 1) * c]);
        }
        let g = self.node(src).needs_grad;
        Ok(self.push(value, (index.len(), c), Op::GatherRows { src, index }, g))
    }

    /// Row `r` of `src` is added into row `index[r]` of an `out_rows`-row result.
    pub fn scatter_add_rows(&mut self, src: Var, index: Arc<[usize]>, out_rows: usize) -> Result<Var, DiffError> {
        let (r, c) = self.shape(src);
        if index.len() != r {
            return Err(shape_err("scatter_add_rows", (r, c), (index.len(), out_rows)));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(shape_err("scatter_add_rows", (r, c), (bad, out_rows)));
        }
        let v = self.value(src);
        let mut value = vec![T::zero(); out_rows * c];
        for (row, &dst) in index.iter().enumerate() {
            for (o, &x) in value[dst * c..(dst + 1) * c].iter_mut().zip(&v[row * c..(row + 1) * c]) {
                *o += x;
            }
        }
        let g = self.node(src).needs_grad;
        Ok(self.push(value, (out_rows, c), Op::ScatterAddRows { src, index }, g))
    }

    pub fn rotate_vectors(&mut self, src: Var, mats: Arc<[Mat3<T>]>) -> Result<Var, DiffError> {
        let (r, c) = self.shape(src);
        if c % 3 != 0 || mats.len() != r {
            return Err(shape_err("rotate_vectors", (r, c), (mats.len(), 3)));
        }
        let v = self.value(src);
        let mut value = vec![T::zero(); r * c];
        for (row, m) in mats.iter().enumerate() {
            for b in (row * c..(row + 1) * c).step_by(3) {
                rotate3(m, &v[b..b + 3], &mut value[b..b + 3]);
            }
        }
        let g = self.node(src).needs_grad;
        Ok(self.push(value, (r, c), Op::RotateVectors { src, mats }, g))
    }

    pub fn conjugate_tensors(&mut self, src: Var, mats: Arc<[Mat3<T>]>) -> Result<Var, DiffError> {
        let (r, c) = self.shape(src);
        if c % 9 != 0 || mats.len() != r {
            return Err(shape_err("conjugate_tensors", (r, c), (mats.len(), 9)));
        }
        let v = self.value(src);
        let mut value = vec![T::zero(); r * c];
        for (row, m) in mats.iter().enumerate() {
            for b in (row * c..(row + 1) * c).step_by(9) {
                let out = mat_of(&v[b..b + 9]).conjugate(m);
                value[b..b + 9].copy_from_slice(&out.to_flat());
            }
        }
        let g = self.node(src).needs_grad;
        Ok(self.push(value, (r, c), Op::ConjugateTensors { src, mats }, g))
    }

    pub fn symmetrize3(&mut self, src: Var) -> Result<Var, DiffError> {
        let (r, c) = self.shape(src);
        if c % 9 != 0 {
            return Err(shape_err("symmetrize3", (r, c), (0, 9)));
        }
        let v = self.value(src);
        let mut value = vec![T::zero(); r * c];
        for b in (0..r * c).step_by(9) {
            value[b..b + 9].copy_from_slice(&mat_of(&v[b..b + 9]).symmetrized().to_flat());
        }
        let g = self.node(src).needs_grad;
        Ok(self.push(value, (r, c), Op::Symmetrize3(src), g))
    }

    /// Gradients of the `1×1` node `loss` with respect to every node that
    /// depends on a leaf or parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, DiffError> {
        if self.shape(loss) != (1, 1) {
            return Err(DiffError::NotScalar(self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        let (rows, cols) = node.shape;
        match &node.op {
            Op::Constant | Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(o, &x)| *o += x));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, &x)| *o -= x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |ga| {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(vb) {
                        *o += x * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &x), &y) in gb.iter_mut().zip(g).zip(va) {
                        *o += x * y;
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v));
                acc(*b, &mut |gb| {
                    if cols > 0 {
                        for row in g.chunks_exact(cols) {
                            for (o, &v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                });
            }
            Op::MulCol(x, s) => {
                let (vx, vs) = (&nodes[x.0].value, &nodes[s.0].value);
                acc(*x, &mut |gx| {
                    for r in 0..rows {
                        for c in 0..cols {
                            gx[r * cols + c] += g[r * cols + c] * vs[r];
                        }
                    }
                });
                acc(*s, &mut |gs| {
                    for r in 0..rows {
                        let mut t = T::zero();
                        for c in 0..cols {
                            t += g[r * cols + c] * vx[r * cols + c];
                        }
                        gs[r] += t;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].shape, nodes[b.0].shape);
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |ga| matmul_grad_a(g, vb, ga, sa.0, sa.1, sb.1));
                acc(*b, &mut |gb| matmul_grad_b(va, g, gb, sa.0, sa.1, sb.1));
            }
            Op::BatchedMatMul { a, b, n, k, m } => {
                let (n, k, m) = (*n, *k, *m);
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |ga| {
                    for r in 0..rows {
                        matmul_grad_a(
                            &g[r * n * m..(r + 1) * n * m],
                            &vb[r * k * m..(r + 1) * k * m],
                            &mut ga[r * n * k..(r + 1) * n * k],
                            n,
                            k,
                            m,
                        );
                    }
                });
                acc(*b, &mut |gb| {
                    for r in 0..rows {
                        matmul_grad_b(
                            &va[r * n * k..(r + 1) * n * k],
                            &g[r * n * m..(r + 1) * n * m],
                            &mut gb[r * k * m..(r + 1) * k * m],
                            n,
                            k,
                            m,
                        );
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = nodes[p.0].shape.1;
                    acc(p, &mut |gp| {
                        for r in 0..rows {
                            for (o, &v) in gp[r * c..(r + 1) * c].iter_mut().zip(&g[r * cols + off..r * cols + off + c]) {
                                *o += v;
                            }
                        }
                    });
                    off += c;
                }
            }
            Op::SliceCols { src, start } => {
                let sc = nodes[src.0].shape.1;
                acc(*src, &mut |gs| {
                    for r in 0..rows {
                        for (o, &v) in gs[r * sc + start..r * sc + start + cols].iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *o += v;
                        }
                    }
                });
            }
            Op::SliceRows { src, start } => {
                acc(*src, &mut |gs| {
                    for (o, &v) in gs[start * cols..(start + rows) * cols].iter_mut().zip(g) {
                        *o += v;
                    }
                });
            }
            Op::Reshape(src) => acc(*src, &mut |gs| gs.iter_mut().zip(g).for_each(|(o, &v)| *o += v)),
            Op::SumAxis { src, axis } => {
                let (sr, sc) = nodes[src.0].shape;
                acc(*src, &mut |gs| {
                    for r in 0..sr {
                        for c in 0..sc {
                            gs[r * sc + c] += if *axis == 0 { g[c] } else { g[r] };
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &node.value;
                acc(*x, &mut |gx| {
                    for ((o, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * (T::one() - yv * yv);
                    }
                });
            }
            Op::Logistic(x) => {
                let y = &node.value;
                acc(*x, &mut |gx| {
                    for ((o, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * yv * (T::one() - yv);
                    }
                });
            }
            Op::Scale(x, s) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, &v)| *o += v * *s)),
            Op::Abs(x) => {
                let vx = &nodes[x.0].value;
                acc(*x, &mut |gx| {
                    for ((o, &gv), &xv) in gx.iter_mut().zip(g).zip(vx) {
                        if xv > T::zero() {
                            *o += gv;
                        } else if xv < T::zero() {
                            *o -= gv;
                        }
                    }
                });
            }
            Op::Sqrt(x) => {
                let y = &node.value;
                acc(*x, &mut |gx| {
                    for ((o, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                        if yv > T::zero() {
                            *o += gv * T::lit(0.5) / yv;
                        }
                    }
                });
            }
            Op::GatherRows { src, index } => {
                acc(*src, &mut |gs| {
                    for (r, &i) in index.iter().enumerate() {
                        for (o, &v) in gs[i * cols..(i + 1) * cols].iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *o += v;
                        }
                    }
                });
            }
            Op::ScatterAddRows { src, index } => {
                acc(*src, &mut |gs| {
                    for (r, &i) in index.iter().enumerate() {
                        for (o, &v) in gs[r * cols..(r + 1) * cols].iter_mut().zip(&g[i * cols..(i + 1) * cols]) {
                            *o += v;
                        }
                    }
                });
            }
            Op::RotateVectors { src, mats } => {
                acc(*src, &mut |gs| {
                    let mut tmp = [T::zero(); 3];
                    for (r, m) in mats.iter().enumerate() {
                        let mt = m.transpose();
                        for b in (r * cols..(r + 1) * cols).step_by(3) {
                            rotate3(&mt, &g[b..b + 3], &mut tmp);
                            for (o, &v) in gs[b..b + 3].iter_mut().zip(&tmp) {
                                *o += v;
                            }
                        }
                    }
                });
            }
            Op::ConjugateTensors { src, mats } => {
                acc(*src, &mut |gs| {
                    for (r, m) in mats.iter().enumerate() {
                        let mt = m.transpose();
                        for b in (r * cols..(r + 1) * cols).step_by(9) {
                            let back = mat_of(&g[b..b + 9]).conjugate(&mt);
                            for (o, v) in gs[b..b + 9].iter_mut().zip(back.to_flat()) {
                                *o += v;
                            }
                        }
                    }
                });
            }
            Op::Symmetrize3(src) => {
                acc(*src, &mut |gs| {
                    for b in (0..rows * cols).step_by(9) {
                        let back = mat_of(&g[b..b + 9]).symmetrized();
                        for (o, v) in gs[b..b + 9].iter_mut().zip(back.to_flat()) {
                            *o += v;
                        }
                    }
                });
            }
        }
    }
}

#[inline]
pub fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// ∂loss/∂v, or `None` when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients aligned with `store` order; parameters used
    /// several times on the tape accumulate, unused ones are zero.
    pub fn param_grads(&self, tape: &Tape<T>, store: &ParamStore<T>) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = store.iter().map(|(_, p)| vec![T::zero(); p.data.len()]).collect();
        for (id, node) in tape.nodes.iter().enumerate() {
            if let (Op::Param(idx), Some(Some(g))) = (&node.op, self.grads.get(id)) {
                for (o, &v) in out[*idx].iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        out
    }
}
