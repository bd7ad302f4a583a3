use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, ArrayD, ArrayViewD, Axis, Ix2, Ix3, IxDyn, Slice, Zip};
use std::cell::RefCell;
use std::sync::Arc;

/// Handle to a node on a [`Tape`]. Cheap to copy; only valid for the tape
/// that produced it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

#[derive(Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    MatMul(Var, Var),
    SumAll(Var),
    SumAxis(Var),
    BroadcastTo(Var),
    Reshape(Var),
    SwapAxes(Var, usize, usize),
    Concat(Arc<Vec<Var>>, usize),
    Slice(Var, usize, usize, usize),
    PadZeros(Var, usize, usize),
    Softmax(Var, usize),
    Gather(Var, Arc<Vec<usize>>),
    ScatterAdd(Var, Arc<Vec<usize>>),
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
}

/// Eagerly evaluated computation tape.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let nd = a.len().max(b.len());
    let mut out = vec![0usize; nd];
    for d in 0..nd {
        let da = if d + a.len() >= nd { a[d + a.len() - nd] } else { 1 };
        let db = if d + b.len() >= nd { b[d + b.len() - nd] } else { 1 };
        assert!(
            da == db || da == 1 || db == 1,
            "incompatible broadcast shapes {:?} vs {:?}",
            a,
            b
        );
        out[d] = da.max(db);
    }
    out
}

fn bin_broadcast(a: &ArrayD<f64>, b: &ArrayD<f64>, f: impl Fn(f64, f64) -> f64) -> ArrayD<f64> {
    let shape = broadcast_shape(a.shape(), b.shape());
    let av = a.broadcast(IxDyn(&shape)).expect("broadcast lhs");
    let bv = b.broadcast(IxDyn(&shape)).expect("broadcast rhs");
    let mut out = ArrayD::<f64>::zeros(IxDyn(&shape));
    Zip::from(&mut out).and(&av).and(&bv).for_each(|o, &x, &y| *o = f(x, y));
    out
}

fn matmul_forward(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    match (a.ndim(), b.ndim()) {
        (2, 2) => {
            let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
            let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
            assert_eq!(a2.ncols(), b2.nrows(), "matmul inner dims: {:?} x {:?}", a.shape(), b.shape());
            a2.dot(&b2).into_dyn()
        }
        (3, 3) => {
            let a3 = a.view().into_dimensionality::<Ix3>().unwrap();
            let b3 = b.view().into_dimensionality::<Ix3>().unwrap();
            let (ba, m, k) = a3.dim();
            let (bb, k2, n) = b3.dim();
            assert_eq!(ba, bb, "batched matmul batch dims: {} vs {}", ba, bb);
            assert_eq!(k, k2, "matmul inner dims: {:?} x {:?}", a.shape(), b.shape());
            let mut out = ndarray::Array3::<f64>::zeros((ba, m, n));
            for i in 0..ba {
                general_mat_mul(1.0, &a3.index_axis(Axis(0), i), &b3.index_axis(Axis(0), i), 0.0, &mut out.index_axis_mut(Axis(0), i));
            }
            out.into_dyn()
        }
        (3, 2) => {
            let a3 = a.view().into_dimensionality::<Ix3>().unwrap();
            let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
            let (ba, m, k) = a3.dim();
            assert_eq!(k, b2.nrows(), "matmul inner dims: {:?} x {:?}", a.shape(), b.shape());
            let mut out = ndarray::Array3::<f64>::zeros((ba, m, b2.ncols()));
            for i in 0..ba {
                general_mat_mul(1.0, &a3.index_axis(Axis(0), i), &b2, 0.0, &mut out.index_axis_mut(Axis(0), i));
            }
            out.into_dyn()
        }
        (2, 3) => {
            let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
            let b3 = b.view().into_dimensionality::<Ix3>().unwrap();
            let (bb, k, n) = b3.dim();
            assert_eq!(a2.ncols(), k, "matmul inner dims: {:?} x {:?}", a.shape(), b.shape());
            let mut out = ndarray::Array3::<f64>::zeros((bb, a2.nrows(), n));
            for i in 0..bb {
                general_mat_mul(1.0, &a2, &b3.index_axis(Axis(0), i), 0.0, &mut out.index_axis_mut(Axis(0), i));
            }
            out.into_dyn()
        }
        (da, db) => panic!("matmul unsupported ranks ({}, {})", da, db),
    }
}

fn softmax_forward(a: &ArrayD<f64>, axis: usize) -> ArrayD<f64> {
    let mut out = a.clone();
    for mut lane in out.lanes_mut(Axis(axis)) {
        let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in lane.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in lane.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn softplus(x: f64) -> f64 {
    // max(x, 0) + ln(1 + e^{-|x|}) avoids overflow for large |x|
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: ArrayD<f64>, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    /// Insert a constant or parameter value. Constants receive no adjoint.
    pub fn leaf(&self, value: ArrayD<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.leaf(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn with_value<R>(&self, v: Var, f: impl FnOnce(&ArrayD<f64>) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn value(&self, v: Var) -> ArrayD<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        let val = &nodes[v.0].value;
        assert_eq!(val.len(), 1, "scalar_value on shape {:?}", val.shape());
        *val.iter().next().unwrap()
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = { self.nodes.borrow()[a.0].value.mapv(f) };
        self.push(value, op)
    }

    fn binary(&self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            bin_broadcast(&nodes[a.0].value, &nodes[b.0].value, f)
        };
        self.push(value, op)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn mul_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::MulScalar(a, c), |x| x * c)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), move |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    pub fn square(&self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// Matrix product. Supports (2,2), batched (3,3), and mixed (3,2)/(2,3)
    /// where the 2-D side is shared across the batch.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            matmul_forward(&nodes[a.0].value, &nodes[b.0].value)
        };
        self.push(value, Op::MatMul(a, b))
    }

    /// Sum of all entries; result has the empty shape.
    pub fn sum_all(&self, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            ArrayD::from_elem(IxDyn(&[]), nodes[a.0].value.sum())
        };
        self.push(value, Op::SumAll(a))
    }

    /// Sum along one axis, keeping it with length 1.
    pub fn sum_axis(&self, a: Var, axis: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.sum_axis(Axis(axis)).insert_axis(Axis(axis))
        };
        self.push(value, Op::SumAxis(a))
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = { self.nodes.borrow()[a.0].value.len() };
        let s = self.sum_all(a);
        self.mul_scalar(s, 1.0 / n as f64)
    }

    pub fn mean_axis(&self, a: Var, axis: usize) -> Var {
        let n = { self.nodes.borrow()[a.0].value.shape()[axis] };
        let s = self.sum_axis(a, axis);
        self.mul_scalar(s, 1.0 / n as f64)
    }

    pub fn broadcast_to(&self, a: Var, shape: &[usize]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .value
                .broadcast(IxDyn(shape))
                .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", nodes[a.0].value.shape(), shape))
                .to_owned()
        };
        self.push(value, Op::BroadcastTo(a))
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            assert_eq!(v.len(), shape.iter().product::<usize>(), "reshape {:?} to {:?}", v.shape(), shape);
            ArrayD::from_shape_vec(IxDyn(shape), v.iter().cloned().collect()).unwrap()
        };
        self.push(value, Op::Reshape(a))
    }

    pub fn swap_axes(&self, a: Var, i: usize, j: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let mut v = nodes[a.0].value.view();
            v.swap_axes(i, j);
            v.to_owned()
        };
        self.push(value, Op::SwapAxes(a, i, j))
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<ArrayViewD<f64>> = parts.iter().map(|p| nodes[p.0].value.view()).collect();
            concatenate(Axis(axis), &views).expect("concat shape mismatch")
        };
        self.push(value, Op::Concat(Arc::new(parts.to_vec()), axis))
    }

    pub fn slice(&self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .value
                .slice_axis(Axis(axis), Slice::from(start..start + len))
                .to_owned()
        };
        self.push(value, Op::Slice(a, axis, start, len))
    }

    pub fn pad_zeros(&self, a: Var, axis: usize, before: usize, after: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            let mut shape = v.shape().to_vec();
            shape[axis] += before + after;
            let mut out = ArrayD::<f64>::zeros(IxDyn(&shape));
            out.slice_axis_mut(Axis(axis), Slice::from(before..before + v.shape()[axis]))
                .assign(v);
            out
        };
        self.push(value, Op::PadZeros(a, axis, before))
    }

    pub fn softmax(&self, a: Var, axis: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            softmax_forward(&nodes[a.0].value, axis)
        };
        self.push(value, Op::Softmax(a, axis))
    }

    /// Row lookup into a 2-D table; output is (indices.len(), table_cols).
    pub fn gather(&self, table: Var, indices: &[usize]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let t = nodes[table.0].value.view().into_dimensionality::<Ix2>().expect("gather table must be 2-D");
            let mut out = ndarray::Array2::<f64>::zeros((indices.len(), t.ncols()));
            for (i, &ix) in indices.iter().enumerate() {
                out.row_mut(i).assign(&t.row(ix));
            }
            out.into_dyn()
        };
        self.push(value, Op::Gather(table, Arc::new(indices.to_vec())))
    }

    /// Adjoint of gather: accumulate rows of `src` into a (rows, cols) table.
    pub fn scatter_add(&self, src: Var, indices: &[usize], rows: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let s = nodes[src.0].value.view().into_dimensionality::<Ix2>().expect("scatter src must be 2-D");
            assert_eq!(s.nrows(), indices.len());
            let mut out = ndarray::Array2::<f64>::zeros((rows, s.ncols()));
            for (i, &ix) in indices.iter().enumerate() {
                let mut row = out.row_mut(ix);
                row += &s.row(i);
            }
            out.into_dyn()
        };
        self.push(value, Op::ScatterAdd(src, Arc::new(indices.to_vec())))
    }

    /// Per-lane maximum along an axis, detached from the graph (constant).
    /// Shifting by it leaves softmax-style expressions and their gradients
    /// unchanged, so treating it as constant is exact.
    pub fn max_axis_detached(&self, a: Var, axis: usize) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.0].value;
            v.map_axis(Axis(axis), |lane| lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                .insert_axis(Axis(axis))
        };
        self.leaf(value)
    }

    /// Constant copy of a variable's current value (gradient barrier).
    pub fn detach(&self, a: Var) -> Var {
        let value = self.value(a);
        self.leaf(value)
    }

    fn mask_of(&self, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let value = { self.nodes.borrow()[a.0].value.mapv(f) };
        self.leaf(value)
    }

    /// Sum-reduce `g` down to `shape` (inverse of broadcasting).
    fn reduce_to(&self, g: Var, shape: &[usize]) -> Var {
        let gshape = self.shape(g);
        if gshape == shape {
            return g;
        }
        let mut cur = g;
        let extra = gshape.len() - shape.len();
        for _ in 0..extra {
            cur = self.sum_axis(cur, 0);
            let s = self.shape(cur);
            cur = self.reshape(cur, &s[1..]);
        }
        let cur_shape = self.shape(cur);
        for d in 0..shape.len() {
            if shape[d] == 1 && cur_shape[d] != 1 {
                cur = self.sum_axis(cur, d);
            }
        }
        if self.shape(cur) != shape {
            cur = self.reshape(cur, shape);
        }
        cur
    }

    /// Reverse-mode gradients of a single-element output with respect to
    /// `wrt`. Returns one Var per entry (None when the output does not depend
    /// on it). The returned gradients live on the tape and can be
    /// differentiated again.
    pub fn grad(&self, y: Var, wrt: &[Var]) -> Vec<Option<Var>> {
        assert_eq!(
            self.with_value(y, |v| v.len()),
            1,
            "grad target must have a single element"
        );
        let limit = y.0 + 1;
        let mut adj: Vec<Option<Var>> = vec![None; limit];
        let seed_shape = self.shape(y);
        adj[y.0] = Some(self.leaf(ArrayD::ones(IxDyn(&seed_shape))));

        for id in (0..limit).rev() {
            let Some(g) = adj[id] else { continue };
            let op = { self.nodes.borrow()[id].op.clone() };
            let out = Var(id);
            let mut contribs: Vec<(Var, Var)> = Vec::new();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    contribs.push((a, self.reduce_to(g, &self.shape(a))));
                    contribs.push((b, self.reduce_to(g, &self.shape(b))));
                }
                Op::Sub(a, b) => {
                    contribs.push((a, self.reduce_to(g, &self.shape(a))));
                    let ng = self.neg(g);
                    contribs.push((b, self.reduce_to(ng, &self.shape(b))));
                }
                Op::Mul(a, b) => {
                    let da = self.mul(g, b);
                    contribs.push((a, self.reduce_to(da, &self.shape(a))));
                    let db = self.mul(g, a);
                    contribs.push((b, self.reduce_to(db, &self.shape(b))));
                }
                Op::Div(a, b) => {
                    let da = self.div(g, b);
                    contribs.push((a, self.reduce_to(da, &self.shape(a))));
                    let gy = self.mul(g, out);
                    let db = self.neg(self.div(gy, b));
                    contribs.push((b, self.reduce_to(db, &self.shape(b))));
                }
                Op::Neg(a) => contribs.push((a, self.neg(g))),
                Op::AddScalar(a) => contribs.push((a, g)),
                Op::MulScalar(a, c) => contribs.push((a, self.mul_scalar(g, c))),
                Op::Exp(a) => contribs.push((a, self.mul(g, out))),
                Op::Ln(a) => contribs.push((a, self.div(g, a))),
                Op::Sqrt(a) => {
                    let half = self.mul_scalar(self.div(g, out), 0.5);
                    contribs.push((a, half));
                }
                Op::Tanh(a) => {
                    let y2 = self.square(out);
                    let one_m = self.add_scalar(self.neg(y2), 1.0);
                    contribs.push((a, self.mul(g, one_m)));
                }
                Op::Sigmoid(a) => {
                    let one_m = self.add_scalar(self.neg(out), 1.0);
                    let d = self.mul(out, one_m);
                    contribs.push((a, self.mul(g, d)));
                }
                Op::Softplus(a) => {
                    let s = self.sigmoid(a);
                    contribs.push((a, self.mul(g, s)));
                }
                Op::Relu(a) => {
                    let mask = self.mask_of(a, |x| if x > 0.0 { 1.0 } else { 0.0 });
                    contribs.push((a, self.mul(g, mask)));
                }
                Op::LeakyRelu(a, slope) => {
                    let mask = self.mask_of(a, move |x| if x > 0.0 { 1.0 } else { slope });
                    contribs.push((a, self.mul(g, mask)));
                }
                Op::Abs(a) => {
                    let sign = self.mask_of(a, |x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    contribs.push((a, self.mul(g, sign)));
                }
                Op::MatMul(a, b) => {
                    let (ra, rb) = (self.shape(a).len(), self.shape(b).len());
                    match (ra, rb) {
                        (2, 2) => {
                            let bt = self.swap_axes(b, 0, 1);
                            contribs.push((a, self.matmul(g, bt)));
                            let at = self.swap_axes(a, 0, 1);
                            contribs.push((b, self.matmul(at, g)));
                        }
                        (3, 3) => {
                            let bt = self.swap_axes(b, 1, 2);
                            contribs.push((a, self.matmul(g, bt)));
                            let at = self.swap_axes(a, 1, 2);
                            contribs.push((b, self.matmul(at, g)));
                        }
                        (3, 2) => {
                            let bt = self.swap_axes(b, 0, 1);
                            contribs.push((a, self.matmul(g, bt)));
                            let at = self.swap_axes(a, 1, 2);
                            let per_batch = self.matmul(at, g);
                            let summed = self.sum_axis(per_batch, 0);
                            let shape = self.shape(b);
                            contribs.push((b, self.reshape(summed, &shape)));
                        }
                        (2, 3) => {
                            let bt = self.swap_axes(b, 1, 2);
                            let per_batch = self.matmul(g, bt);
                            let summed = self.sum_axis(per_batch, 0);
                            let shape = self.shape(a);
                            contribs.push((a, self.reshape(summed, &shape)));
                            let at = self.swap_axes(a, 0, 1);
                            contribs.push((b, self.matmul(at, g)));
                        }
                        other => panic!("matmul backward ranks {:?}", other),
                    }
                }
                Op::SumAll(a) => {
                    let shape = self.shape(a);
                    contribs.push((a, self.broadcast_to(g, &shape)));
                }
                Op::SumAxis(a) => {
                    let shape = self.shape(a);
                    contribs.push((a, self.broadcast_to(g, &shape)));
                }
                Op::BroadcastTo(a) => {
                    let shape = self.shape(a);
                    contribs.push((a, self.reduce_to(g, &shape)));
                }
                Op::Reshape(a) => {
                    let shape = self.shape(a);
                    contribs.push((a, self.reshape(g, &shape)));
                }
                Op::SwapAxes(a, i, j) => contribs.push((a, self.swap_axes(g, i, j))),
                Op::Concat(parts, axis) => {
                    let mut start = 0;
                    for p in parts.iter() {
                        let len = self.shape(*p)[axis];
                        contribs.push((*p, self.slice(g, axis, start, len)));
                        start += len;
                    }
                }
                Op::Slice(a, axis, start, len) => {
                    let total = self.shape(a)[axis];
                    contribs.push((a, self.pad_zeros(g, axis, start, total - start - len)));
                }
                Op::PadZeros(a, axis, before) => {
                    let len = self.shape(a)[axis];
                    contribs.push((a, self.slice(g, axis, before, len)));
                }
                Op::Softmax(a, axis) => {
                    let gy = self.mul(g, out);
                    let s = self.sum_axis(gy, axis);
                    let centered = self.sub(g, s);
                    contribs.push((a, self.mul(centered, out)));
                }
                Op::Gather(table, indices) => {
                    let rows = self.shape(table)[0];
                    contribs.push((table, self.scatter_add(g, &indices, rows)));
                }
                Op::ScatterAdd(src, indices) => {
                    contribs.push((src, self.gather(g, &indices)));
                }
            }
            for (parent, contrib) in contribs {
                adj[parent.0] = match adj[parent.0] {
                    None => Some(contrib),
                    Some(existing) => Some(self.add(existing, contrib)),
                };
            }
        }
        wrt.iter().map(|v| adj.get(v.0).copied().flatten()).collect()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}
