use std::cell::RefCell;
use std::rc::Rc;

use super::{GradError, Tensor};

/// Padding applied to the sequence axis before a 1-d convolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PadSpec {
    None,
    /// Constant-value flank of `amount` positions on both sides.
    Flank { amount: usize, value: f64 },
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    /// aᵀ·b
    MatMulAt(usize, usize),
    /// a·bᵀ
    MatMulBt(usize, usize),
    Conv(usize, usize),
    /// Gradient of Conv w.r.t. its input; bilinear in (upstream, filters).
    ConvDx(usize, usize),
    /// Gradient of Conv w.r.t. its filters; bilinear in (input, upstream).
    ConvDw(usize, usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    SoftmaxRows(usize),
    /// Elementwise product with a constant mask.
    MaskMul(usize, Tensor),
    Sum(usize),
    RowSum(usize),
    BroadcastRow(usize),
    ColSum(usize),
    BroadcastCol(usize),
    BroadcastFill(usize),
    SliceRows(usize, usize),
    EmbedRows(usize, usize),
    SliceCols(usize, usize),
    EmbedCols(usize, usize),
    Concat0(usize, usize),
    Reshape(usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
struct Graph {
    nodes: Vec<Node>,
}

/// Records operations as they are evaluated. Confined to one thread.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<Graph>>,
}

/// Handle to a value on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts a tensor as a graph leaf.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    fn push(&self, op: Op, value: Tensor) -> Var {
        let mut g = self.inner.borrow_mut();
        g.nodes.push(Node { op, value });
        Var {
            tape: self.clone(),
            id: g.nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.inner.borrow().nodes[id].value.clone()
    }

    fn shape_of(&self, id: usize) -> Vec<usize> {
        self.inner.borrow().nodes[id].value.shape().to_vec()
    }

    fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

fn check_same_tape(a: &Var, b: &Var) {
    assert!(a.tape.same(&b.tape), "vars belong to different graphs");
}

macro_rules! with_values {
    ($tape:expr, [$($id:expr => $name:ident),+], $body:expr) => {{
        let g = $tape.inner.borrow();
        $(let $name = &g.nodes[$id].value;)+
        $body
    }};
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn scalar_value(&self) -> f64 {
        let v = self.value();
        assert!(v.is_scalar(), "expected scalar, got shape {:?}", v.shape());
        v.scalar_value()
    }

    fn unary(&self, op: Op, out: Tensor) -> Var {
        self.tape.push(op, out)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let g = self.tape.inner.borrow();
        let v = &g.nodes[self.id].value;
        Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip(&self, other: &Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        check_same_tape(self, other);
        let g = self.tape.inner.borrow();
        let a = &g.nodes[self.id].value;
        let b = &g.nodes[other.id].value;
        assert_eq!(
            a.shape(),
            b.shape(),
            "{name}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        );
        Tensor {
            shape: a.shape().to_vec(),
            data: a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
        }
    }

    pub fn add(&self, other: &Var) -> Var {
        let out = self.zip(other, "add", |x, y| x + y);
        self.unary(Op::Add(self.id, other.id), out)
    }

    pub fn sub(&self, other: &Var) -> Var {
        let out = self.zip(other, "sub", |x, y| x - y);
        self.unary(Op::Sub(self.id, other.id), out)
    }

    pub fn mul(&self, other: &Var) -> Var {
        let out = self.zip(other, "mul", |x, y| x * y);
        self.unary(Op::Mul(self.id, other.id), out)
    }

    pub fn div(&self, other: &Var) -> Var {
        let out = self.zip(other, "div", |x, y| x / y);
        self.unary(Op::Div(self.id, other.id), out)
    }

    pub fn neg(&self) -> Var {
        let out = self.map(|x| -x);
        self.unary(Op::Neg(self.id), out)
    }

    pub fn scale(&self, s: f64) -> Var {
        let out = self.map(|x| x * s);
        self.unary(Op::Scale(self.id, s), out)
    }

    pub fn add_scalar(&self, s: f64) -> Var {
        let out = self.map(|x| x + s);
        self.unary(Op::AddScalar(self.id), out)
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    pub fn relu(&self) -> Var {
        let out = self.map(|x| if x > 0.0 { x } else { 0.0 });
        self.unary(Op::Relu(self.id), out)
    }

    pub fn leaky_relu(&self, alpha: f64) -> Var {
        let out = self.map(|x| if x > 0.0 { x } else { alpha * x });
        self.unary(Op::LeakyRelu(self.id, alpha), out)
    }

    pub fn sigmoid(&self) -> Var {
        let out = self.map(|x| 1.0 / (1.0 + (-x).exp()));
        self.unary(Op::Sigmoid(self.id), out)
    }

    pub fn exp(&self) -> Var {
        let out = self.map(f64::exp);
        self.unary(Op::Exp(self.id), out)
    }

    pub fn ln(&self) -> Var {
        let out = self.map(f64::ln);
        self.unary(Op::Ln(self.id), out)
    }

    pub fn sqrt(&self) -> Var {
        let out = self.map(f64::sqrt);
        self.unary(Op::Sqrt(self.id), out)
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax_rows(&self) -> Var {
        let out = {
            let g = self.tape.inner.borrow();
            let v = &g.nodes[self.id].value;
            let width = *v.shape().last().expect("softmax on empty shape");
            assert!(width > 0);
            let mut data = v.data().to_vec();
            for row in data.chunks_mut(width) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - m).exp();
                    z += *x;
                }
                for x in row.iter_mut() {
                    *x /= z;
                }
            }
            Tensor {
                shape: v.shape().to_vec(),
                data,
            }
        };
        self.unary(Op::SoftmaxRows(self.id), out)
    }

    /// Elementwise product with a constant (non-differentiated) mask.
    pub fn mask_mul(&self, mask: Tensor) -> Var {
        let out = {
            let g = self.tape.inner.borrow();
            let v = &g.nodes[self.id].value;
            assert_eq!(v.shape(), mask.shape(), "mask_mul: shape mismatch");
            Tensor {
                shape: v.shape().to_vec(),
                data: v
                    .data()
                    .iter()
                    .zip(mask.data())
                    .map(|(&x, &m)| x * m)
                    .collect(),
            }
        };
        self.unary(Op::MaskMul(self.id, mask), out)
    }

    /// Sum of all elements; scalar result.
    pub fn sum(&self) -> Var {
        let out = {
            let g = self.tape.inner.borrow();
            Tensor::scalar(g.nodes[self.id].value.data().iter().sum())
        };
        self.unary(Op::Sum(self.id), out)
    }

    pub fn mean(&self) -> Var {
        let n = self.value().numel();
        self.sum().scale(1.0 / n as f64)
    }

    /// [r, c] -> [r]: sum over the last axis.
    pub fn row_sum(&self) -> Var {
        let out = {
            let g = self.tape.inner.borrow();
            let v = &g.nodes[self.id].value;
            assert_eq!(v.shape().len(), 2, "row_sum expects rank-2");
            let (r, c) = (v.shape()[0], v.shape()[1]);
            let mut data = vec![0.0; r];
            for i in 0..r {
                data[i] = v.data()[i * c..(i + 1) * c].iter().sum();
            }
            Tensor {
                shape: vec![r],
                data,
            }
        };
        self.unary(Op::RowSum(self.id), out)
    }

    /// [r] -> [r, cols]: replicate each entry across a row.
    pub fn broadcast_row(&self, cols: usize) -> Var {
        let out = {
            let g = self.tape.inner.borrow();
            let v = &g.nodes[self.id].value;
            assert_eq!(v.shape().len(), 1, "broadcast_row expects rank-1");
            let r = v.shape()[0];
            let mut data = Vec::with_capacity(r * cols);
            for &x in v.data() {
                data.extend(std::iter::repeat(x).take(cols));
            }
            Tensor {
                shape: vec![r, cols],
                data,
            }
        };
        self.unary(Op::BroadcastRow(self.id), out)
    }

    /// [r, c] -> [c]: sum over the leading axis.
    pub fn col_sum(&self) -> Var {
        let out = {
            let g = self.tape.inner.borrow();
            let v = &g.nodes[self.id].value;
            assert_eq!(v.shape().len(), 2, "col_sum expects rank-2");
            let (r, c) = (v.shape()[0], v.shape()[1]);
            let mut data = vec![0.0; c];
            for i in 0..r {
                for j in 0..c {
                    data[j] += v.data()[i * c + j];
                }
            }
            Tensor {
                shape: vec![c],
                data,
            }
        };
        self.unary(Op::ColSum(self.id), out)
    }

    /// [c] -> [rows, c]: replicate a row vector down the rows.
    pub fn broadcast_col(&self, rows: usize) -> Var {
        let out = {
            let g = self.tape.inner.borrow();
            let v = &g.nodes[self.id].value;
            assert_eq!(v.shape().len(), 1, "broadcast_col expects rank-1");
            let c = v.shape()[0];
            let mut data = Vec::with_capacity(rows * c);
            for _ in 0..rows {
                data.extend_from_slice(v.data());
            }
            Tensor {
                shape: vec![rows, c],
                data,
            }
        };
        self.unary(Op::BroadcastCol(self.id), out)
    }

    /// scalar -> arbitrary shape filled with its value.
    pub fn broadcast_fill(&self, shape: Vec<usize>) -> Var {
        let out = {
            let g = self.tape.inner.borrow();
            let v = &g.nodes[self.id].value;
            assert!(v.is_scalar(), "broadcast_fill expects scalar");
            Tensor::full(shape, v.scalar_value())
        };
        self.unary(Op::BroadcastFill(self.id), out)
    }

    /// Rows `start..start+len` along the leading axis.
    pub fn slice_rows(&self, start: usize, len: usize) -> Var {
        let out = {
            let g = self.tape.inner.borrow();
            let v = &g.nodes[self.id].value;
            let w = v.row_width();
            assert!(start + len <= v.rows(), "slice_rows out of bounds");
            let mut shape = v.shape().to_vec();
            shape[0] = len;
            Tensor {
                shape,
                data: v.data()[start * w..(start + len) * w].to_vec(),
            }
        };
        self.unary(Op::SliceRows(self.id, start), out)
    }

    /// Embeds this tensor into a zero tensor with `total` leading rows at `start`.
    pub fn embed_rows(&self, start: usize, total: usize) -> Var {
        let out = {
            let g = self.tape.inner.borrow();
            let v = &g.nodes[self.id].value;
            let w = v.row_width();
            assert!(start + v.rows() <= total, "embed_rows out of bounds");
            let mut shape = v.shape().to_vec();
            shape[0] = total;
            let mut data = vec![0.0; total * w];
            data[start * w..start * w + v.data().len()].copy_from_slice(v.data());
            Tensor { shape, data }
        };
        self.unary(Op::EmbedRows(self.id, start), out)
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Var {
        let out = {
            let g = self.tape.inner.borrow();
            let v = &g.nodes[self.id].value;
            assert_eq!(v.shape().len(), 2, "slice_cols expects rank-2");
            let (r, c) = (v.shape()[0], v.shape()[1]);
            assert!(start + len <= c, "slice_cols out of bounds");
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&v.data()[i * c + start..i * c + start + len]);
            }
            Tensor {
                shape: vec![r, len],
                data,
            }
        };
        self.unary(Op::SliceCols(self.id, start), out)
    }

    /// Embeds columns into a zero rank-2 tensor with `total` columns.
    pub fn embed_cols(&self, start: usize, total: usize) -> Var {
        let out = {
            let g = self.tape.inner.borrow();
            let v = &g.nodes[self.id].value;
            assert_eq!(v.shape().len(), 2, "embed_cols expects rank-2");
            let (r, c) = (v.shape()[0], v.shape()[1]);
            assert!(start + c <= total, "embed_cols out of bounds");
            let mut data = vec![0.0; r * total];
            for i in 0..r {
                data[i * total + start..i * total + start + c]
                    .copy_from_slice(&v.data()[i * c..(i + 1) * c]);
            }
            Tensor {
                shape: vec![r, total],
                data,
            }
        };
        self.unary(Op::EmbedCols(self.id, start), out)
    }

    /// Concatenation along the leading axis; trailing dims must agree.
    pub fn concat0(&self, other: &Var) -> Var {
        let out = {
            check_same_tape(self, other);
            let g = self.tape.inner.borrow();
            let a = &g.nodes[self.id].value;
            let b = &g.nodes[other.id].value;
            assert_eq!(a.shape()[1..], b.shape()[1..], "concat0: trailing dims differ");
            let mut shape = a.shape().to_vec();
            shape[0] = a.rows() + b.rows();
            let mut data = Vec::with_capacity(a.numel() + b.numel());
            data.extend_from_slice(a.data());
            data.extend_from_slice(b.data());
            Tensor { shape, data }
        };
        self.unary(Op::Concat0(self.id, other.id), out)
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Var {
        let out = {
            let g = self.tape.inner.borrow();
            let v = &g.nodes[self.id].value;
            let numel: usize = shape.iter().product();
            assert_eq!(numel, v.numel(), "reshape: element count mismatch");
            Tensor {
                shape,
                data: v.data().to_vec(),
            }
        };
        self.unary(Op::Reshape(self.id), out)
    }

    /// [m, k] · [k, n]
    pub fn matmul(&self, other: &Var) -> Var {
        let out = with_values!(self.tape, [self.id => a, other.id => b], {
            check_same_tape(self, other);
            matmul_kernel(a, b)
        });
        self.unary(Op::MatMul(self.id, other.id), out)
    }

    /// selfᵀ · other, self: [k, m], other: [k, n]
    pub fn matmul_at(&self, other: &Var) -> Var {
        let out = with_values!(self.tape, [self.id => a, other.id => b], {
            check_same_tape(self, other);
            matmul_at_kernel(a, b)
        });
        self.unary(Op::MatMulAt(self.id, other.id), out)
    }

    /// self · otherᵀ, self: [m, k], other: [n, k]
    pub fn matmul_bt(&self, other: &Var) -> Var {
        let out = with_values!(self.tape, [self.id => a, other.id => b], {
            check_same_tape(self, other);
            matmul_bt_kernel(a, b)
        });
        self.unary(Op::MatMulBt(self.id, other.id), out)
    }

    /// Valid cross-correlation: self [L, C_in] with filters [K, C_in, C_out].
    fn conv_raw(&self, filters: &Var) -> Var {
        let out = with_values!(self.tape, [self.id => x, filters.id => w], {
            check_same_tape(self, filters);
            conv_fwd_kernel(x, w)
        });
        self.unary(Op::Conv(self.id, filters.id), out)
    }

    fn conv_dx(&self, filters: &Var) -> Var {
        let out = with_values!(self.tape, [self.id => g, filters.id => w], {
            check_same_tape(self, filters);
            conv_dx_kernel(g, w)
        });
        self.unary(Op::ConvDx(self.id, filters.id), out)
    }

    fn conv_dw(&self, upstream: &Var) -> Var {
        let out = with_values!(self.tape, [self.id => x, upstream.id => g], {
            check_same_tape(self, upstream);
            conv_dw_kernel(x, g)
        });
        self.unary(Op::ConvDw(self.id, upstream.id), out)
    }

    /// Dense layer: inputᵀ·weight + bias.
    pub fn linear(&self, weight: &Var, bias: &Var) -> Result<Var, GradError> {
        let (in_shape, w_shape, b_shape) = (self.shape(), weight.shape(), bias.shape());
        if in_shape.len() != 1 || w_shape.len() != 2 || b_shape.len() != 1 {
            return Err(GradError::Dimension(format!(
                "linear expects vector/matrix/vector, got {in_shape:?}/{w_shape:?}/{b_shape:?}"
            )));
        }
        if w_shape[0] != in_shape[0] || w_shape[1] != b_shape[0] {
            return Err(GradError::Dimension(format!(
                "linear: input {in_shape:?}, weight {w_shape:?}, bias {b_shape:?} do not conform"
            )));
        }
        let row = self.reshape(vec![1, in_shape[0]]);
        Ok(row.matmul(weight).reshape(vec![w_shape[1]]).add(bias))
    }

    /// 1-d convolution (cross-correlation) with optional constant-value flanks.
    pub fn conv1d(&self, filters: &Var, bias: &Var, padding: PadSpec) -> Result<Var, GradError> {
        let (x_shape, w_shape, b_shape) = (self.shape(), filters.shape(), bias.shape());
        if x_shape.len() != 2 || w_shape.len() != 3 || b_shape.len() != 1 {
            return Err(GradError::Dimension(format!(
                "conv1d expects [L,C_in]/[K,C_in,C_out]/[C_out], got {x_shape:?}/{w_shape:?}/{b_shape:?}"
            )));
        }
        let (l, c_in) = (x_shape[0], x_shape[1]);
        let (k, c_out) = (w_shape[0], w_shape[2]);
        if w_shape[1] != c_in || b_shape[0] != c_out {
            return Err(GradError::Dimension(format!(
                "conv1d: input {x_shape:?} and filters {w_shape:?}/bias {b_shape:?} do not conform"
            )));
        }
        let padded = match padding {
            PadSpec::None => self.clone(),
            PadSpec::Flank { amount: 0, .. } => self.clone(),
            PadSpec::Flank { amount, value } => {
                let total = l + 2 * amount;
                let embedded = self.embed_rows(amount, total);
                if value == 0.0 {
                    embedded
                } else {
                    let mut flank = Tensor::zeros(vec![total, c_in]);
                    for i in 0..amount {
                        for c in 0..c_in {
                            flank.data_mut()[i * c_in + c] = value;
                            flank.data_mut()[(total - 1 - i) * c_in + c] = value;
                        }
                    }
                    embedded.add(&self.tape.leaf(flank))
                }
            }
        };
        let l_padded = padded.shape()[0];
        if k > l_padded {
            return Err(GradError::Dimension(format!(
                "conv1d: filter length {k} exceeds padded length {l_padded}"
            )));
        }
        let out = padded.conv_raw(filters);
        let l_out = out.shape()[0];
        Ok(out.add(&bias.broadcast_col(l_out)))
    }

    /// Per-channel max concatenated with per-channel mean: [L, C] -> [2C].
    pub fn pool_concat(&self) -> Result<Var, GradError> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(GradError::Dimension(format!(
                "pool_concat expects non-empty [L,C], got {shape:?}"
            )));
        }
        let (l, c) = (shape[0], shape[1]);
        // Max routed through a constant argmax mask; ties go to the lowest row.
        let mask = {
            let v = self.value();
            let mut mask = Tensor::zeros(vec![l, c]);
            for j in 0..c {
                let mut best = 0;
                for i in 1..l {
                    if v.at(i, j) > v.at(best, j) {
                        best = i;
                    }
                }
                mask.data_mut()[best * c + j] = 1.0;
            }
            mask
        };
        let max_pool = self.mask_mul(mask).col_sum();
        let avg_pool = self.col_sum().scale(1.0 / l as f64);
        Ok(max_pool.concat0(&avg_pool))
    }

    /// Residual block: x + r·conv(relu(conv(relu(x)))) with same-length padding.
    pub fn resblock(
        &self,
        w1: &Var,
        b1: &Var,
        w2: &Var,
        b2: &Var,
        r: f64,
        padding: PadSpec,
    ) -> Result<Var, GradError> {
        let h = self.relu().conv1d(w1, b1, padding)?;
        let h = h.relu().conv1d(w2, b2, padding)?;
        if h.shape() != self.shape() {
            return Err(GradError::Dimension(format!(
                "resblock does not preserve shape: {:?} -> {:?}",
                self.shape(),
                h.shape()
            )));
        }
        Ok(self.add(&h.scale(r)))
    }
}

fn matmul_kernel(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape().len(), 2, "matmul lhs must be rank-2");
    assert_eq!(b.shape().len(), 2, "matmul rhs must be rank-2");
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul: inner dims differ ({k} vs {k2})");
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data()[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

fn matmul_at_kernel(a: &Tensor, b: &Tensor) -> Tensor {
    let (k, m) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul_at: leading dims differ");
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a.data()[p * m..(p + 1) * m];
        let brow = &b.data()[p * n..(p + 1) * n];
        for i in 0..m {
            let av = arow[i];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

fn matmul_bt_kernel(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (n, k2) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul_bt: trailing dims differ");
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data()[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data()[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

/// out[p, o] = Σ_{k,c} x[p+k, c] · w[k, c, o]
fn conv_fwd_kernel(x: &Tensor, w: &Tensor) -> Tensor {
    let (l, c_in) = (x.shape()[0], x.shape()[1]);
    let (k, c_in2, c_out) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    assert_eq!(c_in, c_in2, "conv: channel mismatch");
    assert!(k <= l, "conv: filter longer than input");
    let l_out = l - k + 1;
    let mut out = vec![0.0; l_out * c_out];
    for p in 0..l_out {
        let orow = &mut out[p * c_out..(p + 1) * c_out];
        for kk in 0..k {
            let xrow = &x.data()[(p + kk) * c_in..(p + kk + 1) * c_in];
            let wbase = kk * c_in * c_out;
            for c in 0..c_in {
                let xv = xrow[c];
                if xv == 0.0 {
                    continue;
                }
                let wrow = &w.data()[wbase + c * c_out..wbase + (c + 1) * c_out];
                for o in 0..c_out {
                    orow[o] += xv * wrow[o];
                }
            }
        }
    }
    Tensor {
        shape: vec![l_out, c_out],
        data: out,
    }
}

/// gx[i, c] = Σ_{k,o} g[i−k, o] · w[k, c, o]
fn conv_dx_kernel(g: &Tensor, w: &Tensor) -> Tensor {
    let (l_out, c_out) = (g.shape()[0], g.shape()[1]);
    let (k, c_in, c_out2) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    assert_eq!(c_out, c_out2, "conv_dx: channel mismatch");
    let l = l_out + k - 1;
    let mut out = vec![0.0; l * c_in];
    for p in 0..l_out {
        let grow = &g.data()[p * c_out..(p + 1) * c_out];
        for kk in 0..k {
            let i = p + kk;
            let wbase = kk * c_in * c_out;
            let orow = &mut out[i * c_in..(i + 1) * c_in];
            for c in 0..c_in {
                let wrow = &w.data()[wbase + c * c_out..wbase + (c + 1) * c_out];
                let mut acc = 0.0;
                for o in 0..c_out {
                    acc += grow[o] * wrow[o];
                }
                orow[c] += acc;
            }
        }
    }
    Tensor {
        shape: vec![l, c_in],
        data: out,
    }
}

/// gw[k, c, o] = Σ_p x[p+k, c] · g[p, o]
fn conv_dw_kernel(x: &Tensor, g: &Tensor) -> Tensor {
    let (l, c_in) = (x.shape()[0], x.shape()[1]);
    let (l_out, c_out) = (g.shape()[0], g.shape()[1]);
    assert!(l_out <= l, "conv_dw: upstream longer than input");
    let k = l - l_out + 1;
    let mut out = vec![0.0; k * c_in * c_out];
    for p in 0..l_out {
        let grow = &g.data()[p * c_out..(p + 1) * c_out];
        for kk in 0..k {
            let xrow = &x.data()[(p + kk) * c_in..(p + kk + 1) * c_in];
            let wbase = kk * c_in * c_out;
            for c in 0..c_in {
                let xv = xrow[c];
                if xv == 0.0 {
                    continue;
                }
                let wrow = &mut out[wbase + c * c_out..wbase + (c + 1) * c_out];
                for o in 0..c_out {
                    wrow[o] += xv * grow[o];
                }
            }
        }
    }
    Tensor {
        shape: vec![k, c_in, c_out],
        data: out,
    }
}

/// Exact reverse-mode gradients of a scalar objective w.r.t. `wrt`.
///
/// Returned gradients are themselves tape nodes, so `grad` may be applied
/// again to scalars derived from them (double backward).
pub fn grad(objective: &Var, wrt: &[Var]) -> Result<Vec<Var>, GradError> {
    let tape = objective.tape.clone();
    if !objective.value().is_scalar() {
        return Err(GradError::Graph(format!(
            "objective must be scalar, got shape {:?}",
            objective.shape()
        )));
    }
    for w in wrt {
        if !tape.same(&w.tape) {
            return Err(GradError::Graph(
                "wrt tensor lives on a different graph".into(),
            ));
        }
    }

    let top = objective.id;
    let mut adj: Vec<Option<Var>> = vec![None; top + 1];
    adj[top] = Some(tape.scalar(1.0));

    // Ops needed for backward are cloned out up front so that building new
    // nodes does not alias the graph borrow.
    let ops: Vec<Op> = {
        let g = tape.inner.borrow();
        g.nodes[..=top].iter().map(|n| n.op.clone()).collect()
    };

    let var = |id: usize| Var {
        tape: tape.clone(),
        id,
    };

    for id in (0..=top).rev() {
        let g = match &adj[id] {
            Some(g) => g.clone(),
            None => continue,
        };
        let mut acc = |idx: usize, contribution: Var| {
            adj[idx] = Some(match adj[idx].take() {
                None => contribution,
                Some(prev) => prev.add(&contribution),
            });
        };
        match &ops[id] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.neg());
            }
            Op::Mul(a, b) => {
                acc(*a, g.mul(&var(*b)));
                acc(*b, g.mul(&var(*a)));
            }
            Op::Div(a, b) => {
                let bv = var(*b);
                acc(*a, g.div(&bv));
                acc(*b, g.mul(&var(id)).div(&bv).neg());
            }
            Op::Neg(a) => acc(*a, g.neg()),
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_bt(&var(*b)));
                acc(*b, var(*a).matmul_at(&g));
            }
            Op::MatMulAt(a, b) => {
                acc(*a, var(*b).matmul_bt(&g));
                acc(*b, var(*a).matmul(&g));
            }
            Op::MatMulBt(a, b) => {
                acc(*a, g.matmul(&var(*b)));
                acc(*b, g.matmul_at(&var(*a)));
            }
            Op::Conv(x, w) => {
                acc(*x, g.conv_dx(&var(*w)));
                acc(*w, var(*x).conv_dw(&g));
            }
            Op::ConvDx(gin, w) => {
                acc(*gin, g.conv_raw(&var(*w)));
                acc(*w, g.conv_dw(&var(*gin)));
            }
            Op::ConvDw(x, gin) => {
                acc(*x, var(*gin).conv_dx(&g));
                acc(*gin, var(*x).conv_raw(&g));
            }
            Op::Relu(a) => {
                // Derivative at exactly 0 is defined as 0.
                let mask = step_mask(&tape, *a, 1.0, 0.0);
                acc(*a, g.mask_mul(mask));
            }
            Op::LeakyRelu(a, alpha) => {
                // Derivative at exactly 0 is defined as alpha.
                let mask = step_mask(&tape, *a, 1.0, *alpha);
                acc(*a, g.mask_mul(mask));
            }
            Op::Sigmoid(a) => {
                let y = var(id);
                acc(*a, g.mul(&y).mul(&y.neg().add_scalar(1.0)));
            }
            Op::Exp(a) => acc(*a, g.mul(&var(id))),
            Op::Ln(a) => acc(*a, g.div(&var(*a))),
            Op::Sqrt(a) => acc(*a, g.scale(0.5).div(&var(id))),
            Op::SoftmaxRows(a) => {
                let y = var(id);
                let cols = *y.shape().last().unwrap();
                let flat_rows = y.value().numel() / cols;
                let y2 = y.reshape(vec![flat_rows, cols]);
                let g2 = g.reshape(vec![flat_rows, cols]);
                let dot = g2.mul(&y2).row_sum().broadcast_row(cols);
                acc(*a, y2.mul(&g2.sub(&dot)).reshape(y.shape()));
            }
            Op::MaskMul(a, mask) => acc(*a, g.mask_mul(mask.clone())),
            Op::Sum(a) => {
                let shape = tape.shape_of(*a);
                acc(*a, g.broadcast_fill(shape));
            }
            Op::RowSum(a) => {
                let cols = tape.shape_of(*a)[1];
                acc(*a, g.broadcast_row(cols));
            }
            Op::BroadcastRow(a) => acc(*a, g.row_sum()),
            Op::ColSum(a) => {
                let rows = tape.shape_of(*a)[0];
                acc(*a, g.broadcast_col(rows));
            }
            Op::BroadcastCol(a) => acc(*a, g.col_sum()),
            Op::BroadcastFill(a) => acc(*a, g.sum()),
            Op::SliceRows(a, start) => {
                let total = tape.shape_of(*a)[0];
                acc(*a, g.embed_rows(*start, total));
            }
            Op::EmbedRows(a, start) => {
                let len = tape.shape_of(*a)[0];
                acc(*a, g.slice_rows(*start, len));
            }
            Op::SliceCols(a, start) => {
                let total = tape.shape_of(*a)[1];
                acc(*a, g.embed_cols(*start, total));
            }
            Op::EmbedCols(a, start) => {
                let len = tape.shape_of(*a)[1];
                acc(*a, g.slice_cols(*start, len));
            }
            Op::Concat0(a, b) => {
                let ra = tape.shape_of(*a)[0];
                let rb = tape.shape_of(*b)[0];
                acc(*a, g.slice_rows(0, ra));
                acc(*b, g.slice_rows(ra, rb));
            }
            Op::Reshape(a) => {
                let shape = tape.shape_of(*a);
                acc(*a, g.reshape(shape));
            }
        }
    }

    // A wrt node the objective never touches has a structurally zero
    // gradient (e.g. a bias that cancels inside a gradient-of-gradient
    // objective); materialize it as a zero leaf so the result is still a
    // graph node.
    Ok(wrt
        .iter()
        .map(|w| {
            if w.id > top {
                return tape.leaf(Tensor::zeros(w.shape()));
            }
            match adj[w.id].clone() {
                Some(g) => g,
                None => tape.leaf(Tensor::zeros(w.shape())),
            }
        })
        .collect())
}

fn step_mask(tape: &Tape, id: usize, above: f64, at_or_below: f64) -> Tensor {
    let g = tape.inner.borrow();
    let v = &g.nodes[id].value;
    Tensor {
        shape: v.shape().to_vec(),
        data: v
            .data()
            .iter()
            .map(|&x| if x > 0.0 { above } else { at_or_below })
            .collect(),
    }
}
