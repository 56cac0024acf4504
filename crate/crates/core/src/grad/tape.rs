//! Wengert tape: every primitive appends one record holding its output
//! value; `backward` replays the records in reverse exactly once.

use super::gemm::{gemm, Operand};
use super::Tensor;
use crate::error::{Error, Result};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    LeakyRelu(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    /// Winning row per column.
    MaxReduce(Var, Vec<usize>),
    Mean(Var),
    Square(Var),
    Sum(Var),
    Exp(Var),
    Log(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of one reverse sweep: a gradient per recorded value that depends on
/// a differentiable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

/// How the right operand of an elementwise binary op lines up with the left.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Broadcast {
    Same,
    /// `[n, d] op [d]`: rhs repeated along the point axis.
    Rows { cols: usize },
}

fn broadcast(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Broadcast> {
    if lhs == rhs {
        return Ok(Broadcast::Same);
    }
    if lhs.len() == 2 && rhs.len() == 1 && lhs[1] == rhs[0] {
        return Ok(Broadcast::Rows { cols: rhs[0] });
    }
    Err(Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
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

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Records a tensor as a leaf. Gradients flow to it iff it requires grad.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), t.requires_grad())
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(Op::Leaf, t.shape().to_vec(), t.into_data(), false))
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.push(Op::Leaf, Vec::new(), vec![value], false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Value of a single-element record.
    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// `[n, k] x [k, m] -> [n, m]`; a rank-1 lhs `[k]` yields `[m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (n, k, out_shape) = match (sa.len(), sb.len()) {
            (2, 2) if sa[1] == sb[0] => (sa[0], sa[1], vec![sa[0], sb[1]]),
            (1, 2) if sa[0] == sb[0] => (1, sa[0], vec![sb[1]]),
            _ => {
                return Err(Error::Shape {
                    op: "matmul",
                    lhs: sa.to_vec(),
                    rhs: sb.to_vec(),
                })
            }
        };
        let m = sb[1];
        let mut out = vec![0.0; n * m];
        gemm(
            n,
            k,
            m,
            Operand::rows(self.value(a), k),
            Operand::rows(self.value(b), m),
            &mut out,
            0.0,
        );
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Op::MatMul(a, b), out_shape, out, rg))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let kind = broadcast(name, self.shape(a), self.shape(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let out: Vec<f64> = match kind {
            Broadcast::Same => va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect(),
            Broadcast::Rows { cols } => va
                .iter()
                .enumerate()
                .map(|(i, x)| f(*x, vb[i % cols]))
                .collect(),
        };
        let shape = self.shape(a).to_vec();
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let op = if name == "add" { Op::Add(a, b) } else { Op::Mul(a, b) };
        Ok(self.push(op, shape, out, rg))
    }

    /// Elementwise sum; `b` may be a `[d]` row broadcast over `[n, d]`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y)
    }

    /// Elementwise product with the same broadcasting rule as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.requires_grad(a);
        self.push(op, shape, out, rg)
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::LeakyRelu(a), |x| if x > 0.0 { x } else { LEAKY_SLOPE * x })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    /// Concatenation along the last axis. Inputs are all `[d_i]` or all `[n, d_i]`.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let s0 = self.shape(first).to_vec();
        let rows = match s0.len() {
            1 => 1,
            2 => s0[0],
            _ => {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: s0,
                    rhs: Vec::new(),
                })
            }
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == s0.len() && (s.len() == 1 || s[0] == rows);
            if !ok {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: s0,
                    rhs: s.to_vec(),
                });
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(&v[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let shape = if s0.len() == 1 { vec![total] } else { vec![rows, total] };
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(Op::Concat(parts.to_vec()), shape, out, rg))
    }

    /// Column-wise maximum over the point axis: `[n, d] -> [d]`. Ties go to the
    /// lowest row.
    pub fn max_reduce(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] == 0 {
            return Err(Error::Shape {
                op: "max_reduce",
                lhs: s.to_vec(),
                rhs: Vec::new(),
            });
        }
        let (n, d) = (s[0], s[1]);
        let v = self.value(a);
        let mut best = v[..d].to_vec();
        let mut arg = vec![0usize; d];
        for r in 1..n {
            let row = &v[r * d..(r + 1) * d];
            for c in 0..d {
                if row[c] > best[c] {
                    best[c] = row[c];
                    arg[c] = r;
                }
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.push(Op::MaxReduce(a, arg), vec![d], best, rg))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.requires_grad(a);
        self.push(Op::Mean(a), Vec::new(), vec![m], rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum::<f64>();
        let rg = self.requires_grad(a);
        self.push(Op::Sum(a), Vec::new(), vec![s], rg)
    }

    // Compositions of the primitives above.

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Multiplies by a constant, broadcasting over the point axis when needed.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let c = match s.len() {
            2 => self.constant(vec![s[1]], vec![factor; s[1]])?,
            _ => {
                let n = s.iter().product();
                self.constant(s, vec![factor; n])?
            }
        };
        self.mul(a, c)
    }

    /// `a - b` for a constant `b` of the same shape.
    pub fn sub_const(&mut self, a: Var, b: &[f64]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let neg: Vec<f64> = b.iter().map(|v| -v).collect();
        let c = self.constant(s, neg)?;
        self.add(a, c)
    }

    /// Repeats a `[d]` vector into `[n, d]`.
    pub fn broadcast_rows(&mut self, v: Var, rows: usize) -> Result<Var> {
        let s = self.shape(v).to_vec();
        if s.len() != 1 {
            return Err(Error::Shape {
                op: "broadcast_rows",
                lhs: s,
                rhs: vec![rows],
            });
        }
        let zeros = self.constant(vec![rows, s[0]], vec![0.0; rows * s[0]])?;
        self.add(zeros, v)
    }

    /// Picks columns of `[n, d]` (each multiplied by `sign`) through a
    /// constant selection matrix.
    pub fn select_columns(&mut self, a: Var, cols: &[usize], sign: f64) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let d = *s.last().unwrap_or(&0);
        if s.len() != 2 || cols.iter().any(|&c| c >= d) {
            return Err(Error::Shape {
                op: "select_columns",
                lhs: s,
                rhs: cols.to_vec(),
            });
        }
        let mut sel = vec![0.0; d * cols.len()];
        for (j, &c) in cols.iter().enumerate() {
            sel[c * cols.len() + j] = sign;
        }
        let m = self.constant(vec![d, cols.len()], sel)?;
        self.matmul(a, m)
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let out_node = self.node(out);
        if out_node.value.len() != 1 {
            return Err(Error::NotScalar(out_node.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        if out_node.requires_grad {
            grads[out.0] = Some(vec![1.0]);
        }
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, k) = if sa.len() == 2 { (sa[0], sa[1]) } else { (1, sa[0]) };
                let m = sb[1];
                if wants(*a) {
                    let ga = slot(grads, *a, n * k);
                    gemm(n, m, k, Operand::rows(g, m), Operand::transposed(self.value(*b), m), ga, 1.0);
                }
                if wants(*b) {
                    let gb = slot(grads, *b, k * m);
                    gemm(k, n, m, Operand::transposed(self.value(*a), k), Operand::rows(g, m), gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    let ga = slot(grads, *a, g.len());
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if wants(*b) {
                    let nb = self.value(*b).len();
                    let gb = slot(grads, *b, nb);
                    for (i, y) in g.iter().enumerate() {
                        gb[i % nb] += y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let nb = vb.len();
                if wants(*a) {
                    let ga = slot(grads, *a, g.len());
                    for (i, y) in g.iter().enumerate() {
                        ga[i] += y * vb[i % nb];
                    }
                }
                if wants(*b) {
                    let gb = slot(grads, *b, nb);
                    for (i, y) in g.iter().enumerate() {
                        gb[i % nb] += y * va[i];
                    }
                }
            }
            Op::LeakyRelu(a) => {
                let va = self.value(*a);
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += if va[i] > 0.0 { g[i] } else { LEAKY_SLOPE * g[i] };
                }
            }
            Op::Tanh(a) => {
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    let y = node.value[i];
                    ga[i] += g[i] * (1.0 - y * y);
                }
            }
            Op::Square(a) => {
                let va = self.value(*a);
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += 2.0 * va[i] * g[i];
                }
            }
            Op::Exp(a) => {
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * node.value[i];
                }
            }
            Op::Log(a) => {
                let va = self.value(*a);
                let ga = slot(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] / va[i];
                }
            }
            Op::Concat(parts) => {
                let total = *node.shape.last().unwrap();
                let rows = node.value.len() / total.max(1);
                let mut offset = 0;
                for &p in parts {
                    let w = *self.shape(p).last().unwrap();
                    if wants(p) {
                        let gp = slot(grads, p, rows * w);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            gp[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += w;
                }
            }
            Op::MaxReduce(a, arg) => {
                let d = arg.len();
                let na = self.value(*a).len();
                let ga = slot(grads, *a, na);
                for (c, &r) in arg.iter().enumerate() {
                    ga[r * d + c] += g[c];
                }
            }
            Op::Mean(a) => {
                let na = self.value(*a).len();
                let ga = slot(grads, *a, na);
                let share = g[0] / na as f64;
                ga.iter_mut().for_each(|x| *x += share);
            }
            Op::Sum(a) => {
                let na = self.value(*a).len();
                let ga = slot(grads, *a, na);
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}
