//! Reverse-mode automatic differentiation on a tape of matrix operations.
//!
//! Nodes are appended in evaluation order, so parents always precede their
//! children and a single reverse sweep visits every node after all of its
//! consumers. Scalars are 1×1 matrices.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    index: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Relu(Var),
    Mean(Var),
    Sum(Var),
    Square(Var),
    Cos(Var),
    Sin(Var),
    Scale(Var, f64),
    ConcatRows(Vec<Var>),
    AddRow(Var, Var),
    SubRow(Var, Var),
    Transpose(Var),
    ColMean(Var),
    /// Mean softmax cross-entropy; caches the softmax probabilities.
    CrossEntropy {
        logits: Var,
        probs: Matrix,
        labels: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    /// Gradient of `var`, zero when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Matrix {
        self.get(var).cloned().unwrap_or_else(|| {
            let (r, c) = self.shapes[var.index];
            Matrix::zeros(r, c)
        })
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

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.index].value
    }

    pub fn scalar_value(&self, var: Var) -> f64 {
        self.value(var).as_scalar()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        let (rows, cols) = value.shape();
        self.nodes.push(Node { value, op, needs_grad });
        Var {
            index: self.nodes.len() - 1,
            rows,
            cols,
        }
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index].needs_grad)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::Dimension(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).add(self.value(b))?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).sub(self.value(b))?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), needs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), needs))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let needs = self.needs(&[a]);
        self.push(v, Op::Relu(a), needs)
    }

    /// Mean over all entries.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = m.data().iter().sum::<f64>() / (m.rows() * m.cols()).max(1) as f64;
        let needs = self.needs(&[a]);
        self.push(Matrix::scalar(v), Op::Mean(a), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).data().iter().sum::<f64>();
        let needs = self.needs(&[a]);
        self.push(Matrix::scalar(v), Op::Sum(a), needs)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let needs = self.needs(&[a]);
        self.push(v, Op::Square(a), needs)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::cos);
        let needs = self.needs(&[a]);
        self.push(v, Op::Cos(a), needs)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sin);
        let needs = self.needs(&[a]);
        self.push(v, Op::Sin(a), needs)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        let needs = self.needs(&[a]);
        self.push(v, Op::Scale(a, s), needs)
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat_rows of nothing".into()))?;
        if parts.iter().any(|p| p.cols != first.cols) {
            return Err(Error::Dimension("concat_rows: column counts differ".into()));
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut data = Vec::with_capacity(rows * first.cols);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let needs = self.needs(parts);
        Ok(self.push(
            Matrix::from_vec_unchecked(rows, first.cols, data),
            Op::ConcatRows(parts.to_vec()),
            needs,
        ))
    }

    fn broadcast_row(&mut self, a: Var, row: Var, sign: f64) -> Result<Matrix> {
        if row.rows != 1 || row.cols != a.cols {
            return Err(Error::Dimension(format!(
                "row broadcast of {:?} onto {:?}",
                row.shape(),
                a.shape()
            )));
        }
        let mut v = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..v.rows() {
            for (x, &b) in v.row_mut(i).iter_mut().zip(&r) {
                *x += sign * b;
            }
        }
        Ok(v)
    }

    /// Adds a 1×c row (e.g. a bias) to every row of an r×c matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.broadcast_row(a, row, 1.0)?;
        let needs = self.needs(&[a, row]);
        Ok(self.push(v, Op::AddRow(a, row), needs))
    }

    /// Subtracts a 1×c row from every row of an r×c matrix.
    pub fn sub_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.broadcast_row(a, row, -1.0)?;
        let needs = self.needs(&[a, row]);
        Ok(self.push(v, Op::SubRow(a, row), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let needs = self.needs(&[a]);
        self.push(v, Op::Transpose(a), needs)
    }

    /// Column means as a 1×c row.
    pub fn col_mean(&mut self, a: Var) -> Var {
        let v = Matrix::row_vector(&self.value(a).col_means());
        let needs = self.needs(&[a]);
        self.push(v, Op::ColMean(a), needs)
    }

    /// Mean softmax cross-entropy of `logits` (n×classes) against labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = logits.shape();
        if labels.len() != n {
            return Err(Error::Dimension(format!(
                "cross_entropy: {} labels for {n} rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Dimension(format!(
                "cross_entropy: label {bad} out of range for {k} classes"
            )));
        }
        let z = self.value(logits);
        let mut probs = Matrix::zeros(n, k);
        let mut loss = 0.0;
        for i in 0..n {
            let row = z.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
            let log_denom = denom.ln() + max;
            for (p, &x) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (x - log_denom).exp();
            }
            loss += log_denom - row[labels[i]];
        }
        let needs = self.needs(&[logits]);
        Ok(self.push(
            Matrix::scalar(loss / n.max(1) as f64),
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            needs,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got {:?}",
                loss.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.index).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let mut acc = |var: Var, delta: Matrix| {
            if !self.nodes[var.index].needs_grad {
                return;
            }
            match &mut grads[var.index] {
                Some(existing) => existing.add_assign_scaled(&delta, 1.0),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y)?);
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y)?);
            }
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_nt(self.value(*b))?);
                acc(*b, self.value(*a).matmul_tn(g)?);
            }
            Op::Relu(a) => {
                // Subgradient 0 at the kink.
                acc(*a, g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?);
            }
            Op::Mean(a) => {
                let count = (a.rows * a.cols).max(1) as f64;
                acc(*a, Matrix::filled(a.rows, a.cols, g.as_scalar() / count));
            }
            Op::Sum(a) => acc(*a, Matrix::filled(a.rows, a.cols, g.as_scalar())),
            Op::Square(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| 2.0 * x * gv)?),
            Op::Cos(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| -x.sin() * gv)?),
            Op::Sin(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| x.cos() * gv)?),
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = p.rows * p.cols;
                    let slice = g.data()[offset..offset + n].to_vec();
                    acc(*p, Matrix::from_vec_unchecked(p.rows, p.cols, slice));
                    offset += n;
                }
            }
            Op::AddRow(a, row) | Op::SubRow(a, row) => {
                let sign = if matches!(node.op, Op::AddRow(..)) { 1.0 } else { -1.0 };
                acc(*a, g.clone());
                let mut sums = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (s, &gv) in sums.iter_mut().zip(g.row(r)) {
                        *s += sign * gv;
                    }
                }
                acc(*row, Matrix::row_vector(&sums));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::ColMean(a) => {
                let mut d = Matrix::zeros(a.rows, a.cols);
                let inv = 1.0 / a.rows.max(1) as f64;
                for r in 0..a.rows {
                    for (x, &gv) in d.row_mut(r).iter_mut().zip(g.data()) {
                        *x = gv * inv;
                    }
                }
                acc(*a, d);
            }
            Op::CrossEntropy { logits, probs, labels } => {
                let scale = g.as_scalar() / labels.len().max(1) as f64;
                let mut d = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    d[(i, y)] -= 1.0;
                }
                acc(*logits, d.scale(scale));
            }
        }
        Ok(())
    }
}

/// Compares reverse-mode gradients of `f` at `x` against central
/// differences with step `eps`, returning the largest
/// `|autodiff − fd| / (|fd| + 1e-8)` over all coordinates.
pub fn check_gradient<F>(f: F, x: &Matrix, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |point: &Matrix| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(point.clone());
        let out = f(&mut tape, v)?;
        let value = tape.scalar_value(out);
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite function value".into()));
        }
        Ok(value)
    };

    let mut tape = Tape::new();
    let input = tape.leaf(x.clone());
    let out = f(&mut tape, input)?;
    if !tape.scalar_value(out).is_finite() {
        return Err(Error::Numeric("non-finite function value".into()));
    }
    let analytic = tape.backward(out)?.wrt(input);

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let err = (analytic.data()[i] - fd).abs() / (fd.abs() + 1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grad_at(x: f64, f: impl Fn(&mut Tape, Var) -> Var) -> f64 {
        let mut tape = Tape::new();
        let v = tape.leaf(Matrix::scalar(x));
        let out = f(&mut tape, v);
        tape.backward(out).unwrap().wrt(v).as_scalar()
    }

    #[test]
    fn derivative_of_square_at_three() {
        assert_eq!(grad_at(3.0, |t, v| t.square(v)), 6.0);
    }

    #[test]
    fn derivative_of_cos_at_zero() {
        assert_eq!(grad_at(0.0, |t, v| t.cos(v)), 0.0);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        assert_eq!(grad_at(0.0, |t, v| t.relu(v)), 0.0);
        assert_eq!(grad_at(0.5, |t, v| t.relu(v)), 1.0);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(Matrix::zeros(2, 3));
        let b = tape.leaf(Matrix::zeros(3, 2));
        assert!(matches!(tape.add(a, b), Err(Error::Dimension(_))));
        assert!(matches!(tape.matmul(a, a), Err(Error::Dimension(_))));
        assert!(matches!(tape.backward(a), Err(Error::Dimension(_))));
        let row = tape.leaf(Matrix::zeros(1, 2));
        assert!(tape.add_row(a, row).is_err());
    }

    #[test]
    fn sum_of_squares_gradient_is_exact() {
        let x = Matrix::new(2, 2, vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let err = check_gradient(
            |t, v| {
                let s = t.square(v);
                Ok(t.sum(s))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn unused_input_has_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Matrix::scalar(1.0));
        let b = tape.leaf(Matrix::zeros(2, 2));
        let l = tape.square(a);
        let grads = tape.backward(l).unwrap();
        assert!(grads.get(b).is_none());
        assert_eq!(grads.wrt(b), Matrix::zeros(2, 2));
    }

    #[test]
    fn concat_and_broadcast_gradients() {
        let x = Matrix::new(3, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
        let err = check_gradient(
            |t, v| {
                let m = t.col_mean(v);
                let centered = t.sub_row(v, m)?;
                let both = t.concat_rows(&[centered, v])?;
                let tr = t.transpose(both);
                let gram = t.matmul(tr, both)?;
                let c = t.cos(gram);
                Ok(t.mean(c))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn cross_entropy_gradient() {
        let x = Matrix::new(
            3,
            4,
            vec![0.1, 2.0, -1.0, 0.3, 0.0, 0.0, 0.5, -0.2, 1.0, -3.0, 0.2, 0.9],
        )
        .unwrap();
        let labels = [1, 3, 0];
        let err = check_gradient(|t, v| t.cross_entropy(v, &labels), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
        let mut tape = Tape::new();
        let v = tape.leaf(x);
        assert!(tape.cross_entropy(v, &[0, 9, 0]).is_err());
    }
}
