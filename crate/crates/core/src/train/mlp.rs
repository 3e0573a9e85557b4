//! Fully connected ReLU classifier evaluated on an autodiff tape.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

/// Weights are stored `fan_in × fan_out`, so a layer maps `x ↦ xW + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `[W₀, b₀, W₁, b₁, …]`; the last pair is the linear output layer.
    pub params: Vec<Matrix>,
}

/// Tape handles for one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub params: Vec<Var>,
    /// Hidden-layer pre-activations, first to last.
    pub pre: Vec<Var>,
    /// Hidden-layer ReLU outputs, first to last.
    pub post: Vec<Var>,
    pub logits: Var,
}

impl Mlp {
    /// He-normal weights and zero biases for `sizes = [input, hidden…, classes]`.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        if sizes.len() < 3 {
            return Err(Error::Config(
                "an MLP needs an input size, at least one hidden layer, and an output size".into(),
            ));
        }
        if sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        let mut params = Vec::with_capacity(2 * (sizes.len() - 1));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| std * rng.normal()).collect();
            params.push(Matrix::new(fan_in, fan_out, data)?);
            params.push(Matrix::zeros(1, fan_out));
        }
        Ok(Self { params })
    }

    pub fn n_hidden(&self) -> usize {
        self.params.len() / 2 - 1
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &Matrix) -> Result<Forward> {
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let mut h = tape.constant(inputs.clone());
        let (mut pre, mut post) = (Vec::new(), Vec::new());
        let layers = params.len() / 2;
        for l in 0..layers {
            let xw = tape.matmul(h, params[2 * l])?;
            let z = tape.add_row(xw, params[2 * l + 1])?;
            if l + 1 == layers {
                return Ok(Forward {
                    params,
                    pre,
                    post,
                    logits: z,
                });
            }
            h = tape.relu(z);
            pre.push(z);
            post.push(h);
        }
        unreachable!("constructor guarantees an output layer")
    }
}

/// Index of the largest entry in each row.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            m.row(r)
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &x)| if x > best.1 { (i, x) } else { best },
                )
                .0
        })
        .collect()
}
