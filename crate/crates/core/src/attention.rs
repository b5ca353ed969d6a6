//! Self-attention over the fused sequence.
//!
//! Logits are `l[t][i] = <x_i W_1, x_t W_2>`, normalized by a row softmax,
//! and the context is `V_t = Σ_i α[t][i] x_i`. There is no positional term,
//! and all sums over `i` are order-independent, so permuting the sequence
//! permutes the output rows and nothing else.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `W_1`, applied to the attended elements `x_i`.
    pub key_map: Matrix,
    /// `W_2`, applied to the attending element `x_t`.
    pub query_map: Matrix,
}

impl AttentionParams {
    pub fn zeros(dim: usize) -> Self {
        AttentionParams {
            key_map: Matrix::zeros(dim, dim),
            query_map: Matrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        AttentionParams {
            key_map: Matrix::identity(dim),
            query_map: Matrix::identity(dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        AttentionParams {
            key_map: Matrix::uniform(dim, dim, dim, rng),
            query_map: Matrix::uniform(dim, dim, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.key_map.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for m in [&self.key_map, &self.query_map] {
            if m.shape() != (d, d) {
                return Err(Error::Shape {
                    op: "attention map",
                    left: (d, d),
                    right: m.shape(),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        out.push((format!("{prefix}.key_map"), &self.key_map));
        out.push((format!("{prefix}.query_map"), &self.query_map));
    }

    pub(crate) fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        out.push(&mut self.key_map);
        out.push(&mut self.query_map);
    }

    pub fn bind(&self, tape: &mut Tape) -> AttentionNodes {
        AttentionNodes {
            key_map: tape.leaf(self.key_map.clone()),
            query_map: tape.leaf(self.query_map.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionNodes {
    pub key_map: NodeId,
    pub query_map: NodeId,
}

impl AttentionNodes {
    /// Returns `(alpha, V)`: the `n x n` weight matrix (row `t` attends from
    /// `x_t`) and the `n x d` contexts. `scaled` divides logits by `sqrt(d)`.
    pub fn apply(&self, tape: &mut Tape, xs: NodeId, scaled: bool) -> Result<(NodeId, NodeId)> {
        let (n, d) = tape.value(xs).shape();
        if n == 0 {
            return Err(Error::EmptySequence("attention"));
        }
        let keys = tape.matmul(xs, self.key_map)?;
        let queries = tape.matmul(xs, self.query_map)?;
        let mut logits = tape.matmul_nt(queries, keys)?;
        if scaled {
            logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
        }
        let alpha = tape.softmax_rows(logits);
        let context = tape.mix(alpha, xs)?;
        Ok((alpha, context))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    /// Row `t` holds `α_t`.
    pub weights: Matrix,
    /// Row `t` holds `V_t`.
    pub context: Matrix,
}

/// Attention weights and contexts for every timestep of `xs`.
pub fn attend_all(params: &AttentionParams, xs: &Matrix, scaled: bool) -> Result<Attention> {
    params.validate()?;
    if xs.rows() > 0 && xs.cols() != params.dim() {
        return Err(Error::Dimension {
            op: "attention input",
            expected: params.dim(),
            actual: xs.cols(),
        });
    }
    let mut tape = Tape::new();
    let nodes = params.bind(&mut tape);
    let x = tape.leaf(xs.clone());
    let (alpha, context) = nodes.apply(&mut tape, x, scaled)?;
    Ok(Attention {
        weights: tape.value(alpha).clone(),
        context: tape.value(context).clone(),
    })
}

/// Context `V_t` and weights `α_t` for the zero-based timestep `t`.
pub fn attend(params: &AttentionParams, xs: &Matrix, t: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if t >= xs.rows() {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: xs.rows(),
        });
    }
    let all = attend_all(params, xs, false)?;
    Ok((all.context.row(t).to_vec(), all.weights.row(t).to_vec()))
}
