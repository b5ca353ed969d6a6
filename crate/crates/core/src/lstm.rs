//! LSTM cell and the (bi)directional sequence layer built from it.
//!
//! A cell keeps its four gate blocks packed in one `(d_in + d_h) x 4·d_h`
//! matrix, column blocks ordered input, forget, output, candidate. Block `k`
//! is the transpose of the usual `d_h x (d_in + d_h)` gate matrix acting on
//! `[x; h_prev]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub weights: Matrix,
    pub bias: Matrix,
}

impl LstmCellParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmCellParams {
            input_dim,
            hidden_dim,
            weights: Matrix::zeros(input_dim + hidden_dim, 4 * hidden_dim),
            bias: Matrix::zeros(1, 4 * hidden_dim),
        }
    }

    /// Uniform weights scaled by `1/sqrt(d_in + d_h)`, zero biases except the
    /// forget gate, which starts at `forget_bias`.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        forget_bias: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = input_dim + hidden_dim;
        let mut bias = Matrix::zeros(1, 4 * hidden_dim);
        bias.data_mut()[hidden_dim..2 * hidden_dim].fill(forget_bias);
        LstmCellParams {
            input_dim,
            hidden_dim,
            weights: Matrix::uniform(fan_in, 4 * hidden_dim, fan_in, rng),
            bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("LSTM hidden dimension must be positive".into()));
        }
        let w = (self.input_dim + self.hidden_dim, 4 * self.hidden_dim);
        if self.weights.shape() != w {
            return Err(Error::Shape {
                op: "lstm weights",
                left: w,
                right: self.weights.shape(),
            });
        }
        if self.bias.shape() != (1, 4 * self.hidden_dim) {
            return Err(Error::Shape {
                op: "lstm bias",
                left: (1, 4 * self.hidden_dim),
                right: self.bias.shape(),
            });
        }
        Ok(())
    }

    pub(crate) fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        out.push((format!("{prefix}.weights"), &self.weights));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        out.push(&mut self.weights);
        out.push(&mut self.bias);
    }

    /// Registers the weights on `tape`, in [`Self::tensors`] order.
    pub fn bind(&self, tape: &mut Tape) -> CellNodes {
        CellNodes {
            weights: tape.leaf(self.weights.clone()),
            bias: tape.leaf(self.bias.clone()),
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
        }
    }
}

/// Tape handles for one bound cell.
#[derive(Clone, Copy, Debug)]
pub struct CellNodes {
    pub weights: NodeId,
    pub bias: NodeId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl CellNodes {
    /// One recurrence step given the precomputed input projection
    /// `x W_x + b` (a `1 x 4·d_h` node).
    fn step(
        &self,
        tape: &mut Tape,
        recurrent: NodeId,
        projected: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let d = self.hidden_dim;
        let from_h = tape.matmul(h_prev, recurrent)?;
        let z = tape.add(projected, from_h)?;
        let i = tape.slice_cols(z, 0, d)?;
        let i = tape.sigmoid(i);
        let f = tape.slice_cols(z, d, d)?;
        let f = tape.sigmoid(f);
        let o = tape.slice_cols(z, 2 * d, d)?;
        let o = tape.sigmoid(o);
        let g = tape.slice_cols(z, 3 * d, d)?;
        let g = tape.tanh(g);
        let keep = tape.mul(f, c_prev)?;
        let write = tape.mul(i, g)?;
        let c = tape.add(keep, write)?;
        let squashed = tape.tanh(c);
        let h = tape.mul(o, squashed)?;
        Ok((h, c))
    }

    /// Runs the cell over every row of `xs` (an `n x d_in` node) from zero
    /// initial state. With `reverse`, the sequence is consumed last row first
    /// and the outputs are returned in the original row order.
    pub fn run(&self, tape: &mut Tape, xs: NodeId, reverse: bool) -> Result<NodeId> {
        let (n, d_in) = tape.value(xs).shape();
        if n == 0 {
            return Err(Error::EmptySequence("lstm"));
        }
        if d_in != self.input_dim {
            return Err(Error::Dimension {
                op: "lstm input",
                expected: self.input_dim,
                actual: d_in,
            });
        }
        let input_map = tape.slice_rows(self.weights, 0, self.input_dim)?;
        let recurrent = tape.slice_rows(self.weights, self.input_dim, self.hidden_dim)?;
        let ordered = if reverse { tape.reverse_rows(xs) } else { xs };
        let projected = tape.matmul(ordered, input_map)?;
        let projected = tape.add_row(projected, self.bias)?;

        let mut h = tape.leaf(Matrix::zeros(1, self.hidden_dim));
        let mut c = tape.leaf(Matrix::zeros(1, self.hidden_dim));
        let mut outputs = Vec::with_capacity(n);
        for t in 0..n {
            let row = tape.slice_rows(projected, t, 1)?;
            (h, c) = self.step(tape, recurrent, row, h, c)?;
            outputs.push(h);
        }
        let stacked = tape.concat_rows(&outputs)?;
        Ok(if reverse {
            tape.reverse_rows(stacked)
        } else {
            stacked
        })
    }
}

/// One LSTM step `(h, c) = cell(x, h_prev, c_prev)`.
pub fn cell_step(
    params: &LstmCellParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.validate()?;
    for (op, expected, actual) in [
        ("cell_step x", params.input_dim, x.len()),
        ("cell_step h", params.hidden_dim, h_prev.len()),
        ("cell_step c", params.hidden_dim, c_prev.len()),
    ] {
        if expected != actual {
            return Err(Error::Dimension {
                op,
                expected,
                actual,
            });
        }
    }
    let mut tape = Tape::new();
    let nodes = params.bind(&mut tape);
    let x = tape.leaf(Matrix::row_vector(x));
    let h = tape.leaf(Matrix::row_vector(h_prev));
    let c = tape.leaf(Matrix::row_vector(c_prev));
    let input_map = tape.slice_rows(nodes.weights, 0, nodes.input_dim)?;
    let recurrent = tape.slice_rows(nodes.weights, nodes.input_dim, nodes.hidden_dim)?;
    let projected = tape.matmul(x, input_map)?;
    let projected = tape.add_row(projected, nodes.bias)?;
    let (h, c) = nodes.step(&mut tape, recurrent, projected, h, c)?;
    Ok((tape.value(h).data().to_vec(), tape.value(c).data().to_vec()))
}

/// A recurrent layer: a forward cell and, when bidirectional, a backward
/// cell. Outputs concatenate the forward and backward hidden states.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmLayer {
    pub forward: LstmCellParams,
    pub backward: Option<LstmCellParams>,
}

impl BiLstmLayer {
    pub fn zeros(input_dim: usize, hidden_dim: usize, bidirectional: bool) -> Self {
        BiLstmLayer {
            forward: LstmCellParams::zeros(input_dim, hidden_dim),
            backward: bidirectional.then(|| LstmCellParams::zeros(input_dim, hidden_dim)),
        }
    }

    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        bidirectional: bool,
        forget_bias: f64,
        rng: &mut R,
    ) -> Self {
        let forward = LstmCellParams::init(input_dim, hidden_dim, forget_bias, rng);
        let backward =
            bidirectional.then(|| LstmCellParams::init(input_dim, hidden_dim, forget_bias, rng));
        BiLstmLayer { forward, backward }
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim
    }

    pub fn is_bidirectional(&self) -> bool {
        self.backward.is_some()
    }

    pub fn output_dim(&self) -> usize {
        self.hidden_dim() * if self.is_bidirectional() { 2 } else { 1 }
    }

    pub fn validate(&self) -> Result<()> {
        self.forward.validate()?;
        if let Some(b) = &self.backward {
            b.validate()?;
            if (b.input_dim, b.hidden_dim) != (self.forward.input_dim, self.forward.hidden_dim) {
                return Err(Error::Config(
                    "forward and backward cells must share input and hidden dimensions".into(),
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        self.forward.tensors(&format!("{prefix}.forward"), out);
        if let Some(b) = &self.backward {
            b.tensors(&format!("{prefix}.backward"), out);
        }
    }

    pub(crate) fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        self.forward.tensors_mut(out);
        if let Some(b) = &mut self.backward {
            b.tensors_mut(out);
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> LayerNodes {
        LayerNodes {
            forward: self.forward.bind(tape),
            backward: self.backward.as_ref().map(|b| b.bind(tape)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNodes {
    pub forward: CellNodes,
    pub backward: Option<CellNodes>,
}

impl LayerNodes {
    /// `n x d_in` in, `n x output_dim` out.
    pub fn run(&self, tape: &mut Tape, xs: NodeId) -> Result<NodeId> {
        let fwd = self.forward.run(tape, xs, false)?;
        match &self.backward {
            Some(b) => {
                let bwd = b.run(tape, xs, true)?;
                tape.concat_cols(&[fwd, bwd])
            }
            None => Ok(fwd),
        }
    }
}

/// Runs `layer` over the rows of `xs`, returning one output row per timestep.
pub fn bilstm_run(layer: &BiLstmLayer, xs: &Matrix) -> Result<Matrix> {
    layer.validate()?;
    let mut tape = Tape::new();
    let nodes = layer.bind(&mut tape);
    let x = tape.leaf(xs.clone());
    let out = nodes.run(&mut tape, x)?;
    Ok(tape.value(out).clone())
}
