//! Adaptive audiovisual gate and the fusion layer that consumes its output.
//!
//! At each timestep the gate computes `c = σ(h_a·W_a + h_v·W_v + b)` and
//! blends `x_av = c·h_a + (1 − c)·h_v`. By default `c` is one scalar per
//! timestep; with an elementwise gate it has one entry per feature.

use rand::Rng;

use crate::error::{Error, Result};
use crate::lstm::{BiLstmLayer, LayerNodes};
use crate::tape::{NodeId, Tape};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct FusionGateParams {
    /// `d x k` map from the audio state, `k` = 1 or `d`.
    pub audio_map: Matrix,
    /// `d x k` map from the visual state.
    pub visual_map: Matrix,
    /// `1 x k`.
    pub bias: Matrix,
}

impl FusionGateParams {
    pub fn zeros(dim: usize, elementwise: bool) -> Self {
        let k = if elementwise { dim } else { 1 };
        FusionGateParams {
            audio_map: Matrix::zeros(dim, k),
            visual_map: Matrix::zeros(dim, k),
            bias: Matrix::zeros(1, k),
        }
    }

    pub fn init<R: Rng + ?Sized>(dim: usize, elementwise: bool, rng: &mut R) -> Self {
        let k = if elementwise { dim } else { 1 };
        // both maps feed one pre-activation
        let fan_in = 2 * dim;
        FusionGateParams {
            audio_map: Matrix::uniform(dim, k, fan_in, rng),
            visual_map: Matrix::uniform(dim, k, fan_in, rng),
            bias: Matrix::zeros(1, k),
        }
    }

    pub fn dim(&self) -> usize {
        self.audio_map.rows()
    }

    pub fn is_elementwise(&self) -> bool {
        self.bias.cols() > 1
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let k = self.bias.cols();
        if self.bias.rows() != 1 || (k != 1 && k != d) {
            return Err(Error::Shape {
                op: "gate bias",
                left: (1, d),
                right: self.bias.shape(),
            });
        }
        for m in [&self.audio_map, &self.visual_map] {
            if m.shape() != (d, k) {
                return Err(Error::Shape {
                    op: "gate map",
                    left: (d, k),
                    right: m.shape(),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        out.push((format!("{prefix}.audio_map"), &self.audio_map));
        out.push((format!("{prefix}.visual_map"), &self.visual_map));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub(crate) fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>) {
        out.push(&mut self.audio_map);
        out.push(&mut self.visual_map);
        out.push(&mut self.bias);
    }

    pub fn bind(&self, tape: &mut Tape) -> GateNodes {
        GateNodes {
            audio_map: tape.leaf(self.audio_map.clone()),
            visual_map: tape.leaf(self.visual_map.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GateNodes {
    pub audio_map: NodeId,
    pub visual_map: NodeId,
    pub bias: NodeId,
}

impl GateNodes {
    /// Returns `(c, x_av)` for `n x d` audio and visual sequences.
    pub fn apply(&self, tape: &mut Tape, audio: NodeId, visual: NodeId) -> Result<(NodeId, NodeId)> {
        let (sa, sv) = (tape.value(audio).shape(), tape.value(visual).shape());
        if sa.0 != sv.0 {
            return Err(Error::LengthMismatch {
                op: "gate",
                left: sa.0,
                right: sv.0,
            });
        }
        if sa.1 != sv.1 {
            return Err(Error::Dimension {
                op: "gate",
                expected: sa.1,
                actual: sv.1,
            });
        }
        let from_audio = tape.matmul(audio, self.audio_map)?;
        let from_visual = tape.matmul(visual, self.visual_map)?;
        let logits = tape.add(from_audio, from_visual)?;
        let logits = tape.add_row(logits, self.bias)?;
        let c = tape.sigmoid(logits);

        // h_v + c ⊙ (h_a − h_v): equal inputs pass through unchanged
        let diff = tape.sub(audio, visual)?;
        let moved = if tape.value(c).cols() == 1 {
            tape.scale_rows(c, diff)?
        } else {
            tape.mul(c, diff)?
        };
        let fused = tape.add(visual, moved)?;
        Ok((c, fused))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateOutput {
    /// Gate value(s) for this timestep; a single entry for a scalar gate.
    pub gate: Vec<f64>,
    pub fused: Vec<f64>,
}

/// Gate and blend a single pair of hidden states.
pub fn gate(params: &FusionGateParams, h_a: &[f64], h_v: &[f64]) -> Result<GateOutput> {
    params.validate()?;
    if h_a.len() != h_v.len() || h_a.len() != params.dim() {
        return Err(Error::Dimension {
            op: "gate",
            expected: params.dim(),
            actual: if h_a.len() != params.dim() { h_a.len() } else { h_v.len() },
        });
    }
    let mut tape = Tape::new();
    let nodes = params.bind(&mut tape);
    let a = tape.leaf(Matrix::row_vector(h_a));
    let v = tape.leaf(Matrix::row_vector(h_v));
    let (c, fused) = nodes.apply(&mut tape, a, v)?;
    Ok(GateOutput {
        gate: tape.value(c).data().to_vec(),
        fused: tape.value(fused).data().to_vec(),
    })
}

/// Gates the two sequences and runs the fusion layer over the blend.
/// Returns `(X_av, H_av)`.
pub fn fuse_sequence(
    gate_params: &FusionGateParams,
    fusion_layer: &BiLstmLayer,
    audio: &Matrix,
    visual: &Matrix,
) -> Result<(Matrix, Matrix)> {
    gate_params.validate()?;
    fusion_layer.validate()?;
    let mut tape = Tape::new();
    let g: GateNodes = gate_params.bind(&mut tape);
    let layer: LayerNodes = fusion_layer.bind(&mut tape);
    let a = tape.leaf(audio.clone());
    let v = tape.leaf(visual.clone());
    let (_, fused) = g.apply(&mut tape, a, v)?;
    let hidden = layer.run(&mut tape, fused)?;
    Ok((tape.value(fused).clone(), tape.value(hidden).clone()))
}
