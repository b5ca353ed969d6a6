//! The full network, its ablation variants and the regression loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionNodes, AttentionParams};
use crate::data::FeatureSequence;
use crate::error::{Error, Result};
use crate::fusion::{FusionGateParams, GateNodes};
use crate::gradcheck::Parameters;
use crate::lstm::{BiLstmLayer, LayerNodes};
use crate::tape::{NodeId, Tape};
use crate::tensor::Matrix;

/// Which parts of the network are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Two-stream encoder, gate, fusion layer and attention.
    Full,
    /// Audio stream only.
    AudioOnly,
    /// Visual stream only.
    VisualOnly,
    /// Both streams, concatenated, no fusion or attention.
    TwoStreamOnly,
    /// Gate and fusion layer applied directly to the raw features.
    FusionOnly,
    /// Full model without the attention context in the head.
    NoSave,
    /// Full model with every recurrent layer running forward only.
    SingleDirection,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 7] = [
        ModelVariant::AudioOnly,
        ModelVariant::VisualOnly,
        ModelVariant::TwoStreamOnly,
        ModelVariant::FusionOnly,
        ModelVariant::NoSave,
        ModelVariant::SingleDirection,
        ModelVariant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::AudioOnly => "audio-only",
            ModelVariant::VisualOnly => "visual-only",
            ModelVariant::TwoStreamOnly => "two-stream-only",
            ModelVariant::FusionOnly => "fusion-only",
            ModelVariant::NoSave => "no-save",
            ModelVariant::SingleDirection => "single-direction",
        }
    }

    /// Row label used in ablation tables.
    pub fn table_label(self) -> &'static str {
        match self {
            ModelVariant::Full => "AVRN",
            ModelVariant::AudioOnly => "Audio LSTM",
            ModelVariant::VisualOnly => "Visual LSTM",
            ModelVariant::TwoStreamOnly => "TS-LSTM",
            ModelVariant::FusionOnly => "AVF-LSTM",
            ModelVariant::NoSave => "AVRN(w/o SAVE)",
            ModelVariant::SingleDirection => "AVRN(single)",
        }
    }

    fn uses(self, group: Group) -> bool {
        use Group::*;
        use ModelVariant::*;
        match self {
            Full | SingleDirection => true,
            AudioOnly => matches!(group, Audio | Head),
            VisualOnly => matches!(group, Visual | Head),
            TwoStreamOnly => matches!(group, Audio | Visual | Head),
            FusionOnly => matches!(group, Gate | Fusion | Head),
            NoSave => !matches!(group, Attention),
        }
    }

    /// Names of the parameter groups that receive gradient.
    pub fn active_groups(self) -> Vec<&'static str> {
        Group::ALL
            .iter()
            .filter(|g| self.uses(**g))
            .map(|g| g.name())
            .collect()
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = ModelVariant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant {s:?}, expected one of {}", known.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Group {
    Visual,
    Audio,
    Gate,
    Fusion,
    Attention,
    Head,
}

impl Group {
    const ALL: [Group; 6] = [
        Group::Visual,
        Group::Audio,
        Group::Gate,
        Group::Fusion,
        Group::Attention,
        Group::Head,
    ];

    fn name(self) -> &'static str {
        match self {
            Group::Visual => "visual_stream",
            Group::Audio => "audio_stream",
            Group::Gate => "gate",
            Group::Fusion => "fusion_layer",
            Group::Attention => "attention",
            Group::Head => "head",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub visual_dim: usize,
    pub audio_dim: usize,
    /// Hidden size per direction.
    pub hidden_dim: usize,
    #[serde(default)]
    pub elementwise_gate: bool,
    #[serde(default)]
    pub scaled_attention: bool,
    #[serde(default = "default_forget_bias")]
    pub forget_bias: f64,
}

fn default_forget_bias() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn new(variant: ModelVariant, visual_dim: usize, audio_dim: usize, hidden_dim: usize) -> Self {
        ModelConfig {
            variant,
            visual_dim,
            audio_dim,
            hidden_dim,
            elementwise_gate: false,
            scaled_attention: false,
            forget_bias: default_forget_bias(),
        }
    }

    fn bidirectional(&self) -> bool {
        self.variant != ModelVariant::SingleDirection
    }

    /// Width of one recurrent layer's output.
    pub fn stream_dim(&self) -> usize {
        self.hidden_dim * if self.bidirectional() { 2 } else { 1 }
    }

    /// Width of the gate input: the stream output, or for [`ModelVariant::FusionOnly`]
    /// the wider of the raw feature widths (the narrower one is zero-padded).
    pub fn fused_dim(&self) -> usize {
        match self.variant {
            ModelVariant::FusionOnly => self.visual_dim.max(self.audio_dim),
            _ => self.stream_dim(),
        }
    }

    pub fn head_dim(&self) -> usize {
        let s = self.stream_dim();
        match self.variant {
            ModelVariant::Full | ModelVariant::SingleDirection => 3 * s,
            ModelVariant::NoSave | ModelVariant::TwoStreamOnly => 2 * s,
            ModelVariant::AudioOnly | ModelVariant::VisualOnly => s,
            ModelVariant::FusionOnly => self.fused_dim() + s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.visual_dim == 0 || self.audio_dim == 0 {
            return Err(Error::Config(format!(
                "dimensions must be positive (visual {}, audio {}, hidden {})",
                self.visual_dim, self.audio_dim, self.hidden_dim
            )));
        }
        if !self.forget_bias.is_finite() {
            return Err(Error::Config("forget bias must be finite".into()));
        }
        Ok(())
    }
}

/// Every trainable weight of the network.
///
/// All groups are present for every variant; groups a variant does not use
/// keep their full-model shapes and never receive gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct AvrnParams {
    pub config: ModelConfig,
    pub visual_stream: BiLstmLayer,
    pub audio_stream: BiLstmLayer,
    pub gate: FusionGateParams,
    pub fusion_layer: BiLstmLayer,
    pub attention: AttentionParams,
    /// `head_dim x 1`.
    pub head_weights: Matrix,
    /// `1 x 1`.
    pub head_bias: Matrix,
}

impl AvrnParams {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let bi = config.bidirectional();
        let (s, f) = (config.stream_dim(), config.fused_dim());
        Ok(AvrnParams {
            visual_stream: BiLstmLayer::zeros(config.visual_dim, h, bi),
            audio_stream: BiLstmLayer::zeros(config.audio_dim, h, bi),
            gate: FusionGateParams::zeros(f, config.elementwise_gate),
            fusion_layer: BiLstmLayer::zeros(f, h, bi),
            attention: AttentionParams::zeros(s),
            head_weights: Matrix::zeros(config.head_dim(), 1),
            head_bias: Matrix::zeros(1, 1),
            config,
        })
    }

    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        let bi = config.bidirectional();
        let fb = config.forget_bias;
        let (s, f) = (config.stream_dim(), config.fused_dim());
        Ok(AvrnParams {
            visual_stream: BiLstmLayer::init(config.visual_dim, h, bi, fb, rng),
            audio_stream: BiLstmLayer::init(config.audio_dim, h, bi, fb, rng),
            gate: FusionGateParams::init(f, config.elementwise_gate, rng),
            fusion_layer: BiLstmLayer::init(f, h, bi, fb, rng),
            attention: AttentionParams::init(s, rng),
            head_weights: Matrix::uniform(config.head_dim(), 1, config.head_dim(), rng),
            head_bias: Matrix::zeros(1, 1),
            config,
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.visual_stream.validate()?;
        self.audio_stream.validate()?;
        self.gate.validate()?;
        self.fusion_layer.validate()?;
        self.attention.validate()?;
        let c = &self.config;
        let checks = [
            ("visual stream input", c.visual_dim, self.visual_stream.input_dim()),
            ("audio stream input", c.audio_dim, self.audio_stream.input_dim()),
            ("gate width", c.fused_dim(), self.gate.dim()),
            ("fusion input", c.fused_dim(), self.fusion_layer.input_dim()),
            ("attention width", c.stream_dim(), self.attention.dim()),
            ("head input", c.head_dim(), self.head_weights.rows()),
        ];
        for (op, expected, actual) in checks {
            if expected != actual {
                return Err(Error::Dimension {
                    op,
                    expected,
                    actual,
                });
            }
        }
        for layer in [&self.visual_stream, &self.audio_stream, &self.fusion_layer] {
            if layer.hidden_dim() != c.hidden_dim || layer.is_bidirectional() != c.bidirectional() {
                return Err(Error::Config("recurrent layer does not match the model config".into()));
            }
        }
        if self.head_weights.cols() != 1 || self.head_bias.shape() != (1, 1) {
            return Err(Error::Config("head must map to a single score".into()));
        }
        Ok(())
    }

    fn bind(&self, tape: &mut Tape) -> BoundParams {
        let first = tape.len();
        let bound = BoundParams {
            visual: self.visual_stream.bind(tape),
            audio: self.audio_stream.bind(tape),
            gate: self.gate.bind(tape),
            fusion: self.fusion_layer.bind(tape),
            attention: self.attention.bind(tape),
            head_weights: tape.leaf(self.head_weights.clone()),
            head_bias: tape.leaf(self.head_bias.clone()),
            first,
        };
        debug_assert_eq!(tape.len() - first, self.tensors().len());
        bound
    }
}

impl Parameters for AvrnParams {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.visual_stream.tensors(Group::Visual.name(), &mut out);
        self.audio_stream.tensors(Group::Audio.name(), &mut out);
        self.gate.tensors(Group::Gate.name(), &mut out);
        self.fusion_layer.tensors(Group::Fusion.name(), &mut out);
        self.attention.tensors(Group::Attention.name(), &mut out);
        out.push(("head.weights".to_string(), &self.head_weights));
        out.push(("head.bias".to_string(), &self.head_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        self.visual_stream.tensors_mut(&mut out);
        self.audio_stream.tensors_mut(&mut out);
        self.gate.tensors_mut(&mut out);
        self.fusion_layer.tensors_mut(&mut out);
        self.attention.tensors_mut(&mut out);
        out.push(&mut self.head_weights);
        out.push(&mut self.head_bias);
        out
    }
}

/// Parameter leaves on a tape; they occupy a contiguous block starting at
/// `first`, in [`Parameters::tensors`] order.
struct BoundParams {
    visual: LayerNodes,
    audio: LayerNodes,
    gate: GateNodes,
    fusion: LayerNodes,
    attention: AttentionNodes,
    head_weights: NodeId,
    head_bias: NodeId,
    first: usize,
}

#[derive(Clone, Copy, Debug, Default)]
struct ForwardNodes {
    scores: Option<NodeId>,
    gate: Option<NodeId>,
    fused: Option<NodeId>,
    fusion_states: Option<NodeId>,
    attention_weights: Option<NodeId>,
    context: Option<NodeId>,
}

/// Predicted scores plus whichever intermediate sequences the variant
/// computes.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    /// `p_t` for every timestep.
    pub scores: Vec<f64>,
    /// Gate values `c_t` (`n x 1`, or `n x d` with an elementwise gate).
    pub gate: Option<Matrix>,
    /// `x_av` rows.
    pub fused: Option<Matrix>,
    /// Fusion layer states `h_av`.
    pub fusion_states: Option<Matrix>,
    /// Attention weight matrix, row `t` = `α_t`.
    pub attention_weights: Option<Matrix>,
    /// Attention contexts `V_t`.
    pub context: Option<Matrix>,
}

fn pad_cols(tape: &mut Tape, x: NodeId, width: usize) -> Result<NodeId> {
    let (n, d) = tape.value(x).shape();
    if d == width {
        return Ok(x);
    }
    let zeros = tape.leaf(Matrix::zeros(n, width - d));
    tape.concat_cols(&[x, zeros])
}

fn record(tape: &mut Tape, params: &AvrnParams, feats: &FeatureSequence) -> Result<(BoundParams, ForwardNodes)> {
    params.validate()?;
    let c = &params.config;
    let (n, dv) = feats.visual.shape();
    let (na, da) = feats.audio.shape();
    if n != na {
        return Err(Error::data(
            &feats.video_id,
            format!("misaligned streams: {n} visual rows, {na} audio rows"),
        ));
    }
    if n == 0 {
        return Err(Error::EmptySequence("forward"));
    }
    if dv != c.visual_dim || da != c.audio_dim {
        return Err(Error::Config(format!(
            "video {}: features are {dv}/{da} wide, model expects {}/{}",
            feats.video_id, c.visual_dim, c.audio_dim
        )));
    }

    let bound = params.bind(tape);
    let visual = tape.leaf(feats.visual.clone());
    let audio = tape.leaf(feats.audio.clone());
    let mut out = ForwardNodes::default();

    let head_input = match c.variant {
        ModelVariant::AudioOnly => bound.audio.run(tape, audio)?,
        ModelVariant::VisualOnly => bound.visual.run(tape, visual)?,
        ModelVariant::TwoStreamOnly => {
            let ha = bound.audio.run(tape, audio)?;
            let hv = bound.visual.run(tape, visual)?;
            tape.concat_cols(&[ha, hv])?
        }
        ModelVariant::FusionOnly => {
            let width = c.fused_dim();
            let a = pad_cols(tape, audio, width)?;
            let v = pad_cols(tape, visual, width)?;
            let (gate, fused) = bound.gate.apply(tape, a, v)?;
            let hav = bound.fusion.run(tape, fused)?;
            out.gate = Some(gate);
            out.fused = Some(fused);
            out.fusion_states = Some(hav);
            tape.concat_cols(&[fused, hav])?
        }
        ModelVariant::Full | ModelVariant::NoSave | ModelVariant::SingleDirection => {
            let ha = bound.audio.run(tape, audio)?;
            let hv = bound.visual.run(tape, visual)?;
            let (gate, fused) = bound.gate.apply(tape, ha, hv)?;
            let hav = bound.fusion.run(tape, fused)?;
            out.gate = Some(gate);
            out.fused = Some(fused);
            out.fusion_states = Some(hav);
            if c.variant == ModelVariant::NoSave {
                tape.concat_cols(&[fused, hav])?
            } else {
                let (alpha, context) = bound.attention.apply(tape, fused, c.scaled_attention)?;
                out.attention_weights = Some(alpha);
                out.context = Some(context);
                tape.concat_cols(&[fused, hav, context])?
            }
        }
    };

    let logits = tape.matmul(head_input, bound.head_weights)?;
    let logits = tape.add_row(logits, bound.head_bias)?;
    out.scores = Some(tape.sigmoid(logits));
    Ok((bound, out))
}

/// Scores every timestep of `feats`. Pure: identical inputs give
/// bit-identical outputs.
pub fn forward(params: &AvrnParams, feats: &FeatureSequence) -> Result<Forward> {
    let mut tape = Tape::new();
    let (_, nodes) = record(&mut tape, params, feats)?;
    let get = |id: Option<NodeId>| id.map(|i| tape.value(i).clone());
    Ok(Forward {
        scores: tape.value(nodes.scores.expect("scores recorded")).data().to_vec(),
        gate: get(nodes.gate),
        fused: get(nodes.fused),
        fusion_states: get(nodes.fusion_states),
        attention_weights: get(nodes.attention_weights),
        context: get(nodes.context),
    })
}

/// Predicted and target importance for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceCurve {
    pub predicted: Vec<f64>,
    pub target: Vec<f64>,
}

impl ImportanceCurve {
    pub fn new(predicted: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        if predicted.len() != target.len() {
            return Err(Error::LengthMismatch {
                op: "importance curve",
                left: predicted.len(),
                right: target.len(),
            });
        }
        Ok(ImportanceCurve { predicted, target })
    }
}

/// Mean squared error `(1/n)·||p − g||²`.
pub fn loss(curve: &ImportanceCurve) -> Result<f64> {
    let (p, g) = (&curve.predicted, &curve.target);
    if p.len() != g.len() {
        return Err(Error::LengthMismatch {
            op: "loss",
            left: p.len(),
            right: g.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::EmptySequence("loss"));
    }
    Ok(p.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64)
}

/// Loss against `target` and its gradient for every tensor in
/// [`Parameters::tensors`] order.
pub fn loss_and_gradients(
    params: &AvrnParams,
    feats: &FeatureSequence,
    target: &[f64],
) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let (bound, nodes) = record(&mut tape, params, feats)?;
    let scores = nodes.scores.expect("scores recorded");
    let n = tape.value(scores).rows();
    if target.len() != n {
        return Err(Error::LengthMismatch {
            op: "loss",
            left: n,
            right: target.len(),
        });
    }
    let root = tape.mean_squared_error(scores, &Matrix::column_vector(target))?;
    let value = tape.value(root).get(0, 0);
    let mut grads = tape.backward(root)?;
    let count = params.tensors().len();
    // leaves were pushed contiguously by `bind`
    let out = (0..count)
        .map(|k| grads.take(NodeId::from_index(bound.first + k)))
        .collect();
    Ok((value, out))
}

/// Loss only, without recording gradients beyond the forward tape.
pub fn evaluate_loss(params: &AvrnParams, feats: &FeatureSequence, target: &[f64]) -> Result<f64> {
    let out = forward(params, feats)?;
    loss(&ImportanceCurve::new(out.scores, target.to_vec())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::group_of;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn features(n: usize, dv: usize, da: usize, rng: &mut ChaCha8Rng) -> FeatureSequence {
        FeatureSequence::new(
            "toy",
            Matrix::uniform(n, dv, 1, rng),
            Matrix::uniform(n, da, 1, rng),
        )
        .unwrap()
    }

    #[test]
    fn zero_model_predicts_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let feats = features(5, 3, 2, &mut rng);
        for v in ModelVariant::ALL {
            let p = AvrnParams::zeros(ModelConfig::new(v, 3, 2, 2)).unwrap();
            let out = forward(&p, &feats).unwrap();
            assert_eq!(out.scores, vec![0.5; 5], "{v}");
        }
    }

    #[test]
    fn loss_examples() {
        let c = ImportanceCurve::new(vec![0.2, 0.4], vec![0.2, 0.4]).unwrap();
        assert_eq!(loss(&c).unwrap(), 0.0);
        let c = ImportanceCurve::new(vec![0.5], vec![1.0]).unwrap();
        assert_eq!(loss(&c).unwrap(), 0.25);
        let g = [0.1, 0.5, 0.3, 0.8, 0.0];
        let p: Vec<f64> = g.iter().map(|v| v + 0.1).collect();
        let c = ImportanceCurve::new(p, g.to_vec()).unwrap();
        assert!((loss(&c).unwrap() - 0.01).abs() < 1e-15);
        assert!(ImportanceCurve::new(vec![0.1], vec![]).is_err());
    }

    #[test]
    fn misaligned_features_are_rejected() {
        let p = AvrnParams::zeros(ModelConfig::new(ModelVariant::Full, 2, 2, 2)).unwrap();
        let feats = FeatureSequence {
            video_id: "bad".into(),
            visual: Matrix::zeros(4, 2),
            audio: Matrix::zeros(3, 2),
            silent: false,
        };
        let err = forward(&p, &feats).unwrap_err();
        assert!(err.to_string().contains("bad"), "{err}");
    }

    #[test]
    fn wrong_feature_width_is_a_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = AvrnParams::zeros(ModelConfig::new(ModelVariant::Full, 4, 2, 2)).unwrap();
        let feats = features(3, 3, 2, &mut rng);
        assert!(matches!(forward(&p, &feats), Err(Error::Config(_))));
    }

    #[test]
    fn unused_groups_get_exactly_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feats = features(6, 3, 2, &mut rng);
        let target = vec![0.3; 6];
        for v in ModelVariant::ALL {
            let p = AvrnParams::init(ModelConfig::new(v, 3, 2, 3), &mut rng).unwrap();
            let (_, grads) = loss_and_gradients(&p, &feats, &target).unwrap();
            let active = v.active_groups();
            for ((name, _), g) in p.tensors().iter().zip(&grads) {
                let used = active.contains(&group_of(name));
                let zero = g.data().iter().all(|&x| x == 0.0);
                if !used {
                    assert!(zero, "{v}: {name} should be untouched");
                }
            }
            // the head always learns
            assert!(grads.last().unwrap().get(0, 0) != 0.0);
        }
        let full: Vec<_> = ModelVariant::Full.active_groups();
        for v in [ModelVariant::TwoStreamOnly, ModelVariant::FusionOnly] {
            let sub = v.active_groups();
            assert!(sub.len() < full.len() && sub.iter().all(|g| full.contains(g)));
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ModelVariant::ALL {
            assert_eq!(v.name().parse::<ModelVariant>().unwrap(), v);
        }
        assert!("avrn".parse::<ModelVariant>().is_err());
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feats = features(7, 3, 2, &mut rng);
        let p = AvrnParams::init(ModelConfig::new(ModelVariant::Full, 3, 2, 3), &mut rng).unwrap();
        let a = forward(&p, &feats).unwrap();
        let b = forward(&p, &feats).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.scores), bits(&b.scores));
    }
}
