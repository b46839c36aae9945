//! Convolutional GRU producing the local-cost residual.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::tensor::{conv2d_same, open_tanh, sigmoid, Tensor3, BELOW_ONE};
use crate::weights::{read_layers, write_layers, Activation, ConvLayer, Role};

/// Gate, candidate, and output-head convolutions for one cascade stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub hidden: usize,
    pub input: usize,
    pub update: ConvLayer,
    pub reset: ConvLayer,
    pub candidate: ConvLayer,
    pub head: ConvLayer,
}

impl GruWeights {
    pub fn new(update: ConvLayer, reset: ConvLayer, candidate: ConvLayer, head: ConvLayer) -> Result<Self> {
        let hidden = update.out_channels;
        let joint = update.in_channels;
        if joint <= hidden {
            return Err(Error::WeightFormat(format!(
                "gate input {joint} must exceed hidden size {hidden}"
            )));
        }
        for (name, g) in [("reset", &reset), ("candidate", &candidate)] {
            if g.out_channels != hidden || g.in_channels != joint {
                return Err(Error::WeightFormat(format!(
                    "{name} gate is {}→{}, expected {joint}→{hidden}",
                    g.in_channels, g.out_channels
                )));
            }
        }
        if head.in_channels != hidden {
            return Err(Error::WeightFormat(format!(
                "head reads {} channels, hidden state has {hidden}",
                head.in_channels
            )));
        }
        for layer in [&update, &reset, &candidate, &head] {
            layer.validate()?;
        }
        Ok(Self {
            hidden,
            input: joint - hidden,
            update: update.with_role(Role::UpdateGate),
            reset: reset.with_role(Role::ResetGate),
            candidate: candidate.with_role(Role::Candidate),
            head: head.with_role(Role::Head),
        })
    }

    /// Channels of ΔC this stage emits.
    pub fn output(&self) -> usize {
        self.head.out_channels
    }

    /// Uniform weights in ±`gain`/√fan_in from a seeded generator.
    pub fn random(hidden: usize, input: usize, output: usize, seed: u64, gain: f32) -> Self {
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut layer = |out: usize, inp: usize, act: Activation| {
            let amp = gain / ((inp * 9) as f32).sqrt();
            let kernel = (0..out * inp * 9).map(|_| rng.random_range(-amp..amp)).collect();
            let bias = (0..out).map(|_| rng.random_range(-amp..amp)).collect();
            ConvLayer::new(out, inp, 3, 3, act, kernel, bias).expect("consistent dims")
        };
        let joint = hidden + input;
        let update = layer(hidden, joint, Activation::Linear);
        let reset = layer(hidden, joint, Activation::Linear);
        let candidate = layer(hidden, joint, Activation::Tanh);
        let head = layer(output, hidden, Activation::Linear);
        Self::new(update, reset, candidate, head).expect("consistent dims")
    }

    fn layers(&self) -> [ConvLayer; 4] {
        [
            self.update.clone(),
            self.reset.clone(),
            self.candidate.clone(),
            self.head.clone(),
        ]
    }
}

/// One file holds every stage's weights, four role-tagged layers per stage.
pub fn save_gru_stages(stages: &[GruWeights], path: impl AsRef<Path>) -> Result<()> {
    let layers: Vec<ConvLayer> = stages.iter().flat_map(|s| s.layers()).collect();
    write_layers(&layers, path)
}

pub fn load_gru_stages(path: impl AsRef<Path>) -> Result<Vec<GruWeights>> {
    let layers = read_layers(path)?;
    if layers.is_empty() || layers.len() % 4 != 0 {
        return Err(Error::WeightFormat(format!(
            "{} layers do not form whole GRU stages",
            layers.len()
        )));
    }
    let expected = [Role::UpdateGate, Role::ResetGate, Role::Candidate, Role::Head];
    layers
        .chunks_exact(4)
        .enumerate()
        .map(|(stage, chunk)| {
            for (layer, role) in chunk.iter().zip(expected) {
                if layer.role != role {
                    return Err(Error::WeightFormat(format!(
                        "stage {stage}: expected {role:?} tensor, found {:?}",
                        layer.role
                    )));
                }
            }
            GruWeights::new(chunk[0].clone(), chunk[1].clone(), chunk[2].clone(), chunk[3].clone())
        })
        .collect()
}

/// z = σ(W_z [h‖u]), r = σ(W_r [h‖u]), h̃ = tanh(W_h [r⊙h ‖ u]),
/// h' = (1 − z) h + z h̃, ΔC = W_o h'.
pub fn conv_gru_step(hidden: &Tensor3, input: &Tensor3, w: &GruWeights) -> Result<(Tensor3, Tensor3)> {
    if hidden.channels != w.hidden || input.channels != w.input {
        return Err(Error::WeightFormat(format!(
            "GRU expects {} hidden + {} input channels, got {} + {}",
            w.hidden, w.input, hidden.channels, input.channels
        )));
    }
    if !hidden.same_spatial(input) {
        return Err(Error::Dimension("hidden state and input differ spatially".into()));
    }
    let conv =
        |x: &Tensor3, l: &crate::weights::ConvLayer| conv2d_same(x, &l.kernel, &l.bias, l.out_channels, l.kh, l.kw);
    let joint = Tensor3::concat(&[hidden, input])?;
    let z = conv(&joint, &w.update)?.map(sigmoid);
    let r = conv(&joint, &w.reset)?.map(sigmoid);
    let mut gated = hidden.clone();
    for (g, rv) in gated.data.iter_mut().zip(&r.data) {
        *g *= rv;
    }
    let candidate = conv(&Tensor3::concat(&[&gated, input])?, &w.candidate)?.map(open_tanh);
    let mut next = hidden.clone();
    for ((h, zv), c) in next.data.iter_mut().zip(&z.data).zip(&candidate.data) {
        *h = ((1.0 - zv) * *h + zv * c).clamp(-BELOW_ONE, BELOW_ONE);
    }
    let delta = conv(&next, &w.head)?;
    Ok((next, delta))
}
