//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Parameters of a [`DenseNet`] live in one flat `Vec<f64>`; for each layer
//! the row-major `out x in` weight block is followed by the bias block.
//! Gradients use the same layout, which keeps Adam and checkpointing trivial.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MacaError, Result};

/// Version tag written into every checkpoint file.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_width: usize,
    pub out_width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_width: usize, out_width: usize, activation: Activation) -> Self {
        Self {
            in_width,
            out_width,
            activation,
        }
    }

    fn param_count(&self) -> usize {
        self.out_width * (self.in_width + 1)
    }
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug)]
pub struct DenseNet {
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
    id: u64,
    generation: u64,
}

impl Clone for DenseNet {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            params: self.params.clone(),
            id: fresh_id(),
            generation: 0,
        }
    }
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.params == other.params
    }
}

/// Activations recorded by [`DenseNet::forward`]; `values[0]` is the input
/// and `values[k + 1]` is the output of layer `k`.
#[derive(Clone, Debug)]
pub struct Tape {
    net_id: u64,
    generation: u64,
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("tape always holds the input")
    }
}

fn check_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(MacaError::ArchitectureMismatch("network has no layers".into()));
    }
    for (k, l) in layers.iter().enumerate() {
        if l.in_width == 0 || l.out_width == 0 {
            return Err(MacaError::ArchitectureMismatch(format!("layer {k} has zero width")));
        }
    }
    for (k, pair) in layers.windows(2).enumerate() {
        if pair[0].out_width != pair[1].in_width {
            return Err(MacaError::ArchitectureMismatch(format!(
                "layer {k} emits {} values but layer {} expects {}",
                pair[0].out_width,
                k + 1,
                pair[1].in_width
            )));
        }
    }
    Ok(())
}

impl DenseNet {
    /// All parameters zero.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        check_layers(&layers)?;
        let n = layers.iter().map(LayerSpec::param_count).sum();
        Ok(Self {
            layers,
            params: vec![0.0; n],
            id: fresh_id(),
            generation: 0,
        })
    }

    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init<R: Rng + ?Sized>(layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        let mut offset = 0;
        for l in &net.layers {
            let bound = 1.0 / (l.in_width as f64).sqrt();
            for p in &mut net.params[offset..offset + l.param_count()] {
                *p = rng.random_range(-bound..bound);
            }
            offset += l.param_count();
        }
        Ok(net)
    }

    pub fn from_parts(layers: Vec<LayerSpec>, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        if params.len() != net.params.len() {
            return Err(MacaError::WidthMismatch {
                what: "parameter vector",
                expected: net.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(MacaError::NonFinite("network parameters".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the parameters; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_width
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.in_width() {
            return Err(MacaError::WidthMismatch {
                what: "network input",
                expected: self.in_width(),
                got: input.len(),
            });
        }
        Ok(())
    }

    fn layer_into(&self, k: usize, offset: usize, x: &[f64], out: &mut Vec<f64>) {
        let l = self.layers[k];
        let (w, b) = self.params[offset..offset + l.param_count()].split_at(l.out_width * l.in_width);
        out.clear();
        out.extend(w.chunks_exact(l.in_width).zip(b).map(|(row, bias)| {
            let z = bias + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
            l.activation.apply(z)
        }));
    }

    /// Output only, without recording a tape.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let mut offset = 0;
        for k in 0..self.layers.len() {
            self.layer_into(k, offset, &cur, &mut next);
            offset += self.layers[k].param_count();
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(input)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        let mut offset = 0;
        for k in 0..self.layers.len() {
            let mut out = Vec::with_capacity(self.layers[k].out_width);
            self.layer_into(k, offset, &values[k], &mut out);
            offset += self.layers[k].param_count();
            values.push(out);
        }
        let tape = Tape {
            net_id: self.id,
            generation: self.generation,
            values,
        };
        Ok((tape.output().to_vec(), tape))
    }

    /// Gradients of `output . output_grad` with respect to all parameters and
    /// the input.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grads = vec![0.0; self.params.len()];
        let input_grad = self.backward_accumulate(tape, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like [`backward`](Self::backward) but adds the parameter gradient into
    /// `grads`, so that a batch can be accumulated without reallocating.
    pub fn backward_accumulate(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        if tape.net_id != self.id || tape.generation != self.generation {
            return Err(MacaError::StaleTape);
        }
        if output_grad.len() != self.out_width() {
            return Err(MacaError::WidthMismatch {
                what: "output gradient",
                expected: self.out_width(),
                got: output_grad.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(MacaError::WidthMismatch {
                what: "gradient buffer",
                expected: self.params.len(),
                got: grads.len(),
            });
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offsets.push(acc);
            acc += l.param_count();
        }

        let mut delta: Vec<f64> = output_grad.to_vec();
        for k in (0..self.layers.len()).rev() {
            let l = self.layers[k];
            let y = &tape.values[k + 1];
            let x = &tape.values[k];
            for (d, yo) in delta.iter_mut().zip(y) {
                *d *= l.activation.derivative_from_output(*yo);
            }
            let off = offsets[k];
            let n_w = l.out_width * l.in_width;
            let (gw, gb) = grads[off..off + l.param_count()].split_at_mut(n_w);
            for ((grow, gbo), d) in gw.chunks_exact_mut(l.in_width).zip(gb.iter_mut()).zip(&delta) {
                if *d == 0.0 {
                    continue;
                }
                *gbo += d;
                for (g, xi) in grow.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            let w = &self.params[off..off + n_w];
            let mut prev = vec![0.0; l.in_width];
            for (row, d) in w.chunks_exact(l.in_width).zip(&delta) {
                if *d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(row) {
                    *p += d * wi;
                }
            }
            delta = prev;
        }
        Ok(delta)
    }

    pub fn same_architecture(&self, other: &DenseNet) -> bool {
        self.layers == other.layers
    }
}

/// Hard copy of all parameters of `net` into `target`.
pub fn sync_target(net: &DenseNet, target: &mut DenseNet) -> Result<()> {
    if !net.same_architecture(target) {
        return Err(MacaError::ArchitectureMismatch(
            "target network layers differ from source".into(),
        ));
    }
    target.params_mut().copy_from_slice(&net.params);
    Ok(())
}

/// Adam state for one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_stability: f64,
}

impl OptState {
    pub fn adam(param_count: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps_stability: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum UpdateOutcome {
    Applied,
    Skipped(String),
}

/// One Adam step minimizing the loss whose gradient is `grads`.
///
/// Non-finite gradients leave both the network and the optimizer untouched.
pub fn optimizer_update(net: &mut DenseNet, grads: &[f64], opt: &mut OptState) -> Result<UpdateOutcome> {
    if grads.len() != net.param_count() || opt.first_moment.len() != net.param_count() {
        return Err(MacaError::WidthMismatch {
            what: "optimizer update",
            expected: net.param_count(),
            got: grads.len().min(opt.first_moment.len()),
        });
    }
    if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
        let msg = format!("non-finite gradient at parameter {pos}; update skipped");
        log::warn!("{msg}");
        return Ok(UpdateOutcome::Skipped(msg));
    }
    opt.step_count += 1;
    let t = opt.step_count as i32;
    let bias1 = 1.0 - opt.beta1.powi(t);
    let bias2 = 1.0 - opt.beta2.powi(t);
    let (b1, b2, lr, eps) = (opt.beta1, opt.beta2, opt.learning_rate, opt.eps_stability);
    let params = net.params_mut();
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(opt.first_moment.iter_mut())
        .zip(opt.second_moment.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(UpdateOutcome::Applied)
}

/// Serialized form of one network inside a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<f64>,
}

impl NetRecord {
    pub fn from_net(name: &str, net: &DenseNet) -> Self {
        Self {
            name: name.to_owned(),
            layers: net.layers.clone(),
            params: net.params.clone(),
        }
    }

    pub fn to_net(&self) -> Result<DenseNet> {
        DenseNet::from_parts(self.layers.clone(), self.params.clone())
    }
}

/// JSON checkpoint: a role tag plus one or more named networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub networks: Vec<NetRecord>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Result<DenseNet> {
        self.networks
            .iter()
            .find(|n| n.name == name)
            .ok_or_else(|| MacaError::Checkpoint(format!("{} checkpoint lacks network {name:?}", self.role)))?
            .to_net()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(MacaError::Checkpoint(format!(
                "{}: format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                path.display(),
                ck.format_version
            )));
        }
        Ok(ck)
    }
}
