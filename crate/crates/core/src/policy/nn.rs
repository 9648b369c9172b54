//! Portable MLP / LSTM weights and their forward pass.
//!
//! Matrices are stored row-major (`w[r * cols + c]`), so a dense layer maps a
//! `cols`-vector to a `rows`-vector. LSTM gate blocks follow the common
//! `(input, forget, cell, output)` stacking.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    /// Absent means sigmoid for hidden layers and identity for the last one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
}

impl DenseLayer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseLayer { rows, cols, w: vec![0.0; rows * cols], b: vec![0.0; rows], activation: None }
    }

    fn check(&self, what: &str) -> Result<()> {
        if self.w.len() != self.rows * self.cols || self.b.len() != self.rows {
            return Err(Error::Weights(format!(
                "{what}: declared {}x{} but w has {} and b has {} entries",
                self.rows,
                self.cols,
                self.w.len(),
                self.b.len()
            )));
        }
        Ok(())
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.w.chunks_exact(self.cols).zip(&self.b).map(|(row, b)| {
            row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v)
        }));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `4h × input_size`
    pub w_ih: Vec<f64>,
    /// `4h × h`
    pub w_hh: Vec<f64>,
    pub b_ih: Vec<f64>,
    pub b_hh: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let g = 4 * hidden_size;
        LstmCell {
            input_size,
            hidden_size,
            w_ih: vec![0.0; g * input_size],
            w_hh: vec![0.0; g * hidden_size],
            b_ih: vec![0.0; g],
            b_hh: vec![0.0; g],
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        let g = 4 * self.hidden_size;
        if self.w_ih.len() != g * self.input_size
            || self.w_hh.len() != g * self.hidden_size
            || self.b_ih.len() != g
            || self.b_hh.len() != g
        {
            return Err(Error::Weights(format!("{what}: lstm tensor sizes inconsistent with declared shape")));
        }
        Ok(())
    }
}

/// Recurrent state `(h, c)` of one LSTM sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Mlp,
    Lstm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputTransform {
    /// `log10(u + 1e-12)`, for nonnegative magnitudes.
    Log10,
    /// `sign(u) log10(1 + |u| / 1e-6)`
    Symlog,
    Identity,
}

impl InputTransform {
    #[inline]
    pub fn apply(self, u: f64) -> f64 {
        match self {
            InputTransform::Log10 => (u + 1e-12).log10(),
            InputTransform::Symlog => u.signum() * (1.0 + u.abs() / 1e-6).log10(),
            InputTransform::Identity => u,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: Arch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lstm: Option<LstmCell>,
    pub layers: Vec<DenseLayer>,
}

impl Network {
    pub fn mlp(layers: Vec<DenseLayer>) -> Self {
        Network { arch: Arch::Mlp, lstm: None, layers }
    }

    pub fn input_dim(&self) -> usize {
        match (&self.arch, &self.lstm) {
            (Arch::Lstm, Some(c)) => c.input_size,
            _ => self.layers.first().map_or(0, |l| l.cols),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn hidden_size(&self) -> usize {
        self.lstm.as_ref().map_or(0, |c| c.hidden_size)
    }

    pub fn validate(&self, head: &str, inputs: usize, outputs: usize) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Weights(format!("{head}: no dense layers")));
        }
        let mut width = match (self.arch, &self.lstm) {
            (Arch::Mlp, None) => self.layers[0].cols,
            (Arch::Lstm, Some(c)) => {
                c.check(head)?;
                c.hidden_size
            }
            (Arch::Mlp, Some(_)) => return Err(Error::Weights(format!("{head}: mlp must not carry lstm tensors"))),
            (Arch::Lstm, None) => return Err(Error::Weights(format!("{head}: lstm architecture without lstm tensors"))),
        };
        if self.input_dim() != inputs {
            return Err(Error::Weights(format!("{head}: expects {inputs} inputs, file declares {}", self.input_dim())));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.check(&format!("{head} layer {i}"))?;
            if l.cols != width {
                return Err(Error::Weights(format!("{head} layer {i}: expects width {width}, has {} columns", l.cols)));
            }
            width = l.rows;
        }
        if width != outputs {
            return Err(Error::Weights(format!("{head}: expects {outputs} outputs, file declares {width}")));
        }
        Ok(())
    }

    fn dense_head(&self, input: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.affine(&cur, &mut next);
            let act = l.activation.unwrap_or(if i == last { Activation::Identity } else { Activation::Sigmoid });
            for v in next.iter_mut() {
                *v = act.apply(*v);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass for MLP networks (already-transformed inputs).
    pub fn forward_mlp(&self, input: &[f64]) -> Result<Vec<f64>> {
        if self.arch != Arch::Mlp {
            return Err(Error::Weights("forward_mlp called on an lstm network".into()));
        }
        if input.len() != self.input_dim() {
            return Err(Error::dim(format!("network expects {} inputs, got {}", self.input_dim(), input.len())));
        }
        Ok(self.dense_head(input))
    }

    /// One LSTM step followed by the dense head.
    pub fn lstm_step(&self, input: &[f64], state: &LstmState) -> Result<(Vec<f64>, LstmState)> {
        let cell = match (&self.arch, &self.lstm) {
            (Arch::Lstm, Some(c)) => c,
            _ => return Err(Error::Weights("lstm_step called on an mlp network".into())),
        };
        let (ni, h) = (cell.input_size, cell.hidden_size);
        if input.len() != ni || state.h.len() != h || state.c.len() != h {
            return Err(Error::dim("lstm input or state has the wrong size"));
        }
        let gate = |r: usize| {
            let mut acc = cell.b_ih[r] + cell.b_hh[r];
            acc += cell.w_ih[r * ni..(r + 1) * ni].iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
            acc += cell.w_hh[r * h..(r + 1) * h].iter().zip(&state.h).map(|(w, v)| w * v).sum::<f64>();
            acc
        };
        let mut next = LstmState::zeros(h);
        for j in 0..h {
            let i_g = sigmoid(gate(j));
            let f_g = sigmoid(gate(h + j));
            let g_g = gate(2 * h + j).tanh();
            let o_g = sigmoid(gate(3 * h + j));
            next.c[j] = f_g * state.c[j] + i_g * g_g;
            next.h[j] = o_g * next.c[j].tanh();
        }
        Ok((self.dense_head(&next.h), next))
    }
}

/// Per-head input transforms; absent entries fall back to the built-in
/// defaults of [`PolicyWeights::transforms`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InputTransforms {
    #[serde(default, rename = "pi_I", skip_serializing_if = "Option::is_none")]
    pub pi_i: Option<Vec<InputTransform>>,
    #[serde(default, rename = "pi_E", skip_serializing_if = "Option::is_none")]
    pub pi_e: Option<Vec<InputTransform>>,
    #[serde(default, rename = "pi_alpha", skip_serializing_if = "Option::is_none")]
    pub pi_alpha: Option<Vec<InputTransform>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Head {
    #[serde(rename = "pi_I")]
    Ineq,
    #[serde(rename = "pi_E")]
    Eq,
    #[serde(rename = "pi_alpha")]
    Alpha,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::Ineq, Head::Eq, Head::Alpha];

    pub fn name(self) -> &'static str {
        match self {
            Head::Ineq => "pi_I",
            Head::Eq => "pi_E",
            Head::Alpha => "pi_alpha",
        }
    }

    pub fn inputs(self) -> usize {
        match self {
            Head::Ineq => 10,
            Head::Eq => 6,
            Head::Alpha => 9,
        }
    }

    pub fn outputs(self) -> usize {
        match self {
            Head::Ineq => 3,
            Head::Eq => 2,
            Head::Alpha => 1,
        }
    }

    pub fn default_transforms(self) -> Vec<InputTransform> {
        use InputTransform::{Log10, Symlog};
        match self {
            // (s, z_I, w_s, y_I, ‖ζ_dual‖∞, ζ_I, ζ̄_s, ζ̄_I, ζ̃_s, ζ̃_I)
            Head::Ineq => vec![Symlog, Symlog, Symlog, Symlog, Log10, Symlog, Symlog, Symlog, Symlog, Symlog],
            // (z_E, y_E, ‖ζ_dual‖∞, ζ_E, ζ̄_E, ζ̃_E)
            Head::Eq => vec![Symlog, Symlog, Log10, Symlog, Symlog, Symlog],
            Head::Alpha => vec![Log10; 9],
        }
    }
}

/// Weights for the three policy heads, as exchanged with the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyWeights {
    #[serde(rename = "pi_I")]
    pub pi_i: Network,
    #[serde(rename = "pi_E")]
    pub pi_e: Network,
    pub pi_alpha: Network,
    #[serde(default)]
    pub input_transforms: InputTransforms,
    pub version: u32,
    /// KL divergence of the trained posterior to its prior, if exported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
}

impl PolicyWeights {
    pub fn network(&self, head: Head) -> &Network {
        match head {
            Head::Ineq => &self.pi_i,
            Head::Eq => &self.pi_e,
            Head::Alpha => &self.pi_alpha,
        }
    }

    pub fn transforms(&self, head: Head) -> Vec<InputTransform> {
        let t = match head {
            Head::Ineq => &self.input_transforms.pi_i,
            Head::Eq => &self.input_transforms.pi_e,
            Head::Alpha => &self.input_transforms.pi_alpha,
        };
        t.clone().unwrap_or_else(|| head.default_transforms())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != WEIGHTS_VERSION {
            return Err(Error::Weights(format!("unsupported weight file version {}", self.version)));
        }
        for head in Head::ALL {
            self.network(head).validate(head.name(), head.inputs(), head.outputs())?;
            if self.transforms(head).len() != head.inputs() {
                return Err(Error::Weights(format!("{}: input transform list has the wrong length", head.name())));
            }
        }
        if let Some(kl) = self.kl {
            if !(kl >= 0.0 && kl.is_finite()) {
                return Err(Error::Weights(format!("kl = {kl} must be finite and nonnegative")));
            }
        }
        Ok(())
    }

    /// Zero-weight MLPs with the standard `[32, 32]` hidden layers.
    pub fn zeros_mlp() -> Self {
        let net = |inp: usize, out: usize| {
            Network::mlp(vec![DenseLayer::zeros(32, inp), DenseLayer::zeros(32, 32), DenseLayer::zeros(out, 32)])
        };
        PolicyWeights {
            pi_i: net(10, 3),
            pi_e: net(6, 2),
            pi_alpha: net(9, 1),
            input_transforms: InputTransforms::default(),
            version: WEIGHTS_VERSION,
            kl: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: PolicyWeights = serde_json::from_str(s)?;
        w.validate()?;
        Ok(w)
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<PolicyWeights> {
    PolicyWeights::from_json(&std::fs::read_to_string(path)?)
}

pub fn forward_mlp(net: &Network, inputs: &[f64]) -> Result<Vec<f64>> {
    net.forward_mlp(inputs)
}

pub fn lstm_step(net: &Network, inputs: &[f64], hidden: &LstmState) -> Result<(Vec<f64>, LstmState)> {
    net.lstm_step(inputs, hidden)
}

/// One row of a golden-vector file. `inputs` are raw (untransformed) rows;
/// `expected_outputs` are network outputs before the parameter transform.
/// For LSTM heads the rows form one sequence started from a zero state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub head: Head,
    pub inputs: Vec<Vec<f64>>,
    pub expected_outputs: Vec<Vec<f64>>,
}

pub fn load_golden(path: impl AsRef<Path>) -> Result<Vec<GoldenCase>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Raw network outputs for a sequence of raw input rows under `head`.
pub fn evaluate_rows(weights: &PolicyWeights, head: Head, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let net = weights.network(head);
    let tf = weights.transforms(head);
    let mut state = LstmState::zeros(net.hidden_size());
    rows.iter()
        .map(|row| {
            if row.len() != tf.len() {
                return Err(Error::dim(format!("{} row has {} entries, expected {}", head.name(), row.len(), tf.len())));
            }
            let x: Vec<f64> = row.iter().zip(&tf).map(|(u, t)| t.apply(*u)).collect();
            match net.arch {
                Arch::Mlp => net.forward_mlp(&x),
                Arch::Lstm => {
                    let (out, next) = net.lstm_step(&x, &state)?;
                    state = next;
                    Ok(out)
                }
            }
        })
        .collect()
}

/// Largest absolute deviation between recomputed and expected outputs.
pub fn golden_max_error(weights: &PolicyWeights, cases: &[GoldenCase]) -> Result<f64> {
    let mut worst = 0.0f64;
    for case in cases {
        let got = evaluate_rows(weights, case.head, &case.inputs)?;
        if got.len() != case.expected_outputs.len() {
            return Err(Error::dim("golden case row count mismatch"));
        }
        for (g, e) in got.iter().zip(&case.expected_outputs) {
            if g.len() != e.len() {
                return Err(Error::dim("golden case output width mismatch"));
            }
            for (a, b) in g.iter().zip(e) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}
