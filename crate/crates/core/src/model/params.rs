//! Parameter containers: a small row-major matrix type, the full weight set
//! of the hybrid network, fan-in-scaled initialization, flattening for the
//! optimizer, and the on-disk model artifact.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Task;
use crate::preprocess::ModelInputLayout;

use super::ModelConfig;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut() -> f64) -> Self {
        Mat { rows, cols, data: (0..rows * cols).map(|_| f()).collect() }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// y = W x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut s = 0.0;
            for (w, xv) in row.iter().zip(x) {
                s += w * xv;
            }
            y[i] = s;
        }
        y
    }

    /// y = Wᵀ x
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for (yj, w) in y.iter_mut().zip(row) {
                *yj += w * xi;
            }
        }
        y
    }

    /// W += a bᵀ
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for i in 0..self.rows {
            let ai = a[i];
            if ai == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (w, bv) in row.iter_mut().zip(b) {
                *w += ai * bv;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// One LSTM gate: input-to-hidden and hidden-to-hidden weights plus bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub w_x: Mat,
    pub w_h: Mat,
    pub b: Vec<f64>,
}

impl GateParams {
    fn zeros(hidden: usize, input: usize) -> Self {
        GateParams { w_x: Mat::zeros(hidden, input), w_h: Mat::zeros(hidden, hidden), b: vec![0.0; hidden] }
    }
}

/// All weights of the hybrid network.
///
/// Dimensions: LSTM hidden H over C input channels; FNN hidden F over S
/// static features; final hidden D over the concatenated H+F state; scalar
/// output logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lstm_hidden: usize,
    pub channels: usize,
    pub static_dim: usize,
    pub fnn_hidden: usize,
    pub final_hidden: usize,
    pub input_gate: GateParams,
    pub forget_gate: GateParams,
    pub cell_gate: GateParams,
    pub output_gate: GateParams,
    pub fnn_w: Mat,
    pub fnn_b: Vec<f64>,
    pub head_w: Mat,
    pub head_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: f64,
}

impl ModelParams {
    /// Deterministic fan-in-scaled uniform initialization; the forget-gate
    /// bias starts at 1 so early training does not erase the cell state.
    pub fn init(config: &ModelConfig, channels: usize, static_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let h = config.lstm_hidden;
        let f = config.fnn_hidden;
        let d = config.final_hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |fan_in: usize| {
            let a = 1.0 / (fan_in.max(1) as f64).sqrt();
            rng.random_range(-a..a)
        };

        let gate = |forget: bool, uniform: &mut dyn FnMut(usize) -> f64| GateParams {
            w_x: Mat::from_fn(h, channels, || uniform(channels)),
            w_h: Mat::from_fn(h, h, || uniform(h)),
            b: vec![if forget { 1.0 } else { 0.0 }; h],
        };

        Ok(ModelParams {
            lstm_hidden: h,
            channels,
            static_dim,
            fnn_hidden: f,
            final_hidden: d,
            input_gate: gate(false, &mut uniform),
            forget_gate: gate(true, &mut uniform),
            cell_gate: gate(false, &mut uniform),
            output_gate: gate(false, &mut uniform),
            fnn_w: Mat::from_fn(f, static_dim, || uniform(static_dim)),
            fnn_b: vec![0.0; f],
            head_w: Mat::from_fn(d, h + f, || uniform(h + f)),
            head_b: vec![0.0; d],
            out_w: (0..d).map(|_| uniform(d)).collect(),
            out_b: 0.0,
        })
    }

    /// A zero-valued clone with the same shapes, used as a gradient
    /// accumulator.
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            lstm_hidden: self.lstm_hidden,
            channels: self.channels,
            static_dim: self.static_dim,
            fnn_hidden: self.fnn_hidden,
            final_hidden: self.final_hidden,
            input_gate: GateParams::zeros(self.lstm_hidden, self.channels),
            forget_gate: GateParams::zeros(self.lstm_hidden, self.channels),
            cell_gate: GateParams::zeros(self.lstm_hidden, self.channels),
            output_gate: GateParams::zeros(self.lstm_hidden, self.channels),
            fnn_w: Mat::zeros(self.fnn_hidden, self.static_dim),
            fnn_b: vec![0.0; self.fnn_hidden],
            head_w: Mat::zeros(self.final_hidden, self.lstm_hidden + self.fnn_hidden),
            head_b: vec![0.0; self.final_hidden],
            out_w: vec![0.0; self.final_hidden],
            out_b: 0.0,
        }
    }

    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("lstm.input.w_x", &self.input_gate.w_x.data),
            ("lstm.input.w_h", &self.input_gate.w_h.data),
            ("lstm.input.b", &self.input_gate.b),
            ("lstm.forget.w_x", &self.forget_gate.w_x.data),
            ("lstm.forget.w_h", &self.forget_gate.w_h.data),
            ("lstm.forget.b", &self.forget_gate.b),
            ("lstm.cell.w_x", &self.cell_gate.w_x.data),
            ("lstm.cell.w_h", &self.cell_gate.w_h.data),
            ("lstm.cell.b", &self.cell_gate.b),
            ("lstm.output.w_x", &self.output_gate.w_x.data),
            ("lstm.output.w_h", &self.output_gate.w_h.data),
            ("lstm.output.b", &self.output_gate.b),
            ("fnn.w", &self.fnn_w.data),
            ("fnn.b", &self.fnn_b),
            ("head.w", &self.head_w.data),
            ("head.b", &self.head_b),
            ("out.w", &self.out_w),
        ]
    }

    /// Flattens every tensor into one vector in a fixed order (the optimizer
    /// state is aligned with this layout).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for (_, t) in self.tensors() {
            v.extend_from_slice(t);
        }
        v.push(self.out_b);
        v
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum::<usize>() + 1
    }

    /// Rebuilds parameters from the flat layout produced by [`to_vec`].
    ///
    /// [`to_vec`]: ModelParams::to_vec
    pub fn from_vec(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.n_params() {
            return Err(Error::shape(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut out = self.clone();
        let mut cursor = 0usize;
        {
            let mut take = |dst: &mut [f64]| {
                dst.copy_from_slice(&flat[cursor..cursor + dst.len()]);
                cursor += dst.len();
            };
            for gate in [
                &mut out.input_gate,
                &mut out.forget_gate,
                &mut out.cell_gate,
                &mut out.output_gate,
            ] {
                take(&mut gate.w_x.data);
                take(&mut gate.w_h.data);
                take(&mut gate.b);
            }
            take(&mut out.fnn_w.data);
            take(&mut out.fnn_b);
            take(&mut out.head_w.data);
            take(&mut out.head_b);
            take(&mut out.out_w);
        }
        out.out_b = flat[cursor];
        Ok(out)
    }

    /// Checks internal shape consistency and finiteness; errors name the
    /// offending tensor.
    pub fn validate(&self) -> Result<()> {
        let h = self.lstm_hidden;
        let c = self.channels;
        let f = self.fnn_hidden;
        let d = self.final_hidden;
        let gates = [
            ("lstm.input", &self.input_gate),
            ("lstm.forget", &self.forget_gate),
            ("lstm.cell", &self.cell_gate),
            ("lstm.output", &self.output_gate),
        ];
        for (name, g) in gates {
            check_mat(&format!("{name}.w_x"), &g.w_x, h, c)?;
            check_mat(&format!("{name}.w_h"), &g.w_h, h, h)?;
            check_vec(&format!("{name}.b"), &g.b, h)?;
        }
        check_mat("fnn.w", &self.fnn_w, f, self.static_dim)?;
        check_vec("fnn.b", &self.fnn_b, f)?;
        check_mat("head.w", &self.head_w, d, h + f)?;
        check_vec("head.b", &self.head_b, d)?;
        check_vec("out.w", &self.out_w, d)?;
        if !self.out_b.is_finite() {
            return Err(Error::data("tensor 'out.b' contains a non-finite value"));
        }
        Ok(())
    }
}

fn check_mat(name: &str, m: &Mat, rows: usize, cols: usize) -> Result<()> {
    if m.rows != rows || m.cols != cols || m.data.len() != m.rows * m.cols {
        return Err(Error::shape(format!(
            "tensor '{name}': expected {rows}×{cols}, got {}×{} with {} values",
            m.rows,
            m.cols,
            m.data.len()
        )));
    }
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(format!("tensor '{name}' contains a non-finite value")));
    }
    Ok(())
}

fn check_vec(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::shape(format!(
            "tensor '{name}': expected length {len}, got {}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::data(format!("tensor '{name}' contains a non-finite value")));
    }
    Ok(())
}

pub const MODEL_FILE_VERSION: &str = "adhere-ml/1";

/// The persisted model: version tag, configuration, the feature layout that
/// maps selected flat features into model inputs, and every weight tensor
/// with explicit shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub version: String,
    pub task: Task,
    pub config: ModelConfig,
    pub layout: ModelInputLayout,
    pub params: ModelParams,
}

impl ModelArtifact {
    pub fn new(task: Task, config: ModelConfig, layout: ModelInputLayout, params: ModelParams) -> Self {
        ModelArtifact { version: MODEL_FILE_VERSION.to_string(), task, config, layout, params }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.params.validate()?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let artifact: ModelArtifact = serde_json::from_str(&text)?;
        if artifact.version != MODEL_FILE_VERSION {
            return Err(Error::data(format!(
                "unsupported model file version '{}', expected '{}'",
                artifact.version, MODEL_FILE_VERSION
            )));
        }
        artifact.params.validate()?;
        if artifact.params.channels != artifact.layout.channels.len()
            || artifact.params.static_dim != artifact.layout.static_names.len()
        {
            return Err(Error::shape(
                "model parameter dimensions do not match the feature layout".to_string(),
            ));
        }
        Ok(artifact)
    }
}
