//! Direct multi-step linear forecaster and the Adam optimizer.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// One `T×H` map shared by all channels: `Ŷ[:, d] = W · X[:, d] + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearForecaster {
    weight: Array2<f64>,
    bias: Array1<f64>,
    channels: usize,
}

/// Parameter gradients of a [`LinearForecaster`].
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearGrads {
    pub fn zeros(history: usize, horizon: usize) -> Self {
        LinearGrads {
            weight: Array2::zeros((horizon, history)),
            bias: Array1::zeros(horizon),
        }
    }

    /// Weight entries in row-major order followed by the bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.weight.iter().chain(self.bias.iter()).copied().collect()
    }
}

impl LinearForecaster {
    /// Weights i.i.d. uniform in `[−1/√H, 1/√H]`, bias zero.
    pub fn new(history: usize, horizon: usize, channels: usize, seed: u64) -> Result<Self> {
        check_dims(history, horizon, channels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (history as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((horizon, history), || rng.random_range(-bound..=bound));
        Ok(LinearForecaster {
            weight,
            bias: Array1::zeros(horizon),
            channels,
        })
    }

    pub fn from_parts(weight: Array2<f64>, bias: Array1<f64>, channels: usize) -> Result<Self> {
        check_dims(weight.ncols(), weight.nrows(), channels)?;
        if bias.len() != weight.nrows() {
            return Err(Error::Dimension(format!(
                "bias length {} does not match horizon {}",
                bias.len(),
                weight.nrows()
            )));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite model parameter".into()));
        }
        Ok(LinearForecaster {
            weight,
            bias,
            channels,
        })
    }

    pub fn history(&self) -> usize {
        self.weight.ncols()
    }

    pub fn horizon(&self) -> usize {
        self.weight.nrows()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn params(&self) -> Vec<f64> {
        self.weight.iter().chain(self.bias.iter()).copied().collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let (w, b) = flat.split_at(self.weight.len());
        for (dst, src) in self.weight.iter_mut().zip(w) {
            *dst = *src;
        }
        for (dst, src) in self.bias.iter_mut().zip(b) {
            *dst = *src;
        }
        Ok(())
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.dim() != (self.history(), self.channels) {
            return Err(Error::Dimension(format!(
                "expected history {:?}, got {:?}",
                (self.history(), self.channels),
                x.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut out = self.weight.dot(x);
        for mut col in out.axis_iter_mut(Axis(1)) {
            col += &self.bias;
        }
        Ok(out)
    }

    pub fn forward_batch(&self, xs: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
        xs.iter().map(|x| self.forward(x)).collect()
    }

    /// `∂L/∂W = Σ_d g[:, d] ⊗ X[:, d]`, `∂L/∂b = Σ_d g[:, d]`.
    pub fn backward(&self, x: &Array2<f64>, grad_out: &Array2<f64>) -> Result<LinearGrads> {
        let mut grads = LinearGrads::zeros(self.history(), self.horizon());
        self.accumulate_backward(x, grad_out, &mut grads)?;
        Ok(grads)
    }

    /// Sums [`backward`](Self::backward) over a batch.
    pub fn backward_batch(&self, xs: &[Array2<f64>], grad_outs: &[Array2<f64>]) -> Result<LinearGrads> {
        if xs.len() != grad_outs.len() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} output gradients",
                xs.len(),
                grad_outs.len()
            )));
        }
        let mut grads = LinearGrads::zeros(self.history(), self.horizon());
        for (x, g) in xs.iter().zip(grad_outs) {
            self.accumulate_backward(x, g, &mut grads)?;
        }
        Ok(grads)
    }

    fn accumulate_backward(
        &self,
        x: &Array2<f64>,
        grad_out: &Array2<f64>,
        grads: &mut LinearGrads,
    ) -> Result<()> {
        self.check_input(x)?;
        if grad_out.dim() != (self.horizon(), self.channels) {
            return Err(Error::Dimension(format!(
                "expected output gradient {:?}, got {:?}",
                (self.horizon(), self.channels),
                grad_out.dim()
            )));
        }
        grads.weight += &grad_out.dot(&x.t());
        grads.bias += &grad_out.sum_axis(Axis(1));
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            history: self.history(),
            horizon: self.horizon(),
            channels: self.channels,
            weight: self.weight.iter().copied().collect(),
            bias: self.bias.to_vec(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        let weight = Array2::from_shape_vec((ckpt.horizon, ckpt.history), ckpt.weight.clone())
            .map_err(|e| Error::Dimension(format!("checkpoint weight: {e}")))?;
        Self::from_parts(weight, Array1::from(ckpt.bias.clone()), ckpt.channels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint()).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        Self::from_checkpoint(&ckpt)
    }
}

fn check_dims(history: usize, horizon: usize, channels: usize) -> Result<()> {
    if history == 0 || horizon == 0 || channels == 0 {
        return Err(Error::Config(format!(
            "history, horizon and channels must be positive (got {history}, {horizon}, {channels})"
        )));
    }
    Ok(())
}

/// JSON checkpoint: a shape header plus flat row-major parameter arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    #[serde(rename = "H")]
    pub history: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(rename = "D")]
    pub channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer holds {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Applies one update to a forecaster's parameters.
    pub fn step_model(&mut self, model: &mut LinearForecaster, grads: &LinearGrads) -> Result<()> {
        let mut params = model.params();
        self.step(&mut params, &grads.flatten())?;
        model.set_params(&params)
    }
}
