//! Shallow fully-connected vector field `f(u; θ)`: affine layers with GELU
//! between them and an identity output.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{self, Matrix};
use super::tape::{gelu, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[out × in]`
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }
}

/// Network parameters θ.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    layers: Vec<Layer>,
}

/// `∂L/∂θ`, laid out exactly like the [`ParamSet`] it belongs to.
pub type GradSet = ParamSet;

impl ParamSet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.b.len() != l.output_dim() {
                return Err(Error::config(format!(
                    "layer {k}: bias length {} for {} outputs",
                    l.b.len(),
                    l.output_dim()
                )));
            }
            if k + 1 < layers.len() && layers[k + 1].input_dim() != l.output_dim() {
                return Err(Error::config(format!(
                    "layer {} expects {} inputs but layer {k} produces {}",
                    k + 1,
                    layers[k + 1].input_dim(),
                    l.output_dim()
                )));
            }
            if !l.w.is_finite() || l.b.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("layer {k} has non-finite entries")));
            }
        }
        Ok(ParamSet { layers })
    }

    /// Uniform `[-1/√fan_in, 1/√fan_in]` initialisation for a `dim → hidden… → dim` net.
    pub fn init(dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let layers = sizes
            .windows(2)
            .map(|io| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                let b = (0..fan_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                Layer {
                    w: Matrix::from_vec(fan_out, fan_in, w),
                    b,
                }
            })
            .collect();
        ParamSet { layers }
    }

    pub fn zeros_like(other: &ParamSet) -> Self {
        ParamSet {
            layers: other
                .layers
                .iter()
                .map(|l| Layer {
                    w: Matrix::zeros(l.w.rows(), l.w.cols()),
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::output_dim)
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.as_slice().len() + l.b.len()).sum()
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.w.shape() == b.w.shape() && a.b.len() == b.b.len())
    }

    /// Flat view of every parameter, layer by layer, weights before biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.w.as_slice().iter().chain(l.b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.as_mut_slice().iter_mut().chain(l.b.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Forward pass for a single state.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.input_dim() {
            return Err(Error::config(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                u.len()
            )));
        }
        let mut out = vec![0.0; self.output_dim()];
        self.apply_into(u, &mut out);
        Ok(out)
    }

    /// Unchecked single-state forward pass used inside integrators.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let last = self.layers.len() - 1;
        let mut cur: Vec<f64> = u.to_vec();
        for (k, l) in self.layers.iter().enumerate() {
            let mut next = l.b.clone();
            for (o, v) in next.iter_mut().enumerate() {
                *v += matrix::dot(l.w.row(o), &cur);
            }
            if k < last {
                next.iter_mut().for_each(|v| *v = gelu(*v));
                cur = next;
            } else {
                out.copy_from_slice(&next);
            }
        }
    }

    /// Forward pass for a batch of row states.
    pub fn apply_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::config(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut cur = x.clone();
        for (k, l) in self.layers.iter().enumerate() {
            cur = matrix::linear_forward(&cur, &l.w, &l.b);
            if k < last {
                cur.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
            }
        }
        Ok(cur)
    }

    /// Registers every weight and bias as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .layers
            .iter()
            .map(|l| {
                let w = tape.variable(l.w.clone());
                let b = tape.variable(Matrix::row_vector(&l.b));
                (w, b)
            })
            .collect();
        BoundParams { vars }
    }

    /// Serializes in the checkpoint layout.
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        Checkpoint {
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    w: l.w.to_rows(),
                    b: l.b.clone(),
                })
                .collect(),
            activation: "gelu".into(),
            meta,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.activation != "gelu" {
            return Err(Error::config(format!(
                "unsupported activation `{}`",
                ck.activation
            )));
        }
        let layers = ck
            .layers
            .iter()
            .map(|l| {
                if l.w.iter().any(|r| r.len() != l.w[0].len()) {
                    return Err(Error::config("ragged weight matrix in checkpoint"));
                }
                Ok(Layer {
                    w: Matrix::from_rows(&l.w),
                    b: l.b.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ParamSet::new(layers)
    }
}

/// Tape handles for one [`ParamSet`].
pub struct BoundParams {
    vars: Vec<(Var, Var)>,
}

impl BoundParams {
    /// Batched forward pass on the tape; `x` is `[batch × dim]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let last = self.vars.len() - 1;
        let mut cur = x;
        for (k, &(w, b)) in self.vars.iter().enumerate() {
            cur = tape.linear(cur, w, b)?;
            if k < last {
                cur = tape.gelu(cur);
            }
        }
        Ok(cur)
    }

    /// Reverse-mode gradient of `loss` with respect to the bound parameters.
    /// Parameters that do not influence `loss` get zero gradients.
    pub fn grad(&self, tape: &Tape, loss: Var) -> Result<GradSet> {
        let mut adj = tape.backward(loss)?;
        let layers = self
            .vars
            .iter()
            .map(|&(w, b)| {
                let wshape = tape.value(w).shape();
                let gw = adj
                    .take(w)
                    .unwrap_or_else(|| Matrix::zeros(wshape.0, wshape.1));
                let gb = adj
                    .take(b)
                    .map(Matrix::into_vec)
                    .unwrap_or_else(|| vec![0.0; wshape.0]);
                Layer { w: gw, b: gb }
            })
            .collect();
        Ok(ParamSet { layers })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// On-disk model: `{"layers": [{"w": [[..]], "b": [..]}], "activation": "gelu", "meta": {..}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layers: Vec<CheckpointLayer>,
    pub activation: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
