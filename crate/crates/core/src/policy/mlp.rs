//! Dense feed-forward network with hand-written reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "sigmoid" => Some(Activation::Sigmoid),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// `y = W x + b` with `W` stored row-major as `rows x cols` (out x in).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    /// Uniform in `+-scale/sqrt(fan_in)`, zero bias.
    pub fn fan_in_uniform<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let lim = scale / (cols as f64).sqrt();
        let w = (0..rows * cols)
            .map(|_| rng.random_range(-lim..=lim))
            .collect();
        Self {
            rows,
            cols,
            w,
            b: vec![0.0; rows],
        }
    }

    #[inline]
    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.b.iter().enumerate().map(|(r, b)| {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
        }));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Hidden layers use `activation`; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<DenseGrad>,
}

impl MlpGrad {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| DenseGrad {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
            .collect()
    }
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`. The output layer is scaled by
    /// `output_scale` on top of fan-in scaling.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        output_scale: f64,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let scale = if k + 1 == n { output_scale } else { 1.0 };
                Dense::fan_in_uniform(sizes[k + 1], sizes[k], scale, rng)
            })
            .collect();
        Self { layers, activation }
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Self {
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[1], w[0])).collect();
        Self { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.rows).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Check that layer shapes chain from `input_dim` to `output_dim`.
    pub fn check_shapes(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("network has no layers".into()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.w.len() != l.rows * l.cols || l.b.len() != l.rows {
                return Err(Error::InvalidInput(format!(
                    "layer {k} storage does not match {}x{}",
                    l.rows, l.cols
                )));
            }
            if k > 0 && self.layers[k - 1].rows != l.cols {
                return Err(Error::InvalidInput(format!(
                    "layer {k} expects {} inputs but previous layer emits {}",
                    l.cols,
                    self.layers[k - 1].rows
                )));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            l.forward_into(&cur, &mut next);
            if k != last {
                next.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass keeping every layer output; `acts[0]` is the input and
    /// `acts.last()` the linear output.
    pub fn forward_cached(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(l.rows);
            l.forward_into(&acts[k], &mut out);
            if k != last {
                out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// Hidden-layer outputs only (for activation-range checks).
    pub fn hidden_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut acts = self.forward_cached(x)?;
        acts.pop();
        acts.remove(0);
        Ok(acts)
    }

    /// Accumulate `d loss / d params` into `grad` given the cached forward
    /// pass and `d loss / d output`.
    pub fn backward_into(
        &self,
        acts: &[Vec<f64>],
        out_grad: &[f64],
        grad: &mut MlpGrad,
    ) -> Result<()> {
        if out_grad.len() != self.output_dim() {
            return Err(Error::Dimension {
                expected: self.output_dim(),
                got: out_grad.len(),
            });
        }
        let mut delta = out_grad.to_vec();
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let input = &acts[k];
            let g = &mut grad.layers[k];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.b[r] += d;
                let gw = &mut g.w[r * l.cols..(r + 1) * l.cols];
                for (gw, x) in gw.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if k == 0 {
                break;
            }
            let mut prev = vec![0.0; l.cols];
            for (r, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &l.w[r * l.cols..(r + 1) * l.cols];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, y) in prev.iter_mut().zip(input) {
                *p *= self.activation.derivative_from_output(*y);
            }
            delta = prev;
        }
        Ok(())
    }

    /// Gradient of `sum_i seeds[i] . f(inputs[i])` with respect to every
    /// weight and bias.
    pub fn backward(&self, inputs: &[&[f64]], seeds: &[Vec<f64>]) -> Result<MlpGrad> {
        if inputs.len() != seeds.len() {
            return Err(Error::Dimension {
                expected: inputs.len(),
                got: seeds.len(),
            });
        }
        let mut grad = MlpGrad::zeros_like(self);
        for (x, s) in inputs.iter().zip(seeds) {
            let acts = self.forward_cached(x)?;
            self.backward_into(&acts, s, &mut grad)?;
        }
        Ok(grad)
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
            .collect()
    }
}
