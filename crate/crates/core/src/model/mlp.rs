use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube::Patch;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope_at_output(self, y: f64) -> f64 {
        match self {
            Self::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - y * y,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Self::Relu => 0,
            Self::Tanh => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Self::Relu),
            1 => Ok(Self::Tanh),
            other => Err(Error::data(format!("unknown activation code {other}"))),
        }
    }
}

/// Hidden layer widths and activation; the input width comes from the patch
/// shape and the output is one sigmoid unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![100, 50],
            activation: Activation::Relu,
        }
    }
}

/// Logistic function, kept strictly inside `(0, 1)`.
pub fn sigmoid(t: f64) -> f64 {
    let s = if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Fully connected network over flattened `p x p x channels` patches.
///
/// Parameters are one flat vector; layer `l` stores its `out x in` weight
/// matrix row-major followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    patch_size: usize,
    channels: usize,
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

pub(crate) fn param_count_for(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Classifier {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn new(patch_size: usize, channels: usize, config: &ClassifierConfig, seed: u64) -> Result<Self> {
        let mut clf = Self::zeros(patch_size, channels, config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in clf.layer_sizes.clone().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (3.0 / fan_in as f64).sqrt();
            for v in &mut clf.params[offset..offset + fan_in * fan_out] {
                *v = rng.random_range(-bound..bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(clf)
    }

    pub fn zeros(patch_size: usize, channels: usize, config: &ClassifierConfig) -> Result<Self> {
        if patch_size == 0 || patch_size % 2 == 0 {
            return Err(Error::config(format!("patch size must be odd, got {patch_size}")));
        }
        if channels == 0 {
            return Err(Error::config("classifier needs at least one channel"));
        }
        if config.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        let mut layer_sizes = vec![patch_size * patch_size * channels];
        layer_sizes.extend(&config.hidden);
        layer_sizes.push(1);
        let params = vec![0.0; param_count_for(&layer_sizes)];
        Ok(Self {
            patch_size,
            channels,
            layer_sizes,
            activation: config.activation,
            params,
        })
    }

    pub fn from_parts(
        patch_size: usize,
        channels: usize,
        layer_sizes: Vec<usize>,
        activation: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.last() != Some(&1) {
            return Err(Error::data("layer sizes must end in a single output unit"));
        }
        if layer_sizes[0] != patch_size * patch_size * channels {
            return Err(Error::data(format!(
                "input width {} does not match {patch_size}x{patch_size}x{channels} patches",
                layer_sizes[0]
            )));
        }
        let config = ClassifierConfig {
            hidden: layer_sizes[1..layer_sizes.len() - 1].to_vec(),
            activation,
        };
        let mut clf = Self::zeros(patch_size, channels, &config)?;
        if params.len() != clf.params.len() {
            return Err(Error::data(format!(
                "architecture needs {} parameters, got {}",
                clf.params.len(),
                params.len()
            )));
        }
        clf.params = params;
        Ok(clf)
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn config(&self) -> ClassifierConfig {
        ClassifierConfig {
            hidden: self.layer_sizes[1..self.layer_sizes.len() - 1].to_vec(),
            activation: self.activation,
        }
    }

    /// `(param offset of W, fan_in, fan_out)` for each layer.
    pub(crate) fn layers(&self) -> Vec<(usize, usize, usize)> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let entry = (offset, w[0], w[1]);
                offset += w[0] * w[1] + w[1];
                entry
            })
            .collect()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::data(format!(
                "classifier expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    /// Pre-sigmoid output.
    pub fn logit(&self, input: &[f64]) -> Result<f64> {
        self.check_input(input)?;
        let mut acts = Vec::new();
        Ok(self.forward_cached(input, &mut acts))
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(input)?))
    }

    pub fn forward_patch(&self, patch: &Patch) -> Result<f64> {
        if patch.size != self.patch_size || patch.channels != self.channels {
            return Err(Error::data(format!(
                "classifier expects {0}x{0}x{1} patches, got {2}x{2}x{3}",
                self.patch_size, self.channels, patch.size, patch.channels
            )));
        }
        self.forward(&patch.values)
    }

    /// Runs the network, leaving the input of every layer in `acts`.
    /// `acts[0]` is the input itself.
    pub(crate) fn forward_cached(&self, input: &[f64], acts: &mut Vec<Vec<f64>>) -> f64 {
        acts.clear();
        acts.push(input.to_vec());
        let layers = self.layers();
        let last = layers.len() - 1;
        for (l, &(off, fan_in, fan_out)) in layers.iter().enumerate() {
            let x = &acts[l];
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut z: Vec<f64> = w
                .chunks_exact(fan_in)
                .zip(b)
                .map(|(row, bias)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias)
                .collect();
            if l < last {
                for v in &mut z {
                    *v = self.activation.apply(*v);
                }
            }
            acts.push(z);
        }
        acts.pop().expect("output layer")[0]
    }

    /// Adds `dlogit * d(logit)/d(params)` into `grad`, using the activations
    /// cached by [`Self::forward_cached`].
    pub(crate) fn backprop(&self, acts: &[Vec<f64>], dlogit: f64, grad: &mut [f64]) {
        let layers = self.layers();
        let mut delta = vec![dlogit];
        for l in (0..layers.len()).rev() {
            let (off, fan_in, fan_out) = layers[l];
            let x = &acts[l];
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, &xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, &wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *p += d * wi;
                }
            }
            for (p, &xi) in prev.iter_mut().zip(x) {
                *p *= self.activation.slope_at_output(xi);
            }
            delta = prev;
        }
    }
}
