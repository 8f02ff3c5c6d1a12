//! Dense feed-forward network with hand-written forward/backward passes and
//! first-order optimizers.
//!
//! Hidden layers use ReLU; the last layer is linear and produces the logits
//! that the evidence head (or softmax baseline) consumes.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: HiddenActivation,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// ReLU hidden layers followed by an identity output layer, for `dims = [in, h1, ..., out]`.
pub fn dense_specs(dims: &[usize]) -> Result<Vec<LayerSpec>> {
    if dims.len() < 2 {
        return Err(Error::InvalidInput(
            "network needs at least an input and an output dimension".into(),
        ));
    }
    let n = dims.len() - 1;
    Ok((0..n)
        .map(|i| LayerSpec {
            in_dim: dims[i],
            out_dim: dims[i + 1],
            activation: if i + 1 == n {
                HiddenActivation::Identity
            } else {
                HiddenActivation::Relu
            },
        })
        .collect())
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidInput("network has no layers".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::InvalidInput(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, pair) in specs.windows(2).enumerate() {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::DimensionMismatch {
                expected: pair[0].out_dim,
                actual: pair[1].in_dim,
                context: if i == 0 { "layer 1 input" } else { "layer input" },
            });
        }
    }
    if specs.last().map(|s| s.activation) != Some(HiddenActivation::Identity) {
        return Err(Error::InvalidInput(
            "final layer must be linear (logits are pre-activation)".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    /// Row-major `out_dim × in_dim`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    fn affine(&self, x: &[T]) -> Vec<T> {
        let n_in = self.spec.in_dim;
        self.weights
            .chunks_exact(n_in)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
    seed: u64,
    /// Bumped on every parameter update so stale caches are detected.
    version: u64,
}

/// Per-layer inputs and pre-activations recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    version: u64,
    inputs: Vec<Vec<T>>,
    pre_activations: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Parameter gradients shaped like a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![T::zero(); l.weights.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, weight: T, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, &y) in a.weights.iter_mut().zip(&b.weights) {
                *x = *x + weight * y;
            }
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x = *x + weight * y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|x| *x = *x * factor);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(|g| *g == T::zero())
    }

    pub fn max_abs(&self) -> T {
        self.iter().fold(T::zero(), |m, g| m.max(g.abs()))
    }
}

impl<T: Real> Network<T> {
    /// Fan-in uniform initialization `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|&spec| {
                let bound = (6.0 / spec.in_dim as f64).sqrt();
                let weights = (0..spec.in_dim * spec.out_dim)
                    .map(|_| T::lit(rng.gen_range(-bound..bound)))
                    .collect();
                Layer {
                    spec,
                    weights,
                    bias: vec![T::zero(); spec.out_dim],
                }
            })
            .collect();
        Ok(Self {
            layers,
            seed,
            version: 0,
        })
    }

    /// All parameters zero.
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        validate_specs(specs)?;
        let layers = specs
            .iter()
            .map(|&spec| Layer {
                spec,
                weights: vec![T::zero(); spec.in_dim * spec.out_dim],
                bias: vec![T::zero(); spec.out_dim],
            })
            .collect();
        Ok(Self {
            layers,
            seed: 0,
            version: 0,
        })
    }

    /// Builds a network from explicit layers, validating the chaining.
    pub fn from_layers(layers: Vec<Layer<T>>, seed: u64) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.spec.in_dim * l.spec.out_dim || l.bias.len() != l.spec.out_dim {
                return Err(Error::InvalidInput(format!(
                    "layer {i}: parameter arrays do not match {}x{}",
                    l.spec.out_dim, l.spec.in_dim
                )));
            }
        }
        Ok(Self {
            layers,
            seed,
            version: 0,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        self.version += 1;
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    /// Logits plus the cache needed by [`Network::backward`].
    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, ForwardCache<T>)> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
                context: "network input",
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for layer in &self.layers {
            let z = layer.affine(&current);
            let out = match layer.spec.activation {
                HiddenActivation::Relu => z.iter().map(|&v| v.max(T::zero())).collect(),
                HiddenActivation::Identity => z.clone(),
            };
            inputs.push(std::mem::replace(&mut current, out));
            pre_activations.push(z);
        }
        Ok((
            current,
            ForwardCache {
                version: self.version,
                inputs,
                pre_activations,
            },
        ))
    }

    /// Logits only.
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>> {
        self.forward(x).map(|(o, _)| o)
    }

    /// Parameter gradients given ∂L/∂logits for the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache<T>, dlogits: &[T]) -> Result<Gradients<T>> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache(format!(
                "cache from parameter version {}, network is at {}",
                cache.version, self.version
            )));
        }
        if dlogits.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: dlogits.len(),
                context: "logit gradient",
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = dlogits.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let spec = layer.spec;
            let dz: Vec<T> = match spec.activation {
                HiddenActivation::Relu => upstream
                    .iter()
                    .zip(&cache.pre_activations[idx])
                    .map(|(&g, &z)| if z > T::zero() { g } else { T::zero() })
                    .collect(),
                HiddenActivation::Identity => upstream,
            };
            let input = &cache.inputs[idx];
            let mut dw = Vec::with_capacity(spec.in_dim * spec.out_dim);
            for &g in &dz {
                dw.extend(input.iter().map(|&xi| g * xi));
            }
            let mut dx = vec![T::zero(); spec.in_dim];
            if idx > 0 {
                for (row, &g) in layer.weights.chunks_exact(spec.in_dim).zip(&dz) {
                    if g == T::zero() {
                        continue;
                    }
                    for (d, &w) in dx.iter_mut().zip(row) {
                        *d = *d + w * g;
                    }
                }
            }
            grads.push(LayerGrad {
                weights: dw,
                bias: dz,
            });
            upstream = dx;
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    spec: l.spec,
                    weights: l.weights.iter().map(|w| w.as_f64()).collect(),
                    bias: l.bias.iter().map(|b| b.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Serde(format!("unknown checkpoint format '{}'", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        let layers = ckpt
            .layers
            .iter()
            .map(|l| Layer {
                spec: l.spec,
                weights: l.weights.iter().map(|&w| T::lit(w)).collect(),
                bias: l.bias.iter().map(|&b| T::lit(b)).collect(),
            })
            .collect();
        Self::from_layers(layers, ckpt.seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint())
            .map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(&ckpt)
    }
}

pub const CHECKPOINT_FORMAT: &str = "evidential-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk network: JSON with row-major `f64` parameter arrays.
///
/// `serde_json` writes the shortest decimal that round-trips, so reloading is
/// bit-exact for `f64` networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    #[serde(flatten)]
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum,
            ..Default::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("optimizer.learning_rate", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("optimizer.momentum", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("optimizer.beta", "must be in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("optimizer.epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// Optimizer with per-parameter accumulators shaped like the network.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    steps: u64,
    first: Gradients<T>,
    second: Gradients<T>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(config: OptimizerConfig, net: &Network<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            steps: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. Non-finite gradients are rejected before any
    /// parameter changes.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.layers.len() != net.layers.len() {
            return Err(Error::DimensionMismatch {
                expected: net.layers.len(),
                actual: grads.layers.len(),
                context: "gradient layer count",
            });
        }
        for (i, (g, l)) in grads.layers.iter().zip(&net.layers).enumerate() {
            if g.weights.len() != l.weights.len() || g.bias.len() != l.bias.len() {
                return Err(Error::DimensionMismatch {
                    expected: l.weights.len() + l.bias.len(),
                    actual: g.weights.len() + g.bias.len(),
                    context: "gradient shape",
                });
            }
            if let Some(j) = g.weights.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    block: format!("layer {i} weights[{j}]"),
                });
            }
            if let Some(j) = g.bias.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    block: format!("layer {i} bias[{j}]"),
                });
            }
        }

        self.steps += 1;
        let lr = T::lit(self.config.learning_rate);
        match self.config.kind {
            OptimizerKind::SgdMomentum => {
                let mu = T::lit(self.config.momentum);
                for ((layer, g), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.first.layers) {
                    sgd_update(&mut layer.weights, &g.weights, &mut v.weights, mu, lr);
                    sgd_update(&mut layer.bias, &g.bias, &mut v.bias, mu, lr);
                }
            }
            OptimizerKind::Adam => {
                let b1 = T::lit(self.config.beta1);
                let b2 = T::lit(self.config.beta2);
                let eps = T::lit(self.config.epsilon);
                let t = self.steps as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                let params = AdamParams { b1, b2, eps, lr, c1, c2 };
                for (((layer, g), m), v) in net
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut self.first.layers)
                    .zip(&mut self.second.layers)
                {
                    adam_update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights, &params);
                    adam_update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias, &params);
                }
            }
        }
        net.version += 1;
        Ok(())
    }
}

fn sgd_update<T: Real>(theta: &mut [T], g: &[T], v: &mut [T], mu: T, lr: T) {
    for ((p, &gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
        *vi = mu * *vi + gi;
        *p = *p - lr * *vi;
    }
}

struct AdamParams<T> {
    b1: T,
    b2: T,
    eps: T,
    lr: T,
    c1: T,
    c2: T,
}

fn adam_update<T: Real>(theta: &mut [T], g: &[T], m: &mut [T], v: &mut [T], p: &AdamParams<T>) {
    for (((w, &gi), mi), vi) in theta.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = p.b1 * *mi + (T::one() - p.b1) * gi;
        *vi = p.b2 * *vi + (T::one() - p.b2) * gi * gi;
        let m_hat = *mi / p.c1;
        let v_hat = *vi / p.c2;
        *w = *w - p.lr * m_hat / (v_hat.sqrt() + p.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(dims: &[usize], seed: u64) -> Network<f64> {
        Network::new(&dense_specs(dims).unwrap(), seed).unwrap()
    }

    /// Straight-line matrix chain, written independently of `Layer::affine`.
    fn reference_forward(net: &Network<f64>, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in net.layers() {
            let (n_out, n_in) = (layer.spec.out_dim, layer.spec.in_dim);
            let mut out = vec![0.0; n_out];
            for r in 0..n_out {
                let mut acc = layer.bias[r];
                for c in 0..n_in {
                    acc += layer.weights[r * n_in + c] * h[c];
                }
                out[r] = if layer.spec.activation == HiddenActivation::Relu {
                    acc.max(0.0)
                } else {
                    acc
                };
            }
            h = out;
        }
        h
    }

    #[test]
    fn init_is_deterministic_and_seed_dependent() {
        assert_eq!(net(&[2, 8, 3], 1), net(&[2, 8, 3], 1));
        assert_ne!(net(&[2, 8, 3], 1), net(&[2, 8, 3], 2));
        assert_eq!(net(&[2, 8, 3], 1).param_count(), 51);
        let n = net(&[4, 16, 3], 9);
        let bound = (6.0f64 / 4.0).sqrt();
        assert!(n.layers()[0].weights.iter().all(|w| w.abs() < bound));
    }

    #[test]
    fn rejects_bad_chaining() {
        let mut specs = dense_specs(&[2, 8, 3]).unwrap();
        specs[1].in_dim = 7;
        assert!(Network::<f64>::new(&specs, 0).is_err());
        let mut specs = dense_specs(&[2, 3]).unwrap();
        specs[0].activation = HiddenActivation::Relu;
        assert!(Network::<f64>::new(&specs, 0).is_err());
    }

    #[test]
    fn forward_examples() {
        let z = Network::<f64>::zeros(&dense_specs(&[3, 5, 4]).unwrap()).unwrap();
        assert_eq!(z.predict(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0; 4]);

        let layer = Layer {
            spec: LayerSpec { in_dim: 3, out_dim: 3, activation: HiddenActivation::Identity },
            weights: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            bias: vec![0.0; 3],
        };
        let id = Network::from_layers(vec![layer], 0).unwrap();
        assert_eq!(id.predict(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);

        let n = net(&[4, 16, 7, 3], 17);
        let x = [0.3, -1.2, 2.2, 0.9];
        let got = n.predict(&x).unwrap();
        let want = reference_forward(&n, &x);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(n.predict(&[1.0]).is_err());
    }

    #[test]
    fn backward_examples() {
        let n = net(&[4, 16, 3], 3);
        let (_, cache) = n.forward(&[1.0, 2.0, -1.0, 0.5]).unwrap();
        assert!(n.backward(&cache, &[0.0; 3]).unwrap().is_zero());

        let single = net(&[3, 2], 5);
        let x = [0.5, -2.0, 4.0];
        let d = [0.25, -1.5];
        let (_, cache) = single.forward(&x).unwrap();
        let g = single.backward(&cache, &d).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(g.layers[0].weights[r * 3 + c], d[r] * x[c]);
            }
        }
        assert_eq!(g.layers[0].bias, d.to_vec());
    }

    #[test]
    fn backward_matches_finite_differences() {
        // scalar L = Σ c_k o_k, so ∂L/∂o = c
        let n = net(&[4, 16, 3], 42);
        let x = [0.7, -0.3, 1.1, -2.0];
        let c = [0.4, -1.3, 0.8];
        let loss = |m: &Network<f64>| -> f64 {
            m.predict(&x).unwrap().iter().zip(&c).map(|(o, w)| o * w).sum()
        };
        let (_, cache) = n.forward(&x).unwrap();
        let g = n.backward(&cache, &c).unwrap();
        let h = 1e-5;
        for li in 0..n.layers().len() {
            for pi in 0..(n.layers()[li].weights.len() + n.layers()[li].bias.len()) {
                let mut plus = n.clone();
                let mut minus = n.clone();
                let nw = n.layers()[li].weights.len();
                let bump = |m: &mut Network<f64>, delta: f64| {
                    let l = &mut m.layers_mut()[li];
                    if pi < nw {
                        l.weights[pi] += delta;
                    } else {
                        l.bias[pi - nw] += delta;
                    }
                };
                bump(&mut plus, h);
                bump(&mut minus, -h);
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = if pi < nw { g.layers[li].weights[pi] } else { g.layers[li].bias[pi - nw] };
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3), "layer {li} param {pi}");
            }
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut n = net(&[2, 4, 2], 1);
        let (_, cache) = n.forward(&[1.0, 1.0]).unwrap();
        let g = n.backward(&cache, &[1.0, -1.0]).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.0), &n).unwrap();
        opt.step(&mut n, &g).unwrap();
        assert!(matches!(n.backward(&cache, &[1.0, -1.0]), Err(Error::StaleCache(_))));
        assert!(matches!(n.backward(&n.forward(&[1.0, 1.0]).unwrap().1, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn sgd_examples() {
        let layer = Layer {
            spec: LayerSpec { in_dim: 1, out_dim: 1, activation: HiddenActivation::Identity },
            weights: vec![0.0],
            bias: vec![0.0],
        };
        let mut n = Network::from_layers(vec![layer], 0).unwrap();
        let g = Gradients { layers: vec![LayerGrad { weights: vec![1.0], bias: vec![1.0] }] };
        let mut opt = Optimizer::new(OptimizerConfig::sgd(1.0, 0.0), &n).unwrap();
        opt.step(&mut n, &g).unwrap();
        assert_eq!(n.layers()[0].weights, vec![-1.0]);
        assert_eq!(n.layers()[0].bias, vec![-1.0]);

        // momentum accumulates: v = 0.5 * 1 + 1
        let mut opt = Optimizer::new(OptimizerConfig::sgd(1.0, 0.5), &n).unwrap();
        opt.step(&mut n, &g).unwrap();
        opt.step(&mut n, &g).unwrap();
        assert_eq!(n.layers()[0].weights, vec![-1.0 - 1.0 - 1.5]);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        for cfg in [OptimizerConfig::sgd(0.0, 0.9), OptimizerConfig::adam(0.0)] {
            let mut n = net(&[3, 5, 2], 4);
            let before = n.clone();
            let (_, cache) = n.forward(&[1.0, 2.0, 3.0]).unwrap();
            let g = n.backward(&cache, &[0.3, -0.7]).unwrap();
            let mut opt = Optimizer::new(cfg, &n).unwrap();
            opt.step(&mut n, &g).unwrap();
            assert!(n.params().zip(before.params()).all(|(a, b)| a == b));
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut n = net(&[2, 2], 4);
        let before = n.clone();
        let (_, cache) = n.forward(&[1.0, -1.0]).unwrap();
        let g = n.backward(&cache, &[0.3, -0.7]).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01), &n).unwrap();
        opt.step(&mut n, &g).unwrap();
        for ((a, b), gi) in n.params().zip(before.params()).zip(g.iter()) {
            let expected = -0.01 * gi.signum();
            assert!(((a - b) - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut n = net(&[2, 3, 2], 4);
        let mut g = Gradients::zeros_like(&n);
        g.layers[1].bias[1] = f64::NAN;
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01), &n).unwrap();
        let before = n.clone();
        match opt.step(&mut n, &g) {
            Err(Error::NonFiniteGradient { block }) => assert_eq!(block, "layer 1 bias[1]"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(n.layers(), before.layers());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let n = net(&[4, 16, 3], 77);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        n.save(&path).unwrap();
        let back = Network::<f64>::load(&path).unwrap();
        assert_eq!(back.layers(), n.layers());
        assert_eq!(back.seed(), 77);
    }

    #[test]
    fn single_precision_network_runs() {
        let n = Network::<f32>::new(&dense_specs(&[3, 4, 2]).unwrap(), 1).unwrap();
        let (o, cache) = n.forward(&[1.0, 0.5, -0.5]).unwrap();
        assert_eq!(o.len(), 2);
        assert!(n.backward(&cache, &[1.0, 0.0]).is_ok());
    }
}
