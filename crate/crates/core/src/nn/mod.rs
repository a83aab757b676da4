//! Networks: layer descriptors, named parameters, the generator and
//! discriminator architectures, Adam, and the generator quartet.

mod adam;
mod quartet;

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState, Moments};
pub use quartet::{role_seed, GeneratorQuartet, Role};

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

/// Sizes shared by the generators and discriminators of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub channels: usize,
    pub base_channels: usize,
    pub residual_blocks: usize,
    pub image_size: usize,
    pub instance_norm: bool,
    pub leaky_slope: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            channels: 3,
            base_channels: 16,
            residual_blocks: 2,
            image_size: 32,
            instance_norm: true,
            leaky_slope: 0.2,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::config("/arch/channels", "must be at least 1"));
        }
        if self.base_channels == 0 {
            return Err(Error::config("/arch/base_channels", "must be at least 1"));
        }
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::config(
                "/arch/image_size",
                format!("{} is not a positive multiple of 4", self.image_size),
            ));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::config("/arch/leaky_slope", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Side of the discriminator's patch map for an input of side `size`.
    pub fn patch_size(size: usize) -> usize {
        (0..3).fold(size, |s, _| s.div_ceil(2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    ConvTranspose {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// conv-norm-relu-conv-norm with an identity skip.
    Residual {
        name: String,
        channels: usize,
        norm: bool,
    },
    InstanceNorm,
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
    /// Fixed multiplication by a constant; no parameters.
    Scale { factor: f64 },
}

/// A differentiable map built from [`Layer`]s with a named parameter set.
#[derive(Clone, Debug)]
pub struct Network<T: Scalar> {
    name: String,
    layers: Vec<Layer>,
    params: BTreeMap<String, Tensor<T>>,
}

fn conv_params<T: Scalar>(
    params: &mut BTreeMap<String, Tensor<T>>,
    name: &str,
    weight_shape: [usize; 4],
    bias_len: usize,
) {
    params.insert(format!("{name}.weight"), zero_param(&weight_shape));
    params.insert(format!("{name}.bias"), zero_param(&[bias_len]));
}

fn zero_param<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    Tensor::parameter(shape, vec![T::zero(); shape.iter().product()]).expect("positive shape")
}

impl<T: Scalar> Network<T> {
    /// Assemble a network from layers, creating zeroed parameters for every
    /// layer that owns some.
    pub fn from_layers(name: impl Into<String>, layers: Vec<Layer>) -> Self {
        let mut params = BTreeMap::new();
        for layer in &layers {
            match layer {
                Layer::Conv {
                    name,
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => conv_params(&mut params, name, [*out_ch, *in_ch, *kernel, *kernel], *out_ch),
                Layer::ConvTranspose {
                    name,
                    in_ch,
                    out_ch,
                    kernel,
                    ..
                } => conv_params(&mut params, name, [*in_ch, *out_ch, *kernel, *kernel], *out_ch),
                Layer::Residual { name, channels, .. } => {
                    let c = *channels;
                    conv_params(&mut params, &format!("{name}.conv1"), [c, c, 3, 3], c);
                    conv_params(&mut params, &format!("{name}.conv2"), [c, c, 3, 3], c);
                }
                _ => {}
            }
        }
        Network {
            name: name.into(),
            layers,
            params,
        }
    }

    /// The identity map (no layers).
    pub fn identity(name: impl Into<String>) -> Self {
        Self::from_layers(name, Vec::new())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn parameters(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    /// Parameters in name order.
    pub fn parameter_list(&self) -> Vec<Tensor<T>> {
        self.params.values().cloned().collect()
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(|p| p.numel()).sum()
    }

    /// Replace one parameter; the shape must not change.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                lhs: slot.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    /// Copy of this network evaluated at the given parameters (name order).
    pub fn with_parameters(&self, values: &[Tensor<T>]) -> Result<Self> {
        if values.len() != self.params.len() {
            return Err(Error::InvalidShape {
                op: "with_parameters",
                shape: vec![values.len()],
                reason: format!("network has {} parameters", self.params.len()),
            });
        }
        let mut out = self.clone();
        for (name, v) in self.params.keys().zip(values) {
            out.set_param(name, v.clone())?;
        }
        Ok(out)
    }

    pub fn zero_grad(&self) {
        for p in self.params.values() {
            p.zero_grad();
        }
    }

    /// Fingerprint of all parameter bits, for before/after comparisons.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, p) in &self.params {
            name.hash(&mut h);
            for v in p.data() {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Weights from N(0, `std`), biases zero, deterministic per seed.
    pub fn init_with_std(&mut self, seed: u64, std: f64) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let normal = Normal::new(0.0, std).expect("std is finite and positive");
        for (name, p) in self.params.iter_mut() {
            let data: Vec<T> = if name.ends_with(".bias") {
                vec![T::zero(); p.numel()]
            } else {
                (0..p.numel())
                    .map(|_| T::from_f64_lossy(normal.sample(&mut rng)))
                    .collect()
            };
            *p = Tensor::parameter(p.shape(), data).expect("shape unchanged");
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let eps = T::from_f64_lossy(INSTANCE_NORM_EPS);
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Conv { name, stride, pad, .. } => h.conv2d(
                    self.param(&format!("{name}.weight"))?,
                    Some(self.param(&format!("{name}.bias"))?),
                    *stride,
                    *pad,
                )?,
                Layer::ConvTranspose { name, stride, pad, .. } => h.conv_transpose2d(
                    self.param(&format!("{name}.weight"))?,
                    Some(self.param(&format!("{name}.bias"))?),
                    *stride,
                    *pad,
                )?,
                Layer::Residual { name, norm, .. } => {
                    let conv = |input: &Tensor<T>, which: &str| {
                        input.conv2d(
                            self.param(&format!("{name}.{which}.weight"))?,
                            Some(self.param(&format!("{name}.{which}.bias"))?),
                            1,
                            1,
                        )
                    };
                    let mut r = conv(&h, "conv1")?;
                    if *norm {
                        r = r.instance_norm(eps)?;
                    }
                    r = conv(&r.relu(), "conv2")?;
                    if *norm {
                        r = r.instance_norm(eps)?;
                    }
                    h.add(&r)?
                }
                Layer::InstanceNorm => h.instance_norm(eps)?,
                Layer::Relu => h.relu(),
                Layer::LeakyRelu { slope } => h.leaky_relu(T::from_f64_lossy(*slope)),
                Layer::Tanh => h.tanh(),
                Layer::Sigmoid => h.sigmoid(),
                Layer::Scale { factor } => h.mul_scalar(T::from_f64_lossy(*factor)),
            };
        }
        Ok(h)
    }
}

/// Encoder (two stride-2 convs) -> residual blocks -> decoder (two stride-2
/// transposed convs) -> tanh. Output has the input's spatial size.
pub fn build_generator<T: Scalar>(name: impl Into<String>, cfg: &ArchConfig) -> Result<Network<T>> {
    cfg.validate()?;
    let (c, nf) = (cfg.channels, cfg.base_channels);
    let mut layers = Vec::new();
    let push_norm = |layers: &mut Vec<Layer>| {
        if cfg.instance_norm {
            layers.push(Layer::InstanceNorm);
        }
    };
    layers.push(Layer::Conv {
        name: "enc1".into(),
        in_ch: c,
        out_ch: nf,
        kernel: 3,
        stride: 2,
        pad: 1,
    });
    push_norm(&mut layers);
    layers.push(Layer::Relu);
    layers.push(Layer::Conv {
        name: "enc2".into(),
        in_ch: nf,
        out_ch: 2 * nf,
        kernel: 3,
        stride: 2,
        pad: 1,
    });
    push_norm(&mut layers);
    layers.push(Layer::Relu);
    for i in 0..cfg.residual_blocks {
        layers.push(Layer::Residual {
            name: format!("res{i}"),
            channels: 2 * nf,
            norm: cfg.instance_norm,
        });
    }
    layers.push(Layer::ConvTranspose {
        name: "dec1".into(),
        in_ch: 2 * nf,
        out_ch: nf,
        kernel: 4,
        stride: 2,
        pad: 1,
    });
    push_norm(&mut layers);
    layers.push(Layer::Relu);
    layers.push(Layer::ConvTranspose {
        name: "dec2".into(),
        in_ch: nf,
        out_ch: c,
        kernel: 4,
        stride: 2,
        pad: 1,
    });
    layers.push(Layer::Tanh);
    Ok(Network::from_layers(name, layers))
}

/// PatchGAN-style discriminator: three stride-2 convs with leaky ReLU, then
/// a one-channel conv and sigmoid. A `32 x 32` input yields a `4 x 4` map.
pub fn build_discriminator<T: Scalar>(name: impl Into<String>, cfg: &ArchConfig) -> Result<Network<T>> {
    cfg.validate()?;
    let (c, nf) = (cfg.channels, cfg.base_channels);
    let slope = cfg.leaky_slope;
    let mut layers = Vec::new();
    let widths = [(c, nf), (nf, 2 * nf), (2 * nf, 4 * nf)];
    for (i, &(in_ch, out_ch)) in widths.iter().enumerate() {
        layers.push(Layer::Conv {
            name: format!("down{}", i + 1),
            in_ch,
            out_ch,
            kernel: 3,
            stride: 2,
            pad: 1,
        });
        if i > 0 && cfg.instance_norm {
            layers.push(Layer::InstanceNorm);
        }
        layers.push(Layer::LeakyRelu { slope });
    }
    layers.push(Layer::Conv {
        name: "patch".into(),
        in_ch: 4 * nf,
        out_ch: 1,
        kernel: 3,
        stride: 1,
        pad: 1,
    });
    layers.push(Layer::Sigmoid);
    Ok(Network::from_layers(name, layers))
}

/// Weights from N(0, 0.02), biases zero; deterministic per seed.
pub fn init_parameters<T: Scalar>(net: &mut Network<T>, seed: u64) {
    net.init_with_std(seed, INIT_STD);
}
