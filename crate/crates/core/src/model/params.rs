use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// How a tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl TensorSpec {
    fn weight(name: String, rows: usize, cols: usize) -> Self {
        Self {
            name,
            shape: vec![rows, cols],
            init: Init::Glorot {
                fan_in: rows,
                fan_out: cols,
            },
        }
    }

    fn bias(name: String, len: usize) -> Self {
        Self {
            name,
            shape: vec![len],
            init: Init::Zeros,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Name prefix of one attention/convolution head.
pub fn layer_prefix(config: &ModelConfig, layer: usize, head: usize) -> String {
    if !config.variant.uses_attention() {
        return format!("gcn{layer}");
    }
    if config.n_heads == 1 {
        format!("gat{layer}")
    } else {
        format!("gat{layer}.head{head}")
    }
}

/// Every trainable tensor of a configuration, in canonical order.
pub fn param_layout(config: &ModelConfig) -> Vec<TensorSpec> {
    let mut specs = vec![
        TensorSpec::weight("proj.w".into(), config.d_in, config.d_shared),
        TensorSpec::bias("proj.b".into(), config.d_shared),
    ];
    for layer in 0..config.n_gat_layers {
        let d_layer_in = if layer == 0 { config.d_shared } else { config.d_gat };
        let heads = if config.variant.uses_attention() { config.n_heads } else { 1 };
        for head in 0..heads {
            let p = layer_prefix(config, layer, head);
            specs.push(TensorSpec::weight(format!("{p}.w_feat"), d_layer_in, config.d_gat));
            if config.gat_feat_bias {
                specs.push(TensorSpec::bias(format!("{p}.b_feat"), config.d_gat));
            }
            if !config.variant.uses_attention() {
                continue;
            }
            if !config.shared_gat_projection {
                specs.push(TensorSpec::weight(format!("{p}.w_att"), d_layer_in, config.d_gat));
            }
            if config.gat_att_bias {
                specs.push(TensorSpec::bias(format!("{p}.b_att"), config.d_gat));
            }
            specs.push(TensorSpec {
                name: format!("{p}.a"),
                shape: vec![2 * config.d_gat],
                init: Init::Glorot {
                    fan_in: 2 * config.d_gat,
                    fan_out: 1,
                },
            });
        }
    }
    specs.extend([
        TensorSpec::weight("cls.w1".into(), config.classifier_input(), config.d_hidden),
        TensorSpec::bias("cls.b1".into(), config.d_hidden),
        TensorSpec::weight("cls.w2".into(), config.d_hidden, config.n_classes),
        TensorSpec::bias("cls.b2".into(), config.n_classes),
    ]);
    specs
}

/// Trainable scalar count for a configuration.
pub fn count_parameters(config: &ModelConfig) -> usize {
    param_layout(config).iter().map(TensorSpec::numel).sum()
}

/// Named trainable tensors in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Real> ModelParams<T> {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = param_layout(config)
            .into_iter()
            .map(|spec| {
                let data = match spec.init {
                    Init::Zeros => vec![T::zero(); spec.numel()],
                    Init::Glorot { fan_in, fan_out } => {
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..spec.numel())
                            .map(|_| T::lit(rng.random_range(-limit..limit)))
                            .collect()
                    }
                };
                Ok((spec.name, Tensor::new(spec.shape, data)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { tensors })
    }

    /// Wraps tensors that must match the layout of `config` exactly.
    pub fn from_named(config: &ModelConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let layout = param_layout(config);
        if layout.len() != tensors.len() {
            return Err(Error::Validation(format!(
                "configuration needs {} tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for (spec, (name, t)) in layout.iter().zip(&tensors) {
            if &spec.name != name || spec.shape != t.shape() {
                return Err(Error::Validation(format!(
                    "expected tensor {} {:?}, found {name} {:?}",
                    spec.name,
                    spec.shape,
                    t.shape()
                )));
            }
        }
        Ok(Self { tensors })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.tensors.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.tensors.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.tensors.iter_mut().map(|(_, t)| t)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// Records every tensor on `tape` as a gradient-requiring leaf.
    pub fn register(&self, tape: &mut Tape<T>) -> ParamVars {
        let vars = self.tensors.iter().map(|(_, t)| tape.param(t.clone())).collect();
        self.vars_from(vars)
    }

    /// Binds already-recorded handles (in canonical order) to names.
    pub fn vars_from(&self, vars: Vec<Var>) -> ParamVars {
        let index = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        ParamVars { vars, index }
    }
}

/// Tape handles of registered parameters, addressable by name.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Contract(format!("model has no parameter {name}")))
    }

    pub fn opt(&self, name: &str) -> Option<Var> {
        self.index.get(name).map(|&i| self.vars[i])
    }

    /// Handles in canonical order.
    pub fn all(&self) -> &[Var] {
        &self.vars
    }
}

/// Parameter layout for a variant of an otherwise fixed configuration.
pub fn layout_for(config: &ModelConfig, variant: Variant) -> Vec<TensorSpec> {
    param_layout(&config.clone().with_variant(variant))
}
