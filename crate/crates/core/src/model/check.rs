use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::forward::{GameOn, ModelInput, SampleGraphs};
use crate::autodiff::{Fault, Tape};
use crate::error::Result;
use crate::gradcheck::{grad_check_on, Coverage, GradCheckReport};
use crate::tensor::Tensor;

/// Gradient check of the whole model, with tensor names attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradCheck {
    pub report: GradCheckReport,
    pub names: Vec<String>,
}

impl ModelGradCheck {
    pub fn worst_tensor(&self) -> &str {
        &self.names[self.report.worst_tensor]
    }
}

/// A two-sample batch of small random graphs (2 text and 2 visual nodes
/// each) with labels 0 and 1.
pub fn tiny_input(config: &ModelConfig, seed: u64) -> Result<(ModelInput<f64>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = |n: usize| {
        let data = (0..n * config.d_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(n, config.d_in, data)
    };
    let graphs = (0..2)
        .map(|_| SampleGraphs::new(rows(2)?, rows(2)?, config.self_loops)?.for_variant(config.variant))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = graphs.iter().collect();
    Ok((ModelInput::batch(&refs)?, vec![0, 1]))
}

/// Checks tape gradients of the mean loss on [`tiny_input`] against central
/// differences in 64-bit with dropout disabled. `fault` corrupts one
/// backward rule of the analytic pass.
pub fn model_grad_check(
    config: &ModelConfig,
    seed: u64,
    eps: f64,
    coverage: Coverage,
    fault: Option<Fault>,
) -> Result<ModelGradCheck> {
    let model = GameOn::<f64>::new(config.clone(), seed)?;
    let (input, labels) = tiny_input(config, seed.wrapping_add(1))?;
    let params: Vec<Tensor<f64>> = model.params().tensors().cloned().collect();
    let names = model.params().names().into_iter().map(String::from).collect();
    let f = |tape: &mut Tape<f64>, vars: &[crate::autodiff::Var]| {
        let vars = model.params().vars_from(vars.to_vec());
        let out = model.forward(tape, &vars, &input, None)?;
        model.loss(tape, out.logits, &labels)
    };
    let make_tape = || match fault {
        Some(fault) => Tape::with_fault(fault),
        None => Tape::new(),
    };
    let report = grad_check_on(make_tape, f, &params, eps, coverage)?;
    Ok(ModelGradCheck { report, names })
}
