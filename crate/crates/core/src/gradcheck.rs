//! Central-difference verification of tape gradients (64-bit).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which parameter entries to perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// At most `per_tensor` entries of every tensor, chosen with `seed`.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub worst_entry: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Index into the parameter list of the tensor holding the worst entry.
    pub worst_tensor: usize,
    pub per_tensor: Vec<TensorCheck>,
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares tape gradients of `f` against central differences.
///
/// `f` records a scalar loss on the given tape from the parameter handles
/// it is passed, which appear in the same order as `params`. It must be
/// deterministic.
pub fn grad_check_with<F>(
    f: F,
    params: &[Tensor<f64>],
    eps: f64,
    coverage: Coverage,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync,
{
    grad_check_on(Tape::new, f, params, eps, coverage)
}

/// As [`grad_check_with`], with a caller-supplied tape constructor for the
/// analytic pass (used to inject backward faults).
pub fn grad_check_on<F, M>(
    make_tape: M,
    f: F,
    params: &[Tensor<f64>],
    eps: f64,
    coverage: Coverage,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync,
    M: Fn() -> Tape<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("finite-difference step {eps} must be positive")));
    }
    let mut tape = make_tape();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    check_finite(tape.value(loss).item())?;
    let grads = tape.backward(loss)?;

    let eval = |params: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let value = tape.value(loss).item();
        check_finite(value)?;
        Ok(value)
    };

    let mut per_tensor = Vec::with_capacity(params.len());
    for (t, param) in params.iter().enumerate() {
        let analytic = grads
            .get(vars[t])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; param.len()]);
        let entries: Vec<usize> = match coverage {
            Coverage::All => (0..param.len()).collect(),
            Coverage::Sample { per_tensor, seed } if per_tensor < param.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let mut idx = sample(&mut rng, param.len(), per_tensor).into_vec();
                idx.sort_unstable();
                idx
            }
            Coverage::Sample { .. } => (0..param.len()).collect(),
        };
        let errors: Vec<f64> = entries
            .par_iter()
            .map(|&i| {
                let mut shifted = params.to_vec();
                shifted[t].data_mut()[i] = param.data()[i] + eps;
                let up = eval(&shifted)?;
                shifted[t].data_mut()[i] = param.data()[i] - eps;
                let down = eval(&shifted)?;
                Ok(relative_error(analytic[i], (up - down) / (2.0 * eps)))
            })
            .collect::<Result<_>>()?;
        let (worst_pos, max_rel_error) = errors
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0), |best, (k, e)| if e > best.1 { (k, e) } else { best });
        per_tensor.push(TensorCheck {
            entries_checked: entries.len(),
            max_rel_error,
            worst_entry: entries.get(worst_pos).copied().unwrap_or(0),
        });
    }
    let (worst_tensor, max_rel_error) = per_tensor
        .iter()
        .enumerate()
        .fold((0, 0.0), |best, (t, c)| if c.max_rel_error > best.1 { (t, c.max_rel_error) } else { best });
    Ok(GradCheckReport {
        max_rel_error,
        worst_tensor,
        per_tensor,
    })
}

/// Maximum relative error over every entry of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Sync,
{
    grad_check_with(f, params, eps, Coverage::All).map(|r| r.max_rel_error)
}

fn check_finite(value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("loss evaluated to {value}")))
    }
}
