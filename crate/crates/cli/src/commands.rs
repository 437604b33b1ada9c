use std::path::{Path, PathBuf};
use std::str::FromStr;

use gameon_core::autodiff::Fault;
use gameon_core::gradcheck::Coverage;
use gameon_core::io::{load_checkpoint, load_manifest, save_checkpoint, synth_dataset, Split, SynthMode};
use gameon_core::model::{count_parameters, model_grad_check, param_layout, ModelConfig, Variant};
use gameon_core::train::{evaluate, prepare, train as train_model};
use gameon_core::Error;
use log::info;
use serde_json::{json, Value};

use crate::ablate::{ablation_tsv, run_ablation};
use crate::config::RunConfig;
use crate::CliError;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_ENTRIES_PER_TENSOR: usize = 256;
const GRADCHECK_EPS: f64 = 1e-5;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn required(value: Option<PathBuf>, what: &str) -> Result<PathBuf, Error> {
    value.ok_or_else(|| Error::Validation(format!("no {what} given (flag --{what} or config key {what})")))
}

pub fn train(
    manifest: Option<PathBuf>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    variant: Option<String>,
    seed: Option<u64>,
    no_self_loops: bool,
) -> Result<Value, CliError> {
    let mut rc = RunConfig::load_or_default(config.as_deref())?;
    rc.manifest = manifest.or(rc.manifest);
    rc.out = out.or(rc.out);
    if let Some(v) = variant {
        rc.model.variant = Variant::from_str(&v)?;
    }
    if let Some(s) = seed {
        rc.train.seed = s;
    }
    if no_self_loops {
        rc.model.self_loops = false;
    }
    rc.validate()?;
    let manifest_path = required(rc.manifest.clone(), "manifest")?;
    let out = required(rc.out.clone(), "out")?;
    let manifest = load_manifest(&manifest_path)?;
    let train_b = manifest.load_split(Split::Train)?;
    let val_b = if manifest.count(Split::Val) > 0 {
        Some(manifest.load_split(Split::Val)?)
    } else {
        None
    };
    let tr = prepare(&train_b, &rc.model)?;
    let va = val_b.map(|v| prepare(&v, &rc.model)).transpose()?;
    info!(
        "training {} on {} samples ({} validation)",
        rc.model.variant.label(),
        tr.len(),
        va.as_ref().map_or(0, Vec::len)
    );
    let outcome = train_model(&rc.model, &rc.train, &tr, va.as_deref())?;

    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    let checkpoint = out.join("checkpoint.gmck");
    let final_checkpoint = out.join("final.gmck");
    save_checkpoint(&outcome.best, &checkpoint)?;
    save_checkpoint(&outcome.last, &final_checkpoint)?;
    outcome.history.write(&out, "history")?;
    write_text(&out.join("run.json"), &serde_json::to_string_pretty(&rc).expect("config serializes"))?;

    let last = outcome.history.last().expect("at least one epoch");
    let best_val = outcome
        .history
        .best_epoch
        .and_then(|e| outcome.history.records.iter().find(|r| r.epoch == e))
        .and_then(|r| r.val.clone());
    Ok(json!({
        "variant": rc.model.variant,
        "checkpoint": checkpoint,
        "final_checkpoint": final_checkpoint,
        "history": [out.join("history.tsv"), out.join("history.json")],
        "epochs_run": last.epoch,
        "best_epoch": outcome.history.best_epoch,
        "stopped_early": outcome.history.stopped_early,
        "final_loss": last.loss,
        "final_train": last.train,
        "best_val": best_val,
    }))
}

pub fn eval(checkpoint: &Path, manifest: &Path, split: &str, per_class: bool) -> Result<Value, CliError> {
    let split = Split::from_str(split)?;
    let model = load_checkpoint(checkpoint)?;
    let manifest = load_manifest(manifest)?;
    let bundles = manifest.load_split(split)?;
    let examples = prepare(&bundles, model.config())?;
    let metrics = evaluate(&model, &examples)?;
    let mut value = json!({
        "split": split,
        "samples": examples.len(),
        "variant": model.config().variant,
        "accuracy": metrics.accuracy,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "confusion": metrics.confusion,
    });
    if per_class {
        value["per_class"] = json!(metrics.per_class());
    }
    Ok(value)
}

pub fn ablate(
    manifest: Option<PathBuf>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<Value, CliError> {
    let mut rc = RunConfig::load_or_default(config.as_deref())?;
    rc.manifest = manifest.or(rc.manifest);
    rc.out = out.or(rc.out);
    let seed = seed.unwrap_or(rc.train.seed);
    let manifest = load_manifest(required(rc.manifest.clone(), "manifest")?)?;
    let rows = run_ablation(&manifest, &rc, seed)?;
    let table = ablation_tsv(&rows);
    info!("ablation (seed {seed}):\n{table}");
    let result = json!({ "seed": seed, "rows": rows });
    if let Some(out) = &rc.out {
        std::fs::create_dir_all(out).map_err(io_err(out))?;
        write_text(&out.join("ablation.tsv"), &table)?;
        write_text(&out.join("ablation.json"), &serde_json::to_string_pretty(&result).expect("JSON"))?;
    }
    Ok(result)
}

pub fn gradcheck(config: Option<PathBuf>, seed: u64, inject_fault: bool) -> Result<Value, CliError> {
    let rc = RunConfig::load_or_default(config.as_deref())?;
    let coverage = Coverage::Sample {
        per_tensor: GRADCHECK_ENTRIES_PER_TENSOR,
        seed,
    };
    let fault = inject_fault.then_some(Fault::EluBackward);
    let check = model_grad_check(&rc.model, seed, GRADCHECK_EPS, coverage, fault)?;
    let per_tensor: Vec<Value> = check
        .names
        .iter()
        .zip(&check.report.per_tensor)
        .map(|(name, t)| json!({ "name": name, "entries_checked": t.entries_checked, "max_rel_error": t.max_rel_error }))
        .collect();
    let error = check.report.max_rel_error;
    let report = json!({
        "variant": rc.model.variant,
        "eps": GRADCHECK_EPS,
        "max_rel_error": error,
        "worst_tensor": check.worst_tensor(),
        "tolerance": GRADCHECK_TOLERANCE,
        "passed": error < GRADCHECK_TOLERANCE,
        "per_tensor": per_tensor,
    });
    if error < GRADCHECK_TOLERANCE {
        Ok(report)
    } else {
        Err(CliError::GradCheck {
            error,
            tensor: check.worst_tensor().to_string(),
            tolerance: GRADCHECK_TOLERANCE,
            report,
        })
    }
}

/// Tensor names, shapes and counts of a configuration.
pub fn params_report(model: &ModelConfig) -> Result<Value, Error> {
    model.validate()?;
    let tensors: Vec<Value> = param_layout(model)
        .iter()
        .map(|s| json!({ "name": s.name, "shape": s.shape, "count": s.numel() }))
        .collect();
    Ok(json!({
        "variant": model.variant,
        "tensors": tensors,
        "total": count_parameters(model),
    }))
}

pub fn params(config: Option<PathBuf>) -> Result<Value, CliError> {
    let rc = RunConfig::load_or_default(config.as_deref())?;
    Ok(params_report(&rc.model)?)
}

pub fn synth(seed: u64, n: usize, mode: &str, out: &Path) -> Result<Value, CliError> {
    let mode = SynthMode::from_str(mode)?;
    let manifest = synth_dataset(seed, n, mode, out)?;
    Ok(json!({
        "manifest": out.join(gameon_core::io::MANIFEST_FILE),
        "mode": mode,
        "seed": seed,
        "samples": manifest.records.len(),
        "train": manifest.count(Split::Train),
        "val": manifest.count(Split::Val),
        "test": manifest.count(Split::Test),
    }))
}
