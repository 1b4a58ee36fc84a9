//! Accuracy and degeneracy diagnostics for filter runs.

use std::io::Write;

use crate::error::{check_len, Error, Result};
use crate::scalar::Real;

/// `‖ŷ − y‖₂` over the outputs of one block. Not divided by the element
/// count.
pub fn rmse_block<T: Real>(predicted: &[T], observed: &[T]) -> Result<T> {
    check_len("block output", predicted.len(), observed.len())?;
    Ok(predicted
        .iter()
        .zip(observed)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>()
        .sqrt())
}

/// Sum of per-block errors.
pub fn rmse_total<T: Real>(per_block: &[T]) -> T {
    per_block.iter().copied().sum()
}

/// Cumulative log-evidence: running sum over steps of the per-block
/// increments of each step.
pub fn log_evidence_trace<T: Real>(increments: &[Vec<T>]) -> Result<Vec<T>> {
    let mut acc = T::zero();
    let mut out = Vec::with_capacity(increments.len());
    for (k, row) in increments.iter().enumerate() {
        if let Some(b) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLikelihood { step: k, block: b });
        }
        acc += row.iter().copied().sum::<T>();
        out.push(acc);
    }
    Ok(out)
}

/// `1 / Σ wₙ²` for normalised weights.
pub fn effective_sample_size<T: Real>(weights: &[T]) -> Result<T> {
    if weights.is_empty() {
        return Err(Error::usage("effective sample size of an empty weight vector"));
    }
    let tol = T::of(1e-9).max(T::epsilon() * T::of(16.0 * weights.len() as f64));
    let total: T = weights.iter().copied().sum();
    if (total - T::one()).abs() > tol || weights.iter().any(|w| !(*w >= T::zero())) {
        return Err(Error::usage(format!(
            "weights must be a probability vector (sum = {total})"
        )));
    }
    let ss: T = weights.iter().map(|&w| w * w).sum();
    Ok(ss.recip())
}

/// Per-step diagnostics of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricTrace<T> {
    pub steps: Vec<u64>,
    pub times: Vec<T>,
    pub rmse_blocks: Vec<Vec<T>>,
    pub log_lik_blocks: Vec<Vec<T>>,
    pub ess_blocks: Vec<Vec<T>>,
}

impl<T: Real> MetricTrace<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, step: u64, time: T, rmse: Vec<T>, log_lik: Vec<T>, ess: Vec<T>) {
        self.steps.push(step);
        self.times.push(time);
        self.rmse_blocks.push(rmse);
        self.log_lik_blocks.push(log_lik);
        self.ess_blocks.push(ess);
    }

    pub fn rmse_total(&self) -> Vec<T> {
        self.rmse_blocks.iter().map(|r| rmse_total(r)).collect()
    }

    pub fn log_evidence(&self) -> Result<Vec<T>> {
        log_evidence_trace(&self.log_lik_blocks)
    }

    /// Long-format CSV with header `step,time,metric,block,value`. `block`
    /// is a block id or `total`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,time,metric,block,value")?;
        let evidence = self
            .log_evidence()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))?;
        for k in 0..self.len() {
            let (step, t) = (self.steps[k], self.times[k]);
            for (b, v) in self.rmse_blocks[k].iter().enumerate() {
                writeln!(w, "{step},{t},rmse,{b},{v:e}")?;
            }
            writeln!(w, "{step},{t},rmse,total,{:e}", rmse_total(&self.rmse_blocks[k]))?;
            for (b, v) in self.log_lik_blocks[k].iter().enumerate() {
                writeln!(w, "{step},{t},log_likelihood,{b},{v:e}")?;
            }
            writeln!(w, "{step},{t},log_evidence,total,{:e}", evidence[k])?;
            for (b, v) in self.ess_blocks[k].iter().enumerate() {
                writeln!(w, "{step},{t},ess,{b},{v:e}")?;
            }
        }
        Ok(())
    }
}
