//! Finite-difference verification of tape gradients.

use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::math::Real;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Relative errors are taken against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Coordinates whose central differences at `step` and `step / 2`
    /// disagree by more than this (relative to the same floor) are treated
    /// as straddling a kink and skipped.
    pub kink: f64,
    /// Largest fraction of coordinates that may be skipped as kinks.
    pub max_skipped: f64,
    /// Debug hook forwarded to [`Tape::inject_fault`].
    pub fault: Option<&'static str>,
}

impl GradCheck {
    /// Settings matched to the compiled precision: 1e-3 at 32-bit, 1e-6 at
    /// 64-bit.
    pub fn for_precision() -> Self {
        if core::mem::size_of::<Real>() == 8 {
            GradCheck {
                step: 1e-5,
                tolerance: 1e-6,
                floor: 1.0,
                kink: 5e-7,
                max_skipped: 0.1,
                fault: None,
            }
        } else {
            GradCheck {
                step: 1e-2,
                tolerance: 1e-3,
                floor: 1.0,
                kink: 5e-4,
                // a 1e-2 step straddles pooling ties often
                max_skipped: 0.5,
                fault: None,
            }
        }
    }

    pub fn with_fault(mut self, op: &'static str) -> Self {
        self.fault = Some(op);
        self
    }
}

impl Default for GradCheck {
    fn default() -> Self {
        Self::for_precision()
    }
}

#[derive(Debug, Clone)]
pub struct InputReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Tensor,
    pub numeric: Vec<f64>,
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub inputs: Vec<InputReport>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares tape gradients of a scalar function against central finite
/// differences, one report per input.
pub fn grad_check<F>(f: F, inputs: &[Tensor], cfg: &GradCheck) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::invalid("grad_check", v.shape(), "function must be scalar"));
        }
        Ok(v.item() as f64)
    };

    let mut tape = Tape::new();
    if let Some(op) = cfg.fault {
        tape.inject_fault(op);
    }
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    let mut passed = true;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, inputs[i].shape());
        let mut numeric = Vec::with_capacity(inputs[i].len());
        let (mut max_rel, mut worst, mut skipped) = (0.0f64, 0usize, 0usize);
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            let mut central = |h: f64| -> Result<f64> {
                // perturbed inputs are rounded to Real; divide by the actual spacing
                let up = (x0 as f64 + h) as Real;
                let down = (x0 as f64 - h) as Real;
                work[i].data_mut()[j] = up;
                let fp = eval(&work)?;
                work[i].data_mut()[j] = down;
                let fm = eval(&work)?;
                work[i].data_mut()[j] = x0;
                Ok((fp - fm) / (up as f64 - down as f64))
            };
            let coarse = central(cfg.step)?;
            let fine = central(cfg.step / 2.0)?;
            numeric.push(coarse);
            let a = analytic.data()[j] as f64;
            let scale = a.abs().max(coarse.abs()).max(cfg.floor);
            if (coarse - fine).abs() > cfg.kink * scale {
                skipped += 1;
                continue;
            }
            let rel = (a - coarse).abs() / scale;
            if rel > max_rel {
                max_rel = rel;
                worst = j;
            }
        }
        if max_rel > cfg.tolerance || skipped as f64 > cfg.max_skipped * inputs[i].len() as f64 {
            passed = false;
        }
        reports.push(InputReport {
            max_rel_error: max_rel,
            worst_index: worst,
            analytic,
            numeric,
            skipped,
        });
    }
    Ok(GradReport {
        inputs: reports,
        tolerance: cfg.tolerance,
        passed,
    })
}
