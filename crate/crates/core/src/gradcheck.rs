//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Maximum admissible relative error.
    pub tol: f64,
    /// Denominator floor for the relative error, so that entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-3,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of `f` against `(f(p+h) − f(p−h)) / 2h` for
/// every entry of every parameter. Failures are reported, never returned as
/// errors; an `Err` means `f` itself failed to evaluate.
pub fn grad_check<F>(f: F, params: &[(String, Tensor)], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.value(root).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, v)| tape.leaf(v.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let mut values: Vec<Tensor> = params.iter().map(|(_, v)| v.clone()).collect();
    let mut report = Vec::with_capacity(params.len());
    for (pi, (name, value)) in params.iter().enumerate() {
        let analytic = grads
            .get(vars[pi])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(value.shape()));
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for e in 0..value.len() {
            let base = value.data()[e];
            values[pi] = with_entry(value, e, base + opts.h);
            let plus = eval(&values)?;
            values[pi] = with_entry(value, e, base - opts.h);
            let minus = eval(&values)?;
            values[pi] = value.clone();
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = analytic.data()[e];
            max_abs = max_abs.max((a - numeric).abs());
            max_rel = max_rel.max(relative_error(a, numeric, opts.abs_floor));
        }
        report.push(ParamCheck {
            name: name.clone(),
            entries: value.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            passed: max_rel < opts.tol,
        });
    }
    Ok(GradCheckReport { params: report })
}

fn with_entry(t: &Tensor, e: usize, v: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[e] = v;
    Tensor::from_parts(t.shape().to_vec(), data)
}
