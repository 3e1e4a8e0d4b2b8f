//! Central finite-difference verification of analytic gradients.

use crate::error::Result;

use super::{Graph, Tensor, Var};

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-6;

/// Denominator floor for the relative error. Entries whose analytic and
/// numeric gradients are both below it are compared in absolute terms, so
/// round-off in `f(x + h) - f(x - h)` (about `1e-10` here) cannot dominate.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Fixed projection weights in `[-1, 1]` used to reduce a non-scalar output.
fn projection(n: usize) -> Tensor<f64> {
    Tensor::from_fn(&[n], |i| {
        let x = crate::rng::mix64(i as u64 ^ 0xA5A5_5A5A);
        (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

fn evaluate<F>(inputs: &[Tensor<f64>], op: &F, grads: bool) -> Result<(f64, Option<Vec<Tensor<f64>>>)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = op(&mut g, &vars)?;
    let root = if g.value(out).len() == 1 {
        out
    } else {
        let shape = g.value(out).shape().to_vec();
        let w = projection(g.value(out).len()).reshape(shape)?;
        let w = g.constant(w);
        g.dot(out, w)?
    };
    let value = g.value(root).data()[0];
    if !grads {
        return Ok((value, None));
    }
    let mut gr = g.backward(root)?;
    let per_input = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| gr.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok((value, Some(per_input)))
}

/// Compares the analytic gradient of `op` (reduced to a scalar by a fixed
/// random projection when its output is not scalar) with central differences
/// of step `h`, over every element of every input.
pub fn grad_check<F>(inputs: &[Tensor<f64>], h: f64, op: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (_, analytic) = evaluate(inputs, &op, true)?;
    let analytic = analytic.expect("gradients requested");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let x0 = input.data()[j];
            work[i].data_mut()[j] = x0 + h;
            let (fp, _) = evaluate(&work, &op, false)?;
            work[i].data_mut()[j] = x0 - h;
            let (fm, _) = evaluate(&work, &op, false)?;
            work[i].data_mut()[j] = x0;

            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[i].data()[j];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst = (i, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
