use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// (input index, element index) of the largest relative error.
    pub worst: Option<(usize, usize)>,
    pub tol: f64,
    pub passed: bool,
}

fn scalarize(g: &mut Graph, out: Var) -> Result<Var> {
    let n = g.value(out).numel();
    if n == 1 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let weights = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    g.weighted_sum(out, weights)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let s = scalarize(&mut g, out)?;
    Ok(g.value(s).data()[0])
}

/// Compare analytic gradients of `f` with respect to every input against
/// central finite differences. Non-scalar outputs are reduced with a fixed
/// random projection. Relative error is `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn gradient_check<F>(f: F, inputs: &[Tensor], tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    let s = scalarize(&mut g, out)?;
    g.backward(s)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        worst: None,
        tol,
        passed: true,
    };
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for (j, a) in analytic.iter().enumerate() {
            let orig = probe[k].data()[j];
            probe[k].data_mut()[j] = orig + FD_STEP;
            let up = evaluate(&f, &probe)?;
            probe[k].data_mut()[j] = orig - FD_STEP;
            let down = evaluate(&f, &probe)?;
            probe[k].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((k, j));
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
