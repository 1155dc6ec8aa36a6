use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use crate::{Error, Matrix, Result};

/// Finite-difference step of the five-point stencil.
pub const FD_STEP: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradReport {
    /// Largest elementwise `|a - n| / max(|a|, |n|, floor)`.
    pub max_rel_err: f64,
    /// `(input, element)` where the maximum was attained.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn projected(
    op: &dyn Fn(&mut Graph, &[Var]) -> Result<Var>,
    inputs: &[Matrix],
    proj: &mut Option<Matrix>,
    seed: u64,
) -> Result<(Graph, Var, Vec<Var>)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|m| g.input(m.clone())).collect();
    let out = op(&mut g, &vars)?;
    let ov = g.value(out);
    if !ov.is_finite() {
        return Err(Error::NonFinite("grad_check: non-finite op output".into()));
    }
    if ov.shape() == [1, 1] {
        return Ok((g, out, vars));
    }
    let w = proj.get_or_insert_with(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..ov.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(ov.rows(), ov.cols(), data).expect("shape")
    });
    let w = g.constant(w.clone());
    let prod = g.mul(out, w)?;
    let total = g.sum(prod);
    Ok((g, total, vars))
}

/// Compares reverse-mode gradients of `op` with fourth-order central
/// differences.
///
/// Non-scalar outputs are reduced with a fixed random projection first.
/// Relative errors use an absolute floor of `1e-6` in the denominator so
/// that elements whose true gradient vanishes compare by absolute error.
pub fn grad_check<F>(op: F, inputs: &[Matrix], tolerance: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_with(op, inputs, tolerance, 1e-6, 0x9E37)
}

pub fn grad_check_with<F>(op: F, inputs: &[Matrix], tolerance: f64, floor: f64, seed: u64) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut proj = None;
    let (g, root, vars) = projected(&op, inputs, &mut proj, seed)?;
    let grads = g.backward(root)?;
    let mut report = GradReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        tolerance,
        passed: true,
    };
    let mut work = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, &inputs[i]);
        for k in 0..inputs[i].len() {
            let x = inputs[i].data()[k];
            let mut at = |offset: f64| -> Result<f64> {
                work[i].data_mut()[k] = x + offset;
                let (gg, r, _) = projected(&op, &work, &mut proj, seed)?;
                Ok(gg.scalar(r))
            };
            let h = FD_STEP;
            let numeric = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
            work[i].data_mut()[k] = x;
            let a = analytic.data()[k];
            if !(numeric.is_finite() && a.is_finite()) {
                return Err(Error::NonFinite(format!("grad_check: input {i} element {k}")));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (i, k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_err < tolerance;
    Ok(report)
}
