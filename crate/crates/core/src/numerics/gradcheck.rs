//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward passes, so it is independent
//! of every backward rule on the tape.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor2D;
use crate::error::Result;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(tensor index, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, tensor: usize, idx: usize, analytic: f64, numeric: f64) {
        let rel = relative_error(analytic, numeric);
        self.checked += 1;
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = Some((tensor, idx, analytic, numeric));
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

fn scalar(g: &Graph, v: Var) -> f64 {
    g.value(v).sum()
}

/// Checks d(loss)/d(input) for every entry of every input tensor. `build`
/// receives one leaf per input and returns the loss node (summed if not 1x1).
pub fn check_inputs<F>(inputs: &[Tensor2D], eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss);

    let eval = |perturbed: &[Tensor2D]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.input(t.clone())).collect();
        let l = build(&mut g, &vars)?;
        Ok(scalar(&g, l))
    };

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor2D> = inputs.to_vec();
    for (ti, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor2D::zeros(inputs[ti].rows(), inputs[ti].cols()));
        for idx in 0..inputs[ti].len() {
            let orig = inputs[ti].data()[idx];
            work[ti].data_mut()[idx] = orig + eps;
            let plus = eval(&work)?;
            work[ti].data_mut()[idx] = orig - eps;
            let minus = eval(&work)?;
            work[ti].data_mut()[idx] = orig;
            report.record(ti, idx, analytic.data()[idx], (plus - minus) / (2.0 * eps));
        }
    }
    Ok(report)
}

/// Checks d(loss)/d(parameter) for the listed parameters. At most
/// `max_per_param` entries are probed per tensor, spread evenly over it.
pub fn check_params<F>(
    store: &ParamStore,
    ids: &[ParamId],
    eps: f64,
    max_per_param: usize,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let grads = g.backward(loss);
    let mut analytic = store.clone();
    analytic.zero_grad();
    g.accumulate_param_grads(&grads, &mut analytic, 1.0);

    let mut work = store.clone();
    let mut report = GradCheckReport::default();
    for (ti, &id) in ids.iter().enumerate() {
        let n = store.value(id).len();
        let stride = n.div_ceil(max_per_param.max(1)).max(1);
        for idx in (0..n).step_by(stride) {
            let orig = store.value(id).data()[idx];
            work.value_mut(id).data_mut()[idx] = orig + eps;
            let mut gp = Graph::new();
            let lp = build(&mut gp, &work)?;
            let plus = scalar(&gp, lp);
            work.value_mut(id).data_mut()[idx] = orig - eps;
            let mut gm = Graph::new();
            let lm = build(&mut gm, &work)?;
            let minus = scalar(&gm, lm);
            work.value_mut(id).data_mut()[idx] = orig;
            report.record(ti, idx, analytic.get(id).grad.data()[idx], (plus - minus) / (2.0 * eps));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // d/dx of x·x is 2x; detach breaks the analytic path on one factor.
        let x = Tensor2D::from_vec(1, 2, vec![0.5, -1.5]).unwrap();
        let good = check_inputs(&[x.clone()], 1e-5, |g, v| {
            let p = g.mul(v[0], v[0])?;
            Ok(g.sum_all(p))
        })
        .unwrap();
        assert!(good.max_rel_error < 1e-8);
        let bad = check_inputs(&[x], 1e-5, |g, v| {
            let d = g.detach(v[0]);
            let p = g.mul(v[0], d)?;
            Ok(g.sum_all(p))
        })
        .unwrap();
        assert!(bad.max_rel_error > 0.4);
    }
}
