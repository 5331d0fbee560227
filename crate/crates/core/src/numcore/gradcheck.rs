use crate::error::{Error, Result};
use crate::numcore::graph::{Graph, Var};
use crate::numcore::tensor::Tensor;

/// Compares autodiff gradients of a graph-built scalar function against
/// central differences.
///
/// `f` receives a fresh graph and one trainable leaf per input tensor and must
/// return a scalar node. Returns `max |analytic − numeric| / max(1, |analytic|)`
/// over every coordinate of every input.
pub fn finite_diff_check_many<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Domain {
            op: "finite_diff_check",
            detail: format!("step {h} outside [1e-7, 1e-3]"),
        });
    }

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.scalar_value(out)
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut flat = 0;
    for t in 0..inputs.len() {
        for i in 0..inputs[t].len() {
            let x0 = inputs[t].data()[i];
            work[t].data_mut()[i] = x0 + h;
            let fp = eval(&work)?;
            work[t].data_mut()[i] = x0 - h;
            let fm = eval(&work)?;
            work[t].data_mut()[i] = x0;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite {
                    op: "finite_diff_check",
                    index: flat,
                });
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[t].data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
            flat += 1;
        }
    }
    Ok(worst)
}

/// Single-input form of [`finite_diff_check_many`].
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    finite_diff_check_many(|g, vs| f(g, vs[0]), std::slice::from_ref(x), h)
}
