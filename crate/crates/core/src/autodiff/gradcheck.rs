//! Central finite-difference gradient checking.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Compares the analytic gradient `f(p0).1` with central differences of
/// `f(..).0` at step `h`, returning the largest relative error over all
/// coordinates.
pub fn finite_diff_check<F>(f: F, p0: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let (_, analytic) = f(p0)?;
    let mut p = p0.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        p[i] = p0[i] + h;
        let (up, _) = f(&p)?;
        p[i] = p0[i] - h;
        let (down, _) = f(&p)?;
        p[i] = p0[i];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Gradient-checks a graph-building closure with respect to all of `inputs`.
///
/// `build` receives the inputs as parameter leaves and must return a scalar.
pub fn check_graph<B>(inputs: &[Tensor], build: B, h: f64) -> Result<f64>
where
    B: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let shapes: Vec<Vec<usize>> = inputs.iter().map(|t| t.shape().to_vec()).collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|t| t.data().iter().copied()).collect();
    let eval = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let mut vars = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for shape in &shapes {
            let n: usize = shape.iter().product();
            vars.push(g.param(Tensor::new(shape.clone(), p[offset..offset + n].to_vec())?));
            offset += n;
        }
        let root = build(&mut g, &vars)?;
        g.backward(root)?;
        let grad = vars
            .iter()
            .flat_map(|v| g.grad_or_zeros(*v).into_data())
            .collect();
        Ok((g.value(root).item(), grad))
    };
    finite_diff_check(eval, &flat, h)
}
