use super::{Graph, NumericsError, Tensor, Var};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// `max_i |analytic_i − numeric_i|` divided by the largest gradient
    /// magnitude of either estimate (floored at `1e-12`).
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub analytic: Tensor,
    pub numeric: Tensor,
}

/// Checks the gradient of a scalar function built on a [`Graph`] at `point`.
///
/// `f` receives a fresh graph and the input variable and must return a
/// scalar. The numeric estimate is `(f(x + h·eᵢ) − f(x − h·eᵢ)) / (2h)`.
pub fn finite_diff_check<F>(f: F, point: &Tensor, h: f64) -> Result<GradCheck, NumericsError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, NumericsError>,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut g = Graph::new();
    let x = g.param(point.clone())?;
    let root = f(&mut g, x)?;
    let grads = g.backward(root)?;
    let analytic = match grads.get(x) {
        Some(t) => t.clone(),
        None => Tensor::zeros(point.shape().to_vec())?,
    };

    let eval = |data: Vec<f64>| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(point.shape().to_vec(), data)?)?;
        let root = f(&mut g, x)?;
        let value = g.value(root)?;
        value.item().ok_or(NumericsError::NonScalarRoot {
            shape: value.shape().to_vec(),
        })
    };

    let mut numeric = Vec::with_capacity(point.numel());
    for i in 0..point.numel() {
        let mut plus = point.data().to_vec();
        let mut minus = point.data().to_vec();
        plus[i] += h;
        minus[i] -= h;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }
    let numeric = Tensor::new(point.shape().to_vec(), numeric)?;

    let max_abs_error = analytic.max_abs_diff(&numeric).unwrap_or(f64::INFINITY);
    let scale = analytic
        .data()
        .iter()
        .chain(numeric.data())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    Ok(GradCheck {
        max_rel_error: max_abs_error / scale,
        max_abs_error,
        analytic,
        numeric,
    })
}
