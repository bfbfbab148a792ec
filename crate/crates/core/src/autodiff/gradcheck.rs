use super::{Graph, Tensor, TensorError, Var};

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares backward gradients of a scalar function against central finite
/// differences `(f(x+eps) - f(x-eps)) / 2eps`, element by element, and returns
/// the largest relative error.
pub fn grad_check<Fun>(f: Fun, inputs: &[Tensor<f64>], eps: f64) -> Result<f64, TensorError>
where
    Fun: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for (e, &orig) in t.data().iter().enumerate() {
            probe[ti].data_mut()[e] = orig + eps;
            let up = eval(&probe)?;
            probe[ti].data_mut()[e] = orig - eps;
            let down = eval(&probe)?;
            probe[ti].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[ti][e], numeric));
        }
    }
    Ok(worst)
}
