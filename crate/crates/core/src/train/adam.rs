use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::model::Transformer;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// Parameters plus Adam moments. Moments mirror parameter shapes.
#[derive(Clone, Debug)]
pub struct TrainState<F> {
    pub model: Transformer<F>,
    pub adam: AdamConfig,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: u64,
    pub seed: u64,
}

impl<F: Scalar> TrainState<F> {
    pub fn new(model: Transformer<F>, adam: AdamConfig, seed: u64) -> Self {
        let zeros: Vec<Vec<F>> = model
            .params()
            .iter()
            .map(|(_, t)| vec![F::zero(); t.numel()])
            .collect();
        Self {
            model,
            adam,
            m: zeros.clone(),
            v: zeros,
            step: 0,
            seed,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[F] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[F] {
        &self.v[i]
    }
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Scalar>(grads: &mut [Vec<F>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = F::of(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// One bias-corrected Adam update; increments the step counter.
pub fn adam_step<F: Scalar>(state: &mut TrainState<F>, grads: &[Option<Vec<F>>], lr: f64) -> Result<()> {
    let n = state.model.params().len();
    if grads.len() != n {
        return Err(Error::Contract(format!("{} gradients for {n} parameters", grads.len())));
    }
    if let Some(i) = grads.iter().position(Option::is_none) {
        return Err(Error::Contract(format!(
            "missing gradient for {}",
            state.model.params().names()[i]
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let AdamConfig { beta1, beta2, eps } = state.adam;
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);
    let (b1, b2) = (F::of(beta1), F::of(beta2));
    let (one_b1, one_b2) = (F::of(1.0 - beta1), F::of(1.0 - beta2));
    let (inv_bc1, inv_bc2) = (F::of(1.0 / bc1), F::of(1.0 / bc2));
    let (lr, eps) = (F::of(lr), F::of(eps));
    for (i, g) in grads.iter().enumerate() {
        let g = g.as_ref().expect("checked above");
        let p = state.model.params_mut().get_mut(i).data_mut();
        if g.len() != p.len() {
            return Err(Error::Contract(format!("gradient {i} has the wrong size")));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + one_b1 * g[j];
            v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
            let mhat = m[j] * inv_bc1;
            let vhat = v[j] * inv_bc2;
            p[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
