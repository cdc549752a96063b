use super::{GradError, Tensor};

/// Adam hyperparameters. The stability constant is fixed at 1e-8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn new(step_size: f64, beta1: f64, beta2: f64) -> Self {
        AdamHyper {
            step_size,
            beta1,
            beta2,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(params: &[Tensor], hyper: AdamHyper) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            t: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update. `maximize` negates the gradients (ascent).
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    maximize: bool,
) -> Result<(), GradError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(GradError::Dimension(format!(
            "adam_step: {} params, {} grads, {} states",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(GradError::Dimension(format!(
                "adam_step: param shape {:?} vs grad shape {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.t += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params[i].data_mut();
        for (j, &graw) in grads[i].data().iter().enumerate() {
            let g = if maximize { -graw } else { graw };
            m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g;
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= h.step_size * m_hat / (v_hat.sqrt() + h.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_step_size_times_sign() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0])];
        let grads = vec![Tensor::vector(vec![0.3, -7.0])];
        let mut state = AdamState::new(&params, AdamHyper::new(0.01, 0.9, 0.999));
        adam_step(&mut params, &grads, &mut state, false).unwrap();
        // Bias-corrected m/sqrt(v) is g/|g| on the first step, up to epsilon.
        assert!((params[0].data()[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((params[0].data()[1] - (-2.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::vector(vec![0.5, -0.5, 3.0])];
        let grads = vec![Tensor::zeros(vec![3])];
        let mut state = AdamState::new(&params, AdamHyper::new(0.1, 0.9, 0.999));
        for _ in 0..25 {
            adam_step(&mut params, &grads, &mut state, false).unwrap();
        }
        assert_eq!(params[0].data(), &[0.5, -0.5, 3.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::vector(vec![1.0])];
        let grads = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut state = AdamState::new(&params, AdamHyper::new(0.1, 0.9, 0.999));
        assert!(adam_step(&mut params, &grads, &mut state, false).is_err());
    }

    #[test]
    fn maximize_ascends_quadratic() {
        // f(x) = -(x-3)^2 has maximum at 3; ascend with maximize=true.
        let mut params = vec![Tensor::vector(vec![0.0])];
        let mut state = AdamState::new(&params, AdamHyper::new(0.05, 0.9, 0.999));
        for _ in 0..2000 {
            let x = params[0].data()[0];
            let grads = vec![Tensor::vector(vec![-2.0 * (x - 3.0)])];
            adam_step(&mut params, &grads, &mut state, true).unwrap();
        }
        assert!((params[0].data()[0] - 3.0).abs() < 1e-2);
    }
}
