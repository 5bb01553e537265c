use super::{Result, Tensor, TensorError};

/// Adam moments and hyperparameters for an ordered parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new(params: &[&Tensor], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update over `params` (which must all carry a
/// gradient). Gradients are cleared afterwards.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(TensorError::State(format!(
            "optimizer tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.grad.is_none() {
            return Err(TensorError::State(format!("parameter {i} has no gradient")));
        }
        if p.shape() != state.m[i].shape() || p.shape() != state.v[i].shape() {
            return Err(TensorError::State(format!(
                "parameter {i} has shape {:?}, moments have {:?}",
                p.shape(),
                state.m[i].shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad.take().expect("checked above");
        let data = p.data_mut();
        for (((x, mi), vi), gi) in data.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(&g) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(value: f64, grad: f64) -> Tensor {
        let mut t = Tensor::full(&[4], value);
        t.grad = Some(vec![grad; 4]);
        t
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = with_grad(0.5, 1.0);
        let mut st = AdamState::new(&[&p], 1e-4, 0.9, 0.999, 1e-8);
        adam_step(&mut [&mut p], &mut st).unwrap();
        for &x in p.data() {
            let delta = x - 0.5;
            assert!((delta + 1e-4).abs() < 1e-10, "delta {delta}");
        }
        assert!(p.grad.is_none());
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = with_grad(0.5, 0.0);
        let mut st = AdamState::new(&[&p], 1e-4, 0.9, 0.999, 1e-8);
        adam_step(&mut [&mut p], &mut st).unwrap();
        assert!(p.data().iter().all(|&x| x == 0.5));
        assert_eq!(st.t, 1);
    }

    #[test]
    fn constant_gradient_gives_constant_steps() {
        let lr = 1e-4;
        let mut p = with_grad(0.0, 0.3);
        let mut st = AdamState::new(&[&p], lr, 0.9, 0.999, 1e-8);
        adam_step(&mut [&mut p], &mut st).unwrap();
        let d1 = p.data()[0];
        p.grad = Some(vec![0.3; 4]);
        adam_step(&mut [&mut p], &mut st).unwrap();
        let d2 = p.data()[0] - d1;
        assert!((d2.abs() - d1.abs()).abs() < 1e-6 * lr);
    }

    #[test]
    fn missing_gradient_is_state_error() {
        let mut p = Tensor::zeros(&[2]);
        let mut st = AdamState::new(&[&p], 1e-3, 0.9, 0.999, 1e-8);
        assert!(matches!(
            adam_step(&mut [&mut p], &mut st),
            Err(TensorError::State(_))
        ));
        assert_eq!(st.t, 0);
    }
}
