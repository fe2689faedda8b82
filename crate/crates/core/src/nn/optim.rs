use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

/// Adam hyper-parameters. Weight decay is decoupled: each step subtracts
/// `lr * weight_decay * param` in addition to the adaptive update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

fn check(params: &[Tensor], grads: &[Tensor]) -> Result<(), NnError> {
    if params.len() != grads.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "parameter {i}: shape {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if !g.all_finite() {
            return Err(NnError::NonFiniteGradient(i));
        }
    }
    Ok(())
}

/// One bias-corrected Adam update. Nothing is modified when any gradient is
/// non-finite.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    check(params, grads)?;
    if state.m.len() != params.len() {
        return Err(NnError::ShapeMismatch("optimizer state does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = md[i] / c1;
            let vhat = vd[i] / c2;
            pd[i] -= cfg.lr * (mhat / (vhat.sqrt() + cfg.eps) + cfg.weight_decay * pd[i]);
        }
    }
    Ok(())
}

/// Plain stochastic gradient descent with decoupled weight decay.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], lr: f64, weight_decay: f64) -> Result<(), NnError> {
    check(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * (gv + weight_decay * *pv);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let g = vec![Tensor::zeros(&[3])];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        }
        assert_eq!(p[0].data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn scalar_trace_matches_hand_recurrence() {
        // Hand-executed recurrence for two steps, x0 = 0.5, g1 = 0.2, g2 = -0.1.
        let cfg = AdamConfig { lr: 0.01, weight_decay: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = vec![Tensor::scalar(0.5)];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::scalar(0.2)], &mut st, &cfg).unwrap();
        let (m1, v1) = (0.1 * 0.2, 0.001 * 0.04);
        let x1 = 0.5 - 0.01 * ((m1 / 0.1) / ((v1 / 0.001f64).sqrt() + 1e-8) + 0.1 * 0.5);
        assert!((p[0].data()[0] - x1).abs() < 1e-15);
        adam_step(&mut p, &[Tensor::scalar(-0.1)], &mut st, &cfg).unwrap();
        let m2 = 0.9 * m1 + 0.1 * -0.1;
        let v2 = 0.999 * v1 + 0.001 * 0.01;
        let mhat = m2 / (1.0 - 0.81);
        let vhat = v2 / (1.0 - 0.999f64 * 0.999);
        let x2 = x1 - 0.01 * (mhat / (vhat.sqrt() + 1e-8) + 0.1 * x1);
        assert!((p[0].data()[0] - x2).abs() < 1e-15);
        assert_eq!(st.step, 2);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &[Tensor::scalar(f64::NAN)], &mut st, &AdamConfig::default());
        assert!(matches!(err, Err(NnError::NonFiniteGradient(0))));
        assert_eq!(p[0].data(), &[1.0]);
        assert!(sgd_step(&mut p, &[Tensor::scalar(f64::INFINITY)], 0.1, 0.0).is_err());
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let c = [1.5, -0.7, 3.0];
        let mut p = vec![Tensor::new(vec![3], vec![-2.0, 2.5, 0.1]).unwrap()];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { lr: 0.01, weight_decay: 0.0, ..Default::default() };
        for _ in 0..5000 {
            let g: Vec<f64> = p[0].data().iter().zip(c).map(|(x, ci)| 2.0 * (x - ci)).collect();
            adam_step(&mut p, &[Tensor::new(vec![3], g).unwrap()], &mut st, &cfg).unwrap();
        }
        for (x, ci) in p[0].data().iter().zip(c) {
            assert!((x - ci).abs() < 1e-3, "{x} vs {ci}");
        }
    }

    #[test]
    fn sgd_step_values() {
        let mut p = vec![Tensor::scalar(1.0)];
        sgd_step(&mut p, &[Tensor::scalar(2.0)], 0.1, 0.5).unwrap();
        assert!((p[0].data()[0] - (1.0 - 0.1 * (2.0 + 0.5))).abs() < 1e-15);
    }
}
