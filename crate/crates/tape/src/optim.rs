use crate::error::{Result, TensorError};
use crate::tensor::{ParamGrads, ParamStore};

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `param` in place. `step` is 1-based.
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamMoments,
    step: u64,
    hyper: AdamHyper,
) -> Result<()> {
    if param.len() != grad.len() || state.m.len() != param.len() {
        return Err(TensorError::ShapeMismatch {
            op: "adam_step",
            lhs: vec![param.len()],
            rhs: vec![grad.len()],
        });
    }
    let AdamHyper {
        lr,
        beta1,
        beta2,
        eps,
    } = hyper;
    let c1 = 1.0 - beta1.powi(step as i32);
    let c2 = 1.0 - beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every tensor of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub hyper: AdamHyper,
    step: u64,
    moments: Vec<AdamMoments>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self {
            hyper: AdamHyper::with_lr(lr),
            step: 0,
            moments: store
                .iter()
                .map(|(_, p)| AdamMoments::zeros(p.value.len()))
                .collect(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.hyper.lr = lr;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        if grads.len() != store.len() || self.moments.len() != store.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adam",
                lhs: vec![store.len()],
                rhs: vec![grads.len()],
            });
        }
        self.step += 1;
        for (id, p) in store.iter_mut() {
            adam_step(
                p.value.data_mut(),
                grads.get(id),
                &mut self.moments[id.index()],
                self.step,
                self.hyper,
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap());
        let before = store.clone();
        let mut adam = Adam::new(&store, 1e-2);
        let grads = ParamGrads::zeros_like(&store);
        for _ in 0..10 {
            adam.step(&mut store, &grads).unwrap();
        }
        assert_eq!(store.get(id), before.get(id));
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new([2], vec![0.0, 0.0]).unwrap());
        let mut adam = Adam::new(&store, 1e-2);
        let mut grads = ParamGrads::zeros_like(&store);
        grads.get_mut(id).copy_from_slice(&[3.0, -0.25]);
        for _ in 0..50 {
            adam.step(&mut store, &grads).unwrap();
        }
        let w = store.get(id).value.data();
        assert!(w[0] < -0.4 && w[1] > 0.4, "{w:?}");
    }

    #[test]
    fn single_scalar_step_matches_hand_computation() {
        // step 1, g = 0.5: m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25
        // p = 1 - 0.1 * 0.5 / (0.5 + 1e-8)
        let mut p = [1.0];
        let mut st = AdamMoments::zeros(1);
        adam_step(&mut p, &[0.5], &mut st, 1, AdamHyper::with_lr(0.1)).unwrap();
        let expected = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((st.m[0] - 0.05).abs() < 1e-15);
        assert!((st.v[0] - 0.00025).abs() < 1e-15);

        // step 2, g = -1.0 (bias correction with t = 2)
        adam_step(&mut p, &[-1.0], &mut st, 2, AdamHyper::with_lr(0.1)).unwrap();
        let m = 0.9 * 0.05 - 0.1;
        let v = 0.999 * 0.00025 + 0.001 * 1.0;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64 * 0.999);
        let expected2 = expected - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - expected2).abs() < 1e-14);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let mut p = [1.0, 2.0];
        let mut st = AdamMoments::zeros(2);
        let err = adam_step(&mut p, &[1.0], &mut st, 1, AdamHyper::with_lr(0.1));
        assert!(matches!(err, Err(TensorError::ShapeMismatch { .. })));
    }
}
