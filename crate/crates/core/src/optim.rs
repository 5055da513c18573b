//! Nesterov-momentum SGD with L2 weight decay folded into the gradient.

use std::sync::Arc;

use crate::error::Result;
use crate::nn::ParamVector;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct SgdState<F> {
    pub momentum_buffer: ParamVector<F>,
    pub momentum_coeff: F,
    pub weight_decay: F,
    pub nesterov: bool,
}

impl<F: Real> SgdState<F> {
    pub fn new(template: &ParamVector<F>, momentum_coeff: F, weight_decay: F, nesterov: bool) -> Self {
        Self {
            momentum_buffer: ParamVector::zeros(Arc::clone(template.layout())),
            momentum_coeff,
            weight_decay,
            nesterov,
        }
    }

    pub fn zero_buffer(&mut self) {
        self.momentum_buffer.values_mut().fill(F::zero());
    }
}

/// One optimizer step, in place:
///
/// ```text
/// g      <- grad + weight_decay * params
/// buffer <- mu * buffer + g
/// params <- params - lr * (g + mu * buffer)      (Nesterov)
/// params <- params - lr * buffer                 (plain momentum)
/// ```
pub fn sgd_step<F: Real>(
    params: &mut ParamVector<F>,
    grad: &ParamVector<F>,
    state: &mut SgdState<F>,
    lr: F,
) -> Result<()> {
    params.check_layout(grad)?;
    params.check_layout(&state.momentum_buffer)?;
    let mu = state.momentum_coeff;
    let wd = state.weight_decay;
    let buf = state.momentum_buffer.values_mut();
    let pv = params.values_mut();
    for ((p, &g), b) in pv.iter_mut().zip(grad.values()).zip(buf.iter_mut()) {
        let g = g + wd * *p;
        *b = mu * *b + g;
        let update = if state.nesterov { g + mu * *b } else { *b };
        *p = *p - lr * update;
    }
    Ok(())
}

/// Replaces the training iterate by the averaged parameters and zeroes the
/// momentum buffer; the once-per-epoch bootstrap ablation.
pub fn bootstrap_swap<F: Real>(
    params: &mut ParamVector<F>,
    ema_params: &ParamVector<F>,
    state: &mut SgdState<F>,
) -> Result<()> {
    params.check_layout(ema_params)?;
    params
        .values_mut()
        .copy_from_slice(ema_params.values());
    state.zero_buffer();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{ParamLayout, ParamName};

    fn scalar_param(v: f64) -> ParamVector<f64> {
        let layout = Arc::new(ParamLayout::new(vec![(0, ParamName::Weight, 1)]));
        ParamVector::from_values(layout, vec![v]).unwrap()
    }

    #[test]
    fn plain_sgd_when_momentum_and_decay_are_zero() {
        let mut p = scalar_param(1.0);
        let g = scalar_param(0.25);
        let mut st = SgdState::new(&p, 0.0, 0.0, true);
        sgd_step(&mut p, &g, &mut st, 0.1).unwrap();
        assert!((p.values()[0] - (1.0 - 0.1 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_zero_buffer_is_fixed_point() {
        let mut p = scalar_param(3.0);
        let g = scalar_param(0.0);
        let mut st = SgdState::new(&p, 0.9, 0.0, true);
        sgd_step(&mut p, &g, &mut st, 0.5).unwrap();
        assert_eq!(p.values()[0], 3.0);
    }

    #[test]
    fn two_nesterov_steps_match_hand_unrolled_oracle() {
        // 1-D quadratic f(x) = x^2 / 2, grad = x; mu = 0.9, lr = 0.1.
        let mu = 0.9;
        let lr = 0.1;
        let mut x = 2.0f64;
        let mut b = 0.0f64;
        let mut oracle_x = x;
        let mut oracle_b = b;
        let mut p = scalar_param(x);
        let mut st = SgdState::new(&p, mu, 0.0, true);
        for _ in 0..2 {
            // hand unrolled
            let g = oracle_x;
            oracle_b = mu * oracle_b + g;
            oracle_x -= lr * (g + mu * oracle_b);

            let grad = scalar_param(p.values()[0]);
            sgd_step(&mut p, &grad, &mut st, lr).unwrap();
            x = p.values()[0];
            b = st.momentum_buffer.values()[0];
        }
        assert!((x - oracle_x).abs() < 1e-12);
        assert!((b - oracle_b).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_swap_copies_and_zeroes() {
        let mut p = scalar_param(1.0);
        let ema = scalar_param(1.0);
        let mut st = SgdState::new(&p, 0.9, 0.0, true);
        st.momentum_buffer.values_mut()[0] = 5.0;
        bootstrap_swap(&mut p, &ema, &mut st).unwrap();
        assert_eq!(p.values()[0], 1.0);
        assert_eq!(st.momentum_buffer.values()[0], 0.0);
    }
}
