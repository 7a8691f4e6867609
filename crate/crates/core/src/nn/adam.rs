use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias-corrected moments, one moment buffer per parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Moments shaped after `params`.
    pub fn new(params: &[&[T]]) -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn update(&mut self, params: Vec<&mut [T]>, grads: &[&[T]], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed shape");
        assert_eq!(grads.len(), self.m.len(), "gradient list does not match parameters");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let step_size = T::lit(lr / bc1);
        let (inv_bc2, eps) = (T::lit(1.0 / bc2), T::lit(self.eps));
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0f64, -2.0, 3.0];
        let mut adam = Adam::new(&[&p]);
        for _ in 0..10 {
            adam.update(vec![&mut p], &[&[0.0, 0.0, 0.0]], 0.1);
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let g = [0.5f64, -3.0, 1e-3];
        let mut p = vec![0.0f64; 3];
        let mut adam = Adam::new(&[&p]);
        adam.update(vec![&mut p], &[&g], 0.025);
        for (pi, gi) in p.iter().zip(g) {
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
            let want = -0.025 * gi / (gi.abs() + 1e-8);
            assert!((pi - want).abs() < 1e-15);
            assert!((pi.abs() - 0.025).abs() < 0.025 * 1e-5);
        }
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![0.3f32, 0.7];
            let mut adam = Adam::new(&[&p]);
            for i in 0..50 {
                let g = [p[0] - 1.0 + i as f32 * 0.01, p[1] * 2.0];
                adam.update(vec![&mut p], &[&g], 0.01);
            }
            p
        };
        assert_eq!(run(), run());
    }
}
