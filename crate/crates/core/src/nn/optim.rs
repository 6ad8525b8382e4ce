/// Heavy-ball momentum: `v <- momentum * v + g; p <- p - lr * v`.
pub fn sgd_momentum_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), velocity.len());
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

/// Rescales `grads` in place so its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(num_params: usize, lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        sgd_momentum_step(params, grads, &mut self.velocity, self.lr, self.momentum);
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn plain_sgd_without_momentum() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_momentum_step(&mut p, &[0.5, -1.0], &mut v, 0.1, 0.0);
        assert_eq!(p, vec![0.95, -1.9]);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        sgd_momentum_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.95);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn two_steps_with_constant_gradient() {
        // v1 = g, v2 = beta g + g; displacement = lr g (2 + beta).
        let (lr, beta, g) = (0.01, 0.95, 3.0);
        let mut opt = SgdMomentum::new(1, lr, beta);
        let mut p = vec![0.0];
        opt.step(&mut p, &[g]);
        opt.step(&mut p, &[g]);
        assert_abs_diff_eq!(-p[0], lr * g * (2.0 + beta), epsilon = 1e-15);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert_abs_diff_eq!(g[0], 0.6, epsilon = 1e-15);
        let mut g = vec![0.3, 0.4];
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g, vec![0.3, 0.4]);
    }
}
