use super::{DiffError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are allocated lazily on the first
/// step and must keep the same parameter order afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), DiffError> {
        if params.len() != grads.len() {
            return Err(DiffError::ShapeMismatch(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(DiffError::ShapeMismatch(format!(
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(DiffError::ShapeMismatch(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                let mi = beta1 * m.data()[i] + (1.0 - beta1) * gi;
                let vi = beta2 * v.data()[i] + (1.0 - beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                pd[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.0]);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut [&mut p], &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 3.0]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Tensor::vector(vec![0.0, 0.0, 0.0]);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut [&mut p], &[Tensor::vector(vec![0.5, -3.0, 1e-2])]).unwrap();
        for (v, s) in p.data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((v - s * 1e-3).abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn identical_state_gives_identical_results() {
        let start = Tensor::vector(vec![0.1, 0.2]);
        let g = Tensor::vector(vec![0.3, -0.7]);
        let mut opt_a = Adam::new(AdamConfig::default());
        let mut a = start.clone();
        opt_a.step(&mut [&mut a], &[g.clone()]).unwrap();
        let mut opt_b = opt_a.clone();
        let mut b = a.clone();
        opt_a.step(&mut [&mut a], &[g.clone()]).unwrap();
        opt_b.step(&mut [&mut b], &[g]).unwrap();
        assert_eq!(a, b);
        assert_eq!(opt_a, opt_b);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = Tensor::vector(vec![0.0; 3]);
        let mut opt = Adam::new(AdamConfig::default());
        assert!(opt.step(&mut [&mut p], &[Tensor::zeros(&[2])]).is_err());
    }
}
