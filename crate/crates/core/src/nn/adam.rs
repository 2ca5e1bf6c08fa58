use super::params::{ParamStore, Tensor};
use crate::error::{Error, Result};

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
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected ADAM with one pair of moment buffers per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    first: ParamStore,
    second: ParamStore,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Result<Self> {
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::Config("ADAM betas must lie in [0, 1)".into()));
        }
        let zeros = |p: &ParamStore| {
            let mut z = ParamStore::new();
            for (name, t) in p.iter() {
                z.insert(name.clone(), Tensor::zeros(&t.shape));
            }
            z
        };
        Ok(Self {
            config,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        })
    }

    /// Apply one update. Gradients are checked for finiteness before any
    /// parameter is touched.
    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        for (name, g) in grads.iter() {
            if g.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("gradient of '{name}'"),
                });
            }
            let p = params.get(name)?;
            if p.data.len() != g.data.len() {
                return Err(Error::Shape(format!(
                    "gradient of '{name}' does not match its parameter"
                )));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads.iter() {
            let m = self.first.get_mut(name)?;
            for (mi, gi) in m.data.iter_mut().zip(&g.data) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            }
            let v = self.second.get_mut(name)?;
            for (vi, gi) in v.data.iter_mut().zip(&g.data) {
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
            let (m, v) = (&self.first.get(name)?.data, &self.second.get(name)?.data);
            let p = params.get_mut(name)?;
            for ((pi, mi), vi) in p.data.iter_mut().zip(m).zip(v) {
                let m_hat = mi / c1;
                let v_hat = vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![1], vec![v]).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_store(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
        for _ in 0..5 {
            adam.update(&mut p, &scalar_store(0.0)).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
        adam.update(&mut p, &scalar_store(1.0)).unwrap();
        // m̂ = 1, v̂ = 1 at t = 1.
        let want = -3e-3 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().data[0] - want).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut p = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
        let g = -0.37;
        let mut last = 0.0;
        for _ in 0..2000 {
            let before = p.get("w").unwrap().data[0];
            adam.update(&mut p, &scalar_store(g)).unwrap();
            last = p.get("w").unwrap().data[0] - before;
        }
        // Bias-corrected moments equal g and g² exactly for a constant g.
        let want = 3e-3 * 0.37 / (0.37 + 1e-8);
        assert!((last - want).abs() < 1e-12, "{last}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_store(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &p).unwrap();
        let err = adam.update(&mut p, &scalar_store(f64::NAN)).unwrap_err();
        assert!(err.to_string().contains("'w'"));
        assert_eq!(p.get("w").unwrap().data[0], 0.0);
        assert_eq!(adam.step, 0);
    }
}
