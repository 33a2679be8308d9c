use std::collections::HashMap;

use super::matrix::Matrix;
use super::params::{ParamError, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction; moments are kept per parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: HashMap<String, Matrix<f64>>,
    v: HashMap<String, Matrix<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParameterStore, grads: &HashMap<String, Matrix<f64>>) -> Result<(), ParamError> {
        for (name, p) in store.iter() {
            let g = grads.get(name).ok_or_else(|| ParamError::Unknown(name.into()))?;
            if g.shape() != p.shape() {
                return Err(ParamError::Shape {
                    name: name.into(),
                    expected: p.shape(),
                    got: g.shape(),
                });
            }
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (name, p) in store.iter_mut() {
            let g = &grads[name];
            let m = self.m.entry(name.to_string()).or_insert_with(|| Matrix::zeros(p.rows(), p.cols()));
            let v = self.v.entry(name.to_string()).or_insert_with(|| Matrix::zeros(p.rows(), p.cols()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParameterStore {
        let mut s = ParameterStore::new(0);
        s.insert("x", Matrix::filled(1, 1, x)).unwrap();
        s
    }

    fn grad(g: f64) -> HashMap<String, Matrix<f64>> {
        HashMap::from([("x".to_string(), Matrix::filled(1, 1, g))])
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = scalar_store(1.5);
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            opt.step(&mut s, &grad(0.0)).unwrap();
        }
        assert_eq!(s.expect("x").get(0, 0), 1.5);
    }

    #[test]
    fn first_step_is_normalized() {
        let mut s = scalar_store(0.0);
        let cfg = AdamConfig::default();
        let mut opt = Adam::new(cfg);
        let g = 0.37;
        opt.step(&mut s, &grad(g)).unwrap();
        let expected = -cfg.lr * g / (g.abs() + cfg.eps);
        assert!((s.expect("x").get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn quadratic_converges() {
        let mut s = scalar_store(3.0);
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() });
        for _ in 0..200 {
            let x = s.expect("x").get(0, 0);
            opt.step(&mut s, &grad(2.0 * x)).unwrap();
        }
        assert!(s.expect("x").get(0, 0).abs() < 0.1);
    }
}
