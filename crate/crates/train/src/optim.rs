use std::collections::BTreeMap;

use ppgbench_models::Tensor;

/// AdamW with decoupled weight decay applied to every parameter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// One update. Parameters without a gradient entry are left untouched.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &BTreeMap<String, Vec<f64>>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let x = &mut p.data[i];
                *x -= lr * self.weight_decay * *x;
                *x -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = BTreeMap::from([("w".to_string(), Tensor::new(vec![3], vec![1.0, -2.0, 0.5]))]);
        let g = BTreeMap::from([("w".to_string(), vec![0.3, -4.0, 0.0])]);
        let mut opt = AdamW::new(0.0);
        opt.step(&mut p, &g, 0.01);
        let w = &p["w"].data;
        assert!((w[0] - 0.99).abs() < 1e-9);
        assert!((w[1] + 1.99).abs() < 1e-9);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut p = BTreeMap::from([("w".to_string(), Tensor::new(vec![1], vec![2.0]))]);
        let g = BTreeMap::from([("w".to_string(), vec![0.0])]);
        let mut opt = AdamW::new(0.01);
        opt.step(&mut p, &g, 0.1);
        assert!((p["w"].data[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = BTreeMap::from([("w".to_string(), Tensor::new(vec![2], vec![3.0, -1.0]))]);
        let mut opt = AdamW::new(0.0);
        for _ in 0..2000 {
            let g = BTreeMap::from([("w".to_string(), p["w"].data.iter().map(|x| 2.0 * x).collect())]);
            opt.step(&mut p, &g, 0.01);
        }
        assert!(p["w"].data.iter().all(|x| x.abs() < 1e-2));
    }
}
