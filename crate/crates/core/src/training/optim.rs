use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Cosine annealing from `lr_max` at `t = 0` to `lr_min` at `t = total`.
pub fn cosine_lr(t: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::contract("cosine_lr", "total steps must be positive"));
    }
    if t > total {
        return Err(Error::contract("cosine_lr", format!("step {t} beyond {total}")));
    }
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * t as f64 / total as f64).cos()))
}

/// Bias-corrected Adam with per-name moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Adam<T> {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor<T>, &Tensor<T>)> {
        Some((self.m.get(name)?, self.v.get(name)?))
    }

    /// Apply one update. Every gradient must match its parameter's shape
    /// and be finite; otherwise nothing is modified.
    pub fn update(
        &mut self,
        params: &mut BTreeMap<String, Tensor<T>>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr: f64,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::contract("adam", format!("gradient for unknown parameter '{name}'")))?;
            if p.shape() != g.shape() {
                return Err(Error::dim("adam", format!("'{name}': parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite { op: "adam gradient" });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        let one = T::one();
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mh = *mv / c1;
                let vh = *vv / c2;
                *pv = *pv - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(name: &str, v: &[f64]) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([(name.to_string(), Tensor::from_f64(&[v.len()], v).unwrap())])
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0, 10, 2e-4, 1e-6).unwrap(), 2e-4);
        assert!((cosine_lr(10, 10, 2e-4, 1e-6).unwrap() - 1e-6).abs() < 1e-18);
        assert!((cosine_lr(5, 10, 2e-4, 0.0).unwrap() - 1e-4).abs() < 1e-18);
        assert!(cosine_lr(0, 0, 1.0, 0.0).is_err());
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = one("w", &[1.0, -2.0]);
        let before = p.clone();
        let mut adam = Adam::new();
        adam.update(&mut p, &one("w", &[0.0, 0.0]), 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = one("w", &[0.0, 0.0, 0.0]);
        let mut adam = Adam::new();
        adam.update(&mut p, &one("w", &[3.0, -0.01, 3.0]), 1e-3).unwrap();
        let d = p["w"].data();
        assert!((d[0] + 1e-3).abs() < 1e-9 && (d[1] - 1e-3).abs() < 1e-8);
        assert_eq!(d[0], d[2]);
    }

    #[test]
    fn nan_gradient_aborts_without_change() {
        let mut p = one("w", &[1.0]);
        let mut adam = Adam::new();
        assert!(matches!(
            adam.update(&mut p, &one("w", &[f64::NAN]), 0.1),
            Err(Error::NonFinite { .. })
        ));
        assert_eq!(adam.step, 0);
        assert_eq!(p["w"].data(), &[1.0]);
    }

    proptest! {
        #[test]
        fn negated_gradients_negate_updates(g in prop::collection::vec(-5.0f64..5.0, 1..8), steps in 1usize..4) {
            let n = g.len();
            let (mut a, mut b) = (one("w", &vec![0.0; n]), one("w", &vec![0.0; n]));
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            let (mut oa, mut ob) = (Adam::new(), Adam::new());
            for _ in 0..steps {
                oa.update(&mut a, &one("w", &g), 1e-2).unwrap();
                ob.update(&mut b, &one("w", &neg), 1e-2).unwrap();
            }
            for (x, y) in a["w"].data().iter().zip(b["w"].data()) {
                prop_assert_eq!(*x, -*y);
            }
        }
    }
}
