use std::collections::BTreeMap;

use candle_core::{backprop::GradStore, Tensor};

use crate::error::Result;
use crate::nn::ParamStore;

/// SGD with heavy-ball momentum; weight decay applies to `ParamKind::Weight` only.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: BTreeMap::new(),
        }
    }

    /// `v <- momentum * v + g (+ wd * w)`, `w <- w - lr * v`.
    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        for (name, var, kind) in store.trainable() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let w = var.as_tensor().detach();
            let mut g = g.detach();
            if kind.decays() && self.weight_decay != 0.0 {
                g = (g + (&w * self.weight_decay)?)?;
            }
            let v = match self.velocity.get(name) {
                Some(prev) => ((prev * self.momentum)? + g)?,
                None => g,
            };
            var.set(&(w - (&v * lr)?)?)?;
            self.velocity.insert(name.to_string(), v);
        }
        Ok(())
    }

    pub fn velocity(&self) -> &BTreeMap<String, Tensor> {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: BTreeMap<String, Tensor>) {
        self.velocity = velocity;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;
    use candle_core::{DType, Var};

    #[test]
    fn matches_hand_rolled_momentum_and_skips_decay_on_bias() {
        let mut store = ParamStore::new(DType::F64, 0);
        {
            let mut root = store.root();
            root.constant("w", &[1], 2.0, ParamKind::Weight).unwrap();
            root.constant("b", &[1], 2.0, ParamKind::Bias).unwrap();
        }
        let mut opt = Sgd::new(0.9, 0.1);
        let (w, b) = (
            store.get("w").unwrap().clone(),
            store.get("b").unwrap().clone(),
        );
        let value = |v: &Var| v.as_tensor().to_vec1::<f64>().unwrap()[0];
        for _ in 0..2 {
            // loss = w + b, gradient 1 for both
            let loss = (w.as_tensor() + b.as_tensor()).unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&store, &grads, 0.5).unwrap();
        }
        // w: v1 = 1 + 0.2 = 1.2, w1 = 1.4; v2 = 1.08 + 1 + 0.14 = 2.22, w2 = 0.29
        assert!((value(&w) - 0.29).abs() < 1e-12);
        // b: v1 = 1, b1 = 1.5; v2 = 1.9, b2 = 0.55
        assert!((value(&b) - 0.55).abs() < 1e-12);
    }
}
