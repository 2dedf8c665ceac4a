use crate::tensor::{GradBuffer, ParamGroup, ParamStore};
use crate::{Error, Result};

/// Adam with bias correction and one learning rate per parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr_backbone: f64,
    pub lr_head: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr_backbone: f64, lr_head: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        Self { lr_backbone, lr_head, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for &id in &ids {
            if grads.get(id).iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!("non-finite gradient for {}", store.name(id))));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in ids {
            let lr = match store.group(id) {
                ParamGroup::Backbone => self.lr_backbone,
                ParamGroup::Head => self.lr_head,
            };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let theta = store.get_mut(id).data_mut();
            for (((x, &g), m), v) in theta.iter_mut().zip(grads.get(id)).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(x: f64, group: ParamGroup) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::new(vec![1], vec![x]).unwrap(), group).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = scalar_store(0.7, ParamGroup::Head);
        let mut adam = Adam::new(&s, 1.0, 1.0);
        let zero = GradBuffer::zeros_like(&s);
        adam.step(&mut s, &zero).unwrap();
        assert_eq!(s.get(s.lookup("x").unwrap()).data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr_and_groups_differ() {
        for (group, lr) in [(ParamGroup::Backbone, 3e-5), (ParamGroup::Head, 1e-4)] {
            let mut s = scalar_store(1.0, group);
            let id = s.lookup("x").unwrap();
            let mut g = GradBuffer::zeros_like(&s);
            g.add(id, &[1.0]);
            let mut adam = Adam::new(&s, 3e-5, 1e-4);
            adam.step(&mut s, &g).unwrap();
            assert!((1.0 - s.get(id).data()[0] - lr / (1.0 + 1e-8)).abs() < 1e-15);
        }
    }

    #[test]
    fn nan_aborts() {
        let mut s = scalar_store(1.0, ParamGroup::Head);
        let mut g = GradBuffer::zeros_like(&s);
        g.add(s.lookup("x").unwrap(), &[f64::NAN]);
        let err = Adam::new(&s, 1e-3, 1e-3).step(&mut s, &g).unwrap_err();
        assert!(err.to_string().contains("x"));
    }
}
