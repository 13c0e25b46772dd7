use crate::autodiff::{Elem, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one moment pair per stored parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<E> {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor<E>>,
    pub v: Vec<Tensor<E>>,
}

impl<E: Elem> Adam<E> {
    /// Zero moments shaped like every parameter in `store`.
    pub fn new(store: &ParamStore<E>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        Self {
            config,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. Parameters without a gradient entry are left alone (their
    /// moments do not decay either). A non-finite gradient aborts before
    /// anything changes.
    pub fn step(&mut self, store: &mut ParamStore<E>, grads: &[(ParamId, Tensor<E>)], lr: f64) -> Result<()> {
        for (id, g) in grads {
            if !g.is_finite() {
                return Err(Error::NanGradient(store.get(*id).name.clone()));
            }
            let want = store.value(*id).shape();
            if g.shape() != want {
                return Err(Error::shape("adam_step", want, g.shape()));
            }
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.t as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2, eps) = (E::c(beta1), E::c(beta2), E::c(eps));
        let (one_b1, one_b2) = (E::c(1.0 - beta1), E::c(1.0 - beta2));
        let step = E::c(lr / bc1);
        let inv_sqrt_bc2 = E::c(1.0 / bc2.sqrt());
        for (id, g) in grads {
            if !store.get(*id).trainable {
                continue;
            }
            let i = id.index();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.value_mut(*id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p = *p - step * *m / ((*v).sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

/// Step learning-rate schedule: `lr` before `decay_step`, `lr / factor` from then on.
pub fn lr_at(step: usize, lr: f64, decay_step: usize, decay_factor: f64) -> f64 {
    if step < decay_step {
        lr
    } else {
        lr / decay_factor
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<E: Elem>(grads: &mut [(ParamId, Tensor<E>)], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .map(|(_, g)| g.data().iter().map(|v| v.f64() * v.f64()).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = E::c(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::full(&[1], x));
        (s, id)
    }

    fn value(s: &ParamStore<f64>, id: ParamId) -> f64 {
        s.value(id).data()[0]
    }

    #[test]
    fn converges_on_quadratic() {
        let (mut s, id) = single(5.0);
        let mut adam = Adam::new(&s, AdamConfig::default());
        for _ in 0..500 {
            let x = value(&s, id);
            adam.step(&mut s, &[(id, Tensor::full(&[1], 2.0 * x))], 0.1).unwrap();
        }
        assert!(value(&s, id).abs() < 1e-2, "x = {}", value(&s, id));
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.0, -0.02, 1e4] {
            let (mut s, id) = single(1.0);
            let mut adam = Adam::new(&s, AdamConfig::default());
            adam.step(&mut s, &[(id, Tensor::full(&[1], g))], 0.01).unwrap();
            let moved = value(&s, id) - 1.0;
            assert!((moved + 0.01 * f64::signum(g)).abs() < 1e-6, "{moved}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = single(2.5);
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.step(&mut s, &[(id, Tensor::full(&[1], 0.0))], 0.1).unwrap();
        assert_eq!(value(&s, id), 2.5);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn nan_gradient_names_parameter_and_changes_nothing() {
        let mut s = ParamStore::new();
        let a = s.add("layer.a", Tensor::full(&[2], 1.0));
        let b = s.add("layer.b", Tensor::full(&[1], 1.0));
        let mut adam = Adam::new(&s, AdamConfig::default());
        let grads = [(a, Tensor::full(&[2], 1.0)), (b, Tensor::full(&[1], f64::NAN))];
        match adam.step(&mut s, &grads, 0.1) {
            Err(Error::NanGradient(name)) => assert_eq!(name, "layer.b"),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.value(a).data(), &[1.0, 1.0]);
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn frozen_parameters_stay_put() {
        let mut s = ParamStore::new();
        let id = s.add("enc.w", Tensor::full(&[1], 1.0));
        s.set_trainable_prefix("enc.", false);
        let mut adam = Adam::new(&s, AdamConfig::default());
        adam.step(&mut s, &[(id, Tensor::full(&[1], 1.0))], 0.1).unwrap();
        assert_eq!(value(&s, id), 1.0);
    }

    #[test]
    fn schedule_decays_once() {
        assert_eq!(lr_at(0, 1e-4, 250_000, 10.0), 1e-4);
        assert_eq!(lr_at(249_999, 1e-4, 250_000, 10.0), 1e-4);
        assert!((lr_at(250_000, 1e-4, 250_000, 10.0) - 1e-5).abs() < 1e-20);
        let lrs: Vec<f64> = (0..1000).map(|s| lr_at(s, 1.0, 300, 10.0)).collect();
        let mut distinct = lrs.clone();
        distinct.dedup();
        assert_eq!(distinct, vec![1.0, 0.1]);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut g = vec![
            (ParamId(0), Tensor::<f64>::from_f64(&[2], &[3.0, 0.0]).unwrap()),
            (ParamId(1), Tensor::from_f64(&[1], &[4.0]).unwrap()),
        ];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0].1.data()[0] - 0.6).abs() < 1e-12);
        assert!((g[1].1.data()[0] - 0.8).abs() < 1e-12);
        let n2 = clip_global_norm(&mut g, 5.0);
        assert!((n2 - 1.0).abs() < 1e-12);
        assert!((g[1].1.data()[0] - 0.8).abs() < 1e-12);
    }
}
