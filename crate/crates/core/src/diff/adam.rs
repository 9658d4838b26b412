use indexmap::IndexMap;

use super::params::{AdamState, ParamStore};
use super::tape::Gradients;
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
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

/// One bias-corrected Adam update. Moments live in the store; parameters
/// absent from `grads` are treated as having zero gradient.
pub fn adam_step<T: Scalar>(params: &mut ParamStore<T>, grads: &Gradients<T>, cfg: &AdamConfig) {
    let state = params.adam.get_or_insert_with(|| AdamState {
        step: 0,
        first: IndexMap::new(),
        second: IndexMap::new(),
    });
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));

    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let shape = params.get(&name).expect("name from store").shape().to_vec();
        let state = params.adam.as_mut().expect("initialized above");
        let m = state
            .first
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(&shape));
        let zero;
        let g = match grads.get(&name) {
            Some(g) => g,
            None => {
                zero = Tensor::zeros(&shape);
                &zero
            }
        };
        for (mv, &gv) in m.data_mut().iter_mut().zip(g.data()) {
            *mv = b1 * *mv + (T::one() - b1) * gv;
        }
        let m = m.clone();
        let v = state
            .second
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(&shape));
        for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
        }
        let v = v.clone();
        let p = params.get_mut(&name).expect("name from store");
        for ((pv, &mv), &vv) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            let m_hat = mv / bc1;
            let v_hat = vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::params::Init;
    use crate::diff::tape::Tape;

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new(3);
        s.add("p", &[6], Init::UniformGlorot { fan_in: 1, fan_out: 1 });
        s
    }

    fn grad_sq_norm(s: &ParamStore<f64>) -> (f64, Gradients<f64>) {
        let mut tape = Tape::new();
        let p = tape.param(s, "p");
        let z = tape.constant(Tensor::zeros(&[6]));
        let l = tape.sq_dist(p, z);
        (tape.value(l).item(), tape.backward(l))
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store();
        let before = s.get("p").unwrap().clone();
        let mut g = IndexMap::new();
        g.insert("p".to_string(), Tensor::zeros(&[6]));
        adam_step(&mut s, &Gradients::from_map(g), &AdamConfig::default());
        assert_eq!(s.get("p").unwrap(), &before);
    }

    #[test]
    fn first_step_moves_lr_against_sign() {
        let mut s = store();
        let before = s.get("p").unwrap().clone();
        let g = Tensor::new(&[6], vec![0.3, -2.0, 5.0, -0.01, 1.0, -1.0]);
        let mut m = IndexMap::new();
        m.insert("p".to_string(), g.clone());
        let cfg = AdamConfig::default();
        adam_step(&mut s, &Gradients::from_map(m), &cfg);
        for ((a, b), gv) in before.data().iter().zip(s.get("p").unwrap().data()).zip(g.data()) {
            let delta = b - a;
            assert!((delta + cfg.lr * gv.signum()).abs() < 1e-8, "delta {delta}");
        }
    }

    #[test]
    fn minimizes_squared_norm() {
        let mut s = store();
        let (start, _) = grad_sq_norm(&s);
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        for _ in 0..200 {
            let (_, g) = grad_sq_norm(&s);
            adam_step(&mut s, &g, &cfg);
        }
        let (end, _) = grad_sq_norm(&s);
        // ‖p‖ shrinks at least 10×, i.e. ‖p‖² at least 100×.
        assert!(end.sqrt() * 10.0 <= start.sqrt(), "{start} -> {end}");
    }
}
