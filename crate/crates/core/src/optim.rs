//! AdamW with decoupled weight decay. Moment buffers are keyed by parameter
//! name so the same optimizer instance can drive any parameter set whose
//! names are stable across steps.

use std::collections::HashMap;

use ndarray::Array2;

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::model::{Binding, ParamSet};

/// Collect per-parameter gradients from a backward pass, keyed by name.
/// Parameters that were frozen (or unreachable from the loss) are absent.
pub fn grads_by_name(binding: &Binding, grads: &Gradients) -> HashMap<String, Array2<f64>> {
    let mut out = HashMap::new();
    for (name, var) in binding.names() {
        if let Some(g) = grads.get(var) {
            out.insert(name.to_string(), g.clone());
        }
    }
    out
}

/// Sum gradient maps from several per-example tapes.
pub fn accumulate_grads(
    acc: &mut HashMap<String, Array2<f64>>,
    part: HashMap<String, Array2<f64>>,
) {
    for (name, g) in part {
        match acc.get_mut(&name) {
            Some(cur) => *cur += &g,
            None => {
                acc.insert(name, g);
            }
        }
    }
}

/// Scale every gradient in the map (e.g. dividing an accumulated sum by the
/// number of examples).
pub fn scale_grads(grads: &mut HashMap<String, Array2<f64>>, s: f64) {
    for g in grads.values_mut() {
        *g *= s;
    }
}

pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: HashMap<String, Array2<f64>>,
    v: HashMap<String, Array2<f64>>,
}

/// Norm gains and bias rows are excluded from weight decay, matching
/// standard transformer training practice.
fn decays(name: &str) -> bool {
    !(name.ends_with(".g") || name.ends_with(".b"))
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update using `grads` (by parameter name). Only parameters
    /// present in `grads` move. Divergence (non-finite gradient or
    /// parameter) aborts with a training error.
    pub fn step(&mut self, params: &mut ParamSet, grads: &HashMap<String, Array2<f64>>) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);

        // deterministic update order regardless of hash-map iteration
        let mut names: Vec<&String> = grads.keys().collect();
        names.sort();

        for name in names {
            let g = &grads[name];
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite gradient for {name} at step {}",
                    self.step
                )));
            }
            let p = params.get_mut(name);
            assert_eq!(p.dim(), g.dim(), "gradient shape for {name}");

            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));

            *m *= self.beta1;
            m.scaled_add(1.0 - self.beta1, g);
            *v *= self.beta2;
            ndarray::Zip::from(&mut *v).and(g).for_each(|vv, &gv| {
                *vv += (1.0 - self.beta2) * gv * gv;
            });

            let decay = if decays(name) { self.weight_decay } else { 0.0 };
            ndarray::Zip::from(&mut *p)
                .and(&*m)
                .and(&*v)
                .for_each(|pv, &mv, &vv| {
                    let m_hat = mv / bc1;
                    let v_hat = vv / bc2;
                    *pv -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + decay * *pv);
                });
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite parameter {name} after step {}",
                    self.step
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use crate::model::bind_params;
    use ndarray::array;

    fn quadratic_grads(params: &ParamSet, target: &Array2<f64>) -> HashMap<String, Array2<f64>> {
        let mut tape = Tape::new();
        let b = bind_params(&mut tape, params, &|_| true);
        let t = tape.constant(target.clone());
        let neg_t = tape.scale(t, -1.0);
        let diff = tape.add(b.var("w"), neg_t);
        let sq = tape.mul(diff, diff);
        let loss = tape.mean_all(sq);
        let grads = tape.backward(loss);
        grads_by_name(&b, &grads)
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut params = ParamSet::new();
        params.insert("w", array![[5.0, -3.0], [0.5, 2.0]]);
        let target = array![[1.0, 1.0], [1.0, 1.0]];
        let mut opt = AdamW::new(0.1, 0.0);
        for _ in 0..300 {
            let grads = quadratic_grads(&params, &target);
            opt.step(&mut params, &grads).unwrap();
        }
        for v in params.get("w").iter() {
            assert!((v - 1.0).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn first_step_size_is_lr_scaled() {
        // with bias correction the very first update moves by about lr
        // regardless of gradient magnitude
        let mut params = ParamSet::new();
        params.insert("w", array![[10.0]]);
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), array![[1234.5]]);
        let mut opt = AdamW::new(0.01, 0.0);
        opt.step(&mut params, &grads).unwrap();
        let moved = 10.0 - params.get("w")[(0, 0)];
        assert!((moved - 0.01).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn decay_is_decoupled_and_skips_gains() {
        let mut params = ParamSet::new();
        params.insert("w", array![[2.0]]);
        params.insert("ln.g", array![[2.0]]);
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), array![[0.0]]);
        grads.insert("ln.g".to_string(), array![[0.0]]);
        let mut opt = AdamW::new(0.1, 0.5);
        opt.step(&mut params, &grads).unwrap();
        // zero gradient: only decay moves the weight, the gain stays put
        let w = params.get("w")[(0, 0)];
        assert!((w - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12, "{w}");
        assert_eq!(params.get("ln.g")[(0, 0)], 2.0);
    }

    #[test]
    fn untouched_params_do_not_move() {
        let mut params = ParamSet::new();
        params.insert("a", array![[1.0]]);
        params.insert("b", array![[1.0]]);
        let mut grads = HashMap::new();
        grads.insert("a".to_string(), array![[1.0]]);
        let mut opt = AdamW::new(0.1, 0.1);
        opt.step(&mut params, &grads).unwrap();
        assert_ne!(params.get("a")[(0, 0)], 1.0);
        assert_eq!(params.get("b")[(0, 0)], 1.0);
    }

    #[test]
    fn divergence_is_reported() {
        let mut params = ParamSet::new();
        params.insert("w", array![[1.0]]);
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), array![[f64::NAN]]);
        let mut opt = AdamW::new(0.1, 0.0);
        let err = opt.step(&mut params, &grads).unwrap_err();
        assert!(matches!(err, Error::Diverged(_)));
        assert_eq!(err.exit_code(), 4);
    }
}
