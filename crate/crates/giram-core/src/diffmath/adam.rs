use indexmap::IndexMap;

use super::graph::GradMap;
use super::params::ParameterSet;
use crate::error::{Error, Result};

/// Adam optimizer state: per-parameter first/second moments plus the shared
/// step counter and hyperparameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }
}

/// One Adam update over every parameter present in `grads`. Parameters
/// without a gradient are left untouched (this is how frozen tables stay
/// bit-identical).
pub fn adam_step(params: &mut ParameterSet, grads: &GradMap, state: &mut AdamState) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let names: Vec<String> = grads.iter().map(|(n, _)| n.clone()).collect();
    for name in names {
        let g = grads.get(&name).unwrap();
        if !g.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for parameter {name:?}"
            )));
        }
        let p = params
            .get_mut(&name)
            .ok_or_else(|| Error::Shape(format!("gradient for unknown parameter {name:?}")))?;
        if p.len() != g.len() {
            return Err(Error::Shape(format!(
                "gradient shape mismatch for {name:?}"
            )));
        }
        let n = p.len();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let pd = p.data_mut();
        let gd = g.data();
        for i in 0..n {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gd[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gd[i] * gd[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            pd[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::tensor::Tensor;

    fn scalar_grads(name: &str, g: f64) -> GradMap {
        let mut m = GradMap::default();
        m.insert(name.to_string(), Tensor::scalar(g));
        m
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = ParameterSet::new(0);
        p.set("x", Tensor::scalar(1.5));
        let mut st = AdamState::new(0.1);
        adam_step(&mut p, &scalar_grads("x", 0.0), &mut st).unwrap();
        assert_eq!(p.get("x").unwrap().item(), 1.5);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // Closed form at t=1: update = lr * g/|g| (up to eps).
        let mut p = ParameterSet::new(0);
        p.set("x", Tensor::scalar(1.0));
        let mut st = AdamState::new(0.1);
        adam_step(&mut p, &scalar_grads("x", 1.0), &mut st).unwrap();
        let got = p.get("x").unwrap().item();
        assert!((got - 0.9).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn deterministic_given_identical_state() {
        let run = || {
            let mut p = ParameterSet::new(3);
            p.init_matrix("w", 3, 3);
            let mut st = AdamState::new(0.01);
            for step in 0..5 {
                let g: Vec<f64> = (0..9).map(|i| ((i + step) as f64).sin()).collect();
                let mut gm = GradMap::default();
                gm.insert("w".into(), Tensor::from_vec(&[3, 3], g).unwrap());
                adam_step(&mut p, &gm, &mut st).unwrap();
            }
            p.get("w").unwrap().data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = ParameterSet::new(0);
        p.set("bad", Tensor::scalar(1.0));
        let mut st = AdamState::new(0.1);
        let err = adam_step(&mut p, &scalar_grads("bad", f64::NAN), &mut st).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }
}
