//! Minimal reverse-mode differentiable computation over dense f64 tensors:
//! embedding lookups, affine layers, an LSTM cell, activations, losses, and
//! Adam. Everything the trained components need, nothing more.

pub mod adam;
pub mod forward;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::grad_check;
pub use graph::{GradMap, Graph, LstmVars, Var};
pub use params::ParameterSet;
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn linear_identity_and_zero_cases() {
        let mut g = Graph::new();
        let w = g.input(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.input(Tensor::vector(vec![0.0, 0.0]));
        let x = g.input(Tensor::vector(vec![0.7, -0.2]));
        let y = g.linear(w, x, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.7, -0.2]);

        let mut g = Graph::new();
        let w = g.input(Tensor::from_vec(&[2, 2], vec![3.0, 1.0, -2.0, 4.0]).unwrap());
        let b = g.input(Tensor::vector(vec![0.5, -1.5]));
        let x = g.input(Tensor::vector(vec![0.0, 0.0]));
        let y = g.linear(w, x, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -1.5]);
    }

    #[test]
    fn linear_shape_mismatch_errors() {
        let mut g = Graph::new();
        let w = g.input(Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap());
        let x = g.input(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.matvec(w, x).is_err());
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut p = ParameterSet::new(5);
        p.init_matrix("w", 3, 3);
        p.init_zeros("b", &[3]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = randv(&mut rng, 3);
        let err = grad_check(
            |g, ps| {
                let w = g.param("w", ps)?;
                let b = g.param("b", ps)?;
                let xv = g.input(Tensor::vector(x.clone()));
                let y = g.linear(w, xv, b)?;
                Ok(g.sum_sq(y))
            },
            &p,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-5, "err = {err}");
    }

    #[test]
    fn embedding_lookup_rows_and_gradient() {
        let mut p = ParameterSet::new(6);
        p.set(
            "table",
            Tensor::from_vec(&[3, 2], vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        let mut g = Graph::new();
        let t = g.param("table", &p).unwrap();
        let r0 = g.row(t, 0).unwrap();
        assert_eq!(g.value(r0).data(), &[0.0, 0.0]);
        let r2a = g.row(t, 2).unwrap();
        let r2b = g.row(t, 2).unwrap();
        assert_eq!(g.value(r2a).data(), g.value(r2b).data());
        assert!(g.row(t, 3).is_err());

        // Gradient of sum(lookup(1)) is 1 on row 1 and 0 elsewhere.
        let mut g = Graph::new();
        let t = g.param("table", &p).unwrap();
        let r1 = g.row(t, 1).unwrap();
        let ones = g.input(Tensor::vector(vec![1.0, 1.0]));
        let s = g.dot(r1, ones).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(
            grads.get("table").unwrap().data(),
            &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]
        );
    }

    fn lstm_params(seed: u64, input: usize, hidden: usize) -> ParameterSet {
        let mut p = ParameterSet::new(seed);
        p.init_matrix("w_ih", 4 * hidden, input);
        p.init_matrix("w_hh", 4 * hidden, hidden);
        p.init_zeros("b", &[4 * hidden]);
        p
    }

    fn lstm_vars(g: &mut Graph, p: &ParameterSet) -> LstmVars {
        LstmVars {
            w_ih: g.param("w_ih", p).unwrap(),
            w_hh: g.param("w_hh", p).unwrap(),
            b: g.param("b", p).unwrap(),
        }
    }

    #[test]
    fn recurrent_zero_params_give_zero_hidden() {
        let mut p = ParameterSet::new(0);
        p.init_zeros("w_ih", &[8, 2]);
        p.init_zeros("w_hh", &[8, 2]);
        let mut pz = ParameterSet::new(0);
        pz.set("w_ih", Tensor::zeros(&[8, 2]));
        pz.set("w_hh", Tensor::zeros(&[8, 2]));
        pz.set("b", Tensor::zeros(&[8]));
        let mut g = Graph::new();
        let vars = lstm_vars(&mut g, &pz);
        let x = g.input(Tensor::vector(vec![0.0, 0.0]));
        let hs = g.lstm_sequence(&vars, &[x]).unwrap();
        assert_eq!(g.value(hs[0]).data(), &[0.0, 0.0]);
    }

    #[test]
    fn recurrent_state_carries_history() {
        let p = lstm_params(13, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let last = randv(&mut rng, 3);
        let first = randv(&mut rng, 3);

        let run = |inputs: Vec<Vec<f64>>| {
            let mut g = Graph::new();
            let vars = lstm_vars(&mut g, &p);
            let xs: Vec<Var> = inputs
                .into_iter()
                .map(|v| g.input(Tensor::vector(v)))
                .collect();
            let hs = g.lstm_sequence(&vars, &xs).unwrap();
            g.value(*hs.last().unwrap()).data().to_vec()
        };
        let short = run(vec![last.clone()]);
        let long = run(vec![first, last]);
        assert_ne!(short, long);
        assert!(short.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn recurrent_empty_sequence_errors() {
        let p = lstm_params(13, 3, 4);
        let mut g = Graph::new();
        let vars = lstm_vars(&mut g, &p);
        assert!(g.lstm_sequence(&vars, &[]).is_err());
    }

    #[test]
    fn recurrent_gradients_match_finite_differences() {
        let p = lstm_params(21, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| randv(&mut rng, 3)).collect();
        let err = grad_check(
            |g, ps| {
                let vars = LstmVars {
                    w_ih: g.param("w_ih", ps)?,
                    w_hh: g.param("w_hh", ps)?,
                    b: g.param("b", ps)?,
                };
                let inputs: Vec<Var> = xs
                    .iter()
                    .map(|v| g.input(Tensor::vector(v.clone())))
                    .collect();
                let hs = g.lstm_sequence(&vars, &inputs)?;
                Ok(g.sum_sq(*hs.last().unwrap()))
            },
            &p,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn softmax_symmetry_shift_and_closed_form() {
        let u = forward::softmax(&[0.0, 0.0, 0.0]);
        for v in &u {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let a = forward::softmax(&[0.3, -1.0, 2.0]);
        let b = forward::softmax(&[100.3, 99.0, 102.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let c = forward::softmax(&[1.0, 2.0]);
        let e = std::f64::consts::E;
        assert!((c[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((c[1] - e / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut p = ParameterSet::new(33);
        p.set("x", Tensor::vector(vec![0.2, -0.4, 1.3, 0.0]));
        let err = grad_check(
            |g, ps| {
                let x = g.param("x", ps)?;
                let s = g.softmax(x);
                let w = g.input(Tensor::vector(vec![0.9, -0.3, 0.5, 1.7]));
                g.dot(s, w)
            },
            &p,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut p = ParameterSet::new(34);
        p.set("x", Tensor::vector(vec![0.2, -0.4, 1.3, 0.0]));
        let err = grad_check(
            |g, ps| {
                let x = g.param("x", ps)?;
                g.cross_entropy_logits(x, 2)
            },
            &p,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn taped_forward_matches_plain_forward_bitwise() {
        let p = lstm_params(44, 5, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| randv(&mut rng, 5)).collect();

        let mut g = Graph::new();
        let vars = lstm_vars(&mut g, &p);
        let inputs: Vec<Var> = xs
            .iter()
            .map(|v| g.input(Tensor::vector(v.clone())))
            .collect();
        let hs = g.lstm_sequence(&vars, &inputs).unwrap();
        let taped: Vec<Vec<f64>> = hs.iter().map(|h| g.value(*h).data().to_vec()).collect();

        let w = forward::LstmWeights {
            w_ih: p.get("w_ih").unwrap(),
            w_hh: p.get("w_hh").unwrap(),
            b: p.get("b").unwrap(),
        };
        let plain = forward::lstm_forward(&w, &xs);
        assert_eq!(taped, plain);
    }
}
