//! Conditional-VAE key generator: posterior MLPs, reparameterized sampling,
//! a conditioned sigmoid decoder, the three-term loss, training, and
//! N_k-key generation from the standard Gaussian prior.
//!
//! Encoder keys live in (-1, 1) while the decoder emits (0, 1); keys are
//! mapped through an explicit affine bijection at the boundary so the
//! reconstruction loss stays well-posed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffmath::forward::{linear, sigmoid};
use crate::diffmath::{adam_step, AdamState, Graph, ParameterSet, Tensor, Var};
use crate::error::{Error, Result};
use crate::keyenc::KeyVector;
use crate::rng::derive;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyGenConfig {
    /// Keys generated per query.
    pub n_k: usize,
    /// KL weight.
    pub eta: f64,
    /// Diversity-loss weight.
    pub lambda: f64,
    /// Stability constant in the diversity denominator.
    pub div_eps: f64,
    pub epochs: usize,
    /// Latent dimension d_z.
    pub latent_dim: usize,
    /// Hidden width of the posterior and decoder MLPs.
    pub hidden_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for KeyGenConfig {
    fn default() -> Self {
        KeyGenConfig {
            n_k: 20,
            eta: 1.0,
            lambda: 0.1,
            div_eps: 1e-8,
            epochs: 20,
            latent_dim: 32,
            hidden_dim: 128,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Map a (-1, 1) key onto the decoder's (0, 1) range.
pub fn unit_map(k: &[f64]) -> Vec<f64> {
    k.iter().map(|v| (v + 1.0) / 2.0).collect()
}

/// Inverse of [`unit_map`].
pub fn unit_unmap(k: &[f64]) -> Vec<f64> {
    k.iter().map(|v| 2.0 * v - 1.0).collect()
}

/// z = mu + noise * exp(logvar / 2), componentwise.
pub fn sample_latent(mu: &[f64], logvar: &[f64], noise: &[f64]) -> Vec<f64> {
    debug_assert_eq!(mu.len(), logvar.len());
    debug_assert_eq!(mu.len(), noise.len());
    mu.iter()
        .zip(logvar)
        .zip(noise)
        .map(|((m, lv), e)| m + e * (lv / 2.0).exp())
        .collect()
}

/// Per-term loss values for one key and its generated set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl: f64,
    pub div: f64,
}

impl LossBreakdown {
    pub fn total(&self, cfg: &KeyGenConfig) -> f64 {
        self.recon + cfg.eta * self.kl + cfg.lambda * self.div
    }
}

/// Loss terms for an input key `k`, generated keys in the decoder's (0, 1)
/// space, and the shared posterior parameters.
pub fn loss_total(
    k: &KeyVector,
    generated_unit: &[Vec<f64>],
    mu: &[f64],
    logvar: &[f64],
    cfg: &KeyGenConfig,
) -> Result<LossBreakdown> {
    if generated_unit.is_empty() {
        return Err(Error::Data("loss needs at least one generated key".into()));
    }
    let target = unit_map(&k.0);
    let n = generated_unit.len() as f64;
    let recon: f64 = target
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let mean_j: f64 = generated_unit.iter().map(|g| g[j]).sum::<f64>() / n;
            let d = t - mean_j;
            d * d
        })
        .sum();
    let kl: f64 = 0.5
        * mu.iter()
            .zip(logvar)
            .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
            .sum::<f64>();
    let mut div = 0.0;
    for i in 0..generated_unit.len() {
        for j in (i + 1)..generated_unit.len() {
            let d2: f64 = generated_unit[i]
                .iter()
                .zip(&generated_unit[j])
                .map(|(a, b)| {
                    let d = a - b;
                    d * d
                })
                .sum();
            div += 1.0 / (d2 + cfg.div_eps);
        }
    }
    Ok(LossBreakdown { recon, kl, div })
}

/// Trained conditional-VAE generator.
#[derive(Clone, Debug)]
pub struct KeyGenerator {
    d_k: usize,
    d_z: usize,
    hidden: usize,
    params: ParameterSet,
}

impl KeyGenerator {
    pub fn new(d_k: usize, latent_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut params = ParameterSet::new(seed);
        params.init_matrix("mu_w1", hidden_dim, d_k);
        params.init_zeros("mu_b1", &[hidden_dim]);
        params.init_matrix("mu_w2", latent_dim, hidden_dim);
        params.init_zeros("mu_b2", &[latent_dim]);
        params.init_matrix("sig_w1", hidden_dim, d_k);
        params.init_zeros("sig_b1", &[hidden_dim]);
        params.init_matrix("sig_w2", latent_dim, hidden_dim);
        params.init_zeros("sig_b2", &[latent_dim]);
        params.init_matrix("dec_w1", hidden_dim, latent_dim + d_k);
        params.init_zeros("dec_b1", &[hidden_dim]);
        params.init_matrix("dec_w2", d_k, hidden_dim);
        params.init_zeros("dec_b2", &[d_k]);
        KeyGenerator {
            d_k,
            d_z: latent_dim,
            hidden: hidden_dim,
            params,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_k
    }

    pub fn latent_dim(&self) -> usize {
        self.d_z
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn set_params(&mut self, params: ParameterSet) {
        self.params = params;
    }

    fn mlp2(&self, w1: &str, b1: &str, w2: &str, b2: &str, x: &[f64]) -> Vec<f64> {
        let mut h = linear(self.params.get(w1).unwrap(), x, self.params.get(b1).unwrap());
        for v in h.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        linear(self.params.get(w2).unwrap(), &h, self.params.get(b2).unwrap())
    }

    /// Posterior parameters (mu, logvar) for a raw encoder key.
    pub fn encode_posterior(&self, k: &KeyVector) -> Result<(Vec<f64>, Vec<f64>)> {
        if !k.0.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite key".into()));
        }
        let ku = unit_map(&k.0);
        let mu = self.mlp2("mu_w1", "mu_b1", "mu_w2", "mu_b2", &ku);
        let logvar = self.mlp2("sig_w1", "sig_b1", "sig_w2", "sig_b2", &ku);
        Ok((mu, logvar))
    }

    /// Decode a latent vector conditioned on a unit-interval key; output in
    /// (0, 1).
    pub fn decode_key(&self, z: &[f64], k_unit: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(z.len() + k_unit.len());
        x.extend_from_slice(z);
        x.extend_from_slice(k_unit);
        let mut out = self.mlp2("dec_w1", "dec_b1", "dec_w2", "dec_b2", &x);
        for v in out.iter_mut() {
            *v = sigmoid(*v);
        }
        out
    }

    /// Sample `n_k` keys from the standard Gaussian prior conditioned on `k`,
    /// mapped back to the encoder's (-1, 1) range.
    pub fn generate(&self, k: &KeyVector, n_k: usize, seed: u64) -> Vec<KeyVector> {
        let ku = unit_map(&k.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_k)
            .map(|_| {
                let z: Vec<f64> = (0..self.d_z)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                KeyVector(unit_unmap(&self.decode_key(&z, &ku)))
            })
            .collect()
    }

    /// Mean total loss over a key set with seeded noise; used to compare
    /// before/after training.
    pub fn mean_total_loss(&self, keys: &[KeyVector], cfg: &KeyGenConfig, seed: u64) -> Result<f64> {
        if keys.is_empty() {
            return Err(Error::Data("no keys".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = 0.0;
        for k in keys {
            let (mu, logvar) = self.encode_posterior(k)?;
            let ku = unit_map(&k.0);
            let gen: Vec<Vec<f64>> = (0..cfg.n_k)
                .map(|_| {
                    let noise: Vec<f64> = (0..self.d_z)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect();
                    self.decode_key(&sample_latent(&mu, &logvar, &noise), &ku)
                })
                .collect();
            sum += loss_total(k, &gen, &mu, &logvar, cfg)?.total(cfg);
        }
        Ok(sum / keys.len() as f64)
    }
}

/// Graph-side forward of one key's total loss: shared posterior, `n_k`
/// reparameterized samples, decoder, and the three loss terms.
fn key_loss_on_graph(
    g: &mut Graph,
    params: &ParameterSet,
    key_unit: &[f64],
    noises: &[Vec<f64>],
    cfg: &KeyGenConfig,
) -> Result<Var> {
    let ku = g.input(Tensor::vector(key_unit.to_vec()));
    let mlp2 = |g: &mut Graph, w1: &str, b1: &str, w2: &str, b2: &str, x: Var| -> Result<Var> {
        let w1 = g.param(w1, params)?;
        let b1 = g.param(b1, params)?;
        let w2 = g.param(w2, params)?;
        let b2 = g.param(b2, params)?;
        let h = g.linear(w1, x, b1)?;
        let h = g.relu(h);
        g.linear(w2, h, b2)
    };
    let mu = mlp2(g, "mu_w1", "mu_b1", "mu_w2", "mu_b2", ku)?;
    let logvar = mlp2(g, "sig_w1", "sig_b1", "sig_w2", "sig_b2", ku)?;
    let half_lv = g.scale(logvar, 0.5);
    let sigma = g.exp(half_lv);
    let mut gens = Vec::with_capacity(noises.len());
    for noise in noises {
        let e = g.input(Tensor::vector(noise.clone()));
        let es = g.mul(e, sigma)?;
        let z = g.add(mu, es)?;
        let zk = g.concat(&[z, ku]);
        let dw1 = g.param("dec_w1", params)?;
        let db1 = g.param("dec_b1", params)?;
        let dw2 = g.param("dec_w2", params)?;
        let db2 = g.param("dec_b2", params)?;
        let h = g.linear(dw1, zk, db1)?;
        let h = g.relu(h);
        let pre = g.linear(dw2, h, db2)?;
        gens.push(g.sigmoid(pre));
    }
    let recon = g.recon_loss(key_unit, &gens)?;
    let kl = g.kl_std_normal(mu, logvar)?;
    let div = g.diversity_loss(&gens, cfg.div_eps)?;
    let kl_w = g.scale(kl, cfg.eta);
    let div_w = g.scale(div, cfg.lambda);
    let partial = g.add(recon, kl_w)?;
    g.add(partial, div_w)
}

/// Train a generator on a key set; Adam over the total loss with fresh noise
/// per example per step. Returns the generator and the mean loss per epoch.
pub fn train_generator_with_trace(
    keys: &[KeyVector],
    d_k: usize,
    cfg: &KeyGenConfig,
) -> Result<(KeyGenerator, Vec<f64>)> {
    if keys.is_empty() {
        return Err(Error::Data("cannot train a generator on no keys".into()));
    }
    if cfg.n_k == 0 {
        return Err(Error::Config("n_k must be at least 1".into()));
    }
    let mut generator = KeyGenerator::new(d_k, cfg.latent_dim, cfg.hidden_dim, cfg.seed);
    let mut adam = AdamState::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, &[0x6b67]));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let unit_keys: Vec<Vec<f64>> = keys.iter().map(|k| unit_map(&k.0)).collect();
    let mut step = 0usize;
    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..keys.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut g = Graph::new();
            let mut totals = Vec::with_capacity(batch.len());
            for &ki in batch {
                let noises: Vec<Vec<f64>> = (0..cfg.n_k)
                    .map(|_| {
                        (0..cfg.latent_dim)
                            .map(|_| StandardNormal.sample(&mut rng))
                            .collect()
                    })
                    .collect();
                totals.push(key_loss_on_graph(
                    &mut g,
                    &generator.params,
                    &unit_keys[ki],
                    &noises,
                    cfg,
                )?);
            }
            let sum = g.add_n(&totals)?;
            let loss = g.scale(sum, 1.0 / batch.len() as f64);
            let loss_val = g.value(loss).item();
            if !loss_val.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite generator loss at step {step}"
                )));
            }
            let grads = g.backward(loss)?;
            adam_step(&mut generator.params, &grads, &mut adam)?;
            epoch_loss += loss_val * batch.len() as f64;
            seen += batch.len();
            step += 1;
        }
        epoch_losses.push(epoch_loss / seen as f64);
    }
    Ok((generator, epoch_losses))
}

pub fn train_generator(keys: &[KeyVector], d_k: usize, cfg: &KeyGenConfig) -> Result<KeyGenerator> {
    Ok(train_generator_with_trace(keys, d_k, cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::grad_check;
    use rand::Rng;

    fn random_keys(n: usize, d: usize, seed: u64) -> Vec<KeyVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| KeyVector((0..d).map(|_| rng.random_range(-0.9..0.9)).collect()))
            .collect()
    }

    #[test]
    fn zeroed_mlps_give_standard_posterior() {
        let mut gen = KeyGenerator::new(4, 3, 8, 0);
        let mut zeroed = ParameterSet::new(0);
        for name in [
            "mu_w1", "mu_w2", "sig_w1", "sig_w2", "dec_w1", "dec_w2",
        ] {
            let t = gen.params.get(name).unwrap();
            zeroed.set(name, Tensor::zeros(t.shape()));
        }
        for name in ["mu_b1", "mu_b2", "sig_b1", "sig_b2", "dec_b1", "dec_b2"] {
            let t = gen.params.get(name).unwrap();
            zeroed.set(name, Tensor::zeros(t.shape()));
        }
        gen.set_params(zeroed);
        let k = KeyVector(vec![0.3, -0.2, 0.6, 0.0]);
        let (mu, logvar) = gen.encode_posterior(&k).unwrap();
        assert_eq!(mu, vec![0.0; 3]);
        assert_eq!(logvar, vec![0.0; 3]);
        // Zeroed decoder emits 0.5 everywhere.
        let out = gen.decode_key(&[0.1, 0.2, 0.3], &unit_map(&k.0));
        assert_eq!(out, vec![0.5; 4]);
    }

    #[test]
    fn posterior_is_deterministic_and_rejects_non_finite() {
        let gen = KeyGenerator::new(4, 3, 8, 5);
        let k = KeyVector(vec![0.3, -0.2, 0.6, 0.0]);
        assert_eq!(
            gen.encode_posterior(&k).unwrap(),
            gen.encode_posterior(&k).unwrap()
        );
        assert!(gen
            .encode_posterior(&KeyVector(vec![f64::NAN, 0.0, 0.0, 0.0]))
            .is_err());
    }

    #[test]
    fn sample_latent_cases() {
        assert_eq!(sample_latent(&[1.0, -2.0], &[0.5, 1.0], &[0.0, 0.0]), vec![1.0, -2.0]);
        assert_eq!(sample_latent(&[1.0], &[0.0], &[0.7]), vec![1.7]);
        // mu=1, logvar=ln 4 (sigma=2), noise=0.5 -> 2.0
        let z = sample_latent(&[1.0], &[4f64.ln()], &[0.5]);
        assert!((z[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn decoder_output_strictly_inside_unit_interval() {
        let gen = KeyGenerator::new(6, 4, 16, 9);
        let k = random_keys(1, 6, 1).pop().unwrap();
        let out = gen.decode_key(&[0.3, -0.4, 2.0, -2.0], &unit_map(&k.0));
        assert!(out.iter().all(|v| *v > 0.0 && *v < 1.0));
        let again = gen.decode_key(&[0.3, -0.4, 2.0, -2.0], &unit_map(&k.0));
        assert_eq!(out, again);
    }

    #[test]
    fn loss_fixed_points() {
        let cfg = KeyGenConfig::default();
        let k = KeyVector(vec![0.2, -0.6, 0.4]);
        // Standard-normal posterior: KL exactly 0.
        let gen = vec![unit_map(&k.0), unit_map(&k.0)];
        let l = loss_total(&k, &gen, &[0.0; 2], &[0.0; 2], &cfg).unwrap();
        assert_eq!(l.kl, 0.0);
        // Generated keys equal to the mapped input: recon exactly 0.
        assert_eq!(l.recon, 0.0);
        // Two keys at distance 1 with eps = 1e-8: div within 1e-6 of 1.
        let a = vec![0.0, 0.0];
        let b = vec![1.0, 0.0];
        let l2 = loss_total(
            &KeyVector(vec![0.0, 0.0]),
            &[a, b],
            &[0.0; 2],
            &[0.0; 2],
            &cfg,
        )
        .unwrap();
        assert!((l2.div - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kl_zero_iff_standard_posterior() {
        let cfg = KeyGenConfig::default();
        let k = KeyVector(vec![0.0, 0.0]);
        let gen = vec![unit_map(&k.0)];
        for (mu, lv) in [([0.1, 0.0], [0.0, 0.0]), ([0.0, 0.0], [0.2, 0.0])] {
            let l = loss_total(&k, &gen, &mu, &lv, &cfg).unwrap();
            assert!(l.kl > 0.0);
        }
    }

    #[test]
    fn div_decreases_when_any_pair_moves_apart() {
        let cfg = KeyGenConfig::default();
        let k = KeyVector(vec![0.0, 0.0]);
        let close = vec![vec![0.1, 0.1], vec![0.2, 0.1], vec![0.9, 0.9]];
        let spread = vec![vec![0.1, 0.1], vec![0.4, 0.1], vec![0.9, 0.9]];
        let l_close = loss_total(&k, &close, &[0.0; 2], &[0.0; 2], &cfg).unwrap();
        let l_spread = loss_total(&k, &spread, &[0.0; 2], &[0.0; 2], &cfg).unwrap();
        assert!(l_spread.div < l_close.div);
    }

    #[test]
    fn loss_terms_always_non_negative() {
        let cfg = KeyGenConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let k = KeyVector((0..4).map(|_| rng.random_range(-1.0..1.0)).collect());
            let gen: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..4).map(|_| rng.random_range(0.01..0.99)).collect())
                .collect();
            let mu: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let lv: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let l = loss_total(&k, &gen, &mu, &lv, &cfg).unwrap();
            assert!(l.recon >= 0.0 && l.kl >= 0.0 && l.div >= 0.0);
        }
    }

    #[test]
    fn graph_loss_matches_plain_loss() {
        let cfg = KeyGenConfig {
            n_k: 3,
            latent_dim: 3,
            hidden_dim: 8,
            ..KeyGenConfig::default()
        };
        let gen = KeyGenerator::new(4, 3, 8, 77);
        let k = random_keys(1, 4, 3).pop().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noises: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut g = Graph::new();
        let taped = key_loss_on_graph(&mut g, &gen.params, &unit_map(&k.0), &noises, &cfg).unwrap();
        let taped_val = g.value(taped).item();

        let (mu, logvar) = gen.encode_posterior(&k).unwrap();
        let gens: Vec<Vec<f64>> = noises
            .iter()
            .map(|n| gen.decode_key(&sample_latent(&mu, &logvar, n), &unit_map(&k.0)))
            .collect();
        let plain = loss_total(&k, &gens, &mu, &logvar, &cfg).unwrap().total(&cfg);
        assert!((taped_val - plain).abs() < 1e-12, "{taped_val} vs {plain}");
    }

    #[test]
    fn full_loss_gradients_pass_finite_difference_check() {
        let cfg = KeyGenConfig {
            n_k: 2,
            latent_dim: 2,
            hidden_dim: 4,
            ..KeyGenConfig::default()
        };
        let gen = KeyGenerator::new(3, 2, 4, 123);
        let k = random_keys(1, 3, 8).pop().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noises: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..2).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let ku = unit_map(&k.0);
        let err = grad_check(
            |g, ps| key_loss_on_graph(g, ps, &ku, &noises, &cfg),
            &gen.params,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn training_descends_and_is_deterministic() {
        let keys = random_keys(40, 6, 10);
        let cfg = KeyGenConfig {
            n_k: 4,
            latent_dim: 4,
            hidden_dim: 16,
            epochs: 15,
            batch_size: 8,
            seed: 3,
            ..KeyGenConfig::default()
        };
        let untrained = KeyGenerator::new(6, 4, 16, 3);
        let before = untrained.mean_total_loss(&keys, &cfg, 99).unwrap();
        let (trained, trace) = train_generator_with_trace(&keys, 6, &cfg).unwrap();
        let after = trained.mean_total_loss(&keys, &cfg, 99).unwrap();
        assert!(after < before, "loss {before} -> {after}");
        assert_eq!(trace.len(), 15);

        let (again, _) = train_generator_with_trace(&keys, 6, &cfg).unwrap();
        for name in trained.params.names() {
            assert_eq!(trained.params.get(name), again.params.get(name));
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let keys = random_keys(5, 4, 11);
        let cfg = KeyGenConfig {
            epochs: 0,
            latent_dim: 3,
            hidden_dim: 8,
            seed: 21,
            ..KeyGenConfig::default()
        };
        let trained = train_generator(&keys, 4, &cfg).unwrap();
        let fresh = KeyGenerator::new(4, 3, 8, 21);
        for name in fresh.params.names() {
            assert_eq!(trained.params.get(name), fresh.params.get(name));
        }
    }

    #[test]
    fn generation_is_seeded_and_seed_sensitive() {
        let gen = KeyGenerator::new(5, 3, 8, 31);
        let k = random_keys(1, 5, 12).pop().unwrap();
        let a = gen.generate(&k, 4, 7);
        let b = gen.generate(&k, 4, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|kv| kv.0.iter().all(|v| v.abs() < 1.0)));
        let single = gen.generate(&k, 1, 7);
        assert_eq!(single.len(), 1);

        let mut any_diff = false;
        for s in 0..10u64 {
            let c = gen.generate(&k, 4, 1000 + s);
            let d = gen.generate(&k, 4, 2000 + s);
            if c != d {
                any_diff = true;
            }
        }
        assert!(any_diff);
    }
}
