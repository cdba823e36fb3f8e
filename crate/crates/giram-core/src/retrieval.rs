//! Rank memory entries against query keys, aggregate with reciprocal rank
//! fusion, and produce the sustained-interest vector.

use serde::{Deserialize, Serialize};

use crate::diffmath::forward::softmax;
use crate::error::{Error, Result};
use crate::keyenc::KeyVector;
use crate::memory::UserMemory;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RrfConfig {
    /// Smoothing constant added to every rank.
    pub a: f64,
}

impl Default for RrfConfig {
    fn default() -> Self {
        RrfConfig { a: 50.0 }
    }
}

fn similarities(mem: &UserMemory, key: &KeyVector) -> Result<Vec<f64>> {
    let norm: f64 = key.0.iter().map(|x| x * x).sum();
    if norm == 0.0 {
        return Err(Error::Numeric("zero-norm query key".into()));
    }
    let nq = norm.sqrt();
    Ok(mem
        .entries()
        .iter()
        .map(|e| {
            let dot: f64 = key.0.iter().zip(&e.key.0).map(|(x, y)| x * y).sum();
            let ne: f64 = e.key.0.iter().map(|x| x * x).sum::<f64>().sqrt();
            if ne == 0.0 {
                // Zero-norm stored keys sort below every real similarity.
                -2.0
            } else {
                dot / (nq * ne)
            }
        })
        .collect())
}

/// 1-based rank of every entry under descending cosine similarity to `key`;
/// ties go to the earlier slot. The result is a permutation of 1..=len.
pub fn rank_entries(mem: &UserMemory, key: &KeyVector) -> Result<Vec<usize>> {
    if mem.is_empty() {
        return Err(Error::Data("cannot rank an empty memory".into()));
    }
    let sims = similarities(mem, key)?;
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].partial_cmp(&sims[a]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0usize; sims.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    Ok(ranks)
}

/// RRF score per entry: `sum over keys of 1/(rank + a)`.
pub fn rrf_scores(mem: &UserMemory, keys: &[KeyVector], cfg: &RrfConfig) -> Result<Vec<f64>> {
    if mem.is_empty() {
        return Err(Error::Data("cannot score an empty memory".into()));
    }
    if keys.is_empty() {
        return Err(Error::Data("cannot score with no query keys".into()));
    }
    let mut scores = vec![0.0; mem.len()];
    for key in keys {
        let ranks = rank_entries(mem, key)?;
        for (s, r) in scores.iter_mut().zip(ranks) {
            *s += 1.0 / (r as f64 + cfg.a);
        }
    }
    Ok(scores)
}

/// Softmax-weighted sum of the memory values under the entries' RRF scores,
/// densified to `dim`. An empty memory yields the zero vector; the fusion
/// layer turns that into pure recent-interest output.
pub fn sustained_interest(
    mem: &UserMemory,
    keys: &[KeyVector],
    cfg: &RrfConfig,
    dim: usize,
) -> Result<Vec<f64>> {
    if mem.is_empty() {
        return Ok(vec![0.0; dim]);
    }
    let scores = rrf_scores(mem, keys, cfg)?;
    let weights = softmax(&scores);
    let mut out = vec![0.0; dim];
    for (w, e) in weights.iter().zip(mem.entries()) {
        for (i, p) in e.value.entries() {
            out[*i as usize] += w * p;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{topk_sparse, SparseScoreVec};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mem_with_keys(keys: &[Vec<f64>], dim: usize) -> UserMemory {
        let mut m = UserMemory::new(keys.len().max(1));
        for (i, k) in keys.iter().enumerate() {
            let v = SparseScoreVec::new(dim, vec![(i as u32 % dim as u32, 0.5)]).unwrap();
            m.insert_or_evict(KeyVector(k.clone()), v, i as i64);
        }
        m
    }

    #[test]
    fn single_entry_ranks_first() {
        let m = mem_with_keys(&[vec![0.5, 0.5]], 4);
        let ranks = rank_entries(&m, &KeyVector(vec![1.0, 0.0])).unwrap();
        assert_eq!(ranks, vec![1]);
    }

    #[test]
    fn identical_entry_ranks_first() {
        let m = mem_with_keys(&[vec![0.1, 0.9], vec![0.7, 0.2], vec![-0.5, 0.5]], 4);
        let ranks = rank_entries(&m, &KeyVector(vec![0.7, 0.2])).unwrap();
        assert_eq!(ranks[1], 1);
    }

    #[test]
    fn ranks_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = rng.random_range(1..=6usize);
            let keys: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let m = mem_with_keys(&keys, 4);
            let q = KeyVector((0..5).map(|_| rng.random_range(-1.0..1.0)).collect());
            let ranks = rank_entries(&m, &q).unwrap();
            // Oracle: pairwise comparison count.
            let sims: Vec<f64> = keys
                .iter()
                .map(|k| {
                    let dot: f64 = q.0.iter().zip(k).map(|(a, b)| a * b).sum();
                    let nq: f64 = q.0.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let nk: f64 = k.iter().map(|v| v * v).sum::<f64>().sqrt();
                    dot / (nq * nk)
                })
                .collect();
            for i in 0..n {
                let ahead = (0..n)
                    .filter(|&j| sims[j] > sims[i] || (sims[j] == sims[i] && j < i))
                    .count();
                assert_eq!(ranks[i], ahead + 1);
            }
            let mut sorted = ranks.clone();
            sorted.sort();
            assert_eq!(sorted, (1..=n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn rrf_direct_formula() {
        let m = mem_with_keys(&[vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0]], 4);
        let q = KeyVector(vec![1.0, 0.0]);
        let scores = rrf_scores(&m, &[q], &RrfConfig { a: 50.0 }).unwrap();
        assert!((scores[0] - 1.0 / 51.0).abs() < 1e-15);
        assert!((scores[1] - 1.0 / 52.0).abs() < 1e-15);
        assert!((scores[2] - 1.0 / 53.0).abs() < 1e-15);
    }

    #[test]
    fn duplicated_key_list_doubles_scores_but_not_weights() {
        let m = mem_with_keys(&[vec![1.0, 0.0], vec![0.2, 0.8], vec![-0.3, 0.4]], 4);
        let keys = vec![KeyVector(vec![0.9, 0.1]), KeyVector(vec![0.1, 0.9])];
        let doubled: Vec<KeyVector> = keys.iter().chain(keys.iter()).cloned().collect();
        let cfg = RrfConfig::default();
        let s1 = rrf_scores(&m, &keys, &cfg).unwrap();
        let s2 = rrf_scores(&m, &doubled, &cfg).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        let i1 = sustained_interest(&m, &keys, &cfg, 4).unwrap();
        let i2 = sustained_interest(&m, &doubled, &cfg, 4).unwrap();
        // Softmax is not scale-invariant, so the weighted sums differ, but
        // the entry ORDER of the weights is preserved; check weights of the
        // single strongest entry still dominate.
        let w1 = crate::diffmath::forward::softmax(&s1);
        let w2 = crate::diffmath::forward::softmax(&s2);
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&w1), argmax(&w2));
        assert_eq!(i1.len(), i2.len());
    }

    #[test]
    fn rrf_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let n = rng.random_range(1..=5usize);
            let keys: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let m = mem_with_keys(&keys, 4);
            let nq = rng.random_range(1..=4usize);
            let qs: Vec<KeyVector> = (0..nq)
                .map(|_| KeyVector((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect();
            let cfg = RrfConfig { a: 50.0 };
            let got = rrf_scores(&m, &qs, &cfg).unwrap();
            for (i, g) in got.iter().enumerate() {
                let mut expect = 0.0;
                for q in &qs {
                    let ranks = rank_entries(&m, q).unwrap();
                    expect += 1.0 / (ranks[i] as f64 + 50.0);
                }
                assert!((g - expect).abs() < 1e-12);
                assert!(*g > 0.0);
            }
        }
    }

    #[test]
    fn sustained_interest_hand_computation() {
        // 3 entries over a 4-POI space with hand-set keys and values.
        let mut m = UserMemory::new(3);
        m.insert_or_evict(
            KeyVector(vec![1.0, 0.0]),
            SparseScoreVec::new(4, vec![(0, 0.6), (1, 0.2)]).unwrap(),
            0,
        );
        m.insert_or_evict(
            KeyVector(vec![0.0, 1.0]),
            SparseScoreVec::new(4, vec![(2, 0.5)]).unwrap(),
            1,
        );
        m.insert_or_evict(
            KeyVector(vec![-1.0, 0.0]),
            SparseScoreVec::new(4, vec![(3, 0.9)]).unwrap(),
            2,
        );
        let q = KeyVector(vec![1.0, 0.0]);
        let cfg = RrfConfig { a: 50.0 };
        // Ranks are 1, 2, 3; softmax over [1/51, 1/52, 1/53].
        let s = [1.0 / 51.0, 1.0 / 52.0, 1.0 / 53.0];
        let w = crate::diffmath::forward::softmax(&s);
        let expect = [w[0] * 0.6, w[0] * 0.2, w[1] * 0.5, w[2] * 0.9];
        let got = sustained_interest(&m, &[q], &cfg, 4).unwrap();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn sustained_interest_single_entry_and_empty() {
        let m = mem_with_keys(&[vec![0.3, 0.4]], 4);
        let got = sustained_interest(
            &m,
            &[KeyVector(vec![1.0, 1.0])],
            &RrfConfig::default(),
            4,
        )
        .unwrap();
        assert_eq!(got, m.entries()[0].value.densify());

        let empty = UserMemory::new(3);
        let got = sustained_interest(
            &empty,
            &[KeyVector(vec![1.0, 1.0])],
            &RrfConfig::default(),
            4,
        )
        .unwrap();
        assert_eq!(got, vec![0.0; 4]);
    }

    #[test]
    fn query_permutation_invariance() {
        let m = mem_with_keys(&[vec![0.5, 0.1], vec![0.2, 0.9], vec![-0.7, 0.3]], 4);
        let keys = vec![
            KeyVector(vec![0.9, 0.1]),
            KeyVector(vec![0.1, 0.9]),
            KeyVector(vec![-0.5, -0.5]),
        ];
        let mut shuffled = keys.clone();
        shuffled.swap(0, 2);
        let cfg = RrfConfig::default();
        let a = rrf_scores(&m, &keys, &cfg).unwrap();
        let b = rrf_scores(&m, &shuffled, &cfg).unwrap();
        // Same sums up to float re-association.
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_weights_sum_to_one_and_components_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let keys: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut m = UserMemory::new(5);
        for (i, k) in keys.iter().enumerate() {
            let scores: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            m.insert_or_evict(KeyVector(k.clone()), topk_sparse(&scores, 3), i as i64);
        }
        let qs = vec![KeyVector(vec![0.4, -0.2, 0.6, 0.1])];
        let w = crate::diffmath::forward::softmax(&rrf_scores(&m, &qs, &RrfConfig::default()).unwrap());
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let sustained = sustained_interest(&m, &qs, &RrfConfig::default(), 6).unwrap();
        for (i, v) in sustained.iter().enumerate() {
            let max_comp = m
                .entries()
                .iter()
                .map(|e| e.value.densify()[i])
                .fold(0.0, f64::max);
            assert!(*v >= 0.0 && *v <= max_comp + 1e-12);
        }
    }
}
