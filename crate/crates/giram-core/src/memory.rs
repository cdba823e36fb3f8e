//! Per-user interest memory: sparse top-K value construction, cosine
//! matching, adaptive entry updates, insertion with oldest-entry eviction,
//! and exact binary persistence.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffmath::forward::softmax;
use crate::diffmath::params::ByteReader;
use crate::error::{Error, Result};
use crate::keyenc::KeyVector;

const MAGIC: &[u8; 4] = b"GIRM";
const VERSION: u32 = 1;

/// POI score vector with at most K nonzero probabilities, stored sparsely.
/// Entries are (index, probability), unique and sorted by index; the entry
/// sum never exceeds 1 (plus float slack) and is not renormalized.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseScoreVec {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseScoreVec {
    pub fn new(dim: usize, mut entries: Vec<(u32, f64)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Validation(format!("duplicate sparse index {}", w[0].0)));
            }
        }
        for (i, p) in &entries {
            if *i as usize >= dim {
                return Err(Error::Validation(format!("sparse index {i} >= dim {dim}")));
            }
            if !(*p > 0.0 && *p <= 1.0) {
                return Err(Error::Validation(format!("probability {p} outside (0, 1]")));
            }
        }
        Ok(SparseScoreVec { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn densify(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, p) in &self.entries {
            out[*i as usize] = *p;
        }
        out
    }

    /// Convex combination `(1-alpha)*self + alpha*other`, re-truncated to the
    /// `k` largest probabilities (ties to the lower index), no
    /// renormalization.
    pub fn combine(&self, other: &SparseScoreVec, alpha: f64, k: usize) -> SparseScoreVec {
        debug_assert_eq!(self.dim, other.dim);
        let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, p) in &self.entries {
            *merged.entry(*i).or_default() += (1.0 - alpha) * p;
        }
        for (i, p) in &other.entries {
            *merged.entry(*i).or_default() += alpha * p;
        }
        let mut pairs: Vec<(u32, f64)> = merged.into_iter().filter(|(_, p)| *p > 0.0).collect();
        pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        pairs.truncate(k);
        pairs.sort_by_key(|e| e.0);
        SparseScoreVec {
            dim: self.dim,
            entries: pairs,
        }
    }
}

/// Softmax the dense scores, keep the K largest probabilities (ties broken by
/// lower POI index), zero the rest, do not renormalize.
pub fn topk_sparse(scores: &[f64], k: usize) -> SparseScoreVec {
    assert!(k >= 1, "top-K needs K >= 1");
    let probs = softmax(scores);
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut entries: Vec<(u32, f64)> = idx
        .into_iter()
        .take(k)
        .map(|i| (i as u32, probs[i]))
        .collect();
    entries.sort_by_key(|e| e.0);
    SparseScoreVec {
        dim: scores.len(),
        entries,
    }
}

/// One key-value-timestamp triple.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryEntry {
    pub key: KeyVector,
    pub value: SparseScoreVec,
    pub timestamp: i64,
}

/// Which branch an update took.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Matched { index: usize },
    Inserted,
    Evicted { index: usize },
}

/// One user's capacity-bounded entry list.
#[derive(Clone, Debug, PartialEq)]
pub struct UserMemory {
    entries: Vec<MemoryEntry>,
    capacity: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot / (na * nb))
    }
}

impl UserMemory {
    pub fn new(capacity: usize) -> Self {
        UserMemory {
            entries: Vec::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    /// Cosine similarity of `key` against every stored key; returns the
    /// argmax (earliest slot wins ties) or `None` on an empty memory.
    /// Zero-norm query keys are rejected; zero-norm stored keys rank below
    /// everything.
    pub fn find_best_match(&self, key: &KeyVector) -> Result<Option<(usize, f64)>> {
        if self.entries.is_empty() {
            return Ok(None);
        }
        let norm: f64 = key.0.iter().map(|x| x * x).sum();
        if norm == 0.0 {
            return Err(Error::Numeric("zero-norm query key".into()));
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let sim = cosine(&key.0, &e.key.0).unwrap_or(-2.0);
            match best {
                Some((_, s)) if sim <= s => {}
                _ => best = Some((i, sim)),
            }
        }
        Ok(best)
    }

    /// Convex update of entry `idx` toward `(key, value)` with weight
    /// `alpha`; the timestamp is refreshed to `t`.
    pub fn update_entry(
        &mut self,
        idx: usize,
        key: &KeyVector,
        value: &SparseScoreVec,
        alpha: f64,
        t: i64,
        top_k: usize,
    ) {
        debug_assert!((0.0..=1.0).contains(&alpha));
        let e = &mut self.entries[idx];
        let mixed: Vec<f64> = e
            .key
            .0
            .iter()
            .zip(&key.0)
            .map(|(old, new)| (1.0 - alpha) * old + alpha * new)
            .collect();
        e.value = e.value.combine(value, alpha, top_k);
        e.key = KeyVector(mixed);
        e.timestamp = t;
    }

    /// Append when below capacity, otherwise overwrite the entry with the
    /// minimum timestamp (ties to the lowest slot).
    pub fn insert_or_evict(
        &mut self,
        key: KeyVector,
        value: SparseScoreVec,
        t: i64,
    ) -> UpdateOutcome {
        let entry = MemoryEntry {
            key,
            value,
            timestamp: t,
        };
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
            return UpdateOutcome::Inserted;
        }
        let oldest = self
            .entries
            .iter()
            .enumerate()
            .min_by_key(|(i, e)| (e.timestamp, *i))
            .map(|(i, _)| i)
            .expect("capacity is at least 1");
        self.entries[oldest] = entry;
        UpdateOutcome::Evicted { index: oldest }
    }

    /// The full update rule: match when the best similarity strictly exceeds
    /// `delta`, otherwise insert or evict.
    pub fn apply_update(
        &mut self,
        key: &KeyVector,
        value: &SparseScoreVec,
        alpha: f64,
        delta: f64,
        t: i64,
        top_k: usize,
    ) -> Result<UpdateOutcome> {
        if let Some((idx, sim)) = self.find_best_match(key)? {
            if sim > delta {
                self.update_entry(idx, key, value, alpha, t, top_k);
                return Ok(UpdateOutcome::Matched { index: idx });
            }
        }
        Ok(self.insert_or_evict(key.clone(), value.clone(), t))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryConfig {
    /// Per-user capacity N_u.
    pub capacity: usize,
    /// Nonzeros kept in each stored value.
    pub top_k: usize,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            capacity: 100,
            top_k: 50,
        }
    }
}

/// The full interest memory: one capacity-bounded store per user.
#[derive(Clone, Debug)]
pub struct InterestMemory {
    cfg: MemoryConfig,
    d_k: usize,
    d_v: usize,
    users: BTreeMap<u32, UserMemory>,
}

impl InterestMemory {
    pub fn new(cfg: MemoryConfig, d_k: usize, d_v: usize) -> Self {
        InterestMemory {
            cfg,
            d_k,
            d_v,
            users: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.cfg
    }

    pub fn d_k(&self) -> usize {
        self.d_k
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn user(&self, user: u32) -> Option<&UserMemory> {
        self.users.get(&user)
    }

    pub fn users(&self) -> impl Iterator<Item = (&u32, &UserMemory)> {
        self.users.iter()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn total_entries(&self) -> usize {
        self.users.values().map(|m| m.len()).sum()
    }

    pub fn apply_update(
        &mut self,
        user: u32,
        key: &KeyVector,
        value: &SparseScoreVec,
        alpha: f64,
        delta: f64,
        t: i64,
    ) -> Result<UpdateOutcome> {
        if key.dim() != self.d_k {
            return Err(Error::Shape(format!(
                "key dim {} does not match memory d_k {}",
                key.dim(),
                self.d_k
            )));
        }
        if value.dim() != self.d_v {
            return Err(Error::Shape(format!(
                "value dim {} does not match memory d_v {}",
                value.dim(),
                self.d_v
            )));
        }
        let cap = self.cfg.capacity;
        let top_k = self.cfg.top_k;
        let mem = self
            .users
            .entry(user)
            .or_insert_with(|| UserMemory::new(cap));
        mem.apply_update(key, value, alpha, delta, t, top_k)
    }

    /// Versioned binary snapshot; the round trip is bit-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.cfg.capacity as u32).to_le_bytes());
        buf.extend_from_slice(&(self.cfg.top_k as u32).to_le_bytes());
        buf.extend_from_slice(&(self.d_k as u32).to_le_bytes());
        buf.extend_from_slice(&(self.d_v as u32).to_le_bytes());
        buf.extend_from_slice(&(self.users.len() as u32).to_le_bytes());
        for (user, mem) in &self.users {
            buf.extend_from_slice(&user.to_le_bytes());
            buf.extend_from_slice(&(mem.entries.len() as u32).to_le_bytes());
            for e in &mem.entries {
                buf.extend_from_slice(&e.timestamp.to_le_bytes());
                for v in &e.key.0 {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                buf.extend_from_slice(&(e.value.nnz() as u32).to_le_bytes());
                for (i, p) in e.value.entries() {
                    buf.extend_from_slice(&i.to_le_bytes());
                    buf.extend_from_slice(&p.to_le_bytes());
                }
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = ByteReader::new(&bytes, path);
        if r.take(4)? != MAGIC {
            return Err(Error::Corrupt(format!("{}: bad magic", path.display())));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Corrupt(format!(
                "{}: unsupported snapshot version {version}",
                path.display()
            )));
        }
        let capacity = r.u32()? as usize;
        let top_k = r.u32()? as usize;
        let d_k = r.u32()? as usize;
        let d_v = r.u32()? as usize;
        let n_users = r.u32()? as usize;
        let mut mem = InterestMemory::new(MemoryConfig { capacity, top_k }, d_k, d_v);
        for _ in 0..n_users {
            let user = r.u32()?;
            let n_entries = r.u32()? as usize;
            if n_entries > capacity {
                return Err(Error::Corrupt(format!(
                    "{}: user {user} exceeds capacity",
                    path.display()
                )));
            }
            let mut um = UserMemory::new(capacity);
            for _ in 0..n_entries {
                let ts = r.i64()?;
                let mut key = Vec::with_capacity(d_k);
                for _ in 0..d_k {
                    key.push(r.f64()?);
                }
                let nnz = r.u32()? as usize;
                let mut entries = Vec::with_capacity(nnz);
                for _ in 0..nnz {
                    let i = r.u32()?;
                    let p = r.f64()?;
                    entries.push((i, p));
                }
                um.entries.push(MemoryEntry {
                    key: KeyVector(key),
                    value: SparseScoreVec { dim: d_v, entries },
                    timestamp: ts,
                });
            }
            mem.users.insert(user, um);
        }
        if !r.done() {
            return Err(Error::Corrupt(format!(
                "{}: trailing bytes",
                path.display()
            )));
        }
        Ok(mem)
    }
}
