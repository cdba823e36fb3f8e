use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::mix;

const MAGIC: &[u8; 4] = b"GPRM";
const VERSION: u32 = 1;

/// Named tensors plus the seed they were initialized from.
///
/// Initialization is derived from `(seed, name)`, so re-creating a set with
/// the same seed reproduces identical values regardless of insertion order.
#[derive(Clone, Debug)]
pub struct ParameterSet {
    seed: u64,
    entries: IndexMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new(seed: u64) -> Self {
        ParameterSet {
            seed,
            entries: IndexMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Matrix initialized uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn init_matrix(&mut self, name: &str, rows: usize, cols: usize) {
        let bound = 1.0 / (cols as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, name.as_bytes()));
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.entries
            .insert(name.to_string(), Tensor::from_vec(&[rows, cols], data).unwrap());
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.entries.insert(name.to_string(), Tensor::zeros(shape));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn set(&mut self, name: &str, t: Tensor) {
        self.entries.insert(name.to_string(), t);
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    /// Exact binary checkpoint: name -> shape -> values, little-endian f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                buf.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
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
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Corrupt(format!("{}: bad magic", path.display())));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Corrupt(format!(
                "{}: unsupported version {version}",
                path.display()
            )));
        }
        let seed = r.u64()?;
        let count = r.u32()? as usize;
        let mut set = ParameterSet::new(seed);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Corrupt(format!("{}: bad name", path.display())))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f64()?);
            }
            set.entries.insert(name, Tensor::from_vec(&shape, data)?);
        }
        Ok(set)
    }
}

/// Cursor over a byte buffer that reports truncation as corrupt-file errors.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    context: String,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8], path: &Path) -> Self {
        ByteReader {
            bytes,
            pos: 0,
            context: path.display().to_string(),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt(format!("{}: truncated file", self.context)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_reproduces_values() {
        let mut a = ParameterSet::new(7);
        a.init_matrix("w", 4, 3);
        let mut b = ParameterSet::new(7);
        b.init_matrix("w", 4, 3);
        assert_eq!(a.get("w"), b.get("w"));
    }

    #[test]
    fn init_independent_of_insertion_order() {
        let mut a = ParameterSet::new(7);
        a.init_matrix("w", 4, 3);
        a.init_matrix("u", 2, 2);
        let mut b = ParameterSet::new(7);
        b.init_matrix("u", 2, 2);
        b.init_matrix("w", 4, 3);
        assert_eq!(a.get("w"), b.get("w"));
        assert_eq!(a.get("u"), b.get("u"));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut a = ParameterSet::new(11);
        a.init_matrix("w", 5, 7);
        a.init_zeros("b", &[5]);
        a.save(&path).unwrap();
        let b = ParameterSet::load(&path).unwrap();
        assert_eq!(a.seed(), b.seed());
        assert_eq!(a.get("w"), b.get("w"));
        assert_eq!(a.get("b"), b.get("b"));
    }

    #[test]
    fn truncated_checkpoint_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut a = ParameterSet::new(11);
        a.init_matrix("w", 5, 7);
        a.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            ParameterSet::load(&path),
            Err(Error::Corrupt(_))
        ));
    }
}
