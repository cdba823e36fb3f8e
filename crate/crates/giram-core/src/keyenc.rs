//! Model-agnostic context-aware key encoder: geography, time, and category
//! embeddings concatenated, projected, and summarized by an LSTM into a key
//! vector. Parameters are frozen at seeded initialization so keys stored in
//! early blocks remain comparable to queries arriving later.

use serde::{Deserialize, Serialize};

use crate::diffmath::forward::{linear, lstm_forward, LstmWeights};
use crate::diffmath::ParameterSet;
use crate::error::{Error, Result};
use crate::ingest::{GridSpec, SECONDS_PER_DAY};
use crate::vocab::IndexedCheckIn;

/// Per-attribute embedding width shared by all discrete tables.
pub const EMBED_DIM: usize = 16;

/// A context key; components live in (-1, 1), the LSTM hidden range.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyVector(pub Vec<f64>);

impl KeyVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyEncoderConfig {
    /// Key dimension d_k (also the LSTM hidden and projection width).
    pub d_k: usize,
    /// Frequencies of the periodic time features.
    pub freqs: Vec<f64>,
}

impl Default for KeyEncoderConfig {
    fn default() -> Self {
        KeyEncoderConfig {
            d_k: 64,
            freqs: vec![1.0, 2.0, 4.0],
        }
    }
}

/// Coordinate min-max statistics, fit on the base block and frozen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordMinMax {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl CoordMinMax {
    pub fn fit(points: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut s = CoordMinMax {
            min_lat: f64::INFINITY,
            max_lat: f64::NEG_INFINITY,
            min_lon: f64::INFINITY,
            max_lon: f64::NEG_INFINITY,
        };
        let mut any = false;
        for (lat, lon) in points {
            any = true;
            s.min_lat = s.min_lat.min(lat);
            s.max_lat = s.max_lat.max(lat);
            s.min_lon = s.min_lon.min(lon);
            s.max_lon = s.max_lon.max(lon);
        }
        if !any {
            return Err(Error::Data("cannot fit coordinate stats on no points".into()));
        }
        if s.min_lat == s.max_lat {
            s.max_lat += 1e-9;
        }
        if s.min_lon == s.max_lon {
            s.max_lon += 1e-9;
        }
        Ok(s)
    }

    /// Min-max scale into [0, 1]; later blocks can stray outside the base
    /// block's envelope, so values clamp at the edges.
    fn normalize(&self, lat: f64, lon: f64) -> (f64, f64) {
        let la = ((lat - self.min_lat) / (self.max_lat - self.min_lat)).clamp(0.0, 1.0);
        let lo = ((lon - self.min_lon) / (self.max_lon - self.min_lon)).clamp(0.0, 1.0);
        (la, lo)
    }
}

/// Frozen context-key encoder.
pub struct KeyEncoder {
    cfg: KeyEncoderConfig,
    minmax: CoordMinMax,
    params: ParameterSet,
    n_regions: usize,
    n_raw: usize,
    n_derived: usize,
}

impl KeyEncoder {
    pub fn new(
        cfg: KeyEncoderConfig,
        grid: &GridSpec,
        minmax: CoordMinMax,
        n_raw_categories: usize,
        n_derived_categories: usize,
        seed: u64,
    ) -> Result<Self> {
        if cfg.freqs.is_empty() {
            return Err(Error::Config("frequency set must be nonempty".into()));
        }
        if cfg.d_k == 0 {
            return Err(Error::Config("d_k must be positive".into()));
        }
        let n_regions = grid.num_regions();
        let mut params = ParameterSet::new(seed);
        params.init_matrix("coord_w", EMBED_DIM, 2);
        params.init_zeros("coord_b", &[EMBED_DIM]);
        params.init_matrix("region_emb", n_regions, EMBED_DIM);
        params.init_matrix("hour_emb", 24, EMBED_DIM);
        params.init_matrix("weekday_emb", 7, EMBED_DIM);
        params.init_matrix("rawcat_emb", n_raw_categories.max(1), EMBED_DIM);
        params.init_matrix("dercat_emb", n_derived_categories.max(1), EMBED_DIM);
        let record_dim = 2 * EMBED_DIM + (2 * EMBED_DIM + 2 * cfg.freqs.len()) + 2 * EMBED_DIM;
        params.init_matrix("proj_w", cfg.d_k, record_dim);
        params.init_zeros("proj_b", &[cfg.d_k]);
        params.init_matrix("lstm_w_ih", 4 * cfg.d_k, cfg.d_k);
        params.init_matrix("lstm_w_hh", 4 * cfg.d_k, cfg.d_k);
        params.init_zeros("lstm_b", &[4 * cfg.d_k]);

        let enc = KeyEncoder {
            cfg,
            minmax,
            params,
            n_regions,
            n_raw: n_raw_categories.max(1),
            n_derived: n_derived_categories.max(1),
        };
        // Dimension ledger: geography 32, time 32 + 2|F|, category 32.
        debug_assert_eq!(enc.geography_dim(), 32);
        debug_assert_eq!(enc.category_dim(), 32);
        debug_assert_eq!(enc.record_dim(), 64 + 32 + 2 * enc.cfg.freqs.len());
        Ok(enc)
    }

    pub fn config(&self) -> &KeyEncoderConfig {
        &self.cfg
    }

    pub fn d_k(&self) -> usize {
        self.cfg.d_k
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn minmax(&self) -> CoordMinMax {
        self.minmax
    }

    pub fn geography_dim(&self) -> usize {
        2 * EMBED_DIM
    }

    pub fn time_dim(&self) -> usize {
        2 * EMBED_DIM + 2 * self.cfg.freqs.len()
    }

    pub fn category_dim(&self) -> usize {
        2 * EMBED_DIM
    }

    /// Concatenated per-record embedding width.
    pub fn record_dim(&self) -> usize {
        self.geography_dim() + self.time_dim() + self.category_dim()
    }

    /// Coordinate projection concatenated with the region embedding.
    pub fn embed_geography(&self, lat: f64, lon: f64, region: u32) -> Result<Vec<f64>> {
        if region as usize >= self.n_regions {
            return Err(Error::Validation(format!(
                "region {region} outside the {}-cell grid",
                self.n_regions
            )));
        }
        let (la, lo) = self.minmax.normalize(lat, lon);
        let mut out = linear(
            self.params.get("coord_w").unwrap(),
            &[la, lo],
            self.params.get("coord_b").unwrap(),
        );
        out.extend_from_slice(self.params.get("region_emb").unwrap().row(region as usize));
        Ok(out)
    }

    /// Hour and weekday embeddings plus sin/cos pairs of the normalized time
    /// of day at each configured frequency.
    pub fn embed_time(&self, timestamp: i64) -> Vec<f64> {
        let secs_of_day = timestamp.rem_euclid(SECONDS_PER_DAY);
        let hour = (secs_of_day / 3600) as usize;
        // Epoch day 0 (1970-01-01) was a Thursday; weekday 0 is Monday.
        let weekday = ((timestamp.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7)) as usize;
        let tau = secs_of_day as f64 / SECONDS_PER_DAY as f64;
        let mut out = Vec::with_capacity(self.time_dim());
        out.extend_from_slice(self.params.get("hour_emb").unwrap().row(hour));
        out.extend_from_slice(self.params.get("weekday_emb").unwrap().row(weekday));
        for w in &self.cfg.freqs {
            let angle = 2.0 * std::f64::consts::PI * w * tau;
            out.push(angle.sin());
            out.push(angle.cos());
        }
        out
    }

    /// Raw and derived category embeddings concatenated.
    pub fn embed_category(&self, raw: u32, derived: u32) -> Result<Vec<f64>> {
        if raw as usize >= self.n_raw {
            return Err(Error::Validation(format!("unknown raw category id {raw}")));
        }
        if derived as usize >= self.n_derived {
            return Err(Error::Validation(format!(
                "unknown derived category id {derived}"
            )));
        }
        let mut out = Vec::with_capacity(self.category_dim());
        out.extend_from_slice(self.params.get("rawcat_emb").unwrap().row(raw as usize));
        out.extend_from_slice(self.params.get("dercat_emb").unwrap().row(derived as usize));
        Ok(out)
    }

    fn record_embedding(&self, r: &IndexedCheckIn) -> Result<Vec<f64>> {
        let mut v = self.embed_geography(r.lat, r.lon, r.region)?;
        v.extend(self.embed_time(r.timestamp));
        v.extend(self.embed_category(r.raw_category, r.derived_category)?);
        let proj = linear(
            self.params.get("proj_w").unwrap(),
            &v,
            self.params.get("proj_b").unwrap(),
        );
        Ok(proj)
    }

    /// Key for every prefix of the record sequence (one LSTM pass).
    pub fn encode_prefix_keys(&self, records: &[IndexedCheckIn]) -> Result<Vec<KeyVector>> {
        if records.is_empty() {
            return Err(Error::Data("cannot encode an empty trajectory".into()));
        }
        let inputs: Vec<Vec<f64>> = records
            .iter()
            .map(|r| self.record_embedding(r))
            .collect::<Result<_>>()?;
        let w = LstmWeights {
            w_ih: self.params.get("lstm_w_ih").unwrap(),
            w_hh: self.params.get("lstm_w_hh").unwrap(),
            b: self.params.get("lstm_b").unwrap(),
        };
        Ok(lstm_forward(&w, &inputs).into_iter().map(KeyVector).collect())
    }

    /// Key of the full record sequence.
    pub fn encode_key(&self, records: &[IndexedCheckIn]) -> Result<KeyVector> {
        Ok(self.encode_prefix_keys(records)?.pop().unwrap())
    }

    /// Park the frozen parameters in a checkpoint file.
    pub fn save_params(&self, path: &std::path::Path) -> Result<()> {
        self.params.save(path)
    }
}

/// Re-create the encoder's tensors from a checkpoint, keeping config and
/// statistics supplied externally.
pub fn encoder_from_checkpoint(
    cfg: KeyEncoderConfig,
    grid: &GridSpec,
    minmax: CoordMinMax,
    n_raw: usize,
    n_derived: usize,
    path: &std::path::Path,
) -> Result<KeyEncoder> {
    let seed = ParameterSet::load(path)?.seed();
    let mut enc = KeyEncoder::new(cfg, grid, minmax, n_raw, n_derived, seed)?;
    enc.params = ParameterSet::load(path)?;
    Ok(enc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_encoder(seed: u64) -> KeyEncoder {
        let grid = GridSpec::new(0.0, 1.0, 0.0, 1.0, 4, 4).unwrap();
        let minmax = CoordMinMax {
            min_lat: 0.0,
            max_lat: 1.0,
            min_lon: 0.0,
            max_lon: 1.0,
        };
        KeyEncoder::new(KeyEncoderConfig::default(), &grid, minmax, 5, 3, seed).unwrap()
    }

    fn rec(lat: f64, lon: f64, ts: i64, region: u32, raw: u32, der: u32) -> IndexedCheckIn {
        IndexedCheckIn {
            user: 0,
            poi: 0,
            lat,
            lon,
            timestamp: ts,
            region,
            raw_category: raw,
            derived_category: der,
        }
    }

    #[test]
    fn geography_extremes() {
        let enc = test_encoder(1);
        let at_min = enc.embed_geography(0.0, 0.0, 0).unwrap();
        let b = enc.params.get("coord_b").unwrap().data();
        assert_eq!(&at_min[..EMBED_DIM], b);
        assert_eq!(at_min.len(), 32);
        // max corner: l_norm = (1,1) -> coord part = W.[1,1] + b
        let at_max = enc.embed_geography(1.0, 1.0, 15).unwrap();
        let w = enc.params.get("coord_w").unwrap();
        for i in 0..EMBED_DIM {
            let expect = w.data()[2 * i] + w.data()[2 * i + 1] + b[i];
            assert!((at_max[i] - expect).abs() < 1e-12);
        }
        assert!(enc.embed_geography(0.5, 0.5, 99).is_err());
    }

    #[test]
    fn time_embedding_periodic_structure() {
        let enc = test_encoder(2);
        // Midnight: sin = 0, cos = 1 for every frequency.
        let midnight = enc.embed_time(SECONDS_PER_DAY * 10);
        assert_eq!(midnight.len(), 38);
        let periodic = &midnight[32..];
        for pair in periodic.chunks(2) {
            assert!(pair[0].abs() < 1e-12);
            assert!((pair[1] - 1.0).abs() < 1e-12);
        }
        // Noon at frequency 1: sin = 0, cos = -1.
        let noon = enc.embed_time(SECONDS_PER_DAY * 10 + SECONDS_PER_DAY / 2);
        assert!(noon[32].abs() < 1e-10);
        assert!((noon[33] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn time_embedding_repeats_across_days() {
        let enc = test_encoder(3);
        let t = 5 * 3600 + 123;
        let a = enc.embed_time(t);
        let b = enc.embed_time(t + 7 * SECONDS_PER_DAY);
        // Same weekday, same second of day: identical embedding.
        assert_eq!(a, b);
        let c = enc.embed_time(t + SECONDS_PER_DAY);
        // Different weekday: discrete part differs, periodic part matches.
        assert_eq!(&a[32..], &c[32..]);
        assert_ne!(&a[16..32], &c[16..32]);
    }

    #[test]
    fn category_embedding_shares_derived_half() {
        let enc = test_encoder(4);
        let a = enc.embed_category(0, 2).unwrap();
        let b = enc.embed_category(1, 2).unwrap();
        assert_eq!(a.len(), 32);
        assert_eq!(&a[16..], &b[16..]);
        assert_ne!(&a[..16], &b[..16]);
        assert!(enc.embed_category(9, 0).is_err());
    }

    #[test]
    fn keys_are_deterministic_and_order_sensitive() {
        let enc = test_encoder(5);
        let r1 = rec(0.2, 0.3, 1_000_000, 1, 0, 0);
        let r2 = rec(0.8, 0.9, 2_000_000, 14, 3, 2);
        let k_a = enc.encode_key(&[r1.clone(), r2.clone()]).unwrap();
        let k_b = enc.encode_key(&[r1.clone(), r2.clone()]).unwrap();
        assert_eq!(k_a, k_b);
        let k_swapped = enc.encode_key(&[r2, r1]).unwrap();
        assert_ne!(k_a, k_swapped);
        assert_eq!(k_a.dim(), 64);
        assert!(k_a.as_slice().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn final_record_category_changes_key() {
        let enc = test_encoder(6);
        let r1 = rec(0.2, 0.3, 1_000_000, 1, 0, 0);
        let mut r2 = rec(0.8, 0.9, 2_000_000, 14, 3, 2);
        let k_a = enc.encode_key(&[r1.clone(), r2.clone()]).unwrap();
        r2.raw_category = 4;
        let k_b = enc.encode_key(&[r1, r2]).unwrap();
        assert_ne!(k_a, k_b);
    }

    #[test]
    fn empty_trajectory_errors() {
        let enc = test_encoder(7);
        assert!(enc.encode_key(&[]).is_err());
    }

    #[test]
    fn same_seed_rebuilds_identical_encoder() {
        let a = test_encoder(11);
        let b = test_encoder(11);
        let r = rec(0.4, 0.6, 3_000_000, 5, 2, 1);
        assert_eq!(
            a.encode_key(&[r.clone(), r.clone()]).unwrap(),
            b.encode_key(&[r.clone(), r]).unwrap()
        );
    }
}
