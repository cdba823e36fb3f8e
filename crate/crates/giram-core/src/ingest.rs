//! Check-in loading, sparsity filtering, temporal block partitioning, weekly
//! trajectory construction, grid regions, and category mapping.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SECONDS_PER_WEEK: i64 = 7 * SECONDS_PER_DAY;

/// One check-in event: a user visiting a POI at a point in time.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckIn {
    pub user_id: String,
    pub poi_id: String,
    pub lat: f64,
    pub lon: f64,
    /// Seconds since epoch, UTC, strictly positive.
    pub timestamp: i64,
    pub raw_category: String,
}

impl CheckIn {
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::Validation(format!("latitude {} out of range", self.lat)));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Validation(format!(
                "longitude {} out of range",
                self.lon
            )));
        }
        if self.timestamp <= 0 {
            return Err(Error::Validation(format!(
                "timestamp {} must be strictly positive",
                self.timestamp
            )));
        }
        Ok(())
    }
}

/// A user's time-ordered check-ins within one bucketing window; always at
/// least two records.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub user_id: String,
    pub records: Vec<CheckIn>,
}

/// One temporal partition of the stream. `trajectories` is populated by
/// [`build_trajectories`]; partitioning itself only assigns check-ins.
#[derive(Clone, Debug, Default)]
pub struct DataBlock {
    /// Block ordinal; 0 is the base block.
    pub index: usize,
    pub checkins: Vec<CheckIn>,
    pub trajectories: Vec<Trajectory>,
    /// Inclusive [start, end] timestamps covering every event in the block.
    pub time_span: (i64, i64),
}

impl DataBlock {
    fn from_events(index: usize, checkins: Vec<CheckIn>) -> Self {
        let start = checkins.first().map(|c| c.timestamp).unwrap_or(0);
        let end = checkins.last().map(|c| c.timestamp).unwrap_or(0);
        DataBlock {
            index,
            checkins,
            trajectories: Vec::new(),
            time_span: (start, end),
        }
    }
}

/// Uniform lat/lon grid over a bounding box.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(
        min_lat: f64,
        max_lat: f64,
        min_lon: f64,
        max_lon: f64,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config("grid needs at least one row and column".into()));
        }
        if min_lat >= max_lat || min_lon >= max_lon {
            return Err(Error::Config("grid bbox min must be below max".into()));
        }
        Ok(GridSpec {
            min_lat,
            max_lat,
            min_lon,
            max_lon,
            rows,
            cols,
        })
    }

    /// Bounding box of a set of check-ins.
    pub fn bbox_of(checkins: &[CheckIn], rows: usize, cols: usize) -> Result<Self> {
        if checkins.is_empty() {
            return Err(Error::Data("cannot build a grid over no check-ins".into()));
        }
        let mut min_lat = f64::INFINITY;
        let mut max_lat = f64::NEG_INFINITY;
        let mut min_lon = f64::INFINITY;
        let mut max_lon = f64::NEG_INFINITY;
        for c in checkins {
            min_lat = min_lat.min(c.lat);
            max_lat = max_lat.max(c.lat);
            min_lon = min_lon.min(c.lon);
            max_lon = max_lon.max(c.lon);
        }
        // Degenerate extents (single point) get a tiny pad so the box stays
        // a box.
        if min_lat == max_lat {
            max_lat += 1e-9;
        }
        if min_lon == max_lon {
            max_lon += 1e-9;
        }
        GridSpec::new(min_lat, max_lat, min_lon, max_lon, rows, cols)
    }

    pub fn num_regions(&self) -> usize {
        self.rows * self.cols
    }
}

/// Raw-to-derived category mapping with identity fallback for unmapped
/// labels.
#[derive(Clone, Debug, Default)]
pub struct CategoryMap {
    mapping: HashMap<String, String>,
}

impl CategoryMap {
    pub fn identity() -> Self {
        CategoryMap::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        CategoryMap {
            mapping: pairs.into_iter().collect(),
        }
    }

    /// Two-column CSV `raw,derived`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let mut mapping = HashMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                line: i + 2,
                msg: e.to_string(),
            })?;
            if rec.len() != 2 {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: format!("expected 2 columns, got {}", rec.len()),
                });
            }
            mapping.insert(rec[0].to_string(), rec[1].to_string());
        }
        Ok(CategoryMap { mapping })
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }
}

/// Parse the check-in CSV (`user_id,poi_id,lat,lon,timestamp,category`) and
/// return events sorted by timestamp.
pub fn load_checkins(path: &Path) -> Result<Vec<CheckIn>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2; // header is line 1
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() != 6 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 6 columns, got {}", rec.len()),
            });
        }
        let parse_f64 = |s: &str, field: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad {field}: {s:?}"),
            })
        };
        let ts: i64 = rec[4].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad timestamp: {:?}", &rec[4]),
        })?;
        let c = CheckIn {
            user_id: rec[0].to_string(),
            poi_id: rec[1].to_string(),
            lat: parse_f64(&rec[2], "latitude")?,
            lon: parse_f64(&rec[3], "longitude")?,
            timestamp: ts,
            raw_category: rec[5].to_string(),
        };
        c.validate()?;
        out.push(c);
    }
    out.sort_by_key(|c| c.timestamp);
    Ok(out)
}

/// Write check-ins in the standard CSV schema.
pub fn write_checkins(path: &Path, checkins: &[CheckIn]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_record(["user_id", "poi_id", "lat", "lon", "timestamp", "category"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for c in checkins {
        w.write_record([
            c.user_id.as_str(),
            c.poi_id.as_str(),
            &format!("{}", c.lat),
            &format!("{}", c.lon),
            &format!("{}", c.timestamp),
            c.raw_category.as_str(),
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Drop check-ins of POIs with fewer than `min_count` occurrences, then drop
/// check-ins of users with fewer than `min_count` occurrences in the
/// remainder. Single pass, POIs first.
pub fn filter_sparse(checkins: &[CheckIn], min_count: usize) -> Vec<CheckIn> {
    assert!(min_count >= 1, "min_count must be at least 1");
    let mut poi_counts: HashMap<&str, usize> = HashMap::new();
    for c in checkins {
        *poi_counts.entry(&c.poi_id).or_default() += 1;
    }
    let after_poi: Vec<&CheckIn> = checkins
        .iter()
        .filter(|c| poi_counts[c.poi_id.as_str()] >= min_count)
        .collect();
    let mut user_counts: HashMap<&str, usize> = HashMap::new();
    for c in &after_poi {
        *user_counts.entry(&c.user_id).or_default() += 1;
    }
    after_poi
        .into_iter()
        .filter(|c| user_counts[c.user_id.as_str()] >= min_count)
        .cloned()
        .collect()
}

/// Split time-sorted check-ins into the base block (earliest 50% by count)
/// and `n_blocks` contiguous incremental blocks of equal count, remainder
/// events going to the last block.
pub fn partition_blocks(
    checkins: &[CheckIn],
    n_blocks: usize,
) -> Result<(DataBlock, Vec<DataBlock>)> {
    if n_blocks == 0 {
        return Err(Error::Config("need at least one incremental block".into()));
    }
    if checkins.len() < 2 * n_blocks {
        return Err(Error::Config(format!(
            "{} check-ins cannot fill a base block plus {} incremental blocks",
            checkins.len(),
            n_blocks
        )));
    }
    debug_assert!(checkins.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    let base_len = checkins.len() / 2;
    let base = DataBlock::from_events(0, checkins[..base_len].to_vec());
    let rest = &checkins[base_len..];
    let per = rest.len() / n_blocks;
    let mut blocks = Vec::with_capacity(n_blocks);
    for i in 0..n_blocks {
        let start = i * per;
        let end = if i + 1 == n_blocks {
            rest.len()
        } else {
            (i + 1) * per
        };
        blocks.push(DataBlock::from_events(i + 1, rest[start..end].to_vec()));
    }
    Ok((base, blocks))
}

/// Bucket a block's check-ins per user into consecutive windows of
/// `interval_secs` anchored at the block's span start; buckets with a single
/// check-in are discarded.
pub fn build_trajectories(block: &DataBlock, interval_secs: i64) -> Vec<Trajectory> {
    assert!(interval_secs > 0, "interval must be positive");
    let anchor = block.time_span.0;
    // (user, bucket) -> records, keyed deterministically.
    let mut buckets: HashMap<(&str, i64), Vec<&CheckIn>> = HashMap::new();
    for c in &block.checkins {
        let b = (c.timestamp - anchor).div_euclid(interval_secs);
        buckets.entry((c.user_id.as_str(), b)).or_default().push(c);
    }
    let mut keys: Vec<(&str, i64)> = buckets.keys().cloned().collect();
    keys.sort();
    let mut out = Vec::new();
    for key in keys {
        let recs = &buckets[&key];
        if recs.len() < 2 {
            continue;
        }
        let mut records: Vec<CheckIn> = recs.iter().map(|c| (*c).clone()).collect();
        records.sort_by_key(|c| c.timestamp);
        out.push(Trajectory {
            user_id: key.0.to_string(),
            records,
        });
    }
    out
}

/// Seeded uniform shuffle of the block's trajectories; first half becomes
/// validation (odd counts give validation the extra one), second half test.
pub fn split_val_test(block: &DataBlock, seed: u64) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    if block.trajectories.is_empty() {
        return Err(Error::Data(format!(
            "block {} has no trajectories to split",
            block.index
        )));
    }
    let mut idx: Vec<usize> = (0..block.trajectories.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let val_len = idx.len().div_ceil(2);
    let val = idx[..val_len]
        .iter()
        .map(|&i| block.trajectories[i].clone())
        .collect();
    let test = idx[val_len..]
        .iter()
        .map(|&i| block.trajectories[i].clone())
        .collect();
    Ok((val, test))
}

/// Map a coordinate to its grid cell: `row * cols + col`, boundary maxima
/// clamped into the last cell.
pub fn assign_region(lat: f64, lon: f64, grid: &GridSpec) -> Result<usize> {
    if lat < grid.min_lat || lat > grid.max_lat || lon < grid.min_lon || lon > grid.max_lon {
        return Err(Error::Validation(format!(
            "point ({lat}, {lon}) outside grid bbox"
        )));
    }
    let row_f = (lat - grid.min_lat) / (grid.max_lat - grid.min_lat) * grid.rows as f64;
    let col_f = (lon - grid.min_lon) / (grid.max_lon - grid.min_lon) * grid.cols as f64;
    let row = (row_f as usize).min(grid.rows - 1);
    let col = (col_f as usize).min(grid.cols - 1);
    Ok(row * grid.cols + col)
}

/// Derived category for a raw label; unmapped labels pass through unchanged.
pub fn map_category<'a>(raw: &'a str, cmap: &'a CategoryMap) -> &'a str {
    cmap.mapping.get(raw).map(String::as_str).unwrap_or(raw)
}
