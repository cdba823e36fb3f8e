//! Integer vocabularies over the filtered dataset plus the indexed trajectory
//! form consumed by the models. Vocabularies are built once over the full
//! filtered stream so score-vector dimensions stay fixed across every block.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::ingest::{assign_region, map_category, CategoryMap, CheckIn, GridSpec, Trajectory};

/// String-to-id interner preserving first-seen order.
#[derive(Clone, Debug, Default)]
pub struct Interner {
    ids: IndexMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, s: &str) -> u32 {
        if let Some(id) = self.ids.get(s) {
            return *id;
        }
        let id = self.ids.len() as u32;
        self.ids.insert(s.to_string(), id);
        id
    }

    pub fn get(&self, s: &str) -> Option<u32> {
        self.ids.get(s).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.ids.get_index(id as usize).map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// All id spaces of one experiment, fixed before blocking.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    pub users: Interner,
    pub pois: Interner,
    pub raw_categories: Interner,
    pub derived_categories: Interner,
    pub grid: GridSpec,
}

impl Vocabulary {
    /// Build id spaces from the full filtered stream, a grid resolution, and
    /// the category map.
    pub fn build(
        checkins: &[CheckIn],
        cmap: &CategoryMap,
        grid_rows: usize,
        grid_cols: usize,
    ) -> Result<Self> {
        let grid = GridSpec::bbox_of(checkins, grid_rows, grid_cols)?;
        let mut v = Vocabulary {
            users: Interner::default(),
            pois: Interner::default(),
            raw_categories: Interner::default(),
            derived_categories: Interner::default(),
            grid,
        };
        for c in checkins {
            v.users.intern(&c.user_id);
            v.pois.intern(&c.poi_id);
            v.raw_categories.intern(&c.raw_category);
            v.derived_categories.intern(map_category(&c.raw_category, cmap));
        }
        Ok(v)
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_pois(&self) -> usize {
        self.pois.len()
    }
}

/// A check-in with every categorical attribute resolved to an id.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexedCheckIn {
    pub user: u32,
    pub poi: u32,
    pub lat: f64,
    pub lon: f64,
    pub timestamp: i64,
    pub region: u32,
    pub raw_category: u32,
    pub derived_category: u32,
}

/// Indexed counterpart of [`Trajectory`].
#[derive(Clone, Debug, PartialEq)]
pub struct IndexedTrajectory {
    pub user: u32,
    pub records: Vec<IndexedCheckIn>,
}

impl IndexedTrajectory {
    pub fn last_timestamp(&self) -> i64 {
        self.records.last().map(|r| r.timestamp).unwrap_or(0)
    }

    /// The first `len` records as a borrowed prefix trajectory.
    pub fn prefix(&self, len: usize) -> IndexedTrajectory {
        IndexedTrajectory {
            user: self.user,
            records: self.records[..len].to_vec(),
        }
    }
}

/// Resolve a trajectory against the vocabularies. Fails on ids outside the
/// vocabulary; the pipeline builds vocabularies over the full dataset so this
/// only triggers on misuse.
pub fn index_trajectory(
    t: &Trajectory,
    vocab: &Vocabulary,
    cmap: &CategoryMap,
) -> Result<IndexedTrajectory> {
    let user = vocab
        .users
        .get(&t.user_id)
        .ok_or_else(|| Error::Data(format!("unknown user {:?}", t.user_id)))?;
    let mut records = Vec::with_capacity(t.records.len());
    for c in &t.records {
        let poi = vocab
            .pois
            .get(&c.poi_id)
            .ok_or_else(|| Error::Data(format!("unknown POI {:?}", c.poi_id)))?;
        let raw = vocab
            .raw_categories
            .get(&c.raw_category)
            .ok_or_else(|| Error::Data(format!("unknown category {:?}", c.raw_category)))?;
        let der_label = map_category(&c.raw_category, cmap);
        let der = vocab
            .derived_categories
            .get(der_label)
            .ok_or_else(|| Error::Data(format!("unknown derived category {der_label:?}")))?;
        let region = assign_region(c.lat, c.lon, &vocab.grid)? as u32;
        records.push(IndexedCheckIn {
            user,
            poi,
            lat: c.lat,
            lon: c.lon,
            timestamp: c.timestamp,
            region,
            raw_category: raw,
            derived_category: der,
        });
    }
    Ok(IndexedTrajectory { user, records })
}

pub fn index_trajectories(
    ts: &[Trajectory],
    vocab: &Vocabulary,
    cmap: &CategoryMap,
) -> Result<Vec<IndexedTrajectory>> {
    ts.iter().map(|t| index_trajectory(t, vocab, cmap)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interner_is_first_seen_ordered() {
        let mut i = Interner::default();
        assert_eq!(i.intern("b"), 0);
        assert_eq!(i.intern("a"), 1);
        assert_eq!(i.intern("b"), 0);
        assert_eq!(i.name(1), Some("a"));
    }

    #[test]
    fn indexing_unknown_poi_fails() {
        let events = vec![CheckIn {
            user_id: "u".into(),
            poi_id: "p".into(),
            lat: 40.0,
            lon: -74.0,
            timestamp: 10,
            raw_category: "c".into(),
        }];
        let cmap = CategoryMap::identity();
        let vocab = Vocabulary::build(&events, &cmap, 4, 4).unwrap();
        let t = Trajectory {
            user_id: "u".into(),
            records: vec![CheckIn {
                poi_id: "other".into(),
                ..events[0].clone()
            }],
        };
        assert!(index_trajectory(&t, &vocab, &cmap).is_err());
    }
}
