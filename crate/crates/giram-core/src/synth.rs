//! Synthetic check-in generator with planted persistent interests, per-period
//! trending POIs, preference drift, and uniform noise. Persistent POIs are
//! bound to stable coordinates and time-of-day habits, and each user's
//! persistent set splits into a daytime and an evening sub-profile; only one
//! sub-profile is active in a given period. Interests therefore recur across
//! periods instead of being a fixed stream, which is the phenomenon a
//! sustained-interest memory is supposed to exploit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CheckIn, SECONDS_PER_DAY};
use crate::rng::derive;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_users: usize,
    pub n_pois: usize,
    /// Number of generator periods; the stream spans `n_blocks` consecutive
    /// windows of `period_days` each.
    pub n_blocks: usize,
    pub events_per_user_per_block: usize,
    /// Size of each user's persistent POI set.
    pub persistent_per_user: usize,
    /// Size of the per-period trending POI set.
    pub trending_per_block: usize,
    /// Probability that a user's persistent set is resampled at a period
    /// boundary.
    pub drift_rate: f64,
    /// Probability that an event ignores preferences entirely.
    pub noise_rate: f64,
    /// Probability that a non-noise event comes from the persistent set
    /// (otherwise it follows the period's trend).
    pub persistent_weight: f64,
    /// Half-width of the per-user spread around `persistent_weight`;
    /// nonzero values mix habitual users with trend followers.
    pub persistent_weight_spread: f64,
    pub period_days: f64,
    pub start_timestamp: i64,
    pub n_raw_categories: usize,
    pub n_derived_categories: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_users: 100,
            n_pois: 200,
            n_blocks: 6,
            events_per_user_per_block: 10,
            persistent_per_user: 6,
            trending_per_block: 10,
            drift_rate: 0.2,
            noise_rate: 0.1,
            persistent_weight: 0.65,
            persistent_weight_spread: 0.0,
            period_days: 14.0,
            start_timestamp: 1_600_000_000,
            n_raw_categories: 24,
            n_derived_categories: 8,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("drift_rate", self.drift_rate),
            ("noise_rate", self.noise_rate),
            ("persistent_weight", self.persistent_weight),
            ("persistent_weight_spread", self.persistent_weight_spread),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("n_users", self.n_users),
            ("n_pois", self.n_pois),
            ("n_blocks", self.n_blocks),
            ("events_per_user_per_block", self.events_per_user_per_block),
            ("persistent_per_user", self.persistent_per_user),
            ("trending_per_block", self.trending_per_block),
            ("n_raw_categories", self.n_raw_categories),
            ("n_derived_categories", self.n_derived_categories),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.period_days <= 0.0 {
            return Err(Error::Config("period_days must be positive".into()));
        }
        if self.start_timestamp <= 0 {
            return Err(Error::Config("start_timestamp must be positive".into()));
        }
        if self.persistent_per_user > self.n_pois || self.trending_per_block > self.n_pois {
            return Err(Error::Config("preference sets larger than POI universe".into()));
        }
        Ok(())
    }
}

/// Fixed attributes of one synthetic POI.
struct PoiProfile {
    lat: f64,
    lon: f64,
    raw_category: usize,
    /// Preferred hour of day, used for persistent-set visits.
    preferred_hour: f64,
}

const BBOX: (f64, f64, f64, f64) = (40.0, 40.5, -74.2, -73.7);

fn poi_profiles(spec: &SynthSpec) -> Vec<PoiProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(spec.seed, &[1]));
    (0..spec.n_pois)
        .map(|_| PoiProfile {
            lat: rng.random_range(BBOX.0..BBOX.1),
            lon: rng.random_range(BBOX.2..BBOX.3),
            raw_category: rng.random_range(0..spec.n_raw_categories),
            preferred_hour: *[8.0, 12.0, 18.0, 22.0]
                .iter()
                .nth(rng.random_range(0..4))
                .unwrap(),
        })
        .collect()
}

fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, upper: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(n);
    while chosen.len() < n {
        let c = rng.random_range(0..upper);
        if !chosen.contains(&c) {
            chosen.push(c);
        }
    }
    chosen
}

/// Raw category label for an index.
pub fn category_label(idx: usize) -> String {
    format!("cat_{idx:02}")
}

/// Derived group label for a raw category index.
pub fn derived_label(raw_idx: usize, n_raw: usize, n_derived: usize) -> String {
    let per = n_raw.div_ceil(n_derived);
    format!("group_{}", raw_idx / per)
}

/// The raw-to-derived category map rows that pair with [`generate`]'s output.
pub fn category_map_rows(spec: &SynthSpec) -> Vec<(String, String)> {
    (0..spec.n_raw_categories)
        .map(|i| {
            (
                category_label(i),
                derived_label(i, spec.n_raw_categories, spec.n_derived_categories),
            )
        })
        .collect()
}

/// Generate the full check-in stream, sorted by timestamp. Event counts
/// match the spec exactly: `n_users * n_blocks * events_per_user_per_block`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<CheckIn>> {
    spec.validate()?;
    let pois = poi_profiles(spec);
    let period_secs = (spec.period_days * SECONDS_PER_DAY as f64) as i64;

    // Per-period trending sets, shared across users.
    let trending: Vec<Vec<usize>> = (0..spec.n_blocks)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive(spec.seed, &[2, b as u64]));
            sample_distinct(&mut rng, spec.trending_per_block, spec.n_pois)
        })
        .collect();

    let hour_jitter = Normal::new(0.0, 0.75).unwrap();
    let mut events = Vec::with_capacity(spec.n_users * spec.n_blocks * spec.events_per_user_per_block);
    for user in 0..spec.n_users {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(spec.seed, &[3, user as u64]));
        let mut persistent = sample_distinct(&mut rng, spec.persistent_per_user, spec.n_pois);
        let user_weight = (spec.persistent_weight
            + rng.random_range(-spec.persistent_weight_spread..=spec.persistent_weight_spread))
        .clamp(0.0, 1.0);
        for block in 0..spec.n_blocks {
            if block > 0 && rng.random_range(0.0..1.0) < spec.drift_rate {
                // A preference shift replaces half of the persistent set.
                for _ in 0..spec.persistent_per_user.div_ceil(2) {
                    let slot = rng.random_range(0..persistent.len());
                    loop {
                        let cand = rng.random_range(0..spec.n_pois);
                        if !persistent.contains(&cand) {
                            persistent[slot] = cand;
                            break;
                        }
                    }
                }
            }
            // One sub-profile is active per period: daytime POIs or evening
            // POIs. Recurring regimes are what makes older memory entries
            // worth retrieving later.
            let day_regime = rng.random_range(0.0..1.0) < 0.5;
            let active: Vec<usize> = {
                let subset: Vec<usize> = persistent
                    .iter()
                    .copied()
                    .filter(|p| (pois[*p].preferred_hour < 15.0) == day_regime)
                    .collect();
                if subset.is_empty() {
                    persistent.clone()
                } else {
                    subset
                }
            };
            let block_start = spec.start_timestamp + block as i64 * period_secs;
            for _ in 0..spec.events_per_user_per_block {
                let roll: f64 = rng.random_range(0.0..1.0);
                let (poi_idx, timed) = if roll < spec.noise_rate {
                    (rng.random_range(0..spec.n_pois), false)
                } else if rng.random_range(0.0..1.0) < user_weight {
                    (active[rng.random_range(0..active.len())], true)
                } else {
                    (trending[block][rng.random_range(0..trending[block].len())], false)
                };
                let day = rng.random_range(0..spec.period_days.ceil() as i64);
                let second = if timed {
                    // Persistent habits happen near the POI's preferred hour.
                    let h = (pois[poi_idx].preferred_hour + hour_jitter.sample(&mut rng))
                        .rem_euclid(24.0);
                    (h * 3600.0) as i64
                } else {
                    rng.random_range(0..SECONDS_PER_DAY)
                };
                let ts = block_start + day * SECONDS_PER_DAY + second;
                events.push(CheckIn {
                    user_id: format!("u{user:04}"),
                    poi_id: format!("p{poi_idx:04}"),
                    lat: pois[poi_idx].lat,
                    lon: pois[poi_idx].lon,
                    timestamp: ts,
                    raw_category: category_label(pois[poi_idx].raw_category),
                });
            }
        }
    }
    events.sort_by_key(|c| c.timestamp);
    Ok(events)
}
