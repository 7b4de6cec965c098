//! Synthetic check-in populations with controllable behavioral diversity.
//!
//! Users come in two groups: routine users spread their visits over a few
//! categories, explorers over many. Each category has a preferred hour of
//! day, and POI choice favors the nearest venues of the chosen category
//! around the user's current position, so time slots, geography and
//! per-user history all carry signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};
use serde::{Deserialize, Serialize};

use super::{CheckinRecord, IdMap, TimeSlots, Vocab, SECONDS_PER_DAY};
use crate::error::{Error, Result};

pub const KM_PER_DEGREE_LAT: f64 = crate::hypergraph::EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// Monday 2012-04-02 00:00:00 UTC.
const BASE_TIMESTAMP: i64 = 1_333_324_800;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_pois: usize,
    pub n_categories: usize,
    pub grid_extent_km: f64,
    /// Share of low-entropy users.
    pub fraction_routine: f64,
    pub routine_category_count: usize,
    pub explorer_category_count: usize,
    pub days_per_user: usize,
    pub min_checkins_per_day: usize,
    pub max_checkins_per_day: usize,
    /// Candidate pool size for the nearest-in-category choice.
    pub nearest_k: usize,
    /// Probability of picking a uniformly random POI of the category instead.
    pub choice_noise: f64,
    /// Std-dev in hours around a category's preferred hour.
    pub hour_jitter: f64,
    /// Ignore categories and geography entirely: every visit is a uniform POI draw.
    pub uniform_choice: bool,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 200,
            n_pois: 300,
            n_categories: 20,
            grid_extent_km: 10.0,
            fraction_routine: 0.64,
            routine_category_count: 2,
            explorer_category_count: 8,
            days_per_user: 12,
            min_checkins_per_day: 3,
            max_checkins_per_day: 6,
            nearest_k: 3,
            choice_noise: 0.1,
            hour_jitter: 1.0,
            uniform_choice: false,
            origin_lat: 40.75,
            origin_lon: -73.98,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_users == 0 || self.n_pois == 0 || self.n_categories == 0 {
            return bad("synthetic populations need users, POIs and categories".into());
        }
        if self.routine_category_count == 0 || self.routine_category_count >= self.explorer_category_count {
            return bad(format!(
                "routine_category_count ({}) must be positive and below explorer_category_count ({})",
                self.routine_category_count, self.explorer_category_count
            ));
        }
        if self.n_categories < self.explorer_category_count {
            return bad(format!(
                "n_categories ({}) is smaller than explorer_category_count ({})",
                self.n_categories, self.explorer_category_count
            ));
        }
        if !(0.0..=1.0).contains(&self.fraction_routine) || !(0.0..=1.0).contains(&self.choice_noise) {
            return bad("fractions must lie in [0, 1]".into());
        }
        if self.min_checkins_per_day == 0 || self.min_checkins_per_day > self.max_checkins_per_day {
            return bad("need 0 < min_checkins_per_day <= max_checkins_per_day".into());
        }
        if self.days_per_user == 0 || self.nearest_k == 0 || !(self.grid_extent_km > 0.0) {
            return bad("days_per_user, nearest_k and grid_extent_km must be positive".into());
        }
        if self.hour_jitter < 0.0 || !crate::data::valid_coords(self.origin_lat, self.origin_lon) {
            return bad("hour_jitter must be non-negative and the origin a valid coordinate".into());
        }
        Ok(())
    }

    pub fn routine_user_count(&self) -> usize {
        (self.fraction_routine * self.n_users as f64).round() as usize
    }
}

/// Generated data plus the population label of every user (`true` = routine).
pub struct SyntheticData {
    pub vocab: Vocab,
    pub records: Vec<CheckinRecord>,
    pub routine: Vec<bool>,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Vocab, Vec<CheckinRecord>)> {
    let data = generate_labeled(cfg)?;
    Ok((data.vocab, data.records))
}

pub fn generate_labeled(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let slots = TimeSlots::default();
    let km_per_deg_lon = KM_PER_DEGREE_LAT * cfg.origin_lat.to_radians().cos();

    let positions: Vec<(f64, f64)> = (0..cfg.n_pois)
        .map(|_| {
            (
                rng.gen_range(0.0..cfg.grid_extent_km),
                rng.gen_range(0.0..cfg.grid_extent_km),
            )
        })
        .collect();
    let poi_category: Vec<usize> = (0..cfg.n_pois).map(|p| p % cfg.n_categories).collect();
    let mut by_category: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_categories];
    for (p, &c) in poi_category.iter().enumerate() {
        by_category[c].push(p);
    }
    let preferred_hour: Vec<f64> = (0..cfg.n_categories)
        .map(|c| 7.0 + 15.0 * c as f64 / cfg.n_categories as f64)
        .collect();

    let mut routine = vec![false; cfg.n_users];
    routine[..cfg.routine_user_count()].iter_mut().for_each(|r| *r = true);
    routine.shuffle(&mut rng);

    let jitter = Normal::new(0.0, cfg.hour_jitter.max(1e-9)).expect("finite std-dev");
    let mut records = Vec::new();
    for (user, &is_routine) in routine.iter().enumerate() {
        let breadth = if is_routine {
            cfg.routine_category_count
        } else {
            cfg.explorer_category_count
        };
        let categories: Vec<usize> = rand::seq::index::sample(&mut rng, cfg.n_categories, breadth).into_vec();
        let weights: Vec<f64> = (0..breadth).map(|_| rng.gen_range(0.5..1.5)).collect();
        let pick_category = WeightedIndex::new(&weights).expect("positive weights");
        let home = (
            rng.gen_range(0.0..cfg.grid_extent_km),
            rng.gen_range(0.0..cfg.grid_extent_km),
        );
        let first_day = rng.gen_range(0..7) as i64;

        for day in 0..cfg.days_per_user as i64 {
            let count = rng.gen_range(cfg.min_checkins_per_day..=cfg.max_checkins_per_day);
            let mut visits: Vec<(f64, usize)> = (0..count)
                .map(|_| {
                    let c = categories[pick_category.sample(&mut rng)];
                    let hour = (preferred_hour[c] + jitter.sample(&mut rng)).clamp(0.0, 23.99);
                    (hour, c)
                })
                .collect();
            visits.sort_by(|a, b| a.0.total_cmp(&b.0));

            let day_start = BASE_TIMESTAMP + (first_day + day) * SECONDS_PER_DAY;
            let mut here = home;
            let mut last_ts = i64::MIN;
            for (hour, c) in visits {
                let poi = if cfg.uniform_choice {
                    rng.gen_range(0..cfg.n_pois)
                } else if by_category[c].is_empty() {
                    continue;
                } else if rng.gen_bool(cfg.choice_noise) {
                    *by_category[c].choose(&mut rng).expect("non-empty")
                } else {
                    let mut near = by_category[c].clone();
                    near.sort_by(|&a, &b| {
                        planar_dist(positions[a], here)
                            .total_cmp(&planar_dist(positions[b], here))
                            .then(a.cmp(&b))
                    });
                    near.truncate(cfg.nearest_k);
                    *near.choose(&mut rng).expect("non-empty")
                };
                here = positions[poi];
                let ts = (day_start + (hour * 3600.0) as i64).max(last_ts + 1);
                last_ts = ts;
                let (lat, lon) = to_lat_lon(cfg, positions[poi], km_per_deg_lon);
                records.push(CheckinRecord {
                    user,
                    poi,
                    category: poi_category[poi],
                    lat,
                    lon,
                    timestamp: ts,
                    time_slot: slots.slot_of(ts, 0),
                    tz_offset_min: 0,
                });
            }
        }
    }

    let vocab = Vocab {
        users: IdMap::from((0..cfg.n_users).map(|u| format!("u{u}")).collect::<Vec<_>>()),
        pois: IdMap::from((0..cfg.n_pois).map(|p| format!("p{p}")).collect::<Vec<_>>()),
        categories: IdMap::from((0..cfg.n_categories).map(|c| format!("c{c}")).collect::<Vec<_>>()),
        category_names: (0..cfg.n_categories).map(|c| format!("category-{c}")).collect(),
        poi_category,
        poi_coords: positions
            .iter()
            .map(|&xy| to_lat_lon(cfg, xy, km_per_deg_lon))
            .collect(),
        slots,
    };
    Ok(SyntheticData {
        vocab,
        records,
        routine,
    })
}

fn planar_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn to_lat_lon(cfg: &SynthConfig, (x, y): (f64, f64), km_per_deg_lon: f64) -> (f64, f64) {
    (cfg.origin_lat + y / KM_PER_DEGREE_LAT, cfg.origin_lon + x / km_per_deg_lon)
}
