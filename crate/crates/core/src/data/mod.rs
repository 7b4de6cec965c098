//! Check-in records, daily sessions, meta-learning tasks and synthetic
//! populations.

mod dataset;
mod ingest;
mod session;
mod synth;
mod tasks;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use dataset::{read_dataset, write_dataset, DatasetHeader};
pub use ingest::{ingest_checkins, parse_checkins, InputFormat};
pub use session::{split_sessions, SessionConfig, SessionSplit};
pub use synth::{generate_labeled, generate_synthetic, SynthConfig, SyntheticData};
pub use tasks::{build_meta_tasks, Instance, MetaTask, TaskBuild};

pub type UserId = usize;
pub type PoiId = usize;
pub type CategoryId = usize;
pub type SlotId = usize;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// One check-in event with dense ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckinRecord {
    pub user: UserId,
    pub poi: PoiId,
    pub category: CategoryId,
    pub lat: f64,
    pub lon: f64,
    /// UTC seconds.
    pub timestamp: i64,
    pub time_slot: SlotId,
    #[serde(default)]
    pub tz_offset_min: i32,
}

/// A user's temporally ordered check-ins within one session.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub user: UserId,
    pub checkins: Vec<CheckinRecord>,
}

/// Hour-of-day buckets, optionally doubled to separate weekend days.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSlots {
    pub slot_count: usize,
    pub split_weekend: bool,
}

impl Default for TimeSlots {
    fn default() -> Self {
        TimeSlots {
            slot_count: 48,
            split_weekend: true,
        }
    }
}

impl TimeSlots {
    pub fn new(slot_count: usize, split_weekend: bool) -> crate::Result<Self> {
        let per_day = if split_weekend { slot_count / 2 } else { slot_count };
        if slot_count == 0 || per_day == 0 || (split_weekend && slot_count % 2 != 0) {
            return Err(crate::Error::InvalidConfig(format!(
                "slot_count {slot_count} incompatible with split_weekend={split_weekend}"
            )));
        }
        Ok(TimeSlots {
            slot_count,
            split_weekend,
        })
    }

    fn per_day(&self) -> usize {
        if self.split_weekend {
            self.slot_count / 2
        } else {
            self.slot_count
        }
    }

    /// Slot of a timestamp shifted by `offset_min` minutes.
    pub fn slot_of(&self, timestamp: i64, offset_min: i32) -> SlotId {
        let local = timestamp + offset_min as i64 * 60;
        let sec_of_day = local.rem_euclid(SECONDS_PER_DAY) as usize;
        let bucket = sec_of_day * self.per_day() / SECONDS_PER_DAY as usize;
        // 1970-01-01 was a Thursday; weekday 0 = Monday.
        let weekday = (local.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7);
        if self.split_weekend && weekday >= 5 {
            bucket + self.per_day()
        } else {
            bucket
        }
    }
}

/// Raw-id ↔ dense-id bijection in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct IdMap {
    forward: HashMap<String, usize>,
    reverse: Vec<String>,
}

impl IdMap {
    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&id) = self.forward.get(raw) {
            return id;
        }
        let id = self.reverse.len();
        self.forward.insert(raw.to_owned(), id);
        self.reverse.push(raw.to_owned());
        id
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.forward.get(raw).copied()
    }

    pub fn raw(&self, id: usize) -> Option<&str> {
        self.reverse.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.reverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reverse.is_empty()
    }
}

impl From<Vec<String>> for IdMap {
    fn from(reverse: Vec<String>) -> Self {
        let forward = reverse.iter().enumerate().map(|(i, r)| (r.clone(), i)).collect();
        IdMap { forward, reverse }
    }
}

impl From<IdMap> for Vec<String> {
    fn from(map: IdMap) -> Self {
        map.reverse
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    pub users: IdMap,
    pub pois: IdMap,
    pub categories: IdMap,
    pub category_names: Vec<String>,
    pub poi_category: Vec<CategoryId>,
    pub poi_coords: Vec<(f64, f64)>,
    pub slots: TimeSlots,
}

impl Vocab {
    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn poi_count(&self) -> usize {
        self.pois.len()
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    pub fn slot_count(&self) -> usize {
        self.slots.slot_count
    }
}

pub fn valid_coords(lat: f64, lon: f64) -> bool {
    (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)
}
