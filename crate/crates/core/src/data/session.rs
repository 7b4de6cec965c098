use std::collections::BTreeMap;

use super::{CheckinRecord, Trajectory, UserId, SECONDS_PER_DAY};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SessionConfig {
    /// Split on local calendar days (using each record's fixed offset) instead of UTC days.
    pub local_time: bool,
}

#[derive(Clone, Debug, Default)]
pub struct SessionSplit {
    pub trajectories: Vec<Trajectory>,
    /// Check-ins that were alone on their day.
    pub dropped_checkins: usize,
    pub dropped_by_user: BTreeMap<UserId, usize>,
}

fn day_of(record: &CheckinRecord, cfg: SessionConfig) -> i64 {
    let offset = if cfg.local_time {
        record.tz_offset_min as i64 * 60
    } else {
        0
    };
    (record.timestamp + offset).div_euclid(SECONDS_PER_DAY)
}

/// Cuts each user's records into calendar-day sessions. `records` must be
/// sorted by (user, timestamp).
pub fn split_sessions(records: &[CheckinRecord], cfg: SessionConfig) -> SessionSplit {
    let mut out = SessionSplit::default();
    let flush = |current: &mut Vec<CheckinRecord>, out: &mut SessionSplit| {
        match current.len() {
            0 => {}
            1 => {
                out.dropped_checkins += 1;
                *out.dropped_by_user.entry(current[0].user).or_default() += 1;
            }
            _ => out.trajectories.push(Trajectory {
                user: current[0].user,
                checkins: std::mem::take(current),
            }),
        }
        current.clear();
    };
    let mut current: Vec<CheckinRecord> = Vec::new();
    for r in records {
        if let Some(last) = current.last() {
            if last.user != r.user || day_of(last, cfg) != day_of(r, cfg) {
                flush(&mut current, &mut out);
            }
        }
        current.push(r.clone());
    }
    flush(&mut current, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DAY1: i64 = 1_333_324_800;

    fn rec(user: usize, ts: i64) -> CheckinRecord {
        CheckinRecord {
            user,
            poi: 0,
            category: 0,
            lat: 0.0,
            lon: 0.0,
            timestamp: ts,
            time_slot: 0,
            tz_offset_min: 0,
        }
    }

    #[test]
    fn two_days_one_kept() {
        let records = vec![
            rec(0, DAY1 + 9 * 3600),
            rec(0, DAY1 + 12 * 3600),
            rec(0, DAY1 + SECONDS_PER_DAY + 10 * 3600),
        ];
        let split = split_sessions(&records, SessionConfig::default());
        assert_eq!(split.trajectories.len(), 1);
        assert_eq!(split.trajectories[0].checkins.len(), 2);
        assert_eq!(split.dropped_checkins, 1);
    }

    #[test]
    fn single_checkin() {
        let split = split_sessions(&[rec(0, DAY1)], SessionConfig::default());
        assert!(split.trajectories.is_empty());
        assert_eq!(split.dropped_checkins, 1);
    }

    #[test]
    fn midnight_separates_days() {
        let records = vec![rec(0, DAY1 + SECONDS_PER_DAY - 60), rec(0, DAY1 + SECONDS_PER_DAY + 60)];
        let split = split_sessions(&records, SessionConfig::default());
        assert!(split.trajectories.is_empty());
        assert_eq!(split.dropped_checkins, 2);
        // with a +2h offset both fall on the same local day
        let shifted: Vec<_> = records
            .into_iter()
            .map(|mut r| {
                r.tz_offset_min = 120;
                r
            })
            .collect();
        let split = split_sessions(&shifted, SessionConfig { local_time: true });
        assert_eq!(split.trajectories.len(), 1);
    }

    #[test]
    fn users_never_share_a_session() {
        let records = vec![rec(0, DAY1), rec(0, DAY1 + 60), rec(1, DAY1 + 120), rec(1, DAY1 + 180)];
        let split = split_sessions(&records, SessionConfig::default());
        assert_eq!(split.trajectories.len(), 2);
        assert!(split.trajectories.iter().all(|t| t.checkins.iter().all(|c| c.user == t.user)));
    }

    proptest! {
        #[test]
        fn splitting_partitions_records(
            mut events in proptest::collection::vec((0usize..4, 0i64..(10 * SECONDS_PER_DAY)), 0..200)
        ) {
            events.sort();
            let records: Vec<_> = events.iter().map(|&(u, t)| rec(u, DAY1 + t)).collect();
            let split = split_sessions(&records, SessionConfig::default());
            for u in 0..4 {
                let kept: usize = split.trajectories.iter().filter(|t| t.user == u).map(|t| t.checkins.len()).sum();
                let total = records.iter().filter(|r| r.user == u).count();
                let dropped = split.dropped_by_user.get(&u).copied().unwrap_or(0);
                prop_assert_eq!(kept + dropped, total);
            }
            let kept: usize = split.trajectories.iter().map(|t| t.checkins.len()).sum();
            prop_assert_eq!(kept + split.dropped_checkins, records.len());
            for t in &split.trajectories {
                prop_assert!(t.checkins.len() >= 2);
                prop_assert!(t.checkins.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
                let day = t.checkins[0].timestamp.div_euclid(SECONDS_PER_DAY);
                prop_assert!(t.checkins.iter().all(|c| c.timestamp.div_euclid(SECONDS_PER_DAY) == day));
            }
        }
    }
}
