use std::collections::HashMap;
use std::path::Path;

use chrono::DateTime;

use super::{valid_coords, CheckinRecord, TimeSlots, Vocab};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    /// `user \t venue \t category_id \t category_name \t lat \t lon \t tz_offset_min \t utc_time`
    FoursquareTsv,
}

const TIME_FORMAT: &str = "%a %b %d %H:%M:%S %z %Y";

struct RawRow {
    user: usize,
    poi: usize,
    lat: f64,
    lon: f64,
    tz_offset_min: i32,
    timestamp: i64,
}

pub fn ingest_checkins(
    path: &Path,
    format: InputFormat,
    slots: TimeSlots,
    local_time: bool,
) -> Result<(Vocab, Vec<CheckinRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkins(&text, format, slots, local_time)
}

/// Parses check-in text. Dense ids follow first-seen order; a POI listed
/// under several categories takes the majority one (first seen on ties).
pub fn parse_checkins(
    text: &str,
    format: InputFormat,
    slots: TimeSlots,
    local_time: bool,
) -> Result<(Vocab, Vec<CheckinRecord>)> {
    let InputFormat::FoursquareTsv = format;
    let mut vocab = Vocab {
        slots,
        ..Vocab::default()
    };
    let mut rows = Vec::new();
    // per poi: category -> (count, first line seen)
    let mut category_votes: Vec<HashMap<usize, (usize, usize)>> = Vec::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 8 tab-separated fields, found {}", fields.len()),
            });
        }
        let num = |i: usize, what: &str| -> Result<f64> {
            fields[i].trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad {what} {:?}", fields[i]),
            })
        };
        let lat = num(4, "latitude")?;
        let lon = num(5, "longitude")?;
        if !valid_coords(lat, lon) {
            return Err(Error::CoordinateOutOfRange { line: line_no, lat, lon });
        }
        let tz_offset_min = fields[6].trim().parse::<i32>().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad timezone offset {:?}", fields[6]),
        })?;
        let timestamp = DateTime::parse_from_str(fields[7].trim(), TIME_FORMAT)
            .map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad timestamp {:?}: {e}", fields[7]),
            })?
            .timestamp();

        let user = vocab.users.intern(fields[0]);
        let poi = vocab.pois.intern(fields[1]);
        let category = vocab.categories.intern(fields[2]);
        if category == vocab.category_names.len() {
            vocab.category_names.push(fields[3].to_owned());
        }
        if poi == category_votes.len() {
            category_votes.push(HashMap::new());
            vocab.poi_coords.push((lat, lon));
        }
        category_votes[poi].entry(category).or_insert((0, line_no)).0 += 1;
        rows.push(RawRow {
            user,
            poi,
            lat,
            lon,
            tz_offset_min,
            timestamp,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }

    vocab.poi_category = category_votes
        .iter()
        .map(|votes| {
            let (&cat, _) = votes
                .iter()
                .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
                .expect("every poi has at least one vote");
            cat
        })
        .collect();

    let mut records: Vec<CheckinRecord> = rows
        .into_iter()
        .map(|r| {
            let offset = if local_time { r.tz_offset_min } else { 0 };
            CheckinRecord {
                user: r.user,
                poi: r.poi,
                category: vocab.poi_category[r.poi],
                lat: r.lat,
                lon: r.lon,
                timestamp: r.timestamp,
                time_slot: slots.slot_of(r.timestamp, offset),
                tz_offset_min: r.tz_offset_min,
            }
        })
        .collect();
    // stable: equal timestamps keep file order
    records.sort_by_key(|r| (r.user, r.timestamp));
    Ok((vocab, records))
}
