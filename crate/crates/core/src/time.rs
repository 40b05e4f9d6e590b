//! Instants, half-open spans and the timestamp formats used in every file.
//!
//! All instants are naive local wall-clock times: source logs carry no zone
//! information, so none is invented here.

use std::fmt;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

/// Wall-clock instant as written in the logs.
pub type Instant = NaiveDateTime;

/// Half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: Instant,
    pub end: Instant,
}

impl Span {
    pub fn new(start: Instant, end: Instant) -> Self {
        Self { start, end }
    }

    pub fn duration(&self) -> Duration {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, t: Instant) -> bool {
        self.start <= t && t < self.end
    }

    pub fn contains_span(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    /// Length of the intersection, zero when disjoint.
    pub fn overlap(&self, other: &Span) -> Duration {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        if end > start {
            end - start
        } else {
            Duration::zero()
        }
    }

    pub fn intersection(&self, other: &Span) -> Option<Span> {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        (end > start).then_some(Span { start, end })
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", format_instant(self.start), format_instant(self.end))
    }
}

/// Seconds since the naive epoch, used for unit flooring.
fn epoch_millis(t: Instant) -> i64 {
    t.and_utc().timestamp_millis()
}

fn from_epoch_millis(ms: i64) -> Instant {
    chrono::DateTime::from_timestamp_millis(ms)
        .expect("instant within chrono range")
        .naive_utc()
}

/// Floors `t` to a multiple of `unit` counted from the naive epoch.
pub fn floor_to_unit(t: Instant, unit: Duration) -> Instant {
    let u = unit.num_milliseconds();
    assert!(u > 0, "unit must be positive");
    let ms = epoch_millis(t);
    from_epoch_millis(ms.div_euclid(u) * u)
}

/// Ceils `t` to a multiple of `unit` counted from the naive epoch.
pub fn ceil_to_unit(t: Instant, unit: Duration) -> Instant {
    let floored = floor_to_unit(t, unit);
    if floored == t {
        t
    } else {
        floored + unit
    }
}

/// True when `t` lies on the unit grid anchored at `origin`.
pub fn is_on_grid(t: Instant, origin: Instant, unit: Duration) -> bool {
    (t - origin).num_milliseconds().rem_euclid(unit.num_milliseconds()) == 0
}

/// RFC 3339 local form without offset; fractional seconds only when present.
pub fn format_instant(t: Instant) -> String {
    t.format("%Y-%m-%dT%H:%M:%S%.f").to_string()
}

/// Accepts `YYYY-MM-DDTHH:MM:SS[.f]`, the same with a space separator, and
/// minute precision. A trailing `Z` is tolerated and ignored.
pub fn parse_instant(s: &str) -> Option<Instant> {
    let s = s.trim();
    let s = s.strip_suffix('Z').unwrap_or(s);
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Parses the separate DATE and TIME columns of an event log line.
pub fn parse_date_time(date: &str, time: &str) -> Option<Instant> {
    let d = NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()?;
    let t = NaiveTime::parse_from_str(time, "%H:%M:%S%.f").ok()?;
    Some(d.and_time(t))
}

/// `HH:MM` clock time.
pub fn parse_clock(s: &str) -> Option<NaiveTime> {
    NaiveTime::parse_from_str(s.trim(), "%H:%M")
        .or_else(|_| NaiveTime::parse_from_str(s.trim(), "%H:%M:%S"))
        .ok()
}

pub fn format_clock(t: NaiveTime) -> String {
    t.format("%H:%M").to_string()
}

/// Serde adapter writing instants with [`format_instant`].
pub mod serde_instant {
    use super::{format_instant, parse_instant, Instant};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &Instant, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_instant(*t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Instant, D::Error> {
        let raw = String::deserialize(d)?;
        parse_instant(&raw).ok_or_else(|| D::Error::custom(format!("bad timestamp {raw:?}")))
    }
}
