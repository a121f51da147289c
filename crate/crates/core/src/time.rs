//! Timestamp parsing and formatting shared by every file format.
//!
//! Dates are accepted as `YYYY-MM-DD` or `YYYY-MM-DDTHH:MM:SS`. A timestamp at
//! midnight is written back in the short date form so daily data round-trips
//! unchanged.

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Timelike};

pub type Timestamp = NaiveDateTime;

pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    let s = s.trim();
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Some(t);
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Some(t);
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .map(|d| d.and_time(NaiveTime::MIN))
}

pub fn format_timestamp(t: &Timestamp) -> String {
    if t.num_seconds_from_midnight() == 0 && t.nanosecond() == 0 {
        t.format("%Y-%m-%d").to_string()
    } else {
        t.format("%Y-%m-%dT%H:%M:%S").to_string()
    }
}

/// Midpoint between the earliest and latest of `stamps`, truncated to whole seconds.
pub fn midpoint(stamps: impl IntoIterator<Item = Timestamp>) -> Option<Timestamp> {
    let mut it = stamps.into_iter();
    let first = it.next()?;
    let (lo, hi) = it.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t)));
    let half = chrono::Duration::seconds((hi - lo).num_seconds() / 2);
    Some(lo + half)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn date_and_datetime_forms() {
        let d = parse_timestamp("2008-09-15").unwrap();
        assert_eq!(format_timestamp(&d), "2008-09-15");
        let t = parse_timestamp("2008-09-15T10:45:00").unwrap();
        assert_eq!(format_timestamp(&t), "2008-09-15T10:45:00");
        assert!(parse_timestamp("15/09/2008").is_none());
    }

    #[test]
    fn midpoint_of_range() {
        let a = parse_timestamp("2000-01-01").unwrap();
        let b = parse_timestamp("2000-01-03").unwrap();
        assert_eq!(midpoint([b, a]).unwrap(), parse_timestamp("2000-01-02").unwrap());
        assert!(midpoint(std::iter::empty()).is_none());
    }
}
