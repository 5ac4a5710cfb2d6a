//! Trading calendars, session times and cross-calendar lag pairing.
//!
//! "Trading-day arithmetic" means indexing by position in a market's own
//! calendar: `t - 1` is the previous trading date of that market, whatever
//! the natural-calendar gap.
//!
//! Two markets with different holidays need a rule to line up a target date
//! with the source dates that may feed it. A source session is usable for a
//! target date when it closes strictly before the target session opens.
//! For `lag >= 1` the pairing is the `lag`-th most recent such source date.
//! For `lag == 0` it is the source session on the same calendar date, which
//! is only admissible when that session closes before the target opens
//! (e.g. a Shanghai close preceding the New York open).

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalendarError {
    #[error("calendar for {market} is not strictly increasing at position {position}")]
    NonMonotone { market: String, position: usize },
    #[error("lag 0 pairing requires the {source_market} session to close before the {target} session opens on the same date")]
    LagViolatesSessionOrder { source_market: String, target: String },
}

/// Session open/close in minutes after 00:00 UTC of the session's calendar
/// date. Daylight saving is ignored; it never makes the US and Chinese
/// sessions overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub open_utc_min: i32,
    pub close_utc_min: i32,
}

impl Session {
    /// NYSE/Nasdaq, 09:30-16:00 US Eastern (UTC-5).
    pub const US: Session = Session { open_utc_min: 14 * 60 + 30, close_utc_min: 21 * 60 };
    /// SSE/SZSE, 09:30-15:00 China Standard Time (UTC+8).
    pub const CN: Session = Session { open_utc_min: 60 + 30, close_utc_min: 7 * 60 };

    /// Session for a known market identifier.
    pub fn preset(market_id: &str) -> Option<Session> {
        match market_id.to_ascii_uppercase().as_str() {
            "US" | "USA" | "NYSE" | "NASDAQ" => Some(Session::US),
            "CN" | "CHINA" | "SSE" | "SZSE" => Some(Session::CN),
            _ => None,
        }
    }

    fn open_instant(&self, date: NaiveDate) -> i64 {
        day_number(date) * 1440 + self.open_utc_min as i64
    }

    fn close_instant(&self, date: NaiveDate) -> i64 {
        day_number(date) * 1440 + self.close_utc_min as i64
    }
}

fn day_number(date: NaiveDate) -> i64 {
    date.num_days_from_ce() as i64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradingCalendar {
    pub market_id: String,
    pub dates: Vec<NaiveDate>,
}

impl TradingCalendar {
    pub fn new(market_id: impl Into<String>, dates: Vec<NaiveDate>) -> Result<Self, CalendarError> {
        let market_id = market_id.into();
        for (i, w) in dates.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(CalendarError::NonMonotone { market: market_id, position: i + 1 });
            }
        }
        Ok(Self { market_id, dates })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn position(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// Index of the first date `>= date`.
    pub fn lower_bound(&self, date: NaiveDate) -> usize {
        self.dates.partition_point(|d| *d < date)
    }
}

/// For each target date, the index of the source date paired with it at the
/// given lag, or `None` when no admissible source date exists.
pub fn pair_sessions(
    target_dates: &[NaiveDate],
    target_session: Session,
    target_market: &str,
    source_dates: &[NaiveDate],
    source_session: Session,
    source_market: &str,
    lag: usize,
) -> Result<Vec<Option<usize>>, CalendarError> {
    if lag == 0 {
        if source_session.close_utc_min >= target_session.open_utc_min {
            return Err(CalendarError::LagViolatesSessionOrder {
                source_market: source_market.to_string(),
                target: target_market.to_string(),
            });
        }
        return Ok(target_dates
            .iter()
            .map(|d| source_dates.binary_search(d).ok())
            .collect());
    }
    let mut out = Vec::with_capacity(target_dates.len());
    // number of source sessions closed before the current target open
    let mut closed = 0usize;
    for &t in target_dates {
        let open = target_session.open_instant(t);
        while closed < source_dates.len() && source_session.close_instant(source_dates[closed]) < open {
            closed += 1;
        }
        out.push(if closed >= lag { Some(closed - lag) } else { None });
    }
    Ok(out)
}

/// True when `source_date`'s session closes strictly before `target_date`'s
/// session opens.
pub fn precedes(source_date: NaiveDate, source_session: Session, target_date: NaiveDate, target_session: Session) -> bool {
    source_session.close_instant(source_date) < target_session.open_instant(target_date)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn us_to_cn_lag1_is_previous_us_date() {
        let us = vec![d(2021, 1, 4), d(2021, 1, 5), d(2021, 1, 6), d(2021, 1, 7)];
        let cn = vec![d(2021, 1, 5), d(2021, 1, 6), d(2021, 1, 8)];
        let p = pair_sessions(&cn, Session::CN, "CN", &us, Session::US, "US", 1).unwrap();
        // CN 01-05 -> US 01-04; CN 01-06 -> US 01-05; CN 01-08 -> US 01-07
        assert_eq!(p, vec![Some(0), Some(1), Some(3)]);
        let p2 = pair_sessions(&cn, Session::CN, "CN", &us, Session::US, "US", 2).unwrap();
        assert_eq!(p2, vec![None, Some(0), Some(2)]);
    }

    #[test]
    fn cn_to_us_lag0_is_same_date() {
        let cn = vec![d(2021, 1, 4), d(2021, 1, 5), d(2021, 1, 7)];
        let us = vec![d(2021, 1, 4), d(2021, 1, 6), d(2021, 1, 7)];
        let p = pair_sessions(&us, Session::US, "US", &cn, Session::CN, "CN", 0).unwrap();
        assert_eq!(p, vec![Some(0), None, Some(2)]);
        for (t, s) in us.iter().zip(&p) {
            if let Some(s) = s {
                assert!(precedes(cn[*s], Session::CN, *t, Session::US));
            }
        }
    }

    #[test]
    fn lag0_rejected_when_sessions_overlap_in_order() {
        let us = vec![d(2021, 1, 4)];
        let err = pair_sessions(&us, Session::CN, "CN", &us, Session::US, "US", 0).unwrap_err();
        assert!(matches!(err, CalendarError::LagViolatesSessionOrder { .. }));
        // same market at lag 0 is also inadmissible
        assert!(pair_sessions(&us, Session::US, "US", &us, Session::US, "US", 0).is_err());
    }

    #[test]
    fn same_market_lag1_is_previous_trading_day() {
        let cal = vec![d(2021, 1, 4), d(2021, 1, 5), d(2021, 1, 8)];
        let p = pair_sessions(&cal, Session::CN, "CN", &cal, Session::CN, "CN", 1).unwrap();
        assert_eq!(p, vec![None, Some(0), Some(1)]);
    }

    #[test]
    fn calendar_rejects_duplicates() {
        assert!(TradingCalendar::new("US", vec![d(2021, 1, 4), d(2021, 1, 4)]).is_err());
        let c = TradingCalendar::new("US", vec![d(2021, 1, 4), d(2021, 1, 6)]).unwrap();
        assert_eq!(c.position(d(2021, 1, 6)), Some(1));
        assert_eq!(c.lower_bound(d(2021, 1, 5)), 1);
    }
}
