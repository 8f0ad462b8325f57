use serde::{Deserialize, Serialize};

use crate::gnss::BDT_TO_GPST_SECONDS;

/// Time scale of calendar epochs in a RINEX file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TimeSystem {
    #[default]
    Gps,
    BeiDou,
}

impl TimeSystem {
    pub fn from_rinex(code: &str) -> Option<Self> {
        match code.trim() {
            "" | "GPS" => Some(TimeSystem::Gps),
            "BDT" => Some(TimeSystem::BeiDou),
            _ => None,
        }
    }

    /// Offset added to a calendar time in this system to obtain GPS time.
    pub fn offset_to_gps(self) -> f64 {
        match self {
            TimeSystem::Gps => 0.0,
            TimeSystem::BeiDou => BDT_TO_GPST_SECONDS,
        }
    }
}

/// Days from 1970-01-01 for a proleptic Gregorian date.
fn days_from_civil(year: i64, month: i64, day: i64) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (month + 9) % 12;
    let doy = (153 * mp + 2) / 5 + day - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

const GPS_EPOCH_DAYS: i64 = 3657; // 1980-01-06

/// Seconds since the GPS epoch for a calendar date read in GPS time (no leap seconds).
pub fn gps_seconds_from_calendar(
    year: i64,
    month: i64,
    day: i64,
    hour: i64,
    minute: i64,
    second: f64,
) -> f64 {
    let days = days_from_civil(year, month, day) - GPS_EPOCH_DAYS;
    (days * 86_400 + hour * 3600 + minute * 60) as f64 + second
}
