//! Constellation identifiers and physical constants shared across stages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// GPS L1 C/A carrier (Hz).
pub const GPS_L1_HZ: f64 = 1_575.42e6;
/// BeiDou B1I carrier (Hz).
pub const BDS_B1I_HZ: f64 = 1_561.098e6;
/// BeiDou time lags GPS time by this many seconds.
pub const BDT_TO_GPST_SECONDS: f64 = 14.0;
/// BeiDou week 0 starts at GPS week 1356.
pub const BDT_WEEK_OFFSET: i64 = 1356;
pub const SECONDS_PER_WEEK: f64 = 604_800.0;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum Constellation {
    #[serde(rename = "GPS")]
    Gps,
    #[serde(rename = "BeiDou")]
    BeiDou,
}

impl Constellation {
    pub const ALL: [Constellation; 2] = [Constellation::Gps, Constellation::BeiDou];

    /// RINEX system letter.
    pub fn rinex_letter(self) -> char {
        match self {
            Constellation::Gps => 'G',
            Constellation::BeiDou => 'C',
        }
    }

    pub fn from_rinex_letter(c: char) -> Option<Self> {
        match c {
            'G' => Some(Constellation::Gps),
            'C' => Some(Constellation::BeiDou),
            _ => None,
        }
    }

    /// Carrier of the single-frequency signal processed for this system.
    pub fn carrier_frequency(self) -> f64 {
        match self {
            Constellation::Gps => GPS_L1_HZ,
            Constellation::BeiDou => BDS_B1I_HZ,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Constellation::Gps => "GPS",
            Constellation::BeiDou => "BeiDou",
        }
    }
}

impl fmt::Display for Constellation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Constellation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gps" | "g" => Ok(Constellation::Gps),
            "beidou" | "bds" | "c" | "bd" => Ok(Constellation::BeiDou),
            other => Err(format!("unknown constellation '{other}'")),
        }
    }
}

/// (constellation, svid) pair identifying one satellite signal.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct SatelliteId {
    pub constellation: Constellation,
    pub svid: u16,
}

impl SatelliteId {
    pub fn new(constellation: Constellation, svid: u16) -> Self {
        Self {
            constellation,
            svid,
        }
    }
}

impl fmt::Display for SatelliteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:02}", self.constellation.rinex_letter(), self.svid)
    }
}
