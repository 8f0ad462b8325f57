//! Observation, navigation and ground-truth ingestion.

mod assemble;
mod canonical;
mod fixed;
mod rinex_nav;
mod rinex_obs;
mod time;
mod truth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::EcefPosition;
use crate::gnss::{Constellation, SatelliteId};

pub use assemble::{assemble_epochs, Assembled, Corrections};
pub use canonical::{
    group_epochs, read_canonical_csv, write_canonical_csv, CanonicalRecord, EpochData,
    Measurement, CANONICAL_HEADER,
};
pub use rinex_nav::{parse_rinex_nav, NavData};
pub use rinex_obs::{parse_rinex_obs, ObsData};
pub use time::{gps_seconds_from_calendar, TimeSystem};
pub use truth::{parse_ground_truth, write_truth_ecef_csv, GroundTruthPoint, TruthFormat, TruthPosition};

/// Pseudoranges outside this open interval (meters) are discarded as implausible.
pub const PSEUDORANGE_SANITY_M: (f64, f64) = (1e6, 1e8);
/// Default maximum epoch/truth time separation for pairing (seconds).
pub const DEFAULT_MAX_GAP_S: f64 = 0.5;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed header: {message}")]
    Header { line: usize, message: String },
    #[error("line {line}: {message}")]
    Data { line: usize, message: String },
    #[error("input is empty")]
    Empty,
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("line {line}: time {time} does not increase")]
    NonMonotonic { line: usize, time: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl IngestError {
    pub(crate) fn header(line: usize, message: impl Into<String>) -> Self {
        IngestError::Header {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn data(line: usize, message: impl Into<String>) -> Self {
        IngestError::Data {
            line,
            message: message.into(),
        }
    }
}

/// Recoverable problem found while parsing; the offending epoch or record is skipped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

/// One satellite signal in one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalObservation {
    pub constellation: Constellation,
    pub svid: u16,
    /// Code pseudorange (m).
    pub pseudorange: f64,
    /// Doppler (Hz), RINEX sign convention: positive for approaching satellites.
    pub doppler: Option<f64>,
    /// Carrier-to-noise density (dB-Hz).
    pub cn0: Option<f64>,
    /// Carrier frequency (Hz).
    pub carrier_frequency: f64,
}

impl SignalObservation {
    pub fn new(constellation: Constellation, svid: u16, pseudorange: f64) -> Self {
        Self {
            constellation,
            svid,
            pseudorange,
            doppler: None,
            cn0: None,
            carrier_frequency: constellation.carrier_frequency(),
        }
    }

    pub fn sat(&self) -> SatelliteId {
        SatelliteId::new(self.constellation, self.svid)
    }

    pub fn is_plausible(&self) -> bool {
        self.pseudorange > PSEUDORANGE_SANITY_M.0
            && self.pseudorange < PSEUDORANGE_SANITY_M.1
            && self.carrier_frequency > 0.0
            && self.svid >= 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationEpoch {
    /// Continuous GPS seconds.
    pub epoch_time: f64,
    pub signals: Vec<SignalObservation>,
}

/// Epochs paired with ground truth, plus how many epochs found no partner.
#[derive(Debug, Clone)]
pub struct Alignment<T> {
    pub pairs: Vec<(T, EcefPosition)>,
    pub dropped: usize,
}

/// For each epoch time, the index of the nearest truth point within `max_gap`.
///
/// Each truth point is used at most once; on contention the closer epoch wins.
pub fn match_times(epoch_times: &[f64], truth_times: &[f64], max_gap: f64) -> Vec<Option<usize>> {
    let mut matches: Vec<Option<usize>> = vec![None; epoch_times.len()];
    let mut owner: Vec<Option<usize>> = vec![None; truth_times.len()];
    let mut j = 0usize;
    for (i, &t) in epoch_times.iter().enumerate() {
        while j + 1 < truth_times.len() && (truth_times[j + 1] - t).abs() <= (truth_times[j] - t).abs() {
            j += 1;
        }
        if truth_times.is_empty() {
            break;
        }
        let gap = (truth_times[j] - t).abs();
        if gap > max_gap {
            continue;
        }
        match owner[j] {
            Some(prev) if (truth_times[j] - epoch_times[prev]).abs() <= gap => {}
            Some(prev) => {
                matches[prev] = None;
                matches[i] = Some(j);
                owner[j] = Some(i);
            }
            None => {
                matches[i] = Some(j);
                owner[j] = Some(i);
            }
        }
    }
    matches
}

/// Pairs each epoch with the nearest ground-truth point no further than `max_gap` seconds away.
pub fn align_truth(
    epochs: Vec<ObservationEpoch>,
    truth: &[GroundTruthPoint],
    max_gap: f64,
) -> Alignment<ObservationEpoch> {
    let times: Vec<f64> = epochs.iter().map(|e| e.epoch_time).collect();
    let truth_times: Vec<f64> = truth.iter().map(|p| p.time).collect();
    let matches = match_times(&times, &truth_times, max_gap);
    let mut out = Alignment {
        pairs: Vec::new(),
        dropped: 0,
    };
    for (epoch, m) in epochs.into_iter().zip(matches) {
        match m {
            Some(j) => out.pairs.push((epoch, truth[j].ecef())),
            None => out.dropped += 1,
        }
    }
    out
}
