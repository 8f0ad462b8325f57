//! Canonical epoch-record CSV: one row per signal per epoch, satellite states included.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{IngestError, SignalObservation};
use crate::ephemeris::SatelliteState;
use crate::geodesy::EcefPosition;
use crate::gnss::{Constellation, SatelliteId};

pub const CANONICAL_HEADER: [&str; 10] = [
    "time",
    "constellation",
    "svid",
    "pseudorange_m",
    "doppler_hz",
    "cn0_dbhz",
    "sat_x",
    "sat_y",
    "sat_z",
    "sat_clock_m",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalRecord {
    pub time: f64,
    pub constellation: Constellation,
    pub svid: u16,
    pub pseudorange_m: f64,
    pub doppler_hz: Option<f64>,
    pub cn0_dbhz: Option<f64>,
    pub sat_x: f64,
    pub sat_y: f64,
    pub sat_z: f64,
    pub sat_clock_m: f64,
}

/// A signal together with its satellite's state at transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub obs: SignalObservation,
    pub state: SatelliteState,
}

impl Measurement {
    pub fn sat(&self) -> SatelliteId {
        self.obs.sat()
    }
}

/// All measurements of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochData {
    pub time: f64,
    pub measurements: Vec<Measurement>,
}

impl CanonicalRecord {
    pub fn from_measurement(time: f64, m: &Measurement) -> Self {
        Self {
            time,
            constellation: m.obs.constellation,
            svid: m.obs.svid,
            pseudorange_m: m.obs.pseudorange,
            doppler_hz: m.obs.doppler,
            cn0_dbhz: m.obs.cn0,
            sat_x: m.state.position.x,
            sat_y: m.state.position.y,
            sat_z: m.state.position.z,
            sat_clock_m: m.state.clock_correction,
        }
    }

    pub fn to_measurement(&self) -> Measurement {
        let mut obs = SignalObservation::new(self.constellation, self.svid, self.pseudorange_m);
        obs.doppler = self.doppler_hz;
        obs.cn0 = self.cn0_dbhz;
        Measurement {
            obs,
            state: SatelliteState {
                position: EcefPosition::new(self.sat_x, self.sat_y, self.sat_z),
                clock_correction: self.sat_clock_m,
            },
        }
    }
}

pub fn write_canonical_csv<W: Write>(sink: W, epochs: &[EpochData]) -> Result<(), IngestError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(CANONICAL_HEADER)?;
    for e in epochs {
        for m in &e.measurements {
            w.serialize(CanonicalRecord::from_measurement(e.time, m))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_canonical_csv<R: Read>(source: R) -> Result<Vec<CanonicalRecord>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    for name in CANONICAL_HEADER {
        if !headers.iter().any(|h| h == name) {
            return Err(IngestError::MissingColumn(name.to_string()));
        }
    }
    let mut rows = Vec::new();
    for (k, r) in reader.deserialize::<CanonicalRecord>().enumerate() {
        let r = r?;
        let finite = [r.time, r.pseudorange_m, r.sat_x, r.sat_y, r.sat_z, r.sat_clock_m]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(IngestError::data(k + 2, "non-finite value"));
        }
        rows.push(r);
    }
    Ok(rows)
}

/// Groups consecutive rows sharing a timestamp into epochs.
pub fn group_epochs(records: &[CanonicalRecord]) -> Result<Vec<EpochData>, IngestError> {
    let mut epochs: Vec<EpochData> = Vec::new();
    let mut seen: HashSet<SatelliteId> = HashSet::new();
    for (k, r) in records.iter().enumerate() {
        let line = k + 2;
        let start_new = epochs.last().is_none_or(|e| e.time != r.time);
        if start_new {
            if let Some(prev) = epochs.last() {
                if r.time < prev.time {
                    return Err(IngestError::NonMonotonic { line, time: r.time });
                }
            }
            seen.clear();
            epochs.push(EpochData {
                time: r.time,
                measurements: Vec::new(),
            });
        }
        let m = r.to_measurement();
        if !seen.insert(m.sat()) {
            return Err(IngestError::data(line, format!("duplicate satellite {} in epoch", m.sat())));
        }
        epochs.last_mut().expect("epoch exists").measurements.push(m);
    }
    Ok(epochs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_read() {
        let mut obs = SignalObservation::new(Constellation::BeiDou, 19, 2.3e7);
        obs.cn0 = Some(41.5);
        let epoch = EpochData {
            time: 1_234_567.0,
            measurements: vec![Measurement {
                obs,
                state: SatelliteState {
                    position: EcefPosition::new(1.0e7, 2.0e7, -3.0e6),
                    clock_correction: -12.25,
                },
            }],
        };
        let mut buf = Vec::new();
        write_canonical_csv(&mut buf, std::slice::from_ref(&epoch)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "time,constellation,svid,pseudorange_m,doppler_hz,cn0_dbhz,sat_x,sat_y,sat_z,sat_clock_m\n"
        ));
        let rows = read_canonical_csv(buf.as_slice()).unwrap();
        let back = group_epochs(&rows).unwrap();
        assert_eq!(back, vec![epoch]);
    }

    #[test]
    fn duplicate_satellite_rejected() {
        let text = "time,constellation,svid,pseudorange_m,doppler_hz,cn0_dbhz,sat_x,sat_y,sat_z,sat_clock_m\n\
                    1,GPS,3,2e7,,,1,2,3,0\n1,GPS,3,2e7,,,1,2,3,0\n";
        let rows = read_canonical_csv(text.as_bytes()).unwrap();
        assert!(group_epochs(&rows).is_err());
    }
}
