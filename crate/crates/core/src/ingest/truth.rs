//! Ground-truth trajectory CSV.
//!
//! The header row must name a time column (`time`, or `week` + `tow`) and the
//! coordinate columns of the chosen format: `lat_deg, lon_deg, height_m` for
//! geodetic files, `x_m, y_m, z_m` for ECEF files.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::geodesy::{geodetic_to_ecef, EcefPosition, GeodeticPosition};
use crate::gnss::SECONDS_PER_WEEK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthFormat {
    CsvGeodetic,
    CsvEcef,
}

impl FromStr for TruthFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv_geodetic" => Ok(TruthFormat::CsvGeodetic),
            "csv_ecef" => Ok(TruthFormat::CsvEcef),
            other => Err(format!("unknown truth format '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TruthPosition {
    Geodetic(GeodeticPosition),
    Ecef(EcefPosition),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthPoint {
    /// Continuous GPS seconds.
    pub time: f64,
    pub position: TruthPosition,
}

impl GroundTruthPoint {
    pub fn ecef(&self) -> EcefPosition {
        match self.position {
            TruthPosition::Ecef(p) => p,
            TruthPosition::Geodetic(g) => geodetic_to_ecef(g),
        }
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name))
}

fn require(headers: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    column_index(headers, name).ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

fn number(record: &csv::StringRecord, idx: usize, line: usize, name: &str) -> Result<f64, IngestError> {
    let raw = record.get(idx).unwrap_or("").trim();
    let v: f64 = raw
        .parse()
        .map_err(|_| IngestError::data(line, format!("invalid {name} '{raw}'")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(IngestError::data(line, format!("non-finite {name}")))
    }
}

enum TimeColumns {
    Seconds(usize),
    WeekTow(usize, usize),
}

/// Reads a ground-truth CSV; rows must be strictly increasing in time.
pub fn parse_ground_truth<R: Read>(
    source: R,
    format: TruthFormat,
) -> Result<Vec<GroundTruthPoint>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let time_cols = match column_index(&headers, "time") {
        Some(i) => TimeColumns::Seconds(i),
        None => match (column_index(&headers, "week"), column_index(&headers, "tow")) {
            (Some(w), Some(t)) => TimeColumns::WeekTow(w, t),
            (Some(_), None) => return Err(IngestError::MissingColumn("tow".into())),
            _ => return Err(IngestError::MissingColumn("time".into())),
        },
    };
    let names = match format {
        TruthFormat::CsvGeodetic => ["lat_deg", "lon_deg", "height_m"],
        TruthFormat::CsvEcef => ["x_m", "y_m", "z_m"],
    };
    let cols = [
        require(&headers, names[0])?,
        require(&headers, names[1])?,
        require(&headers, names[2])?,
    ];

    let mut points: Vec<GroundTruthPoint> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = k + 2;
        let time = match time_cols {
            TimeColumns::Seconds(i) => number(&record, i, line, "time")?,
            TimeColumns::WeekTow(w, t) => {
                number(&record, w, line, "week")? * SECONDS_PER_WEEK + number(&record, t, line, "tow")?
            }
        };
        let v = [
            number(&record, cols[0], line, names[0])?,
            number(&record, cols[1], line, names[1])?,
            number(&record, cols[2], line, names[2])?,
        ];
        let position = match format {
            TruthFormat::CsvGeodetic => {
                let g = GeodeticPosition::new(v[0], v[1], v[2]);
                if !g.is_valid() {
                    return Err(IngestError::data(line, "latitude/longitude out of range"));
                }
                TruthPosition::Geodetic(g)
            }
            TruthFormat::CsvEcef => TruthPosition::Ecef(EcefPosition::new(v[0], v[1], v[2])),
        };
        if let Some(prev) = points.last() {
            if time <= prev.time {
                return Err(IngestError::NonMonotonic { line, time });
            }
        }
        points.push(GroundTruthPoint { time, position });
    }
    Ok(points)
}

/// Writes `time,x_m,y_m,z_m` rows.
pub fn write_truth_ecef_csv<W: Write>(
    sink: W,
    rows: impl IntoIterator<Item = (f64, EcefPosition)>,
) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["time", "x_m", "y_m", "z_m"])?;
    for (t, p) in rows {
        w.write_record([t.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
