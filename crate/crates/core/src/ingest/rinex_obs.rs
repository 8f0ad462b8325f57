//! RINEX 3.x observation files: GPS L1 C/A and BeiDou B1I code, Doppler and C/N0.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use super::fixed::{column, parse_int, parse_real};
use super::time::{gps_seconds_from_calendar, TimeSystem};
use super::{IngestError, ObservationEpoch, ParseWarning, SignalObservation};
use crate::gnss::Constellation;

const OBS_FIELD_WIDTH: usize = 16;
const OBS_VALUE_WIDTH: usize = 14;

/// Parsed observation file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObsData {
    pub epochs: Vec<ObservationEpoch>,
    pub warnings: Vec<ParseWarning>,
    pub time_system: TimeSystem,
    /// Signals discarded by the pseudorange sanity window or missing their code observable.
    pub filtered_signals: usize,
}

/// Column indices of the code/Doppler/strength observables for one constellation.
#[derive(Debug, Clone, Copy, Default)]
struct ObsColumns {
    code: Option<usize>,
    doppler: Option<usize>,
    strength: Option<usize>,
}

fn select_columns(constellation: Constellation, types: &[String]) -> Option<ObsColumns> {
    let find = |code: &str| types.iter().position(|t| t == code);
    let band = match constellation {
        Constellation::Gps => "1C",
        Constellation::BeiDou => {
            if find("C2I").is_some() {
                "2I"
            } else {
                "1I"
            }
        }
    };
    let cols = ObsColumns {
        code: find(&format!("C{band}")),
        doppler: find(&format!("D{band}")),
        strength: find(&format!("S{band}")),
    };
    cols.code.map(|_| cols)
}

pub(crate) fn split_lines(bytes: &[u8]) -> Vec<&[u8]> {
    let mut lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
        .into_iter()
        .map(|l| l.strip_suffix(b"\r").unwrap_or(l))
        .collect()
}

/// Lines of a file whose last line is kept only when newline-terminated.
///
/// A file cut off mid-line would otherwise yield a shortened last field.
pub(crate) fn complete_lines(bytes: &[u8]) -> (Vec<&[u8]>, Option<ParseWarning>) {
    let mut lines = split_lines(bytes);
    let cut = bytes.last().is_some_and(|&b| b != b'\n');
    if !cut {
        return (lines, None);
    }
    lines.pop();
    let warning = ParseWarning {
        line: lines.len() + 1,
        message: "file ends inside a line; last line dropped".into(),
    };
    (lines, Some(warning))
}

pub(crate) fn ascii_line(line: &[u8]) -> Option<&str> {
    if line.is_ascii() {
        std::str::from_utf8(line).ok()
    } else {
        None
    }
}

pub(crate) fn header_label(line: &str) -> &str {
    column(line, 60, 80).trim()
}

struct Header {
    version: f64,
    obs_types: BTreeMap<char, Vec<String>>,
    time_system: TimeSystem,
    /// Index of the first line after END OF HEADER.
    body_start: usize,
}

/// Observation descriptor: type letter, band digit, attribute letter (e.g. `C1C`).
fn valid_obs_code(code: &str) -> bool {
    let b = code.as_bytes();
    b.len() == 3 && b"CLDSX".contains(&b[0]) && b[1].is_ascii_digit() && b[2].is_ascii_uppercase()
}

fn parse_header(lines: &[&[u8]]) -> Result<Header, IngestError> {
    let mut version = None;
    let mut obs_types: BTreeMap<char, Vec<String>> = BTreeMap::new();
    let mut pending: Option<(char, usize)> = None;
    let mut time_system = TimeSystem::Gps;

    for (idx, raw) in lines.iter().enumerate() {
        let line_no = idx + 1;
        let line = ascii_line(raw).ok_or_else(|| IngestError::header(line_no, "non-ASCII header line"))?;
        let label = header_label(line);
        if idx == 0 {
            if label != "RINEX VERSION / TYPE" {
                return Err(IngestError::header(line_no, "first line must be RINEX VERSION / TYPE"));
            }
            let v = parse_real(column(line, 0, 9))
                .map_err(|m| IngestError::header(line_no, m))?
                .ok_or_else(|| IngestError::header(line_no, "missing version"))?;
            if !(3.0..4.0).contains(&v) {
                return Err(IngestError::header(line_no, format!("unsupported RINEX version {v}")));
            }
            if column(line, 20, 21) != "O" {
                return Err(IngestError::header(line_no, "not an observation file"));
            }
            version = Some(v);
            continue;
        }
        match label {
            "SYS / # / OBS TYPES" => {
                let sys = column(line, 0, 1);
                let (letter, remaining) = if sys.trim().is_empty() {
                    pending.ok_or_else(|| {
                        IngestError::header(line_no, "observation type continuation without a system")
                    })?
                } else {
                    let letter = sys.chars().next().unwrap_or(' ');
                    let count = parse_int(column(line, 3, 6))
                        .map_err(|m| IngestError::header(line_no, m))?
                        .filter(|&n| (1..=999).contains(&n))
                        .ok_or_else(|| IngestError::header(line_no, "missing observation type count"))?;
                    if obs_types.contains_key(&letter) {
                        return Err(IngestError::header(line_no, format!("duplicate system '{letter}'")));
                    }
                    obs_types.insert(letter, Vec::new());
                    (letter, count as usize)
                };
                let list = obs_types.entry(letter).or_default();
                let mut remaining = remaining;
                for k in 0..13 {
                    if remaining == 0 {
                        break;
                    }
                    let code = column(line, 7 + 4 * k, 10 + 4 * k).trim();
                    if !valid_obs_code(code) {
                        return Err(IngestError::header(line_no, format!("bad observation type '{code}'")));
                    }
                    list.push(code.to_string());
                    remaining -= 1;
                }
                pending = (remaining > 0).then_some((letter, remaining));
            }
            "TIME OF FIRST OBS" => {
                time_system = TimeSystem::from_rinex(column(line, 48, 51)).ok_or_else(|| {
                    IngestError::header(line_no, format!("unsupported time system '{}'", column(line, 48, 51).trim()))
                })?;
            }
            "END OF HEADER" => {
                if pending.is_some() {
                    return Err(IngestError::header(line_no, "incomplete observation type list"));
                }
                if obs_types.is_empty() {
                    return Err(IngestError::header(line_no, "no SYS / # / OBS TYPES record"));
                }
                return Ok(Header {
                    version: version.unwrap_or(3.0),
                    obs_types,
                    time_system,
                    body_start: idx + 1,
                });
            }
            _ => {}
        }
    }
    if lines.is_empty() {
        return Err(IngestError::Empty);
    }
    Err(IngestError::header(lines.len(), "missing END OF HEADER"))
}

struct EpochHeader {
    time: f64,
    flag: i64,
    count: usize,
}

fn parse_epoch_line(line: &str, time_system: TimeSystem) -> Result<EpochHeader, String> {
    if !line.starts_with('>') {
        return Err("epoch record must start with '>'".into());
    }
    let int = |a, b, what: &str| -> Result<i64, String> {
        parse_int(column(line, a, b))?.ok_or_else(|| format!("missing {what}"))
    };
    let year = int(2, 6, "year")?;
    let month = int(7, 9, "month")?;
    let day = int(10, 12, "day")?;
    let hour = int(13, 15, "hour")?;
    let minute = int(16, 18, "minute")?;
    let second = parse_real(column(line, 18, 29))?.ok_or("missing seconds")?;
    if !(1..=12).contains(&month)
        || !(1..=31).contains(&day)
        || !(0..=23).contains(&hour)
        || !(0..=59).contains(&minute)
        || !(0.0..61.0).contains(&second)
        || !(1980..=2200).contains(&year)
    {
        return Err("epoch date out of range".into());
    }
    let flag = parse_int(column(line, 31, 32))?.ok_or("missing epoch flag")?;
    let count = parse_int(column(line, 32, 35))?.ok_or("missing satellite count")?;
    if !(0..=999).contains(&count) {
        return Err("satellite count out of range".into());
    }
    let time = gps_seconds_from_calendar(year, month, day, hour, minute, second)
        + time_system.offset_to_gps();
    Ok(EpochHeader {
        time,
        flag,
        count: count as usize,
    })
}

/// Reads one observation line; `Ok(None)` for systems or bands that are not processed.
fn parse_signal_line(
    line: &str,
    header: &Header,
    columns: &BTreeMap<char, ObsColumns>,
) -> Result<Option<SignalObservation>, String> {
    let letter = line.chars().next().ok_or("empty observation line")?;
    let svid = parse_int(column(line, 1, 3))?.ok_or("missing satellite number")?;
    if !(1..=99).contains(&svid) {
        return Err(format!("satellite number {svid} out of range"));
    }
    if !header.obs_types.contains_key(&letter) {
        return Err(format!("system '{letter}' not declared in header"));
    }
    let Some(constellation) = Constellation::from_rinex_letter(letter) else {
        return Ok(None);
    };
    let Some(cols) = columns.get(&letter) else {
        return Ok(None);
    };
    let value = |idx: Option<usize>| -> Result<Option<f64>, String> {
        match idx {
            None => Ok(None),
            Some(k) => {
                let start = 3 + k * OBS_FIELD_WIDTH;
                let v = parse_real(column(line, start, start + OBS_VALUE_WIDTH))?;
                let flags = column(line, start + OBS_VALUE_WIDTH, start + OBS_FIELD_WIDTH);
                if !flags.chars().all(|c| c == ' ' || c.is_ascii_digit()) {
                    return Err(format!("invalid LLI/SSI flags '{flags}'"));
                }
                Ok(v)
            }
        }
    };
    let code = value(cols.code)?;
    let doppler = value(cols.doppler)?;
    let cn0 = value(cols.strength)?;
    let Some(pseudorange) = code else {
        return Ok(None);
    };
    let mut sig = SignalObservation::new(constellation, svid as u16, pseudorange);
    sig.doppler = doppler;
    sig.cn0 = cn0;
    Ok(Some(sig))
}

/// Parses a RINEX 3 observation file.
///
/// Epochs with unknown flags, truncated bodies, malformed values or
/// non-increasing times are skipped and reported in `warnings`.
pub fn parse_rinex_obs<R: Read>(mut source: R) -> Result<ObsData, IngestError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.is_empty() {
        return Err(IngestError::Empty);
    }
    let (lines, cut) = complete_lines(&bytes);
    let header = parse_header(&lines)?;
    let _ = header.version;

    let mut columns = BTreeMap::new();
    for c in Constellation::ALL {
        if let Some(cols) = header
            .obs_types
            .get(&c.rinex_letter())
            .and_then(|types| select_columns(c, types))
        {
            columns.insert(c.rinex_letter(), cols);
        }
    }

    let mut out = ObsData {
        time_system: header.time_system,
        warnings: cut.into_iter().collect(),
        ..Default::default()
    };
    let mut last_time = f64::NEG_INFINITY;
    let mut i = header.body_start;
    while i < lines.len() {
        let line_no = i + 1;
        let Some(line) = ascii_line(lines[i]) else {
            out.warnings.push(ParseWarning {
                line: line_no,
                message: "non-ASCII line".into(),
            });
            i += 1;
            continue;
        };
        if !line.starts_with('>') {
            if !line.trim().is_empty() {
                out.warnings.push(ParseWarning {
                    line: line_no,
                    message: "data outside an epoch record".into(),
                });
            }
            i += 1;
            continue;
        }
        // Body: every line up to the next epoch marker.
        let body_start = i + 1;
        let mut body_end = body_start;
        while body_end < lines.len() && lines[body_end].first() != Some(&b'>') {
            body_end += 1;
        }
        i = body_end;

        let eh = match parse_epoch_line(line, header.time_system) {
            Ok(h) => h,
            Err(message) => {
                out.warnings.push(ParseWarning { line: line_no, message });
                continue;
            }
        };
        match eh.flag {
            0 | 1 => {}
            2..=6 => continue,
            other => {
                out.warnings.push(ParseWarning {
                    line: line_no,
                    message: format!("unknown epoch flag {other}"),
                });
                continue;
            }
        }
        let body = &lines[body_start..body_end];
        if body.len() != eh.count {
            out.warnings.push(ParseWarning {
                line: line_no,
                message: format!("epoch declares {} satellites, found {}", eh.count, body.len()),
            });
            continue;
        }
        if eh.time <= last_time {
            out.warnings.push(ParseWarning {
                line: line_no,
                message: "epoch time does not increase".into(),
            });
            continue;
        }

        let mut signals = Vec::with_capacity(body.len());
        let mut seen = HashSet::new();
        let mut failure = None;
        for (k, raw) in body.iter().enumerate() {
            let sat_line_no = body_start + k + 1;
            let parsed = ascii_line(raw)
                .ok_or_else(|| "non-ASCII line".to_string())
                .and_then(|l| parse_signal_line(l, &header, &columns));
            match parsed {
                Ok(Some(sig)) => {
                    if !seen.insert(sig.sat()) {
                        failure = Some((sat_line_no, format!("duplicate satellite {}", sig.sat())));
                        break;
                    }
                    if sig.is_plausible() {
                        signals.push(sig);
                    } else {
                        out.filtered_signals += 1;
                    }
                }
                Ok(None) => {}
                Err(message) => {
                    failure = Some((sat_line_no, message));
                    break;
                }
            }
        }
        if let Some((line, message)) = failure {
            out.warnings.push(ParseWarning { line, message });
            continue;
        }
        last_time = eh.time;
        if !signals.is_empty() {
            signals.sort_by_key(|s| s.sat());
            out.epochs.push(ObservationEpoch {
                epoch_time: eh.time,
                signals,
            });
        }
    }
    Ok(out)
}
