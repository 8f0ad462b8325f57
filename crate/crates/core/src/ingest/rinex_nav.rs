//! RINEX 3.x navigation files: GPS LNAV and BeiDou D1/D2 records.

use std::io::Read;

use super::fixed::{column, parse_int, parse_real};
use super::rinex_obs::{ascii_line, complete_lines, header_label};
use super::time::gps_seconds_from_calendar;
use super::{IngestError, ParseWarning};
use crate::atmosphere::KlobucharParams;
use crate::ephemeris::BroadcastEphemeris;
use crate::gnss::{Constellation, BDT_TO_GPST_SECONDS, BDT_WEEK_OFFSET, SECONDS_PER_WEEK};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NavData {
    pub records: Vec<BroadcastEphemeris>,
    pub warnings: Vec<ParseWarning>,
    /// GPS Klobuchar coefficients from the IONOSPHERIC CORR header records.
    pub klobuchar: Option<KlobucharParams>,
}

/// Broadcast-orbit lines following the epoch line, per system letter.
fn orbit_lines(letter: char) -> Option<usize> {
    match letter {
        'G' | 'C' | 'E' | 'J' | 'I' => Some(7),
        'R' | 'S' => Some(3),
        _ => None,
    }
}

fn parse_header(lines: &[&[u8]]) -> Result<(usize, Option<KlobucharParams>), IngestError> {
    let mut alpha = None;
    let mut beta = None;
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
            if column(line, 20, 21) != "N" {
                return Err(IngestError::header(line_no, "not a navigation file"));
            }
            continue;
        }
        match label {
            "IONOSPHERIC CORR" => {
                let kind = column(line, 0, 4).trim();
                let mut coeffs = [0.0; 4];
                for (k, c) in coeffs.iter_mut().enumerate() {
                    *c = parse_real(column(line, 5 + 12 * k, 17 + 12 * k))
                        .map_err(|m| IngestError::header(line_no, m))?
                        .unwrap_or(0.0);
                }
                match kind {
                    "GPSA" => alpha = Some(coeffs),
                    "GPSB" => beta = Some(coeffs),
                    _ => {}
                }
            }
            "END OF HEADER" => {
                let klobuchar = match (alpha, beta) {
                    (Some(alpha), Some(beta)) => Some(KlobucharParams { alpha, beta }),
                    _ => None,
                };
                return Ok((idx + 1, klobuchar));
            }
            _ => {}
        }
    }
    Err(IngestError::header(lines.len(), "missing END OF HEADER"))
}

/// Eight lines of one GPS/BeiDou record decoded into the 4x8 value grid.
fn read_values(record: &[&str]) -> Result<[[Option<f64>; 4]; 8], String> {
    let mut grid = [[None; 4]; 8];
    for k in 0..3 {
        grid[0][k + 1] = parse_real(column(record[0], 23 + 19 * k, 42 + 19 * k))?;
    }
    for (row, line) in record.iter().enumerate().skip(1) {
        if !column(line, 0, 4).trim().is_empty() {
            return Err("broadcast orbit line must start with four blanks".into());
        }
        for k in 0..4 {
            grid[row][k] = parse_real(column(line, 4 + 19 * k, 23 + 19 * k))?;
        }
    }
    Ok(grid)
}

fn decode_record(record: &[&str]) -> Result<BroadcastEphemeris, String> {
    let first = record[0];
    let letter = first.chars().next().ok_or("empty record")?;
    let constellation = Constellation::from_rinex_letter(letter).ok_or("unsupported system")?;
    let svid = parse_int(column(first, 1, 3))?.ok_or("missing satellite number")?;
    if !(1..=99).contains(&svid) {
        return Err(format!("satellite number {svid} out of range"));
    }
    let int = |a, b, what: &str| -> Result<i64, String> {
        parse_int(column(first, a, b))?.ok_or_else(|| format!("missing {what}"))
    };
    let (year, month, day) = (int(4, 8, "year")?, int(9, 11, "month")?, int(12, 14, "day")?);
    let (hour, minute, second) = (int(15, 17, "hour")?, int(18, 20, "minute")?, int(21, 23, "second")?);
    if !(1980..=2200).contains(&year)
        || !(1..=12).contains(&month)
        || !(1..=31).contains(&day)
        || !(0..=23).contains(&hour)
        || !(0..=59).contains(&minute)
        || !(0..=60).contains(&second)
    {
        return Err("clock epoch out of range".into());
    }

    let g = read_values(record)?;
    let req = |row: usize, col: usize, name: &str| -> Result<f64, String> {
        g[row][col].ok_or_else(|| format!("missing {name}"))
    };

    let offset = match constellation {
        Constellation::Gps => 0.0,
        Constellation::BeiDou => BDT_TO_GPST_SECONDS,
    };
    let toc_gps = gps_seconds_from_calendar(year, month, day, hour, minute, second as f64) + offset;

    let mut week = req(5, 2, "week")?;
    if week.fract() != 0.0 || !(0.0..10_000.0).contains(&week) {
        return Err(format!("invalid week {week}"));
    }
    let mut toe = req(3, 0, "toe")?;
    if !(0.0..SECONDS_PER_WEEK).contains(&toe) {
        return Err(format!("toe {toe} outside the week"));
    }
    let mut transmission_time = g[7][0].unwrap_or(toe);
    if constellation == Constellation::BeiDou {
        week += BDT_WEEK_OFFSET as f64;
        toe += BDT_TO_GPST_SECONDS;
        transmission_time += BDT_TO_GPST_SECONDS;
        if toe >= SECONDS_PER_WEEK {
            toe -= SECONDS_PER_WEEK;
            week += 1.0;
        }
    }
    let tgd = match constellation {
        Constellation::Gps => req(6, 2, "TGD")?,
        Constellation::BeiDou => req(6, 2, "TGD1")?,
    };

    let eph = BroadcastEphemeris {
        constellation,
        svid: svid as u16,
        toe,
        week: week as i64,
        sqrt_a: req(2, 3, "sqrtA")?,
        e: req(2, 1, "e")?,
        i0: req(4, 0, "i0")?,
        omega0: req(3, 2, "OMEGA0")?,
        omega: req(4, 2, "omega")?,
        m0: req(1, 3, "M0")?,
        delta_n: req(1, 2, "Delta n")?,
        idot: req(5, 0, "IDOT")?,
        omega_dot: req(4, 3, "OMEGA DOT")?,
        cuc: req(2, 0, "Cuc")?,
        cus: req(2, 2, "Cus")?,
        crc: req(4, 1, "Crc")?,
        crs: req(1, 1, "Crs")?,
        cic: req(3, 1, "Cic")?,
        cis: req(3, 3, "Cis")?,
        af0: req(0, 1, "af0")?,
        af1: req(0, 2, "af1")?,
        af2: req(0, 3, "af2")?,
        toc: toc_gps.rem_euclid(SECONDS_PER_WEEK),
        tgd,
        transmission_time: transmission_time.rem_euclid(SECONDS_PER_WEEK),
    };
    if !(0.0..0.1).contains(&eph.e) {
        return Err(format!("eccentricity {} outside [0, 0.1)", eph.e));
    }
    let a = eph.sqrt_a * eph.sqrt_a;
    if !(a > 2e7 && a < 5e7) {
        return Err(format!("semi-major axis {a} m implausible"));
    }
    Ok(eph)
}

/// Parses a RINEX 3 navigation file. Malformed records are skipped with a warning.
pub fn parse_rinex_nav<R: Read>(mut source: R) -> Result<NavData, IngestError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(IngestError::Empty);
    }
    let (lines, cut) = complete_lines(&bytes);
    let (body_start, klobuchar) = parse_header(&lines)?;
    let mut out = NavData {
        klobuchar,
        warnings: cut.into_iter().collect(),
        ..Default::default()
    };

    let mut i = body_start;
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
        if line.trim().is_empty() {
            i += 1;
            continue;
        }
        let letter = line.chars().next().unwrap_or(' ');
        let Some(extra) = orbit_lines(letter) else {
            out.warnings.push(ParseWarning {
                line: line_no,
                message: format!("unexpected line starting with '{letter}'"),
            });
            i += 1;
            continue;
        };
        let end = i + 1 + extra;
        if end > lines.len() {
            out.warnings.push(ParseWarning {
                line: line_no,
                message: "truncated navigation record".into(),
            });
            break;
        }
        let record: Option<Vec<&str>> = lines[i..end].iter().map(|l| ascii_line(l)).collect();
        i = end;
        let Some(record) = record else {
            out.warnings.push(ParseWarning {
                line: line_no,
                message: "non-ASCII line in record".into(),
            });
            continue;
        };
        if Constellation::from_rinex_letter(letter).is_none() {
            continue;
        }
        match decode_record(&record) {
            Ok(eph) => out.records.push(eph),
            Err(message) => out.warnings.push(ParseWarning { line: line_no, message }),
        }
    }
    Ok(out)
}
