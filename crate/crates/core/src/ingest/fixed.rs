//! Fixed-width field helpers for RINEX records.

/// Byte-column slice of a line, padded with blanks when the line is short.
pub(crate) fn column(line: &str, start: usize, end: usize) -> &str {
    let len = line.len();
    if start >= len {
        return "";
    }
    let end = end.min(len);
    line.get(start..end).unwrap_or("")
}

/// Parses a Fortran-style real. Blank yields `Ok(None)`.
///
/// Only digits, sign, decimal point and a single `D`/`E` exponent marker are
/// accepted, so `inf`, `NaN` and stray letters are rejected rather than read.
pub(crate) fn parse_real(field: &str) -> Result<Option<f64>, String> {
    let s = field.trim();
    if s.is_empty() {
        return Ok(None);
    }
    let mut normalized = String::with_capacity(s.len());
    let mut seen_exponent = false;
    let mut seen_digit = false;
    for (i, c) in s.chars().enumerate() {
        match c {
            '0'..='9' => {
                seen_digit = true;
                normalized.push(c);
            }
            '.' => normalized.push(c),
            '+' | '-' => {
                let prev = normalized.chars().last();
                if i != 0 && prev != Some('E') {
                    return Err(format!("misplaced sign in '{s}'"));
                }
                normalized.push(c);
            }
            'D' | 'd' | 'E' | 'e' if !seen_exponent && seen_digit => {
                seen_exponent = true;
                normalized.push('E');
            }
            _ => return Err(format!("invalid numeric field '{s}'")),
        }
    }
    let v: f64 = normalized
        .parse()
        .map_err(|_| format!("invalid numeric field '{s}'"))?;
    if v.is_finite() {
        Ok(Some(v))
    } else {
        Err(format!("non-finite numeric field '{s}'"))
    }
}

pub(crate) fn parse_int(field: &str) -> Result<Option<i64>, String> {
    let s = field.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<i64>()
        .map(Some)
        .map_err(|_| format!("invalid integer field '{s}'"))
}
