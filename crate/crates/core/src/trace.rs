//! Per-iteration optimizer records and their CSV form.

use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// Unnormalized KL estimate, or the energy for MAP traces.
    pub value: f64,
    /// Wall-clock seconds since the start of the run.
    pub seconds: f64,
    pub mean_mu: Option<f64>,
    pub mean_sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, iter: usize, value: f64, seconds: f64) {
        self.records.push(TraceRecord {
            iter,
            value,
            seconds,
            mean_mu: None,
            mean_sigma: None,
        });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.value).collect()
    }

    /// Appends `other`, shifting its iteration indices past ours and its
    /// times past our last time.
    pub fn extend_shifted(&mut self, other: &Trace) {
        let iter_offset = self.records.last().map_or(0, |r| r.iter + 1);
        let time_offset = self.records.last().map_or(0.0, |r| r.seconds);
        self.records.extend(other.records.iter().map(|r| TraceRecord {
            iter: r.iter + iter_offset,
            seconds: r.seconds + time_offset,
            ..*r
        }));
    }

    /// CSV with header `iter,kl,seconds` and LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,kl,seconds\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{}", r.iter, format_sig(r.value), format_sig(r.seconds));
        }
        out
    }

    /// The same CSV with wall-clock times replaced by zero, for comparing
    /// runs byte for byte.
    pub fn to_csv_untimed(&self) -> String {
        let mut out = String::from("iter,kl,seconds\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},0", r.iter, format_sig(r.value));
        }
        out
    }
}

/// Formats `v` with 9 significant digits, `%.9g` style.
pub fn format_sig(v: f64) -> String {
    const DIGITS: i32 = 9;
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    // Round first so the exponent reflects the printed mantissa.
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..DIGITS).contains(&exp) {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, v))
    } else {
        let m = trim_zeros(mantissa.to_string());
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(-1.41893853320467), "-1.41893853");
        assert_eq!(format_sig(123456789.4), "123456789");
        assert_eq!(format_sig(1234567890.0), "1.23456789e+09");
        assert_eq!(format_sig(0.000123456789012), "0.000123456789");
        assert_eq!(format_sig(1.5e-7), "1.5e-07");
        assert_eq!(format_sig(9.9999999999), "10");
    }

    #[test]
    fn csv_layout() {
        let mut t = Trace::new();
        t.push(0, 2.5, 0.001);
        t.push(1, -1.0, 0.25);
        assert_eq!(t.to_csv(), "iter,kl,seconds\n0,2.5,0.001\n1,-1,0.25\n");
    }

    #[test]
    fn extend_shifts_indices_and_time() {
        let mut a = Trace::new();
        a.push(0, 1.0, 1.0);
        let mut b = Trace::new();
        b.push(0, 2.0, 0.5);
        b.push(1, 3.0, 0.75);
        a.extend_shifted(&b);
        let iters: Vec<usize> = a.records.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![0, 1, 2]);
        assert_eq!(a.records[2].seconds, 1.75);
    }
}
