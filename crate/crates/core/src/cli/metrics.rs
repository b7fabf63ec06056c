use std::io::Write;
use std::path::Path;

use crate::agent::EpisodeStats;
use crate::{Error, Result};

pub const METRICS_HEADER: &str = "seed,episode,variant,total_reward,waiting_mean_s,throughput,fairness_mean,loss_mean";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub seed: u64,
    pub episode: usize,
    pub variant: String,
    pub total_reward: f64,
    pub waiting_mean_s: f64,
    pub throughput: usize,
    pub fairness_mean: f64,
    /// Empty for controllers that do not train.
    pub loss_mean: Option<f64>,
}

impl MetricsRow {
    pub fn from_stats(seed: u64, variant: &str, s: &EpisodeStats) -> Self {
        MetricsRow {
            seed,
            episode: s.episode,
            variant: variant.to_string(),
            total_reward: s.total_reward,
            waiting_mean_s: s.waiting_mean_s,
            throughput: s.throughput,
            fairness_mean: s.fairness_mean,
            loss_mean: s.loss_mean,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.seed,
            self.episode,
            self.variant,
            format_sig(self.total_reward),
            format_sig(self.waiting_mean_s),
            self.throughput,
            format_sig(self.fairness_mean),
            self.loss_mean.map(format_sig).unwrap_or_default()
        )
    }

    pub fn parse_csv(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 8 {
            return None;
        }
        Some(MetricsRow {
            seed: f[0].parse().ok()?,
            episode: f[1].parse().ok()?,
            variant: f[2].to_string(),
            total_reward: f[3].parse().ok()?,
            waiting_mean_s: f[4].parse().ok()?,
            throughput: f[5].parse().ok()?,
            fairness_mean: f[6].parse().ok()?,
            loss_mean: if f[7].is_empty() { None } else { Some(f[7].parse().ok()?) },
        })
    }
}

/// Nine significant digits, `%g` style: plain notation for moderate
/// exponents, scientific otherwise, trailing zeros removed.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(format!("create {}", path.display()), e))?;
    f.write_all(metrics_csv(rows).as_bytes())
        .map_err(|e| Error::io(format!("write {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row() -> MetricsRow {
        MetricsRow {
            seed: 3,
            episode: 7,
            variant: "rainbow".into(),
            total_reward: -12345.678901234,
            waiting_mean_s: 42.5,
            throughput: 1200,
            fairness_mean: 0.0,
            loss_mean: None,
        }
    }

    #[test]
    fn formatting() {
        assert_eq!(format_sig(-12345.678901234), "-12345.6789");
        assert_eq!(format_sig(42.5), "42.5");
        assert_eq!(format_sig(1.0), "1");
        assert_eq!(format_sig(1.0e-7), "1e-07");
        assert_eq!(format_sig(123456789012.0), "1.23456789e+11");
        assert_eq!(format_sig(0.000123456789123), "0.000123456789");
    }

    #[test]
    fn header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{METRICS_HEADER}\n"));
        write_metrics(&[row()], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().nth(1).unwrap(), "3,7,rainbow,-12345.6789,42.5,1200,0,");
    }

    proptest! {
        #[test]
        fn round_trip_keeps_nine_digits(x in -1e12f64..1e12, y in 0.0f64..1e4, l in proptest::option::of(0.0f64..100.0)) {
            let r = MetricsRow { total_reward: x, waiting_mean_s: y, loss_mean: l, ..row() };
            let back = MetricsRow::parse_csv(&r.to_csv()).unwrap();
            let close = |a: f64, b: f64| a == b || ((a - b) / a).abs() <= 5e-9;
            prop_assert!(close(x, back.total_reward), "{} vs {}", x, back.total_reward);
            prop_assert!(close(y, back.waiting_mean_s));
            prop_assert_eq!(l.is_some(), back.loss_mean.is_some());
            if let (Some(a), Some(b)) = (l, back.loss_mean) {
                prop_assert!(close(a, b));
            }
            // formatting the parsed value again is stable
            prop_assert_eq!(back.to_csv(), r.to_csv());
        }
    }
}
