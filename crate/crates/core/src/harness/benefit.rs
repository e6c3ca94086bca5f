use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a benefit cell is printed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenefitFormat {
    /// Speedup at or above the threshold, percentage below it.
    #[default]
    Auto,
    Percent,
    Speedup,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub format: BenefitFormat,
    pub threshold: f64,
    pub decimals: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            format: BenefitFormat::Auto,
            threshold: 2.0,
            decimals: 1,
        }
    }
}

/// Rounds half away from zero at `decimals` places and prints with exactly
/// that many.
pub fn round_fixed(x: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    let r = (x * scale).round() / scale;
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r:.decimals$}")
}

pub fn percent(base: f64, t: f64) -> f64 {
    (base - t) / base * 100.0
}

pub fn speedup(base: f64, t: f64) -> f64 {
    base / t
}

pub fn format_benefit(base: f64, t: f64, opts: &CompareOptions) -> String {
    let s = speedup(base, t);
    let as_speedup = match opts.format {
        BenefitFormat::Speedup => true,
        BenefitFormat::Percent => false,
        BenefitFormat::Auto => s >= opts.threshold,
    };
    if as_speedup {
        format!("×{}", round_fixed(s, opts.decimals))
    } else {
        format!("{}%", round_fixed(percent(base, t), opts.decimals))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenefitRow {
    pub label: String,
    pub time: f64,
    pub percent: f64,
    pub speedup: f64,
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenefitTable {
    pub baseline: String,
    pub baseline_time: f64,
    pub rows: Vec<BenefitRow>,
}

/// Benefit of every non-baseline entry relative to `baseline`.
pub fn compare(times: &BTreeMap<String, f64>, baseline: &str, opts: &CompareOptions) -> Result<BenefitTable> {
    let &base = times.get(baseline).ok_or_else(|| Error::MissingBaseline(baseline.to_string()))?;
    let rows = times
        .iter()
        .filter(|(k, _)| k.as_str() != baseline)
        .map(|(k, &t)| BenefitRow {
            label: format!("{k} vs. {baseline}"),
            time: t,
            percent: percent(base, t),
            speedup: speedup(base, t),
            display: format_benefit(base, t, opts),
        })
        .collect();
    Ok(BenefitTable {
        baseline: baseline.to_string(),
        baseline_time: base,
        rows,
    })
}

/// `printed` parsed back into a format and decimal count, e.g. `×5.16`
/// gives `(Speedup, 2)`.
pub fn printed_style(printed: &str) -> Option<(BenefitFormat, usize)> {
    let (fmt, num) = if let Some(rest) = printed.strip_prefix('×') {
        (BenefitFormat::Speedup, rest)
    } else {
        (BenefitFormat::Percent, printed.strip_suffix('%')?)
    };
    num.parse::<f64>().ok()?;
    let decimals = num.split_once('.').map_or(0, |(_, d)| d.len());
    Some((fmt, decimals))
}
