//! CSV emission.

use std::io::Write;

use crate::harness::MetricsSummary;

/// Shortest decimal rendering with at most 9 significant digits, in the
/// style of `%.9g`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub const SUMMARY_HEADER: [&str; 9] = [
    "scenario",
    "mechanism",
    "estimator",
    "n",
    "metric",
    "stratum",
    "mean",
    "se",
    "replicates",
];

pub fn write_summary_header<W: Write>(w: &mut csv::Writer<W>) -> csv::Result<()> {
    w.write_record(SUMMARY_HEADER)
}

/// Appends the rows of `summary`. `se` is empty with a single value and
/// `stratum` is empty for marginal metrics.
pub fn write_summary_rows<W: Write>(
    w: &mut csv::Writer<W>,
    summary: &MetricsSummary,
) -> csv::Result<()> {
    for row in &summary.rows {
        w.write_record([
            row.scenario.clone(),
            row.mechanism.clone(),
            row.estimator.clone(),
            row.n.to_string(),
            row.metric.to_string(),
            row.stratum.map(|h| h.to_string()).unwrap_or_default(),
            fmt_num(row.moments.mean),
            row.moments.se.map(fmt_num).unwrap_or_default(),
            row.moments.count.to_string(),
        ])?;
    }
    Ok(())
}
