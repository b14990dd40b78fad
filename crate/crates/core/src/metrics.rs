//! Deviation statistics and training-curve CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = ["iteration", "loss", "ratio_mean", "ratio_median", "frac10", "frac25"];

/// `sum|pred - target| / sum|target|`. A zero-norm target yields
/// [`Error::ResampleRequired`].
pub fn manhattan_ratio(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || target.is_empty() {
        return Err(Error::Structural(format!(
            "manhattan_ratio: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let norm: f64 = target.iter().map(|t| t.abs()).sum();
    if norm == 0.0 {
        return Err(Error::ResampleRequired);
    }
    let err: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(err / norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    pub median: f64,
    pub frac_within_10: f64,
    pub frac_within_25: f64,
    pub trials: usize,
}

/// Mean, median (midpoint of the central pair for even counts) and the
/// fractions of samples at or below 0.10 and 0.25.
pub fn summarize(samples: &[f64]) -> Result<EvalStats> {
    if samples.is_empty() {
        return Err(Error::Structural("summarize: no samples".into()));
    }
    let n = samples.len();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    // summing the sorted copy keeps the mean independent of input order
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let within = |t: f64| sorted.iter().filter(|&&s| s <= t).count() as f64 / n as f64;
    Ok(EvalStats {
        mean,
        median,
        frac_within_10: within(0.10),
        frac_within_25: within(0.25),
        trials: n,
    })
}

/// One logged point of a training curve. `loss` is the mean training loss
/// since the previous row; the ratio columns come from a held-out evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub loss: f64,
    pub ratio_mean: f64,
    pub ratio_median: f64,
    pub frac10: f64,
    pub frac25: f64,
}

impl MetricsRow {
    pub fn new(iteration: u64, loss: f64, stats: &EvalStats) -> Self {
        Self {
            iteration,
            loss,
            ratio_mean: stats.mean,
            ratio_median: stats.median,
            frac10: stats.frac_within_10,
            frac25: stats.frac_within_25,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsHistory {
    pub rows: Vec<MetricsRow>,
}

impl MetricsHistory {
    pub fn push(&mut self, row: MetricsRow) {
        debug_assert!(self.rows.last().is_none_or(|r| r.iteration < row.iteration));
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Decimal with 9 significant digits, trailing zeros trimmed; exponent form
/// outside `1e-5 <= |v| < 1e9`.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        return format!("{m}e{exp}");
    }
    let decimals = (8 - exp) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_csv(history: &MetricsHistory, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_csv_to(history, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_csv_to<W: Write>(history: &MetricsHistory, out: W) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &history.rows {
        w.write_record([
            r.iteration.to_string(),
            format_sig9(r.loss),
            format_sig9(r.ratio_mean),
            format_sig9(r.ratio_median),
            format_sig9(r.frac10),
            format_sig9(r.frac25),
        ])?;
    }
    w.flush()
}

pub fn read_csv(path: &Path) -> Result<MetricsHistory> {
    let bad = |msg: String| Error::Data(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut history = MetricsHistory::default();
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse()
                .map_err(|_| bad(format!("bad number {:?}", &record[i])))
        };
        history.rows.push(MetricsRow {
            iteration: record[0]
                .parse()
                .map_err(|_| bad(format!("bad iteration {:?}", &record[0])))?,
            loss: num(1)?,
            ratio_mean: num(2)?,
            ratio_median: num(3)?,
            frac10: num(4)?,
            frac25: num(5)?,
        });
    }
    Ok(history)
}
