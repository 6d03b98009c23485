//! Window-level variables (V11–V22) and within-window variables (V1–V10).
//!
//! Every feature for target window `i` reads only windows `i-1` and `i-2`
//! of the same trading day, plus the events of that day inside the one
//! second that ends at the last event of window `i-1`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::NANOS_PER_SECOND;
use crate::windowing::{self, DayWindows, EventWindow, Label, LabelingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum FeatureId {
    /// `V1`..`V22`.
    Var(u8),
    /// 1-based functional principal component score.
    Fpc(u8),
}

impl FeatureId {
    pub fn var(n: u8) -> FeatureId {
        assert!((1..=22).contains(&n), "no variable V{n}");
        FeatureId::Var(n)
    }

    pub fn within_window() -> Vec<FeatureId> {
        (1..=10).map(FeatureId::Var).collect()
    }

    pub fn window_level() -> Vec<FeatureId> {
        (11..=22).map(FeatureId::Var).collect()
    }

    pub fn all_vars() -> Vec<FeatureId> {
        (1..=22).map(FeatureId::Var).collect()
    }

    pub fn fpc(count: usize) -> Vec<FeatureId> {
        (1..=count).map(|j| FeatureId::Fpc(j as u8)).collect()
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureId::Var(n) => write!(f, "V{n}"),
            FeatureId::Fpc(j) => write!(f, "FPC{j}"),
        }
    }
}

impl FromStr for FeatureId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Param(format!("unknown feature id {s:?}"));
        if let Some(rest) = s.strip_prefix("FPC") {
            let j: u8 = rest.parse().map_err(|_| bad())?;
            if j == 0 {
                return Err(bad());
            }
            Ok(FeatureId::Fpc(j))
        } else if let Some(rest) = s.strip_prefix('V') {
            let n: u8 = rest.parse().map_err(|_| bad())?;
            if !(1..=22).contains(&n) {
                return Err(bad());
            }
            Ok(FeatureId::Var(n))
        } else {
            Err(bad())
        }
    }
}

impl From<FeatureId> for String {
    fn from(id: FeatureId) -> String {
        id.to_string()
    }
}

impl TryFrom<String> for FeatureId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// V1..V10, in order.
pub type WithinWindow = [f64; 10];

/// V11..V22, in order, plus whether the one-second lookback held fewer than
/// two events (derivatives then default to zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowLevel {
    pub values: [f64; 12],
    pub short_lookback: bool,
}

fn check_target(windows: &[EventWindow], i: usize) -> Result<()> {
    if i < 3 {
        return Err(Error::Param(format!("target window must be >= 3, got {i}")));
    }
    if i > windows.len() + 1 {
        return Err(Error::Param(format!(
            "target window {i} needs window {} but only {} exist",
            i - 1,
            windows.len()
        )));
    }
    Ok(())
}

/// Ordinary-least-squares slope of `values` against time (nanoseconds
/// relative to a common anchor), in units per second.
pub fn ols_slope(times_ns: &[i64], values: &[f64]) -> f64 {
    let n = times_ns.len();
    if n < 2 {
        return 0.0;
    }
    let secs: Vec<f64> = times_ns
        .iter()
        .map(|&t| t as f64 / NANOS_PER_SECOND as f64)
        .collect();
    // Shifting by the first value keeps a constant series at slope 0 exactly.
    let shifted: Vec<f64> = values.iter().map(|v| v - values[0]).collect();
    let t_mean = secs.iter().sum::<f64>() / n as f64;
    let v_mean = shifted.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in secs.iter().zip(&shifted) {
        sxy += (t - t_mean) * (v - v_mean);
        sxx += (t - t_mean) * (t - t_mean);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// V11–V22 for target window `i` (1-based) of one day's windows.
pub fn window_level_features(windows: &[EventWindow], i: usize) -> Result<WindowLevel> {
    check_target(windows, i)?;
    let prev = &windows[i - 2];
    let rec = prev.last();
    let anchor = rec.timestamp_ns;
    let cutoff = anchor - NANOS_PER_SECOND;

    // Events in (anchor - 1s, anchor], walking backwards through the day.
    let mut recent = Vec::new();
    'outer: for w in windows[..i - 1].iter().rev() {
        for e in w.events.iter().rev() {
            if e.timestamp_ns <= cutoff {
                break 'outer;
            }
            recent.push(e);
        }
    }
    recent.reverse();
    let times: Vec<i64> = recent.iter().map(|e| e.timestamp_ns - anchor).collect();
    let series = |f: fn(&crate::ingest::QuoteEvent) -> f64| -> f64 {
        let vals: Vec<f64> = recent.iter().map(|e| f(e)).collect();
        ols_slope(&times, &vals)
    };

    let values = [
        rec.ask_price,
        rec.bid_price,
        rec.mid_price,
        rec.ask_volume as f64,
        rec.bid_volume as f64,
        (rec.ask_price - rec.bid_price) / rec.mid_price,
        series(|e| e.ask_price),
        series(|e| e.bid_price),
        series(|e| e.mid_price),
        series(|e| e.ask_volume as f64),
        series(|e| e.bid_volume as f64),
        recent.len() as f64,
    ];
    Ok(WindowLevel {
        values,
        short_lookback: recent.len() < 2,
    })
}

/// V1–V10 for target window `i` (1-based) of one day's windows.
pub fn within_window_features(windows: &[EventWindow], i: usize) -> Result<WithinWindow> {
    check_target(windows, i)?;
    let prev = &windows[i - 2];
    let prev2 = &windows[i - 3];
    let k = prev.k() as f64;
    let (first, last) = (prev.first(), prev.last());

    let mean = |f: fn(&crate::ingest::QuoteEvent) -> f64| prev.events.iter().map(f).sum::<f64>() / k;
    let mids: Vec<f64> = prev2
        .events
        .iter()
        .chain(&prev.events)
        .map(|e| e.mid_price - prev2.first().mid_price)
        .collect();
    let mid_mean = mids.iter().sum::<f64>() / mids.len() as f64;
    let var = mids.iter().map(|m| (m - mid_mean).powi(2)).sum::<f64>() / mids.len() as f64;
    let span_ns = (last.timestamp_ns - first.timestamp_ns).max(1);

    Ok([
        (last.bid_price - first.bid_price) / first.bid_price,
        (last.ask_price - first.ask_price) / first.ask_price,
        (last.bid_price - first.ask_price) / first.ask_price,
        mean(|e| e.ask_price),
        mean(|e| e.bid_price),
        mean(|e| e.mid_price),
        prev.events.iter().map(|e| e.ask_volume as f64).sum(),
        prev.events.iter().map(|e| e.bid_volume as f64).sum(),
        var.sqrt(),
        NANOS_PER_SECOND as f64 / span_ns as f64,
    ])
}

/// One supervised sample. `values` line up with the owning matrix's
/// `feature_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub day: u32,
    pub window_index: usize,
    pub label: Label,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub feature_ids: Vec<FeatureId>,
    pub rows: Vec<FeatureRow>,
    /// Set once winsorization and standardization have been applied.
    pub standardized: bool,
}

impl FeatureMatrix {
    pub fn new(feature_ids: Vec<FeatureId>) -> Self {
        FeatureMatrix {
            feature_ids,
            rows: Vec::new(),
            standardized: false,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn column_of(&self, id: FeatureId) -> Option<usize> {
        self.feature_ids.iter().position(|&f| f == id)
    }

    pub fn value(&self, row: usize, id: FeatureId) -> Option<f64> {
        self.column_of(id).map(|c| self.rows[row].values[c])
    }

    pub fn labels(&self) -> Vec<Label> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            feature_ids: self.feature_ids.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            standardized: self.standardized,
        }
    }

    /// Keeps only the given columns, in the given order.
    pub fn select(&self, ids: &[FeatureId]) -> Result<FeatureMatrix> {
        let cols: Vec<usize> = ids
            .iter()
            .map(|&id| {
                self.column_of(id)
                    .ok_or_else(|| Error::Param(format!("feature {id} not present")))
            })
            .collect::<Result<_>>()?;
        Ok(FeatureMatrix {
            feature_ids: ids.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| FeatureRow {
                    values: cols.iter().map(|&c| r.values[c]).collect(),
                    ..r.clone()
                })
                .collect(),
            standardized: self.standardized,
        })
    }

    pub fn check_finite(&self) -> Result<()> {
        for (ri, r) in self.rows.iter().enumerate() {
            if let Some(c) = r.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Fit(format!(
                    "row {ri} has non-finite value for {}",
                    self.feature_ids[c]
                )));
            }
        }
        Ok(())
    }

    /// Delimited export: header `day,window_index,label,<feature ids>`,
    /// values in scientific notation with 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::io("<feature matrix>", e);
        let mut header = String::from("day,window_index,label");
        for id in &self.feature_ids {
            header.push(',');
            header.push_str(&id.to_string());
        }
        writeln!(w, "{header}").map_err(io)?;
        for r in &self.rows {
            let mut line = format!("{},{},{}", r.day, r.window_index, r.label);
            for v in &r.values {
                line.push(',');
                line.push_str(&format_value(*v));
            }
            writeln!(w, "{line}").map_err(io)?;
        }
        Ok(())
    }
}

pub fn format_value(v: f64) -> String {
    format!("{v:.11e}")
}

/// Labels every window from the third onward of each day and computes
/// V1–V22 for it.
pub fn build_feature_rows(days: &[DayWindows], params: &LabelingParams) -> Result<FeatureMatrix> {
    params.validate()?;
    let mut m = FeatureMatrix::new(FeatureId::all_vars());
    for day in days {
        let w = &day.windows;
        for i in 3..=w.len() {
            let label = windowing::label(&w[i - 1], &w[i - 2], params)?;
            let within = within_window_features(w, i)?;
            let level = window_level_features(w, i)?;
            let mut values = Vec::with_capacity(22);
            values.extend_from_slice(&within);
            values.extend_from_slice(&level.values);
            m.rows.push(FeatureRow {
                day: day.day,
                window_index: i,
                label,
                values,
            });
        }
    }
    Ok(m)
}
