//! Event-based windows and the three-class mid-price movement label.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::QuoteEvent;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_ALPHA: f64 = 1e-5;

/// Mid-price movement class. The declaration order is also the fixed
/// tie-break order used by voting rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Downwards,
    Stationary,
    Upwards,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Downwards, Label::Stationary, Label::Upwards];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Downwards => "downwards",
            Label::Stationary => "stationary",
            Label::Upwards => "upwards",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "downwards" => Ok(Label::Downwards),
            "stationary" => Ok(Label::Stationary),
            "upwards" => Ok(Label::Upwards),
            other => Err(Error::Param(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelingParams {
    pub alpha: f64,
    pub k: usize,
}

impl Default for LabelingParams {
    fn default() -> Self {
        LabelingParams {
            alpha: DEFAULT_ALPHA,
            k: DEFAULT_K,
        }
    }
}

impl LabelingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Param(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.k < 2 {
            return Err(Error::Param(format!("k must be >= 2, got {}", self.k)));
        }
        Ok(())
    }
}

/// `k` consecutive events of one trading day. `window_index` is 1-based and
/// restarts every day.
#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    pub day: u32,
    pub window_index: usize,
    pub events: Vec<QuoteEvent>,
}

impl EventWindow {
    pub fn k(&self) -> usize {
        self.events.len()
    }

    pub fn first(&self) -> &QuoteEvent {
        &self.events[0]
    }

    pub fn last(&self) -> &QuoteEvent {
        &self.events[self.events.len() - 1]
    }

    pub fn mean_mid(&self) -> f64 {
        self.events.iter().map(|e| e.mid_price).sum::<f64>() / self.events.len() as f64
    }
}

/// Windows of one trading day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayWindows {
    pub day: u32,
    pub windows: Vec<EventWindow>,
}

/// Splits events into non-overlapping windows of `k`, restarting at every
/// trading-day boundary and discarding each day's remainder.
pub fn frame(events: &[QuoteEvent], k: usize) -> Result<Vec<EventWindow>> {
    Ok(frame_by_day(events, k)?
        .into_iter()
        .flat_map(|d| d.windows)
        .collect())
}

pub fn frame_by_day(events: &[QuoteEvent], k: usize) -> Result<Vec<DayWindows>> {
    if k < 2 {
        return Err(Error::Param(format!("window length k must be >= 2, got {k}")));
    }
    let mut days = Vec::new();
    for day_events in events.chunk_by(|a, b| a.day == b.day) {
        let windows = day_events
            .chunks_exact(k)
            .enumerate()
            .map(|(i, chunk)| EventWindow {
                day: chunk[0].day,
                window_index: i + 1,
                events: chunk.to_vec(),
            })
            .collect();
        days.push(DayWindows {
            day: day_events[0].day,
            windows,
        });
    }
    Ok(days)
}

/// Mean mid-price of the current window relative to the last mid-price of
/// the previous one.
pub fn movement_ratio(window: &EventWindow, prev: &EventWindow) -> Result<f64> {
    let base = prev.last().mid_price;
    if base == 0.0 || !base.is_finite() {
        return Err(Error::Degenerate(format!(
            "previous window's last mid-price is {base}"
        )));
    }
    Ok(window.mean_mid() / base)
}

pub fn classify_ratio(r: f64, alpha: f64) -> Label {
    if r > 1.0 + alpha {
        Label::Upwards
    } else if r < 1.0 - alpha {
        Label::Downwards
    } else {
        Label::Stationary
    }
}

pub fn label(window: &EventWindow, prev: &EventWindow, params: &LabelingParams) -> Result<Label> {
    params.validate()?;
    if window.k() != params.k || prev.k() != params.k {
        return Err(Error::Param(format!(
            "windows have lengths {} and {}, expected k = {}",
            window.k(),
            prev.k(),
            params.k
        )));
    }
    Ok(classify_ratio(movement_ratio(window, prev)?, params.alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SESSION_OPEN_NS;

    fn ev(day: u32, t: i64, mid: f64) -> QuoteEvent {
        QuoteEvent::new(day, SESSION_OPEN_NS + t, mid - 0.01, mid + 0.01, 100, 100)
    }

    fn win(mids: &[f64]) -> EventWindow {
        EventWindow {
            day: 0,
            window_index: 1,
            events: mids
                .iter()
                .enumerate()
                .map(|(i, &m)| QuoteEvent::new(0, SESSION_OPEN_NS + i as i64, m, m, 1, 1))
                .collect(),
        }
    }

    #[test]
    fn frame_counts() {
        let events: Vec<_> = (0..12).map(|i| ev(0, i, 100.0)).collect();
        let w = frame(&events, 5).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].events[0], events[5]);
        assert_eq!(w[1].window_index, 2);

        let w = frame(&events[..5], 5).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].events, events[..5].to_vec());

        assert!(frame(&events[..4], 5).unwrap().is_empty());
        assert!(matches!(frame(&events, 1), Err(Error::Param(_))));
    }

    #[test]
    fn frame_restarts_each_day() {
        let mut events: Vec<_> = (0..7).map(|i| ev(0, i, 100.0)).collect();
        events.extend((0..6).map(|i| ev(1, i, 100.0)));
        let days = frame_by_day(&events, 5).unwrap();
        assert_eq!(days.len(), 2);
        assert_eq!(days[0].windows.len(), 1);
        assert_eq!(days[1].windows.len(), 1);
        assert_eq!(days[1].windows[0].window_index, 1);
        assert_eq!(days[1].windows[0].events[0], events[7]);
    }

    #[test]
    fn label_examples() {
        let p = LabelingParams::default();
        let prev = win(&[100.0, 100.0, 100.0, 100.0, 100.0]);
        let up = win(&[100.002; 5]);
        assert_eq!(label(&up, &prev, &p).unwrap(), Label::Upwards);
        assert_eq!(label(&prev.clone(), &prev, &p).unwrap(), Label::Stationary);
        let down = win(&[99.9985; 5]);
        assert_eq!(label(&down, &prev, &p).unwrap(), Label::Downwards);
        let zero_alpha = LabelingParams { alpha: 0.0, k: 5 };
        assert_eq!(label(&prev.clone(), &prev, &zero_alpha).unwrap(), Label::Stationary);
    }

    #[test]
    fn boundary_ratio_is_stationary() {
        assert_eq!(classify_ratio(1.0 + 1e-5, 1e-5), Label::Stationary);
        assert_eq!(classify_ratio(1.0 - 1e-5, 1e-5), Label::Stationary);
        assert_eq!(classify_ratio(1.5, 0.5), Label::Stationary);
    }

    #[test]
    fn zero_base_is_degenerate() {
        let prev = win(&[1.0, 1.0, 1.0, 1.0, 0.0]);
        let cur = win(&[1.0; 5]);
        assert!(matches!(
            label(&cur, &prev, &LabelingParams::default()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn wrong_window_length_rejected() {
        let prev = win(&[1.0; 4]);
        let cur = win(&[1.0; 5]);
        assert!(label(&cur, &prev, &LabelingParams::default()).is_err());
    }

    #[test]
    fn label_order_and_parse() {
        assert!(Label::Downwards < Label::Stationary && Label::Stationary < Label::Upwards);
        for l in Label::ALL {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
            assert_eq!(Label::from_index(l.index()), Some(l));
        }
    }
}
