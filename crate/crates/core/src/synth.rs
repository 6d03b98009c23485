//! Synthetic quote streams with a controllable momentum signal.
//!
//! The mid-price is a random walk on the tick grid. Each event moves it by
//! one tick with probability `move_probability`; the direction of a move in
//! window `i` is biased towards the sign of the OLS mid-price slope of
//! window `i-1` by `trend_signal_strength`, so within-window variables carry
//! information that the record-event variables alone do not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ols_slope;
use crate::ingest::{QuoteEvent, SESSION_CLOSE_NS, SESSION_OPEN_NS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_events: usize,
    pub n_days: u32,
    pub seed: u64,
    pub base_price: f64,
    pub tick_size: f64,
    /// Half-spread is `1 + Poisson(spread_extra_mean)` ticks.
    pub spread_extra_mean: f64,
    pub max_half_spread_ticks: u32,
    /// Expected mid-price change per event, in price units.
    pub drift_per_event: f64,
    pub trend_signal_strength: f64,
    pub move_probability: f64,
    /// Events per second.
    pub event_rate: f64,
    /// Window length the signal is planted for.
    pub window_k: usize,
    /// Log-normal parameters of quote sizes in round lots of 100.
    pub volume_log_mean: f64,
    pub volume_log_sd: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_events: 100_000,
            n_days: 10,
            seed: 0,
            base_price: 100.0,
            tick_size: 0.01,
            spread_extra_mean: 0.5,
            max_half_spread_ticks: 20,
            drift_per_event: 0.0,
            trend_signal_strength: 0.0,
            move_probability: 0.3,
            event_rate: 0.5,
            window_k: 5,
            volume_log_mean: 1.5,
            volume_log_sd: 0.8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Param(m));
        if self.n_events == 0 {
            return bad("n_events must be positive".into());
        }
        if self.n_days == 0 || self.n_events < self.n_days as usize {
            return bad(format!("{} events cannot fill {} days", self.n_events, self.n_days));
        }
        if !(self.base_price > 0.0 && self.base_price.is_finite()) {
            return bad(format!("base_price must be positive, got {}", self.base_price));
        }
        if !(self.tick_size > 0.0 && self.tick_size.is_finite()) {
            return bad(format!("tick_size must be positive, got {}", self.tick_size));
        }
        let floor_ticks = self.base_price / self.tick_size / 2.0;
        if floor_ticks < 8.0 * self.max_half_spread_ticks as f64 {
            return bad("base_price is too few ticks for the spread cap".into());
        }
        if self.max_half_spread_ticks == 0 {
            return bad("max_half_spread_ticks must be positive".into());
        }
        if !(self.spread_extra_mean >= 0.0 && self.spread_extra_mean.is_finite()) {
            return bad("spread_extra_mean must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.trend_signal_strength) {
            return bad(format!(
                "trend_signal_strength must lie in [0, 1], got {}",
                self.trend_signal_strength
            ));
        }
        if !(self.move_probability > 0.0 && self.move_probability <= 1.0) {
            return bad("move_probability must lie in (0, 1]".into());
        }
        let bias = self.drift_per_event.abs() / (2.0 * self.tick_size * self.move_probability);
        if !(bias + 0.5 * self.trend_signal_strength <= 0.5) {
            return bad("drift and signal strength together push the up-move probability outside [0, 1]".into());
        }
        if !(self.event_rate > 0.0 && self.event_rate.is_finite()) {
            return bad("event_rate must be positive".into());
        }
        if self.window_k == 0 {
            return bad("window_k must be positive".into());
        }
        if !(self.volume_log_sd >= 0.0 && self.volume_log_mean.is_finite() && self.volume_log_sd.is_finite()) {
            return bad("invalid volume parameters".into());
        }
        Ok(())
    }
}

fn slope_sign(times: &[i64], mids: &[f64]) -> f64 {
    let s = ols_slope(times, mids);
    if s > 0.0 {
        1.0
    } else if s < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Chronological events across `n_days` sessions; deterministic in `seed`.
pub fn generate(config: &SynthConfig) -> Result<Vec<QuoteEvent>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gap = Exp::new(config.event_rate).map_err(|e| Error::Param(e.to_string()))?;
    let volume = LogNormal::new(config.volume_log_mean, config.volume_log_sd)
        .map_err(|e| Error::Param(e.to_string()))?;
    let spread = if config.spread_extra_mean > 0.0 {
        Some(Poisson::new(config.spread_extra_mean).map_err(|e| Error::Param(e.to_string()))?)
    } else {
        None
    };

    let tick = config.tick_size;
    let mut mid_ticks = (config.base_price / tick).round() as i64;
    let floor_ticks = mid_ticks / 2;
    let drift_bias = config.drift_per_event / (2.0 * tick * config.move_probability);
    let session = (SESSION_CLOSE_NS - SESSION_OPEN_NS) as f64;

    let mut out = Vec::with_capacity(config.n_events);
    let per_day = config.n_events / config.n_days as usize;
    let extra = config.n_events % config.n_days as usize;
    for day in 0..config.n_days {
        let n = per_day + usize::from((day as usize) < extra);

        // Arrival times: exponential gaps, compressed if they overrun the session.
        let gaps: Vec<f64> = (0..=n).map(|_| gap.sample(&mut rng) * 1e9).collect();
        let total: f64 = gaps.iter().sum();
        let scale = if total >= session { (session - 1.0) / total } else { 1.0 };
        let mut times = Vec::with_capacity(n);
        let mut t = 0.0;
        let mut last_ns = SESSION_OPEN_NS - 1;
        for g in &gaps[..n] {
            t += g * scale;
            let ns = (SESSION_OPEN_NS + t as i64).max(last_ns + 1);
            times.push(ns);
            last_ns = ns;
        }
        if last_ns >= SESSION_CLOSE_NS {
            // Extremely dense days only: spread evenly instead.
            let step = (SESSION_CLOSE_NS - SESSION_OPEN_NS) / (n as i64 + 1);
            for (j, ts) in times.iter_mut().enumerate() {
                *ts = SESSION_OPEN_NS + step * (j as i64 + 1);
            }
        }

        let mut prev_sign = 0.0;
        let mut win_times = Vec::with_capacity(config.window_k);
        let mut win_mids = Vec::with_capacity(config.window_k);
        for (j, &ts) in times.iter().enumerate() {
            if j > 0 && rng.random::<f64>() < config.move_probability {
                let p_up = 0.5 + 0.5 * config.trend_signal_strength * prev_sign + drift_bias;
                let mut step = if rng.random::<f64>() < p_up { 1 } else { -1 };
                if mid_ticks + step < floor_ticks {
                    step = 1;
                }
                mid_ticks += step;
            }
            let extra_half = spread.as_ref().map_or(0, |d| d.sample(&mut rng) as u32);
            let half = (1 + extra_half).min(config.max_half_spread_ticks) as i64;
            let bid = (mid_ticks - half) as f64 * tick;
            let ask = (mid_ticks + half) as f64 * tick;
            let bv = (volume.sample(&mut rng).round().max(1.0) as u64) * 100;
            let av = (volume.sample(&mut rng).round().max(1.0) as u64) * 100;
            let ev = QuoteEvent::new(day, ts, bid, ask, bv, av);

            win_times.push(ts);
            win_mids.push(ev.mid_price);
            if win_times.len() == config.window_k {
                prev_sign = slope_sign(&win_times, &win_mids);
                win_times.clear();
                win_mids.clear();
            }
            out.push(ev);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::clean;

    fn small(seed: u64, strength: f64) -> SynthConfig {
        SynthConfig {
            n_events: 20_000,
            n_days: 2,
            seed,
            trend_signal_strength: strength,
            ..Default::default()
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        for c in [
            SynthConfig { n_events: 0, ..Default::default() },
            SynthConfig { base_price: -1.0, ..Default::default() },
            SynthConfig { tick_size: 0.0, ..Default::default() },
            SynthConfig { trend_signal_strength: 1.5, ..Default::default() },
            SynthConfig { n_days: 0, ..Default::default() },
            SynthConfig { drift_per_event: 0.01, trend_signal_strength: 1.0, ..Default::default() },
        ] {
            assert!(generate(&c).is_err(), "{c:?}");
        }
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(generate(&small(3, 0.5)).unwrap(), generate(&small(3, 0.5)).unwrap());
        assert_ne!(generate(&small(3, 0.5)).unwrap(), generate(&small(4, 0.5)).unwrap());
    }

    #[test]
    fn output_survives_cleaning_untouched() {
        let events = generate(&small(9, 1.0)).unwrap();
        assert_eq!(events.len(), 20_000);
        let raw: Vec<_> = events.iter().map(|e| e.to_raw("SYN")).collect();
        let (kept, report) = clean(&raw).unwrap();
        assert_eq!(report.dropped(), 0);
        assert_eq!(kept, events);
        for w in events.windows(2) {
            assert!((w[0].day, w[0].timestamp_ns) < (w[1].day, w[1].timestamp_ns));
        }
        assert!(events.iter().all(|e| e.bid_price < e.ask_price));
    }

    #[test]
    fn drift_moves_the_price() {
        let c = SynthConfig {
            n_events: 20_000,
            n_days: 1,
            drift_per_event: 0.002,
            ..Default::default()
        };
        let events = generate(&c).unwrap();
        let change = events.last().unwrap().mid_price - events[0].mid_price;
        // Expected 40 price units; the walk's spread is about 0.8.
        assert!(change > 30.0, "{change}");
    }
}
