//! Functional principal component analysis of daily mid-price trajectories.
//!
//! Trajectories are sampled on a uniform grid and the integral operators are
//! replaced by left Riemann sums with weight `dt` (grid spacing in seconds).
//! With `C` the sample covariance of the centered curves, the components
//! solve `(C dt) v = lambda v`; the eigenfunctions are `v / sqrt(dt)` so that
//! `dt * sum_g delta_j(g) delta_h(g)` is the identity.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{QuoteEvent, NANOS_PER_SECOND, SESSION_CLOSE_NS, SESSION_OPEN_NS};

pub const DEFAULT_GRID_SIZE: usize = 390;
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.999;
pub const DEFAULT_HORIZON_NS: i64 = SESSION_CLOSE_NS - SESSION_OPEN_NS;

const BASIS_FORMAT: &str = "lobbench-fpca-basis";
const BASIS_VERSION: u32 = 1;

/// `len` points at `start_ns + g * step_ns`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub start_ns: i64,
    pub step_ns: i64,
    pub len: usize,
}

impl Grid {
    pub fn new(start_ns: i64, step_ns: i64, len: usize) -> Result<Grid> {
        if len < 2 || step_ns <= 0 {
            return Err(Error::Param(format!(
                "grid needs >= 2 points and a positive step (got {len} points, step {step_ns} ns)"
            )));
        }
        Ok(Grid {
            start_ns,
            step_ns,
            len,
        })
    }

    /// `len` points covering `[start_ns, start_ns + horizon_ns)`.
    pub fn spanning(start_ns: i64, horizon_ns: i64, len: usize) -> Result<Grid> {
        if len == 0 {
            return Err(Error::Param("grid size must be positive".into()));
        }
        Grid::new(start_ns, horizon_ns / len as i64, len)
    }

    pub fn point(&self, g: usize) -> i64 {
        self.start_ns + g as i64 * self.step_ns
    }

    /// Quadrature weight in seconds.
    pub fn dt(&self) -> f64 {
        self.step_ns as f64 / NANOS_PER_SECOND as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub day: u32,
    pub grid: Grid,
    pub values: Vec<f64>,
}

/// Resamples each day's mid-prices onto the grid by last observation carried
/// forward; grid points before the first event take the first event's value.
/// Days without events are skipped and reported by index.
pub fn build_trajectories(
    events: &[QuoteEvent],
    horizon_ns: i64,
    grid_size: usize,
) -> Result<(Vec<Trajectory>, Vec<u32>)> {
    let grid = Grid::spanning(SESSION_OPEN_NS, horizon_ns, grid_size)?;
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    let mut next_day = events.first().map(|e| e.day);
    for day_events in events.chunk_by(|a, b| a.day == b.day) {
        let day = day_events[0].day;
        if let Some(expected) = next_day {
            for missing in expected..day {
                warn!("no events on day {missing}; trajectory skipped");
                skipped.push(missing);
            }
        }
        next_day = Some(day + 1);
        out.push(resample_locf(day, day_events, grid));
    }
    Ok((out, skipped))
}

pub fn resample_locf(day: u32, events: &[QuoteEvent], grid: Grid) -> Trajectory {
    let mut values = Vec::with_capacity(grid.len);
    let mut idx = 0usize;
    let mut current = events[0].mid_price;
    for g in 0..grid.len {
        let t = grid.point(g);
        while idx < events.len() && events[idx].timestamp_ns <= t {
            current = events[idx].mid_price;
            idx += 1;
        }
        values.push(current);
    }
    Trajectory { day, grid, values }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaBasis {
    pub format: String,
    pub version: u32,
    pub grid: Grid,
    pub quadrature_weight: f64,
    pub variance_threshold: f64,
    pub mean_curve: Vec<f64>,
    /// Retained eigenfunctions sampled on the grid.
    pub components: Vec<Vec<f64>>,
    /// Retained eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Sum of all eigenvalues.
    pub total_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcScores {
    pub scores: Vec<f64>,
}

impl FpcaBasis {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn explained_fraction(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.eigenvalues.iter().sum::<f64>() / self.total_variance
        } else {
            1.0
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FpcaBasis> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let basis: FpcaBasis = serde_json::from_str(&text)?;
        if basis.format != BASIS_FORMAT {
            return Err(Error::Param(format!("{} is not an FPCA basis file", path.display())));
        }
        if basis.version != BASIS_VERSION {
            return Err(Error::Version {
                found: basis.version,
                expected: BASIS_VERSION,
            });
        }
        Ok(basis)
    }
}

/// Fits the mean curve and the leading components that together explain at
/// least `variance_threshold` of the total variance.
pub fn fit(trajectories: &[Trajectory], variance_threshold: f64) -> Result<FpcaBasis> {
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::Param(format!(
            "variance threshold must be in (0, 1], got {variance_threshold}"
        )));
    }
    if trajectories.len() < 2 {
        return Err(Error::Param(format!(
            "FPCA needs at least 2 trajectories, got {}",
            trajectories.len()
        )));
    }
    let grid = trajectories[0].grid;
    if grid.len < 2 {
        return Err(Error::Param("trajectory grid needs at least 2 points".into()));
    }
    for t in trajectories {
        if t.grid != grid || t.values.len() != grid.len {
            return Err(Error::Param(format!(
                "trajectory for day {} is not on the common grid",
                t.day
            )));
        }
        if t.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param(format!("trajectory for day {} is not finite", t.day)));
        }
    }

    let n = trajectories.len();
    let g = grid.len;
    let dt = grid.dt();
    let mut mean_curve = vec![0.0; g];
    for t in trajectories {
        for (m, v) in mean_curve.iter_mut().zip(&t.values) {
            *m += v;
        }
    }
    mean_curve.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, g, |i, j| trajectories[i].values[j] - mean_curve[j]);
    let scale = dt / (n - 1) as f64;

    // Eigenpairs of the (dt-weighted) covariance operator, as unit vectors
    // in grid space. Use whichever of the G x G or N x N problems is smaller.
    let mut pairs: Vec<(f64, Vec<f64>)> = if g <= n {
        let cov = centered.transpose() * &centered * scale;
        let eig = SymmetricEigen::new(cov);
        (0..g)
            .map(|j| (eig.eigenvalues[j], eig.eigenvectors.column(j).iter().copied().collect()))
            .collect()
    } else {
        let gram = &centered * centered.transpose() * scale;
        let eig = SymmetricEigen::new(gram);
        (0..n)
            .map(|j| {
                let w = centered.transpose() * eig.eigenvectors.column(j);
                let norm = w.norm();
                let v = if norm > 0.0 {
                    w.iter().map(|x| x / norm).collect()
                } else {
                    vec![0.0; g]
                };
                (eig.eigenvalues[j], v)
            })
            .collect()
    };
    pairs.iter_mut().for_each(|p| p.0 = p.0.max(0.0));
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let total_variance: f64 = pairs.iter().map(|p| p.0).sum();
    // Curves equal up to rounding in the mean count as identical.
    let largest_abs = centered.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let largest_value = mean_curve.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let degenerate = largest_abs <= 1e-13 * largest_value;
    let mut retained = 0;
    if total_variance > 0.0 && !degenerate {
        let target = variance_threshold * total_variance * (1.0 - 1e-12);
        let mut cum = 0.0;
        for (lambda, _) in &pairs {
            if lambda <= &0.0 {
                break;
            }
            cum += lambda;
            retained += 1;
            if cum >= target {
                break;
            }
        }
    } else {
        warn!("all trajectories coincide; FPCA basis has no components");
    }

    let root_dt = dt.sqrt();
    let mut components = Vec::with_capacity(retained);
    let mut eigenvalues = Vec::with_capacity(retained);
    for (lambda, v) in pairs.into_iter().take(retained) {
        let mut delta: Vec<f64> = v.iter().map(|x| x / root_dt).collect();
        let pivot = delta
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            delta.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(delta);
        eigenvalues.push(lambda);
    }

    Ok(FpcaBasis {
        format: BASIS_FORMAT.to_string(),
        version: BASIS_VERSION,
        grid,
        quadrature_weight: dt,
        variance_threshold,
        mean_curve,
        components,
        eigenvalues,
        total_variance: if degenerate { 0.0 } else { total_variance },
    })
}

pub fn project(trajectory: &Trajectory, basis: &FpcaBasis) -> Result<FpcScores> {
    if trajectory.grid != basis.grid || trajectory.values.len() != basis.mean_curve.len() {
        return Err(Error::Param(format!(
            "trajectory for day {} does not match the basis grid",
            trajectory.day
        )));
    }
    let dt = basis.quadrature_weight;
    let scores = basis
        .components
        .iter()
        .map(|delta| {
            dt * delta
                .iter()
                .zip(&trajectory.values)
                .zip(&basis.mean_curve)
                .map(|((d, x), m)| d * (x - m))
                .sum::<f64>()
        })
        .collect();
    Ok(FpcScores { scores })
}

/// `mean_curve + sum_j s_j delta_j`.
pub fn reconstruct(scores: &FpcScores, basis: &FpcaBasis) -> Vec<f64> {
    let mut out = basis.mean_curve.clone();
    for (s, delta) in scores.scores.iter().zip(&basis.components) {
        for (o, d) in out.iter_mut().zip(delta) {
            *o += s * d;
        }
    }
    out
}
