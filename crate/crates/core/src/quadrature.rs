//! Riemann-sum integration of the intensity and next-event prediction.
//!
//! All integrals use the midpoint rule on uniform grids in t, x, y: exact for
//! the constant (Poisson) case and second-order in general. Time cells are
//! swept in ascending order with the accumulated integral kept in memory, so
//! the cumulative compensator at every grid time comes from a single pass.
//! Spatial cells are evaluated in parallel but reduced in a fixed pairwise
//! order, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Event, SpatialRegion};
use crate::error::{Error, Result};
use crate::intensity::Model;
use crate::math::{pairwise_sum, softplus};

/// Sampling density for the Riemann sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Time samples per unit time.
    pub n_t: f64,
    /// Spatial samples along x over the whole region.
    pub n_x: usize,
    /// Spatial samples along y over the whole region.
    pub n_y: usize,
    /// Truncation horizon for the open-ended prediction integrals.
    pub t_max: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { n_t: 64.0, n_x: 64, n_y: 64, t_max: 10.0 }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_t > 0.0) || self.n_x < 2 || self.n_y < 2 || !(self.t_max > 0.0) {
            return Err(Error::Config(format!(
                "quadrature spec out of range: n_t={}, n_x={}, n_y={}, t_max={}",
                self.n_t, self.n_x, self.n_y, self.t_max
            )));
        }
        Ok(())
    }

    /// Default spec with `t_max` set to ten mean inter-event times of `seq`.
    pub fn default_for(seq: &crate::domain::EventSequence) -> Self {
        let mut spec = QuadratureSpec::default();
        if seq.len() >= 2 {
            let mean_gap = seq.span() / seq.len() as f64;
            if mean_gap > 0.0 {
                spec.t_max = 10.0 * mean_gap;
            }
        }
        spec
    }

    /// Number of midpoint cells covering a span, at least 2.
    pub fn time_cells(&self, span: f64) -> usize {
        ((span * self.n_t).ceil() as usize).max(2)
    }
}

/// Precomputed spatial midpoints and their tree scores for one region.
///
/// The tree scores of the quadrature points do not depend on time, so one
/// table serves every time cell of a sweep.
pub struct SpatialTable {
    pub cell_area: f64,
    pub mids: Vec<[f64; 2]>,
    /// Row-major `n_cells x K` leaf scores of each midpoint.
    rho: Vec<f64>,
    k: usize,
}

impl SpatialTable {
    pub fn new(model: &Model, region: &SpatialRegion, n_x: usize, n_y: usize) -> Self {
        let dx = (region.x_hi - region.x_lo) / n_x as f64;
        let dy = (region.y_hi - region.y_lo) / n_y as f64;
        let k = model.n_subregions();
        let mut mids = Vec::with_capacity(n_x * n_y);
        let mut rho = vec![0.0; n_x * n_y * k];
        for ix in 0..n_x {
            for iy in 0..n_y {
                let l = [
                    region.x_lo + (ix as f64 + 0.5) * dx,
                    region.y_lo + (iy as f64 + 0.5) * dy,
                ];
                let c = mids.len();
                model.tree.scores_into(l, &mut rho[c * k..(c + 1) * k]);
                mids.push(l);
            }
        }
        SpatialTable { cell_area: dx * dy, mids, rho, k }
    }

    pub fn n_cells(&self) -> usize {
        self.mids.len()
    }

    pub fn scores(&self, cell: usize) -> &[f64] {
        &self.rho[cell * self.k..(cell + 1) * self.k]
    }

    /// Spatial integral of the intensity at fixed raw subregion rates:
    /// `sum_c softplus(rho_c . lam) * cell_area`.
    pub fn spatial_integral(&self, raw_rates: &[f64]) -> f64 {
        let vals: Vec<f64> = (0..self.n_cells())
            .map(|c| {
                let rho = self.scores(c);
                let z: f64 = rho.iter().zip(raw_rates).map(|(r, l)| r * l).sum();
                softplus(z)
            })
            .collect();
        pairwise_sum(&vals) * self.cell_area
    }
}

/// One pass over `[t0, t1]`: per-cell spatial integrals `s[m]` at the cell
/// midpoints, with `dt` the cell width. History is frozen.
pub(crate) fn spatial_profile(
    model: &Model,
    table: &SpatialTable,
    t0: f64,
    t1: f64,
    hist: &[Event],
    quad: &QuadratureSpec,
) -> Result<(Vec<f64>, f64)> {
    let span = t1 - t0;
    let n = quad.time_cells(span);
    let dt = span / n as f64;
    let s: Result<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|m| {
            let t_mid = t0 + (m as f64 + 0.5) * dt;
            let mut raw = vec![0.0; model.n_subregions()];
            model.raw_subregion_intensities_into(t_mid, hist, &mut raw)?;
            Ok(table.spatial_integral(&raw))
        })
        .collect();
    Ok((s?, dt))
}

/// Compensator over `[t0, t1] x L` with history frozen at `t0`.
///
/// Requires `t0 <= t1 <= t0 + t_max`.
pub fn compensator(
    model: &Model,
    region: &SpatialRegion,
    t0: f64,
    t1: f64,
    hist: &[Event],
    quad: &QuadratureSpec,
) -> Result<f64> {
    if t1 < t0 {
        return Err(Error::Precondition(format!(
            "compensator needs t1 >= t0, got [{t0}, {t1}]"
        )));
    }
    if t1 - t0 > quad.t_max * (1.0 + 1e-9) {
        return Err(Error::Precondition(format!(
            "compensator span {} exceeds t_max {}",
            t1 - t0,
            quad.t_max
        )));
    }
    if t1 == t0 {
        return Ok(0.0);
    }
    let table = SpatialTable::new(model, region, quad.n_x, quad.n_y);
    let (s, dt) = spatial_profile(model, &table, t0, t1, hist, quad)?;
    Ok(pairwise_sum(&s) * dt)
}

/// Cumulative compensator values at the time-cell midpoints of one sweep.
///
/// `cum_mid[m]` integrates from `t0` to the midpoint of cell `m` (full cells
/// before it plus half of its own), which is the survival exponent the
/// midpoint rule pairs with an intensity sample at that midpoint.
pub(crate) struct CompensatorProfile {
    pub t0: f64,
    pub dt: f64,
    pub s: Vec<f64>,
    pub cum_mid: Vec<f64>,
}

impl CompensatorProfile {
    /// Integral over the whole sweep span.
    #[cfg(test)]
    pub fn total(&self) -> f64 {
        match self.s.last() {
            Some(last) => self.cum_mid.last().unwrap() + 0.5 * last * self.dt,
            None => 0.0,
        }
    }
}

pub(crate) fn compensator_profile(
    model: &Model,
    table: &SpatialTable,
    t0: f64,
    t1: f64,
    hist: &[Event],
    quad: &QuadratureSpec,
) -> Result<CompensatorProfile> {
    let (s, dt) = spatial_profile(model, table, t0, t1, hist, quad)?;
    let mut cum_mid = Vec::with_capacity(s.len());
    let mut acc = 0.0;
    for &sm in &s {
        cum_mid.push(acc + 0.5 * sm * dt);
        acc += sm * dt;
    }
    Ok(CompensatorProfile { t0, dt, s, cum_mid })
}

/// Joint density of the next event at `(t, l)` given the history up to
/// `t_prev`: `lam(t, l) * exp(-Lambda(t_prev, t))`.
pub fn joint_density(
    model: &Model,
    region: &SpatialRegion,
    t: f64,
    l: [f64; 2],
    t_prev: f64,
    hist: &[Event],
    quad: &QuadratureSpec,
) -> Result<f64> {
    if t <= t_prev {
        return Err(Error::Precondition(format!(
            "joint density needs t > t_prev, got t={t}, t_prev={t_prev}"
        )));
    }
    let lam = model.intensity_at(t, l, hist)?;
    let exponent = compensator(model, region, t_prev, t, hist, quad)?;
    Ok(lam * (-exponent).exp())
}

/// Time marginal of the joint density: the spatial integral of the intensity
/// times the survival factor at `t`.
pub fn marginal_time_density(
    model: &Model,
    region: &SpatialRegion,
    t: f64,
    t_prev: f64,
    hist: &[Event],
    quad: &QuadratureSpec,
) -> Result<f64> {
    if t <= t_prev {
        return Err(Error::Precondition(format!(
            "time marginal needs t > t_prev, got t={t}, t_prev={t_prev}"
        )));
    }
    let table = SpatialTable::new(model, region, quad.n_x, quad.n_y);
    let mut raw = vec![0.0; model.n_subregions()];
    model.raw_subregion_intensities_into(t, hist, &mut raw)?;
    let s_t = table.spatial_integral(&raw);
    let exponent = compensator(model, region, t_prev, t, hist, quad)?;
    Ok(s_t * (-exponent).exp())
}

/// Location marginal of the joint density at `l`, integrated over
/// `[t_prev, t_prev + t_max]`.
pub fn marginal_location_density(
    model: &Model,
    region: &SpatialRegion,
    l: [f64; 2],
    t_prev: f64,
    hist: &[Event],
    quad: &QuadratureSpec,
) -> Result<f64> {
    let table = SpatialTable::new(model, region, quad.n_x, quad.n_y);
    let profile = compensator_profile(model, &table, t_prev, t_prev + quad.t_max, hist, quad)?;
    let vals: Result<Vec<f64>> = (0..profile.s.len())
        .into_par_iter()
        .map(|m| {
            let t_mid = profile.t0 + (m as f64 + 0.5) * profile.dt;
            let lam = model.intensity_at(t_mid, l, hist)?;
            Ok(lam * (-profile.cum_mid[m]).exp())
        })
        .collect();
    Ok(pairwise_sum(&vals?) * profile.dt)
}

/// Conditional-mean estimate of the next event from truncated marginals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NextEventPrediction {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// Probability mass captured on `[t_prev, t_prev + t_max] x L`.
    pub captured_mass: f64,
    /// Set when `captured_mass < 0.99`; the truncation horizon is too short
    /// for the current intensity level and the means are unreliable.
    pub low_mass: bool,
}

/// Conditional means of the next event time and location, renormalized by the
/// captured mass on the truncated window.
pub fn predict_next(
    model: &Model,
    region: &SpatialRegion,
    t_prev: f64,
    hist: &[Event],
    quad: &QuadratureSpec,
) -> Result<NextEventPrediction> {
    let table = SpatialTable::new(model, region, quad.n_x, quad.n_y);
    let profile = compensator_profile(model, &table, t_prev, t_prev + quad.t_max, hist, quad)?;
    let k = model.n_subregions();

    // Per time cell: survival-weighted mass and spatial first moments.
    let rows: Result<Vec<[f64; 3]>> = (0..profile.s.len())
        .into_par_iter()
        .map(|m| {
            let t_mid = profile.t0 + (m as f64 + 0.5) * profile.dt;
            let mut raw = vec![0.0; k];
            model.raw_subregion_intensities_into(t_mid, hist, &mut raw)?;
            let mut mass = Vec::with_capacity(table.n_cells());
            let mut mx = Vec::with_capacity(table.n_cells());
            let mut my = Vec::with_capacity(table.n_cells());
            for c in 0..table.n_cells() {
                let rho = table.scores(c);
                let z: f64 = rho.iter().zip(&raw).map(|(r, l)| r * l).sum();
                let lam = softplus(z);
                let [x, y] = table.mids[c];
                mass.push(lam);
                mx.push(lam * x);
                my.push(lam * y);
            }
            let w = (-profile.cum_mid[m]).exp() * table.cell_area * profile.dt;
            Ok([
                pairwise_sum(&mass) * w,
                pairwise_sum(&mx) * w,
                pairwise_sum(&my) * w,
            ])
        })
        .collect();
    let rows = rows?;

    let mass: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let z = pairwise_sum(&mass);
    if !(z > 0.0) {
        return Err(Error::Internal(format!("captured mass is not positive: {z}")));
    }
    let t_moment: Vec<f64> = rows
        .iter()
        .enumerate()
        .map(|(m, r)| (profile.t0 + (m as f64 + 0.5) * profile.dt) * r[0])
        .collect();
    let x_moment: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let y_moment: Vec<f64> = rows.iter().map(|r| r[2]).collect();

    Ok(NextEventPrediction {
        t: pairwise_sum(&t_moment) / z,
        x: pairwise_sum(&x_moment) / z,
        y: pairwise_sum(&y_moment) / z,
        captured_mass: z,
        low_mass: z < 0.99,
    })
}
