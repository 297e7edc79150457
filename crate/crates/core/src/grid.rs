//! Spatial count grids for horizon forecasting.
//!
//! The expected-count grid integrates the intensity over one horizon window
//! per cell, with the history frozen at the window start — the forecasting
//! condition. Actual grids count observed events into the same geometry.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Event, SpatialRegion};
use crate::error::{Error, Result};
use crate::intensity::Model;
use crate::math::{pairwise_sum, softplus};
use crate::quadrature::QuadratureSpec;

/// Geometry of a count grid: the covered region and its resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub region: SpatialRegion,
    pub n_x: usize,
    pub n_y: usize,
}

impl GridSpec {
    pub fn new(region: SpatialRegion, n_x: usize, n_y: usize) -> Result<Self> {
        if n_x == 0 || n_y == 0 {
            return Err(Error::Precondition("grid resolution must be positive".into()));
        }
        Ok(GridSpec { region, n_x, n_y })
    }

    pub fn n_cells(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn cell_area(&self) -> f64 {
        self.region.area() / self.n_cells() as f64
    }

    /// Cell index of a location; boundary coordinates clamp inward.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        if !self.region.contains(x, y) {
            return None;
        }
        let fx = (x - self.region.x_lo) / (self.region.x_hi - self.region.x_lo);
        let fy = (y - self.region.y_lo) / (self.region.y_hi - self.region.y_lo);
        let ix = ((fx * self.n_x as f64) as usize).min(self.n_x - 1);
        let iy = ((fy * self.n_y as f64) as usize).min(self.n_y - 1);
        Some(ix * self.n_y + iy)
    }
}

/// Expected or observed event counts per cell over one horizon window.
#[derive(Debug, Clone, PartialEq)]
pub struct CountGrid {
    pub spec: GridSpec,
    pub t_start: f64,
    pub t_end: f64,
    /// Row-major: `values[ix * n_y + iy]`.
    pub values: Vec<f64>,
}

impl CountGrid {
    pub fn zeros(spec: GridSpec, t_start: f64, t_end: f64) -> Self {
        CountGrid {
            spec,
            t_start,
            t_end,
            values: vec![0.0; spec.n_cells()],
        }
    }

    pub fn total(&self) -> f64 {
        pairwise_sum(&self.values)
    }

    pub fn same_geometry(&self, other: &CountGrid) -> bool {
        self.spec == other.spec
    }

    /// Serialize as `x_index,y_index,count` rows in row-major order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_index,y_index,count\n");
        for ix in 0..self.spec.n_x {
            for iy in 0..self.spec.n_y {
                let v = self.values[ix * self.spec.n_y + iy];
                out.push_str(&format!("{ix},{iy},{v}\n"));
            }
        }
        out
    }
}

/// Expected counts per cell over `[t_start, t_start + horizon_len]`.
///
/// History is frozen at `t_start`: no simulated future excitation enters the
/// forecast. The spatial quadrature is snapped up to the nearest multiple of
/// the grid resolution so every cell carries a uniform sub-grid; with
/// divisible resolutions the evaluation points coincide with the plain
/// compensator's and the cell sum partitions it exactly.
pub fn expected_count_grid(
    model: &Model,
    region: &SpatialRegion,
    t_start: f64,
    horizon_len: f64,
    hist: &[Event],
    grid_spec: &GridSpec,
    quad: &QuadratureSpec,
) -> Result<CountGrid> {
    if !(horizon_len > 0.0) {
        return Err(Error::Precondition(format!(
            "horizon length must be positive, got {horizon_len}"
        )));
    }
    if grid_spec.region != *region {
        return Err(Error::Precondition(
            "count grid must cover the data region exactly".into(),
        ));
    }
    let gx = grid_spec.n_x;
    let gy = grid_spec.n_y;
    let sub_x = quad.n_x.div_ceil(gx);
    let sub_y = quad.n_y.div_ceil(gy);
    let ex = gx * sub_x;
    let ey = gy * sub_y;

    let table = crate::quadrature::SpatialTable::new(model, region, ex, ey);
    let n_t = quad.time_cells(horizon_len);
    let dt = horizon_len / n_t as f64;
    let k = model.n_subregions();

    // Per time cell, the spatial integral restricted to each count cell.
    let per_t: Result<Vec<Vec<f64>>> = (0..n_t)
        .into_par_iter()
        .map(|m| {
            let t_mid = t_start + (m as f64 + 0.5) * dt;
            let mut raw = vec![0.0; k];
            model.raw_subregion_intensities_into(t_mid, hist, &mut raw)?;
            let mut cells = vec![0.0; gx * gy];
            for qx in 0..ex {
                let ix = qx / sub_x;
                for qy in 0..ey {
                    let iy = qy / sub_y;
                    let c = qx * ey + qy;
                    let rho = table.scores(c);
                    let z: f64 = rho.iter().zip(&raw).map(|(r, l)| r * l).sum();
                    cells[ix * gy + iy] += softplus(z) * table.cell_area;
                }
            }
            Ok(cells)
        })
        .collect();
    let per_t = per_t?;

    let mut grid = CountGrid::zeros(*grid_spec, t_start, t_start + horizon_len);
    for cell in 0..gx * gy {
        let col: Vec<f64> = per_t.iter().map(|row| row[cell]).collect();
        grid.values[cell] = pairwise_sum(&col) * dt;
    }
    Ok(grid)
}

/// Observed counts per cell for events with `t` in `[t_start, t_end)`.
pub fn count_events_grid(
    events: &[Event],
    t_start: f64,
    t_end: f64,
    grid_spec: &GridSpec,
) -> CountGrid {
    let mut grid = CountGrid::zeros(*grid_spec, t_start, t_end);
    for e in events {
        if e.t >= t_start && e.t < t_end {
            if let Some(cell) = grid_spec.cell_of(e.x, e.y) {
                grid.values[cell] += 1.0;
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::{HawkesParams, IntensityKind};
    use crate::quadrature::compensator;
    use crate::tree::DecisionTree;

    fn region() -> SpatialRegion {
        SpatialRegion::new(0.0, 4.0, 0.0, 2.0).unwrap()
    }

    fn poisson_model(rate: f64) -> Model {
        let tree = DecisionTree::new(0, vec![]).unwrap();
        Model::new(tree, IntensityKind::Poisson { rate }, 1.0).unwrap()
    }

    fn k1_hawkes(mu: f64, gamma: f64, coupling: f64) -> Model {
        let tree = DecisionTree::new(0, vec![]).unwrap();
        let p = HawkesParams::new(vec![mu], vec![gamma], vec![coupling]).unwrap();
        Model::new(tree, IntensityKind::Hawkes(p), 100.0).unwrap()
    }

    #[test]
    fn poisson_cells_have_constant_closed_form() {
        let model = poisson_model(1.2);
        let r = region();
        let spec = GridSpec::new(r, 4, 2).unwrap();
        let quad = QuadratureSpec { n_t: 16.0, n_x: 8, n_y: 6, t_max: 10.0 };
        let grid = expected_count_grid(&model, &r, 0.0, 2.0, &[], &spec, &quad).unwrap();
        let expected = softplus(1.2) * 2.0 * spec.cell_area();
        for (i, v) in grid.values.iter().enumerate() {
            assert!((v - expected).abs() / expected < 1e-12, "cell {i}: {v}");
        }
    }

    #[test]
    fn cell_sum_partitions_the_compensator() {
        let model = k1_hawkes(0.4, 1.0, 1.3);
        let r = region();
        let spec = GridSpec::new(r, 8, 4).unwrap();
        // Resolutions divide evenly, so the evaluation points coincide.
        let quad = QuadratureSpec { n_t: 16.0, n_x: 32, n_y: 16, t_max: 10.0 };
        let hist = [Event::new(-0.3, 1.0, 1.0), Event::new(-0.1, 3.0, 0.5)];
        let grid = expected_count_grid(&model, &r, 0.0, 1.5, &hist, &spec, &quad).unwrap();
        let whole = compensator(&model, &r, 0.0, 1.5, &hist, &quad).unwrap();
        assert!((grid.total() - whole).abs() < 1e-9, "{} vs {whole}", grid.total());
    }

    #[test]
    fn doubling_the_horizon_doubles_poisson_cells() {
        let model = poisson_model(0.7);
        let r = region();
        let spec = GridSpec::new(r, 4, 4).unwrap();
        let quad = QuadratureSpec { n_t: 16.0, n_x: 8, n_y: 8, t_max: 10.0 };
        let g1 = expected_count_grid(&model, &r, 0.0, 1.0, &[], &spec, &quad).unwrap();
        let g2 = expected_count_grid(&model, &r, 0.0, 2.0, &[], &spec, &quad).unwrap();
        for (a, b) in g1.values.iter().zip(&g2.values) {
            assert!((2.0 * a - b).abs() / b < 1e-12);
        }
    }

    #[test]
    fn mismatched_region_is_rejected() {
        let model = poisson_model(1.0);
        let r = region();
        let other = SpatialRegion::new(0.0, 3.0, 0.0, 2.0).unwrap();
        let spec = GridSpec::new(other, 4, 4).unwrap();
        let quad = QuadratureSpec::default();
        assert!(expected_count_grid(&model, &r, 0.0, 1.0, &[], &spec, &quad).is_err());
    }

    #[test]
    fn nonpositive_horizon_is_rejected() {
        let model = poisson_model(1.0);
        let r = region();
        let spec = GridSpec::new(r, 4, 4).unwrap();
        let quad = QuadratureSpec::default();
        assert!(expected_count_grid(&model, &r, 0.0, 0.0, &[], &spec, &quad).is_err());
    }

    #[test]
    fn event_counting_respects_cells_and_window() {
        let r = region();
        let spec = GridSpec::new(r, 4, 2).unwrap();
        let events = [
            Event::new(0.5, 0.5, 0.5),  // cell (0, 0)
            Event::new(0.6, 0.5, 1.5),  // cell (0, 1)
            Event::new(0.7, 3.5, 1.5),  // cell (3, 1)
            Event::new(2.5, 0.5, 0.5),  // outside the window
            Event::new(0.8, 4.0, 2.0),  // on the far corner: clamps to (3, 1)
        ];
        let grid = count_events_grid(&events, 0.0, 2.0, &spec);
        assert_eq!(grid.values[0], 1.0);
        assert_eq!(grid.values[1], 1.0);
        assert_eq!(grid.values[3 * 2 + 1], 2.0);
        assert_eq!(grid.total(), 4.0);
    }

    #[test]
    fn csv_rows_are_row_major() {
        let r = region();
        let spec = GridSpec::new(r, 2, 2).unwrap();
        let mut grid = CountGrid::zeros(spec, 0.0, 1.0);
        grid.values = vec![1.0, 2.0, 3.0, 4.0];
        let csv = grid.to_csv();
        assert_eq!(csv, "x_index,y_index,count\n0,0,1\n0,1,2\n1,0,3\n1,1,4\n");
    }
}
