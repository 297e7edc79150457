//! Declarative run configuration.
//!
//! A run is described by one TOML document holding the dataset binding,
//! model shape, objective, quadrature, grid, simulation, and sweep settings.
//! Parsing is strict: unknown keys are rejected, and every section is range-
//! checked before any computation starts, so an archived config file fully
//! determines a run.

use serde::{Deserialize, Serialize};

use crate::domain::SpatialRegion;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::intensity::{HawkesParams, IntensityKind, Model};
use crate::learn::Objective;
use crate::quadrature::QuadratureSpec;
use crate::simulate::SimConfig;
use crate::tree::{DecisionTree, TreeNode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: Option<String>,
    pub dataset: Option<DatasetConfig>,
    pub model: ModelConfig,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub quadrature: QuadConfig,
    pub grid: Option<GridConfig>,
    pub simulate: Option<SimulateConfig>,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Canonical mode: a `t,x,y` CSV in normalized units.
    pub events_csv: Option<String>,
    pub x_range: Option<[f64; 2]>,
    pub y_range: Option<[f64; 2]>,
    pub t_end: Option<f64>,

    /// Raw-catalog mode: timestamps and lat/lon degrees.
    pub raw_csv: Option<String>,
    pub time_column: Option<String>,
    pub lat_column: Option<String>,
    pub lon_column: Option<String>,
    #[serde(default)]
    pub time_formats: Vec<String>,
    pub lon_range: Option<[f64; 2]>,
    pub lat_range: Option<[f64; 2]>,
    #[serde(default = "default_target")]
    pub target_x: [f64; 2],
    #[serde(default = "default_target")]
    pub target_y: [f64; 2],
    #[serde(default = "default_seconds_per_unit")]
    pub seconds_per_unit: f64,
    /// Inclusive calendar-year filter applied before normalization.
    pub year_range: Option<[i32; 2]>,

    #[serde(default = "default_f_train")]
    pub f_train: f64,
    #[serde(default = "default_f_val")]
    pub f_val: f64,
    /// Split the span into this many equal sequences and pick one.
    #[serde(default = "default_one")]
    pub n_sequences: usize,
    #[serde(default)]
    pub sequence_index: usize,
}

fn default_target() -> [f64; 2] {
    [-10.0, 10.0]
}

fn default_seconds_per_unit() -> f64 {
    crate::ingest::SECONDS_PER_UNIT
}

fn default_f_train() -> f64 {
    0.7
}

fn default_f_val() -> f64 {
    0.15
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: usize,
    #[serde(default = "default_kind")]
    pub kind: String,
    pub nu: f64,
    pub poisson_rate: Option<f64>,
    pub sc_mu: Option<f64>,
    pub sc_alpha: Option<f64>,
    /// Explicit parameters; omitted fields fall back to random init.
    pub params: Option<ExplicitParams>,
}

fn default_kind() -> String {
    "hawkes".into()
}

/// Fully specified model parameters, e.g. a simulation ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitParams {
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    /// K rows of K entries; `interaction[source][target]`.
    pub interaction: Vec<Vec<f64>>,
    /// Breadth-first `[w_x, w_y, b]` per node; empty for depth 0.
    #[serde(default)]
    pub nodes: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub negatives: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iters: usize,
    pub ll_tol: Option<f64>,
    pub patience: usize,
    pub horizons: Vec<f64>,
    pub eval_grid: (usize, usize, usize),
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        let o = Objective::default();
        ObjectiveConfig {
            alpha: o.alpha,
            negatives: o.n_negatives,
            learning_rate: o.learning_rate,
            batch_size: o.batch_size,
            max_iters: o.max_iters,
            ll_tol: o.ll_tol,
            patience: o.patience,
            horizons: o.horizons,
            eval_grid: o.eval_grid,
        }
    }
}

impl ObjectiveConfig {
    pub fn to_objective(&self) -> Objective {
        Objective {
            alpha: self.alpha,
            n_negatives: self.negatives,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_iters: self.max_iters,
            ll_tol: self.ll_tol,
            patience: self.patience,
            horizons: self.horizons.clone(),
            eval_grid: self.eval_grid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadConfig {
    pub n_t: f64,
    pub n_x: usize,
    pub n_y: usize,
    /// Omitted: ten mean inter-event times of the bound dataset.
    pub t_max: Option<f64>,
}

impl Default for QuadConfig {
    fn default() -> Self {
        let q = QuadratureSpec::default();
        QuadConfig { n_t: q.n_t, n_x: q.n_x, n_y: q.n_y, t_max: None }
    }
}

impl QuadConfig {
    pub fn to_spec(&self, seq: Option<&crate::domain::EventSequence>) -> QuadratureSpec {
        let mut spec = QuadratureSpec {
            n_t: self.n_t,
            n_x: self.n_x,
            n_y: self.n_y,
            t_max: self.t_max.unwrap_or(10.0),
        };
        if self.t_max.is_none() {
            if let Some(seq) = seq {
                spec.t_max = QuadratureSpec::default_for(seq).t_max;
            }
        }
        spec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_x: usize,
    pub n_y: usize,
    /// Forecast window length in scaled time units.
    pub horizon: f64,
}

impl GridConfig {
    pub fn to_spec(&self, region: SpatialRegion) -> Result<GridSpec> {
        GridSpec::new(region, self.n_x, self.n_y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub t_end: f64,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_max_events")]
    pub max_events: usize,
}

fn default_resolution() -> usize {
    128
}

fn default_max_events() -> usize {
    1_000_000
}

impl SimulateConfig {
    pub fn to_sim(&self, seed: u64) -> Result<SimConfig> {
        let region = SpatialRegion::new(
            self.x_range[0],
            self.x_range[1],
            self.y_range[0],
            self.y_range[1],
        )?;
        Ok(SimConfig::new(region, self.t_end, seed)?
            .with_resolution(self.resolution)
            .with_max_events(self.max_events))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// One of `horizon`, `window`, `depth`, `mode`.
    pub variable: String,
    #[serde(default)]
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Run the next-event walk (costly on long test sets).
    pub next_event: bool,
    /// Cap on predicted events in the next-event walk.
    pub max_next_events: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { next_event: false, max_next_events: 200 }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.depth > 8 {
            return Err(Error::Config(format!("tree depth {} is unreasonably large", m.depth)));
        }
        if !(m.nu > 0.0) {
            return Err(Error::Config(format!("model.nu must be positive, got {}", m.nu)));
        }
        match m.kind.as_str() {
            "hawkes" => {}
            "poisson" => {
                if !m.poisson_rate.map(|r| r > 0.0).unwrap_or(false) {
                    return Err(Error::Config("poisson kind needs a positive poisson_rate".into()));
                }
            }
            "self-correcting" => {
                let ok = m.sc_mu.map(|v| v > 0.0).unwrap_or(false)
                    && m.sc_alpha.map(|v| v > 0.0).unwrap_or(false);
                if !ok {
                    return Err(Error::Config(
                        "self-correcting kind needs positive sc_mu and sc_alpha".into(),
                    ));
                }
            }
            other => return Err(Error::Config(format!("unknown model kind '{other}'"))),
        }
        if let Some(p) = &m.params {
            let k = 1usize << m.depth;
            if p.mu.len() != k
                || p.gamma.len() != k
                || p.interaction.len() != k
                || p.interaction.iter().any(|row| row.len() != k)
                || p.nodes.len() != k - 1
            {
                return Err(Error::Config(format!(
                    "explicit params do not match depth {} (K = {k})",
                    m.depth
                )));
            }
        }
        self.objective.to_objective().validate()?;
        let quad = QuadratureSpec {
            n_t: self.quadrature.n_t,
            n_x: self.quadrature.n_x,
            n_y: self.quadrature.n_y,
            t_max: self.quadrature.t_max.unwrap_or(10.0),
        };
        quad.validate()?;
        if let Some(g) = &self.grid {
            if g.n_x == 0 || g.n_y == 0 || !(g.horizon > 0.0) {
                return Err(Error::Config("grid needs positive resolution and horizon".into()));
            }
        }
        if let Some(d) = &self.dataset {
            d.validate()?;
        }
        if let Some(s) = &self.sweep {
            match s.variable.as_str() {
                "horizon" | "window" | "depth" => {
                    if s.values.is_empty() {
                        return Err(Error::Config("sweep.values must be nonempty".into()));
                    }
                }
                "mode" => {}
                other => return Err(Error::Config(format!("unknown sweep variable '{other}'"))),
            }
            if s.seeds.is_empty() {
                return Err(Error::Config("sweep.seeds must be nonempty".into()));
            }
        }
        if let Some(sim) = &self.simulate {
            if !(sim.t_end > 0.0) {
                return Err(Error::Config("simulate.t_end must be positive".into()));
            }
            if sim.x_range[0] >= sim.x_range[1] || sim.y_range[0] >= sim.y_range[1] {
                return Err(Error::Config("simulate region is degenerate".into()));
            }
        }
        Ok(())
    }

    /// Build the configured model. Random initialization draws from `rng` and
    /// anchors at `train` when one is bound.
    pub fn build_model(
        &self,
        train: Option<&crate::domain::EventSequence>,
        rng: &mut crate::Rng,
    ) -> Result<Model> {
        let m = &self.model;
        match m.kind.as_str() {
            "poisson" => {
                let tree = DecisionTree::new(0, vec![])?;
                return Model::new(
                    tree,
                    IntensityKind::Poisson { rate: m.poisson_rate.unwrap() },
                    m.nu,
                );
            }
            "self-correcting" => {
                let tree = DecisionTree::new(0, vec![])?;
                return Model::new(
                    tree,
                    IntensityKind::SelfCorrecting {
                        mu: m.sc_mu.unwrap(),
                        alpha: m.sc_alpha.unwrap(),
                    },
                    m.nu,
                );
            }
            _ => {}
        }
        if let Some(p) = &m.params {
            let nodes = p
                .nodes
                .iter()
                .map(|n| TreeNode::new([n[0], n[1]], n[2]))
                .collect();
            let tree = DecisionTree::new(m.depth, nodes)?;
            let interaction = p.interaction.iter().flatten().copied().collect();
            let params = HawkesParams::new(p.mu.clone(), p.gamma.clone(), interaction)?;
            Model::new(tree, IntensityKind::Hawkes(params), m.nu)
        } else {
            let train = train.ok_or_else(|| {
                Error::Config("random model init needs a bound dataset".into())
            })?;
            crate::learn::init_model(m.depth, m.nu, train, rng)
        }
    }
}

impl DatasetConfig {
    fn validate(&self) -> Result<()> {
        let canonical = self.events_csv.is_some();
        let raw = self.raw_csv.is_some();
        if canonical == raw {
            return Err(Error::Config(
                "dataset needs exactly one of events_csv (canonical) or raw_csv (catalog)".into(),
            ));
        }
        if canonical && (self.x_range.is_none() || self.y_range.is_none()) {
            return Err(Error::Config("canonical dataset needs x_range and y_range".into()));
        }
        if raw {
            let have_cols = self.time_column.is_some()
                && self.lat_column.is_some()
                && self.lon_column.is_some();
            if !have_cols || self.lon_range.is_none() || self.lat_range.is_none() {
                return Err(Error::Config(
                    "raw dataset needs time/lat/lon columns and lon_range/lat_range".into(),
                ));
            }
        }
        if !(self.f_train > 0.0 && self.f_val > 0.0 && self.f_train + self.f_val < 1.0) {
            return Err(Error::Config(format!(
                "split fractions out of range: {} / {}",
                self.f_train, self.f_val
            )));
        }
        if self.n_sequences == 0 || self.sequence_index >= self.n_sequences {
            return Err(Error::Config(format!(
                "sequence_index {} out of range for n_sequences {}",
                self.sequence_index, self.n_sequences
            )));
        }
        Ok(())
    }

    pub fn region(&self) -> Result<SpatialRegion> {
        if self.events_csv.is_some() {
            let x = self.x_range.unwrap();
            let y = self.y_range.unwrap();
            SpatialRegion::new(x[0], x[1], y[0], y[1])
        } else {
            SpatialRegion::new(
                self.target_x[0],
                self.target_x[1],
                self.target_y[0],
                self.target_y[1],
            )
        }
    }

    /// Read and normalize the bound dataset.
    pub fn load(&self) -> Result<LoadedDataset> {
        use crate::ingest;
        if let Some(path) = &self.events_csv {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.clone(), e))?;
            let window = self.t_end.map(|t| (0.0, t));
            let mut seq = ingest::events_from_csv(&text, self.region()?, window)?;
            if self.n_sequences > 1 {
                seq = ingest::split_sequences(&seq, self.n_sequences)?
                    .swap_remove(self.sequence_index);
            }
            return Ok(LoadedDataset { seq, normalization: None, row_errors: 0, excluded: 0 });
        }

        let path = self.raw_csv.as_ref().unwrap();
        let mut columns = ingest::ColumnMap::new(
            self.time_column.as_ref().unwrap(),
            self.lat_column.as_ref().unwrap(),
            self.lon_column.as_ref().unwrap(),
        );
        columns.time_formats = self.time_formats.clone();
        let report = ingest::parse_csv(path, &columns)?;
        let records: Vec<ingest::RawRecord> = match self.year_range {
            Some([lo, hi]) => report
                .records
                .into_iter()
                .filter(|r| {
                    use chrono::Datelike;
                    let y = r.timestamp.year();
                    y >= lo && y <= hi
                })
                .collect(),
            None => report.records,
        };
        if records.is_empty() {
            return Err(Error::Precondition("no records left after filtering".into()));
        }
        let lon = self.lon_range.unwrap();
        let lat = self.lat_range.unwrap();
        let in_box = |r: &ingest::RawRecord| {
            r.lon >= lon[0] && r.lon <= lon[1] && r.lat >= lat[0] && r.lat <= lat[1]
        };
        let origin = records
            .iter()
            .filter(|r| in_box(r))
            .map(|r| r.timestamp)
            .min()
            .ok_or_else(|| Error::Precondition("no records inside the lon/lat box".into()))?;
        let mut norm =
            ingest::NormalizationSpec::new(origin, (lon[0], lon[1]), (lat[0], lat[1]), self.region()?)?
                .with_seconds_per_unit(self.seconds_per_unit);
        let out = ingest::normalize(&records, &norm)?;
        let mut seq = out.seq;
        if self.n_sequences > 1 {
            let span = seq.span() / self.n_sequences as f64;
            seq = ingest::split_sequences(&seq, self.n_sequences)?
                .swap_remove(self.sequence_index);
            // Keep denormalization exact for the selected part.
            let offset_secs = self.sequence_index as f64 * span * self.seconds_per_unit;
            norm.origin += chrono::Duration::seconds(offset_secs.trunc() as i64)
                + chrono::Duration::nanoseconds((offset_secs.fract() * 1e9).round() as i64);
        }
        Ok(LoadedDataset {
            seq,
            normalization: Some(norm),
            row_errors: report.errors.len(),
            excluded: out.excluded,
        })
    }
}

/// A bound dataset: the normalized sequence plus ingestion diagnostics.
pub struct LoadedDataset {
    pub seq: crate::domain::EventSequence,
    pub normalization: Option<crate::ingest::NormalizationSpec>,
    pub row_errors: usize,
    pub excluded: usize,
}

/// FNV-1a 64-bit hex digest; stable across platforms and builds, used to key
/// cached checkpoints to their configuration.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}
