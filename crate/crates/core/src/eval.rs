//! Forecast metrics, baselines, and the experiment sweep harness.
//!
//! Count forecasting tiles a test window into horizon-length frames; each
//! frame's expected-count grid conditions on the true events before the frame
//! start (teacher forcing), and skill is the RMSE over all frames and cells
//! against the observed counts. The reference predictor is the per-cell mean
//! count of the training frames. Next-event skill walks the test sequence and
//! scores the conditional-mean predictions with squared time and location
//! errors.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::domain::{Event, EventSequence};
use crate::error::{Error, Result};
use crate::grid::{count_events_grid, expected_count_grid, CountGrid, GridSpec};
use crate::intensity::Model;
use crate::learn;
use crate::math::pairwise_sum;
use crate::quadrature::{predict_next, QuadratureSpec};

/// Root mean squared error over all cells and frames.
pub fn rmse_counts(predicted: &[CountGrid], actual: &[CountGrid]) -> Result<f64> {
    if predicted.len() != actual.len() || predicted.is_empty() {
        return Err(Error::Precondition(format!(
            "frame counts differ or are empty: {} vs {}",
            predicted.len(),
            actual.len()
        )));
    }
    let mut sq = Vec::new();
    for (p, a) in predicted.iter().zip(actual) {
        if !p.same_geometry(a) {
            return Err(Error::Precondition("count grid geometry mismatch".into()));
        }
        for (pv, av) in p.values.iter().zip(&a.values) {
            sq.push((pv - av) * (pv - av));
        }
    }
    Ok((pairwise_sum(&sq) / sq.len() as f64).sqrt())
}

/// Per-cell mean count over the training frames: the climatology predictor.
pub fn mean_baseline(train_grids: &[CountGrid]) -> Result<CountGrid> {
    let first = train_grids
        .first()
        .ok_or_else(|| Error::Precondition("mean baseline needs at least one frame".into()))?;
    let mut out = CountGrid::zeros(first.spec, first.t_start, first.t_end);
    for g in train_grids {
        if !g.same_geometry(first) {
            return Err(Error::Precondition("count grid geometry mismatch".into()));
        }
        for (o, v) in out.values.iter_mut().zip(&g.values) {
            *o += v;
        }
    }
    let n = train_grids.len() as f64;
    for o in out.values.iter_mut() {
        *o /= n;
    }
    Ok(out)
}

/// Squared time error and squared Euclidean location error of one prediction.
pub fn squared_losses(pred: (f64, f64, f64), actual: &Event) -> (f64, f64) {
    let (t, x, y) = pred;
    let dt = t - actual.t;
    let dx = x - actual.x;
    let dy = y - actual.y;
    (dt * dt, dx * dx + dy * dy)
}

/// Averaged next-event losses over a test walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NextEventLosses {
    pub mse_t: f64,
    pub mse_l: f64,
    pub n: usize,
    /// Predictions whose truncated window captured less than 0.99 mass.
    pub low_mass: usize,
}

fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len().max(1) as f64
}

/// Walk the events from `first_target` on, predicting each from the full
/// true history before it (teacher forcing), and average the squared errors.
pub fn next_event_losses(
    model: &Model,
    seq: &EventSequence,
    first_target: usize,
    max_targets: usize,
    quad: &QuadratureSpec,
) -> Result<NextEventLosses> {
    let events = seq.events();
    if first_target == 0 || first_target >= events.len() {
        return Err(Error::Precondition(format!(
            "first_target {first_target} needs at least one prior event and one target"
        )));
    }
    let targets: Vec<usize> =
        (first_target..events.len()).take(max_targets.max(1)).collect();
    let results: Result<Vec<(f64, f64, bool)>> = targets
        .par_iter()
        .map(|&i| {
            let t_prev = events[i - 1].t;
            // Condition on everything up to and including the last event;
            // the window is closed on the right because the event at t_prev
            // itself drives the prediction.
            let lo = events.partition_point(|e| e.t < t_prev - model.nu);
            let hi = events.partition_point(|e| e.t <= t_prev);
            let hist = &events[lo..hi.min(i)];
            let pred = predict_next(model, &seq.region, t_prev, hist, quad)?;
            let (lt, ll) = squared_losses((pred.t, pred.x, pred.y), &events[i]);
            Ok((lt, ll, pred.low_mass))
        })
        .collect();
    let results = results?;
    let lt: Vec<f64> = results.iter().map(|r| r.0).collect();
    let ll: Vec<f64> = results.iter().map(|r| r.1).collect();
    Ok(NextEventLosses {
        mse_t: mean(&lt),
        mse_l: mean(&ll),
        n: results.len(),
        low_mass: results.iter().filter(|r| r.2).count(),
    })
}

/// Persistence predictor: next gap repeats the last gap, next location
/// repeats the last location.
pub fn persistence_losses(
    seq: &EventSequence,
    first_target: usize,
    max_targets: usize,
) -> Result<NextEventLosses> {
    let events = seq.events();
    if first_target < 2 || first_target >= events.len() {
        return Err(Error::Precondition(
            "persistence needs two prior events and one target".into(),
        ));
    }
    let mut lt = Vec::new();
    let mut ll = Vec::new();
    for i in (first_target..events.len()).take(max_targets.max(1)) {
        let gap = events[i - 1].t - events[i - 2].t;
        let pred = (events[i - 1].t + gap, events[i - 1].x, events[i - 1].y);
        let (a, b) = squared_losses(pred, &events[i]);
        lt.push(a);
        ll.push(b);
    }
    Ok(NextEventLosses { mse_t: mean(&lt), mse_l: mean(&ll), n: lt.len(), low_mass: 0 })
}

/// Global-mean predictor: next gap is the training-set mean gap, next
/// location the training-set mean location.
pub fn global_mean_losses(
    seq: &EventSequence,
    first_target: usize,
    max_targets: usize,
    train: &EventSequence,
) -> Result<NextEventLosses> {
    let events = seq.events();
    if first_target == 0 || first_target >= events.len() || train.len() < 2 {
        return Err(Error::Precondition(
            "global-mean baseline needs training data and a target".into(),
        ));
    }
    let tr = train.events();
    let mean_gap = (tr.last().unwrap().t - tr[0].t) / (tr.len() - 1) as f64;
    let xs: Vec<f64> = tr.iter().map(|e| e.x).collect();
    let ys: Vec<f64> = tr.iter().map(|e| e.y).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let mut lt = Vec::new();
    let mut ll = Vec::new();
    for i in (first_target..events.len()).take(max_targets.max(1)) {
        let pred = (events[i - 1].t + mean_gap, mx, my);
        let (a, b) = squared_losses(pred, &events[i]);
        lt.push(a);
        ll.push(b);
    }
    Ok(NextEventLosses { mse_t: mean(&lt), mse_l: mean(&ll), n: lt.len(), low_mass: 0 })
}

/// Count-forecast skill of a model over a window, with the matched baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CountSkill {
    pub rmse: f64,
    pub baseline_rmse: f64,
    pub n_frames: usize,
}

/// Tile `[w0, w1)` into horizon frames and collect the observed count grids.
pub fn actual_frames(
    seq: &EventSequence,
    w0: f64,
    w1: f64,
    horizon: f64,
    grid: &GridSpec,
) -> Vec<CountGrid> {
    let mut frames = Vec::new();
    let mut start = w0;
    while start + horizon <= w1 + 1e-12 {
        frames.push(count_events_grid(seq.events(), start, start + horizon, grid));
        start += horizon;
    }
    frames
}

/// RMSE of teacher-forced count forecasts over `[w0, w1)` against the
/// climatology baseline built from the training window frames.
pub fn count_forecast_skill(
    model: &Model,
    seq: &EventSequence,
    train_window: (f64, f64),
    eval_window: (f64, f64),
    horizon: f64,
    grid: &GridSpec,
    quad: &QuadratureSpec,
) -> Result<CountSkill> {
    let actual = actual_frames(seq, eval_window.0, eval_window.1, horizon, grid);
    if actual.is_empty() {
        return Err(Error::Precondition(format!(
            "no full horizon-{horizon} frames inside the evaluation window"
        )));
    }
    let predicted: Result<Vec<CountGrid>> = actual
        .par_iter()
        .map(|frame| {
            let hist = seq.history(frame.t_start, model.nu);
            expected_count_grid(model, &seq.region, frame.t_start, horizon, hist, grid, quad)
        })
        .collect();
    let predicted = predicted?;
    let rmse = rmse_counts(&predicted, &actual)?;

    let train_frames = actual_frames(seq, train_window.0, train_window.1, horizon, grid);
    let baseline = mean_baseline(&train_frames)?;
    let baseline_frames: Vec<CountGrid> = actual
        .iter()
        .map(|f| {
            let mut b = baseline.clone();
            b.t_start = f.t_start;
            b.t_end = f.t_end;
            b
        })
        .collect();
    let baseline_rmse = rmse_counts(&baseline_frames, &actual)?;
    Ok(CountSkill { rmse, baseline_rmse, n_frames: actual.len() })
}

/// One sweep table row.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub variable: String,
    pub value: f64,
    pub mode: String,
    pub seed: u64,
    pub rmse: Option<f64>,
    pub baseline_rmse: Option<f64>,
    pub nll: Option<f64>,
    pub mse_t: Option<f64>,
    pub mse_l: Option<f64>,
    /// Wall-clock seconds; excluded from serialized reports so identical
    /// inputs produce byte-identical report files.
    #[serde(skip)]
    pub runtime_s: f64,
    pub failed: bool,
    pub error: Option<String>,
}

/// A sweep's collected rows.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub rows: Vec<SweepRow>,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variable,value,mode,seed,rmse,baseline_rmse,nll,mse_t,mse_l,failed\n",
        );
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.variable,
                r.value,
                r.mode,
                r.seed,
                opt(&r.rmse),
                opt(&r.baseline_rmse),
                opt(&r.nll),
                opt(&r.mse_t),
                opt(&r.mse_l),
                r.failed
            ));
        }
        out
    }

    /// Plot-ready long format: `sweep_var,value,seed,metric,score`.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("sweep_var,value,seed,metric,score\n");
        for r in &self.rows {
            let var = if r.mode.is_empty() {
                r.variable.clone()
            } else {
                format!("{}:{}", r.variable, r.mode)
            };
            for (metric, v) in [
                ("rmse", r.rmse),
                ("baseline_rmse", r.baseline_rmse),
                ("nll", r.nll),
                ("mse_t", r.mse_t),
                ("mse_l", r.mse_l),
            ] {
                if let Some(v) = v {
                    out.push_str(&format!("{var},{},{},{metric},{v}\n", r.value, r.seed));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Everything a single sweep row needs to run.
struct RowSpec {
    variable: String,
    value: f64,
    mode: String,
    seed: u64,
    nu: f64,
    depth: usize,
    horizon_eval: f64,
    train_horizons: Vec<f64>,
}

/// Run the configured sweep: one row per (value, seed), trained models cached
/// in `cache_dir` by configuration digest. A failed row is reported in place
/// without killing the sweep.
pub fn run_sweep(config: &RunConfig, cache_dir: Option<&std::path::Path>) -> Result<MetricReport> {
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [sweep] section".into()))?;
    let grid_cfg = config
        .grid
        .as_ref()
        .ok_or_else(|| Error::Config("sweeps need a [grid] section".into()))?;

    let mut specs = Vec::new();
    for &seed in &sweep.seeds {
        match sweep.variable.as_str() {
            "horizon" => {
                for &v in &sweep.values {
                    specs.push(RowSpec {
                        variable: "horizon".into(),
                        value: v,
                        mode: String::new(),
                        seed,
                        nu: config.model.nu,
                        depth: config.model.depth,
                        horizon_eval: v,
                        train_horizons: config.objective.horizons.clone(),
                    });
                }
            }
            "window" => {
                for &v in &sweep.values {
                    specs.push(RowSpec {
                        variable: "window".into(),
                        value: v,
                        mode: String::new(),
                        seed,
                        nu: v,
                        depth: config.model.depth,
                        horizon_eval: grid_cfg.horizon,
                        train_horizons: config.objective.horizons.clone(),
                    });
                }
            }
            "depth" => {
                for &v in &sweep.values {
                    specs.push(RowSpec {
                        variable: "depth".into(),
                        value: v,
                        mode: String::new(),
                        seed,
                        nu: config.model.nu,
                        depth: v as usize,
                        horizon_eval: grid_cfg.horizon,
                        train_horizons: config.objective.horizons.clone(),
                    });
                }
            }
            "mode" => {
                let horizons = if config.objective.horizons.is_empty() {
                    vec![grid_cfg.horizon]
                } else {
                    config.objective.horizons.clone()
                };
                let longest = horizons.iter().cloned().fold(f64::MIN, f64::max);
                specs.push(RowSpec {
                    variable: "mode".into(),
                    value: longest,
                    mode: "parallel".into(),
                    seed,
                    nu: config.model.nu,
                    depth: config.model.depth,
                    horizon_eval: longest,
                    train_horizons: horizons.clone(),
                });
                specs.push(RowSpec {
                    variable: "mode".into(),
                    value: longest,
                    mode: "separate".into(),
                    seed,
                    nu: config.model.nu,
                    depth: config.model.depth,
                    horizon_eval: longest,
                    train_horizons: vec![longest],
                });
            }
            other => return Err(Error::Config(format!("unknown sweep variable '{other}'"))),
        }
    }

    let rows: Vec<SweepRow> = specs
        .par_iter()
        .map(|spec| match run_row(config, spec, cache_dir) {
            Ok(row) => row,
            Err(e) => SweepRow {
                variable: spec.variable.clone(),
                value: spec.value,
                mode: spec.mode.clone(),
                seed: spec.seed,
                rmse: None,
                baseline_rmse: None,
                nll: None,
                mse_t: None,
                mse_l: None,
                runtime_s: 0.0,
                failed: true,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(MetricReport { rows })
}

/// Bind the row's dataset: the configured catalog, or a fresh simulation from
/// the explicit ground-truth parameters when no dataset is bound.
fn row_dataset(config: &RunConfig, seed: u64) -> Result<EventSequence> {
    if let Some(ds) = &config.dataset {
        return Ok(ds.load()?.seq);
    }
    let sim_cfg = config
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("sweep needs a dataset or a [simulate] section".into()))?;
    let truth = config.build_model(None, &mut crate::rng_for_seed(seed))?;
    let sim = sim_cfg.to_sim(seed)?;
    crate::simulate::thin_simulate(&truth, &sim, &mut crate::rng_for_seed(seed))
}

fn run_row(
    config: &RunConfig,
    spec: &RowSpec,
    cache_dir: Option<&std::path::Path>,
) -> Result<SweepRow> {
    let started = std::time::Instant::now();
    let seq = row_dataset(config, spec.seed)?;
    let ds_f = config
        .dataset
        .as_ref()
        .map(|d| (d.f_train, d.f_val))
        .unwrap_or((0.7, 0.15));
    let (train, val, test) = crate::ingest::split(&seq, ds_f.0, ds_f.1)?;

    let mut obj = config.objective.to_objective();
    obj.horizons = spec.train_horizons.clone();
    let quad = config.quadrature.to_spec(Some(&train));

    // Reuse a cached checkpoint when the same row ran before.
    let cache_key = crate::config::fnv1a_hex(
        format!(
            "{}|{}|{}|{}|{}|{}|{:?}|{}|{}",
            spec.variable,
            spec.value,
            spec.mode,
            spec.seed,
            spec.depth,
            spec.nu,
            spec.train_horizons,
            obj.max_iters,
            seq.len()
        )
        .as_bytes(),
    );
    let cache_path = cache_dir.map(|d| d.join(format!("sweep-{cache_key}.ckpt")));

    let model = match &cache_path {
        Some(p) if p.exists() => crate::checkpoint::Checkpoint::load(p)?.model,
        _ => {
            let mut rng = crate::rng_for_seed(spec.seed);
            let init = crate::learn::init_model(spec.depth, spec.nu, &train, &mut rng)?;
            let out = learn::train(&init, &train, &val, &obj, &mut rng)?;
            if let Some(p) = &cache_path {
                let mut ck = crate::checkpoint::Checkpoint::new(out.model.clone());
                ck.meta.config_hash = cache_key.clone();
                ck.meta.best_val_ll = out.best_val_ll;
                ck.meta.best_epoch = out.best_epoch;
                ck.save(p)?;
            }
            out.model
        }
    };

    let grid_spec = config.grid.as_ref().unwrap().to_spec(seq.region)?;
    let skill = count_forecast_skill(
        &model,
        &seq,
        (train.t_start, train.t_end),
        (test.t_start, test.t_end),
        spec.horizon_eval,
        &grid_spec,
        &quad,
    )?;
    let nll = -learn::mean_log_likelihood_grid(&model, &seq, test.t_start, test.t_end, &obj)?;

    let (mse_t, mse_l) = if config.eval.next_event {
        let first_target = train.len() + val.len();
        let losses = next_event_losses(
            &model,
            &seq,
            first_target.max(1),
            config.eval.max_next_events,
            &quad,
        )?;
        (Some(losses.mse_t), Some(losses.mse_l))
    } else {
        (None, None)
    };

    Ok(SweepRow {
        variable: spec.variable.clone(),
        value: spec.value,
        mode: spec.mode.clone(),
        seed: spec.seed,
        rmse: Some(skill.rmse),
        baseline_rmse: Some(skill.baseline_rmse),
        nll: Some(nll),
        mse_t,
        mse_l,
        runtime_s: started.elapsed().as_secs_f64(),
        failed: false,
        error: None,
    })
}
