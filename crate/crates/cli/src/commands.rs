//! Implementations of the CLI subcommands.

use std::path::{Path, PathBuf};

use treehawkes::checkpoint::{Checkpoint, CheckpointMeta};
use treehawkes::config::{fnv1a_hex, RunConfig};
use treehawkes::domain::{Event, EventSequence};
use treehawkes::error::{Error, Result};
use treehawkes::eval;
use treehawkes::grid::expected_count_grid;
use treehawkes::ingest;
use treehawkes::intensity::Model;
use treehawkes::learn::{self, trace_to_csv, Objective};
use treehawkes::quadrature::predict_next;
use treehawkes::simulate::thin_simulate;

use crate::{Cli, Command};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate => cmd_simulate(cli),
        Command::Train => cmd_train(cli),
        Command::PredictCounts { checkpoint, history, horizon, t_start } => {
            cmd_predict_counts(cli, checkpoint, history.as_deref(), *horizon, *t_start)
        }
        Command::PredictNext { checkpoint, history } => {
            cmd_predict_next(cli, checkpoint, history.as_deref())
        }
        Command::Evaluate { checkpoint } => cmd_evaluate(cli, checkpoint.as_deref()),
        Command::Sweep => cmd_sweep(cli),
    }
}

/// The parsed config plus the digest of its raw bytes.
struct Loaded {
    config: RunConfig,
    config_hash: String,
    seed: u64,
    out_dir: PathBuf,
}

fn load(cli: &Cli) -> Result<Loaded> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let config = RunConfig::from_toml_str(&text)?;
    let seed = cli.seed.unwrap_or(config.seed);
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    Ok(Loaded { config, config_hash: fnv1a_hex(text.as_bytes()), seed, out_dir })
}

fn write(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

fn cmd_simulate(cli: &Cli) -> Result<()> {
    let run = load(cli)?;
    let sim_cfg = run
        .config
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("simulate needs a [simulate] section".into()))?;
    if run.config.model.kind == "hawkes" && run.config.model.params.is_none() {
        return Err(Error::Config(
            "simulate needs explicit [model.params] for a hawkes model".into(),
        ));
    }
    let model = run.config.build_model(None, &mut treehawkes::rng_for_seed(run.seed))?;
    let sim = sim_cfg.to_sim(run.seed)?;

    let started = std::time::Instant::now();
    let seq = thin_simulate(&model, &sim, &mut treehawkes::rng_for_seed(run.seed))?;
    eprintln!(
        "simulated {} events over [0, {}] in {:.2}s",
        seq.len(),
        sim.t_end,
        started.elapsed().as_secs_f64()
    );

    let path = run.out_dir.join("events.csv");
    write(&path, &ingest::events_to_csv(&seq))?;
    println!("{}: {} events on [0, {}]", path.display(), seq.len(), sim.t_end);
    Ok(())
}

/// Dataset binding shared by train/evaluate/predict: the full sequence, the
/// count splits, and the normalization (when the source was a raw catalog).
struct BoundData {
    seq: EventSequence,
    train: EventSequence,
    val: EventSequence,
    test: EventSequence,
    normalization: Option<ingest::NormalizationSpec>,
}

fn bind_dataset(config: &RunConfig) -> Result<BoundData> {
    let ds = config
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs a [dataset] section".into()))?;
    let loaded = ds.load()?;
    if loaded.row_errors > 0 || loaded.excluded > 0 {
        eprintln!(
            "ingest: {} malformed rows, {} outside the lon/lat box",
            loaded.row_errors, loaded.excluded
        );
    }
    let (train, val, test) = ingest::split(&loaded.seq, ds.f_train, ds.f_val)?;
    Ok(BoundData {
        seq: loaded.seq,
        train,
        val,
        test,
        normalization: loaded.normalization,
    })
}

fn train_once(run: &Loaded, data: &BoundData) -> Result<(Checkpoint, Vec<learn::TraceRow>)> {
    let obj: Objective = run.config.objective.to_objective();
    let mut rng = treehawkes::rng_for_seed(run.seed);
    let init = run.config.build_model(Some(&data.train), &mut rng)?;
    let started = std::time::Instant::now();
    let out = learn::train(&init, &data.train, &data.val, &obj, &mut rng)?;
    eprintln!(
        "trained {} epochs to val ll {:.6} in {:.2}s",
        out.trace.len(),
        out.best_val_ll,
        started.elapsed().as_secs_f64()
    );
    let mut ck = Checkpoint::new(out.model);
    ck.normalization = data.normalization.clone();
    ck.meta = CheckpointMeta {
        config_hash: run.config_hash.clone(),
        best_val_ll: out.best_val_ll,
        best_epoch: out.best_epoch,
    };
    Ok((ck, out.trace))
}

fn cmd_train(cli: &Cli) -> Result<()> {
    let run = load(cli)?;
    let data = bind_dataset(&run.config)?;
    let (ck, trace) = train_once(&run, &data)?;

    let ck_path = run.out_dir.join("checkpoint.txt");
    ck.save(&ck_path)?;
    let trace_path = run.out_dir.join("trace.csv");
    write(&trace_path, &trace_to_csv(&trace))?;
    println!(
        "{}: best epoch {} val ll {:.9}",
        ck_path.display(),
        ck.meta.best_epoch,
        ck.meta.best_val_ll
    );
    println!("{}: {} epochs", trace_path.display(), trace.len());
    Ok(())
}

/// History source for the predict commands: an explicit canonical CSV or the
/// configured dataset.
fn bind_history(run: &Loaded, history: Option<&Path>) -> Result<EventSequence> {
    let ds = run
        .config
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("prediction needs a [dataset] section for the region".into()))?;
    match history {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            ingest::events_from_csv(&text, ds.region()?, None)
        }
        None => Ok(ds.load()?.seq),
    }
}

/// Events at or before `t`, within the model's truncation window. The right
/// end is closed: the event at `t` itself conditions what follows.
fn closed_history(events: &[Event], t: f64, nu: f64) -> &[Event] {
    let lo = events.partition_point(|e| e.t < t - nu);
    let hi = events.partition_point(|e| e.t <= t);
    &events[lo..hi]
}

fn cmd_predict_counts(
    cli: &Cli,
    checkpoint: &Path,
    history: Option<&Path>,
    horizon: Option<f64>,
    t_start: Option<f64>,
) -> Result<()> {
    let run = load(cli)?;
    let ck = Checkpoint::load(checkpoint)?;
    let hist_seq = bind_history(&run, history)?;
    let grid_cfg = run
        .config
        .grid
        .as_ref()
        .ok_or_else(|| Error::Config("predict-counts needs a [grid] section".into()))?;
    let horizon = horizon.unwrap_or(grid_cfg.horizon);
    let t_start = t_start.unwrap_or(hist_seq.t_end);
    let grid_spec = grid_cfg.to_spec(hist_seq.region)?;
    let quad = run.config.quadrature.to_spec(Some(&hist_seq));

    let hist = closed_history(hist_seq.events(), t_start, ck.model.nu);
    let grid = expected_count_grid(
        &ck.model,
        &hist_seq.region,
        t_start,
        horizon,
        hist,
        &grid_spec,
        &quad,
    )?;
    let path = run.out_dir.join("counts.csv");
    write(&path, &grid.to_csv())?;
    println!(
        "{}: {} cells, horizon {horizon}, expected total {:.6}",
        path.display(),
        grid.values.len(),
        grid.total()
    );
    Ok(())
}

fn cmd_predict_next(cli: &Cli, checkpoint: &Path, history: Option<&Path>) -> Result<()> {
    let run = load(cli)?;
    let ck = Checkpoint::load(checkpoint)?;
    let hist_seq = bind_history(&run, history)?;
    if hist_seq.is_empty() {
        return Err(Error::Precondition("prediction needs at least one past event".into()));
    }
    let quad = run.config.quadrature.to_spec(Some(&hist_seq));
    let events = hist_seq.events();
    let t_prev = events.last().unwrap().t;
    let hist = closed_history(events, t_prev, ck.model.nu);
    let pred = predict_next(&ck.model, &hist_seq.region, t_prev, hist, &quad)?;
    if pred.low_mass {
        eprintln!(
            "warning: captured mass {:.4} < 0.99; increase quadrature.t_max",
            pred.captured_mass
        );
    }

    let raw = match &ck.normalization {
        Some(norm) => {
            let time = norm.denormalize_time(pred.t);
            let (lon, lat) = norm.denormalize_location(pred.x, pred.y);
            serde_json::json!({ "time": time.format("%Y-%m-%dT%H:%M:%S").to_string(), "lon": lon, "lat": lat })
        }
        None => serde_json::json!({ "time": pred.t, "lon": pred.x, "lat": pred.y }),
    };
    let line = serde_json::json!({
        "normalized": { "t": pred.t, "x": pred.x, "y": pred.y },
        "raw": raw,
        "captured_mass": pred.captured_mass,
        "low_mass": pred.low_mass,
    })
    .to_string();
    write(&run.out_dir.join("prediction.json"), &format!("{line}\n"))?;
    println!("{line}");
    Ok(())
}

fn cmd_evaluate(cli: &Cli, checkpoint: Option<&Path>) -> Result<()> {
    let run = load(cli)?;
    let data = bind_dataset(&run.config)?;
    let model: Model = match checkpoint {
        Some(path) => Checkpoint::load(path)?.model,
        None => {
            let (ck, trace) = train_once(&run, &data)?;
            ck.save(&run.out_dir.join("checkpoint.txt"))?;
            write(&run.out_dir.join("trace.csv"), &trace_to_csv(&trace))?;
            ck.model
        }
    };

    let obj = run.config.objective.to_objective();
    let quad = run.config.quadrature.to_spec(Some(&data.train));
    let mut metrics: Vec<(String, f64)> = Vec::new();

    let nll = -learn::mean_log_likelihood_grid(
        &model,
        &data.seq,
        data.test.t_start,
        data.test.t_end,
        &obj,
    )?;
    metrics.push(("nll".into(), nll));
    metrics.push(("n_test_events".into(), data.test.len() as f64));

    if let Some(grid_cfg) = &run.config.grid {
        let grid_spec = grid_cfg.to_spec(data.seq.region)?;
        let skill = eval::count_forecast_skill(
            &model,
            &data.seq,
            (data.train.t_start, data.train.t_end),
            (data.test.t_start, data.test.t_end),
            grid_cfg.horizon,
            &grid_spec,
            &quad,
        )?;
        metrics.push(("rmse".into(), skill.rmse));
        metrics.push(("baseline_rmse".into(), skill.baseline_rmse));
        metrics.push(("n_frames".into(), skill.n_frames as f64));
    }

    if run.config.eval.next_event {
        let first_target = (data.train.len() + data.val.len()).max(1);
        let losses = eval::next_event_losses(
            &model,
            &data.seq,
            first_target,
            run.config.eval.max_next_events,
            &quad,
        )?;
        metrics.push(("mse_t".into(), losses.mse_t));
        metrics.push(("mse_l".into(), losses.mse_l));
        metrics.push(("n_predicted".into(), losses.n as f64));
    }

    let mut csv = String::from("metric,value\n");
    let mut map = serde_json::Map::new();
    for (k, v) in &metrics {
        csv.push_str(&format!("{k},{v}\n"));
        map.insert(k.clone(), serde_json::json!(v));
    }
    write(&run.out_dir.join("metrics.csv"), &csv)?;
    let json = serde_json::to_string_pretty(&map)
        .map_err(|e| Error::Internal(format!("metrics serialization: {e}")))?;
    write(&run.out_dir.join("metrics.json"), &format!("{json}\n"))?;
    print!("{csv}");
    Ok(())
}

fn cmd_sweep(cli: &Cli) -> Result<()> {
    let run = load(cli)?;
    let cache = run.out_dir.join("cache");
    std::fs::create_dir_all(&cache).map_err(|e| Error::io(cache.display().to_string(), e))?;

    let started = std::time::Instant::now();
    let report = eval::run_sweep(&run.config, Some(&cache))?;
    eprintln!(
        "sweep: {} rows in {:.2}s",
        report.rows.len(),
        started.elapsed().as_secs_f64()
    );
    for r in &report.rows {
        if let Some(err) = &r.error {
            eprintln!("row {}={} seed {} failed: {err}", r.variable, r.value, r.seed);
        } else {
            eprintln!(
                "row {}={}{} seed {} took {:.2}s",
                r.variable,
                r.value,
                if r.mode.is_empty() { String::new() } else { format!(" ({})", r.mode) },
                r.seed,
                r.runtime_s
            );
        }
    }

    write(&run.out_dir.join("report.csv"), &report.to_csv())?;
    write(&run.out_dir.join("report.json"), &format!("{}\n", report.to_json()))?;
    write(&run.out_dir.join("report_long.csv"), &report.to_long_csv())?;
    let failed = report.rows.iter().filter(|r| r.failed).count();
    println!(
        "{}: {} rows, {failed} failed",
        run.out_dir.join("report.csv").display(),
        report.rows.len()
    );
    Ok(())
}
