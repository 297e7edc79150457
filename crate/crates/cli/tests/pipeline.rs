//! End-to-end command pipelines driven through the binary.

use std::path::PathBuf;
use std::process::Command;

use treehawkes::checkpoint::Checkpoint;
use treehawkes::intensity::{IntensityKind, Model};
use treehawkes::math::softplus;
use treehawkes::tree::DecisionTree;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_treehawkes")
}

fn run_ok(args: &[&str]) -> String {
    let out = Command::new(bin()).args(args).output().expect("spawn CLI");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn workdir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn predict_counts_with_a_poisson_checkpoint_is_constant() {
    let dir = workdir("poisson-counts");

    // A Poisson checkpoint written through the library API.
    let tree = DecisionTree::new(0, vec![]).unwrap();
    let model = Model::new(tree, IntensityKind::Poisson { rate: 2.0 }, 1.0).unwrap();
    let ck_path = dir.join("poisson.ckpt");
    Checkpoint::new(model).save(&ck_path).unwrap();

    // A two-event history so the dataset binds.
    let events = dir.join("history.csv");
    std::fs::write(&events, "t,x,y\n0.500000000,0.2,0.3\n1.000000000,0.6,0.7\n").unwrap();

    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        format!(
            r#"
[dataset]
events_csv = "{}"
x_range = [0.0, 1.0]
y_range = [0.0, 1.0]
[model]
depth = 0
nu = 1.0
[quadrature]
n_t = 16.0
n_x = 8
n_y = 8
t_max = 50.0
[grid]
n_x = 4
n_y = 4
horizon = 3.0
"#,
            events.display()
        ),
    )
    .unwrap();

    run_ok(&[
        "predict-counts",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        ck_path.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);

    let csv = std::fs::read_to_string(dir.join("counts.csv")).unwrap();
    let expected = softplus(2.0) * 3.0 * (1.0 / 16.0);
    let mut cells = 0;
    for line in csv.lines().skip(1) {
        let v: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(
            (v - expected).abs() / expected < 1e-9,
            "cell {line} vs {expected}"
        );
        cells += 1;
    }
    assert_eq!(cells, 16);
}

#[test]
fn simulate_train_evaluate_recovers_the_generator() {
    let dir = workdir("pipeline-recovery");
    let events = dir.join("events.csv");

    // Ground truth lives only in the simulation config; the training config
    // has no explicit parameters, so the fit starts from random init.
    let sim_config = dir.join("sim.toml");
    std::fs::write(
        &sim_config,
        r#"
seed = 55
[model]
depth = 0
nu = 30.0
[model.params]
mu = [0.5]
gamma = [1.0]
interaction = [[0.8]]
[simulate]
t_end = 16000.0
x_range = [0.0, 0.5]
y_range = [0.0, 0.5]
resolution = 8
"#,
    )
    .unwrap();

    let config = dir.join("train.toml");
    std::fs::write(
        &config,
        format!(
            r#"
seed = 55
[model]
depth = 0
nu = 30.0
[dataset]
events_csv = "{}"
x_range = [0.0, 0.5]
y_range = [0.0, 0.5]
t_end = 16000.0
f_train = 0.7
f_val = 0.2
[objective]
negatives = 8192
learning_rate = 0.01
batch_size = 1200
max_iters = 900
patience = 250
eval_grid = [6144, 2, 2]
[quadrature]
n_t = 32.0
n_x = 8
n_y = 8
[grid]
n_x = 2
n_y = 2
horizon = 20.0
"#,
            events.display()
        ),
    )
    .unwrap();

    run_ok(&["simulate", "--config", sim_config.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(events.exists());

    let train_dir = dir.join("trained");
    run_ok(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        train_dir.to_str().unwrap(),
    ]);
    let ck = Checkpoint::load(&train_dir.join("checkpoint.txt")).unwrap();
    let p = ck.model.hawkes().unwrap();
    for (name, got, want) in [
        ("mu", p.mu[0], 0.5),
        ("gamma", p.gamma(0), 1.0),
        ("coupling", p.coupling(0, 0), 0.8),
    ] {
        assert!(
            (got - want).abs() / want < 0.2,
            "{name}: {got} vs {want}"
        );
    }

    let eval_dir = dir.join("scored");
    let stdout = run_ok(&[
        "evaluate",
        "--config",
        config.to_str().unwrap(),
        "--checkpoint",
        train_dir.join("checkpoint.txt").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(stdout.contains("nll,"));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap())
            .unwrap();
    assert!(metrics["nll"].as_f64().unwrap().is_finite());
    assert!(metrics["rmse"].as_f64().unwrap().is_finite());
}
