//! Statistical validity of the thinning simulator: under the generating
//! model, compensator increments between consecutive events are unit
//! exponentials.

use treehawkes::domain::SpatialRegion;
use treehawkes::intensity::{HawkesParams, IntensityKind, Model};
use treehawkes::learn::evolving_compensator;
use treehawkes::quadrature::QuadratureSpec;
use treehawkes::simulate::{thin_simulate, SimConfig};
use treehawkes::stats::ks_test_exponential;
use treehawkes::tree::{DecisionTree, TreeNode};

#[test]
fn hawkes_time_change_residuals_are_unit_exponential() {
    let region = SpatialRegion::new(0.0, 1.0, 0.0, 1.0).unwrap();
    let truth = {
        let tree = DecisionTree::new(0, vec![]).unwrap();
        let p = HawkesParams::new(vec![0.5], vec![1.0], vec![0.5]).unwrap();
        Model::new(tree, IntensityKind::Hawkes(p), 20.0).unwrap()
    };
    let quad = QuadratureSpec { n_t: 128.0, n_x: 4, n_y: 4, t_max: 1e9 };

    let mut residuals = Vec::new();
    for seed in 0..6 {
        let cfg = SimConfig::new(region, 150.0, seed).unwrap().with_resolution(16);
        let seq = thin_simulate(&truth, &cfg, &mut treehawkes::rng_for_seed(seed)).unwrap();
        let events = seq.events();
        for w in events.windows(2) {
            let lam = evolving_compensator(&truth, &seq, w[0].t, w[1].t, &quad).unwrap();
            residuals.push(lam);
        }
    }
    assert!(residuals.len() > 800, "only {} residuals", residuals.len());
    let p = ks_test_exponential(&residuals, 1.0).unwrap();
    assert!(p > 0.01, "KS p = {p} over {} residuals", residuals.len());
}

#[test]
fn tree_partitioned_model_passes_time_change_too() {
    // A depth-1 model with asymmetric rates and cross-excitation.
    let region = SpatialRegion::new(0.0, 1.0, 0.0, 1.0).unwrap();
    let tree = DecisionTree::new(1, vec![TreeNode::new([6.0, 0.0], 3.0)]).unwrap();
    let p = HawkesParams::new(
        vec![0.2, 1.0],
        vec![1.0, 1.5],
        vec![0.3, 0.1, 0.2, 0.3],
    )
    .unwrap();
    let truth = Model::new(tree, IntensityKind::Hawkes(p), 20.0).unwrap();
    let quad = QuadratureSpec { n_t: 128.0, n_x: 16, n_y: 16, t_max: 1e9 };

    let mut residuals = Vec::new();
    for seed in 0..4 {
        let cfg = SimConfig::new(region, 120.0, seed).unwrap().with_resolution(64);
        let seq = thin_simulate(&truth, &cfg, &mut treehawkes::rng_for_seed(seed)).unwrap();
        let events = seq.events();
        for w in events.windows(2) {
            residuals.push(evolving_compensator(&truth, &seq, w[0].t, w[1].t, &quad).unwrap());
        }
    }
    assert!(residuals.len() > 400);
    let p = ks_test_exponential(&residuals, 1.0).unwrap();
    assert!(p > 0.01, "KS p = {p} over {} residuals", residuals.len());
}
