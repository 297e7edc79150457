//! Ogata thinning sampler for synthetic ground truth.
//!
//! Proposals arrive from a homogeneous process at a dominating rate that
//! bounds the spatial integral of the intensity for all times until the next
//! event; each proposal is accepted with probability (integral / bound), and
//! accepted proposals draw their location by inverse CDF over a discretized
//! spatial profile. The bound is recomputed after every proposal, accepted or
//! not, which keeps it tight as the kernels decay.
//!
//! A single simulation is inherently sequential; run independent seeds in
//! parallel instead.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{history, Event, EventSequence, SpatialRegion};
use crate::error::{Error, Result};
use crate::intensity::{IntensityKind, Model};
use crate::math::{pairwise_sum, softplus};
use crate::quadrature::SpatialTable;

/// Simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub region: SpatialRegion,
    pub t_end: f64,
    pub seed: u64,
    /// Per-axis resolution of the spatial proposal grid.
    pub resolution: usize,
    /// Abort threshold against supercritical parameterizations.
    pub max_events: usize,
}

impl SimConfig {
    pub fn new(region: SpatialRegion, t_end: f64, seed: u64) -> Result<Self> {
        if !(t_end > 0.0) {
            return Err(Error::Precondition(format!("t_end must be positive, got {t_end}")));
        }
        Ok(SimConfig {
            region,
            t_end,
            seed,
            resolution: 128,
            max_events: 1_000_000,
        })
    }

    pub fn with_resolution(mut self, resolution: usize) -> Self {
        self.resolution = resolution.max(2);
        self
    }

    pub fn with_max_events(mut self, max_events: usize) -> Self {
        self.max_events = max_events;
        self
    }
}

/// Upper bound on the spatial integral of the intensity, and the time it
/// stays valid for.
///
/// Decaying kernels are maximal at `s = t`, so positive excitation terms are
/// bounded by their current value and negative ones by zero; the bound then
/// holds for every `s >= t` until the next accepted event. The
/// self-correcting ramp instead gets a bound evaluated at the end of a finite
/// lookahead window.
pub fn dominating_rate(
    model: &Model,
    region: &SpatialRegion,
    t: f64,
    hist: &[Event],
) -> Result<(f64, f64)> {
    let area = region.area();
    match &model.kind {
        IntensityKind::Poisson { rate } => Ok((softplus(*rate) * area, f64::INFINITY)),
        IntensityKind::SelfCorrecting { mu, .. } => {
            // Events leaving the truncation window can only raise the rate up
            // to mu * s, so the alpha term is dropped from the bound.
            const LOOKAHEAD: f64 = 1.0;
            let until = t + LOOKAHEAD;
            Ok((softplus(mu * until) * area, until))
        }
        IntensityKind::Hawkes(p) => {
            let k_total = model.n_subregions();
            let gammas = p.gammas();
            let mut bound = p.mu.clone();
            let mut rho_j = vec![0.0; k_total];
            for e in hist {
                // Events at exactly t are allowed: they enter the history of
                // every s > t at full kernel weight, and the bound must cover
                // them.
                if e.t > t {
                    return Err(Error::Precondition(format!(
                        "history event at t={} is after {t}",
                        e.t
                    )));
                }
                model.tree.scores_into(e.location(), &mut rho_j);
                for k in 0..k_total {
                    let mut g_l = 0.0;
                    for (i, &r) in rho_j.iter().enumerate() {
                        g_l += p.interaction[i * k_total + k] * r;
                    }
                    let contrib = (-gammas[k] * (t - e.t)).exp() * g_l;
                    if contrib > 0.0 {
                        bound[k] += contrib;
                    }
                }
            }
            let z_max = bound.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Ok((softplus(z_max) * area, f64::INFINITY))
        }
    }
}

/// Generate a sequence on `[0, t_end] x L` whose law matches the model.
pub fn thin_simulate(model: &Model, cfg: &SimConfig, rng: &mut crate::Rng) -> Result<EventSequence> {
    let table = SpatialTable::new(model, &cfg.region, cfg.resolution, cfg.resolution);
    let n_cells = table.n_cells();
    let k = model.n_subregions();
    let dx = (cfg.region.x_hi - cfg.region.x_lo) / cfg.resolution as f64;
    let dy = (cfg.region.y_hi - cfg.region.y_lo) / cfg.resolution as f64;

    let mut events: Vec<Event> = Vec::new();
    let mut t = 0.0f64;
    let mut raw = vec![0.0; k];
    let mut weights = vec![0.0; n_cells];

    while t < cfg.t_end {
        // The bound's window is closed on the right: an event accepted at
        // exactly t excites every s > t and must be covered.
        let lo = events.partition_point(|e| e.t < t - model.nu);
        let hi = events.partition_point(|e| e.t <= t);
        let (bar, valid_until) = dominating_rate(model, &cfg.region, t, &events[lo..hi])?;
        if !(bar > 0.0) {
            return Err(Error::Internal(format!("dominating rate is not positive: {bar}")));
        }
        let dt = -(1.0 - rng.gen::<f64>()).ln() / bar;
        if t + dt > valid_until {
            // No proposal inside the bound's validity window; advance to its
            // edge and re-bound.
            t = valid_until;
            continue;
        }
        let t_prop = t + dt;
        t = t_prop;
        if t_prop > cfg.t_end {
            break;
        }

        let hist_prop = history(&events, t_prop, model.nu);
        model.raw_subregion_intensities_into(t_prop, hist_prop, &mut raw)?;
        for c in 0..n_cells {
            let rho = table.scores(c);
            let z: f64 = rho.iter().zip(&raw).map(|(r, l)| r * l).sum();
            weights[c] = softplus(z);
        }
        let integral = pairwise_sum(&weights) * table.cell_area;
        let ratio = integral / bar;
        if ratio > 1.0 + 1e-9 {
            return Err(Error::Internal(format!(
                "acceptance ratio {ratio} exceeds 1: the dominating bound is invalid"
            )));
        }

        if rng.gen::<f64>() <= ratio {
            // Inverse CDF over the cell weights, then uniform within the cell.
            let target = rng.gen::<f64>() * pairwise_sum(&weights);
            let mut acc = 0.0;
            let mut chosen = n_cells - 1;
            for (c, &w) in weights.iter().enumerate() {
                acc += w;
                if target <= acc {
                    chosen = c;
                    break;
                }
            }
            let [cx, cy] = table.mids[chosen];
            let x = (cx + rng.gen_range(-0.5..0.5) * dx)
                .clamp(cfg.region.x_lo, cfg.region.x_hi);
            let y = (cy + rng.gen_range(-0.5..0.5) * dy)
                .clamp(cfg.region.y_lo, cfg.region.y_hi);
            events.push(Event::new(t_prop, x, y));
            if events.len() > cfg.max_events {
                return Err(Error::Internal(format!(
                    "simulation exceeded {} events; parameters look supercritical",
                    cfg.max_events
                )));
            }
        }
    }

    EventSequence::with_window(events, cfg.region, 0.0, cfg.t_end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::HawkesParams;
    use crate::stats::{chi_square_exponential, ks_test_exponential};
    use crate::tree::{DecisionTree, TreeNode};

    fn region() -> SpatialRegion {
        SpatialRegion::new(0.0, 1.0, 0.0, 1.0).unwrap()
    }

    fn poisson_model(rate: f64) -> Model {
        let tree = DecisionTree::new(0, vec![]).unwrap();
        Model::new(tree, IntensityKind::Poisson { rate }, 1.0).unwrap()
    }

    fn k1_hawkes(mu: f64, gamma: f64, coupling: f64, nu: f64) -> Model {
        let tree = DecisionTree::new(0, vec![]).unwrap();
        let p = HawkesParams::new(vec![mu], vec![gamma], vec![coupling]).unwrap();
        Model::new(tree, IntensityKind::Hawkes(p), nu).unwrap()
    }

    #[test]
    fn poisson_dominating_rate_is_exact() {
        let model = poisson_model(3.0);
        let (bar, until) = dominating_rate(&model, &region(), 1.0, &[]).unwrap();
        assert_eq!(bar, softplus(3.0) * region().area());
        assert_eq!(until, f64::INFINITY);
    }

    #[test]
    fn hawkes_bound_dominates_later_times() {
        let model = k1_hawkes(0.5, 1.0, 1.5, 50.0);
        let r = region();
        let hist = vec![Event::new(0.9, 0.4, 0.6), Event::new(0.95, 0.5, 0.5)];
        let (bar, _) = dominating_rate(&model, &r, 1.0, &hist).unwrap();
        let table = SpatialTable::new(&model, &r, 32, 32);
        for i in 0..20 {
            let s = 1.0 + i as f64 * 0.25;
            let raw = model.raw_subregion_intensities(s, &hist).unwrap();
            assert!(table.spatial_integral(&raw) <= bar + 1e-12, "s={s}");
        }
    }

    #[test]
    fn same_seed_reproduces_the_sequence() {
        let model = k1_hawkes(1.0, 1.0, 0.5, 10.0);
        let cfg = SimConfig::new(region(), 50.0, 9).unwrap().with_resolution(16);
        let a = thin_simulate(&model, &cfg, &mut crate::rng_for_seed(9)).unwrap();
        let b = thin_simulate(&model, &cfg, &mut crate::rng_for_seed(9)).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn all_locations_stay_inside_the_region() {
        let tree = DecisionTree::new(1, vec![TreeNode::new([2.0, -1.0], 0.3)]).unwrap();
        let p = HawkesParams::new(vec![0.8, 1.4], vec![1.0, 2.0], vec![0.4, 0.1, 0.2, 0.5])
            .unwrap();
        let model = Model::new(tree, IntensityKind::Hawkes(p), 10.0).unwrap();
        let cfg = SimConfig::new(region(), 80.0, 3).unwrap().with_resolution(16);
        let seq = thin_simulate(&model, &cfg, &mut crate::rng_for_seed(3)).unwrap();
        assert!(!seq.is_empty());
        for e in seq.events() {
            assert!(cfg.region.contains(e.x, e.y));
            assert!(e.t >= 0.0 && e.t <= cfg.t_end);
        }
    }

    #[test]
    fn zero_coupling_reduces_to_poisson_exactly() {
        // With no interaction the Hawkes path computes the same rates and
        // consumes the same randomness, so the sequences are bit-identical.
        let hawkes = k1_hawkes(1.2, 1.0, 0.0, 10.0);
        let poisson = poisson_model(1.2);
        let cfg = SimConfig::new(region(), 60.0, 17).unwrap().with_resolution(16);
        let a = thin_simulate(&hawkes, &cfg, &mut crate::rng_for_seed(17)).unwrap();
        let b = thin_simulate(&poisson, &cfg, &mut crate::rng_for_seed(17)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn positive_coupling_raises_the_event_count() {
        // Subcritical excitation: softplus keeps the slope near 1, so the
        // branching factor is about coupling / gamma and must stay below 1.
        let cfg = SimConfig::new(region(), 120.0, 0).unwrap().with_resolution(8);
        let mut excess = 0u64;
        let seeds = 15u64;
        for seed in 0..seeds {
            let base = thin_simulate(
                &k1_hawkes(0.5, 1.0, 0.0, 20.0),
                &cfg,
                &mut crate::rng_for_seed(seed),
            )
            .unwrap();
            let excited = thin_simulate(
                &k1_hawkes(0.5, 1.0, 0.6, 20.0),
                &cfg,
                &mut crate::rng_for_seed(seed),
            )
            .unwrap();
            if excited.len() > base.len() {
                excess += 1;
            }
        }
        assert!(excess * 2 > seeds, "self-excitation won only {excess}/{seeds} seeds");
    }

    #[test]
    fn poisson_output_matches_the_closed_form_law() {
        let rate = 2.0;
        let model = poisson_model(rate);
        let r = region();
        let effective = softplus(rate) * r.area();
        let t_end = 200.0;
        let mut counts = Vec::new();
        let mut gaps = Vec::new();
        for seed in 0..10 {
            let cfg = SimConfig::new(r, t_end, seed).unwrap().with_resolution(8);
            let seq = thin_simulate(&model, &cfg, &mut crate::rng_for_seed(seed)).unwrap();
            counts.push(seq.len() as f64);
            let ts: Vec<f64> = seq.events().iter().map(|e| e.t).collect();
            for w in ts.windows(2) {
                gaps.push(w[1] - w[0]);
            }
        }
        let mean_count = pairwise_sum(&counts) / counts.len() as f64;
        let expected = effective * t_end;
        // 10 replicates of ~420 events: the mean is within a few std errors.
        let se = (expected / counts.len() as f64).sqrt();
        assert!(
            (mean_count - expected).abs() < 4.0 * se,
            "mean {mean_count} vs {expected} (se {se})"
        );

        let ks_p = ks_test_exponential(&gaps, effective).unwrap();
        assert!(ks_p > 0.01, "KS p = {ks_p}");
        let chi_p = chi_square_exponential(&gaps, effective, 20).unwrap();
        assert!(chi_p > 0.01, "chi-square p = {chi_p}");
    }

    #[test]
    fn self_correcting_simulation_runs() {
        let tree = DecisionTree::new(0, vec![]).unwrap();
        let model = Model::new(
            tree,
            IntensityKind::SelfCorrecting { mu: 0.8, alpha: 0.4 },
            5.0,
        )
        .unwrap();
        let cfg = SimConfig::new(region(), 30.0, 4).unwrap().with_resolution(8);
        let seq = thin_simulate(&model, &cfg, &mut crate::rng_for_seed(4)).unwrap();
        assert!(!seq.is_empty());
    }

    #[test]
    fn supercritical_models_abort_instead_of_hanging() {
        let model = k1_hawkes(2.0, 0.1, 30.0, 100.0);
        let cfg = SimConfig::new(region(), 1e6, 1)
            .unwrap()
            .with_resolution(4)
            .with_max_events(300);
        let err = thin_simulate(&model, &cfg, &mut crate::rng_for_seed(1));
        assert!(err.is_err());
    }
}
