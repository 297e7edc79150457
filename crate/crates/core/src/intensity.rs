//! Conditional intensity functions.
//!
//! Per-subregion rates `lam_k(t) = mu_k + sum_j exp(-gamma_k (t - t_j)) *
//! (Gamma[:,k] . rho(l_j))` are mixed by the tree scores of the evaluation
//! location and pushed through a softplus, so the intensity is strictly
//! positive for any parameter values. Poisson and self-correcting variants
//! share the same outer structure.
//!
//! Evaluation is pure given (model, inputs); batch evaluations over many
//! points may run concurrently.

use serde::{Deserialize, Serialize};

use crate::domain::Event;
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus, softplus_inv};
use crate::tree::DecisionTree;

/// Hawkes parameters for K subregions.
///
/// `gamma` is stored through a softplus reparameterization so gradient steps
/// cannot produce a negative decay rate; `mu` and the interaction matrix stay
/// raw because the outer softplus already guarantees a valid intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    pub mu: Vec<f64>,
    pub gamma_raw: Vec<f64>,
    /// Row-major K x K; entry `[source * K + target]` scales how events in
    /// subregion `source` excite subregion `target`.
    pub interaction: Vec<f64>,
}

impl HawkesParams {
    pub fn new(mu: Vec<f64>, gamma: Vec<f64>, interaction: Vec<f64>) -> Result<Self> {
        let k = mu.len();
        if gamma.len() != k || interaction.len() != k * k {
            return Err(Error::Precondition(format!(
                "shape mismatch: mu has {k} entries, gamma {}, interaction {}",
                gamma.len(),
                interaction.len()
            )));
        }
        if gamma.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::Precondition("decay rates must be positive".into()));
        }
        Ok(HawkesParams {
            mu,
            gamma_raw: gamma.iter().map(|&g| softplus_inv(g)).collect(),
            interaction,
        })
    }

    pub fn n_subregions(&self) -> usize {
        self.mu.len()
    }

    /// Effective decay rate for subregion `k`.
    pub fn gamma(&self, k: usize) -> f64 {
        softplus(self.gamma_raw[k])
    }

    pub fn gammas(&self) -> Vec<f64> {
        self.gamma_raw.iter().map(|&g| softplus(g)).collect()
    }

    /// Interaction entry from `source` onto `target`.
    pub fn coupling(&self, source: usize, target: usize) -> f64 {
        self.interaction[source * self.mu.len() + target]
    }
}

/// The intensity family attached to a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IntensityKind {
    Hawkes(HawkesParams),
    /// Constant rate; every subregion carries `rate`.
    Poisson { rate: f64 },
    /// `mu * t - alpha * |history|`, an inhibitory process.
    SelfCorrecting { mu: f64, alpha: f64 },
}

impl IntensityKind {
    pub fn name(&self) -> &'static str {
        match self {
            IntensityKind::Hawkes(_) => "hawkes",
            IntensityKind::Poisson { .. } => "poisson",
            IntensityKind::SelfCorrecting { .. } => "self-correcting",
        }
    }
}

/// The trained unit: tree + process parameters + history truncation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub tree: DecisionTree,
    pub kind: IntensityKind,
    /// History truncation horizon; only events in `[t - nu, t)` contribute.
    pub nu: f64,
}

impl Model {
    pub fn new(tree: DecisionTree, kind: IntensityKind, nu: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::Precondition(format!("nu must be positive, got {nu}")));
        }
        match &kind {
            IntensityKind::Hawkes(p) => {
                if p.n_subregions() != tree.n_leaves() {
                    return Err(Error::Precondition(format!(
                        "parameter count {} does not match 2^depth = {}",
                        p.n_subregions(),
                        tree.n_leaves()
                    )));
                }
            }
            IntensityKind::Poisson { rate } => {
                if !(*rate > 0.0) {
                    return Err(Error::Precondition("Poisson rate must be positive".into()));
                }
            }
            IntensityKind::SelfCorrecting { mu, alpha } => {
                if !(*mu > 0.0 && *alpha > 0.0) {
                    return Err(Error::Precondition(
                        "self-correcting mu and alpha must be positive".into(),
                    ));
                }
            }
        }
        Ok(Model { tree, kind, nu })
    }

    pub fn n_subregions(&self) -> usize {
        self.tree.n_leaves()
    }

    pub fn hawkes(&self) -> Result<&HawkesParams> {
        match &self.kind {
            IntensityKind::Hawkes(p) => Ok(p),
            other => Err(Error::UnsupportedKind(other.name().into())),
        }
    }

    /// Raw (pre-softplus) per-subregion intensities at time `t`.
    ///
    /// `hist` must already be truncated to the `nu` window and every event
    /// time must precede `t`.
    pub fn raw_subregion_intensities(&self, t: f64, hist: &[Event]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_subregions()];
        self.raw_subregion_intensities_into(t, hist, &mut out)?;
        Ok(out)
    }

    /// Buffer variant of [`Model::raw_subregion_intensities`] for hot loops.
    pub fn raw_subregion_intensities_into(
        &self,
        t: f64,
        hist: &[Event],
        out: &mut [f64],
    ) -> Result<()> {
        if let Some(bad) = hist.iter().find(|e| e.t >= t) {
            return Err(Error::Precondition(format!(
                "history event at t={} is not before evaluation time {t}",
                bad.t
            )));
        }
        let k_total = self.n_subregions();
        debug_assert_eq!(out.len(), k_total);
        match &self.kind {
            IntensityKind::Poisson { rate } => out.fill(*rate),
            IntensityKind::SelfCorrecting { mu, alpha } => {
                out.fill(mu * t - alpha * hist.len() as f64);
            }
            IntensityKind::Hawkes(p) => {
                out.copy_from_slice(&p.mu);
                let gammas = p.gammas();
                let mut rho_j = vec![0.0; k_total];
                for e in hist {
                    self.tree.scores_into(e.location(), &mut rho_j);
                    for k in 0..k_total {
                        // Spatial kernel: column k of the interaction matrix
                        // dotted with the source event's subregion scores.
                        let mut g_l = 0.0;
                        for (i, &r) in rho_j.iter().enumerate() {
                            g_l += p.interaction[i * k_total + k] * r;
                        }
                        out[k] += (-gammas[k] * (t - e.t)).exp() * g_l;
                    }
                }
            }
        }
        Ok(())
    }

    /// Mixed positive intensity `softplus(rho(l)^T lam(t))`.
    pub fn intensity_at(&self, t: f64, l: [f64; 2], hist: &[Event]) -> Result<f64> {
        let raw = self.raw_subregion_intensities(t, hist)?;
        let rho = self.tree.scores(l);
        Ok(softplus(dot(rho.as_slice(), &raw)))
    }

    /// Exact gradient of `intensity_at` w.r.t. every Hawkes and tree parameter.
    ///
    /// Chain rule through the outer softplus, the score mixture, the gamma
    /// reparameterization, and the tree Jacobians of both the evaluation
    /// location and every history-event location (history scores depend on
    /// the tree too).
    pub fn intensity_param_gradients(
        &self,
        t: f64,
        l: [f64; 2],
        hist: &[Event],
    ) -> Result<ParamGradients> {
        let p = self.hawkes()?;
        let k_total = self.n_subregions();
        let n_nodes = self.tree.n_nodes();
        let gammas = p.gammas();

        let rho_l = self.tree.scores(l);
        let jac_l = self.tree.score_jacobian(l);

        // Per-history sums entering lam_k and its partials.
        let mut lam = p.mu.clone();
        // d lam_k / d gamma_k before the reparameterization factor.
        let mut d_gamma = vec![0.0; k_total];
        // d lam_k / d Gamma_{i,k} = sum_j e_{jk} rho_i(l_j).
        let mut d_inter = vec![0.0; k_total * k_total];
        let mut grads = ParamGradients::zeros(k_total, n_nodes);

        let mut rho_j = vec![0.0; k_total];
        for e in hist {
            if e.t >= t {
                return Err(Error::Precondition(format!(
                    "history event at t={} is not before evaluation time {t}",
                    e.t
                )));
            }
            self.tree.scores_into(e.location(), &mut rho_j);
            let dt = t - e.t;
            let jac_j = self.tree.score_jacobian(e.location());
            for k in 0..k_total {
                let e_jk = (-gammas[k] * dt).exp();
                let mut g_l = 0.0;
                for (i, &r) in rho_j.iter().enumerate() {
                    g_l += p.interaction[i * k_total + k] * r;
                    d_inter[i * k_total + k] += e_jk * r;
                }
                lam[k] += e_jk * g_l;
                d_gamma[k] += -dt * e_jk * g_l;
                // History-score path: d z / d rho_i(l_j) = rho_k(l) e_jk Gamma_{i,k}.
                let w_k = rho_l[k] * e_jk;
                for i in 0..k_total {
                    let w_ji = w_k * p.interaction[i * k_total + k];
                    if w_ji == 0.0 {
                        continue;
                    }
                    for r in 0..n_nodes {
                        let idx = r * k_total + i;
                        grads.d_node_w[r][0] += w_ji * jac_j.d_wx[idx];
                        grads.d_node_w[r][1] += w_ji * jac_j.d_wy[idx];
                        grads.d_node_b[r] += w_ji * jac_j.d_b[idx];
                    }
                }
            }
        }

        let z = dot(rho_l.as_slice(), &lam);
        let s = sigmoid(z);

        for k in 0..k_total {
            grads.d_mu[k] = s * rho_l[k];
            grads.d_gamma_raw[k] = s * rho_l[k] * d_gamma[k] * sigmoid(p.gamma_raw[k]);
            for i in 0..k_total {
                grads.d_interaction[i * k_total + k] = s * rho_l[k] * d_inter[i * k_total + k];
            }
            // Evaluation-location score path: d z / d rho_k(l) = lam_k.
            for r in 0..n_nodes {
                let idx = r * k_total + k;
                grads.d_node_w[r][0] += lam[k] * jac_l.d_wx[idx];
                grads.d_node_w[r][1] += lam[k] * jac_l.d_wy[idx];
                grads.d_node_b[r] += lam[k] * jac_l.d_b[idx];
            }
        }
        // The history loop and the evaluation-location loop both accumulated
        // d z; scale the tree part by the softplus slope once.
        for r in 0..n_nodes {
            grads.d_node_w[r][0] *= s;
            grads.d_node_w[r][1] *= s;
            grads.d_node_b[r] *= s;
        }
        Ok(grads)
    }
}

/// Gradient record over (mu, gamma_raw, interaction, tree weights, tree biases).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub d_mu: Vec<f64>,
    pub d_gamma_raw: Vec<f64>,
    /// Row-major K x K, same layout as [`HawkesParams::interaction`].
    pub d_interaction: Vec<f64>,
    pub d_node_w: Vec<[f64; 2]>,
    pub d_node_b: Vec<f64>,
}

impl ParamGradients {
    pub fn zeros(k: usize, n_nodes: usize) -> Self {
        ParamGradients {
            d_mu: vec![0.0; k],
            d_gamma_raw: vec![0.0; k],
            d_interaction: vec![0.0; k * k],
            d_node_w: vec![[0.0; 2]; n_nodes],
            d_node_b: vec![0.0; n_nodes],
        }
    }

    pub fn zeros_like(model: &Model) -> Self {
        Self::zeros(model.n_subregions(), model.tree.n_nodes())
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &ParamGradients) {
        for (a, b) in self.d_mu.iter_mut().zip(&other.d_mu) {
            *a += c * b;
        }
        for (a, b) in self.d_gamma_raw.iter_mut().zip(&other.d_gamma_raw) {
            *a += c * b;
        }
        for (a, b) in self.d_interaction.iter_mut().zip(&other.d_interaction) {
            *a += c * b;
        }
        for (a, b) in self.d_node_w.iter_mut().zip(&other.d_node_w) {
            a[0] += c * b[0];
            a[1] += c * b[1];
        }
        for (a, b) in self.d_node_b.iter_mut().zip(&other.d_node_b) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.iter_mut() {
            *v *= c;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let mut s = 0.0;
        for v in self.iter() {
            s += v * v;
        }
        s.sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.d_mu
            .iter()
            .chain(&self.d_gamma_raw)
            .chain(&self.d_interaction)
            .chain(self.d_node_w.iter().flat_map(|w| w.iter()))
            .chain(&self.d_node_b)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.d_mu
            .iter_mut()
            .chain(&mut self.d_gamma_raw)
            .chain(&mut self.d_interaction)
            .chain(self.d_node_w.iter_mut().flat_map(|w| w.iter_mut()))
            .chain(&mut self.d_node_b)
    }

    /// Flatten in the canonical parameter order (matches [`trainable_params`]).
    pub fn flatten(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }
}

/// Trainable parameter vector of a Hawkes model, in the canonical order
/// mu, gamma_raw, interaction (row-major), node weights as (w_x, w_y) per
/// node, then node biases — matching [`ParamGradients::flatten`].
pub fn trainable_params(model: &Model) -> Result<Vec<f64>> {
    let p = model.hawkes()?;
    let mut v = Vec::new();
    v.extend_from_slice(&p.mu);
    v.extend_from_slice(&p.gamma_raw);
    v.extend_from_slice(&p.interaction);
    for n in model.tree.nodes() {
        v.push(n.w[0]);
        v.push(n.w[1]);
    }
    for n in model.tree.nodes() {
        v.push(n.b);
    }
    Ok(v)
}

/// Write a flat parameter vector (layout of [`trainable_params`]) back into
/// the model.
pub fn set_trainable_params(model: &mut Model, v: &[f64]) -> Result<()> {
    let k = model.n_subregions();
    let n_nodes = model.tree.n_nodes();
    let expected = 2 * k + k * k + 3 * n_nodes;
    if v.len() != expected {
        return Err(Error::Precondition(format!(
            "parameter vector has {} entries, expected {expected}",
            v.len()
        )));
    }
    let p = match &mut model.kind {
        IntensityKind::Hawkes(p) => p,
        other => return Err(Error::UnsupportedKind(other.name().into())),
    };
    p.mu.copy_from_slice(&v[..k]);
    p.gamma_raw.copy_from_slice(&v[k..2 * k]);
    p.interaction.copy_from_slice(&v[2 * k..2 * k + k * k]);
    let mut off = 2 * k + k * k;
    for n in model.tree.nodes_mut() {
        n.w[0] = v[off];
        n.w[1] = v[off + 1];
        off += 2;
    }
    for n in model.tree.nodes_mut() {
        n.b = v[off];
        off += 1;
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
