//! Versioned model checkpoints as structured text.
//!
//! Floats are written with 17 significant digits, which round-trips every
//! f64 bit pattern through decimal, so checkpoints are portable, diffable,
//! and load back bit-identical. Loading a newer format version than this
//! build understands fails loudly instead of guessing.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ingest::NormalizationSpec;
use crate::intensity::{HawkesParams, IntensityKind, Model};
use crate::tree::{DecisionTree, TreeNode};

pub const FORMAT_VERSION: u32 = 1;

const MAGIC: &str = "treehawkes checkpoint v";

/// Training provenance stored with the model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub best_val_ll: f64,
    pub best_epoch: usize,
}

/// A persisted model: parameters, optional normalization, and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub normalization: Option<NormalizationSpec>,
    pub meta: CheckpointMeta,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_vec(vs: &[f64]) -> String {
    vs.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(" ")
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Checkpoint { model, normalization: None, meta: CheckpointMeta::default() }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}{FORMAT_VERSION}");
        let _ = writeln!(s, "kind {}", self.model.kind.name());
        let _ = writeln!(s, "depth {}", self.model.tree.depth());
        let _ = writeln!(s, "nu {}", fmt_f64(self.model.nu));
        for (i, n) in self.model.tree.nodes().iter().enumerate() {
            let _ = writeln!(s, "node {i} {} {} {}", fmt_f64(n.w[0]), fmt_f64(n.w[1]), fmt_f64(n.b));
        }
        match &self.model.kind {
            IntensityKind::Hawkes(p) => {
                let _ = writeln!(s, "mu {}", fmt_vec(&p.mu));
                let _ = writeln!(s, "gamma_raw {}", fmt_vec(&p.gamma_raw));
                let k = p.n_subregions();
                for row in 0..k {
                    let _ = writeln!(
                        s,
                        "interaction {row} {}",
                        fmt_vec(&p.interaction[row * k..(row + 1) * k])
                    );
                }
            }
            IntensityKind::Poisson { rate } => {
                let _ = writeln!(s, "rate {}", fmt_f64(*rate));
            }
            IntensityKind::SelfCorrecting { mu, alpha } => {
                let _ = writeln!(s, "sc_mu {}", fmt_f64(*mu));
                let _ = writeln!(s, "sc_alpha {}", fmt_f64(*alpha));
            }
        }
        if let Some(norm) = &self.normalization {
            let _ = writeln!(s, "norm_origin {}", norm.origin.format("%Y-%m-%dT%H:%M:%S%.9f"));
            let _ = writeln!(s, "norm_seconds_per_unit {}", fmt_f64(norm.seconds_per_unit));
            let _ = writeln!(s, "norm_lon {} {}", fmt_f64(norm.lon_lo), fmt_f64(norm.lon_hi));
            let _ = writeln!(s, "norm_lat {} {}", fmt_f64(norm.lat_lo), fmt_f64(norm.lat_hi));
            let _ = writeln!(
                s,
                "norm_target {} {} {} {}",
                fmt_f64(norm.target.x_lo),
                fmt_f64(norm.target.x_hi),
                fmt_f64(norm.target.y_lo),
                fmt_f64(norm.target.y_hi)
            );
        }
        let _ = writeln!(s, "meta_config_hash {}", self.meta.config_hash);
        let _ = writeln!(s, "meta_best_val_ll {}", fmt_f64(self.meta.best_val_ll));
        let _ = writeln!(s, "meta_best_epoch {}", self.meta.best_epoch);
        s
    }

    pub fn from_text(text: &str) -> Result<Checkpoint> {
        let mut fields = Fields::new(text)?;

        let kind_name = fields.take("kind")?;
        let depth: usize = fields.parse_scalar("depth")?;
        let nu: f64 = fields.parse_scalar("nu")?;
        let n_nodes = (1usize << depth) - 1;
        let mut nodes = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let row = fields.take(&format!("node {i}"))?;
            let vals = parse_floats(&row, 3, &format!("node {i}"))?;
            nodes.push(TreeNode::new([vals[0], vals[1]], vals[2]));
        }
        let tree = DecisionTree::new(depth, nodes)?;
        let k = tree.n_leaves();

        let kind = match kind_name.as_str() {
            "hawkes" => {
                let mu = parse_floats(&fields.take("mu")?, k, "mu")?;
                let gamma_raw = parse_floats(&fields.take("gamma_raw")?, k, "gamma_raw")?;
                let mut interaction = Vec::with_capacity(k * k);
                for row in 0..k {
                    let vals = parse_floats(
                        &fields.take(&format!("interaction {row}"))?,
                        k,
                        "interaction",
                    )?;
                    interaction.extend(vals);
                }
                // Bypass the gamma > 0 constructor: gamma_raw is stored
                // directly and any real value is valid.
                let mut p = HawkesParams::new(mu, vec![1.0; k], interaction)?;
                p.gamma_raw = gamma_raw;
                IntensityKind::Hawkes(p)
            }
            "poisson" => IntensityKind::Poisson { rate: fields.parse_scalar("rate")? },
            "self-correcting" => IntensityKind::SelfCorrecting {
                mu: fields.parse_scalar("sc_mu")?,
                alpha: fields.parse_scalar("sc_alpha")?,
            },
            other => return Err(Error::Checkpoint(format!("unknown kind '{other}'"))),
        };
        let model = Model::new(tree, kind, nu)?;

        let normalization = if let Some(origin_raw) = fields.try_take("norm_origin") {
            let origin = chrono::NaiveDateTime::parse_from_str(&origin_raw, "%Y-%m-%dT%H:%M:%S%.f")
                .map_err(|e| Error::Checkpoint(format!("bad norm_origin: {e}")))?;
            let spu: f64 = fields.parse_scalar("norm_seconds_per_unit")?;
            let lon = parse_floats(&fields.take("norm_lon")?, 2, "norm_lon")?;
            let lat = parse_floats(&fields.take("norm_lat")?, 2, "norm_lat")?;
            let tgt = parse_floats(&fields.take("norm_target")?, 4, "norm_target")?;
            let target = crate::domain::SpatialRegion::new(tgt[0], tgt[1], tgt[2], tgt[3])?;
            Some(
                NormalizationSpec::new(origin, (lon[0], lon[1]), (lat[0], lat[1]), target)?
                    .with_seconds_per_unit(spu),
            )
        } else {
            None
        };

        let meta = CheckpointMeta {
            config_hash: fields.try_take("meta_config_hash").unwrap_or_default(),
            best_val_ll: fields
                .try_take("meta_best_val_ll")
                .map(|v| v.parse().unwrap_or(f64::NEG_INFINITY))
                .unwrap_or(f64::NEG_INFINITY),
            best_epoch: fields
                .try_take("meta_best_epoch")
                .map(|v| v.parse().unwrap_or(0))
                .unwrap_or(0),
        };

        Ok(Checkpoint { model, normalization, meta })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_text(&text)
    }
}

/// Line-oriented `key value...` fields, keyed by everything before the value
/// payload.
struct Fields {
    lines: Vec<(String, String)>,
}

impl Fields {
    fn new(text: &str) -> Result<Fields> {
        let mut lines_it = text.lines();
        let header = lines_it
            .next()
            .ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?;
        let version: u32 = header
            .strip_prefix(MAGIC)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Checkpoint(format!("unrecognized header '{header}'")))?;
        if version > FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is newer than the supported {FORMAT_VERSION}"
            )));
        }
        let mut lines = Vec::new();
        for l in lines_it {
            if l.trim().is_empty() {
                continue;
            }
            // Keys are one word, except the indexed families that carry the
            // index in the key.
            let (key, rest) = match l.split_once(' ') {
                Some((k, r)) if k == "node" || k == "interaction" => {
                    let (idx, rest) = r
                        .split_once(' ')
                        .ok_or_else(|| Error::Checkpoint(format!("truncated line '{l}'")))?;
                    (format!("{k} {idx}"), rest.to_string())
                }
                Some((k, r)) => (k.to_string(), r.to_string()),
                None => (l.to_string(), String::new()),
            };
            lines.push((key, rest));
        }
        Ok(Fields { lines })
    }

    fn take(&mut self, key: &str) -> Result<String> {
        self.try_take(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing field '{key}'")))
    }

    fn try_take(&mut self, key: &str) -> Option<String> {
        let pos = self.lines.iter().position(|(k, _)| k == key)?;
        Some(self.lines.remove(pos).1)
    }

    fn parse_scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?
            .trim()
            .parse()
            .map_err(|_| Error::Checkpoint(format!("unparseable field '{key}'")))
    }
}

fn parse_floats(s: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        s.split_whitespace().map(|v| v.parse::<f64>()).collect();
    let vals = vals.map_err(|_| Error::Checkpoint(format!("unparseable floats in '{what}'")))?;
    if vals.len() != expected {
        return Err(Error::Checkpoint(format!(
            "'{what}' has {} values, expected {expected}",
            vals.len()
        )));
    }
    Ok(vals)
}
