//! Quantile dose discretization into six classes.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvDoc;

use super::{ActionClass, N_ACTIONS};

pub const BIN_EDGES_MAGIC: &str = "OMGRL-BINS v1";

/// The five interior quantile edges separating the six dose classes.
#[derive(Debug, Clone, PartialEq)]
pub struct BinEdges {
    edges: [f64; N_ACTIONS - 1],
}

impl BinEdges {
    pub fn new(edges: [f64; N_ACTIONS - 1]) -> Result<Self> {
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Numeric("non-finite bin edge".into()));
        }
        if edges.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Argument("bin edges must be nondecreasing".into()));
        }
        Ok(BinEdges { edges })
    }

    pub fn edges(&self) -> &[f64; N_ACTIONS - 1] {
        &self.edges
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut doc = KvDoc::new(BIN_EDGES_MAGIC);
        doc.set_vec("edges", &self.edges);
        doc.write_file(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let doc = KvDoc::read_file(path, Some(BIN_EDGES_MAGIC))?;
        let v = doc.get_vec("edges")?;
        if v.len() != N_ACTIONS - 1 {
            return Err(Error::Parse(format!("expected 5 edges, got {}", v.len())));
        }
        let mut edges = [0.0; N_ACTIONS - 1];
        edges.copy_from_slice(&v);
        BinEdges::new(edges)
    }
}

/// Empirical quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Interior quantile edges at 1/6, ..., 5/6 of the empirical dose
/// distribution. Requires at least six distinct dose values.
pub fn compute_bin_edges(doses: &[f64]) -> Result<BinEdges> {
    if doses.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("non-finite dose".into()));
    }
    let mut sorted = doses.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct = 1;
    for w in sorted.windows(2) {
        if w[1] > w[0] {
            distinct += 1;
        }
    }
    if distinct < N_ACTIONS {
        return Err(Error::Degenerate(format!(
            "need at least {N_ACTIONS} distinct dose values, found {distinct}"
        )));
    }
    let mut edges = [0.0; N_ACTIONS - 1];
    for (k, e) in edges.iter_mut().enumerate() {
        *e = quantile(&sorted, (k + 1) as f64 / N_ACTIONS as f64);
    }
    BinEdges::new(edges)
}

/// Map a dose to its class: class k covers (edge_{k−1}, edge_k], so a dose
/// sitting exactly on an edge goes to the lower class.
pub fn discretize_dose(dose: f64, edges: &BinEdges) -> Result<ActionClass> {
    if !dose.is_finite() {
        return Err(Error::Numeric(format!("non-finite dose {dose}")));
    }
    let k = edges.edges.iter().filter(|&&e| e < dose).count();
    ActionClass::new(k)
}
