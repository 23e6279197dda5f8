//! Trajectory CSV ingestion and export.
//!
//! One row per hour per patient. Rewards are filled from the next row's
//! aPTT through [`rp_reward`], actions come from discretizing the row's
//! heparin dose. Floats are written with Rust's shortest round-trip
//! formatting, so writer → reader is lossless.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::{
    compute_bin_edges, discretize_dose, rp_reward, BinEdges, PatientState, Trajectory, Transition,
    FEATURE_NAMES, MIN_HORIZON, STATE_DIM,
};

/// Exact header the loader requires and the writer emits.
pub const CSV_HEADER: &str = "patient_id,t,age,gender,gcs,dbp,sbp,rr,hgb,temperature,wbc,platelet,pt,acd,creatinine,bilirubin,inr,weight,aptt,heparin_dose";

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Trajectories with fewer hourly rows than this are dropped.
    pub min_horizon: usize,
    /// Dose bin edges to reuse; when absent they are fit from the file.
    pub bin_edges: Option<BinEdges>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { min_horizon: MIN_HORIZON, bin_edges: None }
    }
}

#[derive(Debug)]
pub struct LoadReport {
    pub trajectories: Vec<Trajectory>,
    /// Count of trajectories excluded for being shorter than the horizon floor.
    pub dropped_short: usize,
    /// The edges actually used (provided or freshly computed).
    pub bin_edges: BinEdges,
}

struct Row {
    line: usize,
    t: i64,
    features: [f64; STATE_DIM],
    aptt: f64,
    dose: f64,
}

fn parse_row(line_no: usize, line: &str) -> Result<(String, Row)> {
    let fields: Vec<&str> = line.split(',').collect();
    let expected = 2 + STATE_DIM + 2;
    if fields.len() != expected {
        return Err(Error::Ingestion {
            row: line_no,
            msg: format!("expected {expected} fields, got {}", fields.len()),
        });
    }
    let patient_id = fields[0].to_string();
    let t: i64 = fields[1]
        .trim()
        .parse()
        .map_err(|e| Error::Ingestion { row: line_no, msg: format!("bad timestep: {e}") })?;
    let mut numeric = [0.0f64; STATE_DIM + 2];
    for (k, cell) in fields[2..].iter().enumerate() {
        let v: f64 = cell.trim().parse().map_err(|e| Error::Ingestion {
            row: line_no,
            msg: format!("bad numeric cell {:?}: {e}", cell),
        })?;
        if !v.is_finite() {
            return Err(Error::Ingestion { row: line_no, msg: format!("non-finite cell {cell:?}") });
        }
        numeric[k] = v;
    }
    let mut features = [0.0; STATE_DIM];
    features.copy_from_slice(&numeric[..STATE_DIM]);
    let aptt = numeric[STATE_DIM];
    let dose = numeric[STATE_DIM + 1];
    if aptt <= 0.0 {
        return Err(Error::Ingestion { row: line_no, msg: format!("aPTT must be positive, got {aptt}") });
    }
    Ok((patient_id, Row { line: line_no, t, features, aptt, dose }))
}

/// Parse a whole trajectory CSV from text. See [`load_trajectories`].
pub fn load_trajectories_str(text: &str, options: &LoadOptions) -> Result<LoadReport> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(Error::Ingestion { row: 1, msg: "empty file (missing header)".into() })?;
    if header.trim_end() != CSV_HEADER {
        // Identify which column is off for a pointed message.
        let got: Vec<&str> = header.trim_end().split(',').collect();
        let want: Vec<&str> = CSV_HEADER.split(',').collect();
        let detail = want
            .iter()
            .enumerate()
            .find(|(i, w)| got.get(*i).map(|g| g != *w).unwrap_or(true))
            .map(|(i, w)| format!("column {i} should be {w:?}"))
            .unwrap_or_else(|| "extra trailing columns".into());
        return Err(Error::Ingestion { row: 1, msg: format!("header mismatch: {detail}") });
    }

    // Group rows by patient in first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut by_patient: HashMap<String, Vec<Row>> = HashMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (pid, row) = parse_row(i + 1, line)?;
        if !by_patient.contains_key(&pid) {
            order.push(pid.clone());
        }
        by_patient.entry(pid).or_default().push(row);
    }

    // Sort each patient's rows by timestep; duplicates and gaps are errors.
    for pid in &order {
        let rows = by_patient.get_mut(pid).unwrap();
        rows.sort_by_key(|r| r.t);
        for w in rows.windows(2) {
            if w[1].t == w[0].t {
                return Err(Error::Ingestion {
                    row: w[1].line,
                    msg: format!("duplicate timestep {} for patient {pid}", w[1].t),
                });
            }
            if w[1].t != w[0].t + 1 {
                return Err(Error::Ingestion {
                    row: w[1].line,
                    msg: format!("non-contiguous timestep {} after {} for patient {pid}", w[1].t, w[0].t),
                });
            }
        }
    }

    // Bin edges from the action-producing rows (every row but each patient's last).
    let bin_edges = match &options.bin_edges {
        Some(e) => e.clone(),
        None => {
            let doses: Vec<f64> = order
                .iter()
                .flat_map(|pid| {
                    let rows = &by_patient[pid];
                    rows[..rows.len().saturating_sub(1)].iter().map(|r| r.dose)
                })
                .collect();
            if doses.is_empty() {
                // No transitions at all; edges are irrelevant but must exist.
                BinEdges::new([0.0; 5])?
            } else {
                compute_bin_edges(&doses)?
            }
        }
    };

    let min_rows = options.min_horizon.max(2);
    let mut trajectories = Vec::new();
    let mut dropped_short = 0usize;
    for pid in order {
        let rows = &by_patient[&pid];
        if rows.len() < min_rows {
            dropped_short += 1;
            continue;
        }
        let mut transitions = Vec::with_capacity(rows.len() - 1);
        for k in 0..rows.len() - 1 {
            let cur = &rows[k];
            let next = &rows[k + 1];
            transitions.push(Transition {
                state: PatientState { features: cur.features, aptt: cur.aptt },
                action: discretize_dose(cur.dose, &bin_edges)?,
                dose: cur.dose,
                reward: rp_reward(next.aptt)?,
                next_state: PatientState { features: next.features, aptt: next.aptt },
                terminal: k + 2 == rows.len(),
            });
        }
        trajectories.push(Trajectory { patient_id: pid, transitions });
    }

    Ok(LoadReport { trajectories, dropped_short, bin_edges })
}

/// Load trajectories from a CSV file.
///
/// Rows are grouped by patient and sorted by timestep; rewards are filled
/// from the next row's aPTT; actions are discretized with the provided or
/// freshly computed bin edges; trajectories shorter than the horizon floor
/// are dropped and counted.
pub fn load_trajectories(path: &Path, options: &LoadOptions) -> Result<LoadReport> {
    let text = std::fs::read_to_string(path)?;
    load_trajectories_str(&text, options)
}

/// Render trajectories in the ingestion schema. The final row of each
/// patient carries a zero dose (its action never exists).
pub fn write_trajectories_string(trajectories: &[Trajectory]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    debug_assert_eq!(FEATURE_NAMES.len(), STATE_DIM);
    for traj in trajectories {
        let mut t = 0i64;
        let write_row = |t: i64, s: &PatientState, dose: f64, out: &mut String| {
            let _ = write!(out, "{},{}", traj.patient_id, t);
            for f in &s.features {
                let _ = write!(out, ",{f}");
            }
            let _ = writeln!(out, ",{},{}", s.aptt, dose);
        };
        for tr in &traj.transitions {
            write_row(t, &tr.state, tr.dose, &mut out);
            t += 1;
        }
        if let Some(last) = traj.transitions.last() {
            write_row(t, &last.next_state, 0.0, &mut out);
        }
    }
    out
}

/// Write trajectories to a CSV file in the ingestion schema.
pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, write_trajectories_string(trajectories))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(pid: &str, t: i64, fill: f64, aptt: f64, dose: f64) -> String {
        let features: Vec<String> = (0..STATE_DIM).map(|d| format!("{}", fill + d as f64)).collect();
        format!("{pid},{t},{},{aptt},{dose}", features.join(","))
    }

    #[test]
    fn empty_file_with_header_is_empty() {
        let report = load_trajectories_str(&format!("{CSV_HEADER}\n"), &LoadOptions::default()).unwrap();
        assert!(report.trajectories.is_empty());
        assert_eq!(report.dropped_short, 0);
    }

    #[test]
    fn three_row_patient_yields_two_transitions() {
        let text = format!(
            "{CSV_HEADER}\n{}\n{}\n{}\n",
            row("p1", 0, 0.5, 40.0, 10.0),
            row("p1", 1, 1.5, 70.0, 20.0),
            row("p1", 2, 2.5, 90.0, 30.0),
        );
        let opts = LoadOptions {
            min_horizon: 1,
            bin_edges: Some(BinEdges::new([12.0, 14.0, 16.0, 18.0, 25.0]).unwrap()),
        };
        let report = load_trajectories_str(&text, &opts).unwrap();
        assert_eq!(report.trajectories.len(), 1);
        let traj = &report.trajectories[0];
        assert_eq!(traj.len(), 2);
        assert_eq!(traj.transitions[0].reward, rp_reward(70.0).unwrap());
        assert_eq!(traj.transitions[1].reward, rp_reward(90.0).unwrap());
        assert_eq!(traj.transitions[0].action.index(), 0); // dose 10 below all edges
        assert_eq!(traj.transitions[1].action.index(), 4); // dose 20 in (18, 25]
        assert!(!traj.transitions[0].terminal);
        assert!(traj.transitions[1].terminal);
        assert_eq!(traj.transitions[0].state.aptt, 40.0);
        assert_eq!(traj.transitions[0].next_state.aptt, 70.0);
    }

    #[test]
    fn short_trajectory_dropped_with_count() {
        // 5 rows < default 7.
        let rows: Vec<String> = (0..5).map(|t| row("p1", t, 0.0, 50.0, t as f64)).collect();
        let text = format!("{CSV_HEADER}\n{}\n", rows.join("\n"));
        let opts = LoadOptions {
            min_horizon: MIN_HORIZON,
            bin_edges: Some(BinEdges::new([1.0, 2.0, 3.0, 4.0, 5.0]).unwrap()),
        };
        let report = load_trajectories_str(&text, &opts).unwrap();
        assert!(report.trajectories.is_empty());
        assert_eq!(report.dropped_short, 1);
    }

    #[test]
    fn missing_column_reports_header_row() {
        let bad_header = CSV_HEADER.replace(",weight", "");
        let err = load_trajectories_str(&format!("{bad_header}\n"), &LoadOptions::default());
        match err {
            Err(Error::Ingestion { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_timestep_reports_row() {
        let text = format!(
            "{CSV_HEADER}\n{}\n{}\n{}\n",
            row("p1", 0, 0.0, 50.0, 1.0),
            row("p1", 1, 0.0, 50.0, 2.0),
            row("p1", 1, 0.0, 50.0, 3.0),
        );
        match load_trajectories_str(&text, &LoadOptions::default()) {
            Err(Error::Ingestion { row, msg }) => {
                assert_eq!(row, 4);
                assert!(msg.contains("duplicate"));
            }
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_cell_reports_row() {
        let mut bad = row("p1", 0, 0.0, 50.0, 1.0);
        bad = bad.replace("50", "NaN");
        let text = format!("{CSV_HEADER}\n{bad}\n");
        match load_trajectories_str(&text, &LoadOptions::default()) {
            Err(Error::Ingestion { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected ingestion error, got {other:?}"),
        }
    }

    #[test]
    fn gap_in_timesteps_rejected() {
        let text = format!(
            "{CSV_HEADER}\n{}\n{}\n",
            row("p1", 0, 0.0, 50.0, 1.0),
            row("p1", 2, 0.0, 50.0, 2.0),
        );
        assert!(matches!(
            load_trajectories_str(&text, &LoadOptions::default()),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn unsorted_rows_are_sorted_by_timestep() {
        let text = format!(
            "{CSV_HEADER}\n{}\n{}\n{}\n",
            row("p1", 2, 2.0, 90.0, 3.0),
            row("p1", 0, 0.0, 40.0, 1.0),
            row("p1", 1, 1.0, 70.0, 2.0),
        );
        let opts = LoadOptions {
            min_horizon: 1,
            bin_edges: Some(BinEdges::new([1.5, 2.5, 3.5, 4.5, 5.5]).unwrap()),
        };
        let report = load_trajectories_str(&text, &opts).unwrap();
        let traj = &report.trajectories[0];
        assert_eq!(traj.transitions[0].state.aptt, 40.0);
        assert_eq!(traj.transitions[1].state.aptt, 70.0);
    }

    #[test]
    fn roundtrip_is_lossless() {
        let text = format!(
            "{CSV_HEADER}\n{}\n{}\n{}\n{}\n{}\n",
            row("p1", 0, 0.125, 41.5, 10.0),
            row("p1", 1, 1.875, 72.25, 20.0),
            row("p1", 2, -2.5, 95.0625, 30.0),
            row("p2", 0, 0.3, 55.5, 15.0),
            row("p2", 1, 0.7, 66.25, 25.0),
        );
        let edges = BinEdges::new([12.0, 14.0, 16.0, 22.0, 27.0]).unwrap();
        let opts = LoadOptions { min_horizon: 1, bin_edges: Some(edges.clone()) };
        let first = load_trajectories_str(&text, &opts).unwrap().trajectories;
        let written = write_trajectories_string(&first);
        let second = load_trajectories_str(&written, &opts).unwrap().trajectories;
        assert_eq!(first, second);
    }
}
