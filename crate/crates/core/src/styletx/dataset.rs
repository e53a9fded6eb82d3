//! The labelled dataset of generated windows used for behavioural cloning.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{transfer_many, TransferConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pairing::PairingResult;
use crate::par::Exec;
use crate::trajdata::io::csv_error;
use crate::trajdata::{align_mean, Trajectory, Window};
use crate::vae::Vae;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptedRecord {
    pub content_idx: usize,
    pub style_idx: usize,
    pub content_id: String,
    pub content_start: usize,
    pub style_id: String,
    pub style_start: usize,
    pub similarity: f64,
    pub label: Vec<f64>,
    pub initial_style: f64,
    pub final_content: f64,
    pub final_style: f64,
    pub content_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptedDataset {
    pub windows: Vec<Matrix>,
    pub records: Vec<AdaptedRecord>,
}

impl AdaptedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.label.clone()).collect()
    }
}

/// The action recorded at each window's final timestep.
pub fn expert_labels(windows: &[Window], trajectories: &[Trajectory]) -> Result<Vec<Vec<f64>>> {
    let by_id: HashMap<&str, &Trajectory> = trajectories.iter().map(|t| (t.id.as_str(), t)).collect();
    windows
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let t = by_id
                .get(w.trajectory_id.as_str())
                .ok_or_else(|| Error::Invalid(format!("no expert actions for window {i} (trajectory '{}')", w.trajectory_id)))?;
            let last = (w.start_index + w.len()).saturating_sub(1);
            if w.is_empty() || last >= t.len() {
                return Err(Error::Invalid(format!(
                    "window {i} ends at sample {last}, trajectory '{}' has {} samples",
                    t.id,
                    t.len()
                )));
            }
            Ok(t.actions.row(last).to_vec())
        })
        .collect()
}

/// One generated window per content window, styled after its matched style
/// window and labelled with the content window's expert action.
pub fn build_adapted_dataset(
    pairing: &PairingResult,
    contents: &[Window],
    labels: &[Vec<f64>],
    styles: &[Window],
    vae: &Vae,
    cfg: &TransferConfig,
    exec: Exec,
) -> Result<AdaptedDataset> {
    if pairing.pairs.len() != contents.len() {
        return Err(Error::Shape(format!(
            "pairing has {} entries for {} content windows",
            pairing.pairs.len(),
            contents.len()
        )));
    }
    if labels.len() != contents.len() {
        return Err(Error::Invalid(format!(
            "missing expert action: {} labels for {} content windows",
            labels.len(),
            contents.len()
        )));
    }
    let mut aligned = Vec::with_capacity(contents.len());
    for (i, p) in pairing.pairs.iter().enumerate() {
        let s = styles
            .get(p.style_idx)
            .ok_or_else(|| Error::Invalid(format!("pair {i} points at style window {} of {}", p.style_idx, styles.len())))?;
        aligned.push(align_mean(&contents[i], s)?);
    }
    let c: Vec<&Matrix> = contents.iter().map(|w| &w.data).collect();
    let s: Vec<&Matrix> = aligned.iter().map(|w| &w.data).collect();
    let out = transfer_many(&c, &s, vae, cfg, exec)?;
    let mut ds = AdaptedDataset::default();
    for ((i, o), p) in out.into_iter().enumerate().zip(&pairing.pairs) {
        let style = &styles[p.style_idx];
        ds.records.push(AdaptedRecord {
            content_idx: i,
            style_idx: p.style_idx,
            content_id: contents[i].trajectory_id.clone(),
            content_start: contents[i].start_index,
            style_id: style.trajectory_id.clone(),
            style_start: style.start_index,
            similarity: p.similarity,
            label: labels[i].clone(),
            initial_style: o.initial.style,
            final_content: o.last.content,
            final_style: o.last.style,
            content_rmse: o.content_rmse,
        });
        ds.windows.push(o.generated);
    }
    Ok(ds)
}

const WINDOWS_FILE: &str = "windows.csv";
const LABELS_FILE: &str = "labels.csv";
const PROVENANCE_FILE: &str = "provenance.json";

pub fn save_adapted(dir: &Path, ds: &AdaptedDataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n_s = ds.windows.first().map_or(0, |w| w.cols);
    let n_a = ds.records.first().map_or(0, |r| r.label.len());

    let path = dir.join(WINDOWS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let mut head = vec!["record".to_string(), "row".to_string()];
    head.extend((0..n_s).map(|k| format!("s{k}")));
    w.write_record(&head).map_err(|e| csv_error(&path, e))?;
    for (k, m) in ds.windows.iter().enumerate() {
        for r in 0..m.rows {
            let mut rec = vec![k.to_string(), r.to_string()];
            rec.extend(m.row(r).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec).map_err(|e| csv_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(LABELS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let mut head = vec!["record".to_string()];
    head.extend((0..n_a).map(|k| format!("a{k}")));
    w.write_record(&head).map_err(|e| csv_error(&path, e))?;
    for (k, r) in ds.records.iter().enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend(r.label.iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    crate::io::write_json(&dir.join(PROVENANCE_FILE), &ds.records)
}

fn read_rows(path: &Path, skip: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = k as u64 + 2;
        let bad = |column: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            column,
            msg,
        };
        let id = rec[0].parse::<usize>().map_err(|e| bad(1, e.to_string()))?;
        let vals = (skip..rec.len())
            .map(|c| {
                let v = rec[c].parse::<f64>().map_err(|e| bad(c + 1, e.to_string()))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad(c + 1, format!("non-finite value '{}'", &rec[c])))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push((id, vals));
    }
    Ok(out)
}

pub fn load_adapted(dir: &Path) -> Result<AdaptedDataset> {
    let ppath = dir.join(PROVENANCE_FILE);
    crate::io::require(&ppath, "run the transfer stage first")?;
    let mut records: Vec<AdaptedRecord> = crate::io::read_json(&ppath)?;
    let n = records.len();

    let wpath = dir.join(WINDOWS_FILE);
    let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
    for (id, vals) in read_rows(&wpath, 2)? {
        rows.get_mut(id)
            .ok_or_else(|| Error::Format {
                path: wpath.clone(),
                msg: format!("record {id} beyond the {n} records in provenance"),
            })?
            .push(vals);
    }
    let windows = rows.iter().map(|r| Matrix::from_rows(r)).collect::<Result<Vec<_>>>()?;

    let lpath = dir.join(LABELS_FILE);
    let labels = read_rows(&lpath, 1)?;
    if labels.len() != n {
        return Err(Error::Format {
            path: lpath,
            msg: format!("{} labels for {n} records", labels.len()),
        });
    }
    for ((_, l), r) in labels.into_iter().zip(records.iter_mut()) {
        r.label = l;
    }
    Ok(AdaptedDataset { windows, records })
}
