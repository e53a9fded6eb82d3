//! Latent-space pairing of content windows with style windows.
//!
//! Both sets are embedded by their posterior means, compared by cosine
//! similarity, and every content window is matched to its most similar style
//! window (lowest index on ties).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::{self, Exec};
use crate::trajdata::io::csv_error;
use crate::trajdata::{DomainTag, Window};
use crate::vae::Vae;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRef {
    pub trajectory_id: String,
    pub start_index: usize,
}

impl From<&Window> for WindowRef {
    fn from(w: &Window) -> Self {
        WindowRef {
            trajectory_id: w.trajectory_id.clone(),
            start_index: w.start_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub domain: DomainTag,
    pub refs: Vec<WindowRef>,
    /// `K × L` posterior means.
    pub embeddings: Matrix,
    pub norms: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(domain: DomainTag, refs: Vec<WindowRef>, embeddings: Matrix) -> Result<Self> {
        if refs.len() != embeddings.rows {
            return Err(Error::Shape(format!("{} window refs for {} embeddings", refs.len(), embeddings.rows)));
        }
        if !embeddings.is_finite() {
            return Err(Error::NonFinite(format!("{domain} embeddings")));
        }
        let norms = (0..embeddings.rows)
            .map(|r| embeddings.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(EmbeddingSet {
            domain,
            refs,
            embeddings,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    fn check_norms(&self) -> Result<()> {
        match self.norms.iter().position(|&n| n == 0.0) {
            Some(i) => Err(Error::Invalid(format!(
                "{} window {} ('{}' @ {}) has a zero-norm embedding",
                self.domain, i, self.refs[i].trajectory_id, self.refs[i].start_index
            ))),
            None => Ok(()),
        }
    }
}

/// Embed windows by their posterior means.
pub fn embed_dataset(windows: &[Window], vae: &Vae, domain: DomainTag, exec: Exec) -> Result<EmbeddingSet> {
    let l = vae.arch.latent_dim;
    let refs: Vec<WindowRef> = windows.iter().map(WindowRef::from).collect();
    if windows.is_empty() {
        return EmbeddingSet::new(domain, refs, Matrix::zeros(0, l));
    }
    let data: Vec<Matrix> = windows.iter().map(|w| w.data.clone()).collect();
    let mus = vae.encode_means(&data, 64, exec)?;
    let flat: Vec<f64> = mus.into_iter().flatten().collect();
    EmbeddingSet::new(domain, refs, Matrix::from_vec(windows.len(), l, flat)?)
}

fn cosine(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// `S_ij = z_i·z_j / (‖z_i‖‖z_j‖)`, rows indexed by content.
pub fn similarity_matrix(content: &EmbeddingSet, style: &EmbeddingSet, exec: Exec) -> Result<Matrix> {
    if content.embeddings.cols != style.embeddings.cols {
        return Err(Error::Shape(format!(
            "content latent dim {} vs style {}",
            content.embeddings.cols, style.embeddings.cols
        )));
    }
    content.check_norms()?;
    style.check_norms()?;
    let rows = par::map_range(exec, content.len(), |i| {
        let zi = content.embeddings.row(i);
        (0..style.len())
            .map(|j| cosine(zi, content.norms[i], style.embeddings.row(j), style.norms[j]))
            .collect::<Vec<f64>>()
    });
    Matrix::from_vec(content.len(), style.len(), rows.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub content_idx: usize,
    pub style_idx: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingResult {
    pub pairs: Vec<Pair>,
    /// Times each style window was chosen.
    pub match_counts: Vec<usize>,
    /// Best similarity any content window has to each style window.
    pub style_best: Vec<f64>,
    /// Fraction of style windows matched at least once.
    pub coverage: f64,
    /// Gini coefficient of `match_counts`.
    pub gini: f64,
}

impl PairingResult {
    pub fn matches(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.style_idx).collect()
    }

    /// `hist[k]` = number of style windows matched exactly `k` times.
    pub fn histogram(&self) -> Vec<usize> {
        let max = self.match_counts.iter().copied().max().unwrap_or(0);
        let mut h = vec![0; max + 1];
        for &c in &self.match_counts {
            h[c] += 1;
        }
        h
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }
}

/// Gini coefficient of nonnegative counts; 0 for an empty or all-zero set.
pub fn gini(counts: &[usize]) -> f64 {
    let n = counts.len();
    let total: usize = counts.iter().sum();
    if n == 0 || total == 0 {
        return 0.0;
    }
    let mut v = counts.to_vec();
    v.sort_unstable();
    let weighted: f64 = v.iter().enumerate().map(|(i, &c)| (2 * (i + 1)) as f64 * c as f64).sum();
    weighted / (n as f64 * total as f64) - (n as f64 + 1.0) / n as f64
}

/// Match every content row of `sim` to its argmax style column.
pub fn match_from_similarity(sim: &Matrix) -> Result<PairingResult> {
    if sim.rows == 0 || sim.cols == 0 {
        return Err(Error::Invalid("pairing needs nonempty content and style sets".into()));
    }
    let mut pairs = Vec::with_capacity(sim.rows);
    let mut counts = vec![0usize; sim.cols];
    let mut best = vec![f64::NEG_INFINITY; sim.cols];
    for i in 0..sim.rows {
        let row = sim.row(i);
        let mut j_star = 0;
        for (j, &s) in row.iter().enumerate() {
            if s > row[j_star] {
                j_star = j;
            }
            if s > best[j] {
                best[j] = s;
            }
        }
        counts[j_star] += 1;
        pairs.push(Pair {
            content_idx: i,
            style_idx: j_star,
            similarity: row[j_star],
        });
    }
    let covered = counts.iter().filter(|&&c| c > 0).count();
    Ok(PairingResult {
        coverage: covered as f64 / sim.cols as f64,
        gini: gini(&counts),
        pairs,
        match_counts: counts,
        style_best: best,
    })
}

pub fn match_sets(content: &EmbeddingSet, style: &EmbeddingSet, exec: Exec) -> Result<PairingResult> {
    if content.is_empty() || style.is_empty() {
        return Err(Error::Invalid("pairing needs nonempty content and style sets".into()));
    }
    match_from_similarity(&similarity_matrix(content, style, exec)?)
}

/// One row of the embeddings export.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportRow {
    pub domain: DomainTag,
    pub index: usize,
    pub trajectory_id: String,
    pub start_index: usize,
    /// Matched style index for content rows.
    pub matched: Option<usize>,
    /// Times matched, for style rows; zero for content rows.
    pub match_count: usize,
    pub best_similarity: f64,
    pub embedding: Vec<f64>,
}

fn export_header(latent: usize) -> Vec<String> {
    let mut h: Vec<String> = ["domain", "index", "trajectory_id", "start_index", "matched", "match_count", "best_similarity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..latent).map(|k| format!("z{k}")));
    h
}

/// Write content rows then style rows with match statistics, for external
/// projection tools.
pub fn export_embeddings(path: &Path, content: &EmbeddingSet, style: &EmbeddingSet, pairing: Option<&PairingResult>) -> Result<()> {
    if let Some(p) = pairing {
        if p.pairs.len() != content.len() || p.match_counts.len() != style.len() {
            return Err(Error::Shape(format!(
                "pairing covers {}×{} windows, sets are {}×{}",
                p.pairs.len(),
                p.match_counts.len(),
                content.len(),
                style.len()
            )));
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(export_header(content.embeddings.cols.max(style.embeddings.cols)))
        .map_err(|e| csv_error(path, e))?;
    let Some(p) = pairing else {
        return w.flush().map_err(|e| Error::io(path, e));
    };
    for (set, is_content) in [(content, true), (style, false)] {
        for i in 0..set.len() {
            let (matched, count, best) = if is_content {
                (p.pairs[i].style_idx.to_string(), 0, p.pairs[i].similarity)
            } else {
                (String::new(), p.match_counts[i], p.style_best[i])
            };
            let mut rec = vec![
                set.domain.to_string(),
                i.to_string(),
                set.refs[i].trajectory_id.clone(),
                set.refs[i].start_index.to_string(),
                matched,
                count.to_string(),
                format!("{best:.16e}"),
            ];
            rec.extend(set.embeddings.row(i).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<ExportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let bad = |line: u64, column: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        msg,
    };
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = k as u64 + 2;
        if rec.len() < 7 {
            return Err(bad(line, rec.len() + 1, "too few columns".into()));
        }
        let domain = match &rec[0] {
            "source" => DomainTag::Source,
            "target" => DomainTag::Target,
            d => return Err(bad(line, 1, format!("unknown domain '{d}'"))),
        };
        let int = |c: usize| rec[c].parse::<usize>().map_err(|e| bad(line, c + 1, e.to_string()));
        let float = |c: usize| rec[c].parse::<f64>().map_err(|e| bad(line, c + 1, e.to_string()));
        out.push(ExportRow {
            domain,
            index: int(1)?,
            trajectory_id: rec[2].to_string(),
            start_index: int(3)?,
            matched: if rec[4].is_empty() { None } else { Some(int(4)?) },
            match_count: int(5)?,
            best_similarity: float(6)?,
            embedding: (7..rec.len()).map(float).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
