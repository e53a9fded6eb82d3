//! Per-episode performance metrics and normalised DTW.

use serde::{Deserialize, Serialize};

use crate::cutsim::{obs, Episode};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DtwNorm {
    /// Divide by the number of cells on the optimal warping path.
    #[default]
    PathLength,
    /// Divide by the longer series length.
    MaxLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DtwReduce {
    #[default]
    Mean,
    Min,
}

fn step_cost(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Classic DTW with Euclidean step cost. Among minimum-cost alignments the
/// shortest path is used for normalisation.
pub fn dtw_normalized(a: &Matrix, b: &Matrix, norm: DtwNorm) -> Result<f64> {
    if a.rows == 0 || b.rows == 0 {
        return Err(Error::Invalid("DTW of an empty series".into()));
    }
    if a.cols != b.cols {
        return Err(Error::Shape(format!("DTW series have {} and {} channels", a.cols, b.cols)));
    }
    let (n, m) = (a.rows, b.rows);
    // (cost, path length) per cell of the current and previous row.
    let mut prev = vec![(f64::INFINITY, 0usize); m];
    let mut cur = vec![(f64::INFINITY, 0usize); m];
    for i in 0..n {
        for j in 0..m {
            let d = step_cost(a.row(i), b.row(j));
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut cands = [(f64::INFINITY, usize::MAX); 3];
                if i > 0 {
                    cands[0] = prev[j];
                }
                if j > 0 {
                    cands[1] = cur[j - 1];
                }
                if i > 0 && j > 0 {
                    cands[2] = prev[j - 1];
                }
                cands.into_iter().min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1))).expect("three candidates")
            };
            cur[j] = (best.0 + d, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, len) = prev[m - 1];
    let denom = match norm {
        DtwNorm::PathLength => len,
        DtwNorm::MaxLength => n.max(m),
    };
    Ok(cost / denom as f64)
}

/// Map raw actions to `[0, 1]` per channel using `bounds`.
pub fn to_action_units(actions: &Matrix, bounds: &[(f64, f64)]) -> Result<Matrix> {
    if actions.cols != bounds.len() {
        return Err(Error::Shape(format!("{} action channels, {} bounds", actions.cols, bounds.len())));
    }
    let mut out = actions.clone();
    for r in 0..out.rows {
        for (v, (lo, hi)) in out.row_mut(r).iter_mut().zip(bounds) {
            *v = (*v - lo) / (hi - lo);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// s
    pub completion_time: f64,
    /// mm
    pub avg_path_deviation: f64,
    /// N
    pub avg_force: f64,
    /// mm³
    pub mrv: f64,
    pub dtw_to_expert: f64,
    pub contact_samples: usize,
    /// No sample was in contact; deviation and force are reported as 0.
    pub no_contact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub dtw_norm: DtwNorm,
    pub dtw_reduce: DtwReduce,
}

/// Metrics of one episode. `references` are expert action series already in
/// action units; `bounds` converts this episode's actions to the same units.
pub fn episode_metrics(ep: &Episode, references: &[Matrix], bounds: &[(f64, f64)], cfg: &MetricsConfig) -> Result<EpisodeMetrics> {
    let t = &ep.trajectory;
    if t.is_empty() {
        return Err(Error::Invalid(format!("episode '{}' has an empty trajectory", t.id)));
    }
    if ep.meta.engaged_doc.len() != t.len() {
        return Err(Error::Shape(format!(
            "episode '{}': {} engagement samples for {} rows",
            t.id,
            ep.meta.engaged_doc.len(),
            t.len()
        )));
    }
    let s = &t.states;
    let (mut n, mut dev, mut force, mut mrv) = (0usize, 0.0, 0.0, 0.0);
    for r in 0..t.len() {
        let doc = ep.meta.engaged_doc[r];
        let v_mm_s = s.get(r, obs::FEED) * 1e3 / 60.0;
        mrv += doc * ep.meta.width * v_mm_s * t.dt;
        if doc > 0.0 {
            n += 1;
            dev += s.get(r, obs::DEVIATION).abs();
            force += (s.get(r, obs::FX).powi(2) + s.get(r, obs::FY).powi(2) + s.get(r, obs::FZ).powi(2)).sqrt();
        }
    }
    let dtw_to_expert = if references.is_empty() {
        0.0
    } else {
        let units = to_action_units(&t.actions, bounds)?;
        let d = references
            .iter()
            .map(|r| dtw_normalized(&units, r, cfg.dtw_norm))
            .collect::<Result<Vec<f64>>>()?;
        match cfg.dtw_reduce {
            DtwReduce::Mean => d.iter().sum::<f64>() / d.len() as f64,
            DtwReduce::Min => d.iter().copied().fold(f64::INFINITY, f64::min),
        }
    };
    let k = n.max(1) as f64;
    Ok(EpisodeMetrics {
        completion_time: ep.meta.completion_time,
        avg_path_deviation: if n > 0 { dev / k } else { 0.0 },
        avg_force: if n > 0 { force / k } else { 0.0 },
        mrv,
        dtw_to_expert,
        contact_samples: n,
        no_contact: n == 0,
    })
}
