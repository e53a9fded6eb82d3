//! Trajectories, windows, normalisation statistics and dataset persistence.

pub(crate) mod io;

pub use io::{load_dataset, save_dataset, Dataset, DatasetManifest, NormJson};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::{self, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Source,
    Target,
}

impl std::fmt::Display for DomainTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        })
    }
}

/// A recorded episode: one state row and one action row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub dt: f64,
    pub states: Matrix,
    pub actions: Matrix,
    pub domain: DomainTag,
}

impl Trajectory {
    /// Build a trajectory, enforcing equal row counts, `dt > 0` and finiteness.
    /// `T = 0` is permitted only for the degenerate zero-length episode.
    pub fn new(id: impl Into<String>, dt: f64, states: Matrix, actions: Matrix, domain: DomainTag) -> Result<Self> {
        let id = id.into();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Invalid(format!("trajectory '{id}': dt must be positive, got {dt}")));
        }
        if states.rows != actions.rows {
            return Err(Error::Shape(format!(
                "trajectory '{id}': {} state rows vs {} action rows",
                states.rows, actions.rows
            )));
        }
        if !states.is_finite() || !actions.is_finite() {
            return Err(Error::NonFinite(format!("trajectory '{id}'")));
        }
        Ok(Trajectory {
            id,
            dt,
            states,
            actions,
            domain,
        })
    }

    pub fn len(&self) -> usize {
        self.states.rows
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows == 0
    }

    pub fn n_s(&self) -> usize {
        self.states.cols
    }

    pub fn n_a(&self) -> usize {
        self.actions.cols
    }
}

/// A fixed-length slice of a trajectory's states.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub trajectory_id: String,
    pub start_index: usize,
    /// `N × N_S`, time-major.
    pub data: Matrix,
    /// Per-channel means removed by [`align_mean`]; zero when unaligned.
    pub channel_means: Vec<f64>,
}

impl Window {
    pub fn new(trajectory_id: impl Into<String>, start_index: usize, data: Matrix) -> Self {
        let cols = data.cols;
        Window {
            trajectory_id: trajectory_id.into(),
            start_index,
            data,
            channel_means: vec![0.0; cols],
        }
    }

    pub fn len(&self) -> usize {
        self.data.rows
    }

    pub fn is_empty(&self) -> bool {
        self.data.rows == 0
    }

    /// Index of the last sample covered by this window in its trajectory.
    pub fn end_index(&self) -> usize {
        self.start_index + self.data.rows - 1
    }
}

/// Cut `traj` into windows of `n` rows; window `i` covers rows
/// `[i·stride, i·stride + n)`.
pub fn make_windows(traj: &Trajectory, n: usize, stride: usize) -> Result<Vec<Window>> {
    if n == 0 || stride == 0 {
        return Err(Error::Invalid(format!("window size ({n}) and stride ({stride}) must be >= 1")));
    }
    let t = traj.len();
    if n > t {
        return Err(Error::EmptyWindow {
            id: traj.id.clone(),
            window: n,
            len: t,
        });
    }
    Ok((0..=(t - n) / stride)
        .map(|i| Window::new(traj.id.clone(), i * stride, traj.states.slice_rows(i * stride, n)))
        .collect())
}

/// Window every trajectory, skipping (with a warning) those shorter than `n`.
/// Output is ordered by trajectory id, then start index.
pub fn make_windows_bulk(trajs: &[Trajectory], n: usize, stride: usize, exec: Exec) -> Result<Vec<Window>> {
    let mut order: Vec<&Trajectory> = trajs.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let parts = par::map(exec, &order, |_, t| {
        if t.len() < n {
            log::warn!("skipping trajectory '{}': {} samples < window {n}", t.id, t.len());
            Ok(Vec::new())
        } else {
            make_windows(t, n, stride)
        }
    });
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// The `n`-row window ending at row `t` (inclusive), zero-padded before the
/// start of the trajectory.
pub fn history_window(states: &Matrix, t: usize, n: usize) -> Matrix {
    let mut w = Matrix::zeros(n, states.cols);
    let first = t as isize + 1 - n as isize;
    for r in 0..n {
        let src = first + r as isize;
        if src >= 0 && (src as usize) < states.rows {
            w.row_mut(r).copy_from_slice(states.row(src as usize));
        }
    }
    w
}

/// Per-channel normalisation statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose variance was zero; their std is recorded as 1.
    pub flagged: Vec<bool>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        NormStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
            flagged: vec![false; channels],
        }
    }

    /// Statistics over the row-concatenation of all matrices.
    pub fn compute<'a>(mats: impl IntoIterator<Item = &'a Matrix>) -> Result<Self> {
        let mats: Vec<&Matrix> = mats.into_iter().collect();
        let cols = mats
            .first()
            .map(|m| m.cols)
            .ok_or_else(|| Error::Invalid("cannot normalise an empty dataset".into()))?;
        let rows: usize = mats.iter().map(|m| m.rows).sum();
        if rows == 0 {
            return Err(Error::Invalid("cannot normalise a dataset with no samples".into()));
        }
        let mut mean = vec![0.0; cols];
        for m in &mats {
            if m.cols != cols {
                return Err(Error::Shape(format!("mixed channel counts {} and {cols}", m.cols)));
            }
            for r in 0..m.rows {
                mean.iter_mut().zip(m.row(r)).for_each(|(a, v)| *a += v);
            }
        }
        mean.iter_mut().for_each(|a| *a /= rows as f64);
        let mut var = vec![0.0; cols];
        for m in &mats {
            for r in 0..m.rows {
                for (c, v) in m.row(r).iter().enumerate() {
                    var[c] += (v - mean[c]) * (v - mean[c]);
                }
            }
        }
        let mut std = Vec::with_capacity(cols);
        let mut flagged = Vec::with_capacity(cols);
        for (c, v) in var.iter().enumerate() {
            let s = (v / rows as f64).sqrt();
            if s > 0.0 {
                std.push(s);
                flagged.push(false);
            } else {
                log::info!("channel {c} has zero variance; recording std = 1");
                std.push(1.0);
                flagged.push(true);
            }
        }
        Ok(NormStats { mean, std, flagged })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, m: &mut Matrix) {
        for r in 0..m.rows {
            for (c, v) in m.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
    }

    pub fn invert(&self, m: &mut Matrix) {
        for r in 0..m.rows {
            for (c, v) in m.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.std[c] + self.mean[c];
            }
        }
    }

    pub fn applied(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        self.apply(&mut out);
        out
    }

    pub fn inverted(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        self.invert(&mut out);
        out
    }
}

/// Normalise the states of every trajectory in place with statistics pooled
/// over the whole set, returning those statistics.
pub fn normalize(dataset: &mut [Trajectory]) -> Result<NormStats> {
    let stats = NormStats::compute(dataset.iter().map(|t| &t.states))?;
    for t in dataset.iter_mut() {
        stats.apply(&mut t.states);
    }
    Ok(stats)
}

pub fn denormalize(dataset: &mut [Trajectory], stats: &NormStats) {
    for t in dataset.iter_mut() {
        stats.invert(&mut t.states);
    }
}

/// Shift `style` per channel so its channel means equal those of `content`.
/// The returned window records the style window's original means.
pub fn align_mean(content: &Window, style: &Window) -> Result<Window> {
    if !content.data.same_shape(&style.data) {
        return Err(Error::Shape(format!(
            "content window is {}×{}, style window is {}×{}",
            content.data.rows, content.data.cols, style.data.rows, style.data.cols
        )));
    }
    let cm = content.data.column_means();
    let sm = style.data.column_means();
    let mut data = style.data.clone();
    for r in 0..data.rows {
        for (c, v) in data.row_mut(r).iter_mut().enumerate() {
            *v = *v - sm[c] + cm[c];
        }
    }
    Ok(Window {
        trajectory_id: style.trajectory_id.clone(),
        start_index: style.start_index,
        data,
        channel_means: sm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(id: &str, t: usize, cols: usize) -> Trajectory {
        let states = Matrix::from_vec(t, cols, (0..t * cols).map(|i| i as f64).collect()).unwrap();
        let actions = Matrix::zeros(t, 1);
        Trajectory::new(id, 0.02, states, actions, DomainTag::Source).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&ramp("a", 120, 2), 100, 1).unwrap().len(), 21);
        let full = make_windows(&ramp("a", 100, 2), 100, 1).unwrap();
        assert_eq!(full.len(), 1);
        assert_eq!(full[0].data, ramp("a", 100, 2).states);
        let starts: Vec<usize> = make_windows(&ramp("a", 10, 1), 4, 3)
            .unwrap()
            .iter()
            .map(|w| w.start_index)
            .collect();
        assert_eq!(starts, vec![0, 3, 6]);
    }

    #[test]
    fn oversized_window_names_the_trajectory() {
        let err = make_windows(&ramp("short-one", 5, 1), 6, 1).unwrap_err();
        assert!(err.to_string().contains("short-one"));
    }

    #[test]
    fn bulk_windowing_skips_short_and_sorts() {
        let trajs = vec![ramp("b", 12, 1), ramp("a", 3, 1), ramp("c", 10, 1), ramp("a2", 10, 1)];
        let w = make_windows_bulk(&trajs, 10, 1, Exec::Parallel).unwrap();
        let keys: Vec<(&str, usize)> = w.iter().map(|w| (w.trajectory_id.as_str(), w.start_index)).collect();
        assert_eq!(keys, vec![("a2", 0), ("b", 0), ("b", 1), ("b", 2), ("c", 0)]);
    }

    #[test]
    fn history_window_pads_with_zeros() {
        let s = ramp("a", 5, 1).states;
        let w = history_window(&s, 1, 4);
        assert_eq!(w.data, vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(history_window(&s, 4, 2).data, vec![3.0, 4.0]);
    }

    #[test]
    fn constant_channel_is_flagged() {
        let mut t = vec![Trajectory::new(
            "k",
            0.02,
            Matrix::from_vec(3, 2, vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0]).unwrap(),
            Matrix::zeros(3, 1),
            DomainTag::Source,
        )
        .unwrap()];
        let stats = normalize(&mut t).unwrap();
        assert_eq!(stats.flagged, vec![true, false]);
        assert_eq!(stats.std[0], 1.0);
        assert!((0..3).all(|r| t[0].states.get(r, 0) == 0.0));
    }

    #[test]
    fn symmetric_pair_is_already_normal() {
        let mut t = vec![Trajectory::new(
            "p",
            0.02,
            Matrix::from_vec(2, 1, vec![-1.0, 1.0]).unwrap(),
            Matrix::zeros(2, 1),
            DomainTag::Source,
        )
        .unwrap()];
        let stats = normalize(&mut t).unwrap();
        assert_eq!(stats.mean, vec![0.0]);
        assert_eq!(stats.std, vec![1.0]);
        assert_eq!(t[0].states.data, vec![-1.0, 1.0]);
    }

    #[test]
    fn empty_dataset_cannot_be_normalised() {
        assert!(normalize(&mut []).is_err());
    }

    #[test]
    fn align_mean_examples() {
        let c = Window::new("c", 0, Matrix::zeros(4, 1));
        let s = Window::new("s", 0, Matrix::from_vec(4, 1, vec![3.0; 4]).unwrap());
        let a = align_mean(&c, &s).unwrap();
        assert_eq!(a.data.data, vec![0.0; 4]);
        assert_eq!(a.channel_means, vec![3.0]);
        let same = align_mean(&s, &s).unwrap();
        assert_eq!(same.data, s.data);
        let bad = Window::new("b", 0, Matrix::zeros(3, 1));
        assert!(align_mean(&c, &bad).is_err());
    }

    use proptest::prelude::*;

    fn traj(values: &[f64], cols: usize) -> Trajectory {
        let t = values.len() / cols;
        let states = Matrix::from_vec(t, cols, values[..t * cols].to_vec()).unwrap();
        Trajectory::new("p", 0.02, states, Matrix::zeros(t, 1), DomainTag::Source).unwrap()
    }

    proptest! {
        #[test]
        fn window_count_and_content_laws(values in prop::collection::vec(-1e3f64..1e3, 2..120), n_frac in 0.0f64..1.0) {
            let t = traj(&values, 2);
            let n = 1 + ((t.len() - 1) as f64 * n_frac) as usize;
            let w = make_windows(&t, n, 1).unwrap();
            prop_assert_eq!(w.len(), t.len() - n + 1);
            for (i, win) in w.iter().enumerate() {
                prop_assert_eq!(win.start_index, i);
                for j in 0..n {
                    prop_assert_eq!(win.data.row(j), t.states.row(i + j));
                }
            }
        }

        #[test]
        fn align_mean_is_idempotent(
            c in prop::collection::vec(-50f64..50.0, 12),
            s in prop::collection::vec(-50f64..50.0, 12),
        ) {
            let cw = Window::new("c", 0, Matrix::from_vec(4, 3, c).unwrap());
            let sw = Window::new("s", 0, Matrix::from_vec(4, 3, s).unwrap());
            let once = align_mean(&cw, &sw).unwrap();
            let twice = align_mean(&cw, &once).unwrap();
            for (a, b) in once.data.data.iter().zip(&twice.data.data) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn normalisation_inverts(values in prop::collection::vec(-1e3f64..1e3, 6..60)) {
            let t = traj(&values, 3);
            let stats = NormStats::compute([&t.states]).unwrap();
            let back = stats.inverted(&stats.applied(&t.states));
            for (a, b) in back.data.iter().zip(&t.states.data) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }
}
