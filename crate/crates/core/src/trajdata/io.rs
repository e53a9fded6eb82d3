use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DomainTag, NormStats, Trajectory};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormJson {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flagged: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub domain: DomainTag,
    pub n_s: usize,
    pub n_a: usize,
    pub dt: f64,
    pub files: Vec<String>,
    pub norm: NormJson,
}

impl DatasetManifest {
    pub fn norm_stats(&self) -> Option<NormStats> {
        if self.norm.mean.is_empty() {
            return None;
        }
        let flagged = if self.norm.flagged.len() == self.norm.mean.len() {
            self.norm.flagged.clone()
        } else {
            vec![false; self.norm.mean.len()]
        };
        Some(NormStats {
            mean: self.norm.mean.clone(),
            std: self.norm.std.clone(),
            flagged,
        })
    }
}

/// An in-memory dataset: trajectories plus the manifest fields that describe them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub domain: DomainTag,
    pub n_s: usize,
    pub n_a: usize,
    pub dt: f64,
    pub norm: Option<NormStats>,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(domain: DomainTag, n_s: usize, n_a: usize, dt: f64) -> Self {
        Dataset {
            domain,
            n_s,
            n_a,
            dt,
            norm: None,
            trajectories: Vec::new(),
        }
    }
}

fn header(n_s: usize, n_a: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((0..n_s).map(|i| format!("s{i}")))
        .chain((0..n_a).map(|i| format!("a{i}")))
        .collect()
}

fn file_name(id: &str) -> String {
    format!("{id}.csv")
}

/// Write one CSV per trajectory plus `manifest.json` into `dir`. Files are
/// listed in the manifest sorted by trajectory id.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut order: Vec<&Trajectory> = ds.trajectories.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut files = Vec::with_capacity(order.len());
    for t in order {
        if t.n_s() != ds.n_s || t.n_a() != ds.n_a {
            return Err(Error::Shape(format!(
                "trajectory '{}' is {}+{} channels, dataset is {}+{}",
                t.id,
                t.n_s(),
                t.n_a(),
                ds.n_s,
                ds.n_a
            )));
        }
        let name = file_name(&t.id);
        write_trajectory(&dir.join(&name), t)?;
        files.push(name);
    }
    let norm = match &ds.norm {
        Some(n) => NormJson {
            mean: n.mean.clone(),
            std: n.std.clone(),
            flagged: n.flagged.clone(),
        },
        None => NormJson {
            mean: Vec::new(),
            std: Vec::new(),
            flagged: Vec::new(),
        },
    };
    let manifest = DatasetManifest {
        domain: ds.domain,
        n_s: ds.n_s,
        n_a: ds.n_a,
        dt: ds.dt,
        files,
        norm,
    };
    crate::io::write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header(t.n_s(), t.n_a())).map_err(|e| csv_error(path, e))?;
    let mut rec = Vec::with_capacity(1 + t.n_s() + t.n_a());
    for r in 0..t.len() {
        rec.clear();
        rec.push(r.to_string());
        rec.extend(t.states.row(r).iter().map(|v| format!("{v:.16e}")));
        rec.extend(t.actions.row(r).iter().map(|v| format!("{v:.16e}")));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            msg: format!("{other:?}"),
        },
    }
}

/// Load a dataset written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST_FILE);
    if !mpath.exists() {
        return Err(Error::MissingArtifact {
            path: mpath,
            hint: "expected a dataset directory containing manifest.json".into(),
        });
    }
    let manifest: DatasetManifest = crate::io::read_json(&mpath)?;
    if !(manifest.dt > 0.0) {
        return Err(Error::Format {
            path: mpath,
            msg: format!("dt must be positive, got {}", manifest.dt),
        });
    }
    let mut trajectories = Vec::with_capacity(manifest.files.len());
    for f in &manifest.files {
        let path = dir.join(f);
        let (states, actions) = read_trajectory(&path, manifest.n_s, manifest.n_a)?;
        let id = Path::new(f)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| f.clone());
        trajectories.push(Trajectory {
            id,
            dt: manifest.dt,
            states,
            actions,
            domain: manifest.domain,
        });
    }
    Ok(Dataset {
        domain: manifest.domain,
        n_s: manifest.n_s,
        n_a: manifest.n_a,
        dt: manifest.dt,
        norm: manifest.norm_stats(),
        trajectories,
    })
}

fn read_trajectory(path: &Path, n_s: usize, n_a: usize) -> Result<(Matrix, Matrix)> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "listed in manifest.json but not present".into(),
        });
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let expected = header(n_s, n_a);
    let hdr = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if hdr.len() != expected.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("header has {} columns, expected {}", hdr.len(), expected.len()),
        });
    }
    if let Some(c) = hdr.iter().zip(&expected).position(|(a, b)| a.trim() != b) {
        return Err(parse_err(path, 1, c + 1, format!("expected column '{}', found '{}'", expected[c], &hdr[c])));
    }
    let mut s = Vec::new();
    let mut a = Vec::new();
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, 0, e.to_string())
        })?;
        let line = rec.position().map_or(rows as u64 + 2, |p| p.line());
        if rec.len() != expected.len() {
            return Err(parse_err(path, line, rec.len().min(expected.len()) + 1, format!("expected {} fields, found {}", expected.len(), rec.len())));
        }
        let idx: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, 1, format!("sample index '{}' is not an integer", &rec[0])))?;
        if idx != rows {
            return Err(parse_err(path, line, 1, format!("sample index {idx}, expected {rows}")));
        }
        for (c, field) in rec.iter().enumerate().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, c + 1, format!("'{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, c + 1, format!("non-finite value '{field}'")));
            }
            if c <= n_s {
                s.push(v);
            } else {
                a.push(v);
            }
        }
        rows += 1;
    }
    Ok((Matrix::from_vec(rows, n_s, s)?, Matrix::from_vec(rows, n_a, a)?))
}

fn parse_err(path: &Path, line: u64, column: usize, msg: String) -> Error {
    Error::Parse {
        path: PathBuf::from(path),
        line,
        column,
        msg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_traj(id: &str, rng: &mut rand_chacha::ChaCha8Rng) -> Trajectory {
        let t = rng.gen_range(1..30);
        let s = (0..t * 3).map(|_| rng.gen_range(-1e3..1e3) * rng.gen::<f64>().powi(7)).collect();
        let a = (0..t * 2).map(|_| rng.gen::<f64>() - 0.5).collect();
        Trajectory::new(id, 0.02, Matrix::from_vec(t, 3, s).unwrap(), Matrix::from_vec(t, 2, a).unwrap(), DomainTag::Target).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut ds = Dataset::new(DomainTag::Target, 3, 2, 0.02);
        ds.trajectories = vec![random_traj("c", &mut rng), random_traj("a", &mut rng), random_traj("b", &mut rng)];
        ds.norm = Some(NormStats::identity(3));
        let m = save_dataset(dir.path(), &ds).unwrap();
        assert_eq!(m.files, vec!["a.csv", "b.csv", "c.csv"]);
        let back = load_dataset(dir.path()).unwrap();
        let mut expect = ds.trajectories.clone();
        expect.sort_by(|a, b| a.id.cmp(&b.id));
        assert_eq!(back.trajectories, expect);
        assert_eq!(back.norm, ds.norm);
    }

    #[test]
    fn empty_dataset_has_valid_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(DomainTag::Source, 7, 5, 0.02);
        let m = save_dataset(dir.path(), &ds).unwrap();
        assert!(m.files.is_empty());
        let back = load_dataset(dir.path()).unwrap();
        assert!(back.trajectories.is_empty());
        assert_eq!(back.n_s, 7);
    }

    #[test]
    fn header_mismatch_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = Dataset::new(DomainTag::Source, 1, 1, 0.02);
        ds.trajectories.push(Trajectory::new("x", 0.02, Matrix::zeros(2, 1), Matrix::zeros(2, 1), DomainTag::Source).unwrap());
        save_dataset(dir.path(), &ds).unwrap();
        fs::write(dir.path().join("x.csv"), "t,s0\n0,1\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("x.csv"), "{err}");
    }

    #[test]
    fn nan_entry_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = Dataset::new(DomainTag::Source, 1, 1, 0.02);
        ds.trajectories.push(Trajectory::new("x", 0.02, Matrix::zeros(2, 1), Matrix::zeros(2, 1), DomainTag::Source).unwrap());
        save_dataset(dir.path(), &ds).unwrap();
        fs::write(dir.path().join("x.csv"), "t,s0,a0\n0,1,2\n1,NaN,2\n").unwrap();
        match load_dataset(dir.path()).unwrap_err() {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (3, 2)),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = Dataset::new(DomainTag::Source, 1, 1, 0.02);
        ds.trajectories.push(Trajectory::new("gone", 0.02, Matrix::zeros(1, 1), Matrix::zeros(1, 1), DomainTag::Source).unwrap());
        save_dataset(dir.path(), &ds).unwrap();
        fs::remove_file(dir.path().join("gone.csv")).unwrap();
        assert!(load_dataset(dir.path()).unwrap_err().to_string().contains("gone.csv"));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn any_finite_values_round_trip(
            states in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 3..60),
        ) {
            let t = states.len() / 3;
            let traj = Trajectory::new("x", 0.02, Matrix::from_vec(t, 3, states[..t * 3].to_vec()).unwrap(), Matrix::zeros(t, 1), DomainTag::Source).unwrap();
            let mut ds = Dataset::new(DomainTag::Source, 3, 1, 0.02);
            ds.trajectories = vec![traj];
            let dir = tempfile::tempdir().unwrap();
            save_dataset(dir.path(), &ds).unwrap();
            proptest::prop_assert_eq!(load_dataset(dir.path()).unwrap().trajectories, ds.trajectories);
        }
    }
}
