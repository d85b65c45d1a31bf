//! Training and evaluation data: synthetic densities with known ground truth
//! and plain numeric files.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CdmError, Result};
use crate::oracle::{BoxFamily, DiffusedFamily, GmmDensity, GmmFamily, GmmSpec, UniformBoxDensity};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Gmm(GmmSpec),
    UniformBox {
        gamma: f64,
        dim: usize,
    },
    /// Zero-mean Gaussian with a full covariance.
    Gaussian {
        covariance: Vec<Vec<f64>>,
    },
    /// CSV file of numeric rows, no header. Relative paths resolve against
    /// the directory of the config that names them.
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone)]
pub enum DataSource {
    Gmm(GmmDensity),
    UniformBox(UniformBoxDensity),
    /// Rows drawn uniformly with replacement.
    Samples(Array2<f64>),
}

impl DataSource {
    pub fn from_spec(spec: &DataSpec, base_dir: Option<&Path>) -> Result<Self> {
        match spec {
            DataSpec::Gmm(g) => Ok(Self::Gmm(GmmDensity::from_spec(g)?)),
            DataSpec::UniformBox { gamma, dim } => {
                Ok(Self::UniformBox(UniformBoxDensity::new(*gamma, *dim)?))
            }
            DataSpec::Gaussian { covariance } => {
                let d = covariance.len();
                if d == 0 || covariance.iter().any(|r| r.len() != d) {
                    return Err(CdmError::InvalidDensity(
                        "covariance must be square and nonempty".into(),
                    ));
                }
                let cov = Array2::from_shape_fn((d, d), |(i, j)| covariance[i][j]);
                Ok(Self::Gmm(GmmDensity::gaussian(cov)?))
            }
            DataSpec::File { path } => {
                let full = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                let rows = read_matrix_csv(&full)?;
                if rows.nrows() == 0 {
                    return Err(CdmError::InvalidConfig(format!(
                        "{} holds no rows",
                        full.display()
                    )));
                }
                Ok(Self::Samples(rows))
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gmm(g) => g.dim(),
            Self::UniformBox(b) => b.dim,
            Self::Samples(s) => s.ncols(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Array2<f64> {
        match self {
            Self::Gmm(g) => g.sample(rng, n),
            Self::UniformBox(b) => b.sample(rng, n),
            Self::Samples(s) => {
                let mut out = Array2::zeros((n, s.ncols()));
                for mut row in out.rows_mut() {
                    row.assign(&s.row(rng.random_range(0..s.nrows())));
                }
                out
            }
        }
    }

    /// Exact `log p(x)` where the density is known.
    pub fn exact_logpdf(&self, x: ArrayView1<f64>) -> Option<f64> {
        match self {
            Self::Gmm(g) => Some(g.logpdf(x)),
            Self::UniformBox(b) => Some(b.logpdf(x).value),
            Self::Samples(_) => None,
        }
    }

    /// Closed-form diffused densities, for synthetic sources.
    pub fn oracle_family(&self, schedule: &NoiseSchedule) -> Option<OracleFamily> {
        match self {
            Self::Gmm(g) => Some(OracleFamily::Gmm(GmmFamily::new(
                g.clone(),
                schedule.clone(),
            ))),
            Self::UniformBox(b) => Some(OracleFamily::UniformBox(BoxFamily::new(
                *b,
                schedule.clone(),
            ))),
            Self::Samples(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum OracleFamily {
    Gmm(GmmFamily),
    UniformBox(BoxFamily),
}

impl DiffusedFamily for OracleFamily {
    fn dim(&self) -> usize {
        match self {
            Self::Gmm(f) => f.dim(),
            Self::UniformBox(f) => f.dim(),
        }
    }

    fn schedule(&self) -> &NoiseSchedule {
        match self {
            Self::Gmm(f) => f.schedule(),
            Self::UniformBox(f) => f.schedule(),
        }
    }

    fn log_density(&self, t: usize, x: ArrayView1<f64>) -> f64 {
        match self {
            Self::Gmm(f) => f.log_density(t, x),
            Self::UniformBox(f) => f.log_density(t, x),
        }
    }

    fn log_density_and_score(&self, t: usize, x: ArrayView1<f64>) -> (f64, Array1<f64>) {
        match self {
            Self::Gmm(f) => f.log_density_and_score(t, x),
            Self::UniformBox(f) => f.log_density_and_score(t, x),
        }
    }
}

/// Reads headerless numeric CSV; `#` starts a comment line.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(CdmError::Parse {
                    path: path.to_path_buf(),
                    message: format!(
                        "record {} has {} fields, expected {c}",
                        line + 1,
                        record.len()
                    ),
                })
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| CdmError::Parse {
                path: path.to_path_buf(),
                message: format!("record {}: '{field}' is not a number", line + 1),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), values).map_err(|e| CdmError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_matrix_csv(path: &Path, m: ArrayView2<f64>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in m.rows() {
        writer
            .write_record(row.iter().map(|v| format!("{v:e}")))
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| CdmError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CdmError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CdmError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        CdmError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spec_parses_from_toml() {
        let text = r#"
            kind = "gmm"
            weights = [0.5, 0.5]
            means = [[-1.0, 0.0], [1.0, 0.0]]
            covariances = [[[0.1, 0.0], [0.0, 0.1]], [[0.2, 0.0], [0.0, 0.2]]]
        "#;
        let spec: DataSpec = toml::from_str(text).unwrap();
        let src = DataSource::from_spec(&spec, None).unwrap();
        assert_eq!(src.dim(), 2);
        let spec: DataSpec =
            toml::from_str("kind = \"uniform_box\"\ngamma = 2.0\ndim = 8").unwrap();
        assert_eq!(spec, DataSpec::UniformBox { gamma: 2.0, dim: 8 });
        let spec: DataSpec =
            toml::from_str("kind = \"gaussian\"\ncovariance = [[2.0, 0.5], [0.5, 1.0]]").unwrap();
        let src = DataSource::from_spec(&spec, None).unwrap();
        let lp = src.exact_logpdf(ndarray::array![0.0, 0.0].view()).unwrap();
        let det: f64 = 2.0 - 0.25;
        assert!((lp + (2.0 * std::f64::consts::PI).ln() + 0.5 * det.ln()).abs() < 1e-12);
        assert!(toml::from_str::<DataSpec>("kind = \"moons\"").is_err());
    }

    #[test]
    fn csv_round_trip_and_file_source() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let m = ndarray::array![[1.5, -2.0e-17], [0.1, 3.0]];
        write_matrix_csv(&path, m.view()).unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), m);
        let spec = DataSpec::File {
            path: "x.csv".into(),
        };
        let src = DataSource::from_spec(&spec, Some(dir.path())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = src.sample(&mut rng, 50);
        assert!(draws
            .rows()
            .into_iter()
            .all(|r| r == m.row(0) || r == m.row(1)));
        assert!(src.exact_logpdf(m.row(0)).is_none());
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ragged = dir.path().join("r.csv");
        std::fs::write(&ragged, "1,2\n3\n").unwrap();
        assert!(read_matrix_csv(&ragged).is_err());
        let text = dir.path().join("t.csv");
        std::fs::write(&text, "1,abc\n").unwrap();
        assert!(matches!(
            read_matrix_csv(&text),
            Err(CdmError::Parse { .. })
        ));
        let empty = dir.path().join("e.csv");
        std::fs::write(&empty, "# nothing\n").unwrap();
        let spec = DataSpec::File { path: empty };
        assert!(DataSource::from_spec(&spec, None).is_err());
        let missing = DataSpec::File {
            path: dir.path().join("none.csv"),
        };
        assert!(matches!(
            DataSource::from_spec(&missing, None),
            Err(CdmError::Io { .. })
        ));
    }
}
