use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::compression::Samples;
use crate::ot::PointCloud;
use crate::{Error, Result};

/// Name of the class column in labeled CSV files.
pub const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Gaussian clusters around well separated centers.
    Blobs,
    /// Concentric annuli of radius 1, 2, ... in the first two coordinates.
    Rings,
    /// Quadrant parity on `[-1, 1]²`.
    Xor,
    CsvFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_samples: usize,
    pub n_classes: usize,
    pub input_dim: usize,
    pub noise: f64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub seed: u64,
    pub path: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Rings,
            n_samples: 2000,
            n_classes: 2,
            input_dim: 2,
            noise: 0.05,
            split: [0.6, 0.2, 0.2],
            seed: 0,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Samples,
    pub val: Samples,
    pub test: Samples,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("dataset: {m}")));
        if self.split.iter().any(|&f| !(f > 0.0)) {
            return bad(format!(
                "split fractions must be positive, got {:?}",
                self.split
            ));
        }
        if (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!(
                "split fractions must sum to 1, got {:?}",
                self.split
            ));
        }
        if self.kind == DatasetKind::CsvFile {
            if self.path.is_none() {
                return bad("csv_file needs a path".into());
            }
            return Ok(());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if self.n_samples < 3 || self.n_classes < 2 || self.input_dim == 0 {
            return bad("need n_samples >= 3, n_classes >= 2 and input_dim >= 1".into());
        }
        match self.kind {
            DatasetKind::Rings | DatasetKind::Xor if self.input_dim < 2 => {
                bad(format!("{:?} needs input_dim >= 2", self.kind))
            }
            DatasetKind::Xor if self.n_classes != 2 => bad("xor has exactly two classes".into()),
            _ => Ok(()),
        }
    }
}

fn blob_center(c: usize, n_classes: usize, dim: usize) -> Vec<f64> {
    let mut centre = vec![0.0; dim];
    if dim == 1 {
        centre[0] = 4.0 * c as f64;
    } else {
        let angle = TAU * c as f64 / n_classes as f64;
        centre[0] = 4.0 * angle.cos();
        centre[1] = 4.0 * angle.sin();
    }
    centre
}

/// Deterministic samples for `spec`, classes balanced and rows shuffled.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Samples> {
    spec.validate()?;
    if spec.kind == DatasetKind::CsvFile {
        return read_labeled_csv(spec.path.as_deref().expect("validated"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d) = (spec.n_samples, spec.input_dim);
    let mut x = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = vec![0.0; d];
        let label = match spec.kind {
            DatasetKind::Blobs => {
                let c = i % spec.n_classes;
                row = blob_center(c, spec.n_classes, d);
                c
            }
            DatasetKind::Rings => {
                let c = i % spec.n_classes;
                let angle = rng.random_range(0.0..TAU);
                let radius = (c + 1) as f64;
                row[0] = radius * angle.cos();
                row[1] = radius * angle.sin();
                c
            }
            DatasetKind::Xor => {
                row[0] = rng.random_range(-1.0..1.0);
                row[1] = rng.random_range(-1.0..1.0);
                usize::from((row[0] > 0.0) != (row[1] > 0.0))
            }
            DatasetKind::CsvFile => unreachable!(),
        };
        for (j, v) in row.into_iter().enumerate() {
            let jitter: f64 = rng.sample(StandardNormal);
            x[[i, j]] = v + spec.noise * jitter;
        }
        labels.push(label);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    Samples::new(x, labels).map(|s| s.select(&order))
}

/// Splits rows in order by the train/validation/test fractions.
pub fn split_dataset(data: &Samples, fractions: [f64; 3]) -> Result<Splits> {
    let n = data.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = (fractions[1] * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Config(format!(
            "split {fractions:?} leaves an empty part of {n} rows"
        )));
    }
    let rows: Vec<usize> = (0..n).collect();
    Ok(Splits {
        train: data.select(&rows[..n_train]),
        val: data.select(&rows[n_train..n_train + n_val]),
        test: data.select(&rows[n_train + n_val..]),
    })
}

pub fn generate_splits(spec: &DatasetSpec) -> Result<Splits> {
    split_dataset(&generate_dataset(spec)?, spec.split)
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn parse_err(
    path: &Path,
    row: usize,
    column: impl Into<String>,
    message: impl Into<String>,
) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        column: column.into(),
        message: message.into(),
    }
}

/// Numeric CSV with a mandatory header. Rows are numbered as file lines.
fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(path, 0, "", format!("{other:?}")),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(path, 1, "", e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(parse_err(path, 1, "", "missing header row"));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| parse_err(path, line, "", e.to_string()))?;
        if record.len() != headers.len() {
            return Err(parse_err(
                path,
                line,
                "",
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let mut values = Vec::with_capacity(headers.len());
        for (field, name) in record.iter().zip(&headers) {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(
                    path,
                    line,
                    name.as_str(),
                    format!("'{field}' is not a number"),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    line,
                    name.as_str(),
                    format!("'{field}' is not finite"),
                ));
            }
            values.push(v);
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 2, "", "no data rows"));
    }
    Ok(Table { headers, rows })
}

/// Labeled samples from a CSV whose `label` column holds class indices.
pub fn read_labeled_csv(path: &Path) -> Result<Samples> {
    let table = read_table(path)?;
    let label_at = table
        .headers
        .iter()
        .position(|h| h == LABEL_COLUMN)
        .ok_or_else(|| parse_err(path, 1, LABEL_COLUMN, "missing label column"))?;
    if table.headers.len() < 2 {
        return Err(parse_err(path, 1, "", "no feature columns"));
    }
    let d = table.headers.len() - 1;
    let mut x = Array2::zeros((table.rows.len(), d));
    let mut labels = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let l = row[label_at];
        if l < 0.0 || l.fract() != 0.0 {
            return Err(parse_err(
                path,
                i + 2,
                LABEL_COLUMN,
                format!("{l} is not a class index"),
            ));
        }
        labels.push(l as usize);
        for (j, v) in row.iter().enumerate().filter(|(j, _)| *j != label_at) {
            x[[i, if j < label_at { j } else { j - 1 }]] = *v;
        }
    }
    Samples::new(x, labels)
}

/// Point cloud from a CSV where every column is a coordinate.
pub fn read_cloud_csv(path: &Path) -> Result<PointCloud> {
    let table = read_table(path)?;
    PointCloud::from_rows(&table.rows)
}

/// Writes rows under `headers`.
pub fn write_csv<S: AsRef<str>>(path: &Path, headers: &[S], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_write_err(path, e))?;
    w.write_record(headers.iter().map(AsRef::as_ref))
        .map_err(|e| csv_write_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_write_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_write_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other:?}", path.display())),
    }
}

pub fn write_labeled_csv(path: &Path, data: &Samples) -> Result<()> {
    let mut headers: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    headers.push(LABEL_COLUMN.to_string());
    let rows: Vec<Vec<String>> = data
        .features
        .rows()
        .into_iter()
        .zip(&data.labels)
        .map(|(r, l)| {
            r.iter()
                .map(|v| v.to_string())
                .chain([l.to_string()])
                .collect()
        })
        .collect();
    write_csv(path, &headers, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn spec(kind: DatasetKind) -> DatasetSpec {
        DatasetSpec {
            kind,
            n_samples: 300,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn noiseless_blobs_sit_on_centers() {
        let s = DatasetSpec {
            noise: 0.0,
            n_classes: 3,
            ..spec(DatasetKind::Blobs)
        };
        let data = generate_dataset(&s).unwrap();
        for (row, &l) in data.features.rows().into_iter().zip(&data.labels) {
            assert_eq!(row.to_vec(), blob_center(l, 3, 2));
        }
    }

    #[test]
    fn generation_is_deterministic_and_balanced() {
        for kind in [DatasetKind::Blobs, DatasetKind::Rings, DatasetKind::Xor] {
            let a = generate_dataset(&spec(kind)).unwrap();
            let b = generate_dataset(&spec(kind)).unwrap();
            assert_eq!(a, b);
            let other = generate_dataset(&DatasetSpec {
                seed: 1,
                ..spec(kind)
            })
            .unwrap();
            assert_ne!(a, other);
        }
        let rings = generate_dataset(&spec(DatasetKind::Rings)).unwrap();
        assert_eq!(rings.labels.iter().filter(|&&l| l == 0).count(), 150);
    }

    #[test]
    fn rings_radii_match_classes() {
        let data = generate_dataset(&DatasetSpec {
            noise: 0.0,
            ..spec(DatasetKind::Rings)
        })
        .unwrap();
        for (row, &l) in data.features.rows().into_iter().zip(&data.labels) {
            assert!((row.dot(&row).sqrt() - (l + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn split_sizes() {
        let data = generate_dataset(&spec(DatasetKind::Xor)).unwrap();
        let s = split_dataset(&data, [0.6, 0.2, 0.2]).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (180, 60, 60));
    }

    #[test]
    fn invalid_specs() {
        assert!(DatasetSpec {
            split: [0.5, 0.5, 0.1],
            ..DatasetSpec::default()
        }
        .validate()
        .is_err());
        assert!(DatasetSpec {
            split: [1.0, 0.0, 0.0],
            ..DatasetSpec::default()
        }
        .validate()
        .is_err());
        assert!(DatasetSpec {
            kind: DatasetKind::Xor,
            n_classes: 3,
            ..DatasetSpec::default()
        }
        .validate()
        .is_err());
        assert!(DatasetSpec {
            kind: DatasetKind::CsvFile,
            ..DatasetSpec::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = generate_dataset(&spec(DatasetKind::Blobs)).unwrap();
        write_labeled_csv(&path, &data).unwrap();
        assert_eq!(read_labeled_csv(&path).unwrap(), data);

        let bad = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&bad).unwrap();
        writeln!(f, "a,b,label\n1,2,0\n3,x,1").unwrap();
        match read_labeled_csv(&bad) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (3, "b")),
            other => panic!("{other:?}"),
        }
        let nolabel = dir.path().join("nolabel.csv");
        std::fs::write(&nolabel, "a,b\n1,2\n").unwrap();
        assert!(matches!(
            read_labeled_csv(&nolabel),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            read_labeled_csv(&dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }
}
