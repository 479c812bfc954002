//! CSV ingestion and export.

use std::fs::File;
use std::path::{Path, PathBuf};

use fairreg_core::data::Dataset;
use fairreg_core::linalg::Matrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error(transparent)]
    Core(#[from] fairreg_core::Error),
}

/// Raw string cells with a header row.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Which columns play which role.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ColumnSpec {
    pub features: Vec<String>,
    pub target: String,
    /// Categorical columns turned into `column=value` tags.
    pub groups: Vec<String>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, TableError> {
        let file = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => TableError::FileNotFound(path.to_path_buf()),
            _ => TableError::Io {
                path: path.to_path_buf(),
                source: e,
            },
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(file);
        let headers = reader.headers()?.iter().map(str::to_string).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()?;
        Ok(Self { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Result<usize, TableError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TableError::MissingColumn(name.to_string()))
    }

    /// Numeric matrix of the named columns. Row numbers in errors are
    /// 1-based data rows (the header is row 0).
    pub fn numeric(&self, names: &[String]) -> Result<Matrix, TableError> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>, _>>()?;
        let mut data = Vec::with_capacity(self.rows.len() * idx.len());
        for (r, row) in self.rows.iter().enumerate() {
            for (&c, name) in idx.iter().zip(names) {
                let cell = &row[c];
                let v: f64 = cell.parse().map_err(|_| TableError::Parse {
                    row: r + 1,
                    column: name.clone(),
                    value: cell.clone(),
                })?;
                if !v.is_finite() {
                    return Err(TableError::Parse {
                        row: r + 1,
                        column: name.clone(),
                        value: cell.clone(),
                    });
                }
                data.push(v);
            }
        }
        Ok(Matrix::from_row_major(self.rows.len(), names.len(), data)?)
    }

    /// `column=value` tags for the named columns, one list per row.
    pub fn tags(&self, columns: &[String]) -> Result<Vec<Vec<String>>, TableError> {
        let idx = columns
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self
            .rows
            .iter()
            .map(|row| {
                idx.iter()
                    .zip(columns)
                    .map(|(&c, n)| format!("{n}={}", row[c]))
                    .collect()
            })
            .collect())
    }

    /// Every column that is neither the target nor a group column.
    pub fn default_features(&self, target: &str, groups: &[String]) -> Vec<String> {
        self.headers
            .iter()
            .filter(|h| *h != target && !groups.contains(h))
            .cloned()
            .collect()
    }

    pub fn to_dataset(&self, spec: &ColumnSpec) -> Result<Dataset, TableError> {
        let features = self.numeric(&spec.features)?;
        let targets = self
            .numeric(std::slice::from_ref(&spec.target))?
            .as_slice()
            .to_vec();
        let tags = self.tags(&spec.groups)?;
        Ok(Dataset::new(
            spec.features.clone(),
            features,
            targets,
            tags,
        )?)
    }

    /// Features and tags only, for data without a target column.
    pub fn to_unlabelled(
        &self,
        features: &[String],
        groups: &[String],
    ) -> Result<Dataset, TableError> {
        let x = self.numeric(features)?;
        let tags = self.tags(groups)?;
        let zeros = vec![0.0; x.rows()];
        Ok(Dataset::new(features.to_vec(), x, zeros, tags)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), TableError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| TableError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(())
    }
}

/// Loads features, target and group tags. When `features` is `None`, every
/// other column is a feature.
pub fn load_csv(
    path: &Path,
    target: &str,
    groups: &[String],
    features: Option<&[String]>,
) -> Result<(Dataset, ColumnSpec), TableError> {
    let table = Table::read(path)?;
    table.column_index(target)?;
    let features = match features {
        Some(f) => f.to_vec(),
        None => table.default_features(target, groups),
    };
    let spec = ColumnSpec {
        features,
        target: target.to_string(),
        groups: groups.to_vec(),
    };
    let data = table.to_dataset(&spec)?;
    Ok((data, spec))
}

/// Writes features, then the target, then one column per tag key.
pub fn dataset_to_table(data: &Dataset, target: &str) -> Table {
    let mut tag_cols: Vec<String> = Vec::new();
    for i in 0..data.len() {
        for t in data.tags(i) {
            let key = t.split_once('=').map_or(t.as_str(), |(k, _)| k);
            if !tag_cols.iter().any(|c| c == key) {
                tag_cols.push(key.to_string());
            }
        }
    }
    let mut headers = data.feature_names().to_vec();
    headers.push(target.to_string());
    headers.extend(tag_cols.iter().cloned());
    let rows = (0..data.len())
        .map(|i| {
            let mut r: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
            r.push(data.targets()[i].to_string());
            for c in &tag_cols {
                let v = data
                    .tags(i)
                    .iter()
                    .find_map(|t| {
                        t.split_once('=')
                            .filter(|(k, _)| k == c)
                            .map(|(_, v)| v.to_string())
                    })
                    .unwrap_or_default();
                r.push(v);
            }
            r
        })
        .collect();
    Table { headers, rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_features_target_and_tags() {
        let f = write_tmp("x,z,y,group\n1,2,3,A\n4, 5,6,B\n");
        let (d, spec) = load_csv(f.path(), "y", &["group".into()], None).unwrap();
        assert_eq!(spec.features, vec!["x", "z"]);
        assert_eq!(d.row(1), &[4.0, 5.0]);
        assert_eq!(d.targets(), &[3.0, 6.0]);
        assert_eq!(d.tags(0), &["group=A".to_string()]);
    }

    #[test]
    fn reports_parse_position() {
        let f = write_tmp("x,y\n1,2\nabc,3\n");
        match load_csv(f.path(), "y", &[], None) {
            Err(TableError::Parse { row, column, .. }) => {
                assert_eq!((row, column.as_str()), (2, "x"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_column_and_file() {
        let f = write_tmp("x,y\n1,2\n");
        assert!(
            matches!(load_csv(f.path(), "t", &[], None), Err(TableError::MissingColumn(c)) if c == "t")
        );
        assert!(matches!(
            load_csv(Path::new("/nonexistent/file.csv"), "y", &[], None),
            Err(TableError::FileNotFound(_))
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let f = write_tmp("x,y,group\n0.25,1.5,A\n0.75,-2,B\n");
        let (d, _) = load_csv(f.path(), "y", &["group".into()], None).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        dataset_to_table(&d, "y").write(out.path()).unwrap();
        let (back, _) = load_csv(out.path(), "y", &["group".into()], None).unwrap();
        assert_eq!(back, d);
    }
}
