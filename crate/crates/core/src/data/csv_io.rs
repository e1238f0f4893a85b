use std::path::Path;

use ndarray::Array2;

use super::{DataError, FeatureTable};
use crate::digits::fmt_real;

/// Column layout resolved from a header row.
#[derive(Debug)]
struct Layout {
    features: Vec<usize>,
    label: Option<usize>,
    probs: Vec<usize>,
}

fn indexed(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if rest.len() > 1 && rest.starts_with('0') {
        return None;
    }
    rest.parse().ok()
}

fn resolve_layout(path: &Path, header: &csv::StringRecord) -> Result<(Layout, usize), DataError> {
    let bad = |reason: String| DataError::Header {
        path: path.to_path_buf(),
        reason,
    };
    if header.get(0).map(str::trim) != Some("id") {
        return Err(bad("first column must be `id`".into()));
    }
    let mut features = Vec::new();
    let mut probs = Vec::new();
    let mut label = None;
    for (col, name) in header.iter().enumerate().skip(1) {
        let name = name.trim();
        if name == "label" {
            if label.replace(col).is_some() {
                return Err(bad("duplicate `label` column".into()));
            }
        } else if let Some(k) = indexed(name, 'f') {
            if k != features.len() || label.is_some() || !probs.is_empty() {
                return Err(bad(format!("feature column `{name}` out of order")));
            }
            features.push(col);
        } else if let Some(k) = indexed(name, 'p') {
            if k != probs.len() {
                return Err(bad(format!("probability column `{name}` out of order")));
            }
            probs.push(col);
        } else {
            return Err(bad(format!("unrecognized column `{name}`")));
        }
    }
    if features.is_empty() {
        return Err(bad("no feature columns `f0..`".into()));
    }
    Ok((
        Layout {
            features,
            label,
            probs,
        },
        header.len(),
    ))
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| DataError::Csv {
            path: path.to_path_buf(),
            source,
        })
}

fn parse_table(
    path: &Path,
    mut reader: csv::Reader<std::fs::File>,
    want_labels: bool,
    n_probs: usize,
    layout: Layout,
    width: usize,
) -> Result<FeatureTable, DataError> {
    let header = reader
        .headers()
        .map_err(|source| DataError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let d = layout.features.len();
    let mut ids = Vec::new();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let mut probs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|source| DataError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(DataError::Header {
                path: path.to_path_buf(),
                reason: format!("line {line} has {} fields, header has {width}", record.len()),
            });
        }
        let cell_err = |col: usize| DataError::BadCell {
            line,
            column: header[col].to_string(),
            value: record[col].to_string(),
        };
        let real = |col: usize| -> Result<f64, DataError> {
            record[col].parse::<f64>().map_err(|_| cell_err(col))
        };
        ids.push(record[0].to_string());
        for &col in &layout.features {
            let v = real(col)?;
            if !v.is_finite() {
                return Err(cell_err(col));
            }
            feats.push(v);
        }
        if want_labels {
            let col = layout.label.expect("checked by caller");
            labels.push(record[col].parse::<usize>().map_err(|_| cell_err(col))?);
        }
        for &col in layout.probs.iter().take(n_probs) {
            probs.push(real(col)?);
        }
    }
    let n = ids.len();
    let features = Array2::from_shape_vec((n, d), feats).expect("row-major buffer");
    let class_probs = (n_probs > 0)
        .then(|| Array2::from_shape_vec((n, n_probs), probs).expect("row-major buffer"));
    FeatureTable::new(ids, features, want_labels.then_some(labels), class_probs)
}

/// Reads a table with header `id,f0,...,f{d-1}[,label][,p0,...,p{K-1}]`.
///
/// `has_labels` and `n_prob_cols` request the optional columns; requesting a
/// column the header lacks is an error, and columns that are present but not
/// requested are skipped.
pub fn ingest_features_csv(
    path: impl AsRef<Path>,
    has_labels: bool,
    n_prob_cols: usize,
) -> Result<FeatureTable, DataError> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let header = reader
        .headers()
        .map_err(|source| DataError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let (layout, width) = resolve_layout(path, &header)?;
    if has_labels && layout.label.is_none() {
        return Err(DataError::Header {
            path: path.to_path_buf(),
            reason: "labels requested but no `label` column".into(),
        });
    }
    if n_prob_cols > layout.probs.len() {
        return Err(DataError::Header {
            path: path.to_path_buf(),
            reason: format!(
                "{n_prob_cols} probability columns requested, header has {}",
                layout.probs.len()
            ),
        });
    }
    parse_table(path, reader, has_labels, n_prob_cols, layout, width)
}

/// Reads every optional column the header declares.
pub fn read_features_csv(path: impl AsRef<Path>) -> Result<FeatureTable, DataError> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let header = reader
        .headers()
        .map_err(|source| DataError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let (layout, width) = resolve_layout(path, &header)?;
    let labels = layout.label.is_some();
    let n_probs = layout.probs.len();
    parse_table(path, reader, labels, n_probs, layout, width)
}

/// Writes `table` in the ingestion schema, reals at 17 significant digits.
pub fn write_features_csv(table: &FeatureTable, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..table.dim()).map(|k| format!("f{k}")));
    if table.labels().is_some() {
        header.push("label".into());
    }
    if let Some(p) = table.class_probs() {
        header.extend((0..p.ncols()).map(|k| format!("p{k}")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..table.n_rows() {
        let mut rec = vec![table.ids()[i].clone()];
        rec.extend(table.row(i).iter().map(|&v| fmt_real(v)));
        if let Some(l) = table.labels() {
            rec.push(l[i].to_string());
        }
        if let Some(p) = table.class_probs() {
            rec.extend(p.row(i).iter().map(|&v| fmt_real(v)));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_labeled_three_row_file() {
        let f = file("id,f0,f1,label\na,0.5,1,0\nb,-2,3e-1,1\nc,0,0,1\n");
        let t = ingest_features_csv(f.path(), true, 0).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.labels().unwrap(), &[0, 1, 1]);
        assert_eq!(t.features()[[1, 1]], 0.3);
        assert!(t.class_probs().is_none());
    }

    #[test]
    fn rejects_probability_row_off_simplex() {
        let f = file("id,f0,f1,label,p0,p1\na,0,1,0,0.5,0.5\nb,1,1,1,0.6,0.6\n");
        let err = ingest_features_csv(f.path(), true, 2).unwrap_err();
        assert!(err.to_string().contains("probability row not normalized"), "{err}");
    }

    #[test]
    fn rejects_non_numeric_feature() {
        let f = file("id,f0\na,1.0\nb,abc\n");
        let err = ingest_features_csv(f.path(), false, 0).unwrap_err();
        assert!(matches!(err, DataError::BadCell { ref value, .. } if value == "abc"));
    }

    #[test]
    fn rejects_duplicate_id() {
        let f = file("id,f0\na,1.0\na,2.0\n");
        assert!(matches!(
            ingest_features_csv(f.path(), false, 0),
            Err(DataError::DuplicateId(_))
        ));
    }

    #[test]
    fn missing_file_is_reported() {
        let err = ingest_features_csv("/nonexistent/x.csv", false, 0).unwrap_err();
        assert!(matches!(err, DataError::MissingFile(_)));
    }

    #[test]
    fn requested_label_column_must_exist() {
        let f = file("id,f0\na,1.0\n");
        assert!(matches!(
            ingest_features_csv(f.path(), true, 0),
            Err(DataError::Header { .. })
        ));
    }

    #[test]
    fn unrequested_columns_are_skipped() {
        let f = file("id,f0,label,p0,p1\na,1.0,1,0.25,0.75\n");
        let t = ingest_features_csv(f.path(), false, 0).unwrap();
        assert_eq!(t.dim(), 1);
        assert!(t.labels().is_none() && t.class_probs().is_none());
        let full = read_features_csv(f.path()).unwrap();
        assert_eq!(full.class_probs().unwrap()[[0, 1]], 0.75);
    }

    #[test]
    fn header_rejects_unknown_columns() {
        let f = file("id,f0,weight\na,1.0,2.0\n");
        assert!(matches!(
            ingest_features_csv(f.path(), false, 0),
            Err(DataError::Header { .. })
        ));
    }
}
