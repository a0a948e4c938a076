//! Labelled CSV: a header row with a `label` column; every other column is a
//! numeric feature.

use std::path::Path;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let fmt = |line: u64, msg: String| Error::Format {
        path: path.to_path_buf(),
        offset: line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fmt(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| fmt(0, e.to_string()))?.clone();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| fmt(0, "no `label` column in header".into()))?;
    let width = headers.len() - 1;
    if width == 0 {
        return Err(fmt(0, "no feature columns".into()));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte());
            fmt(offset, e.to_string())
        })?;
        let at = record.position().map_or(0, |p| p.byte());
        for (i, field) in record.iter().enumerate() {
            if i == label_col {
                let l: usize = field
                    .parse()
                    .map_err(|_| fmt(at, format!("label `{field}` is not a non-negative integer")))?;
                labels.push(l);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| fmt(at, format!("feature `{field}` is not a number")))?;
                if !v.is_finite() {
                    return Err(fmt(at, format!("feature `{field}` is not finite")));
                }
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(fmt(0, "no data rows".into()));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, width], features)?, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_label_column_anywhere() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x0,label,x1\n0.5,1,2\n-1,0,3.5\n").unwrap();
        let ds = load_csv(&p).unwrap();
        assert_eq!(ds.labels(), &[1, 0]);
        assert_eq!(ds.features().data(), &[0.5, 2.0, -1.0, 3.5]);
        assert_eq!(ds.num_classes(), 2);
    }

    #[test]
    fn rejects_missing_label_and_bad_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(load_csv(&p), Err(Error::Format { .. })));
        std::fs::write(&p, "a,label\n1,x\n").unwrap();
        assert!(matches!(load_csv(&p), Err(Error::Format { .. })));
        std::fs::write(&p, "a,label\n1,0\n2\n").unwrap();
        assert!(matches!(load_csv(&p), Err(Error::Format { .. })));
        std::fs::write(&p, "a,label\n").unwrap();
        assert!(matches!(load_csv(&p), Err(Error::Format { .. })));
    }
}
