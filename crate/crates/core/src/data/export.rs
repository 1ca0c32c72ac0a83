use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Writes `label,pc1,..,pck,f1,..,fd` with one row per sample.
pub fn export_features_csv(path: &Path, features: &Tensor, labels: &[usize], projection: &Tensor) -> Result<()> {
    let n = labels.len();
    if features.rows() != n || projection.rows() != n {
        return Err(Error::structural(format!(
            "{n} labels, {} feature rows, {} projection rows",
            features.rows(),
            projection.rows()
        )));
    }
    let (d, k) = (features.row_len(), projection.row_len());
    let mut out = String::from("label");
    for c in 1..=k {
        write!(out, ",pc{c}").expect("string write");
    }
    for j in 1..=d {
        write!(out, ",f{j}").expect("string write");
    }
    out.push('\n');
    for i in 0..n {
        write!(out, "{}", labels[i]).expect("string write");
        for v in projection.row(i).iter().chain(features.row(i)) {
            if !v.is_finite() {
                return Err(Error::numeric(format!("non-finite value in row {i}")));
            }
            // Display for f64 is locale independent and round-trips exactly
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub label: usize,
    pub projection: Vec<f64>,
    pub features: Vec<f64>,
}

/// Parses a file written by [`export_features_csv`].
pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |offset: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad(0, "empty file".into()))?
        .split(',')
        .collect();
    if header.first() != Some(&"label") {
        return Err(bad(0, "header must start with \"label\"".into()));
    }
    let k = header.iter().filter(|h| h.starts_with("pc")).count();
    let mut rows = Vec::new();
    let mut offset = header.join(",").len() + 1;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(bad(
                offset,
                format!("{} cells, header has {}", cells.len(), header.len()),
            ));
        }
        let label = cells[0]
            .parse()
            .map_err(|_| bad(offset, format!("bad label {:?}", cells[0])))?;
        let values = cells[1..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| bad(offset, format!("bad number {c:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureRow {
            label,
            projection: values[..k].to_vec(),
            features: values[k..].to_vec(),
        });
        offset += line.len() + 1;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let f = Tensor::new(vec![1, 2], vec![0.5, -1.25]).unwrap();
        let proj = Tensor::new(vec![1, 2], vec![3.0, 1e-20]).unwrap();
        export_features_csv(&p, &f, &[4], &proj).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "label,pc1,pc2,f1,f2");
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), 5);
    }

    #[test]
    fn roundtrip_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let n = 500;
        let f = Tensor::new(vec![n, 3], (0..3 * n).map(|i| (i as f64 * 0.37).sin() / 7.0).collect()).unwrap();
        let proj = Tensor::new(vec![n, 2], (0..2 * n).map(|i| (i as f64).cos() * 1e3).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        export_features_csv(&p, &f, &labels, &proj).unwrap();
        let rows = read_features_csv(&p).unwrap();
        assert_eq!(rows.len(), n);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.label, labels[i]);
            for (a, b) in r.features.iter().zip(f.row(i)) {
                assert!((a - b).abs() <= 1e-9);
            }
            for (a, b) in r.projection.iter().zip(proj.row(i)) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn row_mismatch_and_bad_path() {
        let f = Tensor::zeros(&[2, 2]);
        let proj = Tensor::zeros(&[2, 2]);
        assert!(export_features_csv(Path::new("/tmp/x.csv"), &f, &[0], &proj).is_err());
        assert!(matches!(
            export_features_csv(Path::new("/nonexistent/dir/x.csv"), &f, &[0, 1], &proj),
            Err(Error::Io { .. })
        ));
    }
}
