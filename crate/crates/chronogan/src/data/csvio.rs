//! CSV ingestion (sliding windows over columnar data) and the long-format
//! sequence interchange files.

use super::{apply_window_shuffle, feature_ranges_rows, SequenceBatch, NORM_EPS};
use crate::error::{Error, Result};
use crate::tensor::{c, Real, Tensor};
use std::path::Path;

/// Slide a length-T window with the given stride over the rows of a numeric
/// CSV (header expected, feature order = column order). Features are min-max
/// normalized against the whole file, then the windows are shuffled with a
/// fixed seed so overlapping neighbours don't line up inside batches.
pub fn load_csv_windows<F: Real>(
    path: impl AsRef<Path>,
    t_len: usize,
    stride: usize,
) -> Result<SequenceBatch<F>> {
    if t_len == 0 || stride == 0 {
        return Err(Error::contract("window length and stride must be >= 1"));
    }
    let path = path.as_ref();
    // flexible: ragged rows reach our own length check, which knows the line
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let f_dim = reader.headers()?.len();
    if f_dim == 0 {
        return Err(Error::Format("CSV has an empty header".into()));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ri, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("CSV read failed: {e}")))?;
        let line = ri + 2; // header occupies line 1
        if rec.len() != f_dim {
            return Err(Error::Parse {
                row: line,
                col: rec.len(),
                msg: format!("expected {f_dim} columns, found {}", rec.len()),
            });
        }
        let mut row = Vec::with_capacity(f_dim);
        for (ci, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                col: ci + 1,
                msg: format!("not numeric: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    col: ci + 1,
                    msg: "non-finite value".into(),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.len() < t_len {
        return Err(Error::contract(format!(
            "need at least T = {t_len} data rows, file has {}",
            rows.len()
        )));
    }
    // normalization ranges come from every row, windowed or not
    let pairs = feature_ranges_rows(&rows, f_dim);
    let n = (rows.len() - t_len) / stride + 1;
    let mut data = Vec::with_capacity(n * t_len * f_dim);
    for w in 0..n {
        let start = w * stride;
        for row in &rows[start..start + t_len] {
            for (fi, &v) in row.iter().enumerate() {
                let (lo, hi) = pairs[fi];
                data.push(c::<F>((v - lo) / (hi - lo + NORM_EPS)));
            }
        }
    }
    let tensor = Tensor::new(vec![n, t_len, f_dim], data)?;
    let shuffled = apply_window_shuffle(tensor);
    let mut batch = SequenceBatch::new(shuffled, path.display().to_string())?;
    batch.norm = Some(pairs);
    batch.validate()?;
    Ok(batch)
}

/// Write a batch as long-format CSV: `sample_id,timestep,f0..f{F−1}`, one
/// row per (sample, timestep), full shortest-round-trip float precision.
pub fn export_sequences_csv<F: Real>(batch: &SequenceBatch<F>, path: impl AsRef<Path>) -> Result<()> {
    batch.validate()?;
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["sample_id".to_string(), "timestep".to_string()];
    header.extend((0..batch.f()).map(|f| format!("f{f}")));
    w.write_record(&header)
        .map_err(|e| Error::Format(format!("CSV write failed: {e}")))?;
    let (n, t_len, f_dim) = (batch.n(), batch.t(), batch.f());
    let data = batch.values.data();
    let mut record = Vec::with_capacity(f_dim + 2);
    for ni in 0..n {
        for ti in 0..t_len {
            record.clear();
            record.push(ni.to_string());
            record.push(ti.to_string());
            for fi in 0..f_dim {
                let v = data[(ni * t_len + ti) * f_dim + fi].to_f64().unwrap();
                record.push(format!("{v}"));
            }
            w.write_record(&record)
                .map_err(|e| Error::Format(format!("CSV write failed: {e}")))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a long-format sequence CSV back into a batch. Every (sample,
/// timestep) pair must appear exactly once and the grid must be complete.
pub fn import_sequences_csv<F: Real>(path: impl AsRef<Path>) -> Result<SequenceBatch<F>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "timestep" {
        return Err(Error::Format(
            "expected header sample_id,timestep,f0..".into(),
        ));
    }
    let f_dim = header.len() - 2;
    let mut cells: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut max_n = 0usize;
    let mut max_t = 0usize;
    for (ri, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("CSV read failed: {e}")))?;
        let line = ri + 2;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: line,
                col: rec.len(),
                msg: format!("ragged row: expected {} columns", header.len()),
            });
        }
        let parse_idx = |ci: usize| -> Result<usize> {
            rec[ci].parse().map_err(|_| Error::Parse {
                row: line,
                col: ci + 1,
                msg: format!("not an index: {:?}", &rec[ci]),
            })
        };
        let ni = parse_idx(0)?;
        let ti = parse_idx(1)?;
        let mut vals = Vec::with_capacity(f_dim);
        for ci in 2..header.len() {
            let v: f64 = rec[ci].parse().map_err(|_| Error::Parse {
                row: line,
                col: ci + 1,
                msg: format!("not numeric: {:?}", &rec[ci]),
            })?;
            vals.push(v);
        }
        max_n = max_n.max(ni + 1);
        max_t = max_t.max(ti + 1);
        cells.push((ni, ti, vals));
    }
    if cells.is_empty() {
        return Err(Error::contract("sequence CSV holds no data rows"));
    }
    if cells.len() != max_n * max_t {
        return Err(Error::Format(format!(
            "incomplete grid: {} rows for {} samples x {} timesteps",
            cells.len(),
            max_n,
            max_t
        )));
    }
    let mut data = vec![None::<f64>; max_n * max_t * f_dim];
    for (ni, ti, vals) in cells {
        for (fi, v) in vals.into_iter().enumerate() {
            let idx = (ni * max_t + ti) * f_dim + fi;
            if data[idx].is_some() {
                return Err(Error::Format(format!(
                    "duplicate entry for sample {ni}, timestep {ti}"
                )));
            }
            data[idx] = Some(v);
        }
    }
    let data: Vec<F> = data
        .into_iter()
        .map(|v| v.map(c).ok_or_else(|| Error::Format("missing grid cell".into())))
        .collect::<Result<_>>()?;
    SequenceBatch::new(
        Tensor::new(vec![max_n, max_t, f_dim], data)?,
        path.display().to_string(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_sines;
    use std::io::Write;

    fn write_csv(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    fn numeric_csv(rows: usize, cols: usize) -> String {
        let mut s: String = (0..cols)
            .map(|ci| format!("c{ci}"))
            .collect::<Vec<_>>()
            .join(",");
        s.push('\n');
        for r in 0..rows {
            let row: Vec<String> = (0..cols)
                .map(|ci| format!("{}", (r * cols + ci) as f64 * 0.25))
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    #[test]
    fn window_count_matches_formula() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "w.csv", &numeric_csv(100, 2));
        let b = load_csv_windows::<f64>(&p, 24, 1).unwrap();
        assert_eq!(b.n(), 77); // 100 − 24 + 1
        assert_eq!(b.t(), 24);
        assert_eq!(b.f(), 2);
        let exact = load_csv_windows::<f64>(&p, 100, 1).unwrap();
        assert_eq!(exact.n(), 1);
    }

    #[test]
    fn stride_equal_to_window_gives_disjoint_records() {
        // ECG-style: fixed-length records, one sample per record
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "ecg.csv", &numeric_csv(420, 1));
        let b = load_csv_windows::<f64>(&p, 140, 140).unwrap();
        assert_eq!(b.n(), 3);
        assert_eq!(b.t(), 140);
    }

    #[test]
    fn non_numeric_cell_locates_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "bad.csv", "a,b\n1.0,2.0\n3.0,oops\n");
        match load_csv_windows::<f64>(&p, 2, 1) {
            Err(Error::Parse { row, col, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(col, 2);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn short_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "short.csv", &numeric_csv(5, 1));
        assert!(matches!(
            load_csv_windows::<f64>(&p, 24, 1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn windows_are_normalized_and_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "ord.csv", &numeric_csv(30, 1));
        let b = load_csv_windows::<f64>(&p, 5, 5).unwrap();
        assert!(b.norm.is_some());
        // rows ascended monotonically, so every window must too
        for ni in 0..b.n() {
            let d = b.values.data();
            for ti in 1..5 {
                assert!(d[ni * 5 + ti] > d[ni * 5 + ti - 1]);
            }
        }
    }

    #[test]
    fn shuffle_is_fixed_across_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "s.csv", &numeric_csv(60, 2));
        let a = load_csv_windows::<f32>(&p, 10, 2).unwrap();
        let b = load_csv_windows::<f32>(&p, 10, 2).unwrap();
        assert_eq!(a.values.data(), b.values.data());
    }

    #[test]
    fn sequence_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = generate_sines::<f64>(2, 3, 2, 5).unwrap();
        let p = dir.path().join("seq.csv");
        export_sequences_csv(&b, &p).unwrap();
        let back = import_sequences_csv::<f64>(&p).unwrap();
        assert_eq!(back.values.shape(), b.values.shape());
        for (a, want) in back.values.data().iter().zip(b.values.data()) {
            assert!((a - want).abs() < 1e-6);
        }
        // N=2, T=3 → 6 data rows + header
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("sample_id,timestep,f0,f1"));
    }

    #[test]
    fn ragged_sequence_csv_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(
            &dir,
            "rag.csv",
            "sample_id,timestep,f0\n0,0,1.0\n0,1\n",
        );
        assert!(matches!(
            import_sequences_csv::<f64>(&p),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn incomplete_grid_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(
            &dir,
            "gap.csv",
            "sample_id,timestep,f0\n0,0,1.0\n0,1,2.0\n1,0,3.0\n",
        );
        assert!(import_sequences_csv::<f64>(&p).is_err());
    }
}
