use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dataio::{RawSeries, Source};
use crate::error::{Result, StairError};

/// Reads the standard benchmark layout: a header row whose first column is
/// `date`, followed by numeric columns. The date column is discarded.
///
/// Row numbers in errors are 1-based data rows (the header is not counted).
pub fn load_csv(path: impl AsRef<Path>) -> Result<RawSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| StairError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let headers = reader
        .headers()
        .map_err(|e| StairError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .clone();
    let first = headers.get(0).map(|h| h.trim().trim_start_matches('\u{feff}'));
    if first != Some("date") {
        return Err(StairError::Csv {
            path: path.to_path_buf(),
            message: format!("first column must be `date`, found {first:?}"),
        });
    }
    let names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    if names.is_empty() {
        return Err(StairError::Csv {
            path: path.to_path_buf(),
            message: "no value columns after `date`".into(),
        });
    }

    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| StairError::Csv {
            path: path.to_path_buf(),
            message: format!("row {row}: {e}"),
        })?;
        if record.len() != names.len() + 1 {
            return Err(StairError::RaggedRow {
                path: path.to_path_buf(),
                row,
                found: record.len(),
                expected: names.len() + 1,
            });
        }
        for (col, cell) in record.iter().enumerate().skip(1) {
            let parsed = cell.trim().parse::<f64>();
            match parsed {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(StairError::BadCell {
                        path: path.to_path_buf(),
                        row,
                        column: col + 1,
                        name: names[col - 1].clone(),
                        message: format!("expected a finite number, found {cell:?}"),
                    })
                }
            }
        }
    }
    RawSeries::new(values, names, Source::File(path.to_path_buf()))
}

/// Writes a series in the same layout [`load_csv`] reads, with an integer
/// step counter in the `date` column.
pub fn write_csv(series: &RawSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| StairError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| StairError::io(path, e);
    write!(w, "date").map_err(io)?;
    for n in &series.names {
        write!(w, ",{n}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for t in 0..series.len {
        write!(w, "{t}").map_err(io)?;
        for c in 0..series.channels() {
            write!(w, ",{}", series.at(t, c)).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_small_file() {
        let f = write("date,a,b\n2016-07-01 00:00:00,1,2\nx,3,4\nx,5,6\nx,7,8.5\n");
        let s = load_csv(f.path()).unwrap();
        assert_eq!(s.len, 4);
        assert_eq!(s.channels(), 2);
        assert_eq!(s.names, vec!["a", "b"]);
        assert_eq!(s.column(1), vec![2.0, 4.0, 6.0, 8.5]);
    }

    #[test]
    fn nan_cell_names_row() {
        let f = write("date,a,b\nx,1,2\nx,3,4\nx,NaN,6\n");
        let err = load_csv(f.path()).unwrap_err();
        match &err {
            StairError::BadCell { row, name, .. } => {
                assert_eq!(*row, 3);
                assert_eq!(name, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("row 3"));
    }

    #[test]
    fn ragged_row_is_reported() {
        let f = write("date,a,b\nx,1,2\nx,3\n");
        match load_csv(f.path()).unwrap_err() {
            StairError::RaggedRow { row, found, expected, .. } => {
                assert_eq!((row, found, expected), (2, 2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell() {
        let f = write("date,a\nx,1\nx,abc\n");
        assert!(matches!(
            load_csv(f.path()).unwrap_err(),
            StairError::BadCell { row: 2, column: 2, .. }
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_csv("/definitely/not/here.csv").unwrap_err(),
            StairError::Io { .. }
        ));
    }

    #[test]
    fn requires_date_header() {
        let f = write("time,a\n1,2\n");
        assert!(load_csv(f.path()).is_err());
    }

    #[test]
    fn write_then_load() {
        let s = RawSeries::new(vec![0.5, -1.25, 3.0, 1e-7], vec!["u".into(), "v".into()], Source::Synthetic)
            .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_csv(&s, f.path()).unwrap();
        let back = load_csv(f.path()).unwrap();
        assert_eq!(back.values, s.values);
        assert_eq!(back.names, s.names);
    }
}
