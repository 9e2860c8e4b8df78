//! Reading and writing count matrices.
//!
//! Two formats: dense CSV (optional single header row of gene names, one row
//! per cell) and MatrixMarket coordinate integer files (1-based indices,
//! densified on load). Saving then loading reproduces counts bit-exactly.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::CountMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixFormat {
    CsvDense,
    MatrixMarket,
}

impl MatrixFormat {
    /// Guess from the file extension; `.mtx`/`.mm` mean MatrixMarket,
    /// anything else dense CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("mtx") | Some("mm") => MatrixFormat::MatrixMarket,
            _ => MatrixFormat::CsvDense,
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" | "csv_dense" => Ok(MatrixFormat::CsvDense),
            "mtx" | "mm" | "matrix_market" => Ok(MatrixFormat::MatrixMarket),
            other => Err(Error::InvalidConfig(format!(
                "unknown matrix format '{other}' (expected csv_dense or matrix_market)"
            ))),
        }
    }
}

impl fmt::Display for MatrixFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixFormat::CsvDense => write!(f, "csv_dense"),
            MatrixFormat::MatrixMarket => write!(f, "matrix_market"),
        }
    }
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<CountMatrix> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path.display().to_string();
    match format {
        MatrixFormat::CsvDense => parse_csv(&name, &text),
        MatrixFormat::MatrixMarket => parse_matrix_market(&name, &text),
    }
}

pub fn save_matrix(x: &CountMatrix, path: &Path, format: MatrixFormat) -> Result<()> {
    let mut out = Vec::new();
    match format {
        MatrixFormat::CsvDense => write_csv(x, &mut out),
        MatrixFormat::MatrixMarket => write_matrix_market(x, &mut out),
    }
    .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &str, row: usize, col: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.into(), row, col, message: message.into() }
}

fn parse_count(field: &str) -> std::result::Result<u64, String> {
    let trimmed = field.trim();
    if trimmed.is_empty() {
        return Err("empty field".into());
    }
    trimmed.parse::<u64>().map_err(|_| {
        format!("expected a non-negative integer count, got '{trimmed}'")
    })
}

fn parse_csv(path: &str, text: &str) -> Result<CountMatrix> {
    let lines: Vec<&str> = text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .filter(|l| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(parse_err(path, 1, 1, "empty matrix file"));
    }

    // A header is present when any first-row field fails to parse as a count.
    let first: Vec<&str> = lines[0].split(',').collect();
    let has_header = first.iter().any(|f| parse_count(f).is_err());
    let gene_names: Option<Vec<String>> = has_header
        .then(|| first.iter().map(|s| s.trim().to_string()).collect());
    let n_genes = first.len();
    let data_lines = &lines[if has_header { 1 } else { 0 }..];
    if data_lines.is_empty() {
        return Err(parse_err(path, 2, 1, "no data rows after header"));
    }

    let mut counts = Vec::with_capacity(data_lines.len() * n_genes);
    for (i, line) in data_lines.iter().enumerate() {
        let row_no = i + 1 + usize::from(has_header);
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_genes {
            return Err(parse_err(
                path,
                row_no,
                1,
                format!("expected {n_genes} fields, found {}", fields.len()),
            ));
        }
        for (j, field) in fields.iter().enumerate() {
            counts.push(
                parse_count(field).map_err(|m| parse_err(path, row_no, j + 1, m))?,
            );
        }
    }
    let m = CountMatrix::from_counts(data_lines.len(), n_genes, counts)?;
    match gene_names {
        Some(names) => m.with_gene_names(names),
        None => Ok(m),
    }
}

fn write_csv(x: &CountMatrix, out: &mut impl Write) -> std::io::Result<()> {
    if let Some(names) = x.gene_names() {
        writeln!(out, "{}", names.join(","))?;
    }
    for i in 0..x.n_cells() {
        let row: Vec<String> = x.row(i).iter().map(|c| c.to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

const MM_HEADER: &str = "%%MatrixMarket matrix coordinate integer general";

fn parse_matrix_market(path: &str, text: &str) -> Result<CountMatrix> {
    let mut lines = text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, 1, "empty matrix file"))?;
    let header_fields: Vec<&str> = header.split_whitespace().collect();
    let expected: Vec<&str> = MM_HEADER.split_whitespace().collect();
    if header_fields.len() != expected.len()
        || !header_fields
            .iter()
            .zip(&expected)
            .all(|(a, b)| a.eq_ignore_ascii_case(b))
    {
        return Err(parse_err(
            path,
            1,
            1,
            format!("expected header '{MM_HEADER}', got '{header}'"),
        ));
    }

    let mut size_line = None;
    for (idx, line) in lines.by_ref() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        size_line = Some((idx + 1, trimmed.to_string()));
        break;
    }
    let (size_row, size_text) =
        size_line.ok_or_else(|| parse_err(path, 2, 1, "missing size line"))?;
    let dims: Vec<&str> = size_text.split_whitespace().collect();
    if dims.len() != 3 {
        return Err(parse_err(path, size_row, 1, "size line needs 'rows cols nnz'"));
    }
    let parse_dim = |s: &str, col: usize| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| parse_err(path, size_row, col, format!("bad size field '{s}'")))
    };
    let n_rows = parse_dim(dims[0], 1)?;
    let n_cols = parse_dim(dims[1], 2)?;
    let nnz = parse_dim(dims[2], 3)?;

    let mut counts = vec![0u64; n_rows.max(1) * n_cols.max(1)];
    let mut seen = vec![false; counts.len()];
    let mut stored = 0usize;
    for (idx, line) in lines {
        let row_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(path, row_no, 1, "entry line needs 'row col value'"));
        }
        let i: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(path, row_no, 1, format!("bad row index '{}'", fields[0])))?;
        let j: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(path, row_no, 2, format!("bad column index '{}'", fields[1])))?;
        if i < 1 || i > n_rows || j < 1 || j > n_cols {
            return Err(parse_err(
                path,
                row_no,
                1,
                format!("entry ({i}, {j}) outside {n_rows}x{n_cols}"),
            ));
        }
        let v = parse_count(fields[2]).map_err(|m| parse_err(path, row_no, 3, m))?;
        let flat = (i - 1) * n_cols + (j - 1);
        if seen[flat] {
            return Err(parse_err(path, row_no, 1, format!("duplicate entry ({i}, {j})")));
        }
        seen[flat] = true;
        counts[flat] = v;
        stored += 1;
    }
    if stored != nnz {
        return Err(parse_err(
            path,
            size_row,
            3,
            format!("size line declares {nnz} entries, file has {stored}"),
        ));
    }
    CountMatrix::from_counts(n_rows, n_cols, counts)
}

fn write_matrix_market(x: &CountMatrix, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{MM_HEADER}")?;
    let nnz = x.counts().iter().filter(|&&c| c > 0).count();
    writeln!(out, "{} {} {}", x.n_cells(), x.n_genes(), nnz)?;
    for i in 0..x.n_cells() {
        for (j, &c) in x.row(i).iter().enumerate() {
            if c > 0 {
                writeln!(out, "{} {} {}", i + 1, j + 1, c)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn load_str(text: &str, format: MatrixFormat) -> Result<CountMatrix> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.any");
        std::fs::write(&path, text).unwrap();
        load_matrix(&path, format)
    }

    #[test]
    fn csv_direct_transcription() {
        let m = load_str("1,0\n2,5\n0,3\n", MatrixFormat::CsvDense).unwrap();
        assert_eq!((m.n_cells(), m.n_genes()), (3, 2));
        assert_eq!(m.counts(), &[1, 0, 2, 5, 0, 3]);
        assert!(m.gene_names().is_none());
    }

    #[test]
    fn csv_negative_entry_names_the_cell() {
        match load_str("1,0\n2,-1\n", MatrixFormat::CsvDense) {
            Err(Error::Parse { row, col, message, .. }) => {
                assert_eq!((row, col), (2, 2));
                assert!(message.contains("-1"), "message was: {message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_fractional_entry_rejected() {
        match load_str("1,0\n2,1.5\n", MatrixFormat::CsvDense) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (2, 2)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_header_row_becomes_gene_names() {
        let m = load_str("geneA,geneB\n1,2\n3,4\n", MatrixFormat::CsvDense).unwrap();
        assert_eq!(m.gene_names().unwrap(), ["geneA", "geneB"]);
        assert_eq!(m.counts(), &[1, 2, 3, 4]);
    }

    #[test]
    fn csv_ragged_row_rejected() {
        match load_str("1,2\n3\n", MatrixFormat::CsvDense) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_matrix(Path::new("/nonexistent/x.csv"), MatrixFormat::CsvDense)
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn matrix_market_fill_in_zeros() {
        let text = "%%MatrixMarket matrix coordinate integer general\n2 2 2\n1 1 7\n2 2 3\n";
        let m = load_str(text, MatrixFormat::MatrixMarket).unwrap();
        assert_eq!(m.counts(), &[7, 0, 0, 3]);
    }

    #[test]
    fn matrix_market_rejects_wrong_header_and_duplicates() {
        assert!(matches!(
            load_str("%%MatrixMarket matrix coordinate real general\n1 1 0\n",
                MatrixFormat::MatrixMarket),
            Err(Error::Parse { row: 1, .. })
        ));
        let dup = "%%MatrixMarket matrix coordinate integer general\n2 2 2\n1 1 7\n1 1 3\n";
        assert!(matches!(
            load_str(dup, MatrixFormat::MatrixMarket),
            Err(Error::Parse { row: 4, .. })
        ));
    }

    #[test]
    fn matrix_market_out_of_range_entry() {
        let text = "%%MatrixMarket matrix coordinate integer general\n2 2 1\n3 1 7\n";
        assert!(matches!(
            load_str(text, MatrixFormat::MatrixMarket),
            Err(Error::Parse { row: 3, .. })
        ));
    }

    #[test]
    fn format_from_path_and_str() {
        assert_eq!(MatrixFormat::from_path(Path::new("a.mtx")), MatrixFormat::MatrixMarket);
        assert_eq!(MatrixFormat::from_path(Path::new("a.csv")), MatrixFormat::CsvDense);
        assert_eq!("matrix_market".parse::<MatrixFormat>().unwrap(), MatrixFormat::MatrixMarket);
        assert!("tsv".parse::<MatrixFormat>().is_err());
    }

    fn roundtrip(m: &CountMatrix, format: MatrixFormat) -> CountMatrix {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.any");
        save_matrix(m, &path, format).unwrap();
        load_matrix(&path, format).unwrap()
    }

    proptest! {
        #[test]
        fn csv_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = crate::rng::stream(seed);
            let counts: Vec<u64> = (0..rows * cols).map(|_| rng.random_range(0..50)).collect();
            let m = CountMatrix::from_counts(rows, cols, counts).unwrap();
            let csv = roundtrip(&m, MatrixFormat::CsvDense);
            prop_assert_eq!(csv.counts(), m.counts());
            let mm = roundtrip(&m, MatrixFormat::MatrixMarket);
            prop_assert_eq!(mm.counts(), m.counts());
        }
    }

    #[test]
    fn csv_round_trip_preserves_names() {
        let m = CountMatrix::from_counts(2, 2, vec![1, 2, 3, 4])
            .unwrap()
            .with_gene_names(vec!["g1".into(), "g2".into()])
            .unwrap();
        let back = roundtrip(&m, MatrixFormat::CsvDense);
        assert_eq!(back.gene_names().unwrap(), ["g1", "g2"]);
        assert_eq!(back.counts(), m.counts());
    }
}
