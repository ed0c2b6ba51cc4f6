//! CSV readers and writers for networks, item responses and numeric tables.
//! Missing cells are empty fields or `NA`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{JnirmError, Result};
use crate::model::{DataKind, ItemResponses, NetworkData};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkFormat {
    /// Square adjacency matrix if the data are square, else an edge list.
    Auto,
    Adjacency,
    /// Rows `from,to[,weight]`; unlisted pairs are 0.
    EdgeList,
}

impl std::str::FromStr for NetworkFormat {
    type Err = JnirmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "adjacency" => Ok(Self::Adjacency),
            "edgelist" | "edge-list" => Ok(Self::EdgeList),
            other => Err(JnirmError::config(format!("unknown network format `{other}`"))),
        }
    }
}

/// A parsed CSV table: optional header and cells (`None` = missing).
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<Option<f64>>>,
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na")
}

fn parse_err(source: &str, message: impl Into<String>) -> JnirmError {
    JnirmError::Parse {
        path: source.into(),
        message: message.into(),
    }
}

/// Reads a numeric CSV. The first record is taken as a header when any of
/// its non-missing fields is not a number.
pub fn read_table<R: Read>(reader: R, source: &str) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut header = None;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(source, e.to_string()))?;
        let fields: Vec<&str> = rec.iter().collect();
        if i == 0 && fields.iter().any(|f| !is_missing(f) && f.parse::<f64>().is_err()) {
            header = Some(fields.iter().map(|s| s.to_string()).collect());
            continue;
        }
        let row = fields
            .iter()
            .enumerate()
            .map(|(j, f)| {
                if is_missing(f) {
                    Ok(None)
                } else {
                    f.parse::<f64>().map(Some).map_err(|_| {
                        parse_err(
                            source,
                            format!("line {}, column {}: `{f}` is not a number", i + 1, j + 1),
                        )
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(source, "no data rows"));
    }
    Ok(RawTable { header, rows })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| JnirmError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn to_matrix(rows: &[Vec<Option<f64>>]) -> (DMatrix<f64>, DMatrix<bool>) {
    let (n, m) = (rows.len(), rows[0].len());
    let values = DMatrix::from_fn(n, m, |i, j| rows[i][j].unwrap_or(0.0));
    let mask = DMatrix::from_fn(n, m, |i, j| rows[i][j].is_some());
    (values, mask)
}

fn adjacency_from(table: &RawTable, kind: DataKind, source: &str) -> Result<NetworkData> {
    let n = table.rows.len();
    let (values, mask) = to_matrix(&table.rows);
    if values.ncols() != n {
        return Err(parse_err(source, format!("adjacency matrix is {n}x{}", values.ncols())));
    }
    NetworkData::with_mask(values, kind, mask)
}

fn edge_list_from(table: &RawTable, kind: DataKind, n_nodes: Option<usize>, source: &str) -> Result<NetworkData> {
    let width = table.rows[0].len();
    if !(2..=3).contains(&width) {
        return Err(parse_err(source, "edge list needs columns from,to[,weight]"));
    }
    let mut edges = Vec::with_capacity(table.rows.len());
    for (i, r) in table.rows.iter().enumerate() {
        let ids = (r[0], r[1]);
        let (Some(a), Some(b)) = ids else {
            return Err(parse_err(source, format!("row {}: missing node id", i + 1)));
        };
        if a.fract() != 0.0 || b.fract() != 0.0 || a < 1.0 || b < 1.0 {
            return Err(parse_err(
                source,
                format!("row {}: node ids must be positive integers", i + 1),
            ));
        }
        let w = if width == 3 { r[2].unwrap_or(f64::NAN) } else { 1.0 };
        edges.push((a as usize - 1, b as usize - 1, w));
    }
    let max_id = edges.iter().map(|&(a, b, _)| a.max(b) + 1).max().unwrap_or(0);
    let n = n_nodes.unwrap_or(max_id);
    if max_id > n {
        return Err(parse_err(source, format!("node id {max_id} exceeds N = {n}")));
    }
    let mut values = DMatrix::zeros(n, n);
    let mut mask = DMatrix::from_element(n, n, true);
    for (a, b, w) in edges {
        if w.is_nan() {
            mask[(a, b)] = false;
        } else {
            values[(a, b)] = w;
        }
    }
    NetworkData::with_mask(values, kind, mask)
}

/// Parses a network from CSV text read from `reader`.
pub fn parse_network<R: Read>(
    reader: R,
    source: &str,
    kind: DataKind,
    format: NetworkFormat,
    n_nodes: Option<usize>,
) -> Result<NetworkData> {
    let table = read_table(reader, source)?;
    let square = table.rows.len() == table.rows[0].len();
    match format {
        NetworkFormat::Adjacency => adjacency_from(&table, kind, source),
        NetworkFormat::EdgeList => edge_list_from(&table, kind, n_nodes, source),
        NetworkFormat::Auto if square && table.rows.len() > 3 => adjacency_from(&table, kind, source),
        NetworkFormat::Auto if table.rows[0].len() <= 3 && !square => edge_list_from(&table, kind, n_nodes, source),
        NetworkFormat::Auto => adjacency_from(&table, kind, source),
    }
}

pub fn read_network(path: &Path, kind: DataKind, format: NetworkFormat, n_nodes: Option<usize>) -> Result<NetworkData> {
    parse_network(open(path)?, &path.display().to_string(), kind, format, n_nodes)
}

/// Parses an N×M item response table; returns the item names when a header
/// row is present.
pub fn parse_items<R: Read>(reader: R, source: &str, kind: DataKind) -> Result<(ItemResponses, Option<Vec<String>>)> {
    let table = read_table(reader, source)?;
    let (values, mask) = to_matrix(&table.rows);
    if let Some(h) = &table.header {
        if h.len() != values.ncols() {
            return Err(parse_err(source, "header length differs from the number of items"));
        }
    }
    Ok((ItemResponses::with_mask(values, kind, mask)?, table.header))
}

pub fn read_items(path: &Path, kind: DataKind) -> Result<(ItemResponses, Option<Vec<String>>)> {
    parse_items(open(path)?, &path.display().to_string(), kind)
}

/// Formats a float with round-trip precision.
pub fn format_value(x: f64) -> String {
    if x.is_nan() {
        "NA".to_string()
    } else {
        format!("{x:?}")
    }
}

/// Writes a matrix as CSV with the given header (NaN is written as `NA`).
pub fn write_matrix<W: Write>(writer: W, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(JnirmError::dims("header length differs from column count"));
    }
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| JnirmError::Numerical(format!("csv write failed: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| format_value(m[(i, j)])))
            .map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| JnirmError::Numerical(format!("csv write failed: {e}")))?;
    Ok(())
}

pub fn write_matrix_file(path: &Path, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| JnirmError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    write_matrix(std::io::BufWriter::new(file), header, m)
}

/// Reads a headed numeric CSV written by [`write_matrix`]; missing cells
/// become NaN.
pub fn read_matrix_file(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let table = read_table(open(path)?, &path.display().to_string())?;
    let header = table
        .header
        .unwrap_or_else(|| (1..=table.rows[0].len()).map(|j| format!("V{j}")).collect());
    let (n, m) = (table.rows.len(), table.rows[0].len());
    let values = DMatrix::from_fn(n, m, |i, j| table.rows[i][j].unwrap_or(f64::NAN));
    Ok((header, values))
}

/// Column names `prefix1..prefixN`.
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("{prefix}{j}")).collect()
}
