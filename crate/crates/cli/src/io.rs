//! Dataset and embedding-record ingestion, plus the small CSV writers used
//! by the stage subcommands.
//!
//! Every malformed input produces an error that names the file and line;
//! nothing is ever returned half-parsed.

use std::collections::HashSet;
use std::fs::File;
use std::path::Path;

use gsi_core::{GsiError, Result};

/// A numeric table split into features and a target column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub ids: Vec<String>,
    pub feature_names: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn rows(&self, idx: &[usize]) -> Vec<Vec<f64>> {
        idx.iter().map(|&i| self.x[i].clone()).collect()
    }
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| GsiError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_error(path: &Path, err: csv::Error) -> GsiError {
    let line = err.position().map_or(0, |p| p.line());
    GsiError::Parse {
        line,
        msg: format!("{}: {err}", path.display()),
    }
}

fn parse_cell(path: &Path, line: u64, column: &str, cell: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(GsiError::Parse {
            line,
            msg: format!("{}: column `{column}`: `{cell}` is not a finite number", path.display()),
        }),
    }
}

/// Reads a delimited table with a header row.
///
/// The target column becomes `y`, the id column (if any) becomes `ids`, and
/// every other column is a feature in file order. Without an id column rows
/// are numbered `0..n`.
pub fn load_table(path: impl AsRef<Path>, target: &str, id_column: Option<&str>) -> Result<Table> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let target_at = find(target).ok_or_else(|| {
        GsiError::Config(format!(
            "{}: no column `{target}`; available columns: {}",
            path.display(),
            header.join(", ")
        ))
    })?;
    let id_at = match id_column {
        Some(name) => Some(find(name).ok_or_else(|| {
            GsiError::Config(format!(
                "{}: no id column `{name}`; available columns: {}",
                path.display(),
                header.join(", ")
            ))
        })?),
        None => find("id").filter(|&i| i != target_at),
    };
    let features: Vec<usize> = (0..header.len()).filter(|&i| i != target_at && Some(i) != id_at).collect();

    let mut table = Table {
        ids: Vec::new(),
        feature_names: features.iter().map(|&i| header[i].clone()).collect(),
        x: Vec::new(),
        y: Vec::new(),
    };
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(GsiError::Parse {
                line,
                msg: format!(
                    "{}: expected {} fields, found {}",
                    path.display(),
                    header.len(),
                    record.len()
                ),
            });
        }
        let id = match id_at {
            Some(i) => record[i].to_string(),
            None => table.y.len().to_string(),
        };
        if !seen.insert(id.clone()) {
            return Err(GsiError::Data(format!("{}: duplicate id `{id}` at line {line}", path.display())));
        }
        table.y.push(parse_cell(path, line, target, &record[target_at])?);
        table.x.push(
            features
                .iter()
                .map(|&i| parse_cell(path, line, &header[i], &record[i]))
                .collect::<Result<_>>()?,
        );
        table.ids.push(id);
    }
    if table.is_empty() {
        return Err(GsiError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(table)
}

/// One line of an embedding file: `id[,z][,score],e0..e{d−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    /// 1 marks a bad item (hallucination / unacceptable output).
    pub z: Option<u8>,
    pub score: Option<f64>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet {
    pub records: Vec<EmbeddingRecord>,
    pub dim: usize,
    pub has_z: bool,
    pub has_score: bool,
}

impl RecordSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn embeddings(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.embedding.clone()).collect()
    }
}

pub fn load_embedding_records(path: impl AsRef<Path>) -> Result<RecordSet> {
    let path = path.as_ref();
    let mut reader = open(path)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let bad_header = |msg: String| GsiError::Parse {
        line: 1,
        msg: format!("{}: {msg}", path.display()),
    };
    if header.first().map(String::as_str) != Some("id") {
        return Err(bad_header("first column must be `id`".into()));
    }
    let mut col = 1;
    let has_z = header.get(col).map(String::as_str) == Some("z");
    col += usize::from(has_z);
    let has_score = header.get(col).map(String::as_str) == Some("score");
    col += usize::from(has_score);
    let dim = header.len() - col;
    for (k, name) in header[col..].iter().enumerate() {
        if *name != format!("e{k}") {
            return Err(bad_header(format!(
                "expected column `e{k}`, found `{name}` (header must be id[,z][,score],e0..)"
            )));
        }
    }

    let mut set = RecordSet {
        records: Vec::new(),
        dim,
        has_z,
        has_score,
    };
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(GsiError::Parse {
                line,
                msg: format!(
                    "{}: expected {} fields, found {}",
                    path.display(),
                    header.len(),
                    record.len()
                ),
            });
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(GsiError::Data(format!("{}: duplicate id `{id}` at line {line}", path.display())));
        }
        let z = if has_z {
            let v = parse_cell(path, line, "z", &record[1])?;
            if v != 0.0 && v != 1.0 {
                return Err(GsiError::Data(format!(
                    "{}: line {line}: label z must be 0 or 1, got {v}",
                    path.display()
                )));
            }
            Some(v as u8)
        } else {
            None
        };
        let score = if has_score {
            Some(parse_cell(path, line, "score", &record[col - 1])?)
        } else {
            None
        };
        let embedding = (col..header.len())
            .map(|i| parse_cell(path, line, &header[i], &record[i]))
            .collect::<Result<Vec<f64>>>()?;
        set.records.push(EmbeddingRecord { id, z, score, embedding });
    }
    if set.is_empty() {
        return Err(GsiError::Data(format!("{}: no records", path.display())));
    }
    Ok(set)
}

/// Machine-readable float formatting: 17 significant digits, exact round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_rows(path: impl AsRef<Path>, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        writer.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| GsiError::io(path, e))
}

/// Writes records in the format [`load_embedding_records`] reads.
pub fn write_embedding_records(path: impl AsRef<Path>, set: &RecordSet) -> Result<()> {
    let mut header = vec!["id".to_string()];
    if set.has_z {
        header.push("z".into());
    }
    if set.has_score {
        header.push("score".into());
    }
    header.extend((0..set.dim).map(|k| format!("e{k}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = set.records.iter().map(|r| {
        let mut row = vec![r.id.clone()];
        if set.has_z {
            row.push(r.z.unwrap_or(0).to_string());
        }
        if set.has_score {
            row.push(fmt_f64(r.score.unwrap_or(f64::NAN)));
        }
        row.extend(r.embedding.iter().map(|&v| fmt_f64(v)));
        row
    });
    write_rows(path, &header_refs, rows)
}
