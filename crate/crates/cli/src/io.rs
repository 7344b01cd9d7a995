//! On-disk formats: matrices (binary and CSV), dictionaries, patch
//! groupings, per-subject targets and feature tables, and result tables.
//!
//! Binary matrix layout: 8-byte magic `MTDLMAT1`, little-endian u64 row and
//! column counts, then `rows * cols` little-endian f64 values in
//! column-major order. Dictionaries use magic `MTDLDIC1` with an extra
//! shared/individual column split. CSV matrices hold one sample per row
//! (a sample is one matrix column); a header row is optional on load.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use mtdl_core::{Dictionary, FeatureMatrix, PatchGrouping, SubjectFeatureTable};

use crate::error::{CliError, Result};

const MATRIX_MAGIC: &[u8; 8] = b"MTDLMAT1";
const DICT_MAGIC: &[u8; 8] = b"MTDLDIC1";

/// Shortest decimal representation that parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(path, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

fn parse_f64(path: &Path, line: usize, token: &str) -> Result<f64> {
    token
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::parse(path, line, format!("not a number: {token:?}")))
}

fn u64_at(path: &Path, bytes: &[u8], offset: usize) -> Result<u64> {
    let end = offset + 8;
    if bytes.len() < end {
        return Err(CliError::format(path, "truncated header"));
    }
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&bytes[offset..end]);
    Ok(u64::from_le_bytes(buf))
}

fn values_at(path: &Path, bytes: &[u8], offset: usize, count: usize) -> Result<Vec<f64>> {
    let need = offset + count * 8;
    if bytes.len() != need {
        return Err(CliError::format(
            path,
            format!("expected {need} bytes, found {}", bytes.len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for k in 0..count {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[offset + k * 8..offset + (k + 1) * 8]);
        values.push(f64::from_le_bytes(buf));
    }
    Ok(values)
}

pub fn save_matrix_binary(path: &Path, matrix: &FeatureMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(24 + matrix.values().len() * 8);
    bytes.extend_from_slice(MATRIX_MAGIC);
    bytes.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(matrix.cols() as u64).to_le_bytes());
    for v in matrix.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &bytes)
}

pub fn load_matrix_binary(path: &Path) -> Result<FeatureMatrix> {
    let bytes = read_bytes(path)?;
    if bytes.len() < 8 || &bytes[..8] != MATRIX_MAGIC {
        return Err(CliError::format(path, "missing MTDLMAT1 magic"));
    }
    let rows = u64_at(path, &bytes, 8)? as usize;
    let cols = u64_at(path, &bytes, 16)? as usize;
    let values = values_at(path, &bytes, 24, rows.saturating_mul(cols))?;
    Ok(FeatureMatrix::from_vec(rows, cols, values)?)
}

pub fn save_matrix_csv(path: &Path, matrix: &FeatureMatrix) -> Result<()> {
    let mut text = String::new();
    for j in 0..matrix.cols() {
        let row: Vec<String> = matrix.col(j).iter().map(|&v| fmt_f64(v)).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn load_matrix_csv(path: &Path) -> Result<FeatureMatrix> {
    let text = read_text(path)?;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split(',').collect();
        // An optional header is any first line that does not parse.
        if columns.is_empty() && lineno == 0 && tokens.iter().any(|t| t.trim().parse::<f64>().is_err())
        {
            continue;
        }
        let mut column = Vec::with_capacity(tokens.len());
        for token in tokens {
            column.push(parse_f64(path, lineno + 1, token)?);
        }
        columns.push(column);
    }
    if columns.is_empty() {
        return Err(CliError::format(path, "no samples in CSV matrix"));
    }
    FeatureMatrix::from_columns(&columns)
        .map_err(|e| CliError::format(path, e.to_string()))
}

/// Saves by extension: `.csv` writes text, anything else the binary format.
pub fn save_matrix(path: &Path, matrix: &FeatureMatrix) -> Result<()> {
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        save_matrix_csv(path, matrix)
    } else {
        save_matrix_binary(path, matrix)
    }
}

/// Loads by sniffing the magic bytes, falling back to CSV.
pub fn load_matrix(path: &Path) -> Result<FeatureMatrix> {
    let bytes = read_bytes(path)?;
    if bytes.len() >= 8 && &bytes[..8] == MATRIX_MAGIC {
        load_matrix_binary(path)
    } else {
        load_matrix_csv(path)
    }
}

pub fn save_dictionary(path: &Path, dict: &Dictionary) -> Result<()> {
    let matrix = dict.to_matrix();
    let mut bytes = Vec::with_capacity(32 + matrix.values().len() * 8);
    bytes.extend_from_slice(DICT_MAGIC);
    bytes.extend_from_slice(&(dict.feature_dim() as u64).to_le_bytes());
    bytes.extend_from_slice(&(dict.shared_cols() as u64).to_le_bytes());
    bytes.extend_from_slice(&(dict.individual_cols() as u64).to_le_bytes());
    for v in matrix.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &bytes)
}

pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    let bytes = read_bytes(path)?;
    if bytes.len() < 8 || &bytes[..8] != DICT_MAGIC {
        return Err(CliError::format(path, "missing MTDLDIC1 magic"));
    }
    let p = u64_at(path, &bytes, 8)? as usize;
    let shared = u64_at(path, &bytes, 16)? as usize;
    let individual = u64_at(path, &bytes, 24)? as usize;
    let values = values_at(path, &bytes, 32, p.saturating_mul(shared + individual))?;
    Dictionary::new(p, shared, individual, values)
        .map_err(|e| CliError::format(path, e.to_string()))
}

/// One subject identifier per line; line i names the owner of patch i.
pub fn save_grouping(path: &Path, grouping: &PatchGrouping) -> Result<()> {
    let mut text = String::new();
    for i in 0..grouping.patch_count() {
        text.push_str(grouping.subject_of(i));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn load_grouping(path: &Path) -> Result<PatchGrouping> {
    let text = read_text(path)?;
    let mut subjects = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let id = line.trim();
        if id.is_empty() {
            return Err(CliError::parse(path, lineno + 1, "empty subject identifier"));
        }
        if id.contains(',') {
            return Err(CliError::parse(path, lineno + 1, "subject identifiers must not contain commas"));
        }
        subjects.push(id.to_string());
    }
    PatchGrouping::new(subjects).map_err(|e| CliError::format(path, e.to_string()))
}

/// Target column names plus one `(subject, values)` row per subject.
pub type TargetTable = (Vec<String>, Vec<(String, Vec<f64>)>);

/// Targets CSV: header `subject,<name>...`, one row per subject.
pub fn save_targets(
    path: &Path,
    names: &[String],
    rows: &[(String, Vec<f64>)],
) -> Result<()> {
    let mut text = format!("subject,{}\n", names.join(","));
    for (subject, values) in rows {
        let formatted: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
        text.push_str(&format!("{subject},{}\n", formatted.join(",")));
    }
    write_text(path, &text)
}

pub fn load_targets(path: &Path) -> Result<TargetTable> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::format(path, "empty targets file"))?;
    let mut fields = header.split(',');
    if fields.next().map(str::trim) != Some("subject") {
        return Err(CliError::format(path, "targets header must start with 'subject'"));
    }
    let names: Vec<String> = fields.map(|f| f.trim().to_string()).collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(CliError::format(path, "targets header names a blank column"));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let subject = fields
            .next()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| CliError::parse(path, lineno + 1, "missing subject"))?;
        let values: Vec<f64> = fields
            .map(|f| parse_f64(path, lineno + 1, f))
            .collect::<Result<_>>()?;
        if values.len() != names.len() {
            return Err(CliError::parse(
                path,
                lineno + 1,
                format!("{} values for {} target columns", values.len(), names.len()),
            ));
        }
        rows.push((subject.to_string(), values));
    }
    if rows.is_empty() {
        return Err(CliError::format(path, "no target rows"));
    }
    Ok((names, rows))
}

/// Feature table CSV: header `subject,f0,...`, one row per subject.
pub fn save_feature_table(path: &Path, table: &SubjectFeatureTable) -> Result<()> {
    let dim = table.feature_dim();
    let header: Vec<String> = (0..dim).map(|k| format!("f{k}")).collect();
    let mut text = format!("subject,{}\n", header.join(","));
    for (subject, features) in table.subjects.iter().zip(&table.features) {
        let formatted: Vec<String> = features.iter().map(|&v| fmt_f64(v)).collect();
        text.push_str(&format!("{subject},{}\n", formatted.join(",")));
    }
    write_text(path, &text)
}

pub fn load_feature_table(path: &Path) -> Result<SubjectFeatureTable> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::format(path, "empty feature table"))?;
    if header.split(',').next().map(str::trim) != Some("subject") {
        return Err(CliError::format(path, "feature table header must start with 'subject'"));
    }
    let dim = header.split(',').count() - 1;
    let mut subjects = Vec::new();
    let mut features = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let subject = fields
            .next()
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| CliError::parse(path, lineno + 1, "missing subject"))?;
        let row: Vec<f64> = fields
            .map(|f| parse_f64(path, lineno + 1, f))
            .collect::<Result<_>>()?;
        if row.len() != dim {
            return Err(CliError::parse(
                path,
                lineno + 1,
                format!("{} features, header promises {dim}", row.len()),
            ));
        }
        subjects.push(subject.to_string());
        features.push(row);
    }
    if subjects.is_empty() {
        return Err(CliError::format(path, "no feature rows"));
    }
    Ok(SubjectFeatureTable { subjects, features, targets: Vec::new() })
}

/// One aggregated result line: metric, task, mean, std.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub metric: String,
    pub task: String,
    pub mean: f64,
    pub std: f64,
}

pub fn save_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut text = String::from("metric,task,mean,std\n");
    for row in rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.metric,
            row.task,
            fmt_f64(row.mean),
            fmt_f64(row.std)
        ));
    }
    write_text(path, &text)
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "metric,task,mean,std" => {}
        _ => return Err(CliError::format(path, "missing results header")),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::parse(path, lineno + 1, "expected 4 fields"));
        }
        rows.push(ResultRow {
            metric: fields[0].to_string(),
            task: fields[1].to_string(),
            mean: parse_f64(path, lineno + 1, fields[2])?,
            std: parse_f64(path, lineno + 1, fields[3])?,
        });
    }
    Ok(rows)
}

/// Buffered line writer for the larger per-repeat tables.
pub struct CsvWriter {
    inner: BufWriter<fs::File>,
    path: std::path::PathBuf,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| CliError::io(path, e))?;
            }
        }
        let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut writer = Self { inner: BufWriter::new(file), path: path.to_path_buf() };
        writer.line(header)?;
        Ok(writer)
    }

    pub fn line(&mut self, line: &str) -> Result<()> {
        writeln!(self.inner, "{line}").map_err(|e| CliError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| CliError::io(&self.path, e))
    }
}
