use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::CliError;
use crate::nonparanormal::RawSample;

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parse_float(field: &str, path: &Path, line: u64) -> Result<f64, CliError> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Input(format!("{}:{line}: '{field}' is not a finite number", path.display())))
}

/// Checks a header of the form `id,<prefix>1,...,<prefix>k` and returns `k`.
fn id_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, prefix: &str) -> Result<usize, CliError> {
    let header = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .clone();
    let ok = header.len() >= 2
        && &header[0] == "id"
        && header.iter().skip(1).enumerate().all(|(k, h)| h == format!("{prefix}{}", k + 1));
    if !ok {
        let cols: Vec<&str> = header.iter().collect();
        return Err(CliError::Input(format!(
            "{}: malformed header '{}' (expected id,{prefix}1,...,{prefix}k)",
            path.display(),
            cols.join(",")
        )));
    }
    Ok(header.len() - 1)
}

/// Reads `id,z1..zp`; ids must be unique. Rows keep file order.
pub fn read_predictors(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut rdr = reader(path)?;
    let p = id_header(path, &mut rdr, "z")?;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |pos| pos.line());
        let id = rec[0].to_string();
        if seen.insert(id.clone(), ()).is_some() {
            return Err(CliError::Input(format!("{}:{line}: duplicate id '{id}'", path.display())));
        }
        let row = (1..=p).map(|k| parse_float(&rec[k], path, line)).collect::<Result<Vec<_>, _>>()?;
        ids.push(id);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{}: no predictor rows", path.display())));
    }
    Ok((ids, rows))
}

/// Reads long-format `id,y1..yd` observations grouped by id.
pub fn read_long_samples(path: &Path) -> Result<HashMap<String, Vec<Vec<f64>>>, CliError> {
    let mut rdr = reader(path)?;
    let d = id_header(path, &mut rdr, "y")?;
    let mut groups: HashMap<String, Vec<Vec<f64>>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |pos| pos.line());
        let row = (1..=d).map(|k| parse_float(&rec[k], path, line)).collect::<Result<Vec<_>, _>>()?;
        groups.entry(rec[0].to_string()).or_default().push(row);
    }
    Ok(groups)
}

/// Matches samples to predictor ids, requiring at least two rows per id.
pub fn samples_for(ids: &[String], mut groups: HashMap<String, Vec<Vec<f64>>>) -> Result<Vec<RawSample>, CliError> {
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let rows = groups
            .remove(id)
            .ok_or_else(|| CliError::Input(format!("id '{id}' has predictors but no samples")))?;
        if rows.len() < 2 {
            return Err(CliError::Input(format!("id '{id}' has {} sample row(s); at least 2 are required", rows.len())));
        }
        out.push(RawSample::from_rows(&rows).map_err(|e| CliError::Input(format!("id '{id}': {e}")))?);
    }
    if let Some(extra) = groups.keys().min() {
        return Err(CliError::Input(format!("id '{extra}' has samples but no predictors")));
    }
    Ok(out)
}

/// Reads a numeric table after a header row, which is skipped.
pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rdr = reader(path)?;
    let width = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .len();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |pos| pos.line());
        if rec.len() != width {
            return Err(CliError::Input(format!("{}:{line}: expected {width} fields", path.display())));
        }
        rows.push(rec.iter().map(|f| parse_float(f, path, line)).collect::<Result<Vec<_>, _>>()?);
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io_err = |e: std::io::Error| CliError::Input(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// `%.12g`-style formatting: 12 significant digits, trailing zeros removed.
pub fn format_sig12(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
