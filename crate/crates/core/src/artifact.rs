//! Versioned line-oriented artifact files.
//!
//! Line 1 is a JSON header carrying the schema name, its version and the
//! resolved configuration that produced the file. Every following line is
//! one JSON record. Floats are written in shortest round-trip form, so a
//! write/read cycle is lossless and repeated runs are byte-identical.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header<H> {
    schema: String,
    version: u32,
    #[serde(flatten)]
    body: H,
}

pub fn encode<H: Serialize, R: Serialize>(schema: &str, version: u32, header: &H, rows: &[R]) -> Result<String> {
    let head = Header { schema: schema.to_owned(), version, body: header };
    let mut out = serde_json::to_string(&head).map_err(|e| parse_err("header", e))?;
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        out.push_str(&serde_json::to_string(row).map_err(|e| parse_err(&format!("row {i}"), e))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn decode<H: DeserializeOwned, R: DeserializeOwned>(schema: &str, version: u32, text: &str) -> Result<(H, Vec<R>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::SchemaMismatch(format!("empty file, expected {schema}")))?;
    let probe: Header<serde_json::Value> = serde_json::from_str(first).map_err(|e| parse_err("line 1", e))?;
    if probe.schema != schema || probe.version != version {
        return Err(Error::SchemaMismatch(format!(
            "expected {schema} v{version}, found {} v{}",
            probe.schema, probe.version
        )));
    }
    let header: Header<H> = serde_json::from_str(first).map_err(|e| parse_err("line 1", e))?;
    let rows = lines
        .map(|(i, line)| serde_json::from_str(line).map_err(|e| parse_err(&format!("line {}", i + 1), e)))
        .collect::<Result<Vec<R>>>()?;
    Ok((header.body, rows))
}

pub fn write<H: Serialize, R: Serialize>(
    path: &Path,
    schema: &str,
    version: u32,
    header: &H,
    rows: &[R],
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(schema, version, header, rows)?)?;
    Ok(())
}

pub fn read<H: DeserializeOwned, R: DeserializeOwned>(path: &Path, schema: &str, version: u32) -> Result<(H, Vec<R>)> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_owned()),
        _ => Error::Io(e),
    })?;
    decode(schema, version, &text).map_err(|e| match e {
        Error::Parse { location, message } => {
            Error::Parse { location: format!("{}:{location}", path.display()), message }
        }
        other => other,
    })
}

fn parse_err(location: &str, e: serde_json::Error) -> Error {
    Error::Parse { location: location.to_owned(), message: e.to_string() }
}
