use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Rows of a headered TSV file, header checked against `columns`.
pub(crate) struct Table {
    pub rows: Vec<(usize, Vec<String>)>,
}

pub(crate) fn read(path: &Path, columns: &[&str]) -> Result<Table> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = match lines.next() {
        Some((_, h)) => h.split('\t').map(str::trim).collect(),
        None => {
            return Err(Error::Format {
                path: path.into(),
                line: 1,
                msg: "empty file".into(),
            })
        }
    };
    if header != columns {
        return Err(Error::Format {
            path: path.into(),
            line: 1,
            msg: format!("expected header {:?}, found {:?}", columns, header),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(|f| f.trim().to_string()).collect();
        if fields.len() != columns.len() {
            return Err(Error::Format {
                path: path.into(),
                line: i + 1,
                msg: format!("expected {} fields, found {}", columns.len(), fields.len()),
            });
        }
        rows.push((i + 1, fields));
    }
    Ok(Table { rows })
}

pub(crate) fn write(path: &Path, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = columns.join("\t");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Format {
        path: path.into(),
        line,
        msg: format!("bad {name} value {value:?}"),
    })
}
