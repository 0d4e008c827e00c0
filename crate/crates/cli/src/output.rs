//! Atomic file output, structured stderr events and the small tab-separated
//! formats owned by the CLI.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use serde_json::json;

use qe_core::corpus::{ErrorSpan, WordTags};
use qe_core::{QeError, Result};

/// Writes through a temp file in the destination directory, then renames.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| QeError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| QeError::io(dir, e))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf)?;
        buf.flush().map_err(|e| QeError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| QeError::io(path, e.error))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

/// Line-delimited JSON events on stderr.
pub struct EventLog {
    command: &'static str,
    started: Instant,
}

impl EventLog {
    pub fn start(command: &'static str) -> Self {
        EventLog { command, started: Instant::now() }
    }

    pub fn emit(&self, event: &str, fields: serde_json::Value) {
        let mut obj = json!({
            "event": event,
            "stage": self.command,
            "wall_ms": self.started.elapsed().as_millis() as u64,
        });
        if let (Some(o), serde_json::Value::Object(extra)) = (obj.as_object_mut(), fields) {
            o.extend(extra);
        }
        eprintln!("{obj}");
    }
}

fn parse_lines<T>(
    path: &Path,
    mut parse: impl FnMut(&str, &[&str]) -> std::result::Result<T, String>,
) -> Result<Vec<(String, T)>> {
    let file = std::fs::File::open(path).map_err(|e| QeError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| QeError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let value = parse(fields[0], &fields[1..]).map_err(|message| QeError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        out.push((fields[0].to_string(), value));
    }
    Ok(out)
}

/// `id<TAB>start:end:severity<TAB>...`
pub fn write_spans(w: &mut dyn Write, rows: &[(String, Vec<ErrorSpan>)]) -> Result<()> {
    for (id, spans) in rows {
        write!(w, "{id}")?;
        for s in spans {
            write!(w, "\t{s}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_spans(path: &Path) -> Result<Vec<(String, Vec<ErrorSpan>)>> {
    parse_lines(path, |_, rest| {
        rest.iter().filter(|f| !f.is_empty()).map(|f| f.parse::<ErrorSpan>().map_err(|e| e.to_string())).collect()
    })
}

/// `id<TAB>OK BAD ...`
pub fn write_tags(w: &mut dyn Write, rows: &[(String, WordTags)]) -> Result<()> {
    for (id, tags) in rows {
        writeln!(w, "{id}\t{tags}")?;
    }
    Ok(())
}

pub fn read_tags(path: &Path) -> Result<Vec<(String, WordTags)>> {
    parse_lines(path, |_, rest| match rest {
        [tags] => tags.parse::<WordTags>().map_err(|e| e.to_string()),
        _ => Err(format!("expected 2 tab-separated fields, found {}", rest.len() + 1)),
    })
}

/// Reorders `rows` to follow `ids`; every id must be present exactly once.
pub fn align_by_id<T>(ids: &[&str], rows: Vec<(String, T)>, what: &str) -> Result<Vec<T>> {
    let mut by_id: HashMap<String, T> = HashMap::with_capacity(rows.len());
    for (id, v) in rows {
        if by_id.insert(id.clone(), v).is_some() {
            return Err(QeError::validation(id, format!("duplicate id in {what}")));
        }
    }
    let out = ids
        .iter()
        .map(|id| by_id.remove(*id).ok_or_else(|| QeError::validation(*id, format!("missing from {what}"))))
        .collect::<Result<Vec<_>>>()?;
    if let Some(extra) = by_id.keys().min() {
        return Err(QeError::validation(extra.clone(), format!("{what} has a record not in the gold data")));
    }
    Ok(out)
}
