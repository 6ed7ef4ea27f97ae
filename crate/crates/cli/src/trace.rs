//! JSON-lines trace files: one event object per line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use otm_core::history::{Event, History, HistoryError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("malformed history: {0}")]
    History(#[from] HistoryError),
}

pub fn write_events(mut out: impl Write, h: &History) -> io::Result<()> {
    for e in h.events() {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn to_string(h: &History) -> String {
    let mut buf = Vec::new();
    write_events(&mut buf, h).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn save(path: &Path, h: &History) -> Result<(), TraceError> {
    let io_err = |source| TraceError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    write_events(BufWriter::new(file), h).map_err(io_err)
}

/// Parse a trace; blank lines are skipped, line numbers start at 1.
pub fn read_events(input: impl BufRead) -> Result<History, TraceError> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| TraceError::Parse { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Event = serde_json::from_str(&line).map_err(|e| TraceError::Parse { line: i + 1, message: e.to_string() })?;
        events.push(e);
    }
    let h = History::from_events(events);
    h.validate()?;
    Ok(h)
}

pub fn parse(text: &str) -> Result<History, TraceError> {
    read_events(text.as_bytes())
}

pub fn load(path: &Path) -> Result<History, TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Io { path: path.display().to_string(), source })?;
    read_events(BufReader::new(file))
}
