//! Loading inputs with errors that name the flag or the file position.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use memscope::ngram::{read_snapshot, NgramCounter};
use memscope::trace::{read_trace_stream, TraceSet};

use crate::Failure;

pub fn require_file(flag: &str, path: &Path) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Config(format!("{flag}: no such file: {}", path.display())))
    }
}

/// Reads a whole trace file; the first bad line aborts with `file:line`.
pub fn load_traces(flag: &str, path: &Path) -> Result<TraceSet, Failure> {
    require_file(flag, path)?;
    let file = File::open(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut traces = Vec::new();
    for item in read_trace_stream(BufReader::new(file)) {
        match item {
            Ok(t) => traces.push(t),
            Err(e) => {
                // The error text already starts with "line N:" when it has one.
                return Err(Failure::Data(format!("{}: {e}", path.display())));
            }
        }
    }
    TraceSet::new(traces).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

pub fn load_trace_files(flag: &str, paths: &[impl AsRef<Path>]) -> Result<Vec<TraceSet>, Failure> {
    for p in paths {
        require_file(flag, p.as_ref())?;
    }
    paths.iter().map(|p| load_traces(flag, p.as_ref())).collect()
}

pub fn load_counter(flag: &str, path: &Path) -> Result<NgramCounter, Failure> {
    require_file(flag, path)?;
    read_snapshot(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}
