//! Counter snapshots and memory-bounded counting.
//!
//! Layout (all little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 0..4  | magic `NGCT` |
//! | 4..6  | version (`u16`, currently 1) |
//! | 6..8  | order (`u16`) |
//! | 8..16 | entry count (`u64`) |
//! | 16..  | `entry count` pairs of (`packed_key: u64`, `count: u64`), keys strictly ascending |
//! | last 16 | trailer: `total_tokens_seen: u64`, `documents: u64` |
//!
//! [`ExternalCounter`] keeps at most a fixed number of distinct grams in
//! memory, spills sorted runs in this same format, and k-way merges them.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use super::{check_order, check_tokens, check_vocab, KeyMap, NgramCounter, NgramError};
use crate::report::write_atomic;

pub const MAGIC: &[u8; 4] = b"NGCT";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

fn write_header<W: Write + ?Sized>(w: &mut W, order: usize, entries: u64) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(order as u16).to_le_bytes())?;
    w.write_all(&entries.to_le_bytes())
}

fn write_pair<W: Write + ?Sized>(w: &mut W, a: u64, b: u64) -> io::Result<()> {
    w.write_all(&a.to_le_bytes())?;
    w.write_all(&b.to_le_bytes())
}

/// Serializes `counter` into `w`.
pub fn encode_snapshot<W: Write + ?Sized>(w: &mut W, counter: &NgramCounter) -> io::Result<()> {
    let entries = counter.sorted_entries();
    write_header(w, counter.order(), entries.len() as u64)?;
    for (k, c) in entries {
        write_pair(w, k, c)?;
    }
    write_pair(w, counter.total_tokens_seen(), counter.documents())
}

pub fn write_snapshot(path: &Path, counter: &NgramCounter) -> Result<(), NgramError> {
    write_atomic(path, |w| encode_snapshot(w, counter))?;
    Ok(())
}

/// Sequential reader over the entries of one snapshot.
pub struct SnapshotEntries<R> {
    inner: R,
    order: usize,
    remaining: u64,
    last_key: Option<u64>,
    read: u64,
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl<R: Read> SnapshotEntries<R> {
    pub fn open(mut inner: R) -> Result<Self, NgramError> {
        let mut h = [0u8; HEADER_LEN];
        inner
            .read_exact(&mut h)
            .map_err(|_| NgramError::Format("snapshot shorter than its 16-byte header".into()))?;
        if &h[0..4] != MAGIC {
            return Err(NgramError::Format("bad snapshot magic".into()));
        }
        let version = u16::from_le_bytes([h[4], h[5]]);
        if version != VERSION {
            return Err(NgramError::Format(format!("unsupported snapshot version {version}")));
        }
        let order = u16::from_le_bytes([h[6], h[7]]) as usize;
        check_order(order)?;
        let remaining = u64::from_le_bytes(h[8..16].try_into().expect("8 bytes"));
        Ok(SnapshotEntries {
            inner,
            order,
            remaining,
            last_key: None,
            read: 0,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn entry_count(&self) -> u64 {
        self.read + self.remaining
    }

    pub fn next_entry(&mut self) -> Result<Option<(u64, u64)>, NgramError> {
        if self.remaining == 0 {
            return Ok(None);
        }
        let offset = HEADER_LEN as u64 + 16 * self.read;
        let key = read_u64(&mut self.inner)
            .map_err(|_| NgramError::Format(format!("truncated snapshot entry at byte offset {offset}")))?;
        let count = read_u64(&mut self.inner)
            .map_err(|_| NgramError::Format(format!("truncated snapshot entry at byte offset {offset}")))?;
        if self.last_key.is_some_and(|k| k >= key) {
            return Err(NgramError::Format(format!(
                "snapshot keys not strictly ascending at byte offset {offset}"
            )));
        }
        self.last_key = Some(key);
        self.remaining -= 1;
        self.read += 1;
        Ok(Some((key, count)))
    }

    /// Reads the trailer once all entries are consumed and checks that
    /// nothing follows it.
    pub fn finish(mut self) -> Result<(u64, u64), NgramError> {
        while self.next_entry()?.is_some() {}
        let total = read_u64(&mut self.inner)
            .map_err(|_| NgramError::Format("snapshot trailer missing".into()))?;
        let docs = read_u64(&mut self.inner)
            .map_err(|_| NgramError::Format("snapshot trailer missing".into()))?;
        let mut probe = [0u8; 1];
        if self.inner.read(&mut probe)? != 0 {
            return Err(NgramError::Format("trailing bytes after snapshot trailer".into()));
        }
        Ok((total, docs))
    }
}

pub fn decode_snapshot<R: Read>(r: R) -> Result<NgramCounter, NgramError> {
    let mut entries = SnapshotEntries::open(r)?;
    let order = entries.order();
    let mut counts = KeyMap::default();
    counts.reserve(entries.entry_count().min(1 << 24) as usize);
    while let Some((k, c)) = entries.next_entry()? {
        counts.insert(k, c);
    }
    let (total, docs) = entries.finish()?;
    Ok(NgramCounter::from_parts(order, counts, total, docs))
}

pub fn read_snapshot(path: &Path) -> Result<NgramCounter, NgramError> {
    let f = File::open(path).map_err(|e| NgramError::Format(format!("{}: {e}", path.display())))?;
    decode_snapshot(BufReader::new(f))
}

/// Counting with a cap on distinct in-memory grams; overflow is spilled to
/// sorted runs and merged on [`finish`](ExternalCounter::finish).
pub struct ExternalCounter {
    vocab_size: u32,
    budget: usize,
    current: NgramCounter,
    spill_dir: tempfile::TempDir,
    runs: Vec<PathBuf>,
    total_tokens_seen: u64,
    documents: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnapshotSummary {
    pub order: usize,
    pub entries: u64,
    pub total_tokens_seen: u64,
    pub documents: u64,
    pub runs_spilled: usize,
}

impl ExternalCounter {
    /// `budget` is the maximum number of distinct grams held before a spill.
    pub fn new(order: usize, vocab_size: u32, budget: usize) -> Result<Self, NgramError> {
        check_vocab(order, vocab_size)?;
        Ok(ExternalCounter {
            vocab_size,
            budget: budget.max(1),
            current: NgramCounter::new(order)?,
            spill_dir: tempfile::tempdir()?,
            runs: Vec::new(),
            total_tokens_seen: 0,
            documents: 0,
        })
    }

    pub fn add_document(&mut self, doc: &[u32]) -> Result<(), NgramError> {
        check_tokens(doc, self.vocab_size, self.documents)?;
        self.current.add_document_unchecked(doc);
        self.documents += 1;
        self.total_tokens_seen += doc.len() as u64;
        if self.current.len() >= self.budget {
            self.spill()?;
        }
        Ok(())
    }

    fn spill(&mut self) -> Result<(), NgramError> {
        if self.current.is_empty() {
            return Ok(());
        }
        let path = self.spill_dir.path().join(format!("run-{:05}.ngct", self.runs.len()));
        let mut w = BufWriter::new(File::create(&path)?);
        let entries = self.current.sorted_entries();
        write_header(&mut w, self.current.order(), entries.len() as u64)?;
        for (k, c) in entries {
            write_pair(&mut w, k, c)?;
        }
        write_pair(&mut w, 0, 0)?;
        w.flush()?;
        self.runs.push(path);
        self.current.clear_counts();
        Ok(())
    }

    pub fn runs_spilled(&self) -> usize {
        self.runs.len()
    }

    /// Merges all runs with the in-memory remainder into a snapshot at `out`.
    pub fn finish(mut self, out: &Path) -> Result<SnapshotSummary, NgramError> {
        let order = self.current.order();
        let runs_spilled = self.runs.len();
        if !self.runs.is_empty() {
            self.spill()?;
        }
        let dir = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        let entries = {
            let mut w = BufWriter::new(tmp.as_file_mut());
            write_header(&mut w, order, 0)?;
            let n = if self.runs.is_empty() {
                let entries = self.current.sorted_entries();
                for &(k, c) in &entries {
                    write_pair(&mut w, k, c)?;
                }
                entries.len() as u64
            } else {
                merge_runs(&self.runs, &mut w)?
            };
            write_pair(&mut w, self.total_tokens_seen, self.documents)?;
            w.flush()?;
            n
        };
        let f = tmp.as_file_mut();
        f.seek(SeekFrom::Start(8))?;
        f.write_all(&entries.to_le_bytes())?;
        f.sync_all()?;
        tmp.persist(out).map_err(|e| e.error)?;
        Ok(SnapshotSummary {
            order,
            entries,
            total_tokens_seen: self.total_tokens_seen,
            documents: self.documents,
            runs_spilled,
        })
    }
}

/// k-way merge of sorted runs, summing counts of equal keys. Returns the
/// number of merged entries written.
fn merge_runs<W: Write>(runs: &[PathBuf], w: &mut W) -> Result<u64, NgramError> {
    let mut readers = runs
        .iter()
        .map(|p| SnapshotEntries::open(BufReader::new(File::open(p)?)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut heap = BinaryHeap::new();
    for (i, r) in readers.iter_mut().enumerate() {
        if let Some((k, c)) = r.next_entry()? {
            heap.push(Reverse((k, i, c)));
        }
    }
    let mut written = 0u64;
    let mut pending: Option<(u64, u64)> = None;
    while let Some(Reverse((k, i, c))) = heap.pop() {
        pending = match pending {
            Some((pk, pc)) if pk == k => Some((pk, pc + c)),
            Some((pk, pc)) => {
                write_pair(w, pk, pc)?;
                written += 1;
                Some((k, c))
            }
            None => Some((k, c)),
        };
        if let Some((nk, nc)) = readers[i].next_entry()? {
            heap.push(Reverse((nk, i, nc)));
        }
    }
    if let Some((pk, pc)) = pending {
        write_pair(w, pk, pc)?;
        written += 1;
    }
    Ok(written)
}
