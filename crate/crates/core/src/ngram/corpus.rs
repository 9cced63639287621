//! Binary token corpus: little-endian `u32` token ids with documents
//! terminated by the sentinel `0xFFFFFFFF`. A sidecar text file next to the
//! corpus (`<corpus>.hdr`) holds `key=value` lines and must name
//! `vocab_size`.

use std::fs::File;
use std::io::{self, BufReader, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use super::NgramError;
use crate::report::write_atomic;

pub const DOC_SENTINEL: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusHeader {
    pub vocab_size: u32,
}

pub fn header_path(corpus: &Path) -> PathBuf {
    let mut s = corpus.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

pub fn parse_corpus_header(text: &str) -> Result<CorpusHeader, NgramError> {
    let mut vocab = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| NgramError::Format(format!("header line {}: expected key=value", i + 1)))?;
        if k.trim() == "vocab_size" {
            let n: u32 = v.trim().parse().map_err(|_| {
                NgramError::Format(format!("header line {}: bad vocab_size {:?}", i + 1, v.trim()))
            })?;
            if n < 2 || n == DOC_SENTINEL {
                return Err(NgramError::Format(format!("header line {}: vocab_size {n} out of range", i + 1)));
            }
            vocab = Some(n);
        }
    }
    vocab
        .map(|vocab_size| CorpusHeader { vocab_size })
        .ok_or_else(|| NgramError::Format("header does not name vocab_size".into()))
}

pub fn read_corpus_header(corpus: &Path) -> Result<CorpusHeader, NgramError> {
    let p = header_path(corpus);
    let text = std::fs::read_to_string(&p)
        .map_err(|e| NgramError::Format(format!("{}: {e}", p.display())))?;
    parse_corpus_header(&text)
}

/// Streams documents out of a corpus byte stream.
pub struct CorpusReader<R> {
    inner: R,
    offset: u64,
    done: bool,
}

impl<R: Read> CorpusReader<R> {
    pub fn new(inner: R) -> Self {
        CorpusReader {
            inner,
            offset: 0,
            done: false,
        }
    }

    /// Byte offset of the next unread token.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn read_token(&mut self) -> Result<Option<u32>, NgramError> {
        let mut buf = [0u8; 4];
        let mut filled = 0;
        while filled < 4 {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        match filled {
            0 => Ok(None),
            4 => {
                self.offset += 4;
                Ok(Some(u32::from_le_bytes(buf)))
            }
            n => Err(NgramError::Format(format!(
                "truncated token at byte offset {} ({n} trailing bytes)",
                self.offset
            ))),
        }
    }
}

impl<R: Read> Iterator for CorpusReader<R> {
    type Item = Result<Vec<u32>, NgramError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut doc = Vec::new();
        let mut any = false;
        loop {
            match self.read_token() {
                Ok(Some(DOC_SENTINEL)) => return Some(Ok(doc)),
                Ok(Some(t)) => {
                    any = true;
                    doc.push(t);
                }
                Ok(None) => {
                    self.done = true;
                    // An unterminated final document still counts.
                    return if any { Some(Ok(doc)) } else { None };
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

/// Opens a corpus file and its header.
pub fn read_corpus(path: &Path) -> Result<(CorpusHeader, CorpusReader<BufReader<File>>), NgramError> {
    let header = read_corpus_header(path)?;
    let f = File::open(path).map_err(|e| NgramError::Format(format!("{}: {e}", path.display())))?;
    Ok((header, CorpusReader::new(BufReader::new(f))))
}

/// Reads every document into memory.
pub fn load_corpus(path: &Path) -> Result<(CorpusHeader, Vec<Vec<u32>>), NgramError> {
    let (h, r) = read_corpus(path)?;
    let docs = r.collect::<Result<Vec<_>, _>>()?;
    Ok((h, docs))
}

pub fn encode_documents<W: Write + ?Sized, D: AsRef<[u32]>>(out: &mut W, docs: &[D]) -> io::Result<()> {
    for d in docs {
        for &t in d.as_ref() {
            out.write_all(&t.to_le_bytes())?;
        }
        out.write_all(&DOC_SENTINEL.to_le_bytes())?;
    }
    Ok(())
}

/// Writes a corpus and its header atomically.
pub fn write_corpus<D: AsRef<[u32]>>(path: &Path, docs: &[D], vocab_size: u32) -> Result<(), NgramError> {
    if let Some((d, p, &t)) = docs
        .iter()
        .enumerate()
        .find_map(|(d, doc)| doc.as_ref().iter().enumerate().find(|(_, &t)| t >= vocab_size).map(|(p, t)| (d, p, t)))
    {
        return Err(NgramError::TokenOutOfRange {
            token: t,
            vocab_size,
            document: d as u64,
            position: p,
        });
    }
    write_atomic(path, |w| encode_documents(w, docs))?;
    write_atomic(&header_path(path), |w| writeln!(w, "vocab_size={vocab_size}"))?;
    Ok(())
}
