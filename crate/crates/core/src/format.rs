//! On-disk dataset formats.
//!
//! Text (line oriented):
//!
//! ```text
//! gdro v1 <m> <dim> <label_kind>
//! group <i> <n_i>
//! <label> <f_1> ... <f_dim>        (n_i lines)
//! ...
//! ```
//!
//! Groups are numbered from 0 and must appear in order. Floats are written in
//! shortest round-trip form, so text files reload bit-exactly.
//!
//! Binary, all integers and floats little-endian:
//!
//! ```text
//! b"GDR1" | m: u64 | dim: u64 | kind: u8 (0 binary, 1 multiclass) | classes: u64
//! per group: n_i: u64, then n_i records of (label: i64, features: dim x f64)
//! ```

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::dataset::{DatasetError, Group, GroupedDataset, LabelKind};

pub const BINARY_MAGIC: &[u8; 4] = b"GDR1";
const TEXT_MAGIC: &str = "gdro";
const TEXT_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Binary,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Format::Text),
            "binary" => Ok(Format::Binary),
            _ => Err(format!("unknown format {s:?} (expected `text` or `binary`)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("group-count mismatch: {0}")]
    GroupCountMismatch(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub fn save_dataset(ds: &GroupedDataset, path: &Path, format: Format) -> Result<(), FormatError> {
    let bytes = match format {
        Format::Text => to_text(ds).into_bytes(),
        Format::Binary => to_binary(ds),
    };
    fs::write(path, bytes)?;
    Ok(())
}

/// Loads either format, detected from the leading magic bytes.
pub fn load_dataset(path: &Path) -> Result<GroupedDataset, FormatError> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        from_binary(&bytes)
    } else {
        from_text(BufReader::new(bytes.as_slice()))
    }
}

pub fn to_text(ds: &GroupedDataset) -> String {
    let mut out = String::new();
    out.push_str(&format!("{TEXT_MAGIC} {TEXT_VERSION} {} {} {}\n", ds.m(), ds.dim(), ds.label_kind()));
    for i in 0..ds.m() {
        out.push_str(&format!("group {i} {}\n", ds.group_size(i)));
        for j in 0..ds.group_size(i) {
            out.push_str(&ds.y(i, j).to_string());
            for v in ds.x(i, j) {
                out.push(' ');
                out.push_str(&format!("{v:?}"));
            }
            out.push('\n');
        }
    }
    out
}

struct Lines<R> {
    inner: io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    /// Next non-blank line with its 1-based number.
    fn next(&mut self) -> Result<Option<(usize, String)>, FormatError> {
        for line in self.inner.by_ref() {
            self.line_no += 1;
            let line = line?;
            if !line.trim().is_empty() {
                return Ok(Some((self.line_no, line)));
            }
        }
        Ok(None)
    }
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize, FormatError> {
    tok.parse().map_err(|_| FormatError::Parse { line, msg: format!("invalid {what} {tok:?}") })
}

pub fn from_text<R: BufRead>(reader: R) -> Result<GroupedDataset, FormatError> {
    let mut lines = Lines { inner: reader.lines(), line_no: 0 };
    let (_, header) = lines.next()?.ok_or_else(|| FormatError::MalformedHeader("empty file".into()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 5 || toks[0] != TEXT_MAGIC || toks[1] != TEXT_VERSION {
        return Err(FormatError::MalformedHeader(format!(
            "expected `{TEXT_MAGIC} {TEXT_VERSION} <m> <dim> <label_kind>`, got {header:?}"
        )));
    }
    let bad = |what: &str| FormatError::MalformedHeader(format!("invalid {what} in {header:?}"));
    let m: usize = toks[2].parse().map_err(|_| bad("group count"))?;
    let dim: usize = toks[3].parse().map_err(|_| bad("dimension"))?;
    let kind: LabelKind = toks[4].parse().map_err(FormatError::MalformedHeader)?;

    let mut groups = Vec::with_capacity(m);
    let mut pending = lines.next()?;
    for i in 0..m {
        let (ln, line) = pending.ok_or_else(|| {
            FormatError::Truncated(format!("header declares {m} groups, file ends after {i}"))
        })?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 || toks[0] != "group" {
            return Err(FormatError::Parse { line: ln, msg: format!("expected `group {i} <n_i>`, got {line:?}") });
        }
        let idx = parse_usize(toks[1], ln, "group index")?;
        if idx != i {
            return Err(FormatError::Parse { line: ln, msg: format!("expected group {i}, found group {idx}") });
        }
        let n = parse_usize(toks[2], ln, "group size")?;
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        pending = lines.next()?;
        while let Some((ln, line)) = &pending {
            if line.trim_start().starts_with("group") {
                break;
            }
            if labels.len() == n {
                return Err(FormatError::GroupCountMismatch(format!(
                    "group {i} declares {n} samples but has more (line {ln})"
                )));
            }
            let mut toks = line.split_whitespace();
            let label_tok = toks.next().unwrap_or_default();
            let label: i64 = label_tok
                .parse()
                .map_err(|_| FormatError::Parse { line: *ln, msg: format!("invalid label {label_tok:?}") })?;
            let before = features.len();
            for tok in toks {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| FormatError::Parse { line: *ln, msg: format!("invalid feature {tok:?}") })?;
                features.push(v);
            }
            if features.len() - before != dim {
                return Err(FormatError::Parse {
                    line: *ln,
                    msg: format!("expected {dim} features, found {}", features.len() - before),
                });
            }
            labels.push(label);
            pending = lines.next()?;
        }
        if labels.len() != n {
            return Err(FormatError::GroupCountMismatch(format!(
                "group {i} declares {n} samples but has {}",
                labels.len()
            )));
        }
        groups.push(Group::new(features, labels));
    }
    if let Some((ln, _)) = pending {
        return Err(FormatError::GroupCountMismatch(format!(
            "header declares {m} groups but line {ln} starts another"
        )));
    }
    Ok(GroupedDataset::new(dim, kind, groups)?)
}

pub fn to_binary(ds: &GroupedDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(37 + ds.total() * (8 + 8 * ds.dim()) + 8 * ds.m());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(ds.m() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.dim() as u64).to_le_bytes());
    let (tag, classes) = match ds.label_kind() {
        LabelKind::Binary => (0u8, 2u64),
        LabelKind::Multiclass { classes } => (1u8, classes as u64),
    };
    out.push(tag);
    out.extend_from_slice(&classes.to_le_bytes());
    for i in 0..ds.m() {
        out.extend_from_slice(&(ds.group_size(i) as u64).to_le_bytes());
        for j in 0..ds.group_size(i) {
            out.extend_from_slice(&ds.y(i, j).to_le_bytes());
            for v in ds.x(i, j) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N], FormatError> {
        let end = self.pos + N;
        if end > self.buf.len() {
            return Err(FormatError::Truncated(format!("while reading {what} at byte {}", self.pos)));
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..end]);
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take::<8>(what)?))
    }
}

pub fn from_binary(bytes: &[u8]) -> Result<GroupedDataset, FormatError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur
        .take::<4>("magic")
        .map_err(|_| FormatError::MalformedHeader("file shorter than the magic bytes".into()))?;
    if &magic != BINARY_MAGIC {
        return Err(FormatError::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let m = cur.u64("group count")? as usize;
    let dim = cur.u64("dimension")? as usize;
    let tag = cur.take::<1>("label kind")?[0];
    let classes = cur.u64("class count")? as usize;
    let kind = match tag {
        0 => LabelKind::Binary,
        1 if classes >= 2 => LabelKind::Multiclass { classes },
        _ => return Err(FormatError::MalformedHeader(format!("bad label kind tag {tag} / {classes} classes"))),
    };
    let mut groups = Vec::new();
    for i in 0..m {
        let n = cur.u64(&format!("size of group {i}"))? as usize;
        let record = 8 + 8 * dim;
        let need = n.checked_mul(record).unwrap_or(usize::MAX);
        if need > bytes.len() - cur.pos {
            return Err(FormatError::Truncated(format!(
                "group {i} declares {n} samples, only {} bytes remain",
                bytes.len() - cur.pos
            )));
        }
        let mut features = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(i64::from_le_bytes(cur.take::<8>("label")?));
            for _ in 0..dim {
                features.push(f64::from_le_bytes(cur.take::<8>("feature")?));
            }
        }
        groups.push(Group::new(features, labels));
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::GroupCountMismatch(format!(
            "{} trailing bytes after the {m} declared groups",
            bytes.len() - cur.pos
        )));
    }
    Ok(GroupedDataset::new(dim, kind, groups)?)
}

/// Reads a whole text dataset from any reader.
pub fn read_text<R: Read>(r: R) -> Result<GroupedDataset, FormatError> {
    from_text(BufReader::new(r))
}

/// Writes the text form to any writer.
pub fn write_text<W: Write>(ds: &GroupedDataset, mut w: W) -> Result<(), FormatError> {
    w.write_all(to_text(ds).as_bytes())?;
    Ok(())
}
