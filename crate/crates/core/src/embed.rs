//! Vocabulary embedding tables and prompt token sequences.
//!
//! A table holds M labeled rows of dimension D, unit-normalized on
//! construction (norms computed in f64, storage in f32). A prompt is an
//! ordered sequence of L raw token vectors; magnitudes are preserved because
//! downstream encoders are sensitive to them.
//!
//! Two table formats are supported:
//!
//! * text — one `label v1 .. vD` row per line, `#` starts a comment line;
//!   saves print nine significant digits, which round-trips f32 exactly
//! * binary — magic `GROCEEMB`, little-endian throughout
//!
//! Prompts use the binary-only magic `GROCEPRM`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vecmath;

pub const TABLE_MAGIC: &[u8; 8] = b"GROCEEMB";
pub const PROMPT_MAGIC: &[u8; 8] = b"GROCEPRM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Text,
    Binary,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    labels: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
    dim: usize,
}

impl EmbeddingTable {
    /// Builds a table from labeled rows, unit-normalizing each row in f64.
    pub fn from_rows(rows: Vec<(String, Vec<f32>)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::validation("embedding table must hold at least one row"));
        }
        let dim = rows[0].1.len();
        if dim < 2 {
            return Err(Error::validation(format!(
                "embedding dimension must be at least 2, got {dim}"
            )));
        }
        let mut table = EmbeddingTable {
            labels: Vec::with_capacity(rows.len()),
            index: HashMap::with_capacity(rows.len()),
            data: Vec::with_capacity(rows.len() * dim),
            dim,
        };
        for (label, row) in rows {
            table.push_row(label, &row)?;
        }
        Ok(table)
    }

    /// Appends one row, returning its node id. Rejects duplicate labels,
    /// whitespace in labels, zero vectors, and dimension mismatches.
    pub fn push_row(&mut self, label: String, row: &[f32]) -> Result<usize> {
        validate_label(&label)?;
        if row.len() != self.dim {
            return Err(Error::validation(format!(
                "row '{label}' has dimension {}, table has {}",
                row.len(),
                self.dim
            )));
        }
        if self.index.contains_key(&label) {
            return Err(Error::validation(format!("duplicate label '{label}'")));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation(format!(
                "row '{label}' contains a non-finite component"
            )));
        }
        let n = vecmath::norm(row);
        if n == 0.0 {
            return Err(Error::validation(format!(
                "row '{label}' is the zero vector and cannot be normalized"
            )));
        }
        let id = self.labels.len();
        self.data.extend(row.iter().map(|x| (*x as f64 / n) as f32));
        self.index.insert(label.clone(), id);
        self.labels.push(label);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn lookup(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|s| s.as_str())
    }

    /// SHA-256 over the table's canonical binary body. Graph files store this
    /// digest so loaders can detect a table swap.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.len() as u32).to_le_bytes());
        h.update((self.dim as u32).to_le_bytes());
        for label in &self.labels {
            h.update((label.len() as u16).to_le_bytes());
            h.update(label.as_bytes());
        }
        for x in &self.data {
            h.update(x.to_le_bytes());
        }
        h.finalize().into()
    }

    /// Loads a table, sniffing text vs binary from the magic when
    /// `format` is `None`.
    pub fn load(path: &Path, format: Option<TableFormat>) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let format = format.unwrap_or(if bytes.starts_with(TABLE_MAGIC) {
            TableFormat::Binary
        } else {
            TableFormat::Text
        });
        match format {
            TableFormat::Text => Self::parse_text(path, &bytes),
            TableFormat::Binary => Self::parse_binary(path, &bytes),
        }
    }

    fn parse_text(path: &Path, bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| Error::format(format!("{}: not valid UTF-8 text", path.display())))?;
        let mut rows: Vec<(String, Vec<f32>)> = Vec::new();
        let mut dim: Option<usize> = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let label = fields.next().unwrap().to_string();
            let mut row = Vec::with_capacity(dim.unwrap_or(0));
            for f in fields {
                let v: f32 = f.parse().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: line_no,
                    msg: format!("'{f}' is not a number"),
                })?;
                row.push(v);
            }
            match dim {
                None => {
                    if row.len() < 2 {
                        return Err(Error::Parse {
                            path: path.display().to_string(),
                            line: line_no,
                            msg: format!("row has {} components, need at least 2", row.len()),
                        });
                    }
                    dim = Some(row.len());
                }
                Some(d) if row.len() != d => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: line_no,
                        msg: format!("row has {} components, expected {}", row.len(), d),
                    });
                }
                _ => {}
            }
            rows.push((label, row));
        }
        if rows.is_empty() {
            return Err(Error::format(format!(
                "{}: no embedding rows found",
                path.display()
            )));
        }
        Self::from_rows(rows)
    }

    fn parse_binary(path: &Path, bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(path, bytes);
        r.expect_magic(TABLE_MAGIC)?;
        r.expect_version()?;
        let m = r.u32()? as usize;
        let d = r.u32()? as usize;
        if m == 0 || d < 2 {
            return Err(Error::validation(format!(
                "binary table declares {m} rows of dimension {d}; need M >= 1, D >= 2"
            )));
        }
        let mut labels = Vec::with_capacity(m);
        for _ in 0..m {
            labels.push(r.label()?);
        }
        let mut rows = Vec::with_capacity(m);
        for label in labels {
            rows.push((label, r.f32_vec(d)?));
        }
        r.expect_end()?;
        Self::from_rows(rows)
    }

    pub fn save(&self, path: &Path, format: TableFormat) -> Result<()> {
        match format {
            TableFormat::Text => self.save_text(path),
            TableFormat::Binary => self.save_binary(path),
        }
    }

    fn save_text(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, label) in self.labels.iter().enumerate() {
            out.push_str(label);
            for x in self.row(id) {
                // Nine significant digits reconstruct any f32 exactly.
                write!(out, " {x:.8e}").unwrap();
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    fn save_binary(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(TABLE_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for label in &self.labels {
            if label.len() > u16::MAX as usize {
                return Err(Error::validation(format!(
                    "label '{}…' exceeds the 65535-byte format limit",
                    &label[..32]
                )));
            }
            out.extend_from_slice(&(label.len() as u16).to_le_bytes());
            out.extend_from_slice(label.as_bytes());
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn validate_label(label: &str) -> Result<()> {
    if label.is_empty() {
        return Err(Error::validation("empty label"));
    }
    if label.chars().any(char::is_whitespace) {
        return Err(Error::validation(format!(
            "label '{label}' contains whitespace, which the text format cannot represent"
        )));
    }
    Ok(())
}

/// Ordered prompt token vectors. Unlike table rows these are raw: the
/// projection operator preserves magnitude information.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    data: Vec<f32>,
    len: usize,
    dim: usize,
    pub source_labels: Option<Vec<String>>,
}

impl PromptEmbedding {
    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::validation("prompt must hold at least one token"));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::validation("prompt tokens must have at least one component"));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::validation(format!(
                    "token {i} has dimension {}, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation(format!(
                    "token {i} holds a non-finite component"
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(PromptEmbedding {
            data,
            len: rows.len(),
            dim,
            source_labels: None,
        })
    }

    pub(crate) fn from_flat(data: Vec<f32>, len: usize, dim: usize) -> Self {
        debug_assert_eq!(data.len(), len * dim);
        PromptEmbedding {
            data,
            len,
            dim,
            source_labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = Reader::new(path, &bytes);
        r.expect_magic(PROMPT_MAGIC)?;
        r.expect_version()?;
        let l = r.u32()? as usize;
        let d = r.u32()? as usize;
        if l == 0 || d == 0 {
            return Err(Error::validation(format!(
                "prompt declares {l} tokens of dimension {d}; need L >= 1, D >= 1"
            )));
        }
        let data = r.f32_vec(l * d)?;
        r.expect_end()?;
        if let Some(bad) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::format(format!(
                "{}: token {} holds a non-finite component",
                path.display(),
                bad / d
            )));
        }
        Ok(PromptEmbedding {
            data,
            len: l,
            dim: d,
            source_labels: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 4);
        out.extend_from_slice(PROMPT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Byte cursor shared by the binary loaders; every shortfall reports
/// expected vs. actual counts.
pub(crate) struct Reader<'a> {
    path: String,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(path: &Path, bytes: &'a [u8]) -> Self {
        Reader {
            path: path.display().to_string(),
            bytes,
            pos: 0,
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(format!(
                "{}: truncated payload: needed {} bytes at offset {}, file holds {}",
                self.path,
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let got = self.take(8)?;
        if got != magic {
            return Err(Error::format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.path,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::format(format!(
                "{}: unsupported format version {v}, this build reads version {FORMAT_VERSION}",
                self.path
            )));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn label(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::format(format!("{}: label is not valid UTF-8", self.path)))
    }

    pub(crate) fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn u32_vec(&mut self, n: usize) -> Result<Vec<u32>> {
        let bytes = self.take(n * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn u64_vec(&mut self, n: usize) -> Result<Vec<u64>> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(format!(
                "{}: {} trailing bytes after payload",
                self.path,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
