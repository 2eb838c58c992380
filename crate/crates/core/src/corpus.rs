//! Canonical record types and streaming file IO.
//!
//! Records travel as JSON Lines. Writing goes through `serde_json::Value`, so
//! every emitted line has its keys in sorted order; unknown fields survive a
//! read/write cycle untouched.
//!
//! Embeddings travel in the XFEM binary layout (all integers little-endian):
//!
//! ```text
//! "XFEM" | version: u16 = 1 | dim: u32 | count: u64
//! count * dim f32 values, row-major
//! flag: u8 (0x00 = no ids, 0x01 = ids follow)
//! [count * (len: u32, utf-8 bytes)]
//! ```

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::marker::PhantomData;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const XFEM_MAGIC: [u8; 4] = *b"XFEM";
pub const XFEM_VERSION: u16 = 1;
/// magic + version + dim + count
pub const XFEM_HEADER_LEN: usize = 4 + 2 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Video,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Image => "image",
            Modality::Video => "video",
        })
    }
}

fn one() -> u32 {
    1
}

fn unit_weight() -> f64 {
    1.0
}

/// One image or video post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaRecord {
    pub id: String,
    pub modality: Modality,
    pub width: u32,
    pub height: u32,
    #[serde(default = "one")]
    pub num_frames: u32,
    #[serde(default)]
    pub caption_raw: String,
    #[serde(default)]
    pub hashtags_raw: Vec<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// A (media, supervision text) pair ready for training-data selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedPair {
    pub media_id: String,
    pub text: String,
    #[serde(default)]
    pub concepts: BTreeSet<String>,
    #[serde(default = "unit_weight")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl CuratedPair {
    pub fn new(media_id: impl Into<String>, text: impl Into<String>) -> Self {
        CuratedPair {
            media_id: media_id.into(),
            text: text.into(),
            concepts: BTreeSet::new(),
            weight: 1.0,
            similarity: None,
            extra: Map::new(),
        }
    }

    pub fn with_concepts<I, S>(mut self, concepts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.concepts = concepts.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_similarity(mut self, similarity: f64) -> Self {
        self.similarity = Some(similarity);
        self
    }
}

/// A JSON-Lines record type with required fields and a validity check.
pub trait JsonRecord: Serialize + DeserializeOwned {
    const REQUIRED: &'static [&'static str];

    fn validate(&self) -> std::result::Result<(), String>;

    /// Key used for uniqueness checks, if the type has one.
    fn record_id(&self) -> Option<&str> {
        None
    }
}

impl JsonRecord for MediaRecord {
    const REQUIRED: &'static [&'static str] = &["id", "modality", "width", "height"];

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.width == 0 || self.height == 0 {
            return Err(format!(
                "dimensions must be positive, got {}x{}",
                self.width, self.height
            ));
        }
        if self.num_frames == 0 {
            return Err("num_frames must be positive".into());
        }
        if self.modality == Modality::Image && self.num_frames != 1 {
            return Err(format!("image with num_frames = {}", self.num_frames));
        }
        Ok(())
    }

    fn record_id(&self) -> Option<&str> {
        Some(&self.id)
    }
}

impl JsonRecord for CuratedPair {
    const REQUIRED: &'static [&'static str] = &["media_id", "text"];

    fn validate(&self) -> std::result::Result<(), String> {
        if self.text.is_empty() {
            return Err("empty text".into());
        }
        if !self.weight.is_finite() || self.weight < 0.0 {
            return Err(format!("weight must be finite and nonnegative, got {}", self.weight));
        }
        if let Some(s) = self.similarity {
            if !(-1.0..=1.0).contains(&s) {
                return Err(format!("similarity {s} outside [-1, 1]"));
            }
        }
        Ok(())
    }
}

/// Streaming JSON-Lines reader. Blank lines are skipped; line numbers in
/// errors are 1-based and count blank lines.
pub struct JsonlReader<R, T> {
    lines: io::Lines<R>,
    line_no: usize,
    seen: Option<HashSet<String>>,
    _marker: PhantomData<fn() -> T>,
}

impl<R: BufRead, T: JsonRecord> JsonlReader<R, T> {
    pub fn new(reader: R) -> Self {
        JsonlReader {
            lines: reader.lines(),
            line_no: 0,
            seen: None,
            _marker: PhantomData,
        }
    }

    /// Reject repeated ids. Keeps every id in memory.
    pub fn check_unique_ids(mut self) -> Self {
        self.seen = Some(HashSet::new());
        self
    }

    fn parse(&mut self, line: &str) -> Result<T> {
        let line_no = self.line_no;
        let value: Value = serde_json::from_str(line).map_err(|source| Error::MalformedLine {
            line: line_no,
            source,
        })?;
        let Value::Object(obj) = &value else {
            return Err(Error::InvalidRecord {
                line: line_no,
                reason: "expected a JSON object".into(),
            });
        };
        if let Some(field) = T::REQUIRED.iter().find(|f| !obj.contains_key(**f)) {
            return Err(Error::MissingField {
                line: line_no,
                field,
            });
        }
        let record: T = serde_json::from_value(value).map_err(|e| Error::InvalidRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        record.validate().map_err(|reason| Error::InvalidRecord {
            line: line_no,
            reason,
        })?;
        if let (Some(seen), Some(id)) = (self.seen.as_mut(), record.record_id()) {
            if !seen.insert(id.to_owned()) {
                return Err(Error::DuplicateId {
                    line: line_no,
                    id: id.to_owned(),
                });
            }
        }
        Ok(record)
    }
}

impl<R, T> std::fmt::Debug for JsonlReader<R, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonlReader").field("line_no", &self.line_no).finish_non_exhaustive()
    }
}

impl<R: BufRead, T: JsonRecord> Iterator for JsonlReader<R, T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&line));
        }
    }
}

pub fn open_jsonl<T: JsonRecord>(path: impl AsRef<Path>) -> Result<JsonlReader<BufReader<File>, T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    Ok(JsonlReader::new(BufReader::new(file)))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<JsonlReader<BufReader<File>, MediaRecord>> {
    open_jsonl(path)
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<JsonlReader<BufReader<File>, CuratedPair>> {
    open_jsonl(path)
}

/// Serialize one record as a canonical (sorted-key, compact) JSON line.
pub fn to_canonical_line<T: Serialize>(record: &T) -> Result<String> {
    let value = serde_json::to_value(record).map_err(io::Error::other)?;
    let mut s = serde_json::to_string(&value).map_err(io::Error::other)?;
    s.push('\n');
    Ok(s)
}

pub struct JsonlWriter<W: Write> {
    inner: W,
    written: usize,
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(inner: W) -> Self {
        JsonlWriter { inner, written: 0 }
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        self.inner.write_all(to_canonical_line(record)?.as_bytes())?;
        self.written += 1;
        Ok(())
    }

    /// Write a pre-serialized line; a trailing newline is added if missing.
    pub fn write_line(&mut self, line: &str) -> Result<()> {
        self.inner.write_all(line.as_bytes())?;
        if !line.ends_with('\n') {
            self.inner.write_all(b"\n")?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn create_jsonl(path: impl AsRef<Path>) -> Result<JsonlWriter<BufWriter<File>>> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    Ok(JsonlWriter::new(BufWriter::new(file)))
}

/// Write a record stream, returning the number of records written.
pub fn write_records<T, I>(path: impl AsRef<Path>, records: I) -> Result<usize>
where
    T: Serialize,
    I: IntoIterator<Item = Result<T>>,
{
    let mut w = create_jsonl(path)?;
    for r in records {
        w.write(&r?)?;
    }
    let n = w.written();
    w.finish()?;
    Ok(n)
}

/// Row-major `count x dim` matrix of finite f32 values with optional row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    values: Vec<f32>,
    ids: Option<Vec<String>>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, values: Vec<f32>, ids: Option<Vec<String>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::InvalidEmbeddingFile(format!(
                "{} values do not fill rows of width {dim}",
                values.len()
            )));
        }
        let count = values.len() / dim;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        if let Some(ids) = &ids {
            if ids.len() != count {
                return Err(Error::InvalidEmbeddingFile(format!(
                    "{} ids for {count} rows",
                    ids.len()
                )));
            }
        }
        Ok(EmbeddingMatrix { dim, values, ids })
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(dim, values, None)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.count() {
            return Err(Error::InvalidEmbeddingFile(format!(
                "{} ids for {} rows",
                ids.len(),
                self.count()
            )));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.values.chunks_exact(self.dim)
    }

    pub fn into_parts(self) -> (usize, Vec<f32>, Option<Vec<String>>) {
        (self.dim, self.values, self.ids)
    }
}

pub fn write_embeddings_to<W: Write>(m: &EmbeddingMatrix, mut w: W) -> Result<()> {
    let dim = u32::try_from(m.dim()).map_err(|_| Error::invalid("dim exceeds u32"))?;
    w.write_all(&XFEM_MAGIC)?;
    w.write_all(&XFEM_VERSION.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(m.count() as u64).to_le_bytes())?;
    for v in m.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    match m.ids() {
        None => w.write_all(&[0x00])?,
        Some(ids) => {
            w.write_all(&[0x01])?;
            for id in ids {
                let len = u32::try_from(id.len()).map_err(|_| Error::invalid("id too long"))?;
                w.write_all(&len.to_le_bytes())?;
                w.write_all(id.as_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    write_embeddings_to(m, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::TruncatedPayload(what.to_owned()),
        _ => Error::Io(e),
    })
}

/// Read one XFEM matrix from a stream, leaving any following bytes unread.
pub fn read_embeddings_from<R: Read>(mut r: R) -> Result<EmbeddingMatrix> {
    let mut header = [0u8; XFEM_HEADER_LEN];
    read_exact_or(&mut r, &mut header[..4], "header")?;
    let magic: [u8; 4] = header[..4].try_into().expect("4 bytes");
    if magic != XFEM_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: XFEM_MAGIC,
        });
    }
    read_exact_or(&mut r, &mut header[4..], "header")?;
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != XFEM_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = u32::from_le_bytes(header[6..10].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(header[10..18].try_into().expect("8 bytes"));
    if dim == 0 {
        return Err(Error::ZeroDim);
    }
    let n_values = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(dim))
        .ok_or_else(|| Error::InvalidEmbeddingFile(format!("{count} x {dim} overflows")))?;

    // Read in bounded chunks so a corrupt count cannot trigger a huge allocation.
    let mut values = Vec::new();
    let mut buf = vec![0u8; 4 * dim.min(1 << 16)];
    let mut remaining = n_values;
    while remaining > 0 {
        let take = remaining.min(buf.len() / 4);
        let bytes = &mut buf[..take * 4];
        read_exact_or(&mut r, bytes, "payload ended mid-row")?;
        values.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))),
        );
        remaining -= take;
    }

    let mut flag = [0u8; 1];
    read_exact_or(&mut r, &mut flag, "missing id flag")?;
    let ids = match flag[0] {
        0x00 => None,
        0x01 => {
            let mut ids = Vec::new();
            for _ in 0..count {
                let mut len = [0u8; 4];
                read_exact_or(&mut r, &mut len, "id table")?;
                let mut bytes = vec![0u8; u32::from_le_bytes(len) as usize];
                read_exact_or(&mut r, &mut bytes, "id table")?;
                let id = String::from_utf8(bytes)
                    .map_err(|_| Error::InvalidEmbeddingFile("id is not valid UTF-8".into()))?;
                ids.push(id);
            }
            Some(ids)
        }
        other => {
            return Err(Error::InvalidEmbeddingFile(format!(
                "unknown id flag {other:#04x}"
            )))
        }
    };
    EmbeddingMatrix::new(dim, values, ids)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = BufReader::new(file);
    let m = read_embeddings_from(&mut r)?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::InvalidEmbeddingFile("trailing bytes after payload".into()));
    }
    Ok(m)
}
