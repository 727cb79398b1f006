//! Dense id-aligned vectors and their on-disk formats.
//!
//! Two formats are accepted:
//!
//! - text, word2vec style: an optional `count dim` header line, then
//!   `id c1 c2 ... cdim` per line;
//! - binary: `AEMB`, u32 version (1), u32 dim, u64 rows, then per row a u16
//!   id length, the UTF-8 id and `dim` little-endian f32 values.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{AspectId, Corpus};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"AEMB";
pub const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    method_tag: String,
    aspect_tag: Option<AspectId>,
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    positions: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(method_tag: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(EmbeddingMatrix {
            method_tag: method_tag.into(),
            aspect_tag: None,
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            positions: HashMap::new(),
        })
    }

    pub fn from_rows<I, S>(method_tag: impl Into<String>, dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut m = Self::new(method_tag, dim)?;
        for (id, row) in rows {
            m.push(id.into(), &row)?;
        }
        Ok(m)
    }

    pub fn push(&mut self, id: String, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                id,
                expected: self.dim,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(id));
        }
        if self.positions.contains_key(&id) {
            return Err(Error::DuplicatePaper(id));
        }
        self.positions.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn with_aspect(mut self, aspect: Option<AspectId>) -> Self {
        self.aspect_tag = aspect;
        self
    }

    pub fn with_method_tag(mut self, tag: impl Into<String>) -> Self {
        self.method_tag = tag.into();
        self
    }

    pub fn method_tag(&self) -> &str {
        &self.method_tag
    }

    pub fn aspect_tag(&self) -> Option<&AspectId> {
        self.aspect_tag.as_ref()
    }

    /// A matrix without an aspect tag serves every aspect.
    pub fn is_generic(&self) -> bool {
        self.aspect_tag.is_none()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim))
    }

    /// Row-major component block.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Ids of `expected` absent here, and ids here absent from `expected`.
    pub fn coverage<'a, I>(&self, expected: I) -> Coverage
    where
        I: IntoIterator<Item = &'a str>,
    {
        let expected: BTreeSet<&str> = expected.into_iter().collect();
        let present: BTreeSet<&str> = self.ids.iter().map(String::as_str).collect();
        Coverage {
            missing: expected
                .difference(&present)
                .map(|s| s.to_string())
                .collect(),
            extra: present
                .difference(&expected)
                .map(|s| s.to_string())
                .collect(),
        }
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&BINARY_VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for (id, row) in self.rows() {
            let len = u16::try_from(id.len())
                .map_err(|_| Error::Format(format!("id `{id}` longer than 65535 bytes")))?;
            out.write_all(&len.to_le_bytes())?;
            out.write_all(id.as_bytes())?;
            write_f32s(&mut out, row)?;
        }
        Ok(())
    }

    /// Reads the binary format; the magic bytes must still be present.
    pub fn read_binary<R: Read>(method_tag: impl Into<String>, mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Format("missing AEMB magic".into()));
        }
        let version = read_u32(&mut input)?;
        if version != BINARY_VERSION {
            return Err(Error::Format(format!("unsupported AEMB version {version}")));
        }
        let dim = read_u32(&mut input)? as usize;
        let rows = read_u64(&mut input)?;
        let mut m = Self::new(method_tag, dim)?;
        let mut row = vec![0f32; dim];
        for _ in 0..rows {
            let mut len = [0u8; 2];
            input.read_exact(&mut len)?;
            let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
            input.read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|_| Error::Format("id is not UTF-8".into()))?;
            read_f32s(&mut input, &mut row)?;
            m.push(id, &row)?;
        }
        Ok(m)
    }

    /// Writes the text format with a `count dim` header.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (id, row) in self.rows() {
            out.write_all(id.as_bytes())?;
            for v in row {
                write!(out, " {v}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(method_tag: impl Into<String>, input: R) -> Result<Self> {
        let method_tag = method_tag.into();
        let mut header: Option<(usize, usize)> = None;
        let mut matrix: Option<EmbeddingMatrix> = None;
        for (no, line) in input.lines().enumerate() {
            let line = line?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            if no == 0 && tokens.len() == 2 {
                if let (Ok(count), Ok(dim)) = (tokens[0].parse(), tokens[1].parse()) {
                    if dim == 0 {
                        return Err(Error::Format("header declares dimension 0".into()));
                    }
                    header = Some((count, dim));
                    continue;
                }
            }
            let id = tokens[0].to_string();
            let mut row = Vec::with_capacity(tokens.len() - 1);
            for t in &tokens[1..] {
                let v: f32 = t
                    .parse()
                    .map_err(|_| Error::parse(no + 1, format!("`{t}` is not a number")))?;
                row.push(v);
            }
            let m = match matrix.as_mut() {
                Some(m) => m,
                None => {
                    let dim = header.map_or(row.len(), |(_, d)| d);
                    if dim == 0 {
                        return Err(Error::parse(
                            no + 1,
                            format!("row `{id}` has no components"),
                        ));
                    }
                    matrix.insert(Self::new(method_tag.clone(), dim)?)
                }
            };
            m.push(id, &row)?;
        }
        let matrix = match matrix {
            Some(m) => m,
            None => Self::new(method_tag, header.map_or(1, |(_, d)| d))?,
        };
        if let Some((count, _)) = header {
            if count != matrix.len() {
                return Err(Error::Format(format!(
                    "header declares {count} rows, found {}",
                    matrix.len()
                )));
            }
        }
        Ok(matrix)
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_binary(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Coverage {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
}

/// Loads either format, detected by the `AEMB` magic.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    method_tag: &str,
    expected_ids: Option<&BTreeSet<String>>,
) -> Result<(EmbeddingMatrix, Option<Coverage>)> {
    let mut input = BufReader::new(File::open(path)?);
    let is_binary = input.fill_buf()?.starts_with(BINARY_MAGIC);
    let matrix = if is_binary {
        EmbeddingMatrix::read_binary(method_tag, input)?
    } else {
        EmbeddingMatrix::read_text(method_tag, input)?
    };
    let coverage = expected_ids.map(|ids| matrix.coverage(ids.iter().map(String::as_str)));
    Ok((matrix, coverage))
}

fn read_u32<R: Read>(input: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(input: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn write_f32s<W: Write>(out: &mut W, values: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub(crate) fn read_f32s<R: Read>(input: &mut R, values: &mut [f32]) -> io::Result<()> {
    let mut buf = vec![0u8; values.len() * 4];
    input.read_exact(&mut buf)?;
    for (v, chunk) in values.iter_mut().zip(buf.chunks_exact(4)) {
        *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
    }
    Ok(())
}

/// Word vectors used for average-token pooling.
#[derive(Debug, Clone)]
pub struct TokenVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl TokenVectorTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("token vector dimension must be positive"));
        }
        Ok(TokenVectorTable {
            dim,
            vectors: HashMap::new(),
        })
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let token = token.into();
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                id: token,
                expected: self.dim,
                found: vector.len(),
            });
        }
        self.vectors.insert(token, vector);
        Ok(())
    }

    pub fn from_matrix(m: &EmbeddingMatrix) -> Self {
        TokenVectorTable {
            dim: m.dim(),
            vectors: m.rows().map(|(t, v)| (t.to_string(), v.to_vec())).collect(),
        }
    }

    /// Tokens in sorted order.
    pub fn to_matrix(&self) -> Result<EmbeddingMatrix> {
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        let mut m = EmbeddingMatrix::new("tokens", self.dim)?;
        for t in tokens {
            m.push(t.clone(), &self.vectors[t])?;
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (m, _) = load_embeddings(path, "tokens", None)?;
        Ok(Self::from_matrix(&m))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Mean of the found token vectors; `None` when no token is in the table.
pub fn mean_token_vector(text: &str, table: &TokenVectorTable) -> Option<Vec<f32>> {
    let mut sum = vec![0f64; table.dim()];
    let mut found = 0usize;
    for token in tokenize(text) {
        if let Some(v) = table.get(&token) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += f64::from(*x);
            }
            found += 1;
        }
    }
    (found > 0).then(|| sum.iter().map(|s| (s / found as f64) as f32).collect())
}

#[derive(Debug, Clone)]
pub struct PooledEmbeddings {
    pub matrix: EmbeddingMatrix,
    /// Papers none of whose tokens are in the table.
    pub omitted: Vec<String>,
}

pub const AVG_TOKEN_TAG: &str = "avg-token";

/// Average-token document vectors over title and abstract.
pub fn average_token_embeddings(
    corpus: &Corpus,
    table: &TokenVectorTable,
) -> Result<PooledEmbeddings> {
    if table.is_empty() {
        return Err(Error::invalid("token vector table is empty"));
    }
    let pooled: Vec<Option<Vec<f32>>> = corpus
        .papers()
        .par_iter()
        .map(|p| mean_token_vector(&p.text(), table))
        .collect();
    let mut matrix = EmbeddingMatrix::new(AVG_TOKEN_TAG, table.dim())?;
    let mut omitted = Vec::new();
    for (paper, row) in corpus.papers().iter().zip(pooled) {
        match row {
            Some(row) => matrix.push(paper.paper_id.clone(), &row)?,
            None => omitted.push(paper.paper_id.clone()),
        }
    }
    Ok(PooledEmbeddings { matrix, omitted })
}

/// Euclidean norm accumulated in f64.
pub fn norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

pub fn l2_normalize(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut out =
        EmbeddingMatrix::new(m.method_tag.clone(), m.dim)?.with_aspect(m.aspect_tag.clone());
    let mut buf = vec![0f32; m.dim];
    for (id, row) in m.rows() {
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::ZeroVector(id.to_string()));
        }
        for (b, &x) in buf.iter_mut().zip(row) {
            *b = (f64::from(x) / n) as f32;
        }
        out.push(id.to_string(), &buf)?;
    }
    Ok(out)
}
