//! GloVe-format word vectors and sentence averaging.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Immutable token → vector table.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

/// Averaged sentence vector. `flagged` marks a sentence without a single
/// known token, whose embedding is the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub vector: Vec<f64>,
    pub oov_count: usize,
    pub flagged: bool,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        WordVectorTable {
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut table = WordVectorTable::new(dim);
        for (line, (token, vector)) in entries.into_iter().enumerate() {
            table.push(line + 1, token.into(), &vector)?;
        }
        Ok(table)
    }

    fn push(&mut self, line: usize, token: String, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                line,
                expected: self.dim,
                found: vector.len(),
            });
        }
        if self.index.contains_key(&token) {
            return Err(Error::DuplicateToken { line, token });
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    /// Parses `token v1 … vd` lines; the dimension comes from the first line.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut table: Option<WordVectorTable> = None;
        let mut values = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io("<glove>", e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let token = fields.next().unwrap_or_default().to_string();
            values.clear();
            for f in fields.filter(|f| !f.is_empty()) {
                let v: f64 = f.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("non-numeric field {f:?}"),
                })?;
                values.push(v);
            }
            let t = table.get_or_insert_with(|| WordVectorTable::new(values.len()));
            if t.dim == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    message: "entry without vector components".into(),
                });
            }
            t.push(line_no, token, &values)?;
        }
        table.ok_or(Error::EmptyCorpus)
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, token) in self.tokens.iter().enumerate() {
            write!(out, "{token}")?;
            for v in self.row(i) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index_of(token).map(|i| self.row(i))
    }

    /// Component-wise mean of token vectors. Unknown tokens contribute the
    /// zero vector but still count in the denominator.
    pub fn embed_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> SentenceEmbedding {
        let mut vector = vec![0.0; self.dim];
        let mut rows: Vec<usize> = tokens.iter().filter_map(|t| self.index_of(t.as_ref())).collect();
        let oov_count = tokens.len() - rows.len();
        // canonical summation order makes the mean exactly permutation invariant
        rows.sort_unstable();
        for &r in &rows {
            for (acc, v) in vector.iter_mut().zip(self.row(r)) {
                *acc += v;
            }
        }
        if !tokens.is_empty() {
            let n = tokens.len() as f64;
            vector.iter_mut().for_each(|x| *x /= n);
        }
        SentenceEmbedding {
            vector,
            oov_count,
            flagged: rows.is_empty(),
        }
    }
}
