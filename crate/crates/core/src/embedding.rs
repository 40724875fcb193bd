//! Readers and writers for word-embedding text files.
//!
//! Two line formats are supported:
//!
//! * `glove-text`: one `token f1 f2 ... fd` line per word, no header.
//! * `fasttext-vec`: the same lines preceded by a `count dim` header.
//!
//! Lines are split right to left: the trailing `dim` fields are the vector
//! components and whatever precedes them is the token, so tokens containing
//! spaces (present in the large Common Crawl GloVe release) survive a load.
//! Tokens are NFC-normalized; case is preserved.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::{is_nfc, UnicodeNormalization};

use crate::error::{Error, Result};
use crate::scalar::{self, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingFormat {
    GloveText,
    FasttextVec,
}

impl FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glove-text" => Ok(EmbeddingFormat::GloveText),
            "fasttext-vec" => Ok(EmbeddingFormat::FasttextVec),
            other => Err(Error::InvalidArgument(format!(
                "unknown embedding format `{other}` (expected glove-text or fasttext-vec)"
            ))),
        }
    }
}

impl fmt::Display for EmbeddingFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingFormat::GloveText => "glove-text",
            EmbeddingFormat::FasttextVec => "fasttext-vec",
        })
    }
}

/// Bookkeeping from a single load.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub rows: usize,
    pub dim: usize,
    /// Lines whose token had already been seen; the first occurrence is kept.
    pub duplicates: usize,
    pub blank_lines: usize,
}

/// Immutable vocabulary plus row-major vectors.
///
/// Row order is file order, which for published embeddings is descending
/// corpus frequency, so a row index doubles as the frequency rank.
#[derive(Clone, Debug)]
pub struct EmbeddingMatrix<T> {
    tokens: Vec<String>,
    data: Vec<T>,
    dim: usize,
    norms: Vec<f64>,
    index: HashMap<String, usize>,
}

/// A borrowed view of one vocabulary row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VocabEntry<'a, T> {
    pub token: &'a str,
    pub rank: usize,
    pub vector: &'a [T],
}

pub(crate) fn nfc(s: &str) -> String {
    if is_nfc(s) {
        s.to_owned()
    } else {
        s.nfc().collect()
    }
}

impl<T: Scalar> EmbeddingMatrix<T> {
    /// Builds a matrix from in-memory rows. Tokens are NFC-normalized and must
    /// be unique after normalization.
    pub fn from_rows(tokens: Vec<String>, data: Vec<T>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if tokens.len() * dim != data.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tokens x {dim} dims needs {} components, got {}",
                tokens.len(),
                tokens.len() * dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite component in row {}",
                pos / dim
            )));
        }
        let tokens: Vec<String> = tokens.iter().map(|t| nfc(t)).collect();
        let mut index = HashMap::with_capacity(tokens.len());
        for (row, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), row).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token `{token}`")));
            }
        }
        Ok(Self::assemble(tokens, data, dim, index))
    }

    fn assemble(tokens: Vec<String>, data: Vec<T>, dim: usize, index: HashMap<String, usize>) -> Self {
        let norms = data.chunks_exact(dim).map(scalar::norm).collect();
        EmbeddingMatrix {
            tokens,
            data,
            dim,
            norms,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, row: usize) -> &str {
        &self.tokens[row]
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    /// Euclidean norm of a row, computed once at load.
    pub fn norm(&self, row: usize) -> f64 {
        self.norms[row]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Row index of a token, after NFC normalization of the query. Case-sensitive.
    pub fn rank_of(&self, token: &str) -> Option<usize> {
        if is_nfc(token) {
            self.index.get(token).copied()
        } else {
            self.index.get(&nfc(token)).copied()
        }
    }

    pub fn lookup(&self, token: &str) -> Option<VocabEntry<'_, T>> {
        self.rank_of(token).map(|rank| self.entry(rank))
    }

    pub fn entry(&self, rank: usize) -> VocabEntry<'_, T> {
        VocabEntry {
            token: &self.tokens[rank],
            rank,
            vector: self.row(rank),
        }
    }

    /// Copy of the matrix with every component multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        let data = self.data.iter().map(|&v| v * factor).collect();
        Self::assemble(self.tokens.clone(), data, self.dim, self.index.clone())
    }

    /// Writes the matrix in `glove-text` layout.
    pub fn write_glove_text<W: Write>(&self, mut out: W) -> Result<()> {
        for row in 0..self.len() {
            self.write_line(&mut out, row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes the matrix in `fasttext-vec` layout (header + lines).
    pub fn write_fasttext_vec<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        self.write_glove_text(out)
    }

    pub fn write<W: Write>(&self, out: W, format: EmbeddingFormat) -> Result<()> {
        match format {
            EmbeddingFormat::GloveText => self.write_glove_text(out),
            EmbeddingFormat::FasttextVec => self.write_fasttext_vec(out),
        }
    }

    fn write_line<W: Write>(&self, out: &mut W, row: usize) -> Result<()> {
        out.write_all(self.tokens[row].as_bytes())?;
        for v in self.row(row) {
            write!(out, " {v}")?;
        }
        out.write_all(b"\n")?;
        Ok(())
    }
}

fn is_sep(c: char) -> bool {
    c == ' ' || c == '\t'
}

fn looks_numeric(field: &str) -> bool {
    field
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_digit() || matches!(c, '-' | '+' | '.'))
        && field.parse::<f64>().is_ok()
}

/// Splits `line` into (token, components) from the right, writing the
/// components into `out` (length = dim).
fn split_line<'a, T: Scalar>(line: &'a str, out: &mut [T], lineno: usize) -> Result<&'a str> {
    let dim = out.len();
    let mut rest = line.trim_end_matches(is_sep);
    for (found, slot) in out.iter_mut().rev().enumerate() {
        let Some(pos) = rest.rfind(is_sep) else {
            return Err(Error::Parse {
                line: lineno,
                message: format!("dimension mismatch: expected {dim} components, found {found}"),
            });
        };
        let field = &rest[pos + 1..];
        let value: T = field.parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("invalid number `{field}`"),
        })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                message: format!("non-finite component `{field}`"),
            });
        }
        *slot = value;
        rest = rest[..pos].trim_end_matches(is_sep);
    }
    if rest.is_empty() {
        return Err(Error::Parse {
            line: lineno,
            message: format!("dimension mismatch: expected {dim} components, found {}", dim - 1),
        });
    }
    if let Some(pos) = rest.rfind(is_sep) {
        if looks_numeric(&rest[pos + 1..]) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("dimension mismatch: more than {dim} components"),
            });
        }
    }
    Ok(rest)
}

fn decode_line(buf: &[u8], lineno: usize) -> Result<&str> {
    let mut end = buf.len();
    while end > 0 && (buf[end - 1] == b'\n' || buf[end - 1] == b'\r') {
        end -= 1;
    }
    std::str::from_utf8(&buf[..end]).map_err(|e| Error::Parse {
        line: lineno,
        message: format!("invalid UTF-8: {e}"),
    })
}

fn parse_header(line: &str, lineno: usize) -> Result<(usize, usize)> {
    let fields: Vec<&str> = line.split(is_sep).filter(|f| !f.is_empty()).collect();
    let bad = || Error::Parse {
        line: lineno,
        message: format!("expected `count dim` header, found `{line}`"),
    };
    if fields.len() != 2 {
        return Err(bad());
    }
    let count = fields[0].parse().map_err(|_| bad())?;
    let dim: usize = fields[1].parse().map_err(|_| bad())?;
    if dim == 0 {
        return Err(bad());
    }
    Ok((count, dim))
}

/// Parses an embedding stream in a single pass.
///
/// The dimension comes from the `fasttext-vec` header, or for `glove-text`
/// from the field count of the first data line.
pub fn parse_embedding_text<T: Scalar, R: BufRead>(
    reader: R,
    format: EmbeddingFormat,
) -> Result<(EmbeddingMatrix<T>, LoadSummary)> {
    parse_embedding_text_with_dim(reader, format, None)
}

/// Like [`parse_embedding_text`], with an explicit dimension for `glove-text`
/// files whose first token contains a space.
pub fn parse_embedding_text_with_dim<T: Scalar, R: BufRead>(
    mut reader: R,
    format: EmbeddingFormat,
    dim_hint: Option<usize>,
) -> Result<(EmbeddingMatrix<T>, LoadSummary)> {
    let mut buf = Vec::with_capacity(4096);
    let mut lineno = 0usize;
    let mut dim = dim_hint;
    let mut declared_rows = None;
    let mut data_lines = 0usize;
    let mut summary = LoadSummary::default();
    let mut tokens = Vec::new();
    let mut data: Vec<T> = Vec::new();
    let mut index = HashMap::new();
    let mut row_buf: Vec<T> = Vec::new();

    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        lineno += 1;
        let line = decode_line(&buf, lineno)?;
        if line.trim_matches(is_sep).is_empty() {
            summary.blank_lines += 1;
            continue;
        }
        if format == EmbeddingFormat::FasttextVec && declared_rows.is_none() {
            let (count, header_dim) = parse_header(line, lineno)?;
            if let Some(hint) = dim_hint {
                if hint != header_dim {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("header dimension {header_dim} disagrees with requested {hint}"),
                    });
                }
            }
            declared_rows = Some(count);
            dim = Some(header_dim);
            tokens.reserve(count);
            continue;
        }
        let d = match dim {
            Some(d) => d,
            None => {
                let fields = line.split(is_sep).filter(|f| !f.is_empty()).count();
                if fields < 2 {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "cannot infer dimension: no vector components".into(),
                    });
                }
                dim = Some(fields - 1);
                fields - 1
            }
        };
        row_buf.resize(d, T::zero());
        let token = split_line(line, &mut row_buf, lineno)?;
        data_lines += 1;
        let token = nfc(token);
        if index.contains_key(&token) {
            summary.duplicates += 1;
            continue;
        }
        index.insert(token.clone(), tokens.len());
        tokens.push(token);
        data.extend_from_slice(&row_buf);
    }

    let Some(dim) = dim else {
        return Err(Error::Empty("embedding stream has no data lines".into()));
    };
    if tokens.is_empty() {
        return Err(Error::Empty("embedding stream has no data lines".into()));
    }
    if let Some(count) = declared_rows {
        if count != data_lines {
            return Err(Error::Parse {
                line: 1,
                message: format!("header declares {count} rows, found {data_lines}"),
            });
        }
    }
    if summary.duplicates > 0 {
        log::warn!("{} duplicate tokens ignored (first occurrence kept)", summary.duplicates);
    }
    summary.rows = tokens.len();
    summary.dim = dim;
    Ok((EmbeddingMatrix::assemble(tokens, data, dim, index), summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn glove(text: &str) -> Result<(EmbeddingMatrix<f32>, LoadSummary)> {
        parse_embedding_text(text.as_bytes(), EmbeddingFormat::GloveText)
    }

    #[test]
    fn minimal_glove_line() {
        let (m, s) = glove("a 1.0 0.0").unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.tokens(), ["a"]);
        assert_eq!(m.row(0), [1.0, 0.0]);
        assert_eq!(s.rows, 1);
    }

    #[test]
    fn fasttext_header_is_consumed() {
        let (m, _) =
            parse_embedding_text::<f32, _>("2 2\na 1 0\nb 0 1".as_bytes(), EmbeddingFormat::FasttextVec).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.dim(), 2);
        assert_eq!(m.lookup("b").unwrap().vector, [0.0, 1.0]);
    }

    #[test]
    fn fasttext_row_count_must_match_header() {
        let err =
            parse_embedding_text::<f32, _>("3 2\na 1 0\nb 0 1\n".as_bytes(), EmbeddingFormat::FasttextVec).unwrap_err();
        assert!(err.to_string().contains("header declares 3"), "{err}");
    }

    #[test]
    fn token_with_space() {
        let (m, _) = parse_embedding_text_with_dim::<f32, _>(
            "a b 0.5 0.5\n".as_bytes(),
            EmbeddingFormat::GloveText,
            Some(2),
        )
        .unwrap();
        assert_eq!(m.tokens(), ["a b"]);
        assert_eq!(m.row(0), [0.5, 0.5]);
        // once the dimension is known from an earlier line, spaces are fine too
        let (m, _) = glove("x 1 2\na b 0.5 0.5\n").unwrap();
        assert_eq!(m.token(1), "a b");
    }

    #[test]
    fn dimension_mismatch_reports_line() {
        let err = glove("a 1 0\nb 1\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 2);
                assert!(message.contains("dimension mismatch"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = glove("a 1 0\nb 1 0 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn non_finite_rejected() {
        for bad in ["a 1 nan\n", "a inf 0\n", "a 1e50 0\n"] {
            let err = glove(&format!("z 0 1\n{bad}")).unwrap_err();
            assert!(matches!(err, Error::Parse { line: 2, .. }), "{bad}: {err:?}");
        }
        // 1e50 fits in f64
        assert!(parse_embedding_text::<f64, _>("a 1e50 0".as_bytes(), EmbeddingFormat::GloveText).is_ok());
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(matches!(glove(""), Err(Error::Empty(_))));
        assert!(matches!(glove("\n\r\n"), Err(Error::Empty(_))));
        assert!(matches!(
            parse_embedding_text::<f32, _>("0 3\n".as_bytes(), EmbeddingFormat::FasttextVec),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn duplicates_keep_first() {
        let (m, s) = glove("a 1 0\nb 0 1\na 5 5\n").unwrap();
        assert_eq!(s.duplicates, 1);
        assert_eq!(m.len(), 2);
        assert_eq!(m.lookup("a").unwrap().vector, [1.0, 0.0]);
    }

    #[test]
    fn lookup_is_case_sensitive_and_nfc() {
        let (m, _) = glove("a 1.0 0.0\n\u{e9} 0 1\n").unwrap();
        let e = m.lookup("a").unwrap();
        assert_eq!((e.rank, e.vector), (0, &[1.0f32, 0.0][..]));
        assert!(m.lookup("A").is_none());
        // NFD "e" + combining acute
        assert_eq!(m.lookup("e\u{301}").unwrap().rank, 1);
    }

    #[test]
    fn nfd_tokens_are_stored_composed() {
        let (m, _) = glove("e\u{301} 0 1\n").unwrap();
        assert_eq!(m.token(0), "\u{e9}");
    }

    #[test]
    fn crlf_and_lf_agree() {
        let (a, _) = glove("a 1 2\nb 3 4\n").unwrap();
        let (b, _) = glove("a 1 2\r\nb 3 4\r\n").unwrap();
        assert_eq!(a.tokens(), b.tokens());
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn rank_is_data_line_index() {
        let (m, _) = parse_embedding_text::<f64, _>(
            "3 1\nthe 1\nof 2\nand 3\n".as_bytes(),
            EmbeddingFormat::FasttextVec,
        )
        .unwrap();
        for (i, t) in ["the", "of", "and"].iter().enumerate() {
            assert_eq!(m.lookup(t).unwrap().rank, i);
        }
    }

    #[test]
    fn format_names() {
        assert_eq!("glove-text".parse::<EmbeddingFormat>().unwrap(), EmbeddingFormat::GloveText);
        assert_eq!(EmbeddingFormat::FasttextVec.to_string(), "fasttext-vec");
        assert!("word2vec".parse::<EmbeddingFormat>().is_err());
    }
}
