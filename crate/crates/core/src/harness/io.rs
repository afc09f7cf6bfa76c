//! Logit matrix ingestion.
//!
//! * `jsonl`: one `{"step": <int>, "scores": [..]}` object per line.
//! * `binary`: `b"SXLG"`, then little-endian `u32` version (1), vocab size
//!   and row count, then `rows * vocab` little-endian `f32` values.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const MAGIC: &[u8; 4] = b"SXLG";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogitFormat {
    Jsonl,
    Binary,
}

impl FromStr for LogitFormat {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "jsonl" | "json" => Ok(Self::Jsonl),
            "binary" | "bin" => Ok(Self::Binary),
            other => Err(HarnessError::Malformed(format!("unknown logit format `{other}`"))),
        }
    }
}

/// Row-major matrix of finite logits, one row per decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    rows: usize,
    vocab: usize,
    values: Vec<f64>,
    steps: Vec<i64>,
}

impl LogitMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, HarnessError> {
        let steps = (0..rows.len() as i64).collect();
        Self::with_steps(rows, steps)
    }

    pub fn with_steps(rows: Vec<Vec<f64>>, steps: Vec<i64>) -> Result<Self, HarnessError> {
        let vocab = rows.first().map(Vec::len).ok_or_else(|| HarnessError::Malformed("no rows".into()))?;
        if vocab == 0 {
            return Err(HarnessError::Malformed("empty score row".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * vocab);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != vocab {
                return Err(HarnessError::InconsistentVocabSize { row: r, expected: vocab, found: row.len() });
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(HarnessError::NonFiniteValue { row: r, col: c });
            }
            values.extend_from_slice(row);
        }
        Ok(Self { rows: rows.len(), vocab, values, steps })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.vocab..(r + 1) * self.vocab]
    }

    pub fn step(&self, r: usize) -> i64 {
        self.steps[r]
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRow {
    step: i64,
    scores: Vec<f64>,
}

pub fn read_logits(path: &Path, format: LogitFormat) -> Result<LogitMatrix, HarnessError> {
    let file = File::open(path)?;
    match format {
        LogitFormat::Jsonl => parse_jsonl(BufReader::new(file)),
        LogitFormat::Binary => {
            let mut bytes = Vec::new();
            BufReader::new(file).read_to_end(&mut bytes)?;
            parse_binary(&bytes)
        }
    }
}

pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<LogitMatrix, HarnessError> {
    let mut rows = Vec::new();
    let mut steps = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow =
            serde_json::from_str(&line).map_err(|e| HarnessError::Malformed(format!("line {}: {e}", i + 1)))?;
        if let Some(first) = rows.first().map(|r: &Vec<f64>| r.len()) {
            if row.scores.len() != first {
                return Err(HarnessError::InconsistentVocabSize {
                    row: rows.len(),
                    expected: first,
                    found: row.scores.len(),
                });
            }
        }
        steps.push(row.step);
        rows.push(row.scores);
    }
    LogitMatrix::with_steps(rows, steps)
}

pub fn parse_binary(bytes: &[u8]) -> Result<LogitMatrix, HarnessError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(HarnessError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(HarnessError::Malformed(format!("offset {}: truncated header", bytes.len())));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != VERSION {
        return Err(HarnessError::UnsupportedVersion(version));
    }
    let (vocab, rows) = (word(8) as usize, word(12) as usize);
    let expected = rows
        .checked_mul(vocab)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| HarnessError::Malformed("offset 8: dimensions overflow".into()))?;
    let body = &bytes[16..];
    if body.len() != expected {
        return Err(HarnessError::Malformed(format!(
            "offset 16: expected {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let values: Vec<f64> =
        body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    let rows: Vec<Vec<f64>> = values.chunks(vocab.max(1)).map(<[f64]>::to_vec).collect();
    LogitMatrix::new(rows)
}

/// Writes `m` in `format`. Binary output stores values as `f32`.
pub fn write_logits(m: &LogitMatrix, path: &Path, format: LogitFormat) -> Result<(), HarnessError> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        LogitFormat::Jsonl => {
            for r in 0..m.rows() {
                let row = JsonRow { step: m.step(r), scores: m.row(r).to_vec() };
                serde_json::to_writer(&mut out, &row)?;
                out.write_all(b"\n")?;
            }
        }
        LogitFormat::Binary => {
            out.write_all(MAGIC)?;
            for word in [VERSION, m.vocab_size() as u32, m.rows() as u32] {
                out.write_all(&word.to_le_bytes())?;
            }
            for &v in &m.values {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_two_rows() {
        let text = "{\"step\":0,\"scores\":[1,2,3]}\n{\"step\":1,\"scores\":[0.5,-1,2]}\n";
        let m = parse_jsonl(text.as_bytes()).unwrap();
        assert_eq!((m.rows(), m.vocab_size()), (2, 3));
        assert_eq!(m.row(1), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn jsonl_errors() {
        let ragged = "{\"step\":0,\"scores\":[1,2,3]}\n{\"step\":1,\"scores\":[1,2]}\n";
        assert!(matches!(parse_jsonl(ragged.as_bytes()), Err(HarnessError::InconsistentVocabSize { row: 1, .. })));
        let broken = "{\"step\":0,\"scores\":[1,2,3]}\nnot json\n";
        match parse_jsonl(broken.as_bytes()) {
            Err(HarnessError::Malformed(msg)) => assert!(msg.starts_with("line 2")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_jsonl("".as_bytes()), Err(HarnessError::Malformed(_))));
    }

    #[test]
    fn binary_header() {
        let mut bytes = b"SXLG".to_vec();
        for w in [1u32, 2, 1] {
            bytes.extend(w.to_le_bytes());
        }
        bytes.extend(1.5f32.to_le_bytes());
        bytes.extend((-2.0f32).to_le_bytes());
        let m = parse_binary(&bytes).unwrap();
        assert_eq!(m.row(0), &[1.5, -2.0]);

        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(parse_binary(&wrong), Err(HarnessError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(parse_binary(&v2), Err(HarnessError::UnsupportedVersion(2))));
        assert!(matches!(parse_binary(&bytes[..18]), Err(HarnessError::Malformed(_))));
        let mut nan = bytes.clone();
        nan[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(parse_binary(&nan), Err(HarnessError::NonFiniteValue { row: 0, col: 0 })));
    }
}
