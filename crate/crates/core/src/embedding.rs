//! Event embedding ingestion, the hashed TF-IDF test embedder and
//! per-column standardization.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::persist;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    File,
    Builtin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingFormat {
    Jsonl,
    Csv,
}

impl EmbeddingFormat {
    /// Guesses the format from a file extension, defaulting to jsonl.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => EmbeddingFormat::Csv,
            _ => EmbeddingFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EmbeddingMatrix<T> {
    pub data: Matrix<T>,
    pub normalized: bool,
    pub source: EmbeddingSource,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn new(data: Matrix<T>, source: EmbeddingSource) -> Result<Self> {
        if !data.is_finite() {
            return Err(Error::Data("embedding contains non-finite values".into()));
        }
        Ok(Self {
            data,
            normalized: false,
            source,
        })
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }
}

/// One line of a jsonl embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub vector: Vec<f64>,
}

/// Everything read from an embedding file, rows in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedEmbeddings<T> {
    pub matrix: EmbeddingMatrix<T>,
    pub ids: Vec<String>,
    pub labels: Vec<Option<String>>,
    pub texts: Vec<Option<String>>,
}

impl<T: Scalar> LoadedEmbeddings<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

struct Collector {
    ids: Vec<String>,
    labels: Vec<Option<String>>,
    texts: Vec<Option<String>>,
    values: Vec<f64>,
    dim: Option<usize>,
    seen: HashSet<String>,
}

impl Collector {
    fn new() -> Self {
        Self {
            ids: vec![],
            labels: vec![],
            texts: vec![],
            values: vec![],
            dim: None,
            seen: HashSet::new(),
        }
    }

    fn push(&mut self, line: usize, rec: EmbeddingRecord) -> Result<()> {
        match self.dim {
            None => self.dim = Some(rec.vector.len()),
            Some(d) if d != rec.vector.len() => {
                return Err(Error::Format {
                    line,
                    message: format!(
                        "vector has {} components, expected {d}",
                        rec.vector.len()
                    ),
                })
            }
            Some(_) => {}
        }
        if let Some(bad) = rec.vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "line {line}: component {bad} of '{}' is not finite",
                rec.id
            )));
        }
        if !self.seen.insert(rec.id.clone()) {
            return Err(Error::Integrity(format!(
                "line {line}: duplicate id '{}'",
                rec.id
            )));
        }
        self.values.extend_from_slice(&rec.vector);
        self.ids.push(rec.id);
        self.labels.push(rec.label.filter(|l| !l.is_empty()));
        self.texts.push(rec.text);
        Ok(())
    }

    fn finish<T: Scalar>(self) -> Result<LoadedEmbeddings<T>> {
        let dim = self.dim.unwrap_or(0);
        let data = Matrix::from_vec(
            self.ids.len(),
            dim,
            self.values.into_iter().map(T::of).collect(),
        )?;
        Ok(LoadedEmbeddings {
            matrix: EmbeddingMatrix::new(data, EmbeddingSource::File)?,
            ids: self.ids,
            labels: self.labels,
            texts: self.texts,
        })
    }
}

/// Reads an embedding file. Line numbers in errors are 1-based.
pub fn load_embeddings<T: Scalar>(path: &Path, format: EmbeddingFormat) -> Result<LoadedEmbeddings<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut col = Collector::new();
    match format {
        EmbeddingFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: EmbeddingRecord =
                    serde_json::from_str(&line).map_err(|e| Error::Format {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                col.push(i + 1, rec)?;
            }
        }
        EmbeddingFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .flexible(true)
                .from_reader(BufReader::new(file));
            let headers = reader.headers().map_err(|e| csv_error(1, e))?.clone();
            if headers.get(0) != Some("id") || headers.get(1) != Some("label") {
                return Err(Error::Format {
                    line: 1,
                    message: "header must start with id,label".into(),
                });
            }
            for (i, row) in reader.records().enumerate() {
                let line = i + 2;
                let row = row.map_err(|e| csv_error(line, e))?;
                let id = row.get(0).unwrap_or_default().to_owned();
                let label = row.get(1).map(str::to_owned);
                let vector = row
                    .iter()
                    .skip(2)
                    .map(|f| {
                        f.trim().parse::<f64>().map_err(|e| Error::Format {
                            line,
                            message: format!("'{f}': {e}"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                col.push(
                    line,
                    EmbeddingRecord {
                        id,
                        text: None,
                        label,
                        vector,
                    },
                )?;
            }
        }
    }
    col.finish()
}

fn csv_error(line: usize, e: csv::Error) -> Error {
    Error::Format {
        line,
        message: e.to_string(),
    }
}

/// Writes records as jsonl, one record per line.
pub fn save_embeddings_jsonl(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    persist::write_atomic(path, &buf)
}

/// Writes `id,label,v0..` csv. Texts are not representable and are dropped.
pub fn save_embeddings_csv(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_owned(), "label".to_owned()];
    header.extend((0..dim).map(|j| format!("v{j}")));
    w.write_record(&header).map_err(|e| csv_error(1, e))?;
    for (i, r) in records.iter().enumerate() {
        let mut row = vec![r.id.clone(), r.label.clone().unwrap_or_default()];
        row.extend(r.vector.iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(|e| csv_error(i + 2, e))?;
    }
    let mut bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("csv flush failed: {e}")))?;
    bytes.flush().ok();
    persist::write_atomic(path, &bytes)
}

fn fnv1a(token: &str, seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn embed_tokens(text: &str) -> Vec<String> {
    text.unicode_words().map(str::to_lowercase).collect()
}

/// Signed-hash term-frequency embedding with TF-IDF weights computed over
/// the supplied batch. Stateless and deterministic in `(texts, dim, seed)`.
pub fn builtin_embed<T: Scalar, S: AsRef<str>>(texts: &[S], dim: usize, seed: u64) -> Result<EmbeddingMatrix<T>> {
    if dim < 8 {
        return Err(Error::InvalidArgument(format!(
            "builtin embedding dimension must be at least 8, got {dim}"
        )));
    }
    let docs: Vec<Vec<String>> = texts.iter().map(|t| embed_tokens(t.as_ref())).collect();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in &docs {
        let uniq: HashSet<&str> = doc.iter().map(String::as_str).collect();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = docs.len() as f64;
    let mut data = Matrix::zeros(docs.len(), dim);
    for (i, doc) in docs.iter().enumerate() {
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in doc {
            *tf.entry(t.as_str()).or_default() += 1;
        }
        let row = data.row_mut(i);
        for (tok, count) in tf {
            let idf = ((1.0 + n) / (1.0 + df[tok] as f64)).ln() + 1.0;
            let bucket = (fnv1a(tok, seed) % dim as u64) as usize;
            let sign = if fnv1a(tok, seed ^ 0x5bd1_e995) >> 63 == 0 {
                1.0
            } else {
                -1.0
            };
            row[bucket] += T::of(sign * count as f64 * idf);
        }
    }
    EmbeddingMatrix::new(data, EmbeddingSource::Builtin)
}

/// Per-column population mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(m: &Matrix<T>) -> Result<Self> {
        if m.rows() < 2 {
            return Err(Error::Size(format!(
                "standardize needs at least 2 rows, got {}",
                m.rows()
            )));
        }
        let mean = m.column_means();
        let mut var = vec![T::zero(); m.cols()];
        for r in m.iter_rows() {
            for ((v, &x), &mu) in var.iter_mut().zip(r).zip(&mean) {
                let d = x - mu;
                *v += d * d;
            }
        }
        let n = T::of_usize(m.rows());
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// Identity transform for `dim` columns.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            std: vec![T::one(); dim],
        }
    }

    pub fn transform(&self, m: &Matrix<T>) -> Result<Matrix<T>> {
        if m.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "matrix has {} columns, standardizer was fit on {}",
                m.cols(),
                self.mean.len()
            )));
        }
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                let s = self.std[j];
                *v = if s > T::zero() {
                    (*v - self.mean[j]) / s
                } else {
                    T::zero()
                };
            }
        }
        Ok(out)
    }
}

/// Per-column z-score; zero-variance columns become all-zero.
pub fn standardize<T: Scalar>(m: &EmbeddingMatrix<T>) -> Result<EmbeddingMatrix<T>> {
    let st = Standardizer::fit(&m.data)?;
    Ok(EmbeddingMatrix {
        data: st.transform(&m.data)?,
        normalized: true,
        source: m.source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write(path: &Path, s: &str) {
        std::fs::write(path, s).unwrap();
    }

    #[test]
    fn jsonl_rows_follow_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        write(
            &p,
            concat!(
                "{\"id\":\"c\",\"label\":\"A\",\"vector\":[1,2,3,4]}\n",
                "{\"id\":\"a\",\"vector\":[5,6,7,8],\"text\":\"hi\"}\n",
                "{\"id\":\"b\",\"label\":\"B\",\"vector\":[9,10,11,12]}\n"
            ),
        );
        let e = load_embeddings::<f64>(&p, EmbeddingFormat::Jsonl).unwrap();
        assert_eq!(e.ids, vec!["c", "a", "b"]);
        assert_eq!(e.matrix.rows(), 3);
        assert_eq!(e.matrix.dim(), 4);
        assert_eq!(e.matrix.data.row(1), &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(e.labels[1], None);
        assert_eq!(e.texts[1].as_deref(), Some("hi"));
    }

    #[test]
    fn ragged_vector_cites_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        write(
            &p,
            "{\"id\":\"a\",\"vector\":[1,2,3,4]}\n{\"id\":\"b\",\"vector\":[1,2,3]}\n",
        );
        match load_embeddings::<f64>(&p, EmbeddingFormat::Jsonl) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_non_finite_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        write(&p, "{\"id\":\"a\",\"vector\":[1]}\n{\"id\":\"a\",\"vector\":[2]}\n");
        assert!(matches!(
            load_embeddings::<f64>(&p, EmbeddingFormat::Jsonl),
            Err(Error::Integrity(_))
        ));
        let c = dir.path().join("e.csv");
        write(&c, "id,label,v0\na,,NaN\n");
        assert!(matches!(
            load_embeddings::<f64>(&c, EmbeddingFormat::Csv),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn csv_and_jsonl_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let records: Vec<EmbeddingRecord> = (0..6)
            .map(|i| EmbeddingRecord {
                id: format!("e{i}"),
                text: None,
                label: (i % 2 == 0).then(|| format!("L{}", i % 3)),
                vector: (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect(),
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("x.jsonl");
        let c = dir.path().join("x.csv");
        save_embeddings_jsonl(&j, &records).unwrap();
        save_embeddings_csv(&c, &records).unwrap();
        let a = load_embeddings::<f64>(&j, EmbeddingFormat::Jsonl).unwrap();
        let b = load_embeddings::<f64>(&c, EmbeddingFormat::Csv).unwrap();
        assert_eq!(a.matrix.data, b.matrix.data);
        assert_eq!(a.ids, b.ids);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn builtin_embed_is_deterministic_and_zero_on_empty() {
        let texts = ["Company bankruptcy filed today", "Company bankruptcy filed today", ""];
        let m = builtin_embed::<f64, _>(&texts, 64, 9).unwrap();
        assert_eq!(m.data.row(0), m.data.row(1));
        assert!(m.data.row(2).iter().all(|&v| v == 0.0));
        assert_eq!(m, builtin_embed::<f64, _>(&texts, 64, 9).unwrap());
        assert!(builtin_embed::<f64, _>(&texts, 4, 9).is_err());
    }

    #[test]
    fn builtin_embed_disjoint_documents_are_orthogonal() {
        let texts: Vec<String> = (0..10)
            .map(|d| (0..5).map(|t| format!("tok{d}x{t}")).collect::<Vec<_>>().join(" "))
            .collect();
        let m = builtin_embed::<f64, _>(&texts, 1 << 16, 1).unwrap();
        for i in 0..10 {
            for j in i + 1..10 {
                let dot: f64 = m.data.row(i).iter().zip(m.data.row(j)).map(|(a, b)| a * b).sum();
                assert_eq!(dot, 0.0, "docs {i} and {j}");
            }
        }
    }

    #[test]
    fn standardize_examples() {
        let m = EmbeddingMatrix::new(
            Matrix::from_rows(&[[1.0f64, 5.0], [3.0, 5.0]], 2).unwrap(),
            EmbeddingSource::File,
        )
        .unwrap();
        let s = standardize(&m).unwrap();
        assert_eq!(s.data.as_slice(), &[-1.0, 0.0, 1.0, 0.0]);
        let one = EmbeddingMatrix::new(Matrix::<f64>::zeros(1, 2), EmbeddingSource::File).unwrap();
        assert!(matches!(standardize(&one), Err(Error::Size(_))));
    }

    #[test]
    fn standardize_moments_and_idempotence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rows: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..8).map(|j| rng.gen_range(-1.0..1.0) * (j as f64 + 1.0) + 3.0).collect())
            .collect();
        for r in &mut rows {
            r[5] = 2.5;
        }
        let m = EmbeddingMatrix::new(Matrix::from_rows(&rows, 8).unwrap(), EmbeddingSource::File)
            .unwrap();
        let s = standardize(&m).unwrap();
        for j in 0..8 {
            let col: Vec<f64> = (0..100).map(|i| s.data.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / 100.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
            assert!(mean.abs() < 1e-9);
            assert!(var == 0.0 || (var - 1.0).abs() < 1e-9, "col {j} var {var}");
        }
        let again = standardize(&s).unwrap();
        for (a, b) in again.data.as_slice().iter().zip(s.data.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn jsonl_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let records: Vec<EmbeddingRecord> = (0..4)
            .map(|i| EmbeddingRecord {
                id: format!("r{i}"),
                text: Some("t".into()),
                label: None,
                vector: (0..3).map(|_| rng.gen::<f64>() * 1e-3 - 7.0).collect(),
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.jsonl");
        save_embeddings_jsonl(&p, &records).unwrap();
        let back = load_embeddings::<f64>(&p, EmbeddingFormat::Jsonl).unwrap();
        for (i, r) in records.iter().enumerate() {
            let got: Vec<u64> = back.matrix.data.row(i).iter().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = r.vector.iter().map(|v| v.to_bits()).collect();
            assert_eq!(got, want);
        }
    }
}
