//! Embedding-similarity matrices over index-aligned parallel evaluation sets,
//! and their row-wise comparison against the interference matrix.
//!
//! Similarity is symmetric by construction (mean pairwise cosine over aligned
//! sentences); interference is directional. The pipeline never symmetrizes
//! the interference matrix, so the comparison quantifies whether a symmetric
//! proxy tracks a directional phenomenon.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::analytics::InterferenceMatrix;
use crate::corpus::Corpus;
use crate::matrix::{format_cell, LabeledMatrix};
use crate::model::{mean_pool, Batch, Model};
use crate::tokenizer::{Vocab, PAD_ID};

#[derive(Debug, thiserror::Error)]
pub enum SimilarityError {
    #[error("zero-norm vector (index {0})")]
    ZeroNorm(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("sentence counts differ: `{code_a}` has {m_a}, `{code_b}` has {m_b}")]
    MisalignedCounts {
        code_a: String,
        m_a: usize,
        code_b: String,
        m_b: usize,
    },
    #[error("duplicate embedding set for `{0}`")]
    DuplicateCode(String),
    #[error("row `{code}` has {got} comparable entries, need at least {need}")]
    TooFewEntries { code: String, got: usize, need: usize },
    #[error("label `{0}` not present in both matrices")]
    UnknownLabel(String),
    #[error("series has no variance, correlation undefined")]
    NoVariance,
    #[error("embedding io {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed embedding file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    OwnModel,
    ExternalFile,
}

/// Index-aligned sentence vectors for one language.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub code: String,
    pub vectors: Array2<f64>,
    pub source: EmbeddingSource,
}

impl EmbeddingSet {
    pub fn n_sentences(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Symmetric N x N mean-cosine matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(pub LabeledMatrix);

impl SimilarityMatrix {
    pub fn matrix(&self) -> &LabeledMatrix {
        &self.0
    }
}

/// Cosine similarity `u.v / (|u||v|)`; zero-norm inputs are an error.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::DimensionMismatch(u.len(), v.len()));
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 {
        return Err(SimilarityError::ZeroNorm(0));
    }
    if nv == 0.0 {
        return Err(SimilarityError::ZeroNorm(1));
    }
    // sqrt of the product, not product of sqrts: keeps perfectly aligned
    // vectors at exactly 1.0.
    Ok(dot / (nu * nv).sqrt())
}

/// Mean pairwise cosine over aligned sentences for every language pair. The
/// output is exactly symmetric (each unordered pair is computed once) with a
/// unit diagonal; matrix order follows the input order.
pub fn similarity_matrix(sets: &[EmbeddingSet]) -> Result<SimilarityMatrix, SimilarityError> {
    for w in sets.windows(2) {
        if w[0].dim() != w[1].dim() {
            return Err(SimilarityError::DimensionMismatch(w[0].dim(), w[1].dim()));
        }
        if w[0].n_sentences() != w[1].n_sentences() {
            return Err(SimilarityError::MisalignedCounts {
                code_a: w[0].code.clone(),
                m_a: w[0].n_sentences(),
                code_b: w[1].code.clone(),
                m_b: w[1].n_sentences(),
            });
        }
    }
    let labels: Vec<String> = sets.iter().map(|s| s.code.clone()).collect();
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(SimilarityError::DuplicateCode(l.clone()));
        }
    }
    let mut m = LabeledMatrix::new(labels);
    let n = sets.len();
    for a in 0..n {
        m.set(a, a, 1.0);
        for b in (a + 1)..n {
            let rows = sets[a].n_sentences();
            let mut sum = 0.0;
            for i in 0..rows {
                sum += cosine(
                    sets[a].vectors.row(i).as_slice().unwrap(),
                    sets[b].vectors.row(i).as_slice().unwrap(),
                )
                .map_err(|_| SimilarityError::ZeroNorm(i))?;
            }
            let mean = sum / rows as f64;
            m.set(a, b, mean);
            m.set(b, a, mean);
        }
    }
    Ok(SimilarityMatrix(m))
}

/// Paired (similarity, interference) values and their correlations for one
/// language's row, over off-diagonal unmasked entries present in both
/// matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowComparison {
    pub code: String,
    pub pearson: f64,
    pub spearman: f64,
    pub pairs: Vec<(String, f64, f64)>,
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, SimilarityError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(SimilarityError::NoVariance);
    }
    // sqrt of the product so that perfectly (anti)correlated series give
    // exactly +/-1.
    Ok(cov / (vx * vy).sqrt())
}

/// Ranks with ties averaged, 1-based.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite"));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg_rank;
        }
        i = j + 1;
    }
    out
}

fn spearman(x: &[f64], y: &[f64]) -> Result<f64, SimilarityError> {
    pearson(&ranks(x), &ranks(y))
}

/// Compare one row of the interference matrix against the same row of a
/// similarity matrix: Pearson r, Spearman rho, and the paired series for
/// plotting.
pub fn row_compare(
    interference: &InterferenceMatrix,
    similarity: &SimilarityMatrix,
    code: &str,
) -> Result<RowComparison, SimilarityError> {
    let im = interference.matrix();
    let sm = similarity.matrix();
    let (Some(ir), Some(sr)) = (im.index_of(code), sm.index_of(code)) else {
        return Err(SimilarityError::UnknownLabel(code.to_string()));
    };
    let mut pairs = Vec::new();
    for col_label in im.labels() {
        if col_label == code {
            continue;
        }
        let (Some(ic), Some(sc)) = (im.index_of(col_label), sm.index_of(col_label)) else {
            continue;
        };
        if let (Some(i_val), Some(s_val)) = (im.get(ir, ic), sm.get(sr, sc)) {
            pairs.push((col_label.clone(), s_val, i_val));
        }
    }
    if pairs.len() < 3 {
        return Err(SimilarityError::TooFewEntries {
            code: code.to_string(),
            got: pairs.len(),
            need: 3,
        });
    }
    let sims: Vec<f64> = pairs.iter().map(|(_, s, _)| *s).collect();
    let ints: Vec<f64> = pairs.iter().map(|(_, _, i)| *i).collect();
    Ok(RowComparison {
        code: code.to_string(),
        pearson: pearson(&sims, &ints)?,
        spearman: spearman(&sims, &ints)?,
        pairs,
    })
}

/// Mean-pooled final hidden states of a frozen checkpoint over a corpus, one
/// vector per sentence, batched for throughput.
pub fn extract_embeddings(
    model: &Model,
    corpus: &Corpus,
    vocab: &Vocab,
) -> Result<EmbeddingSet, SimilarityError> {
    let encoded = vocab.encode_corpus(corpus, model.config.max_len);
    let d = model.config.d_model;
    let mut vectors = Array2::zeros((encoded.len(), d));
    for (chunk_start, chunk) in encoded.chunks(32).enumerate().map(|(i, c)| (i * 32, c)) {
        let t = chunk.iter().map(|ids| ids.len()).max().unwrap_or(1);
        let mut input_ids = Array2::from_elem((chunk.len(), t), PAD_ID as usize);
        let mut mask = Array2::from_elem((chunk.len(), t), false);
        for (bi, ids) in chunk.iter().enumerate() {
            for (ti, &id) in ids.iter().enumerate() {
                input_ids[[bi, ti]] = id as usize;
                mask[[bi, ti]] = true;
            }
        }
        let batch = Batch {
            input_ids,
            attention_mask: mask,
            labels: Array2::from_elem((chunk.len(), t), -1i64),
        };
        let pooled = mean_pool(model, &batch)?;
        for bi in 0..chunk.len() {
            for c in 0..d {
                vectors[[chunk_start + bi, c]] = pooled[[bi, c]];
            }
        }
    }
    Ok(EmbeddingSet {
        code: corpus.code.clone(),
        vectors,
        source: EmbeddingSource::OwnModel,
    })
}

/// Serialize to the embedding file format: `emb v1 <code> <M> <d>` then one
/// line of d space-separated reals per sentence.
pub fn embeddings_to_string(set: &EmbeddingSet) -> String {
    let mut out = format!(
        "emb v1 {} {} {}\n",
        set.code,
        set.n_sentences(),
        set.dim()
    );
    for row in set.vectors.rows() {
        let cells: Vec<String> = row.iter().map(|v| format_cell(*v)).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

pub fn embeddings_from_string(text: &str) -> Result<EmbeddingSet, SimilarityError> {
    let bad = |m: String| SimilarityError::BadFile(m);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != "emb" || parts[1] != "v1" {
        return Err(bad(format!("bad header `{header}`")));
    }
    let code = parts[2].to_string();
    let m: usize = parts[3].parse().map_err(|_| bad("bad sentence count".into()))?;
    let d: usize = parts[4].parse().map_err(|_| bad("bad dimension".into()))?;
    if m == 0 || d == 0 {
        return Err(bad("empty vector list".into()));
    }
    let mut vectors = Array2::zeros((m, d));
    for i in 0..m {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("expected {m} vectors, file ends at {i}")))?;
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != d {
            return Err(bad(format!(
                "vector {i} has {} components, declared d={d}",
                values.len()
            )));
        }
        for (j, cell) in values.iter().enumerate() {
            vectors[[i, j]] = cell
                .parse()
                .map_err(|_| bad(format!("cannot parse `{cell}`")))?;
        }
    }
    Ok(EmbeddingSet {
        code,
        vectors,
        source: EmbeddingSource::ExternalFile,
    })
}

pub fn save_embeddings(set: &EmbeddingSet, path: &Path) -> Result<(), SimilarityError> {
    std::fs::write(path, embeddings_to_string(set)).map_err(|source| SimilarityError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parse an externally produced embedding file (one set per language).
pub fn load_external_embeddings(path: &Path) -> Result<EmbeddingSet, SimilarityError> {
    let text = std::fs::read_to_string(path).map_err(|source| SimilarityError::Io {
        path: path.display().to_string(),
        source,
    })?;
    embeddings_from_string(&text)
}
