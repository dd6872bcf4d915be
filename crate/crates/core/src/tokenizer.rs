//! Shared subword vocabulary: BPE trained once over the union of all
//! languages' train splits, playing the role of a single multilingual
//! tokenizer.
//!
//! Words are whitespace-pretokenized and prefixed with a `▁` boundary marker,
//! so decode can reconstruct spacing. Merges are greedy by pair frequency with
//! lexicographic tie-breaking, which makes training deterministic.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::corpus::Corpus;
use crate::digest::fnv1a;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const N_SPECIALS: usize = 5;
pub const SPECIAL_PIECES: [&str; N_SPECIALS] = ["<pad>", "<unk>", "<cls>", "<sep>", "<mask>"];

const WORD_MARKER: char = '\u{2581}'; // ▁

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("vocab_size {got} too small: need at least {needed} (specials + alphabet)")]
    VocabTooSmall { got: usize, needed: usize },
    #[error("no training text given")]
    EmptyTraining,
    #[error("token id {id} out of range for vocabulary of {size} pieces")]
    IdOutOfRange { id: u32, size: usize },
    #[error("failed to read vocab {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed vocab file: {0}")]
    BadFile(String),
}

/// An immutable BPE vocabulary. Ids 0..4 are the special tokens, followed by
/// the single-character alphabet and then merged pieces in merge order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    pieces: Vec<String>,
    merges: Vec<(String, String)>,
    byte_fallback: bool,
    piece_ids: HashMap<String, u32>,
    merge_ranks: HashMap<(String, String), usize>,
}

impl Vocab {
    fn build(
        pieces: Vec<String>,
        merges: Vec<(String, String)>,
        byte_fallback: bool,
    ) -> Result<Self, TokenizerError> {
        if pieces.len() < N_SPECIALS {
            return Err(TokenizerError::BadFile("fewer than 5 pieces".to_string()));
        }
        for (i, expected) in SPECIAL_PIECES.iter().enumerate() {
            if pieces[i] != *expected {
                return Err(TokenizerError::BadFile(format!(
                    "piece {i} must be `{expected}`, got `{}`",
                    pieces[i]
                )));
            }
        }
        let mut piece_ids = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if piece_ids.insert(p.clone(), i as u32).is_some() {
                return Err(TokenizerError::BadFile(format!("duplicate piece `{p}`")));
            }
        }
        let mut merge_ranks = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.iter().enumerate() {
            let merged = format!("{l}{r}");
            for part in [l.as_str(), r.as_str(), merged.as_str()] {
                if !piece_ids.contains_key(part) {
                    return Err(TokenizerError::BadFile(format!(
                        "merge `{l}`+`{r}` references unknown piece `{part}`"
                    )));
                }
            }
            merge_ranks.insert((l.clone(), r.clone()), rank);
        }
        Ok(Vocab {
            pieces,
            merges,
            byte_fallback,
            piece_ids,
            merge_ranks,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn piece_id(&self, piece: &str) -> Option<u32> {
        self.piece_ids.get(piece).copied()
    }

    /// Split one pretokenized word (already carrying the boundary marker)
    /// into final BPE symbols.
    fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, position)
            for i in 0..symbols.len().saturating_sub(1) {
                if let Some(&rank) = self
                    .merge_ranks
                    .get(&(symbols[i].clone(), symbols[i + 1].clone()))
                {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((rank, _)) = best else { break };
            let (l, r) = self.merges[rank].clone();
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
                    merged.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    merged.push(symbols[i].clone());
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    fn word_to_ids(&self, word: &str, out: &mut Vec<u32>) {
        for symbol in self.segment_word(word) {
            match self.piece_ids.get(&symbol) {
                Some(&id) => out.push(id),
                None if self.byte_fallback => {
                    for b in symbol.bytes() {
                        match self.piece_ids.get(&format!("<0x{b:02X}>")) {
                            Some(&id) => out.push(id),
                            None => out.push(UNK_ID),
                        }
                    }
                }
                None => out.push(UNK_ID),
            }
        }
    }

    /// Encode text to `[cls] pieces [sep]`, truncated to `max_len` keeping
    /// `[cls]` and forcing a final `[sep]`.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        let mut ids = vec![CLS_ID];
        let mut cache: HashMap<&str, Vec<u32>> = HashMap::new();
        for token in text.split_whitespace() {
            let word_ids = cache.entry(token).or_insert_with(|| {
                let mut buf = Vec::new();
                self.word_to_ids(&format!("{WORD_MARKER}{token}"), &mut buf);
                buf
            });
            ids.extend_from_slice(word_ids);
        }
        ids.push(SEP_ID);
        if ids.len() > max_len {
            ids.truncate(max_len.max(1));
            if max_len >= 2 {
                ids[max_len - 1] = SEP_ID;
            }
        }
        ids
    }

    /// Encode a whole corpus, memoizing per unique word. Sentences that carry
    /// no encodable word still produce `[cls, sep]`.
    pub fn encode_corpus(&self, corpus: &Corpus, max_len: usize) -> Vec<Vec<u32>> {
        let mut cache: HashMap<String, Vec<u32>> = HashMap::new();
        corpus
            .sentences
            .iter()
            .map(|sentence| {
                let mut ids = vec![CLS_ID];
                for token in sentence.split_whitespace() {
                    if !cache.contains_key(token) {
                        let mut buf = Vec::new();
                        self.word_to_ids(&format!("{WORD_MARKER}{token}"), &mut buf);
                        cache.insert(token.to_string(), buf);
                    }
                    ids.extend_from_slice(&cache[token]);
                }
                ids.push(SEP_ID);
                if ids.len() > max_len {
                    ids.truncate(max_len);
                    ids[max_len - 1] = SEP_ID;
                }
                ids
            })
            .collect()
    }

    /// Inverse of [`Vocab::encode`] for in-vocabulary text: drops special
    /// tokens, joins pieces, and turns boundary markers back into spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut joined = String::new();
        for &id in ids {
            if id as usize >= self.pieces.len() {
                return Err(TokenizerError::IdOutOfRange {
                    id,
                    size: self.pieces.len(),
                });
            }
            if (id as usize) < N_SPECIALS {
                continue;
            }
            joined.push_str(&self.pieces[id as usize]);
        }
        let spaced = joined.replace(WORD_MARKER, " ");
        Ok(spaced.trim_start().to_string())
    }

    /// Serialize to the text vocab format.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("bpe-vocab v1 {}\n", self.pieces.len());
        for p in &self.pieces {
            out.push_str(p);
            out.push('\n');
        }
        out.push_str("#merges\n");
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push('\t');
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn file_hash(&self) -> u64 {
        fnv1a(self.to_file_string().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_file_string()).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_file_string(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| TokenizerError::BadFile("empty file".to_string()))?;
        let n_pieces: usize = header
            .strip_prefix("bpe-vocab v1 ")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| TokenizerError::BadFile(format!("bad header `{header}`")))?;
        let mut pieces = Vec::with_capacity(n_pieces);
        for _ in 0..n_pieces {
            let piece = lines
                .next()
                .ok_or_else(|| TokenizerError::BadFile("truncated piece list".to_string()))?;
            pieces.push(piece.to_string());
        }
        match lines.next() {
            Some("#merges") => {}
            other => {
                return Err(TokenizerError::BadFile(format!(
                    "expected `#merges`, got {other:?}"
                )))
            }
        }
        let mut merges = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let (l, r) = line.split_once('\t').ok_or_else(|| {
                TokenizerError::BadFile(format!("merge line `{line}` missing tab"))
            })?;
            merges.push((l.to_string(), r.to_string()));
        }
        Vocab::build(pieces, merges, false)
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let text = std::fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_file_string(&text)
    }
}

/// Train a BPE vocabulary over whitespace-pretokenized text. Pairs are merged
/// greedily by frequency; equal-frequency ties go to the lexicographically
/// smallest `(left, right)` pair. Stops when the vocabulary is full or no pair
/// occurs at least twice, so the final piece count may be below `vocab_size`.
pub fn train_bpe(corpora: &[&Corpus], vocab_size: usize) -> Result<Vocab, TokenizerError> {
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for corpus in corpora {
        for sentence in &corpus.sentences {
            for token in sentence.split_whitespace() {
                *word_counts
                    .entry(format!("{WORD_MARKER}{token}"))
                    .or_default() += 1;
            }
        }
    }
    if word_counts.is_empty() {
        return Err(TokenizerError::EmptyTraining);
    }

    let alphabet: BTreeSet<String> = word_counts
        .keys()
        .flat_map(|w| w.chars().map(|c| c.to_string()))
        .collect();
    let needed = N_SPECIALS + alphabet.len();
    if vocab_size < needed {
        return Err(TokenizerError::VocabTooSmall {
            got: vocab_size,
            needed,
        });
    }

    let mut pieces: Vec<String> = SPECIAL_PIECES.iter().map(|s| s.to_string()).collect();
    pieces.extend(alphabet.iter().cloned());

    let mut words: Vec<(Vec<String>, u64)> = word_counts
        .into_iter()
        .map(|(w, c)| (w.chars().map(|ch| ch.to_string()).collect(), c))
        .collect();

    let mut merges: Vec<(String, String)> = Vec::new();
    while pieces.len() < vocab_size {
        let mut pair_counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (symbols, count) in &words {
            for pair in symbols.windows(2) {
                *pair_counts
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_default() += count;
            }
        }
        // BTreeMap iteration is sorted, so the first maximum seen is the
        // lexicographically smallest pair among ties.
        let mut best: Option<(&(String, String), u64)> = None;
        for (pair, &count) in &pair_counts {
            if best.map_or(true, |(_, c)| count > c) {
                best = Some((pair, count));
            }
        }
        let Some((pair, count)) = best else { break };
        if count < 2 {
            break;
        }
        let (l, r) = pair.clone();
        let merged = format!("{l}{r}");
        for (symbols, _) in &mut words {
            let mut out = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            *symbols = out;
        }
        pieces.push(merged);
        merges.push((l, r));
    }

    Vocab::build(pieces, merges, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Provenance, SyntheticLanguageSpec};

    fn corpus_of(lines: &[&str]) -> Corpus {
        Corpus {
            code: "t_Latn".to_string(),
            sentences: lines.iter().map(|s| s.to_string()).collect(),
            provenance: Provenance::File,
        }
    }

    fn synth(code: &str, offset: u64, seed: u64) -> Corpus {
        generate_synthetic(
            &SyntheticLanguageSpec {
                code: code.to_string(),
                vocab_size: 120,
                token_id_offset: offset,
                zipf_exponent: 1.1,
                markov_order: 1,
                avg_sentence_len: 6,
                seed,
            },
            300,
        )
        .unwrap()
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let c = corpus_of(&["ab ab ab"]);
        let vocab = train_bpe(&[&c], 300).unwrap();
        // (a,b) and (marker,a) both occur 3 times; lexicographic tie-break
        // prefers ("a","b") because ASCII sorts before the marker.
        let first = &vocab.merges[0];
        assert_eq!((first.0.as_str(), first.1.as_str()), ("a", "b"));
    }

    #[test]
    fn training_is_deterministic() {
        let a = synth("a_Latn", 0, 3);
        let b = synth("b_Cyrl", 500, 4);
        let v1 = train_bpe(&[&a, &b], 200).unwrap();
        let v2 = train_bpe(&[&a, &b], 200).unwrap();
        assert_eq!(v1.to_file_string(), v2.to_file_string());
    }

    #[test]
    fn disjoint_scripts_never_mix_in_pieces() {
        let a = synth("a_Latn", 0, 3);
        let b = synth("b_Cyrl", 500, 4);
        let vocab = train_bpe(&[&a, &b], 260).unwrap();
        let is_latin = |c: char| c.is_ascii_lowercase();
        let is_cyrillic = |c: char| ('\u{0400}'..='\u{04FF}').contains(&c);
        for piece in vocab.pieces().iter().skip(N_SPECIALS) {
            let has_latin = piece.chars().any(is_latin);
            let has_cyr = piece.chars().any(is_cyrillic);
            assert!(
                !(has_latin && has_cyr),
                "piece `{piece}` mixes scripts"
            );
        }
    }

    #[test]
    fn rejects_too_small_vocab() {
        let c = corpus_of(&["abc def"]);
        assert!(matches!(
            train_bpe(&[&c], 8),
            Err(TokenizerError::VocabTooSmall { .. })
        ));
    }

    #[test]
    fn encode_empty_and_truncation() {
        let c = corpus_of(&["ab ab ab", "cd cd"]);
        let vocab = train_bpe(&[&c], 40).unwrap();
        assert_eq!(vocab.encode("", 16), vec![CLS_ID, SEP_ID]);

        let long_text = "ab ".repeat(50);
        let ids = vocab.encode(&long_text, 16);
        assert_eq!(ids.len(), 16);
        assert_eq!(ids[0], CLS_ID);
        assert_eq!(*ids.last().unwrap(), SEP_ID);
    }

    #[test]
    fn encode_decode_round_trip() {
        let a = synth("a_Latn", 0, 3);
        let vocab = train_bpe(&[&a], 200).unwrap();
        for sentence in a.sentences.iter().take(25) {
            let normalized = sentence.split_whitespace().collect::<Vec<_>>().join(" ");
            let ids = vocab.encode(sentence, 512);
            assert!(ids.iter().all(|&id| (id as usize) < vocab.len()));
            assert_eq!(vocab.decode(&ids).unwrap(), normalized);
        }
    }

    #[test]
    fn decode_specials_and_errors() {
        let c = corpus_of(&["ab ab"]);
        let vocab = train_bpe(&[&c], 40).unwrap();
        assert_eq!(vocab.decode(&[CLS_ID, SEP_ID]).unwrap(), "");
        let oob = vocab.len() as u32;
        assert!(matches!(
            vocab.decode(&[oob]),
            Err(TokenizerError::IdOutOfRange { .. })
        ));
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let c = corpus_of(&["ab ab"]);
        let vocab = train_bpe(&[&c], 40).unwrap();
        // The boundary marker is a known piece; x, y, z are not.
        let ids = vocab.encode("xyz", 16);
        let unks = ids.iter().filter(|&&id| id == UNK_ID).count();
        assert_eq!(unks, 3);
        assert_eq!(ids[0], CLS_ID);
        assert_eq!(*ids.last().unwrap(), SEP_ID);
    }

    #[test]
    fn vocab_file_round_trip_is_byte_identical() {
        let a = synth("a_Latn", 0, 3);
        let vocab = train_bpe(&[&a], 150).unwrap();
        let text = vocab.to_file_string();
        let reloaded = Vocab::from_file_string(&text).unwrap();
        assert_eq!(reloaded.to_file_string(), text);
        assert_eq!(reloaded, vocab);
    }

    #[test]
    fn file_validation_rejects_garbage() {
        assert!(Vocab::from_file_string("not a header\n").is_err());
        // Specials must come first.
        assert!(Vocab::from_file_string("bpe-vocab v1 5\na\nb\nc\nd\ne\n#merges\n").is_err());
        // Merge referencing unknown piece.
        let text = "bpe-vocab v1 7\n<pad>\n<unk>\n<cls>\n<sep>\n<mask>\na\nb\n#merges\na\tq\n";
        assert!(Vocab::from_file_string(text).is_err());
    }
}
