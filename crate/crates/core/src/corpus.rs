//! Corpus ingestion: normalization, vocabulary, label table, encoding,
//! and the JSON-lines document format.
//!
//! File format, one document per line:
//! `{"sentences": [[token, ...], ...], "relations": [name-or-null, ...]}`
//! with `relations` the same length as `sentences`; slot t labels the
//! transition into sentence t (slot 0 labels the document start).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Reserved vocabulary entries, in fixed id order.
pub const UNK_ID: usize = 0;
pub const NUM_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
pub const RESERVED: [&str; 4] = ["UNK", "NUM", "<s>", "</s>"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub sentences: Vec<Vec<String>>,
    pub relations: Vec<Option<String>>,
}

/// Lowercases a token and collapses number-like tokens to the NUM
/// symbol. Number syntax: optional sign, digits either plain or in
/// 3-digit comma groups, optional decimal part. Reserved symbols pass
/// through untouched, which makes the mapping idempotent: running it
/// twice over a corpus changes nothing.
pub fn preprocess_token(token: &str) -> String {
    if RESERVED.contains(&token) {
        return token.to_string();
    }
    if is_number_token(token) {
        return RESERVED[NUM_ID].to_string();
    }
    token.to_lowercase()
}

fn is_number_token(token: &str) -> bool {
    let t = token.strip_prefix(['+', '-']).unwrap_or(token);
    if t.is_empty() {
        return false;
    }
    let (int_part, frac_part) = match t.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (t, None),
    };
    if let Some(f) = frac_part {
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return false;
        }
    }
    if int_part.is_empty() {
        return false;
    }
    if int_part.bytes().all(|b| b.is_ascii_digit()) {
        return true;
    }
    // comma-grouped: 1-3 digits, then groups of exactly 3
    let mut groups = int_part.split(',');
    let first = groups.next().unwrap_or("");
    if first.is_empty() || first.len() > 3 || !first.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    let mut saw_group = false;
    for g in groups {
        saw_group = true;
        if g.len() != 3 || !g.bytes().all(|b| b.is_ascii_digit()) {
            return false;
        }
    }
    saw_group
}

pub fn preprocess_sentence(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| preprocess_token(t)).collect()
}

pub fn preprocess_document(doc: &RawDocument) -> RawDocument {
    RawDocument {
        sentences: doc
            .sentences
            .iter()
            .map(|s| preprocess_sentence(s))
            .collect(),
        relations: doc.relations.clone(),
    }
}

// ── vocabulary ──

#[derive(Debug, Clone)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(id_to_token: Vec<String>) -> Vocabulary {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            id_to_token,
            token_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Id of a normalized token, UNK when out of vocabulary.
    pub fn id_of(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for t in &self.id_to_token {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let reader = BufReader::new(File::open(path)?);
        let mut tokens = Vec::new();
        for line in reader.lines() {
            tokens.push(line?);
        }
        if tokens.len() < RESERVED.len() {
            return Err(Error::CorpusParse {
                path: path.display().to_string(),
                line: tokens.len(),
                msg: "vocabulary shorter than the reserved prefix".into(),
            });
        }
        for (i, want) in RESERVED.iter().enumerate() {
            if tokens[i] != *want {
                return Err(Error::CorpusParse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("reserved token {want:?} expected, found {:?}", tokens[i]),
                });
            }
        }
        Ok(Vocabulary::from_tokens(tokens))
    }
}

/// Builds a vocabulary from preprocessed training documents: the
/// `cap` most frequent tokens (ties broken lexicographically) after the
/// four reserved entries. A pure function of the training split.
pub fn build_vocab(train: &[RawDocument], cap: usize) -> Result<Vocabulary> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut freq: HashMap<String, u64> = HashMap::new();
    for doc in train {
        for sent in &doc.sentences {
            for tok in sent {
                let norm = preprocess_token(tok);
                if RESERVED.contains(&norm.as_str()) {
                    continue;
                }
                *freq.entry(norm).or_insert(0) += 1;
            }
        }
    }
    let mut by_freq: Vec<(String, u64)> = freq.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    by_freq.truncate(cap);
    let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    id_to_token.extend(by_freq.into_iter().map(|(t, _)| t));
    Ok(Vocabulary::from_tokens(id_to_token))
}

// ── label table ──

/// Relation label names; index 0 is the fill-in used for unlabeled
/// slots (the "dummy" relation of PDTB-style protocols).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTable {
    names: Vec<String>,
}

pub const DUMMY_LABEL: usize = 0;

impl LabelTable {
    pub fn new(names: Vec<String>) -> Result<LabelTable> {
        if names.is_empty() {
            return Err(Error::InvalidConfig {
                msg: "label table needs at least the dummy label".into(),
            });
        }
        Ok(LabelTable { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for n in &self.names {
            writeln!(w, "{n}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LabelTable> {
        let reader = BufReader::new(File::open(path)?);
        let mut names = Vec::new();
        for line in reader.lines() {
            names.push(line?);
        }
        LabelTable::new(names)
    }
}

// ── encoding ──

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDocument {
    /// Token ids per sentence, each terminated by EOS.
    pub sentences: Vec<Vec<usize>>,
    /// One relation id per sentence; unlabeled slots carry the dummy id.
    pub relations: Vec<usize>,
    /// Whether the raw document carried an explicit label at each slot.
    pub labeled: Vec<bool>,
}

impl EncodedDocument {
    /// Number of modeled tokens (terminators included).
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }

    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }
}

#[derive(Debug, Clone)]
pub struct EncodedCorpus {
    pub documents: Vec<EncodedDocument>,
}

impl EncodedCorpus {
    pub fn token_count(&self) -> usize {
        self.documents.iter().map(|d| d.token_count()).sum()
    }
}

/// Normalizes and encodes documents: tokens to ids (OOV becomes UNK),
/// relation names to label ids (absent becomes the dummy id), EOS
/// appended to every sentence.
pub fn encode(
    docs: &[RawDocument],
    vocab: &Vocabulary,
    labels: &LabelTable,
) -> Result<EncodedCorpus> {
    let mut documents = Vec::with_capacity(docs.len());
    for doc in docs {
        if doc.relations.len() != doc.sentences.len() {
            return Err(Error::InvalidConfig {
                msg: format!(
                    "document has {} sentences but {} relation slots",
                    doc.sentences.len(),
                    doc.relations.len()
                ),
            });
        }
        let mut sentences = Vec::with_capacity(doc.sentences.len());
        for sent in &doc.sentences {
            let mut ids: Vec<usize> = sent
                .iter()
                .map(|t| vocab.id_of(&preprocess_token(t)))
                .collect();
            ids.push(EOS_ID);
            sentences.push(ids);
        }
        let mut relations = Vec::with_capacity(doc.relations.len());
        let mut labeled = Vec::with_capacity(doc.relations.len());
        for rel in &doc.relations {
            match rel {
                Some(name) => {
                    let id = labels
                        .index_of(name)
                        .ok_or_else(|| Error::UnknownLabel { name: name.clone() })?;
                    relations.push(id);
                    labeled.push(true);
                }
                None => {
                    relations.push(DUMMY_LABEL);
                    labeled.push(false);
                }
            }
        }
        documents.push(EncodedDocument {
            sentences,
            relations,
            labeled,
        });
    }
    Ok(EncodedCorpus { documents })
}

/// Token ids back to strings, dropping the terminator.
pub fn decode_sentence(ids: &[usize], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .filter(|&&id| id != EOS_ID)
        .map(|&id| vocab.token(id).to_string())
        .collect()
}

// ── document files ──

pub fn load_documents(path: &Path) -> Result<Vec<RawDocument>> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line).map_err(|e| Error::CorpusParse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if doc.relations.len() != doc.sentences.len() {
            return Err(Error::CorpusParse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!(
                    "{} sentences but {} relation slots",
                    doc.sentences.len(),
                    doc.relations.len()
                ),
            });
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(docs)
}

pub fn save_documents(docs: &[RawDocument], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for doc in docs {
        let line = serde_json::to_string(doc).map_err(|e| Error::CorpusParse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}
