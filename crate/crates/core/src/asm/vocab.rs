//! Token vocabulary: reserved sentinels followed by the most frequent
//! instruction tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{AsmError, FunctionRecord};

pub const PAD_TOKEN: &str = "<pad>";
pub const START_TOKEN: &str = "<start>";
pub const END_TOKEN: &str = "<end>";
pub const UNKNOWN_TOKEN: &str = "<unknown>";

pub const PAD_ID: u32 = 0;
pub const START_ID: u32 = 1;
pub const END_ID: u32 = 2;
pub const UNKNOWN_ID: u32 = 3;
const RESERVED: [&str; 4] = [PAD_TOKEN, START_TOKEN, END_TOKEN, UNKNOWN_TOKEN];

pub const DEFAULT_MAX_SIZE: usize = 20_000;
pub const DEFAULT_MAX_LEN: usize = 300;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
    max_size: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyFile {
    schema: String,
    max_size: usize,
    /// Content tokens in id order, starting at id 4.
    tokens: Vec<String>,
}

const SCHEMA: &str = "vocab/1";

impl Vocabulary {
    fn from_content(content: Vec<String>, max_size: usize) -> Self {
        let id_to_token: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(content)
            .collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            id_to_token,
            token_to_id,
            max_size,
        }
    }

    /// Total ids including the reserved ones.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn content_len(&self) -> usize {
        self.id_to_token.len() - RESERVED.len()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    /// Id for `token`; out-of-vocabulary tokens map to `<unknown>`.
    pub fn encode_token(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNKNOWN_ID)
    }

    pub fn id_to_token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn content_tokens(&self) -> &[String] {
        &self.id_to_token[RESERVED.len()..]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&VocabularyFile {
            schema: SCHEMA.into(),
            max_size: self.max_size,
            tokens: self.content_tokens().to_vec(),
        })
        .expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AsmError> {
        let file: VocabularyFile = serde_json::from_str(text)?;
        if file.schema != SCHEMA {
            return Err(AsmError::Schema(file.schema));
        }
        Ok(Self::from_content(file.tokens, file.max_size))
    }

    /// SHA-256 of the serialized vocabulary, used to bind models to it.
    pub fn fingerprint(&self) -> String {
        crate::rng::sha256_hex(self.to_json().as_bytes())
    }
}

/// Keeps the `max_size` most frequent tokens over all internal functions;
/// ties go to the lexicographically smaller token.
pub fn build_vocabulary(
    corpus: &[FunctionRecord],
    max_size: usize,
) -> Result<Vocabulary, AsmError> {
    if corpus.is_empty() {
        return Err(AsmError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for f in corpus.iter().filter(|f| !f.is_external) {
        for t in &f.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    Ok(vocabulary_from_counts(counts, max_size))
}

/// Same as [`build_vocabulary`] from precomputed counts; counts from
/// separate shards may be merged in any order.
pub fn vocabulary_from_counts<S: AsRef<str>>(
    counts: impl IntoIterator<Item = (S, u64)>,
    max_size: usize,
) -> Vocabulary {
    let mut ranked: Vec<(String, u64)> = counts
        .into_iter()
        .map(|(t, c)| (t.as_ref().to_string(), c))
        .filter(|(t, _)| !RESERVED.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size);
    Vocabulary::from_content(ranked.into_iter().map(|(t, _)| t).collect(), max_size)
}

/// `[<start>] + ids(tokens[..max_len]) + [<end>]`.
pub fn encode_sequence(
    f: &FunctionRecord,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<u32>, AsmError> {
    if f.is_external {
        return Err(AsmError::ExternalFunction(f.name.clone()));
    }
    let mut ids = Vec::with_capacity(f.tokens.len().min(max_len) + 2);
    ids.push(START_ID);
    ids.extend(f.tokens.iter().take(max_len).map(|t| vocab.encode_token(t)));
    ids.push(END_ID);
    Ok(ids)
}
