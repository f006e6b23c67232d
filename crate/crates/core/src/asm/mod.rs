//! Disassembly ingestion: listing grammar, instruction tokens, functions and
//! the token vocabulary.

mod functions;
mod listing;
mod mnemonics;
mod normalize;
mod vocab;

pub use functions::{
    extract_functions, extract_functions_with, read_jsonl, write_jsonl, ExtractOptions,
    ExtractWarning, Extraction, FunctionRecord,
};
pub use listing::{
    is_code_section, parse_listing, parse_listing_named, AsmListing, LineKind, ListingLine,
    SectionStats, DEFAULT_CODE_THRESHOLD,
};
pub use normalize::{call_target, normalize_instruction};
pub use vocab::{
    build_vocabulary, encode_sequence, vocabulary_from_counts, Vocabulary, DEFAULT_MAX_LEN,
    DEFAULT_MAX_SIZE, END_ID, END_TOKEN, PAD_ID, PAD_TOKEN, START_ID, START_TOKEN, UNKNOWN_ID,
    UNKNOWN_TOKEN,
};

/// Placeholder substituted for address-like operands.
pub const ADDR_TOKEN: &str = "<addr>";

#[derive(Debug, thiserror::Error)]
pub enum AsmError {
    #[error("line {line}: unparsable instruction body `{text}`")]
    MalformedLine { line: usize, text: String },
    #[error("empty instruction")]
    EmptyInstruction,
    #[error("vocabulary needs at least one function")]
    EmptyCorpus,
    #[error("function `{0}` is external and has no instructions")]
    ExternalFunction(String),
    #[error("unsupported schema `{0}`")]
    Schema(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Parses and extracts a listing in one step.
pub fn ingest_listing(path: &str, text: &str) -> Result<Extraction, AsmError> {
    let listing = parse_listing_named(path, text)?;
    extract_functions(&listing)
}
