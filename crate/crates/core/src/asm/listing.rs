//! Line grammar for IDA-style `.asm` listings.
//!
//! Each listing line is `SECTION:HEXADDR  BODY`. Comment, data and
//! directive bodies are skipped; `NAME proc` / `NAME endp` delimit
//! functions; `extrn NAME:type` declares an import.

use std::collections::BTreeMap;

use super::mnemonics::{is_mnemonic, PREFIXES};
use super::AsmError;

/// Minimum fraction of non-blank lines that must be instructions for a
/// nonstandard section to count as code.
pub const DEFAULT_CODE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineKind {
    Instruction,
    ProcStart(String),
    ProcEnd(String),
    Extern(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListingLine {
    /// 1-based line number in the source text.
    pub line_no: usize,
    pub section: String,
    pub address: u64,
    pub text: String,
    pub kind: LineKind,
}

/// Per-section counts gathered while parsing, used for code-section detection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SectionStats {
    pub nonblank: usize,
    pub instructions: usize,
}

impl SectionStats {
    pub fn instruction_fraction(&self) -> f64 {
        if self.nonblank == 0 {
            0.0
        } else {
            self.instructions as f64 / self.nonblank as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AsmListing {
    pub path: String,
    pub lines: Vec<ListingLine>,
    /// Lines that were not kept: text outside the grammar, comments, data,
    /// labels, directives and unrecognized bodies.
    pub skipped: usize,
    pub sections: BTreeMap<String, SectionStats>,
    pub warnings: Vec<String>,
}

impl AsmListing {
    pub fn instruction_count(&self) -> usize {
        self.lines
            .iter()
            .filter(|l| l.kind == LineKind::Instruction)
            .count()
    }

    /// Whether `section` is treated as code in this listing.
    pub fn is_code(&self, section: &str, threshold: f64) -> bool {
        is_standard_code_name(section)
            || self
                .sections
                .get(section)
                .is_some_and(|s| s.nonblank > 0 && s.instruction_fraction() >= threshold)
    }
}

/// Classification of a single line body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Body {
    Blank,
    Comment,
    Data,
    Directive,
    Label,
    ProcStart(String),
    ProcEnd(String),
    Extern(String),
    Instruction(String),
    Unknown,
}

const DATA_WORDS: &[&str] = &["db", "dw", "dd", "dq", "dt", "df", "align", "org"];
const DATA_SECOND_WORDS: &[&str] = &[
    "db", "dw", "dd", "dq", "dt", "df", "=", "equ", "segment", "ends", "struc", "label", "record",
];
const DIRECTIVES: &[&str] = &["assume", "public", "include", "includelib", "end", "model"];

fn is_standard_code_name(section: &str) -> bool {
    let bare = section.trim_start_matches(['.', '_']).to_ascii_lowercase();
    bare == "text" || bare == "code"
}

/// Decides whether a section holds code, either by its conventional name or
/// because at least `threshold` of its non-blank line bodies parse as
/// instructions.
pub fn is_code_section(section: &str, bodies: &[&str], threshold: f64) -> bool {
    if is_standard_code_name(section) {
        return true;
    }
    let mut stats = SectionStats::default();
    for body in bodies {
        match classify_body(body) {
            Ok(Body::Blank | Body::Comment | Body::Label | Body::Directive) => {}
            Ok(Body::Instruction(_)) => {
                stats.nonblank += 1;
                stats.instructions += 1;
            }
            _ => stats.nonblank += 1,
        }
    }
    stats.nonblank > 0 && stats.instruction_fraction() >= threshold
}

fn find_comment(body: &str) -> Option<usize> {
    let mut quote: Option<char> = None;
    for (i, ch) in body.char_indices() {
        match quote {
            Some(q) if ch == q => quote = None,
            Some(_) => {}
            None if ch == '\'' || ch == '"' => quote = Some(ch),
            None if ch == ';' => return Some(i),
            None => {}
        }
    }
    None
}

fn is_byte_dump(word: &str) -> bool {
    let word = word.strip_suffix('+').unwrap_or(word);
    word.len() == 2
        && word
            .bytes()
            .all(|b| b.is_ascii_digit() || (b'A'..=b'F').contains(&b))
}

fn starts_like_identifier(word: &str) -> bool {
    word.chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || matches!(c, '_' | '.' | '?' | '@' | '$'))
}

/// Strips an opcode byte dump and trailing comment from a body.
pub(crate) fn clean_body(body: &str) -> &str {
    let mut rest = body.trim();
    if rest.starts_with(';') {
        return rest;
    }
    loop {
        let (word, tail) = match rest.split_once(char::is_whitespace) {
            Some((w, t)) => (w, t.trim_start()),
            None => break,
        };
        if is_byte_dump(word) && !tail.is_empty() {
            rest = tail;
        } else {
            break;
        }
    }
    match find_comment(rest) {
        Some(i) => rest[..i].trim_end(),
        None => rest,
    }
}

pub(crate) fn classify_body(raw: &str) -> Result<Body, String> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Ok(Body::Blank);
    }
    if trimmed.starts_with(';') {
        return Ok(Body::Comment);
    }
    let body = clean_body(trimmed);
    if body.is_empty() {
        return Ok(Body::Comment);
    }
    let words: Vec<&str> = body.split_whitespace().collect();
    let first = words[0];
    let first_lc = first.to_ascii_lowercase();
    let second_lc = words.get(1).map(|w| w.to_ascii_lowercase());

    match second_lc.as_deref() {
        Some("proc") => return Ok(Body::ProcStart(first.to_string())),
        Some("endp") => return Ok(Body::ProcEnd(first.to_string())),
        _ => {}
    }
    if first_lc == "extrn" || first_lc == "extern" {
        return match words.get(1) {
            Some(decl) => {
                let name = decl.split(':').next().unwrap_or(decl);
                Ok(Body::Extern(name.to_string()))
            }
            None => Err(body.to_string()),
        };
    }
    if DATA_WORDS.contains(&first_lc.as_str())
        || second_lc
            .as_deref()
            .is_some_and(|w| DATA_SECOND_WORDS.contains(&w))
    {
        return Ok(Body::Data);
    }
    if DIRECTIVES.contains(&first_lc.as_str()) || first.starts_with('.') {
        return Ok(Body::Directive);
    }
    if first.ends_with(':') && words.len() == 1 {
        return Ok(Body::Label);
    }
    let is_instruction = is_mnemonic(&first_lc)
        && (!PREFIXES.contains(&first_lc.as_str()) || second_lc.as_deref().is_none_or(is_mnemonic));
    if is_instruction {
        return Ok(Body::Instruction(body.to_string()));
    }
    if starts_like_identifier(first) {
        Ok(Body::Unknown)
    } else {
        Err(body.to_string())
    }
}

/// Splits `SECTION:HEXADDR` off a raw line, returning the section, address
/// and remaining body.
fn split_prefix(line: &str) -> Option<(&str, u64, &str)> {
    let colon = line.find(':')?;
    let section = &line[..colon];
    let mut chars = section.chars();
    let head = chars.next()?;
    if !(head == '.' || head == '_' || head.is_ascii_alphabetic())
        || !chars.all(|c| c == '_' || c.is_ascii_alphanumeric())
    {
        return None;
    }
    let rest = &line[colon + 1..];
    let hex_len = rest.bytes().take_while(u8::is_ascii_hexdigit).count();
    if !(8..=16).contains(&hex_len) {
        return None;
    }
    let body = &rest[hex_len..];
    if !body.is_empty() && !body.starts_with(char::is_whitespace) {
        return None;
    }
    let address = u64::from_str_radix(&rest[..hex_len], 16).ok()?;
    Some((section, address, body))
}

/// Parses listing text. Lines outside the grammar and non-instruction bodies
/// are skipped and counted; an empty input yields an empty listing.
pub fn parse_listing(raw_text: &str) -> Result<AsmListing, AsmError> {
    parse_listing_named("", raw_text)
}

pub fn parse_listing_named(path: &str, raw_text: &str) -> Result<AsmListing, AsmError> {
    let mut listing = AsmListing {
        path: path.to_string(),
        ..AsmListing::default()
    };
    let mut last_instruction: BTreeMap<String, u64> = BTreeMap::new();

    for (idx, line) in raw_text.lines().enumerate() {
        let line_no = idx + 1;
        let Some((section, address, body)) = split_prefix(line) else {
            listing.skipped += 1;
            continue;
        };
        let body = classify_body(body).map_err(|text| AsmError::MalformedLine {
            line: line_no,
            text,
        })?;
        let stats = listing.sections.entry(section.to_string()).or_default();
        let kind = match body {
            Body::Blank | Body::Comment | Body::Label | Body::Directive => {
                listing.skipped += 1;
                continue;
            }
            Body::Data | Body::Unknown => {
                stats.nonblank += 1;
                listing.skipped += 1;
                continue;
            }
            Body::Instruction(text) => {
                stats.nonblank += 1;
                stats.instructions += 1;
                if let Some(prev) = last_instruction.insert(section.to_string(), address) {
                    if address <= prev {
                        listing.warnings.push(format!(
                            "line {line_no}: address {address:#x} does not increase in {section}"
                        ));
                    }
                }
                listing.lines.push(ListingLine {
                    line_no,
                    section: section.to_string(),
                    address,
                    text,
                    kind: LineKind::Instruction,
                });
                continue;
            }
            Body::ProcStart(name) => LineKind::ProcStart(name),
            Body::ProcEnd(name) => LineKind::ProcEnd(name),
            Body::Extern(name) => LineKind::Extern(name),
        };
        let text = clean_body(body_text(line)).to_string();
        listing.lines.push(ListingLine {
            line_no,
            section: section.to_string(),
            address,
            text,
            kind,
        });
    }
    Ok(listing)
}

fn body_text(line: &str) -> &str {
    split_prefix(line).map(|(_, _, b)| b).unwrap_or("")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_instruction() {
        let l = parse_listing(".text:00401000  mov edi, edi").unwrap();
        assert_eq!(l.lines.len(), 1);
        assert_eq!(l.lines[0].section, ".text");
        assert_eq!(l.lines[0].address, 0x401000);
        assert_eq!(l.lines[0].text, "mov edi, edi");
        assert_eq!(l.lines[0].kind, LineKind::Instruction);
    }

    #[test]
    fn empty_input_is_empty_listing() {
        let l = parse_listing("").unwrap();
        assert!(l.lines.is_empty());
        assert_eq!(l.skipped, 0);
    }

    #[test]
    fn comment_only_line_is_skipped() {
        let l = parse_listing(".text:00401000 ; comment only").unwrap();
        assert!(l.lines.is_empty());
        assert_eq!(l.skipped, 1);
    }

    #[test]
    fn ida_byte_dump_and_trailing_comment_are_stripped() {
        let l = parse_listing(
            ".text:00401000 8B 44 24 04                 mov     eax, [esp+arg_0] ; load\n",
        )
        .unwrap();
        assert_eq!(l.lines[0].text, "mov     eax, [esp+arg_0]");
    }

    #[test]
    fn proc_markers_data_and_externs() {
        let text = "\
.text:00401000 sub_401000 proc near
.text:00401000  push ebp
.text:00401001 loc_401001:
.text:00401001  retn
.text:00401001 sub_401000 endp
.data:00402000 aHello db 'hi;there',0
.idata:00403000  extrn CreateFileA:dword
garbage line
";
        let l = parse_listing(text).unwrap();
        let kinds: Vec<_> = l.lines.iter().map(|x| x.kind.clone()).collect();
        assert_eq!(
            kinds,
            vec![
                LineKind::ProcStart("sub_401000".into()),
                LineKind::Instruction,
                LineKind::Instruction,
                LineKind::ProcEnd("sub_401000".into()),
                LineKind::Extern("CreateFileA".into()),
            ]
        );
        // label, data line, garbage
        assert_eq!(l.skipped, 3);
        assert_eq!(l.sections[".data"].nonblank, 1);
        assert_eq!(l.sections[".data"].instructions, 0);
    }

    #[test]
    fn malformed_body_reports_line_number() {
        let err = parse_listing(".text:00401000  push ebp\n.text:00401001  %%% junk").unwrap_err();
        assert!(matches!(err, AsmError::MalformedLine { line: 2, .. }));
    }

    #[test]
    fn short_address_is_not_a_listing_line() {
        let l = parse_listing(".text:401000 push ebp").unwrap();
        assert!(l.lines.is_empty());
        assert_eq!(l.skipped, 1);
    }

    #[test]
    fn code_section_detection() {
        assert!(is_code_section(".text", &["db 0"], DEFAULT_CODE_THRESHOLD));
        let mut brick: Vec<&str> = vec!["push ebp"; 9];
        brick.push("db 0");
        assert!(is_code_section(".brick", &brick, DEFAULT_CODE_THRESHOLD));
        let reloc = vec!["dd 1000h", "dd 2000h", "db 0"];
        assert!(!is_code_section(".reloc", &reloc, DEFAULT_CODE_THRESHOLD));
        assert!(!is_code_section("iuagwws", &[], DEFAULT_CODE_THRESHOLD));
    }

    #[test]
    fn non_increasing_address_is_warned() {
        let l = parse_listing(".text:00401005  push ebp\n.text:00401000  pop ebp").unwrap();
        assert_eq!(l.warnings.len(), 1);
    }
}
