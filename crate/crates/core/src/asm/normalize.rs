//! Instruction normalization: one canonical token per instruction, with
//! address-like operands replaced by `<addr>`.

use super::mnemonics::{is_branch, is_register, PREFIXES};
use super::{AsmError, ADDR_TOKEN};

/// Immediates at or above this value are treated as addresses.
const ADDRESS_FLOOR: u64 = 0x1000;

/// IDA auto-generated names derived from an address (`sub_401000`, ...).
const ADDRESS_NAME_PREFIXES: &[&str] = &[
    "loc_", "locret_", "sub_", "off_", "unk_", "byte_", "word_", "dword_", "qword_",
];

const SIZE_WORDS: &[&str] = &[
    "short", "near", "far", "ptr", "byte", "word", "dword", "qword", "tbyte", "xmmword",
];

fn parse_hex_literal(tok: &str) -> Option<u64> {
    if let Some(hex) = tok.strip_prefix("0x") {
        return u64::from_str_radix(hex, 16).ok();
    }
    let hex = tok.strip_suffix('h')?;
    if hex.is_empty() || !hex.as_bytes()[0].is_ascii_digit() {
        return None;
    }
    u64::from_str_radix(hex, 16).ok()
}

pub(crate) fn is_address_name(tok: &str) -> bool {
    ADDRESS_NAME_PREFIXES.iter().any(|p| {
        tok.strip_prefix(p)
            .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_hexdigit()))
    })
}

fn is_address_word(tok: &str) -> bool {
    tok == ADDR_TOKEN
        || is_address_name(tok)
        || parse_hex_literal(tok).is_some_and(|v| v >= ADDRESS_FLOOR)
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '?' | '@' | '$')
}

/// Splits operands on top-level commas (commas inside brackets stay).
fn split_operands(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut current = String::new();
    for ch in text.chars() {
        match ch {
            '[' | '(' => depth += 1,
            ']' | ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut current));
                continue;
            }
            _ => {}
        }
        current.push(ch);
    }
    out.push(current);
    out.into_iter()
        .map(|o| o.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|o| !o.is_empty())
        .collect()
}

/// Replaces address-like words inside an operand, keeping punctuation.
fn rewrite_words(operand: &str) -> String {
    let mut out = String::with_capacity(operand.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if !word.is_empty() {
            if is_address_word(word) {
                out.push_str(ADDR_TOKEN);
            } else {
                out.push_str(word);
            }
            word.clear();
        }
    };
    let mut chars = operand.chars().peekable();
    while let Some(ch) = chars.next() {
        if ch == '<' {
            // keep an existing <addr> intact
            flush(&mut word, &mut out);
            let mut tag = String::from('<');
            for c in chars.by_ref() {
                tag.push(c);
                if c == '>' {
                    break;
                }
            }
            out.push_str(&tag);
        } else if is_word_char(ch) {
            word.push(ch);
        } else {
            flush(&mut word, &mut out);
            out.push(ch);
        }
    }
    flush(&mut word, &mut out);
    out
}

/// True when a branch operand reads its target through a register.
fn is_register_target(operand: &str) -> bool {
    let words: Vec<&str> = operand
        .split(|c: char| !is_word_char(c))
        .filter(|w| !w.is_empty())
        .collect();
    let core: Vec<&str> = words
        .iter()
        .copied()
        .filter(|w| !SIZE_WORDS.contains(w))
        .collect();
    if core.len() == 1 && is_register(core[0]) {
        return true;
    }
    match (operand.find('['), operand.rfind(']')) {
        (Some(open), Some(close)) if open < close => operand[open + 1..close]
            .split(|c: char| !is_word_char(c))
            .any(is_register),
        _ => false,
    }
}

/// Canonical token for one instruction body.
pub fn normalize_instruction(raw: &str) -> Result<String, AsmError> {
    let body = super::listing::clean_body(raw);
    let lowered = body.trim().to_ascii_lowercase();
    if lowered.is_empty() {
        return Err(AsmError::EmptyInstruction);
    }
    let mut rest = lowered.as_str();
    let mut mnemonic_parts: Vec<&str> = Vec::new();
    loop {
        let (word, tail) = match rest.split_once(char::is_whitespace) {
            Some((w, t)) => (w, t.trim_start()),
            None => (rest, ""),
        };
        mnemonic_parts.push(word);
        rest = tail;
        if !PREFIXES.contains(&word) || rest.is_empty() {
            break;
        }
    }
    let mnemonic = *mnemonic_parts.last().expect("at least one word");
    let branch = is_branch(mnemonic);
    let operands: Vec<String> = split_operands(rest)
        .into_iter()
        .map(|op| {
            if branch && !is_register_target(&op) {
                ADDR_TOKEN.to_string()
            } else {
                rewrite_words(&op)
            }
        })
        .collect();

    let mut token = mnemonic_parts.join(" ");
    if !operands.is_empty() {
        token.push(' ');
        token.push_str(&operands.join(", "));
    }
    Ok(token)
}

/// Symbol named by a `call` instruction's operand, or `None` for indirect
/// calls through registers or memory.
pub fn call_target(raw: &str) -> Option<String> {
    let body = super::listing::clean_body(raw);
    let mut words = body.split_whitespace();
    let mnemonic = words.next()?.to_ascii_lowercase();
    if mnemonic != "call" {
        return None;
    }
    let operand: String = words.collect::<Vec<_>>().join(" ");
    if operand.is_empty() || is_register_target(&operand.to_ascii_lowercase()) {
        return None;
    }
    let mut target = operand.as_str();
    loop {
        let lower = target.to_ascii_lowercase();
        let stripped = SIZE_WORDS
            .iter()
            .find(|w| lower.starts_with(*w) && lower[w.len()..].starts_with(' '))
            .map(|w| target[w.len()..].trim_start());
        match stripped {
            Some(s) => target = s,
            None => break,
        }
    }
    for seg in ["ds:", "cs:", "DS:", "CS:"] {
        if let Some(s) = target.strip_prefix(seg) {
            target = s;
        }
    }
    if target.is_empty() || target.contains(['[', ']', '+', ' ']) {
        return None;
    }
    if let Some(v) = parse_hex_literal(&target.to_ascii_lowercase()) {
        return Some(format!("sub_{v:X}"));
    }
    if target.chars().all(is_word_char) || target.contains('.') {
        Some(target.to_string())
    } else {
        None
    }
}
