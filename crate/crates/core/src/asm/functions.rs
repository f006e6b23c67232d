//! Splitting a parsed listing into functions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::listing::{AsmListing, LineKind, ListingLine, DEFAULT_CODE_THRESHOLD};
use super::mnemonics::{is_unconditional_break, PREFIXES};
use super::normalize::{call_target, normalize_instruction};
use super::AsmError;

/// One disassembled function. External records carry no tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionRecord {
    pub name: String,
    pub section: String,
    pub is_external: bool,
    pub tokens: Vec<String>,
    #[serde(rename = "callees")]
    pub callee_names: Vec<String>,
}

impl FunctionRecord {
    pub fn external(name: impl Into<String>, section: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            section: section.into(),
            is_external: true,
            tokens: Vec::new(),
            callee_names: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExtractWarning {
    /// `proc` without a matching `endp`; the function was closed at the end
    /// of its section.
    UnterminatedFunction { name: String, line: usize },
    /// `endp` with no open `proc` of that name.
    StrayEndp { name: String, line: usize },
    /// A function region with no instructions; dropped.
    EmptyFunction { name: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub functions: Vec<FunctionRecord>,
    pub warnings: Vec<ExtractWarning>,
    /// Instruction lines placed into some function.
    pub assigned_instructions: usize,
    /// Instruction lines in sections not recognized as code.
    pub skipped_outside_code: usize,
    /// `call` instructions through a register or memory operand.
    pub indirect_calls: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractOptions {
    pub code_threshold: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            code_threshold: DEFAULT_CODE_THRESHOLD,
        }
    }
}

struct OpenFunction {
    name: String,
    section: String,
    line: usize,
    tokens: Vec<String>,
    callees: Vec<String>,
    from_proc: bool,
}

impl OpenFunction {
    fn new(name: String, section: &str, line: usize, from_proc: bool) -> Self {
        Self {
            name,
            section: section.to_string(),
            line,
            tokens: Vec::new(),
            callees: Vec::new(),
            from_proc,
        }
    }
}

struct Extractor {
    out: Extraction,
    open: Option<OpenFunction>,
}

impl Extractor {
    fn close(&mut self) {
        if let Some(f) = self.open.take() {
            if f.tokens.is_empty() {
                if f.from_proc {
                    self.out
                        .warnings
                        .push(ExtractWarning::EmptyFunction { name: f.name });
                }
                return;
            }
            self.out.functions.push(FunctionRecord {
                name: f.name,
                section: f.section,
                is_external: false,
                tokens: f.tokens,
                callee_names: f.callees,
            });
        }
    }

    fn instruction(&mut self, line: &ListingLine) -> Result<(), AsmError> {
        let token = normalize_instruction(&line.text)?;
        if self.open.is_none() {
            self.open = Some(OpenFunction::new(
                format!("sub_{:X}", line.address),
                &line.section,
                line.line_no,
                false,
            ));
        }
        let f = self.open.as_mut().expect("opened above");
        let mnemonic = token
            .split(' ')
            .find(|w| !PREFIXES.contains(w))
            .unwrap_or("")
            .to_string();
        if mnemonic == "call" {
            match call_target(&line.text) {
                Some(target) => f.callees.push(target),
                None => self.out.indirect_calls += 1,
            }
        }
        f.tokens.push(token);
        self.out.assigned_instructions += 1;
        if !f.from_proc && is_unconditional_break(&mnemonic) {
            self.close();
        }
        Ok(())
    }
}

/// Groups code-section instructions into functions. `proc`/`endp` regions
/// become functions; stray instructions outside them are grouped into
/// synthetic `sub_ADDR` functions split at unconditional control transfers.
/// `extrn` declarations become external records after all internal ones.
pub fn extract_functions(listing: &AsmListing) -> Result<Extraction, AsmError> {
    extract_functions_with(listing, ExtractOptions::default())
}

pub fn extract_functions_with(
    listing: &AsmListing,
    opts: ExtractOptions,
) -> Result<Extraction, AsmError> {
    let mut ex = Extractor {
        out: Extraction::default(),
        open: None,
    };
    let mut externs: BTreeSet<(String, String)> = BTreeSet::new();
    let mut current_section: Option<&str> = None;

    for line in &listing.lines {
        if current_section != Some(line.section.as_str()) {
            if let Some(f) = ex.open.as_ref() {
                if f.from_proc {
                    ex.out.warnings.push(ExtractWarning::UnterminatedFunction {
                        name: f.name.clone(),
                        line: f.line,
                    });
                }
            }
            ex.close();
            current_section = Some(line.section.as_str());
        }
        if let LineKind::Extern(name) = &line.kind {
            externs.insert((name.clone(), line.section.clone()));
            continue;
        }
        if !listing.is_code(&line.section, opts.code_threshold) {
            if line.kind == LineKind::Instruction {
                ex.out.skipped_outside_code += 1;
            }
            continue;
        }
        match &line.kind {
            LineKind::ProcStart(name) => {
                if let Some(f) = ex.open.as_ref() {
                    if f.from_proc {
                        ex.out.warnings.push(ExtractWarning::UnterminatedFunction {
                            name: f.name.clone(),
                            line: f.line,
                        });
                    }
                }
                ex.close();
                ex.open = Some(OpenFunction::new(
                    name.clone(),
                    &line.section,
                    line.line_no,
                    true,
                ));
            }
            LineKind::ProcEnd(name) => match ex.open.as_ref() {
                Some(f) if f.from_proc && &f.name == name => ex.close(),
                _ => ex.out.warnings.push(ExtractWarning::StrayEndp {
                    name: name.clone(),
                    line: line.line_no,
                }),
            },
            LineKind::Instruction => ex.instruction(line)?,
            LineKind::Extern(_) => unreachable!("handled above"),
        }
    }
    if let Some(f) = ex.open.as_ref() {
        if f.from_proc {
            ex.out.warnings.push(ExtractWarning::UnterminatedFunction {
                name: f.name.clone(),
                line: f.line,
            });
        }
    }
    ex.close();

    let internal: BTreeSet<&str> = ex.out.functions.iter().map(|f| f.name.as_str()).collect();
    let externals: Vec<FunctionRecord> = externs
        .into_iter()
        .filter(|(name, _)| !internal.contains(name.as_str()))
        .map(|(name, section)| FunctionRecord::external(name, section))
        .collect();
    ex.out.functions.extend(externals);
    Ok(ex.out)
}

/// Reads a line-delimited JSON corpus of function records.
pub fn read_jsonl(text: &str) -> Result<Vec<FunctionRecord>, AsmError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(AsmError::from))
        .collect()
}

/// Serializes records as line-delimited JSON, one function per line.
pub fn write_jsonl(records: &[FunctionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::parse_listing;

    fn extract(text: &str) -> Extraction {
        extract_functions(&parse_listing(text).unwrap()).unwrap()
    }

    #[test]
    fn single_proc_with_call() {
        let ex = extract(
            "\
.text:00401010 start proc near
.text:00401010  push ebp
.text:00401011  mov ebp, esp
.text:00401013  call sub_401000
.text:00401018  pop ebp
.text:00401019  retn
.text:00401019 start endp
",
        );
        assert_eq!(ex.functions.len(), 1);
        let f = &ex.functions[0];
        assert_eq!(f.name, "start");
        assert_eq!(f.tokens.len(), 5);
        assert_eq!(f.callee_names, vec!["sub_401000"]);
        assert_eq!(f.tokens[2], "call <addr>");
    }

    #[test]
    fn no_code_sections_yield_nothing() {
        let ex = extract(".data:00402000 aX db 0\n.reloc:00403000 dd 1000h\n");
        assert!(ex.functions.is_empty());
    }

    #[test]
    fn callee_multiplicity_is_preserved() {
        let ex = extract(
            "\
.text:00401000 A proc near
.text:00401000  call B
.text:00401005  call B
.text:0040100A  retn
.text:0040100A A endp
.text:00401010 B proc near
.text:00401010  retn
.text:00401010 B endp
",
        );
        let a = ex.functions.iter().find(|f| f.name == "A").unwrap();
        assert_eq!(a.callee_names, vec!["B", "B"]);
    }

    #[test]
    fn stray_code_is_split_at_unconditional_breaks() {
        let ex = extract(
            "\
.text:00401000  push ebp
.text:00401001  jmp short loc_401010
.text:00401003  xor eax, eax
.text:00401005  retn
.text:00401006  nop
",
        );
        let names: Vec<_> = ex.functions.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["sub_401000", "sub_401003", "sub_401006"]);
        assert_eq!(ex.assigned_instructions, 5);
    }

    #[test]
    fn unterminated_proc_closes_at_section_end() {
        let ex = extract(
            "\
.text:00401000 A proc near
.text:00401000  push ebp
.text:00401001  retn
.data:00402000 x dd 0
",
        );
        assert_eq!(ex.functions.len(), 1);
        assert_eq!(
            ex.warnings,
            vec![ExtractWarning::UnterminatedFunction {
                name: "A".into(),
                line: 1
            }]
        );
    }

    #[test]
    fn nonstandard_code_section_is_used_and_data_section_is_ignored() {
        let ex = extract(
            "\
.brick:00401000 A proc near
.brick:00401000  push ebp
.brick:00401001  call ds:GetProcAddress
.brick:00401007  retn
.brick:00401007 A endp
.rdata:00402000  push eax
.rdata:00402001 x dd 0
.rdata:00402005 y dd 0
.idata:00403000  extrn GetProcAddress:dword
",
        );
        assert_eq!(ex.functions.len(), 2);
        assert_eq!(ex.functions[0].callee_names, vec!["GetProcAddress"]);
        assert!(ex.functions[1].is_external);
        assert_eq!(ex.functions[1].name, "GetProcAddress");
        assert_eq!(ex.skipped_outside_code, 1);
    }

    #[test]
    fn indirect_calls_are_counted_not_linked() {
        let ex = extract(
            "\
.text:00401000 A proc near
.text:00401000  call eax
.text:00401002  call dword ptr [ebx+8]
.text:00401005  retn
.text:00401005 A endp
",
        );
        assert!(ex.functions[0].callee_names.is_empty());
        assert_eq!(ex.indirect_calls, 2);
    }

    #[test]
    fn jsonl_field_names_are_exact() {
        let rec = FunctionRecord {
            name: "A".into(),
            section: ".text".into(),
            is_external: false,
            tokens: vec!["push ebp".into()],
            callee_names: vec!["B".into()],
        };
        let line = write_jsonl(std::slice::from_ref(&rec));
        assert_eq!(
            line,
            "{\"name\":\"A\",\"section\":\".text\",\"is_external\":false,\"tokens\":[\"push ebp\"],\"callees\":[\"B\"]}\n"
        );
        assert_eq!(read_jsonl(&line).unwrap(), vec![rec]);
    }
}
