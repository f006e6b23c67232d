//! Synthetic listing corpora with known ground truth.
//!
//! Each family gets a prototype program: motif functions built from the
//! family's instruction alphabet, shared library functions, a call tree with
//! extra edges, and imports. Every file is a mutated copy of its family's
//! prototype. With mutation rate 0 all files of a family are identical.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::write_labels;
use super::PipelineError;

/// Instructions motifs are drawn from when a family has no explicit alphabet.
pub const DEFAULT_POOL: &[&str] = &[
    "mov eax, [ebp+8]",
    "mov ecx, [ebp+0Ch]",
    "mov edx, [esi+4]",
    "mov [ebp-4], eax",
    "mov [edi], ecx",
    "mov esi, eax",
    "mov edi, edx",
    "mov eax, dword_404010",
    "xor eax, eax",
    "xor ecx, ecx",
    "xor edx, edx",
    "xor eax, 5A5A5A5Ah",
    "add eax, ecx",
    "add esp, 0Ch",
    "add esi, 4",
    "sub esp, 20h",
    "sub eax, edx",
    "inc ecx",
    "dec edx",
    "inc esi",
    "cmp eax, 0Ah",
    "cmp ecx, edx",
    "test eax, eax",
    "test cl, 1",
    "jz short loc_4010F2",
    "jnz short loc_401108",
    "jb short loc_401120",
    "jge short loc_401140",
    "jmp short loc_401160",
    "lea ecx, [esi+4]",
    "lea eax, [ebp-10h]",
    "lea edx, [eax+ecx*2]",
    "push esi",
    "push edi",
    "push ebx",
    "push 0",
    "push offset unk_403000",
    "pop esi",
    "pop edi",
    "pop ebx",
    "shl edx, 2",
    "shr eax, 3",
    "sar ecx, 1",
    "rol eax, 7",
    "ror edx, 0Dh",
    "and eax, 0FFh",
    "or ecx, 1",
    "not eax",
    "neg edx",
    "imul eax, ecx",
    "movzx eax, byte ptr [ecx]",
    "movsx edx, word ptr [esi]",
    "xchg eax, edx",
    "cdq",
    "idiv ecx",
    "setnz al",
    "cmovz eax, ecx",
    "lodsb",
    "stosd",
    "rep movsd",
    "nop",
    "bswap eax",
    "bt eax, 3",
    "adc edx, 0",
];

pub const DEFAULT_IMPORTS: &[&str] = &[
    "CreateFileA",
    "ReadFile",
    "WriteFile",
    "CloseHandle",
    "VirtualAlloc",
    "VirtualFree",
    "GetProcAddress",
    "LoadLibraryA",
    "RegOpenKeyExA",
    "RegSetValueExA",
    "CreateThread",
    "Sleep",
    "GetTickCount",
    "InternetOpenA",
    "InternetReadFile",
    "HttpSendRequestA",
    "CreateProcessA",
    "WinExec",
    "GetModuleHandleA",
    "ExitProcess",
    "lstrlenA",
    "lstrcpyA",
    "MessageBoxA",
    "FindFirstFileA",
    "FindNextFileA",
    "CryptEncrypt",
    "CryptAcquireContextA",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticFamilySpec {
    pub name: String,
    pub samples: usize,
    /// Number of motif templates.
    pub motifs: usize,
    /// Inclusive instruction-count range of a motif.
    pub motif_len: (usize, usize),
    /// Instructions available to motifs and mutations. Empty means a random
    /// `alphabet_size` subset of [`DEFAULT_POOL`].
    pub alphabet: Vec<String>,
    pub alphabet_size: usize,
    /// Per-instruction replacement probability; half of it is also the
    /// per-function drop, insert and edge-rewire probability.
    pub mutation_rate: f64,
    /// Inclusive internal-function range of the prototype.
    pub functions: (usize, usize),
    /// Extra call edges per function beyond the spanning tree.
    pub edge_density: f64,
    /// Family-specific imports, used alongside the corpus-wide ones.
    pub imports: Vec<String>,
    /// Share of prototype functions taken from the shared library pool.
    pub library_fraction: f64,
    pub section: String,
}

impl Default for SyntheticFamilySpec {
    fn default() -> Self {
        Self {
            name: "family".into(),
            samples: 10,
            motifs: 10,
            motif_len: (6, 16),
            alphabet: Vec::new(),
            alphabet_size: 28,
            mutation_rate: 0.05,
            functions: (30, 80),
            edge_density: 0.5,
            imports: Vec::new(),
            library_fraction: 0.15,
            section: ".text".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCorpusSpec {
    pub families: Vec<SyntheticFamilySpec>,
    pub library_functions: usize,
    pub common_imports: Vec<String>,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        benchmark_spec(4, 50)
    }
}

/// `families` families (at most 9) with `samples` files each. The third
/// family keeps its code in a non-standard `.brick` section.
pub fn benchmark_spec(families: usize, samples: usize) -> SyntheticCorpusSpec {
    const NAMES: [&str; 9] = [
        "Alder", "Birch", "Cedar", "Dogwood", "Elm", "Fir", "Ginkgo", "Hazel", "Ivy",
    ];
    let families = (0..families.min(NAMES.len()))
        .map(|i| SyntheticFamilySpec {
            name: NAMES[i].into(),
            samples,
            imports: DEFAULT_IMPORTS
                .iter()
                .skip(6 + 2 * i)
                .take(5)
                .map(|s| s.to_string())
                .collect(),
            section: if i == 2 {
                ".brick".into()
            } else {
                ".text".into()
            },
            ..SyntheticFamilySpec::default()
        })
        .collect();
    SyntheticCorpusSpec {
        families,
        library_functions: 12,
        common_imports: DEFAULT_IMPORTS[..6].iter().map(|s| s.to_string()).collect(),
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidSpec(m));
        if self.families.is_empty() {
            return bad("no families".into());
        }
        let mut names = BTreeSet::new();
        for f in &self.families {
            if f.name.is_empty() || f.name.contains([',', '"', '\n']) || !names.insert(&f.name) {
                return bad(format!(
                    "family name `{}` is empty, duplicated or not CSV-safe",
                    f.name
                ));
            }
            if !(0.0..=1.0).contains(&f.mutation_rate) || !(0.0..=1.0).contains(&f.library_fraction)
            {
                return bad(format!("{}: rates must lie in [0,1]", f.name));
            }
            if f.motifs == 0 || f.motif_len.0 == 0 || f.motif_len.0 > f.motif_len.1 {
                return bad(format!("{}: needs at least one non-empty motif", f.name));
            }
            if f.functions.0 == 0 || f.functions.0 > f.functions.1 || f.samples == 0 {
                return bad(format!(
                    "{}: invalid function range or sample count",
                    f.name
                ));
            }
            if f.alphabet.is_empty() && f.alphabet_size == 0 {
                return bad(format!("{}: empty alphabet", f.name));
            }
            if !(f.edge_density >= 0.0 && f.edge_density.is_finite()) {
                return bad(format!("{}: invalid edge density", f.name));
            }
            if !f.section.starts_with('.')
                || f.section.contains(char::is_whitespace)
                || f.section == ".idata"
            {
                return bad(format!("{}: invalid section `{}`", f.name, f.section));
            }
        }
        if self.library_functions == 0 && self.families.iter().any(|f| f.library_fraction > 0.0) {
            return bad("library_fraction > 0 needs library functions".into());
        }
        Ok(())
    }
}

/// What the generator put into a file, for oracle checks against the
/// ingested call graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub file_id: String,
    pub family: String,
    pub functions: usize,
    pub externals: usize,
    pub edges: usize,
    pub isolated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFile {
    pub id: String,
    pub family: String,
    pub listing: String,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone)]
struct Function {
    body: Vec<String>,
    imports: Vec<String>,
}

struct Prototype {
    alphabet: Vec<String>,
    motifs: Vec<Vec<String>>,
    functions: Vec<Function>,
    edges: Vec<(usize, usize)>,
}

fn prototype(
    spec: &SyntheticFamilySpec,
    library: &[Vec<String>],
    common_imports: &[String],
    seed: u64,
) -> Prototype {
    let mut rng = crate::rng::substream(seed, &format!("synth/family/{}", spec.name));
    let alphabet: Vec<String> = if spec.alphabet.is_empty() {
        DEFAULT_POOL
            .choose_multiple(&mut rng, spec.alphabet_size.min(DEFAULT_POOL.len()))
            .map(|s| s.to_string())
            .collect()
    } else {
        spec.alphabet.clone()
    };
    let motifs: Vec<Vec<String>> = (0..spec.motifs)
        .map(|_| {
            let len = rng.gen_range(spec.motif_len.0..=spec.motif_len.1);
            (0..len)
                .map(|_| alphabet.choose(&mut rng).expect("alphabet").clone())
                .collect()
        })
        .collect();
    let imports: Vec<&String> = spec.imports.iter().chain(common_imports).collect();
    let n = rng.gen_range(spec.functions.0..=spec.functions.1);
    let functions = (0..n)
        .map(|_| {
            let body = if !library.is_empty() && rng.gen_bool(spec.library_fraction) {
                library.choose(&mut rng).expect("library").clone()
            } else {
                motifs.choose(&mut rng).expect("motifs").clone()
            };
            let calls = if imports.is_empty() {
                0
            } else {
                rng.gen_range(0..=2)
            };
            let imports = (0..calls)
                .map(|_| (*imports.choose(&mut rng).expect("imports")).clone())
                .collect();
            Function { body, imports }
        })
        .collect();
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    let extra = (spec.edge_density * n as f64).round() as usize;
    if n > 1 {
        for _ in 0..extra {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b {
                edges.push((a, b));
            }
        }
    }
    Prototype {
        alphabet,
        motifs,
        functions,
        edges,
    }
}

fn file_id(seed: u64, family: &str, index: usize) -> String {
    let h = crate::rng::sha256_hex(format!("{seed}/{family}/{index}").as_bytes());
    h[..20].to_string()
}

fn mutate(
    proto: &Prototype,
    spec: &SyntheticFamilySpec,
    common_imports: &[String],
    rng: &mut crate::rng::Rng,
) -> (Vec<Function>, Vec<(usize, usize)>) {
    let rate = spec.mutation_rate;
    let n = proto.functions.len();
    let keep: Vec<bool> = (0..n)
        .map(|i| i == 0 || !rng.gen_bool(rate / 2.0))
        .collect();
    let mut index = vec![usize::MAX; n];
    let mut functions = Vec::new();
    for i in 0..n {
        if keep[i] {
            index[i] = functions.len();
            let mut f = proto.functions[i].clone();
            for ins in f.body.iter_mut() {
                if rng.gen_bool(rate) {
                    *ins = proto.alphabet.choose(rng).expect("alphabet").clone();
                }
            }
            functions.push(f);
        }
    }
    let mut edges: Vec<(usize, usize)> = proto
        .edges
        .iter()
        .filter(|(a, b)| keep[*a] && keep[*b])
        .map(|&(a, b)| (index[a], index[b]))
        .collect();
    for e in edges.iter_mut() {
        if rng.gen_bool(rate / 2.0) {
            e.1 = rng.gen_range(0..functions.len());
        }
    }
    let imports: Vec<&String> = spec.imports.iter().chain(common_imports).collect();
    for _ in 0..n {
        if rng.gen_bool(rate / 2.0) {
            let caller = rng.gen_range(0..functions.len());
            let body = proto.motifs.choose(rng).expect("motifs").clone();
            let own_imports = if imports.is_empty() || !rng.gen_bool(0.5) {
                Vec::new()
            } else {
                vec![(*imports.choose(rng).expect("imports")).clone()]
            };
            functions.push(Function {
                body,
                imports: own_imports,
            });
            edges.push((caller, functions.len() - 1));
        }
    }
    (functions, edges)
}

const CODE_BASE: u64 = 0x401000;

fn split_instruction(ins: &str) -> (&str, &str) {
    match ins.split_once(' ') {
        Some((m, ops)) => (m, ops),
        None => (ins, ""),
    }
}

fn render(
    section: &str,
    functions: &[Function],
    edges: &[(usize, usize)],
) -> (String, usize, usize, usize) {
    let n = functions.len();
    let mut callees: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        callees[a].push(b);
    }
    // prologue (2) + body + calls + epilogue (2); 4 bytes per instruction
    let mut starts = Vec::with_capacity(n);
    let mut addr = CODE_BASE;
    for (f, c) in functions.iter().zip(&callees) {
        starts.push(addr);
        let count = 4 + f.body.len() + c.len() + f.imports.len();
        addr += (count as u64 * 4).next_multiple_of(16);
    }
    let name = |i: usize| {
        if i == 0 {
            "start".to_string()
        } else {
            format!("sub_{:X}", starts[i])
        }
    };
    let mut out = String::new();
    let line = |out: &mut String, a: u64, body: &str| {
        let _ = writeln!(out, "{section}:{a:08X} {body}");
    };
    line(&mut out, CODE_BASE, "; Segment type: Pure code");
    for (i, f) in functions.iter().enumerate() {
        let mut a = starts[i];
        line(&mut out, a, "");
        line(
            &mut out,
            a,
            "; =============== S U B R O U T I N E =======================================",
        );
        line(&mut out, a, "; Attributes: bp-based frame");
        line(&mut out, a, &format!("{} proc near", name(i)));
        let mut body: Vec<String> = f.body.clone();
        let calls: Vec<String> = callees[i]
            .iter()
            .map(|&c| format!("call {}", name(c)))
            .chain(f.imports.iter().map(|imp| format!("call ds:{imp}")))
            .collect();
        // evenly spaced, so unmutated functions render identically
        let slots = calls.len() + 1;
        let len = body.len();
        for (j, c) in calls.into_iter().enumerate().rev() {
            body.insert((j + 1) * len / slots, c);
        }
        let prologue = ["push ebp", "mov ebp, esp"];
        let epilogue = ["pop ebp", "retn"];
        for ins in prologue
            .iter()
            .map(|s| s.to_string())
            .chain(body)
            .chain(epilogue.iter().map(|s| s.to_string()))
        {
            let (m, ops) = split_instruction(&ins);
            line(&mut out, a, &format!("                {m:<8}{ops}"));
            a += 4;
        }
        line(&mut out, a - 4, &format!("{} endp", name(i)));
    }
    let data = addr.next_multiple_of(0x1000);
    let _ = writeln!(out, ".data:{data:08X} ; Segment type: Pure data");
    for k in 0..4u64 {
        let _ = writeln!(
            out,
            ".data:{:08X} dword_{:X}     dd 0",
            data + 4 * k,
            data + 4 * k
        );
    }
    let imports: BTreeSet<&String> = functions.iter().flat_map(|f| &f.imports).collect();
    let idata = data + 0x1000;
    for (k, imp) in imports.iter().enumerate() {
        let _ = writeln!(
            out,
            ".idata:{:08X}                 extrn {imp}:dword",
            idata + 4 * k as u64
        );
    }

    let internal_edges: BTreeSet<(usize, usize)> = edges.iter().copied().collect();
    let mut touched = vec![false; n];
    for &(a, b) in &internal_edges {
        touched[a] = true;
        touched[b] = true;
    }
    let mut import_edges = BTreeSet::new();
    for (i, f) in functions.iter().enumerate() {
        for imp in &f.imports {
            import_edges.insert((i, imp));
            touched[i] = true;
        }
    }
    let edge_count = internal_edges.len() + import_edges.len();
    let isolated = touched.iter().filter(|t| !**t).count();
    (out, imports.len(), edge_count, isolated)
}

/// Generates every file of every family. Deterministic under `seed`.
pub fn generate_synthetic_corpus(
    spec: &SyntheticCorpusSpec,
    seed: u64,
) -> Result<Vec<SyntheticFile>, PipelineError> {
    spec.validate()?;
    let mut lib_rng = crate::rng::substream(seed, "synth/library");
    let library: Vec<Vec<String>> = (0..spec.library_functions)
        .map(|_| {
            let len = lib_rng.gen_range(5..=12);
            (0..len)
                .map(|_| DEFAULT_POOL.choose(&mut lib_rng).expect("pool").to_string())
                .collect()
        })
        .collect();
    let mut files = Vec::new();
    for fam in &spec.families {
        let proto = prototype(fam, &library, &spec.common_imports, seed);
        for i in 0..fam.samples {
            let mut rng = crate::rng::substream(seed, &format!("synth/file/{}/{i}", fam.name));
            let (functions, edges) = mutate(&proto, fam, &spec.common_imports, &mut rng);
            let (listing, externals, edges, isolated) = render(&fam.section, &functions, &edges);
            let id = file_id(seed, &fam.name, i);
            files.push(SyntheticFile {
                truth: GroundTruth {
                    file_id: id.clone(),
                    family: fam.name.clone(),
                    functions: functions.len(),
                    externals,
                    edges,
                    isolated,
                },
                id,
                family: fam.name.clone(),
                listing,
            });
        }
    }
    files.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(files)
}

/// Writes `<id>.asm` listings, `labels.csv` and `ground_truth.jsonl`.
pub fn write_corpus(files: &[SyntheticFile], dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| PipelineError::UnwritablePath(dir.to_path_buf(), e))?;
    let write = |name: String, body: &str| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| PipelineError::UnwritablePath(p, e))
    };
    for f in files {
        write(format!("{}.asm", f.id), &f.listing)?;
    }
    let labels: Vec<(String, String)> = files
        .iter()
        .map(|f| (f.id.clone(), f.family.clone()))
        .collect();
    write("labels.csv".into(), &write_labels(&labels))?;
    let mut truth = String::new();
    for f in files {
        truth.push_str(&serde_json::to_string(&f.truth).expect("ground truth serializes"));
        truth.push('\n');
    }
    write("ground_truth.jsonl".into(), &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::normalize_instruction;
    use crate::callgraph::{build_call_graph, graph_stats};
    use crate::cluster::LabeledGraph;
    use crate::pipeline::corpus::ingest_file;
    use crate::wl::{kernel, LabelDictionary, WlConfig};

    #[test]
    fn pool_instructions_normalize_and_never_call() {
        for ins in DEFAULT_POOL {
            let n = normalize_instruction(ins).unwrap();
            assert!(!n.starts_with("call"), "{ins}");
        }
    }

    fn small(mutation_rate: f64) -> SyntheticCorpusSpec {
        let mut s = benchmark_spec(2, 5);
        for f in &mut s.families {
            f.mutation_rate = mutation_rate;
            f.functions = (8, 14);
        }
        s
    }

    #[test]
    fn zero_mutation_gives_identical_function_multisets() {
        let files = generate_synthetic_corpus(&small(0.0), 3).unwrap();
        for fam in ["Alder", "Birch"] {
            let multisets: Vec<Vec<Vec<String>>> = files
                .iter()
                .filter(|f| f.family == fam)
                .map(|f| {
                    let mut m: Vec<Vec<String>> = ingest_file(&f.id, &f.listing)
                        .unwrap()
                        .into_iter()
                        .map(|r| r.tokens)
                        .collect();
                    m.sort();
                    m
                })
                .collect();
            assert!(multisets.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn ingested_graphs_match_ground_truth() {
        let files = generate_synthetic_corpus(&small(0.2), 5).unwrap();
        assert_eq!(files.len(), 10);
        for f in &files {
            let recs = ingest_file(&f.id, &f.listing).unwrap();
            let s = graph_stats(&build_call_graph(&recs, &f.id));
            assert_eq!(
                (s.internal, s.external, s.edges, s.isolated),
                (
                    f.truth.functions,
                    f.truth.externals,
                    f.truth.edges,
                    f.truth.isolated
                ),
                "{}",
                f.id
            );
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_synthetic_corpus(&small(0.1), 7).unwrap();
        let b = generate_synthetic_corpus(&small(0.1), 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(&small(0.1), 8).unwrap();
        assert_ne!(a[0].listing, c[0].listing);
    }

    #[test]
    fn disjoint_alphabets_share_only_imports_at_h0() {
        let mut spec = small(0.1);
        spec.library_functions = 0;
        spec.families[0].alphabet = DEFAULT_POOL[..30].iter().map(|s| s.to_string()).collect();
        spec.families[1].alphabet = DEFAULT_POOL[30..].iter().map(|s| s.to_string()).collect();
        for f in &mut spec.families {
            f.library_fraction = 0.0;
        }
        let files = generate_synthetic_corpus(&spec, 11).unwrap();
        // label internal functions by their exact token sequence
        let graphs: Vec<(String, LabeledGraph)> = files
            .iter()
            .map(|f| {
                let recs = ingest_file(&f.id, &f.listing).unwrap();
                let g = build_call_graph(&recs, &f.id);
                let labels = g
                    .vertices
                    .iter()
                    .map(|v| {
                        let r = recs.iter().find(|r| r.name == v.name).unwrap();
                        if r.is_external {
                            r.name.clone()
                        } else {
                            format!("seq:{}", r.tokens.join(";"))
                        }
                    })
                    .collect();
                (f.family.clone(), LabeledGraph::from_parts(&g, labels))
            })
            .collect();
        let mut dict = LabelDictionary::new();
        let cfg = WlConfig::uniform(0);
        for (fa, ga) in &graphs {
            for (fb, gb) in &graphs {
                if fa == fb {
                    continue;
                }
                let count = |g: &LabeledGraph, l: &str| {
                    g.label_list().iter().filter(|x| **x == l).count() as f64
                };
                let imports: BTreeSet<&str> = ga
                    .label_list()
                    .into_iter()
                    .filter(|l| !l.starts_with("seq:"))
                    .collect();
                let bound: f64 = imports.iter().map(|l| count(ga, l) * count(gb, l)).sum();
                assert!(kernel(ga, gb, &cfg, &mut dict).unwrap() <= bound);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let mut s = small(0.0);
        s.families[0].mutation_rate = 1.5;
        assert!(matches!(
            generate_synthetic_corpus(&s, 0),
            Err(PipelineError::InvalidSpec(_))
        ));
        let empty = SyntheticCorpusSpec {
            families: vec![],
            ..small(0.0)
        };
        assert!(generate_synthetic_corpus(&empty, 0).is_err());
    }

    #[test]
    fn written_corpus_opens() {
        let dir = tempfile::tempdir().unwrap();
        let files = generate_synthetic_corpus(&small(0.1), 1).unwrap();
        write_corpus(&files, dir.path()).unwrap();
        let c = crate::pipeline::corpus::Corpus::open(dir.path()).unwrap();
        assert_eq!(c.labels.len(), files.len());
        assert_eq!(c.read_listing(&files[0].id).unwrap(), files[0].listing);
    }
}
