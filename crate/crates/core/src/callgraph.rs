//! Directed call graphs with internal (disassembled) and external (imported)
//! vertices.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::asm::FunctionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VertexKind {
    Internal,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vertex {
    pub id: u32,
    pub kind: VertexKind,
    pub name: String,
    /// Index into the function list the graph was built from.
    #[serde(skip)]
    pub seq_ref: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallGraph {
    pub file_id: String,
    pub family: Option<String>,
    /// Sorted by name; `vertices[i].id == i`.
    pub vertices: Vec<Vertex>,
    /// Sorted `(caller, callee)` pairs.
    pub edges: Vec<(u32, u32)>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub keep_multiplicity: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub vertices: usize,
    pub edges: usize,
    pub internal: usize,
    pub external: usize,
    pub isolated: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    /// Keep one edge per call instruction instead of one per callee.
    pub keep_multiplicity: bool,
}

/// Unique name for each record (same order as the input). Duplicates are
/// renamed to `name#2`, `name#3`, ... after sorting the records canonically,
/// so the result does not depend on input order.
pub fn unique_names(functions: &[FunctionRecord]) -> Vec<String> {
    let mut order: Vec<usize> = (0..functions.len()).collect();
    order.sort_by(|&a, &b| {
        let (a, b) = (&functions[a], &functions[b]);
        (a.is_external, &a.name, &a.tokens, &a.callee_names).cmp(&(
            b.is_external,
            &b.name,
            &b.tokens,
            &b.callee_names,
        ))
    });
    let mut taken: BTreeSet<String> = functions.iter().map(|f| f.name.clone()).collect();
    let mut seen: HashMap<&str, u32> = HashMap::new();
    let mut names = vec![String::new(); functions.len()];
    for i in order {
        let base = functions[i].name.as_str();
        let n = seen.entry(base).or_insert(0);
        *n += 1;
        names[i] = if *n == 1 {
            base.to_string()
        } else {
            let mut k = *n;
            while taken.contains(&format!("{base}#{k}")) {
                k += 1;
            }
            let candidate = format!("{base}#{k}");
            taken.insert(candidate.clone());
            candidate
        };
    }
    names
}

/// Applies [`unique_names`] in place.
pub fn disambiguate_names(functions: &mut [FunctionRecord]) {
    let names = unique_names(functions);
    for (f, name) in functions.iter_mut().zip(names) {
        f.name = name;
    }
}

impl CallGraph {
    pub fn empty(file_id: impl Into<String>) -> Self {
        Self {
            file_id: file_id.into(),
            family: None,
            vertices: Vec::new(),
            edges: Vec::new(),
            keep_multiplicity: false,
        }
    }

    pub fn with_family(mut self, family: Option<String>) -> Self {
        self.family = family;
        self
    }

    pub fn vertex_by_name(&self, name: &str) -> Option<&Vertex> {
        self.vertices
            .binary_search_by(|v| v.name.as_str().cmp(name))
            .ok()
            .map(|i| &self.vertices[i])
    }

    pub fn stats(&self) -> GraphStats {
        graph_stats(self)
    }

    /// Canonical JSON: vertices sorted by name, edges sorted.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Undirected neighbor lists: in- and out-neighbors, self-loops list the
    /// vertex itself. Repeated neighbors are collapsed unless the graph keeps
    /// call multiplicity.
    pub fn undirected_adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for &(a, b) in &self.edges {
            if a == b {
                adj[a as usize].push(a);
            } else {
                adj[a as usize].push(b);
                adj[b as usize].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            if !self.keep_multiplicity {
                list.dedup();
            }
        }
        adj
    }
}

/// Builds the call graph of one file: an internal vertex per internal
/// record, an external vertex per callee not defined in the file, and one
/// edge per distinct caller/callee pair. Duplicate names are disambiguated
/// first (see [`disambiguate_names`]).
pub fn build_call_graph(functions: &[FunctionRecord], file_id: &str) -> CallGraph {
    build_call_graph_with(functions, file_id, BuildOptions::default())
}

pub fn build_call_graph_with(
    functions: &[FunctionRecord],
    file_id: &str,
    opts: BuildOptions,
) -> CallGraph {
    let names = unique_names(functions);
    let records: Vec<(usize, &str, &FunctionRecord)> = functions
        .iter()
        .zip(&names)
        .enumerate()
        .map(|(i, (f, n))| (i, n.as_str(), f))
        .collect();

    let mut kinds: BTreeMap<String, (VertexKind, Option<usize>)> = BTreeMap::new();
    for &(pos, name, f) in &records {
        if !f.is_external {
            kinds.insert(name.to_string(), (VertexKind::Internal, Some(pos)));
        }
    }
    for &(_, name, f) in &records {
        if f.is_external {
            kinds
                .entry(name.to_string())
                .or_insert((VertexKind::External, None));
        }
    }
    let mut calls: Vec<(&str, &str)> = Vec::new();
    for &(_, name, f) in records.iter().filter(|(_, _, f)| !f.is_external) {
        for callee in &f.callee_names {
            kinds
                .entry(callee.clone())
                .or_insert((VertexKind::External, None));
            calls.push((name, callee.as_str()));
        }
    }

    let index: HashMap<&str, u32> = kinds
        .keys()
        .enumerate()
        .map(|(i, name)| (name.as_str(), i as u32))
        .collect();
    let vertices: Vec<Vertex> = kinds
        .iter()
        .enumerate()
        .map(|(i, (name, (kind, seq_ref)))| Vertex {
            id: i as u32,
            kind: *kind,
            name: name.clone(),
            seq_ref: *seq_ref,
        })
        .collect();
    let mut edges: Vec<(u32, u32)> = calls
        .into_iter()
        .map(|(a, b)| (index[a], index[b]))
        .collect();
    edges.sort_unstable();
    if !opts.keep_multiplicity {
        edges.dedup();
    }
    CallGraph {
        file_id: file_id.to_string(),
        family: None,
        vertices,
        edges,
        keep_multiplicity: opts.keep_multiplicity,
    }
}

pub fn graph_stats(g: &CallGraph) -> GraphStats {
    let mut touched = vec![false; g.vertices.len()];
    for &(a, b) in &g.edges {
        touched[a as usize] = true;
        touched[b as usize] = true;
    }
    let internal = g
        .vertices
        .iter()
        .filter(|v| v.kind == VertexKind::Internal)
        .count();
    let distinct_edges = if g.keep_multiplicity {
        let mut e = g.edges.clone();
        e.dedup();
        e.len()
    } else {
        g.edges.len()
    };
    GraphStats {
        vertices: g.vertices.len(),
        edges: distinct_edges,
        internal,
        external: g.vertices.len() - internal,
        isolated: touched.iter().filter(|t| !**t).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn internal(name: &str, callees: &[&str]) -> FunctionRecord {
        FunctionRecord {
            name: name.into(),
            section: ".text".into(),
            is_external: false,
            tokens: vec!["push ebp".into()],
            callee_names: callees.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn internal_call() {
        let g = build_call_graph(&[internal("A", &["B"]), internal("B", &[])], "f");
        assert_eq!(g.vertices.len(), 2);
        assert!(g.vertices.iter().all(|v| v.kind == VertexKind::Internal));
        assert_eq!(g.edges, vec![(0, 1)]);
    }

    #[test]
    fn import_becomes_external_vertex() {
        let g = build_call_graph(&[internal("A", &["GetProcAddress"])], "f");
        let ext = g.vertex_by_name("GetProcAddress").unwrap();
        assert_eq!(ext.kind, VertexKind::External);
        assert_eq!(ext.seq_ref, None);
        assert_eq!(g.edges, vec![(0, ext.id)]);
    }

    #[test]
    fn repeated_calls_collapse_unless_configured() {
        let funcs = [internal("A", &["B", "B"]), internal("B", &[])];
        let g = build_call_graph(&funcs, "f");
        assert_eq!(g.edges, vec![(0, 1)]);
        let multi = build_call_graph_with(
            &funcs,
            "f",
            BuildOptions {
                keep_multiplicity: true,
            },
        );
        assert_eq!(multi.edges, vec![(0, 1), (0, 1)]);
        assert_eq!(multi.undirected_adjacency()[0], vec![1, 1]);
        assert_eq!(g.undirected_adjacency()[0], vec![1]);
    }

    #[test]
    fn self_loops_are_kept() {
        let g = build_call_graph(&[internal("A", &["A"])], "f");
        assert_eq!(g.edges, vec![(0, 0)]);
        assert_eq!(g.undirected_adjacency()[0], vec![0]);
    }

    #[test]
    fn stats() {
        assert_eq!(graph_stats(&CallGraph::empty("x")), GraphStats::default());
        let g = build_call_graph(
            &[
                internal("A", &["B"]),
                internal("B", &[]),
                internal("C", &[]),
            ],
            "f",
        );
        let s = graph_stats(&g);
        assert_eq!(
            (s.vertices, s.edges, s.internal, s.external, s.isolated),
            (3, 1, 3, 0, 1)
        );
    }

    #[test]
    fn duplicate_names_are_suffixed() {
        let mut b2 = internal("A", &[]);
        b2.tokens = vec!["nop".into()];
        let g = build_call_graph(&[internal("A", &["A"]), b2], "f");
        let names: Vec<_> = g.vertices.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names.len(), 2);
        assert!(names.contains(&"A#2"));
        assert!(g.vertices.iter().all(|v| v.seq_ref.is_some()));
    }

    #[test]
    fn declared_imports_without_calls_are_vertices() {
        let g = build_call_graph(
            &[
                internal("A", &[]),
                FunctionRecord::external("ExitProcess", ".idata"),
            ],
            "f",
        );
        assert_eq!(g.stats().external, 1);
        assert_eq!(g.stats().isolated, 2);
    }

    #[test]
    fn canonical_json_shape() {
        let g =
            build_call_graph(&[internal("A", &["B"])], "file1").with_family(Some("Ramnit".into()));
        assert_eq!(
            g.to_canonical_json(),
            r#"{"file_id":"file1","family":"Ramnit","vertices":[{"id":0,"kind":"Internal","name":"A"},{"id":1,"kind":"External","name":"B"}],"edges":[[0,1]]}"#
        );
        assert_eq!(
            CallGraph::from_json(&g.to_canonical_json()).unwrap().edges,
            g.edges
        );
    }
}
