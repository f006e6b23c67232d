//! Three pipeline pieces compiled for the browser. Each export takes and
//! returns JSON strings; `www/index.html` drives them.

use rand::Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use cgfam::asm::ingest_listing;
use cgfam::callgraph::{build_call_graph, disambiguate_names, GraphStats};
use cgfam::cluster::{fit_minibatch_kmeans, KMeansParams, LabeledGraph};
use cgfam::wl::{wl_features, LabelDictionary, WlConfig};

#[derive(Serialize)]
struct CallGraphView {
    stats: GraphStats,
    indirect_calls: usize,
    vertices: Vec<VertexView>,
    edges: Vec<(u32, u32)>,
}

#[derive(Serialize)]
struct VertexView {
    name: String,
    external: bool,
    instructions: usize,
}

pub fn callgraph_json(listing: &str) -> Result<String, String> {
    let mut ex = ingest_listing("input", listing).map_err(|e| e.to_string())?;
    disambiguate_names(&mut ex.functions);
    let g = build_call_graph(&ex.functions, "input");
    let vertices = g
        .vertices
        .iter()
        .map(|v| VertexView {
            name: v.name.clone(),
            external: v.seq_ref.is_none_or(|i| ex.functions[i].is_external),
            instructions: v.seq_ref.map_or(0, |i| ex.functions[i].tokens.len()),
        })
        .collect();
    let view = CallGraphView {
        stats: g.stats(),
        indirect_calls: ex.indirect_calls,
        vertices,
        edges: g.edges.clone(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// `{"labels": [...], "edges": [[from, to], ...]}`
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphInput {
    labels: Vec<String>,
    edges: Vec<(u32, u32)>,
}

impl GraphInput {
    fn parse(text: &str, name: &str) -> Result<LabeledGraph, String> {
        let g: Self = serde_json::from_str(text).map_err(|e| format!("{name}: {e}"))?;
        let n = g.labels.len() as u32;
        if let Some(&(a, b)) = g.edges.iter().find(|(a, b)| *a >= n || *b >= n) {
            return Err(format!(
                "{name}: edge ({a}, {b}) refers to a missing vertex"
            ));
        }
        Ok(LabeledGraph::from_labels(name, g.labels, &g.edges))
    }
}

#[derive(Serialize)]
struct KernelView {
    /// Kernel value restricted to iterations `0..=i`.
    cumulative: Vec<f64>,
    kernel: f64,
    normalized: f64,
}

pub fn wl_kernel_json(a: &str, b: &str, h: usize) -> Result<String, String> {
    if h > 10 {
        return Err("h must be at most 10".into());
    }
    let ga = GraphInput::parse(a, "first graph")?;
    let gb = GraphInput::parse(b, "second graph")?;
    let mut cumulative = Vec::with_capacity(h + 1);
    let mut dict = LabelDictionary::new();
    for i in 0..=h {
        let cfg = WlConfig::uniform(i);
        let fa = wl_features(&ga, &cfg, &mut dict).map_err(|e| e.to_string())?;
        let fb = wl_features(&gb, &cfg, &mut dict).map_err(|e| e.to_string())?;
        cumulative.push(fa.dot(&fb));
    }
    let cfg = WlConfig::uniform(h);
    let fa = wl_features(&ga, &cfg, &mut dict).map_err(|e| e.to_string())?;
    let fb = wl_features(&gb, &cfg, &mut dict).map_err(|e| e.to_string())?;
    let kernel = fa.dot(&fb);
    let denom = (fa.self_kernel() * fb.self_kernel()).sqrt();
    let view = KernelView {
        cumulative,
        kernel,
        normalized: if denom > 0.0 { kernel / denom } else { 0.0 },
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct BlobsView {
    points: Vec<Vec<f64>>,
    truth: Vec<usize>,
    assignments: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
}

const BLOB_CENTERS: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.9]];

pub fn kmeans_blobs_json(seed: u32, sigma: f64, per_blob: usize) -> Result<String, String> {
    if !(sigma > 0.0 && sigma.is_finite()) || per_blob == 0 || per_blob > 5000 {
        return Err("need sigma > 0 and 1..=5000 points per blob".into());
    }
    let mut rng = cgfam::rng::substream(seed as u64, "demo/blobs");
    let mut normal = || {
        // Box-Muller; 1 - u keeps the log argument positive
        let u: f64 = 1.0 - rng.gen::<f64>();
        let v: f64 = rng.gen();
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    };
    let mut points = Vec::with_capacity(3 * per_blob);
    let mut truth = Vec::with_capacity(3 * per_blob);
    for (c, center) in BLOB_CENTERS.iter().enumerate() {
        for _ in 0..per_blob {
            points.push(vec![
                center[0] + sigma * normal(),
                center[1] + sigma * normal(),
            ]);
            truth.push(c);
        }
    }
    let params = KMeansParams {
        k: 3,
        batch_size: 64,
        iterations: 100,
        seed: seed as u64,
        unit_normalize: false,
    };
    let model = fit_minibatch_kmeans(&points, &params).map_err(|e| e.to_string())?;
    let assignments = points
        .iter()
        .map(|p| model.assign(p).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let view = BlobsView {
        inertia: model.inertia(&points),
        centroids: (0..model.k())
            .map(|r| model.centroids.row(r).to_vec())
            .collect(),
        points,
        truth,
        assignments,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = listingToCallGraph)]
pub fn listing_to_call_graph(listing: &str) -> Result<String, JsError> {
    callgraph_json(listing).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = wlKernel)]
pub fn wl_kernel(a: &str, b: &str, h: usize) -> Result<String, JsError> {
    wl_kernel_json(a, b, h).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = kmeansBlobs)]
pub fn kmeans_blobs(seed: u32, sigma: f64, per_blob: usize) -> Result<String, JsError> {
    kmeans_blobs_json(seed, sigma, per_blob).map_err(|e| JsError::new(&e))
}
