//! Sequence-to-sequence autoencoder: token embedding, two stacked encoder
//! GRU layers, one decoder GRU layer and a softmax projection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cell::{step_backward, step_cached, GruCellParams, StepCache};
use super::GruError;
use crate::asm::{END_ID, START_ID};
use crate::container::{Container, ContainerError};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruAutoencoderModel {
    pub dims: ModelDims,
    /// `vocab_size × embed_dim`, shared by encoder and decoder inputs.
    pub embedding: Matrix,
    pub encoder_1: GruCellParams,
    pub encoder_2: GruCellParams,
    pub decoder: GruCellParams,
    /// `vocab_size × hidden_dim`.
    pub projection: Matrix,
    pub projection_bias: Vec<f64>,
    pub vocab_fingerprint: String,
    pub seed: u64,
}

/// Fixed-length embedding of one function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionEmbedding {
    pub vector: Vec<f64>,
    pub file_id: String,
    pub function: String,
}

pub(crate) const TENSOR_COUNT: usize = 1 + 3 * 9 + 2;
const CONTAINER_KIND: &str = "gru-autoencoder";

impl GruAutoencoderModel {
    pub fn zeros(dims: ModelDims) -> Self {
        let ModelDims {
            vocab_size: v,
            embed_dim: e,
            hidden_dim: h,
        } = dims;
        Self {
            dims,
            embedding: Matrix::zeros(v, e),
            encoder_1: GruCellParams::zeros(e, h),
            encoder_2: GruCellParams::zeros(h, h),
            decoder: GruCellParams::zeros(e, h),
            projection: Matrix::zeros(v, h),
            projection_bias: vec![0.0; v],
            vocab_fingerprint: String::new(),
            seed: 0,
        }
    }

    /// Every parameter drawn uniformly from `[-range, range]`.
    pub fn uniform<R: Rng>(dims: ModelDims, range: f64, rng: &mut R) -> Self {
        let mut m = Self::zeros(dims);
        for t in m.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.gen_range(-range..=range);
            }
        }
        m
    }

    /// Gradient buffer with the same shapes as `self`.
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.dims);
        z.vocab_fingerprint.clone_from(&self.vocab_fingerprint);
        z
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(TENSOR_COUNT);
        out.push(&self.embedding.data);
        out.extend(self.encoder_1.tensors());
        out.extend(self.encoder_2.tensors());
        out.extend(self.decoder.tensors());
        out.push(&self.projection.data);
        out.push(&self.projection_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(TENSOR_COUNT);
        out.push(&mut self.embedding.data);
        out.extend(self.encoder_1.tensors_mut());
        out.extend(self.encoder_2.tensors_mut());
        out.extend(self.decoder.tensors_mut());
        out.push(&mut self.projection.data);
        out.push(&mut self.projection_bias);
        out
    }

    fn tensor_layout(&self) -> Vec<(String, (usize, usize))> {
        let mut out = vec![(
            "embedding".to_string(),
            (self.embedding.rows, self.embedding.cols),
        )];
        for (prefix, cell) in [
            ("encoder_1", &self.encoder_1),
            ("encoder_2", &self.encoder_2),
            ("decoder", &self.decoder),
        ] {
            for (name, shape) in GruCellParams::TENSOR_NAMES.iter().zip(cell.shapes()) {
                out.push((format!("{prefix}.{name}"), shape));
            }
        }
        out.push((
            "projection".into(),
            (self.projection.rows, self.projection.cols),
        ));
        out.push(("projection_bias".into(), (1, self.projection_bias.len())));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            crate::linalg::axpy(scale, b, a);
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn validate(&self) -> Result<(), GruError> {
        let d = self.dims;
        let ok = self.embedding.rows == d.vocab_size
            && self.embedding.cols == d.embed_dim
            && self.encoder_1.input_dim() == d.embed_dim
            && self.encoder_1.hidden_dim() == d.hidden_dim
            && self.encoder_2.input_dim() == d.hidden_dim
            && self.encoder_2.hidden_dim() == d.hidden_dim
            && self.decoder.input_dim() == d.embed_dim
            && self.decoder.hidden_dim() == d.hidden_dim
            && self.projection.rows == d.vocab_size
            && self.projection.cols == d.hidden_dim
            && self.projection_bias.len() == d.vocab_size;
        if !ok {
            return Err(GruError::DimensionMismatch(
                "model tensors disagree with dims".into(),
            ));
        }
        self.encoder_1.validate()?;
        self.encoder_2.validate()?;
        self.decoder.validate()
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), GruError> {
        match ids.iter().find(|&&i| i as usize >= self.dims.vocab_size) {
            Some(bad) => Err(GruError::DimensionMismatch(format!(
                "token id {bad} outside vocabulary of {}",
                self.dims.vocab_size
            ))),
            None => Ok(()),
        }
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut out = self.projection_bias.clone();
        self.projection.matvec_add(h, &mut out);
        out
    }

    pub fn to_container(&self) -> Container {
        let meta = serde_json::json!({
            "dims": self.dims,
            "vocab_fingerprint": self.vocab_fingerprint,
            "seed": self.seed,
        });
        let mut c = Container::new(CONTAINER_KIND, meta);
        for ((name, shape), data) in self.tensor_layout().into_iter().zip(self.tensors()) {
            c.push(
                &name,
                &Matrix {
                    rows: shape.0,
                    cols: shape.1,
                    data: data.to_vec(),
                },
            );
        }
        c
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GruError> {
        let c = Container::from_bytes(bytes)?;
        c.expect_kind(CONTAINER_KIND)?;
        let meta = &c.header.meta;
        let dims: ModelDims =
            serde_json::from_value(meta["dims"].clone()).map_err(ContainerError::from)?;
        let mut model = Self::zeros(dims);
        model.vocab_fingerprint = meta["vocab_fingerprint"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        model.seed = meta["seed"].as_u64().unwrap_or_default();
        let layout = model.tensor_layout();
        for ((name, shape), dst) in layout.into_iter().zip(model.tensors_mut()) {
            let m = c.take(&name, shape)?;
            dst.copy_from_slice(&m.data);
        }
        model.validate()?;
        Ok(model)
    }
}

struct EncoderTrace {
    layer1: Vec<StepCache>,
    layer2: Vec<StepCache>,
    final_state: Vec<f64>,
}

fn run_encoder(model: &GruAutoencoderModel, ids: &[u32], keep: bool) -> EncoderTrace {
    let h = model.dims.hidden_dim;
    let mut h1 = vec![0.0; h];
    let mut h2 = vec![0.0; h];
    let mut layer1 = Vec::new();
    let mut layer2 = Vec::new();
    for &id in ids {
        let x = model.embedding.row(id as usize);
        let (n1, c1) = step_cached(&model.encoder_1, x, &h1);
        let (n2, c2) = step_cached(&model.encoder_2, &n1, &h2);
        if keep {
            layer1.push(c1);
            layer2.push(c2);
        }
        h1 = n1;
        h2 = n2;
    }
    EncoderTrace {
        layer1,
        layer2,
        final_state: h2,
    }
}

fn check_sequence(model: &GruAutoencoderModel, ids: &[u32]) -> Result<(), GruError> {
    if ids.len() < 2 {
        return Err(GruError::EmptySequence);
    }
    model.check_ids(ids)
}

/// Runs both encoder layers over `ids` and returns the top layer's final
/// hidden state.
pub fn encode(model: &GruAutoencoderModel, ids: &[u32]) -> Result<Vec<f64>, GruError> {
    check_sequence(model, ids)?;
    Ok(run_encoder(model, ids, false).final_state)
}

/// Encodes many sequences; each result equals the single-sequence
/// [`encode`].
pub fn encode_many(
    model: &GruAutoencoderModel,
    seqs: &[Vec<u32>],
) -> Result<Vec<Vec<f64>>, GruError> {
    crate::par::map(seqs, |s| encode(model, s))
        .into_iter()
        .collect()
}

/// Teacher-forced decoder logits: the decoder starts from `h_enc` and at
/// step `t` reads `target_ids[t]`, predicting `target_ids[t + 1]`. Returns
/// `target_ids.len() - 1` rows.
pub fn decode_teacher_forced(
    model: &GruAutoencoderModel,
    h_enc: &[f64],
    target_ids: &[u32],
) -> Result<Vec<Vec<f64>>, GruError> {
    if h_enc.len() != model.dims.hidden_dim {
        return Err(GruError::DimensionMismatch(format!(
            "encoder state has {} entries, decoder expects {}",
            h_enc.len(),
            model.dims.hidden_dim
        )));
    }
    check_sequence(model, target_ids)?;
    let mut h = h_enc.to_vec();
    let mut rows = Vec::with_capacity(target_ids.len() - 1);
    for &id in &target_ids[..target_ids.len() - 1] {
        let (next, _) = step_cached(&model.decoder, model.embedding.row(id as usize), &h);
        rows.push(model.logits(&next));
        h = next;
    }
    Ok(rows)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy free-running decode: the decoder consumes its own previous
/// prediction, stopping after emitting `<end>` or `max_len` tokens. Ties go
/// to the lowest id.
pub fn reconstruct(
    model: &GruAutoencoderModel,
    ids: &[u32],
    max_len: usize,
) -> Result<Vec<u32>, GruError> {
    let mut h = encode(model, ids)?;
    let mut input = START_ID;
    let mut out = Vec::new();
    while out.len() < max_len {
        let (next, _) = step_cached(&model.decoder, model.embedding.row(input as usize), &h);
        let pred = argmax(&model.logits(&next)) as u32;
        out.push(pred);
        h = next;
        if pred == END_ID {
            break;
        }
        input = pred;
    }
    Ok(out)
}

/// Teacher-forced argmax accuracy on one sequence: `(correct, total)`.
pub fn teacher_forced_accuracy(
    model: &GruAutoencoderModel,
    ids: &[u32],
) -> Result<(usize, usize), GruError> {
    let h = encode(model, ids)?;
    let rows = decode_teacher_forced(model, &h, ids)?;
    let correct = rows
        .iter()
        .zip(&ids[1..])
        .filter(|(row, &t)| argmax(row) == t as usize)
        .count();
    Ok((correct, rows.len()))
}

fn log_softmax_loss(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = max + sum.ln() - logits[target];
    let mut d: Vec<f64> = exps.into_iter().map(|e| e / sum).collect();
    d[target] -= 1.0;
    (loss, d)
}

/// Mean per-token cross-entropy of one sequence; when `grad` is given, adds
/// `weight ·` its gradient into it.
pub(crate) fn sequence_loss(
    model: &GruAutoencoderModel,
    ids: &[u32],
    weight: f64,
    grad: Option<&mut GruAutoencoderModel>,
) -> Result<f64, GruError> {
    check_sequence(model, ids)?;
    let keep = grad.is_some();
    let enc = run_encoder(model, ids, keep);
    let steps = ids.len() - 1;
    let mut h = enc.final_state.clone();
    let mut dec_caches = Vec::with_capacity(if keep { steps } else { 0 });
    let mut dec_states = Vec::with_capacity(if keep { steps } else { 0 });
    let mut dlogits = Vec::with_capacity(if keep { steps } else { 0 });
    let mut loss = 0.0;
    for t in 0..steps {
        let (next, cache) = step_cached(&model.decoder, model.embedding.row(ids[t] as usize), &h);
        let logits = model.logits(&next);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(GruError::NonFiniteLoss);
        }
        let (l, d) = log_softmax_loss(&logits, ids[t + 1] as usize);
        loss += l;
        if keep {
            dec_caches.push(cache);
            dec_states.push(next.clone());
            dlogits.push(d);
        }
        h = next;
    }
    let loss = loss / steps as f64;
    if !loss.is_finite() {
        return Err(GruError::NonFiniteLoss);
    }
    let Some(g) = grad else {
        return Ok(loss);
    };

    let scale = weight / steps as f64;
    let hd = model.dims.hidden_dim;
    let ed = model.dims.embed_dim;
    let mut dh = vec![0.0; hd];
    for t in (0..steps).rev() {
        let d: Vec<f64> = dlogits[t].iter().map(|v| v * scale).collect();
        g.projection.add_outer(&d, &dec_states[t]);
        crate::linalg::axpy(1.0, &d, &mut g.projection_bias);
        model.projection.matvec_t_add(&d, &mut dh);
        let mut dx = vec![0.0; ed];
        let mut dh_prev = vec![0.0; hd];
        step_backward(
            &model.decoder,
            &dec_caches[t],
            &dh,
            &mut g.decoder,
            &mut dx,
            &mut dh_prev,
        );
        crate::linalg::axpy(1.0, &dx, g.embedding.row_mut(ids[t] as usize));
        dh = dh_prev;
    }

    // dh is now the gradient w.r.t. the encoder's final top-layer state
    let mut dh2 = dh;
    let mut dh1 = vec![0.0; hd];
    for t in (0..ids.len()).rev() {
        let mut dx2 = vec![0.0; hd];
        let mut dh2_prev = vec![0.0; hd];
        step_backward(
            &model.encoder_2,
            &enc.layer2[t],
            &dh2,
            &mut g.encoder_2,
            &mut dx2,
            &mut dh2_prev,
        );
        crate::linalg::axpy(1.0, &dx2, &mut dh1);
        let mut dx1 = vec![0.0; ed];
        let mut dh1_prev = vec![0.0; hd];
        step_backward(
            &model.encoder_1,
            &enc.layer1[t],
            &dh1,
            &mut g.encoder_1,
            &mut dx1,
            &mut dh1_prev,
        );
        crate::linalg::axpy(1.0, &dx1, g.embedding.row_mut(ids[t] as usize));
        dh2 = dh2_prev;
        dh1 = dh1_prev;
    }
    Ok(loss)
}

/// Sequences per gradient-accumulation chunk. Chunks are summed in index
/// order, so results do not depend on the thread count.
const CHUNK: usize = 8;

/// Batch loss (mean over sequences of mean per-token cross-entropy) and its
/// gradient with respect to every parameter.
pub fn loss_and_gradients(
    model: &GruAutoencoderModel,
    batch: &[Vec<u32>],
) -> Result<(f64, GruAutoencoderModel), GruError> {
    if batch.is_empty() {
        return Err(GruError::EmptyBatch);
    }
    let weight = 1.0 / batch.len() as f64;
    let chunks: Vec<&[Vec<u32>]> = batch.chunks(CHUNK).collect();
    let partials = crate::par::map(&chunks, |chunk| {
        let mut g = model.zeros_like();
        let mut loss = 0.0;
        for seq in chunk.iter() {
            loss += sequence_loss(model, seq, weight, Some(&mut g))?;
        }
        Ok::<_, GruError>((loss, g))
    });
    let mut total = 0.0;
    let mut grad: Option<GruAutoencoderModel> = None;
    for p in partials {
        let (loss, g) = p?;
        total += loss;
        match grad.as_mut() {
            Some(acc) => acc.add_scaled(&g, 1.0),
            None => grad = Some(g),
        }
    }
    Ok((total * weight, grad.expect("non-empty batch")))
}

/// Mean loss over `seqs` without gradients.
pub fn mean_loss(model: &GruAutoencoderModel, seqs: &[Vec<u32>]) -> Result<f64, GruError> {
    if seqs.is_empty() {
        return Err(GruError::EmptyBatch);
    }
    let losses: Result<Vec<f64>, GruError> =
        crate::par::map(seqs, |s| sequence_loss(model, s, 0.0, None))
            .into_iter()
            .collect();
    Ok(losses?.iter().sum::<f64>() / seqs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn dims(v: usize, e: usize, h: usize) -> ModelDims {
        ModelDims {
            vocab_size: v,
            embed_dim: e,
            hidden_dim: h,
        }
    }

    #[test]
    fn zero_model_encodes_to_zero() {
        let m = GruAutoencoderModel::zeros(dims(6, 4, 5));
        assert_eq!(encode(&m, &[START_ID, END_ID]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn too_short_sequence_is_rejected() {
        let m = GruAutoencoderModel::zeros(dims(6, 4, 5));
        assert!(matches!(
            encode(&m, &[START_ID]),
            Err(GruError::EmptySequence)
        ));
        assert!(matches!(
            encode(&m, &[START_ID, 99]),
            Err(GruError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn zero_model_decodes_uniform_logits() {
        let m = GruAutoencoderModel::zeros(dims(6, 4, 5));
        let rows = decode_teacher_forced(&m, &[0.0; 5], &[START_ID, 4, 5, END_ID]).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.iter().all(|v| *v == 0.0)));
        let one = decode_teacher_forced(&m, &[0.0; 5], &[START_ID, END_ID]).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn zero_model_loss_is_log_vocab() {
        let m = GruAutoencoderModel::zeros(dims(4, 3, 2));
        let (loss, _) = loss_and_gradients(&m, &[vec![1, 3, 0, 2]]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_model_reconstructs_lowest_id() {
        let m = GruAutoencoderModel::zeros(dims(6, 4, 5));
        assert_eq!(
            reconstruct(&m, &[START_ID, 4, END_ID], 7).unwrap(),
            vec![0; 7]
        );
    }

    #[test]
    fn duplicated_sequence_has_same_gradient() {
        let mut rng = seeded(5);
        let m = GruAutoencoderModel::uniform(dims(7, 3, 4), 0.5, &mut rng);
        let s = vec![1, 4, 5, 6, 2];
        let (l1, g1) = loss_and_gradients(&m, &[s.clone()]).unwrap();
        let (l2, g2) = loss_and_gradients(&m, &[s.clone(), s]).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn container_round_trip() {
        let mut rng = seeded(9);
        let mut m = GruAutoencoderModel::uniform(dims(7, 3, 4), 0.08, &mut rng);
        m.vocab_fingerprint = "abc".into();
        m.seed = 42;
        let back = GruAutoencoderModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn nonfinite_logits_are_reported() {
        let mut m = GruAutoencoderModel::zeros(dims(4, 2, 2));
        m.projection_bias[0] = f64::INFINITY;
        assert!(matches!(
            loss_and_gradients(&m, &[vec![1, 2]]),
            Err(GruError::NonFiniteLoss)
        ));
    }
}
