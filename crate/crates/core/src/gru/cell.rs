//! A single GRU layer.
//!
//! ```text
//! z = σ(W_z x + U_z h + b_z)
//! r = σ(W_r x + U_r h + b_r)
//! h' = (1 - z) ∘ h + z ∘ tanh(W_h x + U_h (r ∘ h) + b_h)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GruError;
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCellParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GruCellParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_z: Matrix::zeros(hidden_dim, input_dim),
            w_r: Matrix::zeros(hidden_dim, input_dim),
            w_h: Matrix::zeros(hidden_dim, input_dim),
            u_z: Matrix::zeros(hidden_dim, hidden_dim),
            u_r: Matrix::zeros(hidden_dim, hidden_dim),
            u_h: Matrix::zeros(hidden_dim, hidden_dim),
            b_z: vec![0.0; hidden_dim],
            b_r: vec![0.0; hidden_dim],
            b_h: vec![0.0; hidden_dim],
        }
    }

    pub fn uniform<R: Rng>(input_dim: usize, hidden_dim: usize, range: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.gen_range(-range..=range);
            }
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_z.rows
    }

    pub(crate) const TENSOR_NAMES: [&'static str; 9] = [
        "w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h",
    ];

    pub(crate) fn tensors(&self) -> [&[f64]; 9] {
        [
            &self.w_z.data,
            &self.w_r.data,
            &self.w_h.data,
            &self.u_z.data,
            &self.u_r.data,
            &self.u_h.data,
            &self.b_z,
            &self.b_r,
            &self.b_h,
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 9] {
        [
            &mut self.w_z.data,
            &mut self.w_r.data,
            &mut self.w_h.data,
            &mut self.u_z.data,
            &mut self.u_r.data,
            &mut self.u_h.data,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub(crate) fn shapes(&self) -> [(usize, usize); 9] {
        let (h, i) = (self.hidden_dim(), self.input_dim());
        [
            (h, i),
            (h, i),
            (h, i),
            (h, h),
            (h, h),
            (h, h),
            (1, h),
            (1, h),
            (1, h),
        ]
    }

    /// Shape and finiteness check.
    pub fn validate(&self) -> Result<(), GruError> {
        let (h, i) = (self.hidden_dim(), self.input_dim());
        let ok = [&self.w_z, &self.w_r, &self.w_h]
            .iter()
            .all(|m| m.rows == h && m.cols == i)
            && [&self.u_z, &self.u_r, &self.u_h]
                .iter()
                .all(|m| m.rows == h && m.cols == h)
            && [&self.b_z, &self.b_r, &self.b_h]
                .iter()
                .all(|b| b.len() == h);
        if !ok {
            return Err(GruError::DimensionMismatch(
                "inconsistent cell parameter shapes".into(),
            ));
        }
        if self
            .tensors()
            .iter()
            .any(|t| t.iter().any(|v| !v.is_finite()))
        {
            return Err(GruError::NonFinite("cell parameters".into()));
        }
        Ok(())
    }
}

/// Intermediate values of one step kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub c: Vec<f64>,
}

/// One GRU step.
pub fn gru_step(p: &GruCellParams, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>, GruError> {
    if x.len() != p.input_dim() || h_prev.len() != p.hidden_dim() {
        return Err(GruError::DimensionMismatch(format!(
            "cell expects input {} and hidden {}, got {} and {}",
            p.input_dim(),
            p.hidden_dim(),
            x.len(),
            h_prev.len()
        )));
    }
    Ok(step_cached(p, x, h_prev).0)
}

pub(crate) fn step_cached(p: &GruCellParams, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, StepCache) {
    let mut z = p.b_z.clone();
    p.w_z.matvec_add(x, &mut z);
    p.u_z.matvec_add(h_prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut r = p.b_r.clone();
    p.w_r.matvec_add(x, &mut r);
    p.u_r.matvec_add(h_prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let mut c = p.b_h.clone();
    p.w_h.matvec_add(x, &mut c);
    p.u_h.matvec_add(&rh, &mut c);
    c.iter_mut().for_each(|v| *v = v.tanh());

    let h: Vec<f64> = (0..h_prev.len())
        .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * c[i])
        .collect();
    let cache = StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        c,
    };
    (h, cache)
}

/// Backpropagates `dh` (gradient w.r.t. the step output) through one step,
/// accumulating parameter gradients into `grad` and input/previous-state
/// gradients into `dx` and `dh_prev`.
pub(crate) fn step_backward(
    p: &GruCellParams,
    cache: &StepCache,
    dh: &[f64],
    grad: &mut GruCellParams,
    dx: &mut [f64],
    dh_prev: &mut [f64],
) {
    let n = dh.len();
    let StepCache { x, h_prev, z, r, c } = cache;

    let mut da_c = vec![0.0; n];
    let mut da_z = vec![0.0; n];
    for i in 0..n {
        dh_prev[i] += dh[i] * (1.0 - z[i]);
        da_c[i] = dh[i] * z[i] * (1.0 - c[i] * c[i]);
        da_z[i] = dh[i] * (c[i] - h_prev[i]) * z[i] * (1.0 - z[i]);
    }

    // candidate
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    grad.w_h.add_outer(&da_c, x);
    grad.u_h.add_outer(&da_c, &rh);
    crate::linalg::axpy(1.0, &da_c, &mut grad.b_h);
    p.w_h.matvec_t_add(&da_c, dx);
    let mut d_rh = vec![0.0; n];
    p.u_h.matvec_t_add(&da_c, &mut d_rh);

    let mut da_r = vec![0.0; n];
    for i in 0..n {
        dh_prev[i] += d_rh[i] * r[i];
        da_r[i] = d_rh[i] * h_prev[i] * r[i] * (1.0 - r[i]);
    }

    // update gate
    grad.w_z.add_outer(&da_z, x);
    grad.u_z.add_outer(&da_z, h_prev);
    crate::linalg::axpy(1.0, &da_z, &mut grad.b_z);
    p.w_z.matvec_t_add(&da_z, dx);
    p.u_z.matvec_t_add(&da_z, dh_prev);

    // reset gate
    grad.w_r.add_outer(&da_r, x);
    grad.u_r.add_outer(&da_r, h_prev);
    crate::linalg::axpy(1.0, &da_r, &mut grad.b_r);
    p.w_r.matvec_t_add(&da_r, dx);
    p.u_r.matvec_t_add(&da_r, dh_prev);
}
