//! Kernel SVM on precomputed Gram matrices: an SMO dual solver, Platt
//! calibration, and a one-vs-all multiclass wrapper with grid search over C.

mod ova;
mod platt;
mod smo;

pub use ova::{
    grid_search, stratified_folds, train_one_vs_all, ClassHead, GridCell, GridReport,
    GridSearchSpec, OneVsAllClassifier, OvaParams, Prediction, CLASSIFIER_SCHEMA,
};
pub use platt::{fit_platt, PlattCalibrator};
pub use smo::{train_binary_svm, BinarySvmModel, SmoParams};

use crate::linalg::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum SvmError {
    #[error("training labels contain a single class")]
    SingleClassInput,
    #[error("calibration needs both positive and negative labels")]
    DegenerateLabels,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite calibration parameters")]
    NonFinite,
    #[error("feature fingerprint mismatch: classifier built for {expected}, got {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("unsupported classifier schema `{0}`")]
    Schema(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Adds `1e-10 · trace / n` to the diagonal when the smallest eigenvalue is
/// below `-1e-8 · trace`. Returns the jitter applied, if any.
pub fn repair_psd(k: &mut Matrix) -> Option<f64> {
    let n = k.rows;
    if n == 0 {
        return None;
    }
    let trace: f64 = (0..n).map(|i| k.get(i, i)).sum();
    let m = nalgebra::DMatrix::from_row_slice(n, n, &k.data);
    let min = nalgebra::SymmetricEigen::new(m).eigenvalues.min();
    if min >= -1e-8 * trace.abs() {
        return None;
    }
    let jitter = 1e-10 * trace.abs() / n as f64;
    for i in 0..n {
        k.row_mut(i)[i] += jitter;
    }
    Some(jitter)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_repair_only_when_needed() {
        let mut good = Matrix::from_fn(2, 2, |i, j| if i == j { 2.0 } else { 1.0 });
        assert_eq!(repair_psd(&mut good), None);
        let mut bad = Matrix::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 3.0 });
        let j = repair_psd(&mut bad).unwrap();
        assert!((j - 1e-10).abs() < 1e-20);
        assert_eq!(bad.get(0, 0), 1.0 + j);
    }
}
