use serde::{Deserialize, Serialize};

use super::SvmError;
use crate::linalg::Matrix;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoParams {
    pub c: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub eps: f64,
    pub max_iter: usize,
}

impl SmoParams {
    pub fn with_c(c: f64) -> Self {
        Self {
            c,
            eps: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

/// Dual soft-margin SVM over a precomputed kernel. Decision value for a
/// kernel row `κ` against the training set is `Σ coef_k κ[support_k] + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinarySvmModel {
    /// Training indices with `α > 0`, ascending.
    pub support: Vec<usize>,
    /// `α_i · y_i` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub n_train: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl BinarySvmModel {
    pub fn decision(&self, kernel_row: &[f64]) -> Result<f64, SvmError> {
        if kernel_row.len() != self.n_train {
            return Err(SvmError::DimensionMismatch {
                expected: self.n_train,
                found: kernel_row.len(),
            });
        }
        Ok(self
            .support
            .iter()
            .zip(&self.coef)
            .map(|(&i, &a)| a * kernel_row[i])
            .sum::<f64>()
            + self.bias)
    }

    /// Dense `α_i` for all training points.
    pub fn alphas(&self, labels: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.n_train];
        for (&i, &c) in self.support.iter().zip(&self.coef) {
            a[i] = c * labels[i];
        }
        a
    }
}

/// SMO with second-order working-set selection and LIBSVM's analytic
/// two-variable update. `labels` must be ±1.
pub fn train_binary_svm(
    k: &Matrix,
    labels: &[f64],
    params: &SmoParams,
) -> Result<BinarySvmModel, SvmError> {
    let n = labels.len();
    if k.rows != n || k.cols != n {
        return Err(SvmError::DimensionMismatch {
            expected: n,
            found: k.rows,
        });
    }
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(SvmError::InvalidParameter(format!("C = {}", params.c)));
    }
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(SvmError::InvalidParameter("labels must be +1 or -1".into()));
    }
    let pos = labels.iter().filter(|&&y| y > 0.0).count();
    if pos == 0 || pos == n {
        return Err(SvmError::SingleClassInput);
    }
    let c = params.c;
    let y = labels;
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let diag: Vec<f64> = (0..n).map(|i| k.get(i, i)).collect();
    let q = |i: usize, j: usize| y[i] * y[j] * k.get(i, j);
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = t;
                }
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if i_sel != usize::MAX {
            let i = i_sel;
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let yg = y[t] * grad[t];
                gmax2 = gmax2.max(yg);
                let b = gmax + yg;
                if b > 0.0 {
                    let mut a = diag[i] + diag[t] - 2.0 * k.get(i, t);
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let obj = -(b * b) / a;
                    if obj < obj_min {
                        obj_min = obj;
                        j_sel = t;
                    }
                }
            }
        }
        if gmax + gmax2 < params.eps || j_sel == usize::MAX {
            converged = true;
            break;
        }
        iterations += 1;
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        if y[i] != y[j] {
            let mut quad = diag[i] + diag[j] + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = diag[i] + diag[j] - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut free_sum) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        (ub + lb) / 2.0
    };
    let support: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    let coef = support.iter().map(|&t| alpha[t] * y[t]).collect();
    Ok(BinarySvmModel {
        support,
        coef,
        bias: -rho,
        c,
        n_train: n,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn linear_gram(points: &[[f64; 2]]) -> Matrix {
        Matrix::from_fn(points.len(), points.len(), |i, j| {
            points[i][0] * points[j][0] + points[i][1] * points[j][1]
        })
    }

    fn blobs(seed: u64, n: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
        let mut rng = crate::rng::seeded(seed);
        let mut pts = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = if i % 2 == 0 { 1.0 } else { -1.0 };
            pts.push([y * 3.0 + rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            ys.push(y);
        }
        (pts, ys)
    }

    #[test]
    fn two_point_problem() {
        let k = Matrix::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let m = train_binary_svm(&k, &[1.0, -1.0], &SmoParams::with_c(10.0)).unwrap();
        assert_eq!(m.support, vec![0, 1]);
        assert!(m.decision(&[1.0, 0.0]).unwrap() > 0.0);
        assert!(m.decision(&[0.0, 1.0]).unwrap() < 0.0);
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let (pts, ys) = blobs(3, 40);
        let k = linear_gram(&pts);
        let m = train_binary_svm(&k, &ys, &SmoParams::with_c(1.0)).unwrap();
        assert!(m.converged);
        for i in 0..pts.len() {
            assert_eq!(m.decision(k.row(i)).unwrap().signum(), ys[i]);
        }
    }

    #[test]
    fn kkt_and_equality_constraint() {
        let mut rng = crate::rng::seeded(11);
        let pts: Vec<[f64; 2]> = (0..60)
            .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
            .collect();
        let ys: Vec<f64> = pts
            .iter()
            .map(|p| {
                if p[0] + 0.3 * p[1] + rng.gen_range(-0.8..0.8) > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        let k = linear_gram(&pts);
        let c = 0.7;
        let m = train_binary_svm(&k, &ys, &SmoParams::with_c(c)).unwrap();
        let alpha = m.alphas(&ys);
        let balance: f64 = alpha.iter().zip(&ys).map(|(a, y)| a * y).sum();
        assert!(balance.abs() < 1e-8);
        let tol = 1e-3;
        for i in 0..pts.len() {
            let margin = ys[i] * m.decision(k.row(i)).unwrap();
            assert!((0.0..=c).contains(&alpha[i]));
            if alpha[i] == 0.0 {
                assert!(margin >= 1.0 - tol, "{i}: {margin}");
            } else if alpha[i] < c {
                assert!((margin - 1.0).abs() <= tol, "{i}: {margin}");
            } else {
                assert!(margin <= 1.0 + tol, "{i}: {margin}");
            }
        }
    }

    #[test]
    fn duplicated_training_set_keeps_decision_function() {
        let (pts, ys) = blobs(5, 20);
        let tight = SmoParams {
            c: 100.0,
            eps: 1e-10,
            max_iter: 1_000_000,
        };
        let m1 = train_binary_svm(&linear_gram(&pts), &ys, &tight).unwrap();
        let pts2: Vec<[f64; 2]> = pts.iter().chain(&pts).copied().collect();
        let ys2: Vec<f64> = ys.iter().chain(&ys).copied().collect();
        let m2 = train_binary_svm(&linear_gram(&pts2), &ys2, &tight).unwrap();
        let mut rng = crate::rng::seeded(6);
        for _ in 0..50 {
            let q = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let row1: Vec<f64> = pts.iter().map(|p| p[0] * q[0] + p[1] * q[1]).collect();
            let row2: Vec<f64> = pts2.iter().map(|p| p[0] * q[0] + p[1] * q[1]).collect();
            let (d1, d2) = (m1.decision(&row1).unwrap(), m2.decision(&row2).unwrap());
            assert!((d1 - d2).abs() < 1e-6, "{d1} vs {d2}");
        }
    }

    #[test]
    fn scaled_kernel_with_inverse_c_keeps_signs() {
        let (pts, ys) = blobs(9, 30);
        let k = linear_gram(&pts);
        let mut k5 = k.clone();
        k5.data.iter_mut().for_each(|v| *v *= 5.0);
        let m1 = train_binary_svm(&k, &ys, &SmoParams::with_c(1.0)).unwrap();
        let m5 = train_binary_svm(&k5, &ys, &SmoParams::with_c(0.2)).unwrap();
        for i in 0..pts.len() {
            assert_eq!(
                m1.decision(k.row(i)).unwrap().signum(),
                m5.decision(k5.row(i)).unwrap().signum()
            );
        }
    }

    #[test]
    fn rejects_single_class_and_bad_rows() {
        let k = Matrix::from_fn(2, 2, |_, _| 1.0);
        assert!(matches!(
            train_binary_svm(&k, &[1.0, 1.0], &SmoParams::with_c(1.0)),
            Err(SvmError::SingleClassInput)
        ));
        let m = train_binary_svm(&k, &[1.0, -1.0], &SmoParams::with_c(1.0)).unwrap();
        assert!(matches!(
            m.decision(&[1.0]),
            Err(SvmError::DimensionMismatch { .. })
        ));
    }
}
