use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::platt::{fit_platt, PlattCalibrator};
use super::smo::{train_binary_svm, BinarySvmModel, SmoParams};
use super::SvmError;
use crate::linalg::Matrix;

pub const CLASSIFIER_SCHEMA: &str = "classifier/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OvaParams {
    pub c: f64,
    /// Folds used to produce out-of-fold decision values for calibration.
    pub platt_folds: usize,
    pub seed: u64,
}

impl Default for OvaParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            platt_folds: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassHead {
    pub class: String,
    pub svm: BinarySvmModel,
    pub platt: PlattCalibrator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneVsAllClassifier {
    pub schema: String,
    /// Sorted and unique; `heads[i]` scores `classes[i]`.
    pub classes: Vec<String>,
    pub heads: Vec<ClassHead>,
    /// Training graph ids in kernel-column order.
    pub train_ids: Vec<String>,
    /// Fingerprint of the feature configuration the kernel was built with.
    pub fingerprint: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: String,
    /// Normalized to sum to 1, in `classes` order.
    pub probabilities: Vec<f64>,
}

/// Fold index per item. Items of each class (in sorted class order) are
/// shuffled and dealt round-robin, continuing the deal across classes so
/// fold sizes stay balanced.
pub fn stratified_folds<L: Ord + Clone>(
    labels: &[L],
    folds: usize,
    seed: u64,
    stream: &str,
) -> Vec<usize> {
    let mut by_class: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l.clone()).or_default().push(i);
    }
    let mut rng = crate::rng::substream(seed, stream);
    let mut out = vec![0; labels.len()];
    let mut deal = 0;
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        for i in members {
            out[i] = deal % folds;
            deal += 1;
        }
    }
    out
}

fn sub_gram(k: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), idx.len(), |a, b| k.get(idx[a], idx[b]))
}

/// Decision values for every training point from models that never saw it.
/// Returns `None` when one class is too small for even two folds.
fn out_of_fold_decisions(
    k: &Matrix,
    y: &[f64],
    params: &OvaParams,
    class: &str,
    warnings: &mut Vec<String>,
) -> Result<Option<Vec<f64>>, SvmError> {
    let pos = y.iter().filter(|&&v| v > 0.0).count();
    let neg = y.len() - pos;
    let folds = params.platt_folds.min(pos).min(neg);
    if folds < 2 {
        return Ok(None);
    }
    if folds < params.platt_folds {
        warnings.push(format!(
            "class {class}: calibration folds reduced from {} to {folds}",
            params.platt_folds
        ));
    }
    let assignment = stratified_folds(
        &y.iter().map(|&v| v > 0.0).collect::<Vec<_>>(),
        folds,
        params.seed,
        &format!("platt-folds/{class}"),
    );
    let mut out = vec![0.0; y.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] != f).collect();
        let held: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] == f).collect();
        let ys: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let model = train_binary_svm(&sub_gram(k, &train), &ys, &SmoParams::with_c(params.c))?;
        for &h in &held {
            let row: Vec<f64> = train.iter().map(|&t| k.get(h, t)).collect();
            out[h] = model.decision(&row)?;
        }
    }
    Ok(Some(out))
}

/// One binary SVM per class (class vs rest) on the full kernel, calibrated
/// by Platt scaling on out-of-fold decision values.
pub fn train_one_vs_all(
    k: &Matrix,
    labels: &[String],
    train_ids: &[String],
    fingerprint: &str,
    params: &OvaParams,
) -> Result<OneVsAllClassifier, SvmError> {
    if labels.len() != k.rows || k.rows != k.cols || train_ids.len() != labels.len() {
        return Err(SvmError::DimensionMismatch {
            expected: k.rows,
            found: labels.len(),
        });
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(SvmError::SingleClassInput);
    }
    let results = crate::par::map(&classes, |class| {
        let y: Vec<f64> = labels
            .iter()
            .map(|l| if l == class { 1.0 } else { -1.0 })
            .collect();
        let svm = train_binary_svm(k, &y, &SmoParams::with_c(params.c))?;
        let mut warnings = Vec::new();
        if !svm.converged {
            warnings.push(format!("class {class}: SMO hit the iteration limit"));
        }
        let decisions = match out_of_fold_decisions(k, &y, params, class, &mut warnings)? {
            Some(d) => d,
            None => {
                warnings.push(format!("class {class}: too few members for out-of-fold calibration, using in-sample decisions"));
                (0..y.len())
                    .map(|i| svm.decision(k.row(i)))
                    .collect::<Result<_, _>>()?
            }
        };
        let truth: Vec<bool> = y.iter().map(|&v| v > 0.0).collect();
        let platt = fit_platt(&decisions, &truth, 100)?;
        Ok::<_, SvmError>((
            ClassHead {
                class: class.clone(),
                svm,
                platt,
            },
            warnings,
        ))
    });
    let mut heads = Vec::with_capacity(classes.len());
    let mut warnings = Vec::new();
    for r in results {
        let (head, w) = r?;
        heads.push(head);
        warnings.extend(w);
    }
    Ok(OneVsAllClassifier {
        schema: CLASSIFIER_SCHEMA.into(),
        classes,
        heads,
        train_ids: train_ids.to_vec(),
        fingerprint: fingerprint.to_string(),
        warnings,
    })
}

impl OneVsAllClassifier {
    pub fn n_train(&self) -> usize {
        self.train_ids.len()
    }

    /// Decision values per head for one kernel row.
    pub fn decisions(&self, kernel_row: &[f64]) -> Result<Vec<f64>, SvmError> {
        self.heads
            .iter()
            .map(|h| h.svm.decision(kernel_row))
            .collect()
    }

    /// Calibrated head probabilities divided by their sum; the argmax picks
    /// the first class on ties.
    pub fn predict_row(&self, kernel_row: &[f64]) -> Result<Prediction, SvmError> {
        let raw: Vec<f64> = self
            .heads
            .iter()
            .map(|h| Ok(h.platt.probability(h.svm.decision(kernel_row)?)))
            .collect::<Result<_, SvmError>>()?;
        let sum: f64 = raw.iter().sum();
        let probabilities: Vec<f64> = if sum > 0.0 && sum.is_finite() {
            raw.iter().map(|p| p / sum).collect()
        } else {
            vec![1.0 / raw.len() as f64; raw.len()]
        };
        let mut best = 0;
        for (i, &p) in probabilities.iter().enumerate() {
            if p > probabilities[best] {
                best = i;
            }
        }
        Ok(Prediction {
            class: self.classes[best].clone(),
            probabilities,
        })
    }

    pub fn predict(&self, kernel_rows: &[Vec<f64>]) -> Result<Vec<Prediction>, SvmError> {
        crate::par::map(kernel_rows, |r| self.predict_row(r))
            .into_iter()
            .collect()
    }

    /// Refuses rows built from features with a different configuration.
    pub fn predict_checked(
        &self,
        kernel_rows: &[Vec<f64>],
        fingerprint: &str,
    ) -> Result<Vec<Prediction>, SvmError> {
        if fingerprint != self.fingerprint {
            return Err(SvmError::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                found: fingerprint.to_string(),
            });
        }
        self.predict(kernel_rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("classifier serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SvmError> {
        let c: Self = serde_json::from_str(text)?;
        if c.schema != CLASSIFIER_SCHEMA {
            return Err(SvmError::Schema(c.schema));
        }
        if c.classes.len() != c.heads.len()
            || c.classes.iter().zip(&c.heads).any(|(n, h)| *n != h.class)
            || c.classes.windows(2).any(|w| w[0] >= w[1])
            || c.heads.iter().any(|h| h.svm.n_train != c.train_ids.len())
        {
            return Err(SvmError::Schema("inconsistent classifier heads".into()));
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSearchSpec {
    pub c_values: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        Self {
            c_values: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            folds: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub c: f64,
    pub fold_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub best_c: f64,
    pub folds: usize,
    pub cells: Vec<GridCell>,
}

/// Stratified k-fold accuracy per C. The best C has the highest mean
/// accuracy; ties go to the smaller C.
pub fn grid_search(
    k: &Matrix,
    labels: &[String],
    spec: &GridSearchSpec,
) -> Result<GridReport, SvmError> {
    if spec.c_values.is_empty()
        || spec.c_values.iter().any(|&c| !(c > 0.0 && c.is_finite()))
        || spec.folds < 2
    {
        return Err(SvmError::InvalidParameter(format!("{spec:?}")));
    }
    let mut cs = spec.c_values.clone();
    cs.sort_by(f64::total_cmp);
    cs.dedup();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let smallest = counts.values().copied().min().unwrap_or(0);
    let folds = spec.folds.min(smallest);
    if cs.len() == 1 || folds < 2 || counts.len() < 2 {
        return Ok(GridReport {
            best_c: cs[0],
            folds: 0,
            cells: Vec::new(),
        });
    }
    let assignment = stratified_folds(labels, folds, spec.seed, "grid-folds");
    let ids: Vec<String> = (0..labels.len()).map(|i| i.to_string()).collect();
    let mut cells = Vec::with_capacity(cs.len());
    for &c in &cs {
        let mut fold_accuracy = Vec::with_capacity(folds);
        for f in 0..folds {
            let train: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] != f).collect();
            let held: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == f).collect();
            let tl: Vec<String> = train.iter().map(|&i| labels[i].clone()).collect();
            let tids: Vec<String> = train.iter().map(|&i| ids[i].clone()).collect();
            let params = OvaParams {
                c,
                platt_folds: 3,
                seed: spec.seed,
            };
            let clf = train_one_vs_all(&sub_gram(k, &train), &tl, &tids, "", &params)?;
            let rows: Vec<Vec<f64>> = held
                .iter()
                .map(|&h| train.iter().map(|&t| k.get(h, t)).collect())
                .collect();
            let preds = clf.predict(&rows)?;
            let correct = preds
                .iter()
                .zip(&held)
                .filter(|(p, &h)| p.class == labels[h])
                .count();
            fold_accuracy.push(correct as f64 / held.len() as f64);
        }
        let mean_accuracy = fold_accuracy.iter().sum::<f64>() / folds as f64;
        cells.push(GridCell {
            c,
            fold_accuracy,
            mean_accuracy,
        });
    }
    let mut best = 0;
    for (i, cell) in cells.iter().enumerate() {
        if cell.mean_accuracy > cells[best].mean_accuracy {
            best = i;
        }
    }
    Ok(GridReport {
        best_c: cells[best].c,
        folds,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Three well-separated 2-D blobs under a linear kernel with a bias term.
    fn fixture(per_class: usize, seed: u64) -> (Vec<[f64; 2]>, Vec<String>) {
        let centers = [
            ("alpha", [6.0, 0.0]),
            ("beta", [-6.0, 0.0]),
            ("gamma", [0.0, 6.0]),
        ];
        let mut rng = crate::rng::seeded(seed);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..per_class * 3 {
            let (name, c) = centers[i % 3];
            pts.push([
                c[0] + rng.gen_range(-1.0..1.0),
                c[1] + rng.gen_range(-1.0..1.0),
            ]);
            labels.push(name.to_string());
        }
        (pts, labels)
    }

    fn kern(a: &[f64; 2], b: &[f64; 2]) -> f64 {
        a[0] * b[0] + a[1] * b[1] + 1.0
    }

    fn gram(pts: &[[f64; 2]]) -> Matrix {
        Matrix::from_fn(pts.len(), pts.len(), |i, j| kern(&pts[i], &pts[j]))
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("g{i}")).collect()
    }

    #[test]
    fn training_points_predict_their_class() {
        let (pts, labels) = fixture(10, 1);
        let k = gram(&pts);
        let clf =
            train_one_vs_all(&k, &labels, &ids(pts.len()), "fp", &OvaParams::default()).unwrap();
        assert_eq!(clf.classes, vec!["alpha", "beta", "gamma"]);
        for i in 0..pts.len() {
            let p = clf.predict_row(k.row(i)).unwrap();
            assert_eq!(p.class, labels[i]);
            assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn probabilities_sum_to_one_on_random_rows() {
        let (pts, labels) = fixture(8, 2);
        let clf = train_one_vs_all(
            &gram(&pts),
            &labels,
            &ids(pts.len()),
            "fp",
            &OvaParams::default(),
        )
        .unwrap();
        let mut rng = crate::rng::seeded(3);
        for _ in 0..200 {
            let row: Vec<f64> = (0..pts.len())
                .map(|_| rng.gen_range(-100.0..100.0))
                .collect();
            let p = clf.predict_row(&row).unwrap();
            assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn two_classes_agree_with_binary_threshold() {
        let (pts, labels) = fixture(12, 4);
        let keep: Vec<usize> = (0..pts.len()).filter(|&i| labels[i] != "gamma").collect();
        let p2: Vec<[f64; 2]> = keep.iter().map(|&i| pts[i]).collect();
        let l2: Vec<String> = keep.iter().map(|&i| labels[i].clone()).collect();
        let clf =
            train_one_vs_all(&gram(&p2), &l2, &ids(p2.len()), "", &OvaParams::default()).unwrap();
        let head = &clf.heads[0];
        let mut rng = crate::rng::seeded(5);
        for _ in 0..100 {
            let q = [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)];
            let row: Vec<f64> = p2.iter().map(|p| kern(p, &q)).collect();
            let binary = head.platt.probability(head.svm.decision(&row).unwrap()) >= 0.5;
            let pred = clf.predict_row(&row).unwrap();
            if (pred.probabilities[0] - 0.5).abs() > 1e-6 {
                assert_eq!(pred.class == "alpha", binary, "{q:?}");
            }
        }
    }

    #[test]
    fn deterministic_and_json_round_trip() {
        let (pts, labels) = fixture(7, 6);
        let k = gram(&pts);
        let a =
            train_one_vs_all(&k, &labels, &ids(pts.len()), "fp", &OvaParams::default()).unwrap();
        let b =
            train_one_vs_all(&k, &labels, &ids(pts.len()), "fp", &OvaParams::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(OneVsAllClassifier::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn fingerprint_and_width_are_checked() {
        let (pts, labels) = fixture(4, 7);
        let clf = train_one_vs_all(
            &gram(&pts),
            &labels,
            &ids(pts.len()),
            "fp",
            &OvaParams::default(),
        )
        .unwrap();
        let row = vec![0.0; pts.len()];
        assert!(matches!(
            clf.predict_checked(&[row.clone()], "other"),
            Err(SvmError::FingerprintMismatch { .. })
        ));
        assert!(clf.predict_checked(&[row], "fp").is_ok());
        assert!(matches!(
            clf.predict_row(&[1.0]),
            Err(SvmError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tiny_classes_fall_back_with_warning() {
        let (pts, mut labels) = fixture(4, 8);
        labels[0] = "delta".into();
        let clf = train_one_vs_all(
            &gram(&pts),
            &labels,
            &ids(pts.len()),
            "",
            &OvaParams::default(),
        )
        .unwrap();
        assert!(clf.warnings.iter().any(|w| w.contains("delta")));
    }

    #[test]
    fn grid_prefers_smallest_c_on_ties() {
        let (pts, labels) = fixture(9, 9);
        let spec = GridSearchSpec {
            c_values: vec![10.0, 0.1, 1.0],
            folds: 3,
            seed: 1,
        };
        let report = grid_search(&gram(&pts), &labels, &spec).unwrap();
        assert!(report.cells.iter().all(|c| c.mean_accuracy == 1.0));
        assert_eq!(report.best_c, 0.1);
        let one = GridSearchSpec {
            c_values: vec![3.0],
            ..spec.clone()
        };
        assert_eq!(grid_search(&gram(&pts), &labels, &one).unwrap().best_c, 3.0);
        assert_eq!(grid_search(&gram(&pts), &labels, &spec).unwrap(), report);
    }

    #[test]
    fn folds_are_stratified() {
        let labels: Vec<u8> = (0..30).map(|i| (i % 3) as u8).collect();
        let f = stratified_folds(&labels, 3, 0, "t");
        for fold in 0..3 {
            for class in 0..3u8 {
                let n = (0..30)
                    .filter(|&i| f[i] == fold && labels[i] == class)
                    .count();
                assert!(n >= 3 && n <= 4, "{fold} {class} {n}");
            }
        }
    }
}
