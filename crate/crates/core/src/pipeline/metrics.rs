use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;

pub const REPORT_SCHEMA: &str = "evalreport/1";

/// Raw confusion counts for one class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub class: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    pub fn from_counts(c: &ClassCounts) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            class: c.class.clone(),
            precision,
            recall,
            f1,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
            support: c.tp + c.fn_,
        }
    }
}

/// Rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    /// Each row with nonzero support sums to 1.
    pub normalized: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunMetadata {
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    /// Seconds per named phase.
    pub timings: BTreeMap<String, f64>,
    /// Files that could not be classified, with the reason.
    pub excluded: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationReport {
    pub schema: String,
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(default)]
    pub metadata: RunMetadata,
}

impl EvaluationReport {
    /// Report from per-class counts, in the given order. Accuracy is
    /// `Σ TP / Σ support`.
    pub fn from_counts(counts: &[ClassCounts]) -> Result<Self, PipelineError> {
        if counts.is_empty() {
            return Err(PipelineError::InvalidReport("no classes".into()));
        }
        let classes: Vec<ClassMetrics> = counts.iter().map(ClassMetrics::from_counts).collect();
        let correct: u64 = classes.iter().map(|c| c.tp).sum();
        let total: u64 = classes.iter().map(|c| c.support).sum();
        Ok(Self {
            schema: REPORT_SCHEMA.into(),
            accuracy: ratio(correct, total),
            correct,
            total,
            classes,
            confusion: None,
            metadata: RunMetadata::default(),
        })
    }

    /// Report from paired labels. `classes` fixes the row order; labels
    /// outside it are appended in sorted order.
    pub fn from_predictions(
        truth: &[String],
        predicted: &[String],
        classes: &[String],
    ) -> Result<Self, PipelineError> {
        if truth.len() != predicted.len() {
            return Err(PipelineError::InvalidReport(format!(
                "{} truths but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut labels: Vec<String> = classes.to_vec();
        let mut extra: Vec<&String> = truth
            .iter()
            .chain(predicted)
            .filter(|l| !classes.contains(l))
            .collect();
        extra.sort();
        extra.dedup();
        labels.extend(extra.into_iter().cloned());
        if labels.is_empty() {
            return Err(PipelineError::InvalidReport("no classes".into()));
        }
        let index: BTreeMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let n = labels.len();
        let mut counts = vec![vec![0u64; n]; n];
        for (t, p) in truth.iter().zip(predicted) {
            counts[index[t.as_str()]][index[p.as_str()]] += 1;
        }
        let total = truth.len() as u64;
        let per_class: Vec<ClassCounts> = (0..n)
            .map(|c| {
                let tp = counts[c][c];
                let row: u64 = counts[c].iter().sum();
                let col: u64 = counts.iter().map(|r| r[c]).sum();
                ClassCounts {
                    class: labels[c].clone(),
                    tp,
                    fp: col - tp,
                    fn_: row - tp,
                    tn: total + tp - row - col,
                }
            })
            .collect();
        let normalized = counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter().map(|&v| ratio(v, s)).collect()
            })
            .collect();
        let mut report = Self::from_counts(&per_class)?;
        report.confusion = Some(ConfusionMatrix {
            labels,
            counts,
            normalized,
        });
        Ok(report)
    }

    /// Checks the metric identities against the stored counts.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::InvalidReport(m));
        if self.schema != REPORT_SCHEMA {
            return fail(format!("unsupported schema `{}`", self.schema));
        }
        if self.classes.is_empty() {
            return fail("no classes".into());
        }
        for c in &self.classes {
            let r = ClassMetrics::from_counts(&ClassCounts {
                class: c.class.clone(),
                tp: c.tp,
                fp: c.fp,
                fn_: c.fn_,
                tn: c.tn,
            });
            if c.support != c.tp + c.fn_
                || (r.precision - c.precision).abs() > 1e-9
                || (r.recall - c.recall).abs() > 1e-9
                || (r.f1 - c.f1).abs() > 1e-9
            {
                return fail(format!("inconsistent metrics for class {}", c.class));
            }
        }
        if let Some(cm) = &self.confusion {
            for row in &cm.normalized {
                let s: f64 = row.iter().sum();
                if s != 0.0 && (s - 1.0).abs() > 1e-9 {
                    return fail("confusion row does not sum to 1".into());
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let r: Self =
            serde_json::from_str(text).map_err(|e| PipelineError::InvalidReport(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    /// Fixed-width text table with one row per class and an accuracy line.
    pub fn format_table(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.class.len())
            .max()
            .unwrap_or(0)
            .max("Family".len());
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>9}  {:>6}  {:>8}  {:>6}  {:>6}  {:>6}  {:>6}  {:>7}",
            "Family", "Precision", "Recall", "F1-Score", "TP", "FP", "FN", "TN", "Support"
        );
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.3}  {:>6.3}  {:>8.3}  {:>6}  {:>6}  {:>6}  {:>6}  {:>7}",
                c.class, c.precision, c.recall, c.f1, c.tp, c.fp, c.fn_, c.tn, c.support
            );
        }
        let _ = writeln!(
            s,
            "accuracy {:.4} ({}/{})",
            self.accuracy, self.correct, self.total
        );
        s
    }

    /// Heat-map rendering of the normalized confusion matrix.
    pub fn confusion_svg(&self) -> Option<String> {
        let cm = self.confusion.as_ref()?;
        let n = cm.labels.len();
        let cell = 48;
        let margin = 8 * cm.labels.iter().map(|l| l.len()).max().unwrap_or(1) + 16;
        let size = margin + n * cell + 8;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif" font-size="11">"#
        );
        for (r, row) in cm.normalized.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                let shade = (255.0 * (1.0 - v)).round() as u8;
                let (x, y) = (margin + c * cell, margin + r * cell);
                let _ = writeln!(
                    s,
                    r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="gray"/>"#
                );
                let ink = if v > 0.5 { "white" } else { "black" };
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{v:.2}</text>"#,
                    x + cell / 2,
                    y + cell / 2 + 4
                );
            }
        }
        for (i, l) in cm.labels.iter().enumerate() {
            let l = escape_xml(l);
            let mid = margin + i * cell + cell / 2;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{l}</text>"#,
                margin - 4,
                mid + 4
            );
            let _ = writeln!(
                s,
                r#"<text x="{mid}" y="{}" text-anchor="start" transform="rotate(-90 {mid} {})">{l}</text>"#,
                margin - 4,
                margin - 4
            );
        }
        s.push_str("</svg>\n");
        Some(s)
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes `report.json`, `report.txt` and, when a confusion matrix is
/// present, `confusion.svg` into `dir`.
pub fn emit_report(report: &EvaluationReport, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    report.validate()?;
    std::fs::create_dir_all(dir)
        .map_err(|e| PipelineError::UnwritablePath(dir.to_path_buf(), e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), PipelineError> {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| PipelineError::UnwritablePath(p.clone(), e))?;
        written.push(p);
        Ok(())
    };
    put("report.json", report.to_json())?;
    put("report.txt", report.format_table())?;
    if let Some(svg) = report.confusion_svg() {
        put("confusion.svg", svg)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn perfect_predictions_give_identity() {
        let truth = s(&["a", "b", "c", "a", "c"]);
        let r = EvaluationReport::from_predictions(&truth, &truth, &s(&["a", "b", "c"])).unwrap();
        let cm = r.confusion.as_ref().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(cm.normalized[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(r.accuracy, 1.0);
        r.validate().unwrap();
    }

    #[test]
    fn counts_from_predictions() {
        let truth = s(&["a", "a", "b", "b", "b"]);
        let pred = s(&["a", "b", "b", "b", "a"]);
        let r = EvaluationReport::from_predictions(&truth, &pred, &s(&["a", "b"])).unwrap();
        let a = &r.classes[0];
        assert_eq!((a.tp, a.fp, a.fn_, a.tn, a.support), (1, 1, 1, 2, 2));
        assert_eq!(a.precision, 0.5);
        assert_eq!(r.accuracy, 0.6);
        assert_eq!(
            r.confusion.unwrap().normalized[1],
            vec![1.0 / 3.0, 2.0 / 3.0]
        );
    }

    #[test]
    fn unseen_predicted_label_gets_a_column() {
        let r = EvaluationReport::from_predictions(&s(&["a"]), &s(&["z"]), &s(&["a"])).unwrap();
        assert_eq!(r.confusion.unwrap().labels, s(&["a", "z"]));
        assert_eq!(r.classes[1].support, 0);
        assert_eq!(r.classes[1].precision, 0.0);
    }

    #[test]
    fn json_round_trip_and_empty_rejection() {
        let truth = s(&["a", "b"]);
        let r = EvaluationReport::from_predictions(&truth, &truth, &truth).unwrap();
        assert_eq!(EvaluationReport::from_json(&r.to_json()).unwrap(), r);
        assert!(matches!(
            EvaluationReport::from_counts(&[]),
            Err(PipelineError::InvalidReport(_))
        ));
        let mut broken = r.clone();
        broken.classes[0].precision = 0.3;
        assert!(broken.validate().is_err());
    }

    #[test]
    fn emits_files() {
        let dir = tempfile::tempdir().unwrap();
        let truth = s(&["a&b", "c"]);
        let r = EvaluationReport::from_predictions(&truth, &truth, &truth).unwrap();
        let files = emit_report(&r, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let svg = std::fs::read_to_string(dir.path().join("confusion.svg")).unwrap();
        assert!(svg.contains("a&amp;b") && svg.ends_with("</svg>\n"));
    }
}
