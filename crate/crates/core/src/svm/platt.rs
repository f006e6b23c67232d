use serde::{Deserialize, Serialize};

use super::SvmError;

/// Sigmoid `P(+ | f) = 1 / (1 + exp(A·f + B))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlattCalibrator {
    pub a: f64,
    pub b: f64,
}

impl PlattCalibrator {
    pub fn probability(&self, decision: f64) -> f64 {
        let z = self.a * decision + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

fn objective(dec: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    dec.iter()
        .zip(targets)
        .map(|(&f, &t)| {
            let z = f * a + b;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

/// Newton's method with backtracking on Platt's smoothed targets
/// `(N₊+1)/(N₊+2)` and `1/(N₋+2)`.
pub fn fit_platt(
    decisions: &[f64],
    labels: &[bool],
    max_iter: usize,
) -> Result<PlattCalibrator, SvmError> {
    if decisions.len() != labels.len() {
        return Err(SvmError::DimensionMismatch {
            expected: decisions.len(),
            found: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(SvmError::DegenerateLabels);
    }
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();
    const MIN_STEP: f64 = 1e-10;
    const SIGMA: f64 = 1e-12;
    const EPS: f64 = 1e-5;

    let mut a = 0.0;
    let mut b = ((neg + 1.0) / (pos + 1.0)).ln();
    let mut fval = objective(decisions, &targets, a, b);
    for _ in 0..max_iter {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&f, &t) in decisions.iter().zip(&targets) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < EPS && g2.abs() < EPS {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(decisions, &targets, na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < MIN_STEP {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(SvmError::NonFinite);
    }
    Ok(PlattCalibrator { a, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn sigmoid_identity() {
        assert_eq!(PlattCalibrator { a: -1.0, b: 0.0 }.probability(0.0), 0.5);
    }

    #[test]
    fn separated_decisions_stay_smoothed() {
        let dec = [10.0, 10.0, -10.0, -10.0];
        let lab = [true, true, false, false];
        let p = fit_platt(&dec, &lab, 100).unwrap();
        assert!(p.a < 0.0);
        let mid = p.probability(0.0);
        assert!(mid > 0.3 && mid < 0.7, "{mid}");
        assert!(p.probability(10.0) < 1.0 && p.probability(-10.0) > 0.0);
    }

    #[test]
    fn matches_smoothed_target_optimum() {
        // with two symmetric points the optimum puts P(+|10) at the target
        let p = fit_platt(&[10.0, -10.0], &[true, false], 1000).unwrap();
        assert!((p.probability(10.0) - 2.0 / 3.0).abs() < 1e-6);
        assert!((p.probability(-10.0) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn uninformative_decisions_give_prior() {
        let mut rng = crate::rng::seeded(2);
        let dec: Vec<f64> = (0..2000).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lab: Vec<bool> = (0..2000).map(|_| rng.gen_bool(0.3)).collect();
        let p = fit_platt(&dec, &lab, 100).unwrap();
        assert!(p.a.abs() < 0.1, "{}", p.a);
        assert!((p.probability(0.0) - 0.3).abs() < 0.05);
    }

    #[test]
    fn monotone_when_slope_negative() {
        let dec = [2.0, 1.0, 0.5, -0.3, -1.0, 0.2];
        let lab = [true, true, false, false, false, true];
        let p = fit_platt(&dec, &lab, 100).unwrap();
        assert!(p.a < 0.0);
        let xs: Vec<f64> = (-50..=50).map(|i| i as f64 / 10.0).collect();
        assert!(xs
            .windows(2)
            .all(|w| p.probability(w[0]) < p.probability(w[1])));
    }

    #[test]
    fn degenerate_labels() {
        assert!(matches!(
            fit_platt(&[1.0], &[true], 10),
            Err(SvmError::DegenerateLabels)
        ));
    }
}
