use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::SplitFractions;
use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Stratified three-way split. Per family, `round(n·test)` files go to
/// test and `round((n − test)·validation)` of the rest to validation. Each
/// list is sorted, so the result ignores input order.
pub fn split_dataset(
    items: &[(String, String)],
    fractions: SplitFractions,
    seed: u64,
) -> Result<Split, PipelineError> {
    let mut by_family: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (id, family) in items {
        if !seen.insert(id.as_str()) {
            return Err(PipelineError::Config(format!("duplicate file id `{id}`")));
        }
        by_family.entry(family).or_default().push(id);
    }
    let mut split = Split {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (family, mut ids) in by_family {
        let n = ids.len();
        if n < 3 {
            return Err(PipelineError::FamilyTooSmall(family.to_string()));
        }
        ids.sort_unstable();
        ids.shuffle(&mut crate::rng::substream(seed, &format!("split/{family}")));
        let n_test = ((n as f64 * fractions.test).round() as usize).min(n - 1);
        let n_val =
            (((n - n_test) as f64 * fractions.validation).round() as usize).min(n - n_test - 1);
        split
            .test
            .extend(ids[..n_test].iter().map(|s| s.to_string()));
        split
            .validation
            .extend(ids[n_test..n_test + n_val].iter().map(|s| s.to_string()));
        split
            .train
            .extend(ids[n_test + n_val..].iter().map(|s| s.to_string()));
    }
    split.train.sort();
    split.validation.sort();
    split.test.sort();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    fn items(counts: &[(&str, usize)]) -> Vec<(String, String)> {
        counts
            .iter()
            .flat_map(|&(f, n)| (0..n).map(move |i| (format!("{f}-{i:04}"), f.to_string())))
            .collect()
    }

    #[test]
    fn hundred_files_one_family() {
        let s = split_dataset(&items(&[("x", 100)]), SplitFractions::default(), 1).unwrap();
        assert_eq!(
            (s.test.len(), s.validation.len(), s.train.len()),
            (10, 9, 81)
        );
    }

    #[test]
    fn input_order_is_irrelevant() {
        let mut it = items(&[("a", 20), ("b", 33)]);
        let s1 = split_dataset(&it, SplitFractions::default(), 9).unwrap();
        it.shuffle(&mut crate::rng::seeded(3));
        assert_eq!(
            split_dataset(&it, SplitFractions::default(), 9).unwrap(),
            s1
        );
    }

    #[test]
    fn disjoint_and_exhaustive() {
        let it = items(&[("a", 17), ("b", 5), ("c", 3)]);
        let s = split_dataset(&it, SplitFractions::default(), 2).unwrap();
        let mut all: Vec<&String> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
        all.sort();
        let mut expected: Vec<&String> = it.iter().map(|(i, _)| i).collect();
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn nine_family_proportions_stratify() {
        let fams = [
            ("Ramnit", 126),
            ("Lollipop", 231),
            ("Kelihos_ver3", 293),
            ("Vundo", 34),
            ("Simda", 3),
            ("Tracur", 66),
            ("Kelihos_ver1", 38),
            ("Obfuscator.ACY", 116),
            ("Gatak", 95),
        ];
        let it = items(&fams);
        let s = split_dataset(&it, SplitFractions::default(), 4).unwrap();
        for (f, n) in fams {
            let t = s
                .test
                .iter()
                .filter(|id| id.starts_with(&format!("{f}-")))
                .count() as f64;
            assert!((t - n as f64 * 0.1).abs() <= 1.0, "{f}: {t}");
        }
    }

    #[test]
    fn small_family_is_named() {
        let r = split_dataset(
            &items(&[("a", 10), ("tiny", 2)]),
            SplitFractions::default(),
            0,
        );
        assert!(matches!(r, Err(PipelineError::FamilyTooSmall(f)) if f == "tiny"));
    }
}
