use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::PipelineError;
use crate::asm::{ingest_listing, FunctionRecord};
use crate::callgraph::disambiguate_names;

/// Label file names looked up in a corpus directory, in order.
pub const LABEL_FILES: &[&str] = &["labels.csv", "trainLabels.csv"];

/// Family names of the public nine-class Windows malware corpus, indexed by
/// its numeric class id minus one.
pub const MICROSOFT_FAMILIES: [&str; 9] = [
    "Ramnit",
    "Lollipop",
    "Kelihos_ver3",
    "Vundo",
    "Simda",
    "Tracur",
    "Kelihos_ver1",
    "Obfuscator.ACY",
    "Gatak",
];

/// A labeled corpus directory: `<id>.asm` listings plus a two-column
/// `Id,Class` label file.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub dir: PathBuf,
    /// `(file id, family)` sorted by id.
    pub labels: Vec<(String, String)>,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Self, PipelineError> {
        if !dir.is_dir() {
            return Err(PipelineError::MissingCorpus(dir.to_path_buf()));
        }
        let label_path = LABEL_FILES
            .iter()
            .map(|f| dir.join(f))
            .find(|p| p.is_file())
            .ok_or_else(|| PipelineError::MissingCorpus(dir.join(LABEL_FILES[0])))?;
        let text =
            std::fs::read_to_string(&label_path).map_err(|e| PipelineError::io(&label_path, e))?;
        let numeric_classes = label_path
            .file_name()
            .is_some_and(|n| n == "trainLabels.csv");
        let labels = parse_labels(&text, numeric_classes)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            labels,
        })
    }

    pub fn listing_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.asm"))
    }

    pub fn family_of(&self) -> BTreeMap<&str, &str> {
        self.labels
            .iter()
            .map(|(i, f)| (i.as_str(), f.as_str()))
            .collect()
    }

    pub fn read_listing(&self, id: &str) -> Result<String, PipelineError> {
        read_listing(&self.listing_path(id))
    }
}

/// Listings may carry non-UTF-8 bytes in comments and data; they are
/// replaced rather than rejected.
pub fn read_listing(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

/// Parses `Id,Class` rows. With `numeric_classes`, class ids `1..=9` map to
/// [`MICROSOFT_FAMILIES`].
pub fn parse_labels(
    text: &str,
    numeric_classes: bool,
) -> Result<Vec<(String, String)>, PipelineError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| PipelineError::Config(format!("label file: {e}")))?;
        if row.len() < 2 {
            return Err(PipelineError::Config(format!(
                "label row needs two columns: {row:?}"
            )));
        }
        let id = row[0].to_string();
        let class = &row[1];
        let family = if numeric_classes {
            class
                .parse::<usize>()
                .ok()
                .and_then(|c| c.checked_sub(1))
                .and_then(|c| MICROSOFT_FAMILIES.get(c))
                .ok_or_else(|| {
                    PipelineError::Config(format!("unknown class id `{class}` for {id}"))
                })?
                .to_string()
        } else {
            class.to_string()
        };
        out.push((id, family));
    }
    out.sort();
    Ok(out)
}

pub fn write_labels(labels: &[(String, String)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["Id", "Class"]).expect("in-memory write");
    for (id, fam) in labels {
        w.write_record([id, fam]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Ingests one listing into uniquely named function records. A listing with
/// no internal function is an error for that file.
pub fn ingest_file(id: &str, text: &str) -> Result<Vec<FunctionRecord>, PipelineError> {
    let unparsable = |reason: String| PipelineError::UnparsableFile {
        file: id.to_string(),
        reason,
    };
    let mut ex = ingest_listing(id, text).map_err(|e| unparsable(e.to_string()))?;
    if !ex.functions.iter().any(|f| !f.is_external) {
        return Err(unparsable("no internal functions".into()));
    }
    disambiguate_names(&mut ex.functions);
    Ok(ex.functions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn microsoft_label_layout() {
        let text = "\"Id\",\"Class\"\n\"01kcPWA9K2BOxQeS5Rju\",1\n\"04EjIdbPV5e1XroFOpiN\",9\n";
        let l = parse_labels(text, true).unwrap();
        assert_eq!(l[0], ("01kcPWA9K2BOxQeS5Rju".into(), "Ramnit".into()));
        assert_eq!(l[1].1, "Gatak");
        assert!(parse_labels("Id,Class\nx,10\n", true).is_err());
    }

    #[test]
    fn named_labels_round_trip() {
        let labels = vec![
            ("a".to_string(), "Fam One".to_string()),
            ("b".into(), "x,y".into()),
        ];
        assert_eq!(parse_labels(&write_labels(&labels), false).unwrap(), labels);
    }

    #[test]
    fn missing_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert!(matches!(
            Corpus::open(&missing),
            Err(PipelineError::MissingCorpus(_))
        ));
        assert!(matches!(
            Corpus::open(dir.path()),
            Err(PipelineError::MissingCorpus(_))
        ));
    }

    #[test]
    fn file_without_functions_is_unparsable() {
        let r = ingest_file("f", ".data:00402000 x dd 0\n");
        assert!(matches!(r, Err(PipelineError::UnparsableFile { file, .. }) if file == "f"));
    }
}
