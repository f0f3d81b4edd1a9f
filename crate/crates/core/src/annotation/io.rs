//! On-disk formats for detections, vocabularies and annotations.
//!
//! * detections: JSON lines, one `{image_id, category?, source_id, detections}`
//!   record per line;
//! * vocabulary: `index<TAB>label<TAB>origin`, one attribute per line in order;
//! * annotations: `image_id<TAB>category` followed by `<TAB>index:score` for
//!   each non-zero score in ascending index order.
//!
//! Scores are written with the shortest representation that parses back to
//! the same `f64`, so emit followed by load is bit-exact.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    merge_predictions, mine, Attribute, AttributeAnnotation, AttributeVocabulary, CollisionPolicy,
    DetectionRecord, DetectorSource, MiningOutcome, ScoreThreshold,
};
use crate::error::{Error, Result};
use crate::numerics::DenseVector;

pub const VOCABULARY_FILE: &str = "vocabulary.tsv";
pub const ANNOTATIONS_FILE: &str = "annotations.tsv";

/// Mining configuration, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningConfig {
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_beta")]
    pub beta: usize,
    #[serde(default)]
    pub collision_policy: CollisionPolicy,
    #[serde(default)]
    pub sources: Vec<DetectorSource>,
}

fn default_xi() -> f64 {
    ScoreThreshold::DEFAULT.value()
}

fn default_beta() -> usize {
    20
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            xi: default_xi(),
            beta: default_beta(),
            collision_policy: CollisionPolicy::Error,
            sources: Vec::new(),
        }
    }
}

impl MiningConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("mining config serializes")
    }

    pub fn threshold(&self) -> Result<ScoreThreshold> {
        ScoreThreshold::new(self.xi)
    }

    pub fn validate(&self) -> Result<()> {
        self.threshold()?;
        if self.sources.is_empty() {
            return Err(Error::Config("no detector sources declared".into()));
        }
        AttributeVocabulary::from_sources(&self.sources, self.collision_policy).map(|_| ())
    }

    /// Merge, score filter and frequency filter in one call.
    pub fn run(&self, records: &[DetectionRecord]) -> Result<(AttributeVocabulary, MiningOutcome)> {
        self.validate()?;
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let (vocab, raw) = merge_predictions(records, &self.sources, self.collision_policy)?;
        let outcome = mine(raw, vocab.len(), self.threshold()?, self.beta)?;
        Ok((vocab, outcome))
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn read_detections_from<R: BufRead>(reader: R, origin: &str) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(origin, i + 1, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DetectionRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(origin, i + 1, e))?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    read_detections_from(open(path)?, &path.display().to_string())
}

pub fn write_detections_to<W: Write>(mut w: W, records: &[DetectionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_detections(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    write_detections_to(create(path)?, records).map_err(|e| Error::io(path, e))
}

fn check_field(kind: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.contains(['\t', '\n', '\r']) {
        return Err(Error::Schema(format!(
            "{kind} {value:?} must be non-empty and free of tabs and newlines"
        )));
    }
    Ok(())
}

pub fn write_vocabulary_to<W: Write>(mut w: W, vocab: &AttributeVocabulary) -> Result<()> {
    let mut buf = String::new();
    for (j, attr) in vocab.attributes().iter().enumerate() {
        check_field("label", &attr.label)?;
        check_field("origin", &attr.origin)?;
        buf.push_str(&format!("{j}\t{}\t{}\n", attr.label, attr.origin));
    }
    w.write_all(buf.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(PathBuf::from("<vocabulary>"), e))
}

pub fn read_vocabulary_from<R: BufRead>(reader: R, origin: &str) -> Result<AttributeVocabulary> {
    let mut attributes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(origin, i + 1, e))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                origin,
                i + 1,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(origin, i + 1, format!("bad index `{}`", fields[0])))?;
        if index != attributes.len() {
            return Err(Error::parse(
                origin,
                i + 1,
                format!(
                    "index {index} out of sequence (expected {})",
                    attributes.len()
                ),
            ));
        }
        if fields[1].is_empty() || fields[2].is_empty() {
            return Err(Error::parse(origin, i + 1, "empty label or origin"));
        }
        attributes.push(Attribute {
            label: fields[1].to_owned(),
            origin: fields[2].to_owned(),
        });
    }
    AttributeVocabulary::from_attributes(attributes)
}

fn format_annotation(ann: &AttributeAnnotation) -> Result<String> {
    check_field("image id", &ann.image_id)?;
    check_field("category", &ann.category)?;
    let mut line = format!("{}\t{}", ann.image_id, ann.category);
    for (j, &s) in ann.scores.iter().enumerate() {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Schema(format!(
                "image `{}`: score {s} at index {j} outside [0, 1]",
                ann.image_id
            )));
        }
        if s > 0.0 {
            line.push_str(&format!("\t{j}:{s}"));
        }
    }
    line.push('\n');
    Ok(line)
}

pub fn write_annotations_to<W: Write>(
    mut w: W,
    corpus: &[AttributeAnnotation],
    m: usize,
) -> Result<()> {
    let mut buf = String::new();
    for ann in corpus {
        if ann.scores.dim() != m {
            return Err(Error::Schema(format!(
                "image `{}` has {} scores but the vocabulary has {m}",
                ann.image_id,
                ann.scores.dim()
            )));
        }
        buf.push_str(&format_annotation(ann)?);
    }
    w.write_all(buf.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(PathBuf::from("<annotations>"), e))
}

pub fn read_annotations_from<R: BufRead>(
    reader: R,
    m: usize,
    origin: &str,
) -> Result<Vec<AttributeAnnotation>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(origin, lineno, e))?;
        let mut fields = line.split('\t');
        let image_id = fields.next().unwrap_or_default();
        let category = fields
            .next()
            .ok_or_else(|| Error::parse(origin, lineno, "missing category field"))?;
        if image_id.is_empty() || category.is_empty() {
            return Err(Error::parse(origin, lineno, "empty image id or category"));
        }
        let mut scores = vec![0.0; m];
        let mut last: Option<usize> = None;
        for pair in fields {
            let (idx, score) = pair.split_once(':').ok_or_else(|| {
                Error::parse(
                    origin,
                    lineno,
                    format!("expected index:score, found `{pair}`"),
                )
            })?;
            let idx: usize = idx.parse().map_err(|_| {
                Error::parse(origin, lineno, format!("bad attribute index `{idx}`"))
            })?;
            let score: f64 = score
                .parse()
                .map_err(|_| Error::parse(origin, lineno, format!("bad score `{score}`")))?;
            if idx >= m {
                return Err(Error::Schema(format!(
                    "{origin}:{lineno}: attribute index {idx} unknown (vocabulary has {m})"
                )));
            }
            if !(0.0..=1.0).contains(&score) {
                return Err(Error::Schema(format!(
                    "{origin}:{lineno}: score {score} outside [0, 1]"
                )));
            }
            if last.is_some_and(|prev| idx <= prev) {
                return Err(Error::Schema(format!(
                    "{origin}:{lineno}: attribute indices must be strictly increasing"
                )));
            }
            last = Some(idx);
            scores[idx] = score;
        }
        out.push(AttributeAnnotation {
            image_id: image_id.to_owned(),
            category: category.to_owned(),
            scores: DenseVector::from_vec_unchecked(scores),
        });
    }
    Ok(out)
}

/// Writes `vocabulary.tsv` and `annotations.tsv` into `dir`.
pub fn emit_annotations(
    dir: &Path,
    corpus: &[AttributeAnnotation],
    vocab: &AttributeVocabulary,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab_path = dir.join(VOCABULARY_FILE);
    write_vocabulary_to(create(&vocab_path)?, vocab)?;
    let ann_path = dir.join(ANNOTATIONS_FILE);
    write_annotations_to(create(&ann_path)?, corpus, vocab.len())
}

/// Reads back what [`emit_annotations`] wrote.
pub fn load_annotations(dir: &Path) -> Result<(Vec<AttributeAnnotation>, AttributeVocabulary)> {
    let vocab_path = dir.join(VOCABULARY_FILE);
    let vocab = read_vocabulary_from(open(&vocab_path)?, &vocab_path.display().to_string())?;
    let ann_path = dir.join(ANNOTATIONS_FILE);
    let corpus = read_annotations_from(
        open(&ann_path)?,
        vocab.len(),
        &ann_path.display().to_string(),
    )?;
    Ok((corpus, vocab))
}
