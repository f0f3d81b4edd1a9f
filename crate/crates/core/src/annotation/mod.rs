//! Attribute mining from object-detector outputs.
//!
//! Detector predictions from any number of sources are merged into one score
//! vector per image over a fixed attribute vocabulary, then thinned by a score
//! threshold (strict `>`) and a per-category frequency threshold (inclusive
//! `>=`), in that order. Zero means "not detected" everywhere.

mod filter;
pub mod io;
mod stats;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseVector;

pub use filter::{binarize, filter_by_frequency, filter_by_score, CategoryAttributeProfile};
pub use stats::{
    category_usage, compute_statistics, CategoryUsage, CorpusStatistics, MiningReport, ScoreSummary,
};

/// One detector's label set, e.g. COCO "things" or COCO-panoptic "stuff".
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorSource {
    #[serde(rename = "id")]
    pub source_id: String,
    pub labels: Vec<String>,
}

impl DetectorSource {
    pub fn new(
        source_id: impl Into<String>,
        labels: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        Self {
            source_id: source_id.into(),
            labels: labels.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub score: f64,
}

/// All detections one source produced for one image.
///
/// `category` carries the image's scene label; at least one record per image
/// must supply it and all records that do must agree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub source_id: String,
    pub detections: Vec<Detection>,
}

/// What to do when the same label is declared by more than one source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollisionPolicy {
    #[default]
    Error,
    Max,
}

impl FromStr for CollisionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(Self::Error),
            "max" => Ok(Self::Max),
            other => Err(Error::Config(format!(
                "unknown collision policy `{other}` (expected `error` or `max`)"
            ))),
        }
    }
}

impl fmt::Display for CollisionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Error => "error",
            Self::Max => "max",
        })
    }
}

/// Detection score threshold in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct ScoreThreshold(f64);

impl ScoreThreshold {
    pub const DEFAULT: ScoreThreshold = ScoreThreshold(0.8);

    pub fn new(xi: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&xi) {
            return Err(Error::Config(format!(
                "score threshold xi must lie in [0, 1), got {xi}"
            )));
        }
        Ok(Self(xi))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// True when `score` survives the threshold.
    pub fn passes(self, score: f64) -> bool {
        score > self.0
    }
}

impl Default for ScoreThreshold {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attribute {
    pub label: String,
    pub origin: String,
}

/// Ordered attribute universe. Index `j` of every score vector refers to
/// `attributes()[j]`.
#[derive(Clone, Debug, Default)]
pub struct AttributeVocabulary {
    attributes: Vec<Attribute>,
    index: HashMap<String, usize>,
}

impl PartialEq for AttributeVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.attributes == other.attributes
    }
}

impl AttributeVocabulary {
    /// Builds a vocabulary from attributes in order; labels must be unique.
    pub fn from_attributes(attributes: Vec<Attribute>) -> Result<Self> {
        let mut index = HashMap::with_capacity(attributes.len());
        for (j, attr) in attributes.iter().enumerate() {
            if let Some(prev) = index.insert(attr.label.clone(), j) {
                return Err(Error::Schema(format!(
                    "attribute `{}` appears at indices {prev} and {j}",
                    attr.label
                )));
            }
        }
        Ok(Self { attributes, index })
    }

    /// Concatenates source label sets in declaration order.
    ///
    /// Under [`CollisionPolicy::Max`] a label shared by several sources keeps
    /// the slot (and origin) of its first declaration.
    pub fn from_sources(sources: &[DetectorSource], policy: CollisionPolicy) -> Result<Self> {
        let mut attributes: Vec<Attribute> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut source_ids = std::collections::HashSet::new();
        for source in sources {
            if !source_ids.insert(source.source_id.as_str()) {
                return Err(Error::Config(format!(
                    "source `{}` declared twice",
                    source.source_id
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for label in &source.labels {
                if !seen.insert(label.as_str()) {
                    return Err(Error::Config(format!(
                        "label `{label}` repeated within source `{}`",
                        source.source_id
                    )));
                }
                match index.get(label) {
                    Some(&j) => {
                        if policy == CollisionPolicy::Error {
                            return Err(Error::Collision {
                                label: label.clone(),
                                first: attributes[j].origin.clone(),
                                second: source.source_id.clone(),
                            });
                        }
                    }
                    None => {
                        index.insert(label.clone(), attributes.len());
                        attributes.push(Attribute {
                            label: label.clone(),
                            origin: source.source_id.clone(),
                        });
                    }
                }
            }
        }
        Ok(Self { attributes, index })
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn label(&self, j: usize) -> &str {
        &self.attributes[j].label
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }
}

/// Per-image attribute scores over the vocabulary, with the image's scene
/// category.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeAnnotation {
    pub image_id: String,
    pub category: String,
    pub scores: DenseVector,
}

impl AttributeAnnotation {
    pub fn nonzero_count(&self) -> usize {
        self.scores.iter().filter(|&&s| s > 0.0).count()
    }
}

/// Unions the per-source predictions of every image into one raw score
/// vector per image. The result is sorted by `image_id`; scores are never
/// renormalized.
pub fn merge_predictions(
    records: &[DetectionRecord],
    sources: &[DetectorSource],
    policy: CollisionPolicy,
) -> Result<(AttributeVocabulary, Vec<AttributeAnnotation>)> {
    let vocabulary = AttributeVocabulary::from_sources(sources, policy)?;
    let source_labels: HashMap<&str, std::collections::HashSet<&str>> = sources
        .iter()
        .map(|s| {
            (
                s.source_id.as_str(),
                s.labels.iter().map(String::as_str).collect(),
            )
        })
        .collect();

    struct Pending {
        category: Option<String>,
        scores: Vec<f64>,
    }
    let mut images: BTreeMap<&str, Pending> = BTreeMap::new();

    for record in records {
        let labels = source_labels
            .get(record.source_id.as_str())
            .ok_or_else(|| {
                Error::Ingestion(format!(
                    "image `{}` references undeclared source `{}`",
                    record.image_id, record.source_id
                ))
            })?;
        let entry = images
            .entry(record.image_id.as_str())
            .or_insert_with(|| Pending {
                category: None,
                scores: vec![0.0; vocabulary.len()],
            });
        if let Some(cat) = &record.category {
            match &entry.category {
                Some(existing) if existing != cat => {
                    return Err(Error::Ingestion(format!(
                        "image `{}` labelled both `{existing}` and `{cat}`",
                        record.image_id
                    )));
                }
                Some(_) => {}
                None => entry.category = Some(cat.clone()),
            }
        }
        for det in &record.detections {
            if !labels.contains(det.label.as_str()) {
                return Err(Error::Ingestion(format!(
                    "image `{}`: label `{}` is not in source `{}`",
                    record.image_id, det.label, record.source_id
                )));
            }
            if !(0.0..=1.0).contains(&det.score) {
                return Err(Error::Ingestion(format!(
                    "image `{}`: score {} for `{}` outside [0, 1]",
                    record.image_id, det.score, det.label
                )));
            }
            // Only reachable for declared labels, so the lookup cannot miss.
            let j = vocabulary.index_of(&det.label).expect("declared label");
            // Duplicate detections, or the same label from several sources
            // under the max policy, collapse to the highest score.
            entry.scores[j] = entry.scores[j].max(det.score);
        }
    }

    let corpus = images
        .into_iter()
        .map(|(image_id, pending)| {
            let category = pending.category.ok_or_else(|| {
                Error::Ingestion(format!("image `{image_id}` has no scene category"))
            })?;
            Ok(AttributeAnnotation {
                image_id: image_id.to_owned(),
                category,
                scores: DenseVector::from_vec_unchecked(pending.scores),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((vocabulary, corpus))
}

/// Snapshots of the corpus after each mining stage.
#[derive(Clone, Debug)]
pub struct MiningStages {
    pub raw: Vec<AttributeAnnotation>,
    pub after_score: Vec<AttributeAnnotation>,
    pub released: Vec<AttributeAnnotation>,
}

#[derive(Clone, Debug)]
pub struct MiningOutcome {
    pub stages: MiningStages,
    pub profiles: BTreeMap<String, CategoryAttributeProfile>,
}

impl MiningOutcome {
    pub fn released(&self) -> &[AttributeAnnotation] {
        &self.stages.released
    }
}

/// Applies the score filter to every image and then the frequency filter to
/// every category. Output order follows `image_id`.
pub fn mine(
    raw: Vec<AttributeAnnotation>,
    m: usize,
    xi: ScoreThreshold,
    beta: usize,
) -> Result<MiningOutcome> {
    if raw.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut raw = raw;
    raw.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    let after_score = raw
        .iter()
        .map(|ann| {
            if ann.scores.dim() != m {
                return Err(Error::shape(
                    "mine",
                    format!("m = {m}"),
                    format!("image `{}` with {} scores", ann.image_id, ann.scores.dim()),
                ));
            }
            Ok(AttributeAnnotation {
                scores: filter_by_score(&ann.scores, xi),
                ..ann.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut by_category: BTreeMap<String, Vec<AttributeAnnotation>> = BTreeMap::new();
    for ann in &after_score {
        by_category
            .entry(ann.category.clone())
            .or_default()
            .push(ann.clone());
    }

    let mut profiles = BTreeMap::new();
    let mut released = Vec::with_capacity(after_score.len());
    for (category, mut members) in by_category {
        let profile = filter_by_frequency(&category, &mut members, m, beta)?;
        profiles.insert(category, profile);
        released.extend(members);
    }
    released.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    Ok(MiningOutcome {
        stages: MiningStages {
            raw,
            after_score,
            released,
        },
        profiles,
    })
}
