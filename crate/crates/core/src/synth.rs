//! Seeded synthetic corpora in the same file formats the miner consumes.
//!
//! Each category owns a signature: a set of attributes that each appear in an
//! image of that category with `signature_prob`; every other attribute
//! appears with `background_prob`. Features are a per-category mean scaled by
//! `feature_separation` plus Gaussian noise, so `feature_separation = 0`
//! makes features carry no class information at all.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::annotation::io::{write_detections, MiningConfig};
use crate::annotation::{CollisionPolicy, Detection, DetectionRecord, DetectorSource};
use crate::dataset::{write_features, Dataset, FeatureRow};
use crate::error::{Error, Result};

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const SOURCES_FILE: &str = "sources.toml";
pub const TRAIN_FEATURES_FILE: &str = "features_train.tsv";
pub const TEST_FEATURES_FILE: &str = "features_test.tsv";
pub const PLANTED_FILE: &str = "planted.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub categories: usize,
    pub attributes: usize,
    pub feature_dim: usize,
    pub train_per_category: usize,
    pub test_per_category: usize,
    pub feature_noise: f64,
    pub feature_separation: f64,
    pub signature_size: usize,
    pub signature_prob: f64,
    pub background_prob: f64,
    /// Optional `categories x attributes` presence probabilities; replaces
    /// the signature/background pair when given.
    pub attribute_probs: Option<Vec<Vec<f64>>>,
    /// Score range of a present attribute.
    pub present_score: (f64, f64),
    /// Probability that an absent attribute still gets a detection.
    pub spurious_prob: f64,
    pub spurious_score: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            categories: 5,
            attributes: 12,
            feature_dim: 16,
            train_per_category: 60,
            test_per_category: 40,
            feature_noise: 1.0,
            feature_separation: 0.0,
            signature_size: 3,
            signature_prob: 0.9,
            background_prob: 0.1,
            attribute_probs: None,
            present_score: (0.85, 1.0),
            spurious_prob: 0.3,
            spurious_score: (0.1, 0.8),
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} must be a range within [0, 1], got ({lo}, {hi})"
        )))
    }
}

impl SynthSpec {
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

    pub fn validate(&self) -> Result<()> {
        if self.categories < 2 {
            return Err(Error::Config(format!(
                "a corpus needs at least 2 categories, got {}",
                self.categories
            )));
        }
        if self.attributes == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "attributes and feature_dim must be positive".into(),
            ));
        }
        if self.train_per_category == 0 {
            return Err(Error::Config("train_per_category must be positive".into()));
        }
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0) {
            return Err(Error::Config(
                "feature_noise must be finite and non-negative".into(),
            ));
        }
        if !(self.feature_separation.is_finite() && self.feature_separation >= 0.0) {
            return Err(Error::Config(
                "feature_separation must be finite and non-negative".into(),
            ));
        }
        check_prob("spurious_prob", self.spurious_prob)?;
        check_range("present_score", self.present_score)?;
        check_range("spurious_score", self.spurious_score)?;
        match &self.attribute_probs {
            Some(table) => {
                if table.len() != self.categories
                    || table.iter().any(|r| r.len() != self.attributes)
                {
                    return Err(Error::Config(format!(
                        "attribute_probs must be {} rows of {} values",
                        self.categories, self.attributes
                    )));
                }
                for p in table.iter().flatten() {
                    check_prob("attribute_probs entry", *p)?;
                }
            }
            None => {
                check_prob("signature_prob", self.signature_prob)?;
                check_prob("background_prob", self.background_prob)?;
                if self.signature_size == 0 || self.signature_size > self.attributes {
                    return Err(Error::Config(format!(
                        "signature_size must lie in 1..={}, got {}",
                        self.attributes, self.signature_size
                    )));
                }
                if binomial_at_least(self.attributes, self.signature_size, self.categories) {
                    return Ok(());
                }
                return Err(Error::Config(format!(
                    "{} attributes cannot form {} distinct signatures of size {}",
                    self.attributes, self.categories, self.signature_size
                )));
            }
        }
        Ok(())
    }
}

/// Whether `n choose k >= target`, without overflow.
fn binomial_at_least(n: usize, k: usize, target: usize) -> bool {
    let mut c: u128 = 1;
    for i in 0..k as u128 {
        c = c * (n as u128 - i) / (i + 1);
        if c >= target as u128 {
            return true;
        }
    }
    c >= target as u128
}

/// Ground truth recorded next to a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub seed: u64,
    pub categories: Vec<String>,
    pub attribute_labels: Vec<String>,
    /// Signature attribute indices per category (empty when explicit
    /// probabilities were supplied).
    pub signatures: Vec<Vec<usize>>,
    /// Presence probability per category and attribute.
    pub attribute_probs: Vec<Vec<f64>>,
    pub class_means: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<DetectionRecord>,
    pub mining: MiningConfig,
    pub train: Vec<FeatureRow>,
    pub test: Vec<FeatureRow>,
    pub planted: Planted,
}

pub fn category_name(k: usize) -> String {
    format!("scene{k:02}")
}

fn labelled_sources(m: usize) -> (Vec<DetectorSource>, Vec<String>) {
    let stuff = m.div_ceil(2);
    let labels: Vec<String> = (0..m)
        .map(|j| {
            if j < stuff {
                format!("stuff{j:02}")
            } else {
                format!("thing{:02}", j - stuff)
            }
        })
        .collect();
    let mut sources = vec![DetectorSource::new("stuff", labels[..stuff].to_vec())];
    if stuff < m {
        sources.push(DetectorSource::new("things", labels[stuff..].to_vec()));
    }
    (sources, labels)
}

fn draw_signatures(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    let mut seen = BTreeSet::new();
    let mut signatures = Vec::with_capacity(spec.categories);
    let mut attempts = 0usize;
    while signatures.len() < spec.categories {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Config(
                "could not draw distinct attribute signatures".into(),
            ));
        }
        let mut pool: Vec<usize> = (0..spec.attributes).collect();
        let (chosen, _) =
            rand::seq::SliceRandom::partial_shuffle(&mut pool[..], rng, spec.signature_size);
        let mut sig = chosen.to_vec();
        sig.sort_unstable();
        if seen.insert(sig.clone()) {
            signatures.push(sig);
        }
    }
    Ok(signatures)
}

fn uniform_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Generates a corpus; identical `(spec, seed)` give identical output.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, m, d) = (spec.categories, spec.attributes, spec.feature_dim);

    let (signatures, probs) = match &spec.attribute_probs {
        Some(table) => (Vec::new(), table.clone()),
        None => {
            let signatures = draw_signatures(spec, &mut rng)?;
            let probs = signatures
                .iter()
                .map(|sig| {
                    (0..m)
                        .map(|j| {
                            if sig.binary_search(&j).is_ok() {
                                spec.signature_prob
                            } else {
                                spec.background_prob
                            }
                        })
                        .collect()
                })
                .collect();
            (signatures, probs)
        }
    };
    let class_means: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    spec.feature_separation * z
                })
                .collect::<Vec<f64>>()
        })
        .collect();

    let (sources, labels) = labelled_sources(m);
    let categories: Vec<String> = (0..k).map(category_name).collect();
    let mut records = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut next_id = 0usize;
    for (split, per_category) in [(0, spec.train_per_category), (1, spec.test_per_category)] {
        for (c, category) in categories.iter().enumerate() {
            for _ in 0..per_category {
                let image_id = format!("img{next_id:06}");
                next_id += 1;
                let values: Vec<f64> = class_means[c]
                    .iter()
                    .map(|&mu| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        mu + spec.feature_noise * z
                    })
                    .collect();
                let mut detections: Vec<Vec<Detection>> = vec![Vec::new(); sources.len()];
                for j in 0..m {
                    let score = if rng.random_bool(probs[c][j]) {
                        Some(uniform_in(&mut rng, spec.present_score))
                    } else if rng.random_bool(spec.spurious_prob) {
                        Some(uniform_in(&mut rng, spec.spurious_score))
                    } else {
                        None
                    };
                    if let Some(score) = score {
                        let src = usize::from(j >= sources[0].labels.len());
                        detections[src].push(Detection {
                            label: labels[j].clone(),
                            score,
                        });
                    }
                }
                for (source, dets) in sources.iter().zip(detections) {
                    records.push(DetectionRecord {
                        image_id: image_id.clone(),
                        category: Some(category.clone()),
                        source_id: source.source_id.clone(),
                        detections: dets,
                    });
                }
                let row = FeatureRow {
                    image_id,
                    category: category.clone(),
                    values,
                };
                if split == 0 {
                    train.push(row);
                } else {
                    test.push(row);
                }
            }
        }
    }

    Ok(SynthCorpus {
        records,
        mining: MiningConfig {
            collision_policy: CollisionPolicy::Error,
            sources,
            ..MiningConfig::default()
        },
        train,
        test,
        planted: Planted {
            seed,
            categories,
            attribute_labels: labels,
            signatures,
            attribute_probs: probs,
            class_means,
        },
    })
}

impl SynthCorpus {
    /// Mines the detections with the corpus's own mining config and joins
    /// the result with the train and test features.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let (vocab, outcome) = self.mining.run(&self.records)?;
        let xi = self.mining.threshold()?;
        let train = Dataset::assemble(&self.train, outcome.released(), &vocab, xi)?;
        let test = Dataset::assemble(&self.test, outcome.released(), &vocab, xi)?;
        Ok((train, test))
    }

    /// Writes every corpus file into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_detections(&dir.join(DETECTIONS_FILE), &self.records)?;
        let sources = dir.join(SOURCES_FILE);
        fs::write(&sources, self.mining.to_toml_string()).map_err(|e| Error::io(&sources, e))?;
        write_features(&dir.join(TRAIN_FEATURES_FILE), &self.train)?;
        write_features(&dir.join(TEST_FEATURES_FILE), &self.test)?;
        let planted = dir.join(PLANTED_FILE);
        let json =
            serde_json::to_string_pretty(&self.planted).expect("planted structure serializes");
        fs::write(&planted, json + "\n").map_err(|e| Error::io(&planted, e))
    }
}
