use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::{AttributeAnnotation, AttributeVocabulary, MiningStages};
use crate::error::{Error, Result};

/// Min / mean / max of one attribute's non-zero scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreSummary {
    pub count: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStatistics {
    pub n_images: usize,
    /// Number of non-zero attributes per image -> number of images.
    pub histogram: BTreeMap<usize, usize>,
    pub mean_attributes_per_image: f64,
    /// Indexed by attribute; `None` for attributes that never fire.
    pub per_attribute: Vec<Option<ScoreSummary>>,
}

/// Attribute bookkeeping for one category across the mining stages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryUsage {
    pub category: String,
    pub n_images: usize,
    /// Distinct attributes with any non-zero raw score.
    pub seen: usize,
    /// Seen attributes that vanished under the score threshold.
    pub removed_by_score: usize,
    /// Attributes that survived the score threshold but not the frequency one.
    pub removed_by_frequency: usize,
    /// Attributes still present in the released annotations.
    pub used: usize,
}

/// Histogram, per-attribute score summary and mean attribute count.
pub fn compute_statistics(corpus: &[AttributeAnnotation], m: usize) -> Result<CorpusStatistics> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut histogram = BTreeMap::new();
    let mut total_nonzero = 0usize;
    let mut acc: Vec<Option<(usize, f64, f64, f64)>> = vec![None; m];
    for ann in corpus {
        if ann.scores.dim() != m {
            return Err(Error::shape(
                "compute_statistics",
                format!("m = {m}"),
                format!("image `{}` with {} scores", ann.image_id, ann.scores.dim()),
            ));
        }
        let n = ann.nonzero_count();
        *histogram.entry(n).or_insert(0) += 1;
        total_nonzero += n;
        for (slot, &s) in acc.iter_mut().zip(ann.scores.iter()) {
            if s > 0.0 {
                *slot = Some(match *slot {
                    None => (1, s, s, s),
                    Some((c, sum, lo, hi)) => (c + 1, sum + s, lo.min(s), hi.max(s)),
                });
            }
        }
    }
    let per_attribute = acc
        .into_iter()
        .map(|slot| {
            slot.map(|(count, sum, min, max)| ScoreSummary {
                count,
                min,
                mean: sum / count as f64,
                max,
            })
        })
        .collect();
    Ok(CorpusStatistics {
        n_images: corpus.len(),
        histogram,
        mean_attributes_per_image: total_nonzero as f64 / corpus.len() as f64,
        per_attribute,
    })
}

fn present_by_category(corpus: &[AttributeAnnotation]) -> BTreeMap<&str, (usize, BTreeSet<usize>)> {
    let mut out: BTreeMap<&str, (usize, BTreeSet<usize>)> = BTreeMap::new();
    for ann in corpus {
        let entry = out.entry(ann.category.as_str()).or_default();
        entry.0 += 1;
        entry.1.extend(
            ann.scores
                .iter()
                .enumerate()
                .filter(|(_, &s)| s > 0.0)
                .map(|(j, _)| j),
        );
    }
    out
}

/// Per-category attribute counts at each mining stage.
pub fn category_usage(stages: &MiningStages) -> Vec<CategoryUsage> {
    let raw = present_by_category(&stages.raw);
    let scored = present_by_category(&stages.after_score);
    let released = present_by_category(&stages.released);
    let empty = (0usize, BTreeSet::new());
    raw.iter()
        .map(|(&category, (n_images, seen))| {
            let after_score = &scored.get(category).unwrap_or(&empty).1;
            let used = &released.get(category).unwrap_or(&empty).1;
            CategoryUsage {
                category: category.to_owned(),
                n_images: *n_images,
                seen: seen.len(),
                removed_by_score: seen.difference(after_score).count(),
                removed_by_frequency: after_score.difference(used).count(),
                used: used.len(),
            }
        })
        .collect()
}

/// Everything the `mine` command reports about a run.
#[derive(Clone, Debug, PartialEq)]
pub struct MiningReport {
    pub raw: CorpusStatistics,
    pub released: CorpusStatistics,
    pub categories: Vec<CategoryUsage>,
}

impl MiningReport {
    pub fn new(stages: &MiningStages, m: usize) -> Result<Self> {
        Ok(Self {
            raw: compute_statistics(&stages.raw, m)?,
            released: compute_statistics(&stages.released, m)?,
            categories: category_usage(stages),
        })
    }

    /// Tab-separated category table: category, images, #att, #score, #freq, #used.
    pub fn category_table_tsv(&self) -> String {
        let mut out =
            String::from("category\timages\tattributes\tremoved_score\tremoved_frequency\tused\n");
        for c in &self.categories {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                c.category, c.n_images, c.seen, c.removed_by_score, c.removed_by_frequency, c.used
            );
        }
        out
    }

    /// Tab-separated per-attribute raw score summary.
    pub fn attribute_table_tsv(&self, vocab: &AttributeVocabulary) -> String {
        render_attribute_tsv(&self.raw, &self.released, vocab)
    }

    pub fn render(&self, vocab: &AttributeVocabulary) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "images: {}", self.raw.n_images);
        let _ = writeln!(out, "attributes: {}", vocab.len());
        let _ = writeln!(
            out,
            "mean attributes per image: raw {:.3}, released {:.3}",
            self.raw.mean_attributes_per_image, self.released.mean_attributes_per_image
        );
        out.push('\n');
        out.push_str(&render_histogram("raw", &self.raw));
        out.push_str(&render_histogram("released", &self.released));
        out.push('\n');
        let width = self
            .categories
            .iter()
            .map(|c| c.category.len())
            .max()
            .unwrap_or(0)
            .max("category".len());
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>5}  {:>6}  {:>6}  {:>5}",
            "category", "images", "#att", "#score", "#freq", "#used"
        );
        for c in &self.categories {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>5}  {:>6}  {:>6}  {:>5}",
                c.category, c.n_images, c.seen, c.removed_by_score, c.removed_by_frequency, c.used
            );
        }
        out.push('\n');
        out.push_str(&render_attribute_table(&self.raw, vocab));
        out
    }
}

pub(crate) fn render_histogram(name: &str, stats: &CorpusStatistics) -> String {
    let mut out = format!("attributes per image ({name}):\n");
    for (k, n) in &stats.histogram {
        let _ = writeln!(out, "  {k:>3}: {n}");
    }
    out
}

pub(crate) fn render_attribute_table(
    stats: &CorpusStatistics,
    vocab: &AttributeVocabulary,
) -> String {
    let width = vocab
        .attributes()
        .iter()
        .map(|a| a.label.len())
        .max()
        .unwrap_or(0)
        .max("attribute".len());
    let mut out = format!(
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}\n",
        "attribute", "count", "min", "mean", "max"
    );
    for (j, summary) in stats.per_attribute.iter().enumerate() {
        match summary {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>6}  {:>6.3}  {:>6.3}  {:>6.3}",
                    vocab.label(j),
                    s.count,
                    s.min,
                    s.mean,
                    s.max
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}",
                    vocab.label(j),
                    0,
                    "-",
                    "-",
                    "-"
                );
            }
        }
    }
    out
}

fn render_attribute_tsv(
    raw: &CorpusStatistics,
    released: &CorpusStatistics,
    vocab: &AttributeVocabulary,
) -> String {
    let mut out =
        String::from("index\tattribute\traw_count\traw_min\traw_mean\traw_max\treleased_count\n");
    for j in 0..vocab.len() {
        let released_count = released.per_attribute[j].map_or(0, |s| s.count);
        match raw.per_attribute[j] {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "{j}\t{}\t{}\t{}\t{}\t{}\t{released_count}",
                    vocab.label(j),
                    s.count,
                    s.min,
                    s.mean,
                    s.max
                );
            }
            None => {
                let _ = writeln!(out, "{j}\t{}\t0\t\t\t\t{released_count}", vocab.label(j));
            }
        }
    }
    out
}
