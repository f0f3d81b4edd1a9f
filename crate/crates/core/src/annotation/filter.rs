use log::warn;

use super::{AttributeAnnotation, ScoreThreshold};
use crate::error::{Error, Result};
use crate::numerics::DenseVector;

/// Zeroes every score that does not strictly exceed `xi`.
pub fn filter_by_score(scores: &[f64], xi: ScoreThreshold) -> DenseVector {
    DenseVector::from_vec_unchecked(
        scores
            .iter()
            .map(|&s| if xi.passes(s) { s } else { 0.0 })
            .collect(),
    )
}

/// `1` where the score strictly exceeds `xi`, `0` elsewhere.
pub fn binarize(scores: &[f64], xi: ScoreThreshold) -> DenseVector {
    DenseVector::from_vec_unchecked(
        scores
            .iter()
            .map(|&s| if xi.passes(s) { 1.0 } else { 0.0 })
            .collect(),
    )
}

/// Per-category attribute counts and score ranges, and which attributes
/// survived the frequency threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryAttributeProfile {
    pub category: String,
    pub n_images: usize,
    /// Images of the category in which attribute `j` is non-zero.
    pub count_nonzero: Vec<usize>,
    /// `(min, mean, max)` over the non-zero scores; `None` when never seen.
    pub score_range: Vec<Option<(f64, f64, f64)>>,
    pub retained: Vec<bool>,
}

impl CategoryAttributeProfile {
    pub fn retained_indices(&self) -> Vec<usize> {
        self.retained
            .iter()
            .enumerate()
            .filter_map(|(j, &r)| r.then_some(j))
            .collect()
    }
}

/// Counts, for one category, the images in which each attribute is non-zero
/// and keeps attributes whose count reaches `beta`. Scores of dropped
/// attributes are zeroed in `annotations`.
///
/// Expects score-filtered annotations that all belong to `category`, in a
/// fixed (image id) order.
pub fn filter_by_frequency(
    category: &str,
    annotations: &mut [AttributeAnnotation],
    m: usize,
    beta: usize,
) -> Result<CategoryAttributeProfile> {
    if annotations.is_empty() {
        warn!("category `{category}` has no images; all attribute counts are zero");
    }
    let mut count_nonzero = vec![0usize; m];
    let mut sums = vec![0.0f64; m];
    let mut mins = vec![f64::INFINITY; m];
    let mut maxs = vec![f64::NEG_INFINITY; m];
    for ann in annotations.iter() {
        if ann.category != category {
            return Err(Error::Contract(format!(
                "image `{}` of category `{}` passed to the `{category}` frequency filter",
                ann.image_id, ann.category
            )));
        }
        if ann.scores.dim() != m {
            return Err(Error::shape(
                "filter_by_frequency",
                format!("m = {m}"),
                format!("{} scores", ann.scores.dim()),
            ));
        }
        for (j, &s) in ann.scores.iter().enumerate() {
            if s > 0.0 {
                count_nonzero[j] += 1;
                sums[j] += s;
                mins[j] = mins[j].min(s);
                maxs[j] = maxs[j].max(s);
            }
        }
    }
    let retained: Vec<bool> = count_nonzero.iter().map(|&c| c >= beta).collect();
    for ann in annotations.iter_mut() {
        for (s, &keep) in ann.scores.iter_mut().zip(&retained) {
            if !keep {
                *s = 0.0;
            }
        }
    }
    let score_range = (0..m)
        .map(|j| {
            (count_nonzero[j] > 0).then(|| (mins[j], sums[j] / count_nonzero[j] as f64, maxs[j]))
        })
        .collect();
    Ok(CategoryAttributeProfile {
        category: category.to_owned(),
        n_images: annotations.len(),
        count_nonzero,
        score_range,
        retained,
    })
}
