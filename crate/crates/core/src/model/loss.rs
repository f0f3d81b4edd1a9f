use serde::{Deserialize, Serialize};

use super::MasrParams;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::numerics::{bce, softmax_cross_entropy, DenseMatrix};

/// Which side of the binary cross entropy the class-imbalance weight scales.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaTerm {
    /// Weight the positive (`target = 1`) term.
    #[default]
    Positive,
    /// Weight the negative (`target = 0`) term.
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    pub beta_term: BetaTerm,
    /// Divide the attribute loss by the number of attributes.
    pub mean_over_attributes: bool,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            beta_term: BetaTerm::Positive,
            mean_over_attributes: true,
        }
    }
}

impl LossSettings {
    /// `(positive, negative)` term weights for attribute `j` of a sample of
    /// category `k`.
    pub(crate) fn term_weights(&self, reg: &RegularizerTable, j: usize, k: usize) -> (f64, f64) {
        let beta = reg.get(j, k);
        match self.beta_term {
            BetaTerm::Positive => (beta, 1.0),
            BetaTerm::Negative => (1.0, beta),
        }
    }

    pub(crate) fn normalizer(&self, m: usize) -> f64 {
        if self.mean_over_attributes {
            m as f64
        } else {
            1.0
        }
    }
}

/// Per-attribute, per-category imbalance weights, `m x K`.
///
/// Entry `(j, k)` is the number of training samples of category `k` with
/// attribute `j` positive, divided by the same count summed over all other
/// categories (a zero denominator is replaced by one).
#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerTable {
    beta: DenseMatrix,
}

impl RegularizerTable {
    pub fn uniform(m: usize, k: usize, value: f64) -> Self {
        let mut beta = DenseMatrix::zeros(m, k);
        beta.as_mut_slice().fill(value);
        Self { beta }
    }

    pub fn from_matrix(beta: DenseMatrix) -> Result<Self> {
        if beta.as_slice().iter().any(|&b| b < 0.0) {
            return Err(Error::Contract(
                "regularizer weights must be non-negative".into(),
            ));
        }
        Ok(Self { beta })
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.beta.get(j, k)
    }

    pub fn attributes(&self) -> usize {
        self.beta.rows()
    }

    pub fn categories(&self) -> usize {
        self.beta.cols()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.beta
    }
}

/// Builds the imbalance table from training samples (never test samples).
pub fn compute_regularizer(train: &[Sample], categories: usize) -> Result<RegularizerTable> {
    if categories < 2 {
        return Err(Error::Config(format!(
            "imbalance weights need at least 2 categories, got {categories}"
        )));
    }
    let m = train.first().map_or(0, |s| s.targets.dim());
    let mut counts = DenseMatrix::zeros(m, categories);
    for s in train {
        if s.category >= categories {
            return Err(Error::Index {
                what: "category",
                index: s.category,
                len: categories,
            });
        }
        if s.targets.dim() != m {
            return Err(Error::shape("compute_regularizer", m, s.targets.dim()));
        }
        for (j, &t) in s.targets.iter().enumerate() {
            if t == 1.0 {
                counts.set(j, s.category, counts.get(j, s.category) + 1.0);
            }
        }
    }
    let mut beta = DenseMatrix::zeros(m, categories);
    for j in 0..m {
        let row = counts.row(j);
        let total: f64 = row.iter().sum();
        for k in 0..categories {
            let others = total - row[k];
            let denom = if others == 0.0 { 1.0 } else { others };
            beta.set(j, k, row[k] / denom);
        }
    }
    Ok(RegularizerTable { beta })
}

fn check_binary(targets: &[f64]) -> Result<()> {
    match targets.iter().position(|&t| t != 0.0 && t != 1.0) {
        Some(j) => Err(Error::Contract(format!(
            "attribute target {j} is {} (must be 0 or 1)",
            targets[j]
        ))),
        None => Ok(()),
    }
}

/// Imbalance-weighted multi-label binary cross entropy for one sample.
pub fn attribute_loss(
    probs: &[f64],
    targets: &[f64],
    category: usize,
    reg: &RegularizerTable,
    settings: &LossSettings,
) -> Result<f64> {
    let m = probs.len();
    if targets.len() != m || reg.attributes() != m {
        return Err(Error::shape(
            "attribute_loss",
            format!("{m} probabilities"),
            format!(
                "{} targets / {} regularizer rows",
                targets.len(),
                reg.attributes()
            ),
        ));
    }
    if category >= reg.categories() {
        return Err(Error::Index {
            what: "category",
            index: category,
            len: reg.categories(),
        });
    }
    check_binary(targets)?;
    let total: f64 = probs
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(j, (&p, &t))| {
            let (w_pos, w_neg) = settings.term_weights(reg, j, category);
            if t == 1.0 {
                w_pos * bce(p, true)
            } else {
                w_neg * bce(p, false)
            }
        })
        .sum();
    Ok(total / settings.normalizer(m))
}

/// Loss components for one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// `classification + attribute`.
    pub total: f64,
    pub classification: f64,
    pub attribute: f64,
}

/// The attribute-loss configuration shared by every sample of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub regularizer: RegularizerTable,
    pub settings: LossSettings,
}

impl Objective {
    pub fn new(regularizer: RegularizerTable, settings: LossSettings) -> Self {
        Self {
            regularizer,
            settings,
        }
    }

    /// Computes the regularizer from `train` with default settings.
    pub fn from_training_set(
        train: &[Sample],
        categories: usize,
        settings: LossSettings,
    ) -> Result<Self> {
        Ok(Self::new(compute_regularizer(train, categories)?, settings))
    }
}

/// Scene cross entropy plus attribute loss, reported separately.
pub fn masr_loss(
    sample: &Sample,
    params: &MasrParams,
    objective: &Objective,
) -> Result<LossBreakdown> {
    let trace = params.forward(&sample.feature, &sample.scores)?;
    let classification = softmax_cross_entropy(&trace.logits, sample.category)?;
    let attribute = attribute_loss(
        &trace.attribute_probs,
        &sample.targets,
        sample.category,
        &objective.regularizer,
        &objective.settings,
    )?;
    Ok(LossBreakdown {
        total: classification + attribute,
        classification,
        attribute,
    })
}
