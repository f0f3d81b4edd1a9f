//! Learned heads on top of precomputed image features.
//!
//! For one image with feature `x` (dim `d`) and detector scores `a` (dim `m`):
//!
//! ```text
//! z   = A x + c                         per-attribute affine branches
//! ã   = sigmoid(z)                      attribute probabilities
//! u_0 = a
//! u_t = u_{t-1} * sigmoid(g_t + relu(Wa_t u_{t-1} + Wp_t z + b_t))   t = 1..T
//! v   = u_T                             re-weighted attribute scores
//! y   = S [x; v] + e                    scene logits over K categories
//! ```
//!
//! The re-weighting cascade reads the attribute *logits* `z`; the attribute
//! loss reads the probabilities. In [`Architecture::Baseline`] the cascade is
//! skipped and `v` is identically zero, so the scene head sees only `x`.

mod backward;
pub mod checkpoint;
mod loss;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matvec, relu, sigmoid, DenseMatrix, DenseVector};

pub use backward::{masr_backward, TrainMode};
pub use loss::{
    attribute_loss, compute_regularizer, masr_loss, BetaTerm, LossBreakdown, LossSettings,
    Objective, RegularizerTable,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Scene head over `[x; v]` with the re-weighting cascade.
    #[default]
    Masr,
    /// Scene head over `x` only.
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub attributes: usize,
    pub categories: usize,
    pub cascade_depth: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.attributes == 0 {
            return Err(Error::Config(
                "feature and attribute dimensions must be positive".into(),
            ));
        }
        if self.categories < 2 {
            return Err(Error::Config(format!(
                "need at least 2 scene categories, got {}",
                self.categories
            )));
        }
        if self.cascade_depth == 0 {
            return Err(Error::Config(
                "re-weighting cascade needs at least one layer".into(),
            ));
        }
        Ok(())
    }
}

/// One attribute re-weighting layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ArlLayer {
    /// `m x m`, applied to the incoming score line.
    pub score_weights: DenseMatrix,
    /// `m x m`, applied to the attribute logits.
    pub prediction_weights: DenseMatrix,
    /// Added inside the gate after the ReLU.
    pub gate_bias: DenseVector,
    /// Added before the ReLU.
    pub bias: DenseVector,
}

/// Intermediate values of one layer, kept for backpropagation.
#[derive(Clone, Debug, PartialEq)]
pub struct ArlTrace {
    pub input: DenseVector,
    pub pre_activation: DenseVector,
    pub gate: DenseVector,
    pub output: DenseVector,
}

impl ArlLayer {
    pub fn zeros(m: usize) -> Self {
        Self {
            score_weights: DenseMatrix::zeros(m, m),
            prediction_weights: DenseMatrix::zeros(m, m),
            gate_bias: DenseVector::zeros(m),
            bias: DenseVector::zeros(m),
        }
    }

    pub fn dim(&self) -> usize {
        self.bias.dim()
    }

    pub fn trace(&self, scores: &[f64], predictions: &[f64]) -> Result<ArlTrace> {
        let m = self.dim();
        if scores.len() != m || predictions.len() != m {
            return Err(Error::shape(
                "arl_forward",
                format!("layer of width {m}"),
                format!(
                    "scores {} / predictions {}",
                    scores.len(),
                    predictions.len()
                ),
            ));
        }
        let mut pre = matvec(&self.score_weights, scores)?;
        let from_pred = matvec(&self.prediction_weights, predictions)?;
        for ((p, q), b) in pre.iter_mut().zip(from_pred.iter()).zip(self.bias.iter()) {
            *p += q + b;
        }
        let mut gate_input = relu(&pre);
        for (g, c) in gate_input.iter_mut().zip(self.gate_bias.iter()) {
            *g += c;
        }
        let gate = sigmoid(&gate_input);
        let output = DenseVector::from_vec_unchecked(
            scores.iter().zip(gate.iter()).map(|(a, g)| a * g).collect(),
        );
        Ok(ArlTrace {
            input: DenseVector::from_vec_unchecked(scores.to_vec()),
            pre_activation: pre,
            gate,
            output,
        })
    }

    /// `v = a * sigmoid(gate_bias + relu(Wa a + Wp p + b))`.
    pub fn forward(&self, scores: &[f64], predictions: &[f64]) -> Result<DenseVector> {
        Ok(self.trace(scores, predictions)?.output)
    }

    /// `dv/da` as an `m x m` matrix (row = output, column = input).
    pub fn input_jacobian(&self, scores: &[f64], predictions: &[f64]) -> Result<DenseMatrix> {
        let t = self.trace(scores, predictions)?;
        let m = self.dim();
        let mut jac = DenseMatrix::zeros(m, m);
        for i in 0..m {
            let g = t.gate[i];
            // d gate_i / d a_k = g(1-g) * [pre_i > 0] * Wa[i][k]
            let slope = if t.pre_activation[i] > 0.0 {
                g * (1.0 - g)
            } else {
                0.0
            };
            for k in 0..m {
                let mut value = scores[i] * slope * self.score_weights.get(i, k);
                if i == k {
                    value += g;
                }
                jac.set(i, k, value);
            }
        }
        Ok(jac)
    }
}

/// Single re-weighting layer.
pub fn arl_forward(scores: &[f64], predictions: &[f64], layer: &ArlLayer) -> Result<DenseVector> {
    layer.forward(scores, predictions)
}

/// Threads the score line through every layer; each layer also sees the
/// same attribute predictions.
pub fn arl_cascade(
    scores: &[f64],
    predictions: &[f64],
    layers: &[ArlLayer],
) -> Result<DenseVector> {
    if layers.is_empty() {
        return Err(Error::Config("re-weighting cascade is empty".into()));
    }
    let mut line = DenseVector::from_vec_unchecked(scores.to_vec());
    for layer in layers {
        line = layer.forward(&line, predictions)?;
    }
    Ok(line)
}

/// All trainable head parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MasrParams {
    pub architecture: Architecture,
    /// `K x (d + m)`; columns `d..` act on the re-weighted scores.
    pub scene_weights: DenseMatrix,
    pub scene_bias: DenseVector,
    /// `m x d`; row `j` is attribute `j`'s private branch.
    pub attribute_weights: DenseMatrix,
    pub attribute_bias: DenseVector,
    pub arl: Vec<ArlLayer>,
}

/// Everything computed on the way to the scene logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub attribute_logits: DenseVector,
    pub attribute_probs: DenseVector,
    pub arl: Vec<ArlTrace>,
    pub reweighted: DenseVector,
    pub logits: DenseVector,
}

impl MasrParams {
    pub fn zeros(dims: ModelDims, architecture: Architecture) -> Self {
        let ModelDims {
            feature_dim: d,
            attributes: m,
            categories: k,
            cascade_depth,
        } = dims;
        Self {
            architecture,
            scene_weights: DenseMatrix::zeros(k, d + m),
            scene_bias: DenseVector::zeros(k),
            attribute_weights: DenseMatrix::zeros(m, d),
            attribute_bias: DenseVector::zeros(m),
            arl: (0..cascade_depth).map(|_| ArlLayer::zeros(m)).collect(),
        }
    }

    /// Uniform in `±1/sqrt(fan_in)` for every parameter of a layer.
    pub fn init<R: Rng + ?Sized>(
        dims: ModelDims,
        architecture: Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        let mut params = Self::zeros(dims, architecture);
        let d = dims.feature_dim as f64;
        let m = dims.attributes as f64;
        let mut fill = |values: &mut [f64], fan_in: f64| {
            let bound = 1.0 / fan_in.sqrt();
            for v in values {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(params.scene_weights.as_mut_slice(), d + m);
        fill(params.scene_bias.as_mut_slice(), d + m);
        fill(params.attribute_weights.as_mut_slice(), d);
        fill(params.attribute_bias.as_mut_slice(), d);
        for layer in &mut params.arl {
            // The pre-activation sums two m-wide products.
            fill(layer.score_weights.as_mut_slice(), 2.0 * m);
            fill(layer.prediction_weights.as_mut_slice(), 2.0 * m);
            fill(layer.bias.as_mut_slice(), 2.0 * m);
            fill(layer.gate_bias.as_mut_slice(), m);
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims(), self.architecture)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            feature_dim: self.attribute_weights.cols(),
            attributes: self.attribute_weights.rows(),
            categories: self.scene_weights.rows(),
            cascade_depth: self.arl.len(),
        }
    }

    /// Named parameter groups in their fixed serialization order.
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("scene.weights".into(), self.scene_weights.as_slice()),
            ("scene.bias".into(), self.scene_bias.as_slice()),
            (
                "attribute.weights".into(),
                self.attribute_weights.as_slice(),
            ),
            ("attribute.bias".into(), self.attribute_bias.as_slice()),
        ];
        for (t, layer) in self.arl.iter().enumerate() {
            out.push((
                format!("arl[{t}].score_weights"),
                layer.score_weights.as_slice(),
            ));
            out.push((
                format!("arl[{t}].prediction_weights"),
                layer.prediction_weights.as_slice(),
            ));
            out.push((format!("arl[{t}].gate_bias"), layer.gate_bias.as_slice()));
            out.push((format!("arl[{t}].bias"), layer.bias.as_slice()));
        }
        out
    }

    pub fn groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.scene_weights.as_mut_slice(),
            self.scene_bias.as_mut_slice(),
            self.attribute_weights.as_mut_slice(),
            self.attribute_bias.as_mut_slice(),
        ];
        for layer in &mut self.arl {
            out.push(layer.score_weights.as_mut_slice());
            out.push(layer.prediction_weights.as_mut_slice());
            out.push(layer.gate_bias.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.groups()
            .into_iter()
            .flat_map(|(_, g)| g.iter().copied())
            .collect()
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::shape("assign_flat", self.num_params(), values.len()));
        }
        let mut rest = values;
        for group in self.groups_mut() {
            let (head, tail) = rest.split_at(group.len());
            group.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// `self += alpha * other`, group by group.
    pub fn add_scaled(&mut self, alpha: f64, other: &MasrParams) {
        for (dst, (_, src)) in self.groups_mut().into_iter().zip(other.groups()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.groups()
            .iter()
            .all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }

    fn check_inputs(&self, feature: &[f64], scores: &[f64]) -> Result<()> {
        let dims = self.dims();
        if feature.len() != dims.feature_dim {
            return Err(Error::shape(
                "forward",
                format!("feature dim {}", dims.feature_dim),
                feature.len(),
            ));
        }
        if scores.len() != dims.attributes {
            return Err(Error::shape(
                "forward",
                format!("attribute dim {}", dims.attributes),
                scores.len(),
            ));
        }
        Ok(())
    }

    /// Attribute logits `z = A x + c`.
    pub fn attribute_logits(&self, feature: &[f64]) -> Result<DenseVector> {
        let mut z = matvec(&self.attribute_weights, feature)?;
        for (zj, cj) in z.iter_mut().zip(self.attribute_bias.iter()) {
            *zj += cj;
        }
        Ok(z)
    }

    /// Scene logits from the feature and, unless in baseline mode, the
    /// re-weighted scores.
    pub fn scene_logits(&self, feature: &[f64], reweighted: Option<&[f64]>) -> Result<DenseVector> {
        let d = self.attribute_weights.cols();
        let k = self.scene_weights.rows();
        if feature.len() != d {
            return Err(Error::shape(
                "scene_forward",
                format!("feature dim {d}"),
                feature.len(),
            ));
        }
        if let Some(v) = reweighted {
            if v.len() + d != self.scene_weights.cols() {
                return Err(Error::shape(
                    "scene_forward",
                    self.scene_weights.shape(),
                    format!("[{d} + {}]", v.len()),
                ));
            }
        }
        let logits = (0..k)
            .map(|r| {
                let row = self.scene_weights.row(r);
                let mut acc: f64 = row[..d].iter().zip(feature).map(|(w, x)| w * x).sum();
                if let Some(v) = reweighted {
                    acc += row[d..].iter().zip(v).map(|(w, x)| w * x).sum::<f64>();
                }
                acc + self.scene_bias[r]
            })
            .collect();
        Ok(DenseVector::from_vec_unchecked(logits))
    }

    pub fn forward(&self, feature: &[f64], scores: &[f64]) -> Result<ForwardTrace> {
        self.check_inputs(feature, scores)?;
        let attribute_logits = self.attribute_logits(feature)?;
        let attribute_probs = sigmoid(&attribute_logits);
        let (arl, reweighted) = match self.architecture {
            Architecture::Masr => {
                if self.arl.is_empty() {
                    return Err(Error::Config("re-weighting cascade is empty".into()));
                }
                let mut traces: Vec<ArlTrace> = Vec::with_capacity(self.arl.len());
                for layer in &self.arl {
                    let input = traces.last().map_or(scores, |t| t.output.as_slice());
                    let t = layer.trace(input, &attribute_logits)?;
                    traces.push(t);
                }
                let v = traces.last().expect("non-empty cascade").output.clone();
                (traces, v)
            }
            Architecture::Baseline => (Vec::new(), DenseVector::zeros(scores.len())),
        };
        let logits = match self.architecture {
            Architecture::Masr => self.scene_logits(feature, Some(&reweighted))?,
            Architecture::Baseline => self.scene_logits(feature, None)?,
        };
        Ok(ForwardTrace {
            attribute_logits,
            attribute_probs,
            arl,
            reweighted,
            logits,
        })
    }
}

/// Attribute probabilities `ã = sigmoid(A x + c)`.
pub fn attribute_forward(feature: &[f64], params: &MasrParams) -> Result<DenseVector> {
    if feature.len() != params.attribute_weights.cols() {
        return Err(Error::shape(
            "attribute_forward",
            params.attribute_weights.shape(),
            format!("feature of {}", feature.len()),
        ));
    }
    Ok(sigmoid(&params.attribute_logits(feature)?))
}

/// Scene logits; `reweighted = None` is the feature-only baseline head.
pub fn scene_forward(
    feature: &[f64],
    reweighted: Option<&[f64]>,
    params: &MasrParams,
) -> Result<DenseVector> {
    params.scene_logits(feature, reweighted)
}
