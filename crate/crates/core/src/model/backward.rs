use super::{Architecture, LossBreakdown, MasrParams, Objective};
use crate::dataset::Sample;
use crate::error::Result;
use crate::numerics::{matvec_transposed, softmax, softmax_cross_entropy, PROB_EPSILON};

use super::attribute_loss;

/// Which objective a gradient step optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Classification loss only; only the scene head moves.
    SceneOnly,
    /// Classification plus attribute loss; every head moves.
    Joint,
}

/// Gradient of the mode's objective with respect to every parameter, and
/// the loss components at `params`.
///
/// In [`TrainMode::SceneOnly`] every non-scene gradient is exactly zero.
pub fn masr_backward(
    sample: &Sample,
    params: &MasrParams,
    objective: &Objective,
    mode: TrainMode,
) -> Result<(MasrParams, LossBreakdown)> {
    let trace = params.forward(&sample.feature, &sample.scores)?;
    let classification = softmax_cross_entropy(&trace.logits, sample.category)?;
    let attribute = attribute_loss(
        &trace.attribute_probs,
        &sample.targets,
        sample.category,
        &objective.regularizer,
        &objective.settings,
    )?;
    let losses = LossBreakdown {
        total: classification + attribute,
        classification,
        attribute,
    };

    let dims = params.dims();
    let d = dims.feature_dim;
    let m = dims.attributes;
    let mut grad = params.zeros_like();

    // Scene head: d logits = softmax - onehot.
    let mut d_logits = softmax(&trace.logits);
    d_logits[sample.category] -= 1.0;
    let uses_reweighted = params.architecture == Architecture::Masr;
    for (r, &g) in d_logits.iter().enumerate() {
        let row = grad.scene_weights.row_mut(r);
        for (w, &x) in row[..d].iter_mut().zip(sample.feature.iter()) {
            *w = g * x;
        }
        if uses_reweighted {
            for (w, &v) in row[d..].iter_mut().zip(trace.reweighted.iter()) {
                *w = g * v;
            }
        }
        grad.scene_bias[r] = g;
    }

    if mode == TrainMode::SceneOnly {
        return Ok((grad, losses));
    }

    // Gradient with respect to the attribute logits, accumulated from the
    // attribute loss and from every cascade layer that reads them.
    let mut d_logits_attr = vec![0.0; m];
    let settings = &objective.settings;
    let norm = settings.normalizer(m);
    for j in 0..m {
        let p = trace.attribute_probs[j];
        if !(PROB_EPSILON..=1.0 - PROB_EPSILON).contains(&p) {
            // Clamped inside the log: flat.
            continue;
        }
        let (w_pos, w_neg) = settings.term_weights(&objective.regularizer, j, sample.category);
        d_logits_attr[j] = if sample.targets[j] == 1.0 {
            -w_pos * (1.0 - p)
        } else {
            w_neg * p
        } / norm;
    }

    if uses_reweighted {
        let dh = matvec_transposed(&params.scene_weights, &d_logits)?;
        let mut d_line: Vec<f64> = dh[d..].to_vec();
        for (t, (layer, lt)) in params.arl.iter().zip(&trace.arl).enumerate().rev() {
            let gl = &mut grad.arl[t];
            // u_t = u_{t-1} * g
            let mut d_pre = vec![0.0; m];
            let mut d_input: Vec<f64> = Vec::with_capacity(m);
            for i in 0..m {
                let g = lt.gate[i];
                d_input.push(d_line[i] * g);
                let d_gate_in = d_line[i] * lt.input[i] * g * (1.0 - g);
                gl.gate_bias[i] = d_gate_in;
                if lt.pre_activation[i] > 0.0 {
                    d_pre[i] = d_gate_in;
                }
            }
            gl.bias.as_mut_slice().copy_from_slice(&d_pre);
            gl.score_weights.add_outer(1.0, &d_pre, &lt.input)?;
            gl.prediction_weights
                .add_outer(1.0, &d_pre, &trace.attribute_logits)?;
            let via_scores = matvec_transposed(&layer.score_weights, &d_pre)?;
            let via_preds = matvec_transposed(&layer.prediction_weights, &d_pre)?;
            for i in 0..m {
                d_input[i] += via_scores[i];
                d_logits_attr[i] += via_preds[i];
            }
            d_line = d_input;
        }
    }

    grad.attribute_weights
        .add_outer(1.0, &d_logits_attr, &sample.feature)?;
    grad.attribute_bias
        .as_mut_slice()
        .copy_from_slice(&d_logits_attr);

    Ok((grad, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BetaTerm, LossSettings, ModelDims, RegularizerTable};
    use crate::numerics::{finite_diff_gradient, relative_error, DenseVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sample(d: usize, m: usize, k: usize, rng: &mut ChaCha8Rng) -> Sample {
        let scores: Vec<f64> = (0..m)
            .map(|_| {
                if rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random_range(0.05..1.0)
                }
            })
            .collect();
        let targets = scores
            .iter()
            .map(|&s| if s > 0.5 { 1.0 } else { 0.0 })
            .collect();
        Sample {
            image_id: "x".into(),
            feature: DenseVector::new((0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
                .unwrap(),
            category: rng.random_range(0..k),
            scores: DenseVector::new(scores).unwrap(),
            targets: DenseVector::new(targets).unwrap(),
        }
    }

    fn random_objective(
        m: usize,
        k: usize,
        rng: &mut ChaCha8Rng,
        settings: LossSettings,
    ) -> Objective {
        let mut reg = RegularizerTable::uniform(m, k, 0.0);
        let mut beta = reg.matrix().clone();
        for v in beta.as_mut_slice() {
            *v = rng.random_range(0.1..3.0);
        }
        reg = RegularizerTable::from_matrix(beta).unwrap();
        Objective::new(reg, settings)
    }

    fn check(architecture: Architecture, settings: LossSettings, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = ModelDims {
            feature_dim: 5,
            attributes: 4,
            categories: 3,
            cascade_depth: 2,
        };
        let mut params = MasrParams::init(dims, architecture, &mut rng).unwrap();
        // Larger weights than the default init so every path carries signal.
        let flat: Vec<f64> = params.flatten().iter().map(|v| v * 3.0).collect();
        params.assign_flat(&flat).unwrap();
        let sample = random_sample(5, 4, 3, &mut rng);
        let objective = random_objective(4, 3, &mut rng, settings);
        let (grad, _) = masr_backward(&sample, &params, &objective, TrainMode::Joint).unwrap();
        let numeric = finite_diff_gradient(
            |x| {
                let mut p = params.clone();
                p.assign_flat(x).unwrap();
                crate::model::masr_loss(&sample, &p, &objective)
                    .unwrap()
                    .total
            },
            &params.flatten(),
            1e-5,
        );
        let err = relative_error(&grad.flatten(), &numeric, 1e-6);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            check(Architecture::Masr, LossSettings::default(), seed);
            check(Architecture::Baseline, LossSettings::default(), seed);
            check(
                Architecture::Masr,
                LossSettings {
                    beta_term: BetaTerm::Negative,
                    mean_over_attributes: false,
                },
                seed,
            );
        }
    }

    #[test]
    fn scene_only_mode_freezes_other_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = ModelDims {
            feature_dim: 3,
            attributes: 3,
            categories: 2,
            cascade_depth: 2,
        };
        let params = MasrParams::init(dims, Architecture::Masr, &mut rng).unwrap();
        let sample = random_sample(3, 3, 2, &mut rng);
        let objective = random_objective(3, 2, &mut rng, LossSettings::default());
        let (grad, _) = masr_backward(&sample, &params, &objective, TrainMode::SceneOnly).unwrap();
        let groups = grad.groups();
        assert!(groups[..2].iter().any(|(_, g)| g.iter().any(|&v| v != 0.0)));
        for (name, g) in &groups[2..] {
            assert!(g.iter().all(|&v| v == 0.0), "{name} moved");
        }
    }

    #[test]
    fn dead_attribute_branch_has_zero_gradient() {
        // With no detector scores the cascade output is identically zero,
        // so attribute j only reaches the loss through its own BCE term,
        // which vanishes when the active term's weight is zero.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dims = ModelDims {
            feature_dim: 4,
            attributes: 3,
            categories: 2,
            cascade_depth: 2,
        };
        let params = MasrParams::init(dims, Architecture::Masr, &mut rng).unwrap();
        let mut beta = crate::numerics::DenseMatrix::zeros(3, 2);
        beta.as_mut_slice().fill(1.0);
        beta.set(1, 0, 0.0);
        let reg = RegularizerTable::from_matrix(beta).unwrap();

        let mut sample = random_sample(4, 3, 2, &mut rng);
        sample.category = 0;
        sample.scores = DenseVector::zeros(3);

        for (term, target) in [(BetaTerm::Positive, 1.0), (BetaTerm::Negative, 0.0)] {
            sample.targets = DenseVector::new(vec![1.0, target, 0.0]).unwrap();
            let objective = Objective::new(
                reg.clone(),
                LossSettings {
                    beta_term: term,
                    mean_over_attributes: true,
                },
            );
            let (grad, _) = masr_backward(&sample, &params, &objective, TrainMode::Joint).unwrap();
            assert!(grad.attribute_weights.row(1).iter().all(|&v| v == 0.0));
            assert_eq!(grad.attribute_bias[1], 0.0);
            assert!(grad.attribute_weights.row(0).iter().any(|&v| v != 0.0));
        }
    }
}
