//! Analytic gradients against central finite differences on random models.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::Sample;
use crate::error::Result;
use crate::model::{
    masr_backward, masr_loss, Architecture, BetaTerm, LossSettings, MasrParams, ModelDims,
    Objective, RegularizerTable, TrainMode,
};
use crate::numerics::{
    finite_diff_gradient, relative_error, DenseMatrix, DenseVector, PROB_EPSILON,
};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Norm floor of the relative error, so all-zero groups compare absolutely.
pub const ERROR_FLOOR: f64 = 1e-6;
/// Configurations whose ReLU inputs sit this close to the kink are redrawn.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug)]
pub struct SuiteBounds {
    pub max_feature_dim: usize,
    pub max_attributes: usize,
    pub max_categories: usize,
    pub max_depth: usize,
}

impl Default for SuiteBounds {
    fn default() -> Self {
        Self {
            max_feature_dim: 32,
            max_attributes: 16,
            max_categories: 5,
            max_depth: 3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub index: usize,
    pub dims: ModelDims,
    pub architecture: Architecture,
    pub settings: LossSettings,
    /// Relative error per parameter group.
    pub groups: Vec<(String, f64)>,
}

impl CheckResult {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < TOLERANCE
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub seed: u64,
    pub results: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| !r.passed()).count()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            let d = r.dims;
            let _ =
                writeln!(
                out,
                "[{}] config {:>3}: d={:<2} m={:<2} K={} depth={} {:?} {:?}{} max rel err {:.3e}",
                if r.passed() { "ok" } else { "FAIL" },
                r.index,
                d.feature_dim,
                d.attributes,
                d.categories,
                d.cascade_depth,
                r.architecture,
                r.settings.beta_term,
                if r.settings.mean_over_attributes { "/mean" } else { "/sum" },
                r.max_error()
            );
            if !r.passed() {
                for (name, e) in &r.groups {
                    let _ = writeln!(out, "      {name:<28} {e:.3e}");
                }
            }
        }
        let _ = writeln!(
            out,
            "{} of {} configurations within {TOLERANCE:e}",
            self.results.len() - self.failures(),
            self.results.len()
        );
        out
    }
}

struct Draw {
    dims: ModelDims,
    architecture: Architecture,
    params: MasrParams,
    sample: Sample,
    objective: Objective,
}

fn draw(rng: &mut ChaCha8Rng, bounds: SuiteBounds) -> Result<Draw> {
    let dims = ModelDims {
        feature_dim: rng.random_range(1..=bounds.max_feature_dim),
        attributes: rng.random_range(1..=bounds.max_attributes),
        categories: rng.random_range(2..=bounds.max_categories),
        cascade_depth: rng.random_range(1..=bounds.max_depth),
    };
    let architecture = if rng.random_bool(0.2) {
        Architecture::Baseline
    } else {
        Architecture::Masr
    };
    let mut params = MasrParams::init(dims, architecture, rng)?;
    let scale = rng.random_range(1.0..4.0);
    let flat: Vec<f64> = params.flatten().iter().map(|v| v * scale).collect();
    params.assign_flat(&flat)?;

    let (d, m, k) = (dims.feature_dim, dims.attributes, dims.categories);
    let scores: Vec<f64> = (0..m)
        .map(|_| {
            if rng.random_bool(0.3) {
                0.0
            } else {
                rng.random_range(0.01..=1.0)
            }
        })
        .collect();
    let targets: Vec<f64> = (0..m)
        .map(|_| f64::from(u8::from(rng.random_bool(0.4))))
        .collect();
    let sample = Sample {
        image_id: String::new(),
        feature: DenseVector::new((0..d).map(|_| rng.random_range(-2.0..2.0)).collect())?,
        category: rng.random_range(0..k),
        scores: DenseVector::new(scores)?,
        targets: DenseVector::new(targets)?,
    };
    let beta: Vec<f64> = (0..m * k).map(|_| rng.random_range(0.0..3.0)).collect();
    let settings = LossSettings {
        beta_term: if rng.random_bool(0.5) {
            BetaTerm::Positive
        } else {
            BetaTerm::Negative
        },
        mean_over_attributes: rng.random_bool(0.7),
    };
    let objective = Objective::new(
        RegularizerTable::from_matrix(DenseMatrix::from_vec(m, k, beta)?)?,
        settings,
    );
    Ok(Draw {
        dims,
        architecture,
        params,
        sample,
        objective,
    })
}

/// Whether the loss is smooth in a neighbourhood wider than the probe step.
fn is_smooth(d: &Draw) -> Result<bool> {
    let trace = d.params.forward(&d.sample.feature, &d.sample.scores)?;
    let near_kink = trace
        .arl
        .iter()
        .flat_map(|layer| layer.pre_activation.iter())
        .any(|v| v.abs() < KINK_MARGIN);
    let near_clamp = trace.attribute_probs.iter().any(|&p| {
        (p / PROB_EPSILON - 1.0).abs() < 0.05 || ((1.0 - p) / PROB_EPSILON - 1.0).abs() < 0.05
    });
    Ok(!(near_kink && d.architecture == Architecture::Masr) && !near_clamp)
}

fn check_one(seed: u64, index: usize, bounds: SuiteBounds) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let d = loop {
        let d = draw(&mut rng, bounds)?;
        if is_smooth(&d)? {
            break d;
        }
    };
    let (analytic, _) = masr_backward(&d.sample, &d.params, &d.objective, TrainMode::Joint)?;
    let numeric = finite_diff_gradient(
        |x| {
            let mut p = d.params.clone();
            p.assign_flat(x).expect("probe has the parameter count");
            masr_loss(&d.sample, &p, &d.objective).map_or(f64::NAN, |l| l.total)
        },
        &d.params.flatten(),
        STEP,
    );
    let mut offset = 0;
    let groups = analytic
        .groups()
        .into_iter()
        .map(|(name, g)| {
            let n = &numeric[offset..offset + g.len()];
            offset += g.len();
            let err = relative_error(g, n, ERROR_FLOOR);
            (name, if err.is_nan() { f64::INFINITY } else { err })
        })
        .collect();
    Ok(CheckResult {
        index,
        dims: d.dims,
        architecture: d.architecture,
        settings: d.objective.settings,
        groups,
    })
}

/// Checks `n_configs` random configurations; configuration `i` depends only
/// on `(seed, i)`.
pub fn run_suite(seed: u64, n_configs: usize, bounds: SuiteBounds) -> Result<SuiteReport> {
    let results = (0..n_configs)
        .into_par_iter()
        .map(|i| check_one(seed, i, bounds))
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport { seed, results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let report = run_suite(1, 8, SuiteBounds::default()).unwrap();
        assert!(report.passed(), "{}", report.render());
        let masr = report
            .results
            .iter()
            .find(|r| r.architecture == Architecture::Masr)
            .unwrap();
        assert_eq!(masr.groups.len(), 4 + 4 * masr.dims.cascade_depth);
    }

    #[test]
    fn suite_is_reproducible() {
        let a = run_suite(9, 3, SuiteBounds::default()).unwrap();
        let b = run_suite(9, 3, SuiteBounds::default()).unwrap();
        for (x, y) in a.results.iter().zip(&b.results) {
            assert_eq!(x.groups, y.groups);
        }
    }
}
