//! Two-phase SGD training of the heads.
//!
//! Epochs `0..epochs_phase1` optimize the scene classification loss alone
//! and only move the scene head; from `epochs_phase1` on the attribute loss
//! is switched on and every head trains. A [`Architecture::Baseline`] model
//! stays in the scene-only phase throughout. Learning rates decay by
//! `lr_decay` every `lr_step` epochs on one global epoch clock.
//!
//! Sample order within an epoch is a permutation drawn from a generator keyed
//! by `(seed, epoch)`, so a restored checkpoint replays exactly.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::model::checkpoint::{read_exact, read_f64, read_u32, read_u64};
use crate::model::{
    masr_backward, Architecture, LossBreakdown, LossSettings, MasrParams, Objective, TrainMode,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_phase1: usize,
    pub epochs_total: usize,
    pub lr_classifier: f64,
    pub lr_base: f64,
    pub lr_decay: f64,
    pub lr_step: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub cascade_depth: usize,
    pub architecture: Architecture,
    pub loss: LossSettings,
    /// Compute per-sample gradients on the rayon pool. The reduction order is
    /// fixed either way, so results are bit-identical.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_phase1: 15,
            epochs_total: 100,
            lr_classifier: 0.01,
            lr_base: 0.001,
            lr_decay: 0.1,
            lr_step: 20,
            batch_size: 128,
            seed: 0,
            cascade_depth: 2,
            architecture: Architecture::Masr,
            loss: LossSettings::default(),
            parallel: true,
        }
    }
}

impl TrainConfig {
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
        let fail = |msg: String| Err(Error::Config(msg));
        if self.epochs_phase1 >= self.epochs_total {
            return fail(format!(
                "epochs_phase1 ({}) must be below epochs_total ({})",
                self.epochs_phase1, self.epochs_total
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            ));
        }
        if self.lr_step == 0 {
            return fail("lr_step must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.cascade_depth == 0 {
            return fail("cascade_depth must be at least 1".into());
        }
        for (name, lr) in [
            ("lr_classifier", self.lr_classifier),
            ("lr_base", self.lr_base),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return fail(format!(
                    "{name} must be a finite non-negative number, got {lr}"
                ));
            }
        }
        Ok(())
    }

    /// Objective optimized during `epoch`.
    pub fn mode_at(&self, epoch: usize) -> TrainMode {
        match self.architecture {
            Architecture::Baseline => TrainMode::SceneOnly,
            Architecture::Masr if epoch < self.epochs_phase1 => TrainMode::SceneOnly,
            Architecture::Masr => TrainMode::Joint,
        }
    }
}

/// Learning rates in effect during `epoch`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub classifier: f64,
    pub base: f64,
}

/// Base rates times `lr_decay^(epoch / lr_step)`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> LearningRates {
    let steps = (epoch / config.lr_step.max(1)) as i32;
    let factor = config.lr_decay.powi(steps);
    LearningRates {
        classifier: config.lr_classifier * factor,
        base: config.lr_base * factor,
    }
}

/// Mean losses over one epoch. `total` is what the epoch optimized:
/// the classification loss alone in the scene-only phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub classification: f64,
    pub attribute: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub params: MasrParams,
    /// Seed of the shuffling generator; the per-epoch stream is derived from it.
    pub rng_seed: u64,
    pub history: Vec<EpochLoss>,
}

const STATE_MAGIC: &[u8; 8] = b"MASRSTA\0";
const STATE_VERSION: u32 = 1;

impl TrainState {
    pub fn write_to<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(STATE_MAGIC);
        buf.extend_from_slice(&STATE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        buf.extend_from_slice(&self.rng_seed.to_le_bytes());
        buf.extend_from_slice(&(self.history.len() as u64).to_le_bytes());
        for h in &self.history {
            buf.extend_from_slice(&(h.epoch as u64).to_le_bytes());
            for v in [h.classification, h.attribute, h.total] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        self.params.write_to(&mut buf)?;
        w.write_all(&buf)
            .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
    }

    pub fn read_from<R: std::io::Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic, "magic")?;
        if &magic != STATE_MAGIC {
            return Err(Error::Checkpoint(
                "not a training-state checkpoint (bad magic)".into(),
            ));
        }
        let version = read_u32(r, "version")?;
        if version != STATE_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let epoch = read_u64(r, "epoch")? as usize;
        let rng_seed = read_u64(r, "seed")?;
        let n = read_u64(r, "history length")? as usize;
        if n != epoch {
            return Err(Error::Checkpoint(format!(
                "history has {n} entries for {epoch} completed epochs"
            )));
        }
        let mut history = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            history.push(EpochLoss {
                epoch: read_u64(r, "history")? as usize,
                classification: read_f64(r, "history")?,
                attribute: read_f64(r, "history")?,
                total: read_f64(r, "history")?,
            });
        }
        let params = MasrParams::read_from(r)?;
        Ok(Self {
            epoch,
            params,
            rng_seed,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cursor = bytes.as_slice();
        let state = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                cursor.len()
            )));
        }
        Ok(state)
    }
}

/// Writes the loss history as tab-separated text with a header.
pub fn write_loss_history<W: std::io::Write>(
    mut w: W,
    history: &[EpochLoss],
) -> std::io::Result<()> {
    let mut out = String::from("epoch\tL_cls\tL_att\tL_MASR\n");
    for h in history {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            h.epoch, h.classification, h.attribute, h.total
        ));
    }
    w.write_all(out.as_bytes())?;
    w.flush()
}

/// Owns the configuration, training set and objective of one run.
pub struct Trainer<'a> {
    config: TrainConfig,
    data: &'a Dataset,
    objective: Objective,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a Dataset) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        data.dims(config.cascade_depth).validate()?;
        let objective =
            Objective::from_training_set(&data.samples, data.num_categories(), config.loss)?;
        Ok(Self {
            config,
            data,
            objective,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    /// Fresh parameters drawn from stream 0 of the seeded generator.
    pub fn init_state(&self) -> Result<TrainState> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let params = MasrParams::init(
            self.data.dims(self.config.cascade_depth),
            self.config.architecture,
            &mut rng,
        )?;
        Ok(TrainState {
            epoch: 0,
            params,
            rng_seed: self.config.seed,
            history: Vec::new(),
        })
    }

    fn check_state(&self, state: &TrainState) -> Result<()> {
        let expected = self.data.dims(self.config.cascade_depth);
        if state.params.dims() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint dimensions {:?} do not match the dataset/config {:?}",
                state.params.dims(),
                expected
            )));
        }
        if state.params.architecture != self.config.architecture {
            return Err(Error::Checkpoint(
                "checkpoint architecture differs from the config".into(),
            ));
        }
        Ok(())
    }

    fn epoch_order(&self, state: &TrainState) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(state.rng_seed);
        rng.set_stream(state.epoch as u64 + 1);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    fn batch_gradient(
        &self,
        params: &MasrParams,
        batch: &[&Sample],
        mode: TrainMode,
    ) -> Result<(MasrParams, Vec<LossBreakdown>)> {
        let per_sample: Vec<Result<(MasrParams, LossBreakdown)>> = if self.config.parallel {
            batch
                .par_iter()
                .map(|s| masr_backward(s, params, &self.objective, mode))
                .collect()
        } else {
            batch
                .iter()
                .map(|s| masr_backward(s, params, &self.objective, mode))
                .collect()
        };
        let mut sum = params.zeros_like();
        let mut losses = Vec::with_capacity(batch.len());
        for item in per_sample {
            let (g, l) = item?;
            sum.add_scaled(1.0, &g);
            losses.push(l);
        }
        Ok((sum, losses))
    }

    /// One pass over the data in `mode`; appends to the loss history.
    pub fn train_epoch(&self, state: &mut TrainState, mode: TrainMode) -> Result<EpochLoss> {
        self.check_state(state)?;
        let lr = lr_at(state.epoch, &self.config).classifier;
        let order = self.epoch_order(state);
        let (mut cls_sum, mut att_sum) = (0.0, 0.0);
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &self.data.samples[i]).collect();
            let (grad, losses) = self.batch_gradient(&state.params, &batch, mode)?;
            for l in &losses {
                if !l.classification.is_finite() {
                    return Err(self.diverged(state.epoch, b, "classification loss"));
                }
                if !l.attribute.is_finite() {
                    return Err(self.diverged(state.epoch, b, "attribute loss"));
                }
                cls_sum += l.classification;
                att_sum += l.attribute;
            }
            state.params.add_scaled(-lr / batch.len() as f64, &grad);
            if !state.params.is_finite() {
                return Err(self.diverged(state.epoch, b, "parameter update"));
            }
        }
        let n = self.data.len() as f64;
        let classification = cls_sum / n;
        let attribute = att_sum / n;
        let total = match mode {
            TrainMode::SceneOnly => classification,
            TrainMode::Joint => classification + attribute,
        };
        let record = EpochLoss {
            epoch: state.epoch,
            classification,
            attribute,
            total,
        };
        state.history.push(record);
        state.epoch += 1;
        Ok(record)
    }

    fn diverged(&self, epoch: usize, batch: usize, component: &'static str) -> Error {
        log::error!("training diverged: epoch {epoch}, batch {batch}, {component}");
        Error::NonFiniteLoss {
            epoch,
            batch,
            component,
        }
    }

    /// Trains until `stop_epoch` epochs have completed (capped at
    /// `epochs_total`), choosing each epoch's phase from the config.
    pub fn run_until(&self, mut state: TrainState, stop_epoch: usize) -> Result<TrainState> {
        self.check_state(&state)?;
        let stop = stop_epoch.min(self.config.epochs_total);
        while state.epoch < stop {
            let mode = self.config.mode_at(state.epoch);
            let rec = self.train_epoch(&mut state, mode)?;
            log::info!(
                "epoch {:>3} {:?}: L_cls {:.5} L_att {:.5} L_MASR {:.5}",
                rec.epoch,
                mode,
                rec.classification,
                rec.attribute,
                rec.total
            );
        }
        Ok(state)
    }

    pub fn run_from(&self, state: TrainState) -> Result<TrainState> {
        self.run_until(state, self.config.epochs_total)
    }
}

/// Full protocol from fresh parameters.
pub fn run(config: &TrainConfig, data: &Dataset) -> Result<TrainState> {
    let trainer = Trainer::new(config.clone(), data)?;
    let state = trainer.init_state()?;
    trainer.run_from(state)
}
