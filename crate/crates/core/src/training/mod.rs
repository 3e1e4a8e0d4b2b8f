//! Mini-batch Adam training, checkpoints and whole-band inference.
//!
//! Each sample of a batch gets its own graph. Samples run in parallel and
//! their gradients are summed in batch order, so results do not depend on
//! the number of worker threads.

mod checkpoint;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::hsidata::{adjacent_window, Band, HsiCube, PatchSample};
use crate::metrics;
use crate::model::{forward_graph, hsie_forward, register, HsieConfig, HsieParams, ModelInputs};
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, Tensor};
use crate::rng;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    /// The learning rate halves every this many epochs.
    pub halve_every: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps, even mid-epoch.
    pub max_steps: Option<u64>,
    pub batch_size: usize,
    pub patch: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 2e-4,
            halve_every: 200,
            epochs: 20,
            max_steps: None,
            batch_size: 16,
            patch: 32,
            loss: LossKind::L1,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The full 600-epoch schedule.
    pub fn full() -> Self {
        Self {
            epochs: 600,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(invalid!("lr0 must be positive, got {}", self.lr0));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.halve_every == 0 {
            return Err(invalid!("epochs, batch_size and halve_every must be at least 1"));
        }
        if self.patch < 2 || !self.patch.is_multiple_of(2) {
            return Err(invalid!("patch must be even and at least 2, got {}", self.patch));
        }
        Ok(())
    }
}

/// `lr0 * 0.5^floor(epoch / halve_every)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * 0.5f64.powi((epoch / cfg.halve_every) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based optimizer step.
    pub step: u64,
    pub epoch: usize,
    /// Mean batch loss before the update.
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mpsnr: f64,
    pub mssim: f64,
    pub sam: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn first_loss(&self) -> Option<f64> {
        self.steps.first().map(|s| s.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }

    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,loss,lr\n");
        for r in &self.steps {
            writeln!(s, "{},{},{}", r.step, r.loss, r.lr).expect("write to string");
        }
        s
    }

    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,mpsnr,mssim,sam\n");
        for r in &self.epochs {
            writeln!(s, "{},{},{},{}", r.epoch, r.mpsnr, r.mssim, r.sam).expect("write to string");
        }
        s
    }
}

/// Paired low-light/clean cubes evaluated after every epoch.
#[derive(Debug, Clone)]
pub struct Validation {
    pub low: HsiCube,
    pub clean: HsiCube,
}

/// Optional side effects of [`train`].
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Rewritten after every epoch and at the end.
    pub checkpoint: Option<PathBuf>,
    pub validation: Option<Validation>,
    /// Continue from these weights and optimizer state.
    pub resume: Option<Checkpoint>,
    pub on_step: Option<&'a (dyn Fn(&StepRecord) + Sync)>,
}

/// Decomposed network inputs and label of one patch.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub inputs: ModelInputs<f32>,
    pub label: Band<f32>,
}

pub fn prepare_samples(dataset: &[PatchSample], model_cfg: &HsieConfig) -> Result<Vec<PreparedSample>> {
    let dims = dataset
        .first()
        .ok_or_else(|| invalid!("training set is empty"))?
        .band_patch
        .dims();
    dataset
        .par_iter()
        .map(|s| {
            if s.band_patch.dims() != dims || s.label_patch.dims() != dims {
                return Err(shape_err!("patch {:?} differs from {:?}", s.band_patch.dims(), dims));
            }
            if s.cube_patch.bands() != model_cfg.k {
                return Err(shape_err!(
                    "patch has {} adjacent bands, model expects {}",
                    s.cube_patch.bands(),
                    model_cfg.k
                ));
            }
            Ok(PreparedSample {
                inputs: ModelInputs::prepare(&s.band_patch, &s.cube_patch.band_list())?,
                label: s.label_patch.clone(),
            })
        })
        .collect()
}

/// Loss and per-tensor gradients for one sample.
pub fn sample_gradients(
    params: &HsieParams<f32>,
    sample: &PreparedSample,
    loss: LossKind,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut g = Graph::new();
    let net = register(&mut g, params, true);
    let v = forward_graph(&mut g, &net, &sample.inputs)?;
    let target = g.constant(sample.label.to_tensor());
    let l = match loss {
        LossKind::L1 => g.l1_loss(v.i_e, target)?,
        LossKind::L2 => g.mse_loss(v.i_e, target)?,
    };
    let value = f64::from(g.value(l).data()[0]);
    let mut grads = g.backward(l)?;
    let per_tensor = net
        .named()
        .into_iter()
        .map(|(_, &var)| {
            grads
                .take(var)
                .unwrap_or_else(|| Tensor::zeros(g.value(var).shape()))
        })
        .collect();
    Ok((value, per_tensor))
}

/// Mean loss and mean gradient over a batch, reduced in batch order.
fn batch_gradients(
    params: &HsieParams<f32>,
    samples: &[PreparedSample],
    batch: &[usize],
    loss: LossKind,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let results = batch
        .par_iter()
        .map(|&i| sample_gradients(params, &samples[i], loss))
        .collect::<Result<Vec<_>>>()?;
    let mut iter = results.into_iter();
    let (mut total, mut sum) = iter.next().expect("non-empty batch");
    for (l, grads) in iter {
        total += l;
        for (acc, g) in sum.iter_mut().zip(&grads) {
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    let scale = 1.0 / batch.len() as f32;
    for t in &mut sum {
        for v in t.data_mut() {
            *v *= scale;
        }
    }
    Ok((total / batch.len() as f64, sum))
}

/// Trains from Kaiming initialization (or from `hooks.resume`).
/// A non-finite loss or gradient stops training with [`Error::Diverged`].
pub fn train(
    dataset: &[PatchSample],
    cfg: &TrainConfig,
    model_cfg: &HsieConfig,
    hooks: &TrainHooks<'_>,
) -> Result<(HsieParams<f32>, TrainLog)> {
    cfg.validate()?;
    model_cfg.validate()?;
    let samples = prepare_samples(dataset, model_cfg)?;

    let (mut params, mut state, start_epoch) = match &hooks.resume {
        Some(ck) => {
            ck.params.check_compatible(model_cfg)?;
            let state = ck
                .optimizer
                .clone()
                .unwrap_or_else(|| AdamState::new(ck.params.tensors(), cfg.adam));
            (ck.params.clone(), state, ck.epoch as usize)
        }
        None => {
            let p = crate::model::init_model::<f32>(model_cfg, rng::derive_seed(cfg.seed, "model", 0))?;
            let s = AdamState::new(p.tensors(), cfg.adam);
            (p, s, 0)
        }
    };

    let mut log = TrainLog::default();
    let mut last_good: Option<PathBuf> = None;
    let mut completed = start_epoch;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let max_steps = cfg.max_steps.unwrap_or(u64::MAX);

    'epochs: for epoch in start_epoch..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, "shuffle", epoch as u64));
        for batch in order.chunks(cfg.batch_size) {
            if state.t >= max_steps {
                break 'epochs;
            }
            let (loss, grads) = batch_gradients(&params, &samples, batch, cfg.loss)?;
            let step = state.t + 1;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    loss,
                    last_good: last_good.clone(),
                });
            }
            let mut slots = params.tensors_mut();
            adam_step(&mut slots, &grads, &mut state, lr).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged {
                    step,
                    loss,
                    last_good: last_good.clone(),
                },
                other => other,
            })?;
            let record = StepRecord { step, epoch, loss, lr };
            if let Some(f) = hooks.on_step {
                f(&record);
            }
            log.steps.push(record);
        }
        if let Some(v) = &hooks.validation {
            log.epochs.push(validate(v, &params, epoch)?);
        }
        completed = epoch + 1;
        if let Some(path) = &hooks.checkpoint {
            save(path, completed as u64, &params, &state)?;
            last_good = Some(path.clone());
        }
    }
    if let Some(path) = &hooks.checkpoint {
        save(path, completed as u64, &params, &state)?;
    }
    Ok((params, log))
}

/// SAM is undefined (NaN) when every enhanced spectrum is zero.
fn validate(v: &Validation, params: &HsieParams<f32>, epoch: usize) -> Result<EpochRecord> {
    let enhanced = enhance_cube(&v.low, params)?;
    let sam = match metrics::sam(&v.clean, &enhanced) {
        Ok(s) => s,
        Err(Error::Invalid(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    Ok(EpochRecord {
        epoch,
        mpsnr: metrics::mpsnr(&v.clean, &enhanced)?,
        mssim: metrics::mssim(&v.clean, &enhanced)?,
        sam,
    })
}

fn save(path: &Path, epoch: u64, params: &HsieParams<f32>, state: &AdamState<f32>) -> Result<()> {
    Checkpoint {
        epoch,
        params: params.clone(),
        optimizer: Some(state.clone()),
    }
    .save(path)
}

/// Enhances one band of a cube from its adjacent-band window, on the whole
/// band, clamped to `[0, 1]`.
pub fn enhance_band(cube: &HsiCube, band_index: usize, params: &HsieParams<f32>) -> Result<Band<f32>> {
    let k = params.config().k;
    let window = adjacent_window(band_index, cube.bands(), k)?;
    let adjacent: Vec<Band<f32>> = window.iter().map(|&b| cube.band(b)).collect();
    let out = hsie_forward(params, &cube.band(band_index), &adjacent)?;
    Ok(out.map(|v| v.clamp(0.0, 1.0)))
}

/// [`enhance_band`] over every band, band-parallel, order-preserving.
pub fn enhance_cube(cube: &HsiCube, params: &HsieParams<f32>) -> Result<HsiCube> {
    let bands = (0..cube.bands())
        .into_par_iter()
        .map(|b| enhance_band(cube, b, params))
        .collect::<Result<Vec<_>>>()?;
    HsiCube::from_bands(&bands)
}
