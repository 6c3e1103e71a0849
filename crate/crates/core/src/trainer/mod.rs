//! Online and batch optimization of the feature field and decoder.

pub mod loss;
pub mod objective;
pub mod optimizer;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::Rng;

use crate::decoder::MlpDecoder;
use crate::error::{MapError, Result};
use crate::field::FeatureField;
use crate::sampler::{BatchStream, Sample};

pub use loss::{bce_loss, eikonal_loss, reg_loss, spatial_gradient};
pub use objective::{evaluate, EvalOptions, Evaluation, LossTerms, SparseGrad};
pub use optimizer::{AdamConfig, OptimizerState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub sigma: f64,
    pub lambda_e: f64,
    pub lambda_r: f64,
    pub omega_max: f64,
    /// Spatial step of the central differences in the Eikonal term, meters.
    pub fd_step: f64,
}

impl LossConfig {
    /// Defaults for a given leaf size (the difference step is half a leaf).
    pub fn for_leaf(leaf_size: f64) -> Self {
        Self {
            sigma: 0.05,
            lambda_e: 0.1,
            lambda_r: 1e3,
            omega_max: 1e3,
            fd_step: 0.5 * leaf_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma, self.lambda_e, self.lambda_r, self.omega_max, self.fd_step];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.fd_step <= 0.0 || self.sigma <= 0.0 {
            return Err(MapError::Config(format!("invalid loss settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainReport {
    pub iteration: u64,
    pub bce: f64,
    pub eikonal: f64,
    pub reg: f64,
    pub total: f64,
    pub touched_slots: usize,
    pub wall_ms: f64,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "iteration,bce,eikonal,reg,total,slots,ms";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{},{:.3}",
            self.iteration, self.bce, self.eikonal, self.reg, self.total, self.touched_slots, self.wall_ms
        )
    }
}

pub struct Trainer {
    cfg: TrainConfig,
    state: OptimizerState,
    iteration: u64,
    log: Option<BufWriter<File>>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.loss.validate()?;
        if cfg.batch_size == 0 {
            return Err(MapError::Config("batch_size must be at least 1".into()));
        }
        Ok(Self {
            cfg,
            state: OptimizerState::default(),
            iteration: 0,
            log: None,
        })
    }

    /// Appends one CSV row per iteration to `path` (header written on creation).
    pub fn with_log(mut self, path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| MapError::io(path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "{}", TrainReport::CSV_HEADER).map_err(|e| MapError::io(path, e))?;
        self.log = Some(w);
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Joint optimization of features and (unless frozen) decoder on the
    /// BCE + Eikonal objective.
    pub fn train_batch<R: Rng + ?Sized>(
        &mut self,
        field: &mut FeatureField,
        decoder: &mut MlpDecoder,
        samples: &[Sample],
        iterations: usize,
        rng: &mut R,
    ) -> Result<Vec<TrainReport>> {
        let update_mlp = !decoder.is_frozen();
        self.run(field, decoder, samples, iterations, rng, false, update_mlp, &mut None)
    }

    /// One scan of incremental mapping with a frozen decoder: optimize the
    /// features on BCE + Eikonal + anchor regularization, then fold this scan's
    /// gradient magnitudes into the importance weights and re-anchor every
    /// slot the scan touched.
    pub fn train_incremental_step<R: Rng + ?Sized>(
        &mut self,
        field: &mut FeatureField,
        decoder: &MlpDecoder,
        samples: &[Sample],
        iterations: usize,
        rng: &mut R,
    ) -> Result<Vec<TrainReport>> {
        if !decoder.is_frozen() {
            return Err(MapError::Config("incremental mapping requires a frozen decoder".into()));
        }
        self.state.reset();
        let mut touched = Some(vec![false; field.slot_count()]);
        // the decoder is frozen, so run() never writes to it
        let mut dec = decoder.clone();
        let reports = self.run(field, &mut dec, samples, iterations, rng, true, false, &mut touched)?;
        let mut touched = touched.unwrap_or_default();
        let used = update_importance(field, decoder, samples, self.cfg.loss.sigma, self.cfg.loss.omega_max);
        for s in used {
            touched[s as usize] = true;
        }
        let list: Vec<u32> = touched
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.then_some(i as u32))
            .collect();
        field.snapshot_anchors(&list);
        Ok(reports)
    }

    #[allow(clippy::too_many_arguments)]
    fn run<R: Rng + ?Sized>(
        &mut self,
        field: &mut FeatureField,
        decoder: &mut MlpDecoder,
        samples: &[Sample],
        iterations: usize,
        rng: &mut R,
        include_reg: bool,
        update_mlp: bool,
        touched: &mut Option<Vec<bool>>,
    ) -> Result<Vec<TrainReport>> {
        let mut reports = Vec::with_capacity(iterations);
        let mut stream = BatchStream::new(samples.len(), self.cfg.batch_size);
        let opts = EvalOptions {
            mlp_grad: update_mlp,
            include_reg,
        };
        for _ in 0..iterations {
            let Some(batch) = stream.next_batch(rng) else {
                break;
            };
            let start = Instant::now();
            let refs: Vec<&Sample> = batch.iter().map(|&i| &samples[i]).collect();
            let eval = evaluate(field, decoder, &refs, &self.cfg.loss, opts);
            self.iteration += 1;
            let t = eval.terms;
            if !t.total.is_finite() {
                return Err(MapError::Diverged {
                    iteration: self.iteration,
                    detail: format!("loss terms {t:?}"),
                });
            }
            self.state.step_features(field, &eval.features, &self.cfg.adam);
            if let Some(g) = &eval.mlp {
                self.state.step_mlp(decoder.params_mut(), g, &self.cfg.adam);
            }
            if let Some(mask) = touched.as_mut() {
                for &s in eval.features.slots() {
                    mask[s as usize] = true;
                }
            }
            let report = TrainReport {
                iteration: self.iteration,
                bce: t.bce,
                eikonal: t.eikonal,
                reg: t.reg,
                total: t.total,
                touched_slots: eval.features.len(),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            if let Some(w) = self.log.as_mut() {
                writeln!(w, "{}", report.csv_row()).map_err(|e| MapError::io("training log", e))?;
            }
            reports.push(report);
        }
        if let Some(w) = self.log.as_mut() {
            w.flush().map_err(|e| MapError::io("training log", e))?;
        }
        Ok(reports)
    }
}

/// Adds this scan's summed per-sample BCE gradient magnitudes to the
/// importance weights, capped at `omega_max`. Returns the slots involved.
pub fn update_importance(
    field: &mut FeatureField,
    decoder: &MlpDecoder,
    samples: &[Sample],
    sigma: f64,
    omega_max: f64,
) -> Vec<u32> {
    let mags = objective::bce_gradient_magnitudes(field, decoder, samples, sigma);
    let l = field.feature_len();
    let omega = field.importance_mut();
    for (slot, g) in mags.iter() {
        let base = slot as usize * l;
        for (j, gj) in g.iter().enumerate() {
            let w = &mut omega[base + j];
            *w = (*w + gj).min(omega_max);
        }
    }
    mags.slots().to_vec()
}
