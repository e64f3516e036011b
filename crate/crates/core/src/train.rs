//! Adam training with poly decay, validation and best-checkpoint keeping.

use std::path::Path;

use candle_core::{DType, Device};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use lgsan_metrics::{evaluate_sample, MetricAccumulator, MetricReport, SampleMetrics};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::save_checkpoint;
use crate::config::{poly_lr, RunConfig};
use crate::data::{make_batch, Sample};
use crate::error::{LgsanError, Result};
use crate::network::{Lgsan, LossBreakdown, Output};
use crate::nn::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub breakdown: LossBreakdown,
}

impl std::fmt::Display for LogRow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "step={} lr={:.3e} {}", self.step, self.lr, self.breakdown)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    /// `(step, report)` for every validation pass.
    pub validations: Vec<(usize, MetricReport)>,
    pub best: Option<(usize, MetricReport)>,
}

pub struct Trainer {
    pub cfg: RunConfig,
    pub ps: ParamStore,
    pub model: Lgsan,
    opt: AdamW,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, dtype: DType, device: &Device) -> Result<Self> {
        let mut ps = ParamStore::new(cfg.seed, dtype, device.clone());
        let model = Lgsan::new(cfg, &mut ps)?;
        Self::from_parts(cfg, ps, model)
    }

    pub fn from_parts(cfg: &RunConfig, ps: ParamStore, model: Lgsan) -> Result<Self> {
        let params = ParamsAdamW { lr: cfg.optimizer.lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
        let opt = AdamW::new(ps.trainable_vars(), params)?;
        Ok(Self { cfg: cfg.clone(), ps, model, opt })
    }

    pub fn run_id(&self) -> String {
        format!("{}-seed{}", self.cfg.hash(), self.cfg.seed)
    }

    /// Sample order for the whole run: a fresh seeded permutation per pass
    /// over the training set, cut into batches.
    pub fn schedule(&self, n_train: usize) -> Vec<Vec<usize>> {
        let (steps, bs) = (self.cfg.optimizer.steps, self.cfg.optimizer.batch_size.min(n_train.max(1)));
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(1);
        let mut order: Vec<usize> = Vec::new();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            if order.len() < bs {
                let mut perm: Vec<usize> = (0..n_train).collect();
                perm.shuffle(&mut rng);
                order.extend(perm);
            }
            out.push(order.drain(..bs).collect());
        }
        out
    }

    /// One optimizer step on `batch`; returns the loss before the update.
    pub fn step(&mut self, step: usize, batch: &[&Sample]) -> Result<LogRow> {
        let o = &self.cfg.optimizer;
        let lr = poly_lr(o.lr, step, o.steps, o.poly_power);
        self.opt.set_learning_rate(lr);
        let b = make_batch(batch, self.ps.dtype(), self.ps.device())?;
        let preds = self.model.forward(&b.image, &b.prompts, true)?;
        let (loss, breakdown) = self.model.loss(&preds, &b.mask, &b.edge)?;
        if !breakdown.total.is_finite() || breakdown.structure.iter().any(|(_, v)| !v.is_finite()) {
            return Err(LgsanError::Numeric(format!("non-finite loss at step {step}: {breakdown}")));
        }
        self.opt.backward_step(&loss)?;
        Ok(LogRow { step, lr, total: breakdown.total, breakdown })
    }

    /// Trains for `optimizer.steps` steps. Validation runs every
    /// `optimizer.eval_every` steps and after the last one; the best model by
    /// S-measure is written to `checkpoint` when given.
    pub fn fit(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        checkpoint: Option<&Path>,
        mut on_row: impl FnMut(&LogRow),
    ) -> Result<TrainOutcome> {
        if train.is_empty() {
            return Err(LgsanError::Data("empty training set".into()));
        }
        let schedule = self.schedule(train.len());
        let total = schedule.len();
        let eval_every = self.cfg.optimizer.eval_every;
        let mut out = TrainOutcome { log: Vec::with_capacity(total), validations: Vec::new(), best: None };
        for (step, idx) in schedule.into_iter().enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let row = self.step(step, &batch)?;
            on_row(&row);
            out.log.push(row);
            let done = step + 1;
            let due = done == total || (eval_every > 0 && done % eval_every == 0);
            if due && !val.is_empty() {
                let (report, _) = evaluate(&self.model, val, self.cfg.optimizer.batch_size, &self.run_id())?;
                log::info!("step {done}: val {}", report.table_row("val"));
                let better = out.best.as_ref().is_none_or(|(_, b)| report.s_alpha > b.s_alpha);
                if better {
                    if let Some(p) = checkpoint {
                        save_checkpoint(p, &self.cfg, &self.ps, done, Some(report.s_alpha))?;
                    }
                    out.best = Some((done, report.clone()));
                }
                out.validations.push((done, report));
            }
        }
        if val.is_empty() {
            if let Some(p) = checkpoint {
                save_checkpoint(p, &self.cfg, &self.ps, total, None)?;
            }
        }
        Ok(out)
    }
}

pub fn to_array(values: Vec<f64>, h: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_vec((h, w), values).expect("length matches shape")
}

/// Probability maps of one output for every sample, in sample order.
pub fn predict_maps(model: &Lgsan, samples: &[Sample], batch_size: usize, which: Output) -> Result<Vec<Array2<f64>>> {
    let mut maps = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let b = make_batch(&refs, model.dtype(), model.device())?;
        let preds = model.forward(&b.image, &b.prompts, false)?;
        let prob = preds
            .prob(which)?
            .ok_or_else(|| LgsanError::Config(format!("output {} is not produced by this configuration", which.name())))?;
        let (n, _, h, w) = prob.dims4()?;
        let flat = prob.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        for i in 0..n {
            let v = flat[i * h * w..(i + 1) * h * w].iter().map(|p| p.clamp(0.0, 1.0)).collect();
            maps.push(to_array(v, h, w));
        }
    }
    Ok(maps)
}

/// Mean metrics of the final prediction O1 over `samples`.
pub fn evaluate(model: &Lgsan, samples: &[Sample], batch_size: usize, run_id: &str) -> Result<(MetricReport, Vec<SampleMetrics>)> {
    let maps = predict_maps(model, samples, batch_size, Output::O1)?;
    let mut acc = MetricAccumulator::new();
    let mut rows = Vec::with_capacity(samples.len());
    for (map, s) in maps.iter().zip(samples) {
        let gt = Array2::from_shape_vec((s.h, s.w), s.mask.clone()).expect("mask length matches");
        let m = evaluate_sample(map.view(), gt.view())?;
        acc.push(&m);
        rows.push(m);
    }
    Ok((acc.finish(run_id), rows))
}

/// Mean total loss over `samples` in inference mode, batch by batch.
pub fn dataset_loss(model: &Lgsan, samples: &[Sample], batch_size: usize) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let b = make_batch(&refs, model.dtype(), model.device())?;
        let preds = model.forward(&b.image, &b.prompts, false)?;
        let (_, br) = model.loss(&preds, &b.mask, &b.edge)?;
        sum += br.total * chunk.len() as f64;
    }
    Ok(sum / samples.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_covers_each_pass_once() {
        let mut cfg = RunConfig::default();
        cfg.optimizer.steps = 6;
        cfg.optimizer.batch_size = 4;
        let t = Trainer::new(&cfg, DType::F32, &Device::Cpu).unwrap();
        let s = t.schedule(8);
        assert_eq!(s.len(), 6);
        for pass in s.chunks(2) {
            let mut seen: Vec<usize> = pass.concat();
            seen.sort();
            assert_eq!(seen, (0..8).collect::<Vec<_>>());
        }
        assert_eq!(s, t.schedule(8));
    }
}
