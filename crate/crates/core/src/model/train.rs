//! Mini-batch training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{extract_patch, flip, Sample};
use super::loss::{deep_supervision_loss, LossBreakdown};
use super::net::Model;
use crate::error::{Error, Result};
use crate::tensor::{DownMode, Graph, Optimizer, OptimizerConfig, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// `lr * (1 - epoch / epochs)^exponent`.
    Poly { exponent: f64 },
}

impl LrSchedule {
    pub fn lr(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Poly { exponent } => base * (1.0 - epoch as f64 / epochs.max(1) as f64).max(0.0).powf(exponent),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives shuffling, crops and flips; model init has its own seed.
    pub seed: u64,
    pub schedule: LrSchedule,
    /// How the label pyramid for the coarse outputs is built.
    pub gt_downsample: DownMode,
    pub flip_augment: bool,
    pub dice_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerConfig::default(),
            epochs: 100,
            batch_size: 2,
            seed: 0,
            schedule: LrSchedule::Poly { exponent: 0.9 },
            gt_downsample: DownMode::Nearest,
            flip_augment: false,
            dice_eps: crate::tensor::loss::DEFAULT_DICE_EPS,
        }
    }
}

/// Mean losses over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub curve: Vec<EpochRecord>,
    pub steps: u64,
    pub stopped_early: bool,
}

impl TrainReport {
    /// Loss curve as CSV: epoch, lr, total, then one column per level.
    pub fn curve_csv(&self) -> String {
        let levels = self.curve.first().map_or(0, |r| r.loss.per_scale.len());
        let mut out = String::from("epoch,lr,total");
        for n in 0..levels {
            out.push_str(&format!(",level{n}"));
        }
        out.push('\n');
        for r in &self.curve {
            out.push_str(&format!("{},{},{}", r.epoch, r.lr, r.loss.total));
            for v in &r.loss.per_scale {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

fn assemble_batch<T: Scalar>(
    batch: &[&Sample],
    patch: [usize; 3],
    augment: bool,
    rng: &mut ChaCha8Rng,
) -> (Tensor<T>, Vec<u8>) {
    let n = patch.iter().product::<usize>();
    let mut image = Vec::with_capacity(batch.len() * n);
    let mut labels = Vec::with_capacity(batch.len() * n);
    for s in batch {
        let mut origin = [0usize; 3];
        for a in 0..3 {
            if s.dims[a] > patch[a] {
                origin[a] = rng.random_range(0..=s.dims[a] - patch[a]);
            }
        }
        let mut img = extract_patch(&s.image, s.dims, origin, patch, 0.0f32);
        let mut lab = extract_patch(&s.labels, s.dims, origin, patch, 0u8);
        if augment {
            let axes = [rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5)];
            img = flip(&img, patch, axes);
            lab = flip(&lab, patch, axes);
        }
        image.extend(img.iter().map(|&v| T::from_f64(v as f64)));
        labels.extend(lab);
    }
    let shape = [batch.len(), 1, patch[0], patch[1], patch[2]];
    (Tensor::from_vec(shape, image).expect("sized above"), labels)
}

fn diverged(epoch: usize, step: u64, loss: f64) -> Error {
    Error::Diverged { epoch, step: step as usize, loss }
}

/// Train `model` in place. `on_epoch` sees the model after every epoch and
/// may stop training early (checkpointing and validation live there).
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&Model<T>, &EpochRecord) -> Result<Control>,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let patch = model.config().patch_size;
    let mut opt = Optimizer::new(cfg.optimizer.clone(), model.params().tensors())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr(cfg.optimizer.lr, epoch, cfg.epochs);
        order.shuffle(&mut rng);
        let mut sums: Option<LossBreakdown> = None;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            let (x, labels) = assemble_batch::<T>(&batch, patch, cfg.flip_augment, &mut rng);
            let shape = [batch.len(), patch[0], patch[1], patch[2]];

            let mut g = Graph::new();
            let params = model.bind(&mut g, true);
            let xv = g.constant(x);
            let step = report.steps;
            let outcome = model.forward(&mut g, &params, xv).and_then(|out| {
                deep_supervision_loss(&mut g, &out, &labels, shape, cfg.gt_downsample, cfg.dice_eps)
            });
            let loss = match outcome {
                Ok(l) => l,
                Err(Error::NonFinite(_)) => return Err(diverged(epoch, step, f64::NAN)),
                Err(e) => return Err(e),
            };
            let values = loss.values(&g);
            if !values.total.is_finite() {
                return Err(diverged(epoch, step, values.total));
            }
            let grads = match g.backward(loss.total) {
                Ok(gr) => gr,
                Err(Error::NonFinite(_)) => return Err(diverged(epoch, step, values.total)),
                Err(e) => return Err(e),
            };
            let grads: Vec<Tensor<T>> = params
                .iter()
                .zip(model.params().tensors())
                .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
                .collect();
            opt.step(model.params_mut().tensors_mut(), &grads, lr)?;
            if model.params().tensors().iter().any(|t| t.check_finite("train").is_err()) {
                return Err(diverged(epoch, step, values.total));
            }
            report.steps += 1;
            batches += 1;
            sums = Some(match sums {
                None => values,
                Some(mut acc) => {
                    acc.total += values.total;
                    for (a, b) in acc.per_scale.iter_mut().zip(&values.per_scale) {
                        *a += b;
                    }
                    acc
                }
            });
        }
        let mut mean = sums.expect("at least one batch");
        mean.total /= batches as f64;
        mean.per_scale.iter_mut().for_each(|v| *v /= batches as f64);
        let record = EpochRecord { epoch, lr, loss: mean };
        let control = on_epoch(model, &record)?;
        report.curve.push(record);
        if control == Control::Stop {
            report.stopped_early = epoch + 1 < cfg.epochs;
            break;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_schedule_endpoints() {
        let s = LrSchedule::Poly { exponent: 0.9 };
        assert_eq!(s.lr(0.01, 0, 10), 0.01);
        assert!((s.lr(0.01, 5, 10) - 0.01 * 0.5f64.powf(0.9)).abs() < 1e-15);
        assert_eq!(LrSchedule::Constant.lr(0.3, 9, 10), 0.3);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = TrainConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), cfg);
    }
}
