//! Deep supervision: dice + cross-entropy at every decoder scale.

use serde::{Deserialize, Serialize};

use super::net::MultiScaleOutputs;
use crate::error::{Error, Result};
use crate::tensor::{one_hot, DownMode, Graph, Scalar, Var};

/// Normalized weights `2^-n / sum_k 2^-k`.
pub fn scale_weights(levels: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..levels).map(|n| 0.5f64.powi(n as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Label map downsampled by `factor` along every axis.
///
/// `Nearest` keeps the first voxel of each block; `Max` keeps the largest
/// label, so any foreground in the block survives. `Mean` is meaningless for
/// labels and is rejected.
pub fn downsample_labels(labels: &[u8], shape: [usize; 4], factor: usize, mode: DownMode) -> Result<Vec<u8>> {
    let [b, d, h, w] = shape;
    if labels.len() != b * d * h * w {
        return Err(Error::shape("downsample_labels", "label buffer does not match shape"));
    }
    if factor == 0 || d % factor != 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::shape("downsample_labels", format!("{shape:?} not divisible by {factor}")));
    }
    let (od, oh, ow) = (d / factor, h / factor, w / factor);
    let mut out = vec![0u8; b * od * oh * ow];
    for bi in 0..b {
        let src = &labels[bi * d * h * w..(bi + 1) * d * h * w];
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let v = match mode {
                        DownMode::Nearest => src[((z * factor) * h + y * factor) * w + x * factor],
                        DownMode::Max => {
                            let mut m = 0;
                            for dz in 0..factor {
                                for dy in 0..factor {
                                    let row = ((z * factor + dz) * h + y * factor + dy) * w + x * factor;
                                    m = src[row..row + factor].iter().fold(m, |a, &b| a.max(b));
                                }
                            }
                            m
                        }
                        DownMode::Mean => {
                            return Err(Error::Config("labels cannot be mean-downsampled".into()));
                        }
                    };
                    out[((bi * od + z) * oh + y) * ow + x] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Graph handles of the combined objective.
#[derive(Debug, Clone)]
pub struct SupervisedLoss {
    pub total: Var,
    /// `L_n = dice_n + ce_n`, one per level.
    pub per_scale: Vec<Var>,
    pub weights: Vec<f64>,
}

/// Scalar values of a [`SupervisedLoss`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_scale: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SupervisedLoss {
    pub fn values<T: Scalar>(&self, g: &Graph<T>) -> LossBreakdown {
        LossBreakdown {
            total: g.value(self.total).item().to_f64(),
            per_scale: self.per_scale.iter().map(|&v| g.value(v).item().to_f64()).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Weighted sum over levels of soft dice plus cross-entropy against a
/// ground-truth pyramid built from `labels` (`(B, D, H, W)` at full resolution).
pub fn deep_supervision_loss<T: Scalar>(
    g: &mut Graph<T>,
    outputs: &MultiScaleOutputs,
    labels: &[u8],
    shape: [usize; 4],
    gt_mode: DownMode,
    dice_eps: f64,
) -> Result<SupervisedLoss> {
    let levels = outputs.probs.len();
    let weights = scale_weights(levels);
    let mut per_scale = Vec::with_capacity(levels);
    for (n, &p) in outputs.probs.iter().enumerate() {
        let ps = g.value(p).shape();
        let factor = 1usize << n;
        let gt = downsample_labels(labels, shape, factor, gt_mode)?;
        let sub = [shape[0], shape[1] / factor, shape[2] / factor, shape[3] / factor];
        if [ps[0], ps[2], ps[3], ps[4]] != sub {
            return Err(Error::shape(
                "deep_supervision_loss",
                format!("level {n} output {ps:?} does not match labels {sub:?}"),
            ));
        }
        let target = g.constant(one_hot(&gt, sub, ps[1])?);
        let dice = g.dice_loss(p, target, dice_eps)?;
        let ce = g.ce_loss(p, target)?;
        per_scale.push(g.weighted_sum(&[(dice, 1.0), (ce, 1.0)])?);
    }
    let terms: Vec<(Var, f64)> = per_scale.iter().copied().zip(weights.iter().copied()).collect();
    let total = g.weighted_sum(&terms)?;
    Ok(SupervisedLoss {
        total,
        per_scale,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_level_weights() {
        let w = scale_weights(6);
        assert!((w[0] - 32.0 / 63.0).abs() < 1e-15);
        assert!((w[5] - 1.0 / 63.0).abs() < 1e-15);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn max_keeps_isolated_foreground() {
        let mut labels = vec![0u8; 4 * 4 * 4];
        labels[(3 * 4 + 3) * 4 + 3] = 1;
        let near = downsample_labels(&labels, [1, 4, 4, 4], 2, DownMode::Nearest).unwrap();
        let max = downsample_labels(&labels, [1, 4, 4, 4], 2, DownMode::Max).unwrap();
        assert_eq!(near.iter().map(|&v| v as usize).sum::<usize>(), 0);
        assert_eq!(max[7], 1);
        assert_eq!(max.iter().map(|&v| v as usize).sum::<usize>(), 1);
        assert!(downsample_labels(&labels, [1, 4, 4, 4], 3, DownMode::Max).is_err());
    }
}
