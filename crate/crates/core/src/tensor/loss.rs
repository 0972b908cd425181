//! Segmentation losses on probability maps.

use super::array::Tensor;
use super::scalar::Scalar;
use crate::error::{Error, Result};

pub const DEFAULT_DICE_EPS: f64 = 1e-5;

/// Probabilities below this are clamped inside the logarithm.
const PROB_FLOOR: f64 = 1e-37;

fn check_pair<T: Scalar>(op: &'static str, prob: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if prob.shape() != target.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", prob.shape(), target.shape())));
    }
    if prob.channels() < 2 {
        return Err(Error::shape(op, "need at least two classes"));
    }
    Ok(())
}

/// One-hot encode labels laid out as `(batch, depth, height, width)`.
pub fn one_hot<T: Scalar>(labels: &[u8], shape: [usize; 4], classes: usize) -> Result<Tensor<T>> {
    let [b, d, h, w] = shape;
    let v = d * h * w;
    if labels.len() != b * v {
        return Err(Error::shape("one_hot", format!("{} labels for {shape:?}", labels.len())));
    }
    let mut t = Tensor::zeros([b, classes, d, h, w]);
    for bi in 0..b {
        for i in 0..v {
            let c = labels[bi * v + i] as usize;
            if c >= classes {
                return Err(Error::Input(format!("label {c} outside 0..{classes}")));
            }
            t.plane_mut(bi, c)[i] = T::ONE;
        }
    }
    Ok(t)
}

/// Neumaier-compensated running sum. Loss values feed finite-difference
/// checks, where summation noise over many voxels would swamp small gradients.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Per-foreground-channel sums `(sum p*g, sum p, sum g)` over batch and space.
fn dice_terms<T: Scalar>(prob: &Tensor<T>, target: &Tensor<T>) -> Vec<(f64, f64, f64)> {
    (1..prob.channels())
        .map(|c| {
            let (mut i, mut sp, mut sg) = (Compensated::default(), Compensated::default(), Compensated::default());
            for b in 0..prob.batch() {
                for (&p, &g) in prob.plane(b, c).iter().zip(target.plane(b, c)) {
                    let (p, g) = (p.to_f64(), g.to_f64());
                    i.add(p * g);
                    sp.add(p);
                    sg.add(g);
                }
            }
            (i.value(), sp.value(), sg.value())
        })
        .collect()
}

/// `1 - mean_c (2 sum p g + eps) / (sum p + sum g + eps)` over foreground channels,
/// with sums taken over the whole batch.
pub fn dice_loss<T: Scalar>(prob: &Tensor<T>, target: &Tensor<T>, eps: f64) -> Result<T> {
    check_pair("dice_loss", prob, target)?;
    let terms = dice_terms(prob, target);
    let mean = terms
        .iter()
        .map(|&(i, sp, sg)| (2.0 * i + eps) / (sp + sg + eps))
        .sum::<f64>()
        / terms.len() as f64;
    Ok(T::from_f64(1.0 - mean))
}

pub fn dice_loss_backward<T: Scalar>(prob: &Tensor<T>, target: &Tensor<T>, eps: f64, dl: T) -> Tensor<T> {
    let terms = dice_terms(prob, target);
    let k = terms.len() as f64;
    let mut dp = Tensor::zeros(prob.shape());
    for (ci, &(i, sp, sg)) in terms.iter().enumerate() {
        let c = ci + 1;
        let den = sp + sg + eps;
        let num = 2.0 * i + eps;
        for b in 0..prob.batch() {
            let g = target.plane(b, c).to_vec();
            for (o, gv) in dp.plane_mut(b, c).iter_mut().zip(g) {
                let d = (2.0 * gv.to_f64() * den - num) / (den * den);
                *o = T::from_f64(-d / k) * dl;
            }
        }
    }
    dp
}

/// Mean negative log-probability of the target class over all voxels.
pub fn ce_loss<T: Scalar>(prob: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    check_pair("ce_loss", prob, target)?;
    let n = (prob.batch() * prob.voxels()) as f64;
    let mut total = Compensated::default();
    for (&p, &g) in prob.data().iter().zip(target.data()) {
        if g != T::ZERO {
            total.add(-g.to_f64() * p.to_f64().max(PROB_FLOOR).ln());
        }
    }
    Ok(T::from_f64(total.value() / n))
}

pub fn ce_loss_backward<T: Scalar>(prob: &Tensor<T>, target: &Tensor<T>, dl: T) -> Tensor<T> {
    let n = (prob.batch() * prob.voxels()) as f64;
    let mut dp = Tensor::zeros(prob.shape());
    for ((o, &p), &g) in dp.data_mut().iter_mut().zip(prob.data()).zip(target.data()) {
        if g != T::ZERO {
            *o = T::from_f64(-g.to_f64() / (n * p.to_f64().max(PROB_FLOOR))) * dl;
        }
    }
    dp
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target() -> Tensor<f64> {
        one_hot(&[0, 1, 1, 0, 1, 0], [1, 1, 2, 3], 2).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = target();
        assert!(dice_loss(&g, &g, DEFAULT_DICE_EPS).unwrap().abs() < 1e-12);
        assert_eq!(ce_loss(&g, &g).unwrap(), 0.0);
    }

    #[test]
    fn uniform_prediction_costs_ln2() {
        let g = target();
        let p = Tensor::full(g.shape(), 0.5);
        assert!((ce_loss(&p, &g).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        // 2 * 1.5 / (3 + 3) = 0.5 without eps
        assert!((dice_loss(&p, &g, 0.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn one_hot_rejects_out_of_range_labels() {
        assert!(one_hot::<f64>(&[0, 2], [1, 1, 1, 2], 2).is_err());
        assert!(one_hot::<f64>(&[0], [1, 1, 1, 2], 2).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let g = target();
        let p = Tensor::<f64>::full([1, 2, 1, 3, 2], 0.5);
        assert!(dice_loss(&p, &g, 1e-5).is_err());
        assert!(ce_loss(&p, &g).is_err());
    }
}
