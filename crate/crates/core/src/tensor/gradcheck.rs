//! Central finite-difference checks of [`Graph::backward`].

use super::array::Tensor;
use super::graph::{Graph, Var};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-4;

/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are judged by absolute error instead.
pub const DEFAULT_REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// `(input, element)` of the worst relative error.
    pub worst: Option<(usize, usize)>,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(inputs: &[Tensor<f64>], f: &F, track: bool) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| if track { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::shape("gradcheck", "function must return a single value"));
    }
    Ok((g, vars, out))
}

/// Compare backprop gradients of the scalar `f(inputs)` with central
/// differences. `limit` caps the number of elements probed per input
/// (evenly strided); `None` probes every element.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], step: f64, floor: f64, limit: Option<usize>, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (g, vars, out) = evaluate(inputs, &f, true)?;
    let grads = g.backward(out)?;
    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let n = inputs[k].len();
        let zeros = Tensor::zeros(inputs[k].shape());
        let analytic = grads.get(*v).unwrap_or(&zeros);
        let stride = limit.map_or(1, |l| n.div_ceil(l.max(1)).max(1));
        for i in (0..n).step_by(stride) {
            let x0 = inputs[k].data()[i];
            probe[k].data_mut()[i] = x0 + step;
            let plus = evaluate(&probe, &f, false)?;
            let fp = plus.0.value(plus.2).item();
            probe[k].data_mut()[i] = x0 - step;
            let minus = evaluate(&probe, &f, false)?;
            let fm = minus.0.value(minus.2).item();
            probe[k].data_mut()[i] = x0;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.data()[i];
            let rel = relative_error(a, numeric, floor);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((k, i));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form() {
        let x = Tensor::from_vec([1, 1, 1, 1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let r = check_gradients(&[x], DEFAULT_STEP, DEFAULT_REL_FLOOR, None, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.inner(sq, v[0])
        })
        .unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    #[test]
    fn detects_wrong_gradient() {
        assert!(relative_error(1.0, 1.1, 1e-6) > 0.09);
        assert_eq!(relative_error(0.0, 1e-9, 1e-6), 1e-3);
    }
}
