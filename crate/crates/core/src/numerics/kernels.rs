//! Value-level primitives shared by the differentiable graph and by callers
//! that only need forward results.

use crate::error::{Error, Result};

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax over the allowed positions of `scores`; disallowed positions get 0.
///
/// A row with no allowed position yields the all-zero vector.
pub fn masked_softmax(scores: &[f64], allowed: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != allowed.len() {
        return Err(Error::contract(format!(
            "masked_softmax: {} scores but {} mask entries",
            scores.len(),
            allowed.len()
        )));
    }
    let mut out = vec![0.0; scores.len()];
    masked_softmax_into(scores, allowed, &mut out);
    Ok(out)
}

pub(crate) fn masked_softmax_into(scores: &[f64], allowed: &[bool], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (s, &a) in scores.iter().zip(allowed) {
        if a && *s > max {
            max = *s;
        }
    }
    if max == f64::NEG_INFINITY {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut total = 0.0;
    for ((o, s), &a) in out.iter_mut().zip(scores).zip(allowed) {
        if a {
            *o = (s - max).exp();
            total += *o;
        } else {
            *o = 0.0;
        }
    }
    for (o, &a) in out.iter_mut().zip(allowed) {
        if a {
            *o /= total;
        }
    }
}

/// `gain ⊙ (x − mean) / sqrt(var + eps) + bias` with population variance.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.is_empty() || gain.len() != x.len() || bias.len() != x.len() {
        return Err(Error::contract(format!(
            "layer_norm: x has {} entries, gain {}, bias {}",
            x.len(),
            gain.len(),
            bias.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    layer_norm_into(x, gain, bias, eps, &mut out, &mut xhat);
    Ok(out)
}

/// Writes the normalized row and its standardized form; returns `1/σ`.
pub(crate) fn layer_norm_into(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    eps: f64,
    out: &mut [f64],
    xhat: &mut [f64],
) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * inv_std;
        out[i] = gain[i] * xhat[i] + bias[i];
    }
    inv_std
}

/// Weights of one LSTM cell in row-vector layout.
///
/// Gate pre-activations are `x · w_input + h · w_hidden + bias`, with the four
/// gate blocks ordered input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmWeights<'a> {
    pub w_input: &'a [f64],
    pub w_hidden: &'a [f64],
    pub bias: &'a [f64],
    pub input_dim: usize,
    pub hidden: usize,
}

/// One forward step of a standard LSTM cell.
pub fn lstm_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    w: &LstmWeights<'_>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = w.hidden;
    if x.len() != w.input_dim
        || h_prev.len() != k
        || c_prev.len() != k
        || w.w_input.len() != w.input_dim * 4 * k
        || w.w_hidden.len() != k * 4 * k
        || w.bias.len() != 4 * k
    {
        return Err(Error::contract(format!(
            "lstm_step: inconsistent shapes (x {}, h {}, c {}, input_dim {}, hidden {k})",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            w.input_dim
        )));
    }
    let mut gates = w.bias.to_vec();
    super::tensor::matmul_into(x, w.w_input, &mut gates, 1, w.input_dim, 4 * k);
    super::tensor::matmul_into(h_prev, w.w_hidden, &mut gates, 1, k, 4 * k);
    let mut h = vec![0.0; k];
    let mut c = vec![0.0; k];
    for j in 0..k {
        let i = sigmoid(gates[j]);
        let f = sigmoid(gates[k + j]);
        let g = gates[2 * k + j].tanh();
        let o = sigmoid(gates[3 * k + j]);
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_uniform_for_equal_scores() {
        let p = masked_softmax(&[1.0, 1.0, 1.0], &[true; 3]).unwrap();
        assert!(close(&p, &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn softmax_ln2_ratio() {
        let p = masked_softmax(&[0.0, 2f64.ln()], &[true, true]).unwrap();
        assert!(close(&p, &[1.0 / 3.0, 2.0 / 3.0], 1e-15));
    }

    #[test]
    fn softmax_empty_support_is_zero() {
        let p = masked_softmax(&[5.0, 9.0], &[false, false]).unwrap();
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn softmax_length_mismatch() {
        assert!(matches!(
            masked_softmax(&[1.0, 2.0], &[true]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn softmax_ignores_masked_magnitudes() {
        let p = masked_softmax(&[0.0, 1e300, 0.0], &[true, false, true]).unwrap();
        assert_eq!(p, vec![0.5, 0.0, 0.5]);
    }

    #[test]
    fn layer_norm_examples() {
        let y = layer_norm(&[1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0], LAYER_NORM_EPS).unwrap();
        // variance 1, so the eps shifts the result by ~5e-6
        assert!(close(&y, &[1.0, -1.0], 1e-5));
        let y = layer_norm(&[2.0, 2.0], &[1.0, 1.0], &[0.0, 0.0], LAYER_NORM_EPS).unwrap();
        assert!(close(&y, &[0.0, 0.0], 1e-12));
        let y = layer_norm(&[0.0, 2.0], &[1.0, 1.0], &[1.0, 1.0], LAYER_NORM_EPS).unwrap();
        assert!(close(&y, &[0.0, 2.0], 1e-5));
        assert!(layer_norm(&[1.0], &[1.0, 1.0], &[0.0], LAYER_NORM_EPS).is_err());
    }

    #[test]
    fn lstm_zero_params() {
        let k = 3;
        let wi = vec![0.0; 2 * 4 * k];
        let wh = vec![0.0; k * 4 * k];
        let b = vec![0.0; 4 * k];
        let w = LstmWeights {
            w_input: &wi,
            w_hidden: &wh,
            bias: &b,
            input_dim: 2,
            hidden: k,
        };
        let (h, c) = lstm_step(&[0.0, 0.0], &[0.0; 3], &[0.0; 3], &w).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(c, vec![0.0; 3]);

        // gates all 0.5, candidate 0: c = 0.5 * c_prev, h = 0.5 * tanh(c)
        let (h, c) = lstm_step(&[0.7, -2.0], &[0.0; 3], &[1.0; 3], &w).unwrap();
        assert!(close(&c, &[0.5; 3], 1e-15));
        assert!(close(&h, &[0.5 * 0.5f64.tanh(); 3], 1e-15));

        assert!(lstm_step(&[0.0], &[0.0; 3], &[0.0; 3], &w).is_err());
    }
}
