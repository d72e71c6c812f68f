//! Finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tol: f64,
    pub blocks: Vec<BlockCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }

    pub fn worst_block(&self) -> Option<&BlockCheck> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Entries sampled per block; blocks smaller than this are checked in full.
    pub samples_per_block: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tol: 1e-4,
            samples_per_block: 24,
            seed: 0,
        }
    }
}

/// `|a − n| / max(|a|, |n|, 1e−8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the gradients returned by `loss` against central differences.
///
/// `loss` must be deterministic and return `(value, gradients)` for the
/// parameters it is given. `store` is restored before returning.
pub fn grad_check<F>(store: &mut ParamStore, loss: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Gradients)>,
{
    let (base, analytic) = loss(store)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!(
            "gradient check aborted: loss is {base} at the unperturbed point"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut blocks = Vec::new();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let dense = analytic.dense(id, store);
        let n = store.get(id).len();
        let picks: Vec<usize> = if n <= opts.samples_per_block {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, opts.samples_per_block).into_vec();
            v.sort_unstable();
            v
        };
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for &i in &picks {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + opts.eps;
            let plus = loss(store).map(|r| r.0);
            store.get_mut(id).data_mut()[i] = orig - opts.eps;
            let minus = loss(store).map(|r| r.0);
            store.get_mut(id).data_mut()[i] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "gradient check aborted: non-finite loss perturbing {}[{i}]",
                    store.name(id)
                )));
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = dense.data()[i];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        blocks.push(BlockCheck {
            name: store.name(id).to_string(),
            checked: picks.len(),
            max_rel_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    let max_rel_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        eps: opts.eps,
        tol: opts.tol,
        blocks,
        max_rel_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Graph, Tensor};

    #[test]
    fn sum_of_squares_is_exact() {
        let mut s = ParamStore::new();
        let id = s
            .register("theta", Tensor::row_vector(vec![0.5, -1.5, 2.0]))
            .unwrap();
        let report = grad_check(
            &mut s,
            |store| {
                let mut g = Graph::new(store);
                let x = g.param(id);
                let sq = g.mul(x, x);
                let r = g.sum(sq);
                Ok((g.scalar(r), g.backward(r)))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert!(report.passed());
        assert_eq!(report.blocks[0].checked, 3);
    }

    #[test]
    fn nan_loss_aborts() {
        let mut s = ParamStore::new();
        s.register("theta", Tensor::zeros(1, 2)).unwrap();
        let r = grad_check(
            &mut s,
            |store| Ok((f64::NAN, Gradients::new(store.len()))),
            &GradCheckOptions::default(),
        );
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let mut s = ParamStore::new();
        let id = s.register("theta", Tensor::row_vector(vec![1.0, 2.0])).unwrap();
        let report = grad_check(
            &mut s,
            |store| {
                let mut g = Graph::new(store);
                let x = g.param(id);
                let sq = g.mul(x, x);
                let r = g.sum(sq);
                let mut grads = g.backward(r);
                grads.scale(1.1);
                Ok((g.scalar(r), grads))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passed());
        assert_eq!(s.get(id).data(), &[1.0, 2.0]);
    }
}
