use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a registered parameter block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable blocks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!(
                "parameter block `{name}` registered twice"
            )));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// `‖Θ‖²` over every block.
    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(Tensor::sum_squares).sum()
    }
}

/// Glorot/Xavier uniform sample for a `fan_in x fan_out` weight matrix.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches by construction")
}

/// Gradient of one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub enum GradBlock {
    Dense(Tensor),
    /// Row-sparse gradient, used for embedding tables.
    Rows {
        rows: usize,
        cols: usize,
        entries: BTreeMap<usize, Vec<f64>>,
    },
}

impl GradBlock {
    pub fn to_dense(&self) -> Tensor {
        match self {
            GradBlock::Dense(t) => t.clone(),
            GradBlock::Rows {
                rows,
                cols,
                entries,
            } => {
                let mut t = Tensor::zeros(*rows, *cols);
                for (r, vals) in entries {
                    t.row_mut(*r).copy_from_slice(vals);
                }
                t
            }
        }
    }

    fn add(&mut self, other: &GradBlock) {
        match (self, other) {
            (GradBlock::Dense(a), GradBlock::Dense(b)) => a.add_assign(b),
            (GradBlock::Dense(a), GradBlock::Rows { entries, .. }) => {
                for (r, vals) in entries {
                    for (x, y) in a.row_mut(*r).iter_mut().zip(vals) {
                        *x += y;
                    }
                }
            }
            (
                GradBlock::Rows { entries: a, .. },
                GradBlock::Rows { entries: b, .. },
            ) => {
                for (r, vals) in b {
                    let row = a.entry(*r).or_insert_with(|| vec![0.0; vals.len()]);
                    for (x, y) in row.iter_mut().zip(vals) {
                        *x += y;
                    }
                }
            }
            (this @ GradBlock::Rows { .. }, GradBlock::Dense(b)) => {
                let mut dense = this.to_dense();
                dense.add_assign(b);
                *this = GradBlock::Dense(dense);
            }
        }
    }

    fn scale(&mut self, s: f64) {
        match self {
            GradBlock::Dense(t) => t.scale_assign(s),
            GradBlock::Rows { entries, .. } => {
                for v in entries.values_mut().flatten() {
                    *v *= s;
                }
            }
        }
    }

    fn sum_squares(&self) -> f64 {
        match self {
            GradBlock::Dense(t) => t.sum_squares(),
            GradBlock::Rows { entries, .. } => entries.values().flatten().map(|v| v * v).sum(),
        }
    }
}

/// Per-block gradients, indexed by [`ParamId`]. Blocks untouched by a
/// computation stay `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    blocks: Vec<Option<GradBlock>>,
}

impl Gradients {
    pub fn new(num_blocks: usize) -> Self {
        Gradients {
            blocks: vec![None; num_blocks],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&GradBlock> {
        self.blocks.get(id.0).and_then(Option::as_ref)
    }

    /// Dense copy of a block's gradient (zeros if untouched).
    pub fn dense(&self, id: ParamId, store: &ParamStore) -> Tensor {
        match self.get(id) {
            Some(b) => b.to_dense(),
            None => {
                let p = store.get(id);
                Tensor::zeros(p.rows(), p.cols())
            }
        }
    }

    pub(crate) fn accumulate_dense(&mut self, id: ParamId, g: &Tensor) {
        self.accumulate(id, GradBlock::Dense(g.clone()));
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: GradBlock) {
        if self.blocks.len() <= id.0 {
            self.blocks.resize(id.0 + 1, None);
        }
        match &mut self.blocks[id.0] {
            Some(existing) => existing.add(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Adds every block of `other` into `self`.
    pub fn add_assign(&mut self, other: &Gradients) {
        for (i, b) in other.blocks.iter().enumerate() {
            if let Some(b) = b {
                self.accumulate(ParamId(i), b.clone());
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in self.blocks.iter_mut().flatten() {
            b.scale(s);
        }
    }

    /// Adds `2·δ·θ` for every block (gradient of `δ‖Θ‖²`).
    pub fn add_weight_decay(&mut self, store: &ParamStore, delta: f64) {
        if delta == 0.0 {
            return;
        }
        for (id, _, value) in store.iter() {
            let mut g = value.clone();
            g.scale_assign(2.0 * delta);
            self.accumulate(id, GradBlock::Dense(g));
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .map(GradBlock::sum_squares)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|b| match b {
            GradBlock::Dense(t) => t.is_finite(),
            GradBlock::Rows { entries, .. } => entries.values().flatten().all(|v| v.is_finite()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.register("w", Tensor::zeros(1, 1)).unwrap();
        assert!(s.register("w", Tensor::zeros(1, 1)).is_err());
    }

    #[test]
    fn glorot_within_limit() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t = glorot_uniform(10, 20, &mut rng);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= limit));
        assert!(t.data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn sparse_and_dense_accumulate() {
        let mut g = Gradients::new(1);
        let mut entries = BTreeMap::new();
        entries.insert(1, vec![1.0, 2.0]);
        g.accumulate(
            ParamId(0),
            GradBlock::Rows {
                rows: 3,
                cols: 2,
                entries: entries.clone(),
            },
        );
        g.accumulate(
            ParamId(0),
            GradBlock::Rows {
                rows: 3,
                cols: 2,
                entries,
            },
        );
        g.accumulate_dense(ParamId(0), &Tensor::filled(3, 2, 1.0));
        let d = g.get(ParamId(0)).unwrap().to_dense();
        assert_eq!(d.data(), &[1.0, 1.0, 3.0, 5.0, 1.0, 1.0]);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = Gradients::new(1);
        g.accumulate_dense(ParamId(0), &Tensor::row_vector(vec![3.0, 4.0]));
        assert_eq!(g.clip_global_norm(1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
