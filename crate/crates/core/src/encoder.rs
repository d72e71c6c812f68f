//! Shared utterance and matching encoder.
//!
//! Each utterance is read by a word-level BiLSTM; `v_t` concatenates the
//! final forward and final backward hidden states. Row `t` of the shared
//! representation is `[v_t · v_1, …, v_t · v_{t−1}, 0, …, 0 ; v_t]`, the
//! matching block zero-padded to the configured maximum dialogue length.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::layers::{Dropout, Lstm};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct EncoderParams {
    pub embedding: ParamId,
    pub forward: Lstm,
    pub backward: Lstm,
}

impl EncoderParams {
    pub fn register(
        store: &mut ParamStore,
        embeddings: Tensor,
        hidden: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let dim = embeddings.cols();
        let embedding = store.register("encoder.embedding", embeddings)?;
        let forward = Lstm::register(store, "encoder.lstm_fwd", dim, hidden, rng)?;
        let backward = Lstm::register(store, "encoder.lstm_bwd", dim, hidden, rng)?;
        Ok(EncoderParams {
            embedding,
            forward,
            backward,
        })
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden
    }
}

/// `v_t`: final forward and backward BiLSTM states, `1 x 2k`.
pub fn encode_utterance(
    g: &mut Graph,
    token_ids: &[usize],
    params: &EncoderParams,
    dropout: Option<&mut Dropout>,
) -> Result<Var> {
    if token_ids.is_empty() {
        return Err(Error::contract("encode_utterance: empty token list"));
    }
    let vocab = g.store().get(params.embedding).rows();
    if let Some(&bad) = token_ids.iter().find(|&&i| i >= vocab) {
        return Err(Error::contract(format!(
            "token index {bad} outside vocabulary of size {vocab}"
        )));
    }
    let mut e = g.embed(params.embedding, token_ids);
    if let Some(d) = dropout {
        e = d.apply(g, e);
    }
    let fwd = params.forward.run(g, e, false);
    let bwd = params.backward.run(g, e, true);
    let last_f = *fwd.last().expect("non-empty");
    let last_b = *bwd.last().expect("non-empty");
    Ok(g.concat_cols(&[last_f, last_b]))
}

/// Strictly lower-triangular dot products of the rows of `v`, padded to `max_len` columns.
pub fn matching_features(g: &mut Graph, v: Var, max_len: usize) -> Result<Var> {
    let l = g.shape(v)[0];
    if l > max_len {
        return Err(Error::contract(format!(
            "dialogue length {l} exceeds maximum {max_len}"
        )));
    }
    let dots = g.matmul_bt(v, v);
    let mut mask = Tensor::zeros(l, l);
    for t in 0..l {
        for j in 0..t {
            mask.set(t, j, 1.0);
        }
    }
    let lower = g.mul_const(dots, mask);
    Ok(if max_len > l {
        g.pad_cols(lower, max_len)
    } else {
        lower
    })
}

/// Encodes every utterance and returns `H` (which equals `S` at this stage),
/// shaped `L x (max_len + 2k)`.
pub fn shared_encode(
    g: &mut Graph,
    utterances: &[Vec<usize>],
    params: &EncoderParams,
    max_len: usize,
    mut dropout: Option<&mut Dropout>,
) -> Result<Var> {
    if utterances.is_empty() {
        return Err(Error::contract("shared_encode: dialogue has no utterances"));
    }
    if utterances.len() > max_len {
        return Err(Error::contract(format!(
            "dialogue length {} exceeds maximum {max_len}",
            utterances.len()
        )));
    }
    let mut rows = Vec::with_capacity(utterances.len());
    for u in utterances {
        rows.push(encode_utterance(g, u, params, dropout.as_deref_mut())?);
    }
    let v = g.stack_rows(&rows);
    let matching = matching_features(g, v, max_len)?;
    Ok(g.concat_cols(&[matching, v]))
}

/// Forward values of the shared encoder for one dialogue.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedRepresentation {
    pub h: Tensor,
    pub s: Tensor,
    pub max_len: usize,
}

pub fn shared_representation(
    store: &ParamStore,
    utterances: &[Vec<usize>],
    params: &EncoderParams,
    max_len: usize,
) -> Result<SharedRepresentation> {
    let mut g = Graph::new(store);
    let h = shared_encode(&mut g, utterances, params, max_len, None)?;
    let h = g.value(h).clone();
    Ok(SharedRepresentation {
        s: h.clone(),
        h,
        max_len,
    })
}
