//! Handoff and satisfaction decoders.
//!
//! Handoff: an LSTM over the rows of `M` followed by a per-step softmax.
//! Satisfaction: input projection `d → k`, one causal transformer block, a
//! per-utterance softmax over satisfaction classes (`z_t`), and an importance
//! attention restricted to customer utterances that merges the `z_t`.

use rand::RngCore;

use crate::config::AggregationMode;
use crate::corpus::{HandoffLabel, Role, SatisfactionLabel, SentimentLabel};
use crate::error::{Error, Result};
use crate::layers::{Linear, Lstm, Norm};
use crate::numerics::{glorot_uniform, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct HandoffDecoderParams {
    pub lstm: Lstm,
    pub output: Linear,
}

impl HandoffDecoderParams {
    pub fn register(store: &mut ParamStore, dense: usize, hidden: usize, rng: &mut dyn RngCore) -> Result<Self> {
        Ok(HandoffDecoderParams {
            lstm: Lstm::register(store, "handoff.lstm", dense, hidden, rng)?,
            output: Linear::register(store, "handoff.output", hidden, HandoffLabel::COUNT, rng)?,
        })
    }
}

/// Post-norm transformer block with causal multi-head self-attention.
#[derive(Clone, Copy, Debug)]
pub struct TransformerBlock {
    pub query: Linear,
    /// Key projection, no bias.
    pub key: ParamId,
    pub value: Linear,
    pub out: Linear,
    pub norm_attn: Norm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm_ff: Norm,
    pub heads: usize,
}

impl TransformerBlock {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        ff_width: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Ok(TransformerBlock {
            query: Linear::register(store, &format!("{name}.query"), width, width, rng)?,
            key: store.register(format!("{name}.key.weight"), glorot_uniform(width, width, rng))?,
            value: Linear::register(store, &format!("{name}.value"), width, width, rng)?,
            out: Linear::register(store, &format!("{name}.out"), width, width, rng)?,
            norm_attn: Norm::register(store, &format!("{name}.norm_attn"), width)?,
            ff_in: Linear::register(store, &format!("{name}.ff_in"), width, ff_width, rng)?,
            ff_out: Linear::register(store, &format!("{name}.ff_out"), ff_width, width, rng)?,
            norm_ff: Norm::register(store, &format!("{name}.norm_ff"), width)?,
            heads,
        })
    }

    /// `x1 = LN(x + MHA(x))`, `out = LN(x1 + FFN(x1))`, attention past-inclusive.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let [l, width] = g.shape(x);
        let head_dim = width / self.heads;
        let q = self.query.forward(g, x);
        let wk = g.param(self.key);
        let k = g.matmul(x, wk);
        let v = self.value.forward(g, x);
        let mask = crate::interaction::past_inclusive_mask(l);
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * head_dim, head_dim);
            let kh = g.slice_cols(k, h * head_dim, head_dim);
            let vh = g.slice_cols(v, h * head_dim, head_dim);
            let scores = g.matmul_bt(qh, kh);
            let scores = g.scale(scores, scale);
            let attn = g.masked_softmax(scores, mask.clone());
            heads.push(g.matmul(attn, vh));
        }
        let joined = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        let attended = self.out.forward(g, joined);
        let res = g.add(x, attended);
        let x1 = self.norm_attn.forward(g, res);
        let hidden = self.ff_in.forward(g, x1);
        let hidden = g.relu(hidden);
        let ff = self.ff_out.forward(g, hidden);
        let res = g.add(x1, ff);
        self.norm_ff.forward(g, res)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SatisfactionDecoderParams {
    pub input_proj: Linear,
    pub block: TransformerBlock,
    /// `W_ξ`, `b_ξ`: local satisfaction classifier.
    pub local: Linear,
    /// `W_μ`, `b_μ`: importance scorer.
    pub importance: Linear,
    /// `g`: fixed importance query, `z x 1`.
    pub query: ParamId,
    /// Add sinusoidal position codes to the transformer input.
    pub positional_encoding: bool,
}

impl SatisfactionDecoderParams {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        dense: usize,
        hidden: usize,
        heads: usize,
        ff_width: usize,
        attention_units: usize,
        positional_encoding: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Ok(SatisfactionDecoderParams {
            input_proj: Linear::register(store, "satisfaction.input_proj", dense, hidden, rng)?,
            block: TransformerBlock::register(store, "satisfaction.transformer", hidden, heads, ff_width, rng)?,
            local: Linear::register(store, "satisfaction.local", hidden, SatisfactionLabel::COUNT, rng)?,
            importance: Linear::register(store, "satisfaction.importance", hidden, attention_units, rng)?,
            query: store.register("satisfaction.query", glorot_uniform(attention_units, 1, rng))?,
            positional_encoding,
        })
    }
}

/// `ŷ^h`: one row-stochastic `L x 2` matrix.
pub fn decode_handoff(g: &mut Graph, m: Var, params: &HandoffDecoderParams) -> Result<Var> {
    let input = g.store().get(params.lstm.w_input).rows();
    if g.shape(m)[1] != input {
        return Err(Error::contract(format!(
            "decode_handoff: M has width {}, expected {input}",
            g.shape(m)[1]
        )));
    }
    let states = params.lstm.run(g, m, false);
    let h = g.stack_rows(&states);
    let logits = params.output.forward(g, h);
    Ok(g.softmax(logits))
}

/// Nodes produced by [`decode_satisfaction`].
#[derive(Clone, Debug)]
pub struct SatisfactionOutput {
    pub q_hat: Var,
    /// `L x 3` local satisfaction distributions.
    pub z: Var,
    /// `1 x L` aggregation weights actually used for the differentiable estimate.
    pub alpha: Var,
    /// `1 x 3` differentiable dialogue estimate (training target).
    pub y: Var,
    /// Reported estimate; equals `y` except for voting, which is not differentiable.
    pub prediction: Vec<f64>,
}

/// Sinusoidal position codes: row `t` (0-based) holds
/// `sin(t / 10000^(2i/k))` in column `2i` and the matching cosine in `2i + 1`.
pub fn sinusoidal_positions(rows: usize, width: usize) -> Tensor {
    let mut out = Tensor::zeros(rows, width);
    for t in 0..rows {
        for c in 0..width {
            let freq = 10000f64.powf((c - c % 2) as f64 / width as f64);
            let angle = t as f64 / freq;
            out.set(t, c, if c % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    out
}

pub fn customer_positions(roles: &[Role]) -> Vec<usize> {
    roles
        .iter()
        .enumerate()
        .filter(|(_, r)| **r == Role::Customer)
        .map(|(i, _)| i)
        .collect()
}

/// Satisfaction decoder with the configured aggregation.
///
/// Voting is not differentiable, so in that mode `y` is the customer average
/// while `prediction` carries the one-hot vote.
pub fn decode_satisfaction(
    g: &mut Graph,
    q: Var,
    roles: &[Role],
    params: &SatisfactionDecoderParams,
    mode: AggregationMode,
) -> Result<SatisfactionOutput> {
    let [l, width] = g.shape(q);
    if roles.len() != l {
        return Err(Error::contract(format!(
            "decode_satisfaction: {} roles for {l} rows",
            roles.len()
        )));
    }
    let expected = g.store().get(params.input_proj.weight).rows();
    if width != expected {
        return Err(Error::contract(format!(
            "decode_satisfaction: Q has width {width}, expected {expected}"
        )));
    }
    let customers = customer_positions(roles);
    if customers.is_empty() {
        return Err(Error::data(
            "dialogue has no customer utterance; satisfaction cannot be estimated",
        ));
    }
    let mut x = params.input_proj.forward(g, q);
    if params.positional_encoding {
        let k = g.shape(x)[1];
        let pe = g.input(sinusoidal_positions(l, k));
        x = g.add(x, pe);
    }
    let q_hat = params.block.forward(g, x);
    let logits = params.local.forward(g, q_hat);
    let z = g.softmax(logits);

    let alpha = match mode {
        AggregationMode::Attention => {
            let e = params.importance.forward(g, q_hat);
            let e = g.tanh(e);
            let query = g.param(params.query);
            let scores = g.matmul(e, query);
            let scores = g.transpose(scores);
            let mask = roles.iter().map(|r| *r == Role::Customer).collect();
            g.masked_softmax(scores, mask)
        }
        AggregationMode::Average | AggregationMode::Voting => {
            let mut w = Tensor::zeros(1, l);
            for &c in &customers {
                w.set(0, c, 1.0 / customers.len() as f64);
            }
            g.input(w)
        }
        AggregationMode::Last => {
            let mut w = Tensor::zeros(1, l);
            w.set(0, *customers.last().unwrap(), 1.0);
            g.input(w)
        }
    };
    let y = g.matmul(alpha, z);
    let prediction = if mode == AggregationMode::Voting {
        aggregate_variant(g.value(z), roles, mode, None)?
    } else {
        g.value(y).data().to_vec()
    };
    Ok(SatisfactionOutput {
        q_hat,
        z,
        alpha,
        y,
        prediction,
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Merges local distributions `z` (one row per utterance) over customer rows.
///
/// `attention` weights are required for [`AggregationMode::Attention`] and
/// ignored otherwise.
pub fn aggregate_variant(
    z: &Tensor,
    roles: &[Role],
    mode: AggregationMode,
    attention: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if roles.len() != z.rows() {
        return Err(Error::contract(format!(
            "aggregate_variant: {} roles for {} rows",
            roles.len(),
            z.rows()
        )));
    }
    let customers = customer_positions(roles);
    if customers.is_empty() {
        return Err(Error::data("aggregation needs at least one customer utterance"));
    }
    let classes = z.cols();
    let mut out = vec![0.0; classes];
    match mode {
        AggregationMode::Attention => {
            let alpha = attention.ok_or_else(|| {
                Error::contract("attention aggregation needs attention weights")
            })?;
            if alpha.len() != z.rows() {
                return Err(Error::contract("attention weights length differs from z"));
            }
            for (t, a) in alpha.iter().enumerate() {
                for (o, v) in out.iter_mut().zip(z.row(t)) {
                    *o += a * v;
                }
            }
        }
        AggregationMode::Average => {
            for &t in &customers {
                for (o, v) in out.iter_mut().zip(z.row(t)) {
                    *o += v;
                }
            }
            let n = customers.len() as f64;
            out.iter_mut().for_each(|o| *o /= n);
        }
        AggregationMode::Voting => {
            let mut votes = vec![0usize; classes];
            for &t in &customers {
                votes[argmax(z.row(t))] += 1;
            }
            let mut best = 0;
            for (i, v) in votes.iter().enumerate() {
                if *v > votes[best] {
                    best = i;
                }
            }
            out[best] = 1.0;
        }
        AggregationMode::Last => {
            out.copy_from_slice(z.row(*customers.last().unwrap()));
        }
    }
    Ok(out)
}

/// Sentiment of each customer utterance from its local satisfaction
/// distribution: `(0-based position, sentiment)`.
pub fn map_sentiment(z: &Tensor, roles: &[Role]) -> Vec<(usize, SentimentLabel)> {
    customer_positions(roles)
        .into_iter()
        .filter(|&t| t < z.rows())
        .map(|t| {
            let class = SatisfactionLabel::from_index(argmax(z.row(t))).expect("three classes");
            (t, class.sentiment())
        })
        .collect()
}
