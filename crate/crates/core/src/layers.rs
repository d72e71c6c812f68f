//! Parameterized building blocks shared by the encoder and decoders.

use rand::{Rng, RngCore};

use crate::error::Result;
use crate::numerics::{glorot_uniform, Graph, ParamId, ParamStore, Tensor, Var};

/// Affine map `x · w + b` with `w: in x out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Ok(Linear {
            weight: store.register(format!("{name}.weight"), glorot_uniform(input, output, rng))?,
            bias: store.register(format!("{name}.bias"), Tensor::zeros(1, output))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        g.affine(x, self.weight, self.bias)
    }
}

/// Layer-norm gain (ones) and bias (zeros).
#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn register(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(Norm {
            gain: store.register(format!("{name}.gain"), Tensor::filled(1, width, 1.0))?,
            bias: store.register(format!("{name}.bias"), Tensor::zeros(1, width))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, crate::numerics::LAYER_NORM_EPS)
    }
}

/// Unidirectional LSTM with gates ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        Ok(Lstm {
            w_input: store.register(format!("{name}.w_input"), glorot_uniform(input, 4 * hidden, rng))?,
            w_hidden: store.register(format!("{name}.w_hidden"), glorot_uniform(hidden, 4 * hidden, rng))?,
            bias: store.register(format!("{name}.bias"), Tensor::zeros(1, 4 * hidden))?,
            hidden,
        })
    }

    /// Runs over the rows of `x` from a zero state, in reverse order when
    /// `reverse` is set. Returns hidden states in processing order.
    pub fn run(&self, g: &mut Graph, x: Var, reverse: bool) -> Vec<Var> {
        let steps = g.shape(x)[0];
        let proj = g.affine(x, self.w_input, self.bias);
        let w_hidden = g.param(self.w_hidden);
        let mut h = g.input(Tensor::zeros(1, self.hidden));
        let mut c = g.input(Tensor::zeros(1, self.hidden));
        let mut out = Vec::with_capacity(steps);
        for s in 0..steps {
            let t = if reverse { steps - 1 - s } else { s };
            let row = g.row(proj, t);
            // skip the recurrent product while the state is exactly zero
            let pre = if s == 0 {
                row
            } else {
                let rec = g.matmul(h, w_hidden);
                g.add(row, rec)
            };
            let hc = g.lstm_cell(pre, c);
            h = g.slice_cols(hc, 0, self.hidden);
            c = g.slice_cols(hc, self.hidden, self.hidden);
            out.push(h);
        }
        out
    }
}

/// Inverted dropout driven by a private RNG stream.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut dyn RngCore,
}

impl Dropout<'_> {
    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Var {
        if self.rate <= 0.0 {
            return x;
        }
        let [r, c] = g.shape(x);
        let keep = 1.0 - self.rate;
        let data = (0..r * c)
            .map(|_| if self.rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
            .collect();
        g.mul_const(x, Tensor::from_vec(r, c, data).expect("shape"))
    }
}
