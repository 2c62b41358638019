//! Parameterised building blocks recorded on a [`Tape`].

use std::sync::Arc;

use rand::Rng;

use super::{Blocks, NumericsError, ParamId, ParamSet, Real, Tape, Tensor, Var};

/// Affine map `x W + b` applied to every row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let weight = params.add_glorot(format!("{name}.w"), in_dim, out_dim, rng);
        let bias = params.add_zeros(format!("{name}.b"), 1, out_dim);
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NumericsError> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }

    pub fn scalar_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Hidden and cell state, each `[batch x hidden]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// Standard LSTM cell with gate order input, forget, candidate, output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LstmCell {
    pub input: Linear,
    pub recurrent: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(params: &mut ParamSet, name: &str, in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let input = Linear::new(params, &format!("{name}.x"), in_dim, 4 * hidden, rng);
        // Forget-gate bias starts at 1.
        let bias = params.get_mut(input.bias);
        for j in hidden..2 * hidden {
            bias.data_mut()[j] = 1.0;
        }
        let recurrent = params.add_glorot(format!("{name}.h"), hidden, 4 * hidden, rng);
        Self { input, recurrent, hidden }
    }

    pub fn zero_state(&self, tape: &mut Tape, batch: usize) -> LstmState {
        let h = tape.constant(Tensor::zeros(batch, self.hidden));
        let c = tape.constant(Tensor::zeros(batch, self.hidden));
        LstmState { h, c }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, state: LstmState) -> Result<LstmState, NumericsError> {
        let hs = self.hidden;
        let xg = self.input.forward(tape, x)?;
        let u = tape.param(self.recurrent);
        let hg = tape.matmul(state.h, u)?;
        let gates = tape.add(xg, hg)?;
        let i = tape.slice_cols(gates, 0, hs)?;
        let f = tape.slice_cols(gates, hs, hs)?;
        let g = tape.slice_cols(gates, 2 * hs, hs)?;
        let o = tape.slice_cols(gates, 3 * hs, hs)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, state.c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    pub fn scalar_count(&self) -> usize {
        self.input.scalar_count() + self.hidden * 4 * self.hidden
    }
}

/// Single-layer scaled dot-product self-attention with learned query, key
/// and value projections and no positional encoding. Rows attend within
/// their own block only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfAttention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub in_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
}

impl SelfAttention {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        key_dim: usize,
        value_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let query = params.add_glorot(format!("{name}.q"), in_dim, key_dim, rng);
        let key = params.add_glorot(format!("{name}.k"), in_dim, key_dim, rng);
        let value = params.add_glorot(format!("{name}.v"), in_dim, value_dim, rng);
        Self { query, key, value, in_dim, key_dim, value_dim }
    }

    pub fn forward(&self, tape: &mut Tape, seq: Var, blocks: &Arc<Blocks>) -> Result<Var, NumericsError> {
        let (wq, wk, wv) = (tape.param(self.query), tape.param(self.key), tape.param(self.value));
        let q = tape.matmul(seq, wq)?;
        let k = tape.matmul(seq, wk)?;
        let v = tape.matmul(seq, wv)?;
        tape.block_attention(q, k, v, blocks, 1.0 / (self.key_dim as Real).sqrt())
    }

    pub fn scalar_count(&self) -> usize {
        self.in_dim * (2 * self.key_dim + self.value_dim)
    }
}
