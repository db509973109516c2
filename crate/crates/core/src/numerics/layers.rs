//! Parameterized building blocks shared by the feature-updating module and the
//! multimodal transformer.

use super::matrix::{Matrix, LAYER_NORM_EPS};
use super::params::{ParamId, ParamStore, SplitMix64};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Additive attention mask value for disallowed positions. Finite, and large
/// enough that `exp` underflows to exactly zero after max subtraction.
pub const MASKED: f64 = -1e30;

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    pub fn register(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Matrix::filled(1, width, 1.0))?,
            bias: store.add(format!("{name}.bias"), Matrix::zeros(1, width))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm_rows(x, g, b, LAYER_NORM_EPS)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl LinearParams {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut SplitMix64,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        with_bias: bool,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), rng.xavier(fan_in, fan_out))?;
        let bias = if with_bias {
            Some(store.add(format!("{name}.bias"), Matrix::zeros(1, fan_out))?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }
}

/// Post-norm transformer encoder layer: multi-head self-attention then a
/// GELU feed-forward of width `4 * width`, each wrapped in residual + LN.
#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub heads: usize,
    pub width: usize,
    pub query: LinearParams,
    /// No bias: a shared key offset moves every logit of a query row by the
    /// same amount and cannot change the attention weights.
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
    pub attn_norm: LayerNormParams,
    pub ff_in: LinearParams,
    pub ff_out: LinearParams,
    pub ff_norm: LayerNormParams,
}

impl EncoderLayerParams {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut SplitMix64,
        name: &str,
        width: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Argument(format!(
                "{name}: head count {heads} must divide width {width}"
            )));
        }
        let ff = 4 * width;
        Ok(Self {
            heads,
            width,
            query: LinearParams::register(store, rng, &format!("{name}.query"), width, width, true)?,
            key: LinearParams::register(store, rng, &format!("{name}.key"), width, width, false)?,
            value: LinearParams::register(store, rng, &format!("{name}.value"), width, width, true)?,
            output: LinearParams::register(store, rng, &format!("{name}.output"), width, width, true)?,
            attn_norm: LayerNormParams::register(store, &format!("{name}.attn_norm"), width)?,
            ff_in: LinearParams::register(store, rng, &format!("{name}.ff_in"), width, ff, true)?,
            ff_out: LinearParams::register(store, rng, &format!("{name}.ff_out"), ff, width, true)?,
            ff_norm: LayerNormParams::register(store, &format!("{name}.ff_norm"), width)?,
        })
    }

    /// `mask`, when given, is an additive LxL constant (0 or [`MASKED`]).
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var, mask: Option<Var>) -> Result<Var> {
        let (len, width) = tape.shape(x);
        if width != self.width {
            return Err(Error::shape("encoder layer input", (len, width), (len, self.width)));
        }
        let q = self.query.apply(tape, store, x)?;
        let k = self.key.apply(tape, store, x)?;
        let v = self.value.apply(tape, store, x)?;
        let head_dim = width / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
            let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
            let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let mut scores = tape.scale(scores, scale);
            if let Some(m) = mask {
                scores = tape.add(scores, m)?;
            }
            let probs = tape.softmax_rows(scores);
            outs.push(tape.matmul(probs, vh)?);
        }
        let heads = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)?
        };
        let attn = self.output.apply(tape, store, heads)?;
        let res = tape.add(x, attn)?;
        let h = self.attn_norm.apply(tape, store, res)?;

        let ff = self.ff_in.apply(tape, store, h)?;
        let ff = tape.gelu(ff);
        let ff = self.ff_out.apply(tape, store, ff)?;
        let res = tape.add(h, ff)?;
        self.ff_norm.apply(tape, store, res)
    }
}
