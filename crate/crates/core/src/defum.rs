//! Depth-enhanced feature updating.
//!
//! Object and OCR appearance features are stacked (objects first) and passed
//! through a self-attention stage whose logits are biased by the relative
//! depth matrix `R`:
//!
//! ```text
//! Q, K, V = x W_Q, x W_K, x W_V
//! x_vti   = LN(x + softmax(Q K^T / sqrt(d) + R) V)
//! ```
//!
//! followed by `N >= 1` standard encoder layers. The output splits back into
//! updated object rows and updated OCR rows.

use crate::depthgeom::{relative_depth_matrix, DepthValue};
use crate::error::{Error, Result};
use crate::numerics::layers::{EncoderLayerParams, LayerNormParams};
use crate::numerics::{Matrix, ParamId, ParamStore, SplitMix64, Tape, Var};

#[derive(Debug, Clone)]
pub struct DefumParams {
    pub width: usize,
    /// Heads in the depth-biased stage; 1 unless configured otherwise. `R`
    /// is added to every head's logits.
    pub depth_heads: usize,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub norm: LayerNormParams,
    pub layers: Vec<EncoderLayerParams>,
}

/// Stacks object rows above OCR rows.
pub fn concat_visual(tape: &mut Tape, x_of: Var, x_tf: Var) -> Result<Var> {
    let (so, st) = (tape.shape(x_of), tape.shape(x_tf));
    if so.0 == 0 || st.0 == 0 {
        return Err(Error::Argument(format!(
            "feature updating needs at least one object and one OCR token, got {} and {}",
            so.0, st.0
        )));
    }
    if so.1 != st.1 {
        return Err(Error::shape("concat_visual", so, st));
    }
    tape.concat_rows(&[x_of, x_tf])
}

impl DefumParams {
    pub fn register(
        store: &mut ParamStore,
        rng: &mut SplitMix64,
        width: usize,
        layers: usize,
        heads: usize,
        depth_heads: usize,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Argument(
                "feature updating needs at least one encoder layer".into(),
            ));
        }
        if depth_heads == 0 || width % depth_heads != 0 {
            return Err(Error::Argument(format!(
                "depth-aware head count {depth_heads} must divide width {width}"
            )));
        }
        let w_q = store.add("defum.w_q", rng.xavier(width, width))?;
        let w_k = store.add("defum.w_k", rng.xavier(width, width))?;
        let w_v = store.add("defum.w_v", rng.xavier(width, width))?;
        let norm = LayerNormParams::register(store, "defum.norm", width)?;
        let layers = (0..layers)
            .map(|i| EncoderLayerParams::register(store, rng, &format!("defum.layer{i}"), width, heads))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width,
            depth_heads,
            w_q,
            w_k,
            w_v,
            norm,
            layers,
        })
    }

    /// Returns the attention output and the post-softmax weights of the
    /// first head. `r = None` runs the same layer with no depth bias.
    pub fn depth_aware_attention_with_weights(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x_v: Var,
        r: Option<Var>,
    ) -> Result<(Var, Var)> {
        let (len, width) = tape.shape(x_v);
        if width != self.width {
            return Err(Error::shape("depth_aware_attention", (len, width), (len, self.width)));
        }
        if let Some(r) = r {
            if tape.shape(r) != (len, len) {
                return Err(Error::shape("relative depth matrix", tape.shape(r), (len, len)));
            }
        }
        let wq = tape.param(store, self.w_q);
        let wk = tape.param(store, self.w_k);
        let wv = tape.param(store, self.w_v);
        let q = tape.matmul(x_v, wq)?;
        let k = tape.matmul(x_v, wk)?;
        let v = tape.matmul(x_v, wv)?;

        let head_dim = width / self.depth_heads;
        let mut outs = Vec::with_capacity(self.depth_heads);
        let mut first_weights = None;
        for h in 0..self.depth_heads {
            let (qh, kh, vh) = if self.depth_heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * head_dim, head_dim)?,
                    tape.slice_cols(k, h * head_dim, head_dim)?,
                    tape.slice_cols(v, h * head_dim, head_dim)?,
                )
            };
            let kt = tape.transpose(kh);
            let a = tape.matmul(qh, kt)?;
            let mut a = tape.scale(a, 1.0 / (head_dim as f64).sqrt());
            if let Some(r) = r {
                a = tape.add(a, r)?;
            }
            let w = tape.softmax_rows(a);
            first_weights.get_or_insert(w);
            outs.push(tape.matmul(w, vh)?);
        }
        let attended = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)?
        };
        let res = tape.add(x_v, attended)?;
        let out = self.norm.apply(tape, store, res)?;
        Ok((out, first_weights.expect("at least one head")))
    }

    pub fn depth_aware_attention(&self, tape: &mut Tape, store: &ParamStore, x_v: Var, r: Option<Var>) -> Result<Var> {
        Ok(self.depth_aware_attention_with_weights(tape, store, x_v, r)?.0)
    }

    /// Depth-aware attention followed by the encoder stack; `(n+m) x d`.
    pub fn update(&self, tape: &mut Tape, store: &ParamStore, x_v: Var, r: Option<Var>) -> Result<Var> {
        let mut h = self.depth_aware_attention(tape, store, x_v, r)?;
        for layer in &self.layers {
            h = layer.apply(tape, store, h, None)?;
        }
        Ok(h)
    }

    /// Full module: returns `(x_of', x_tf')`.
    pub fn defum_update(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x_of: Var,
        x_tf: Var,
        r: Option<Var>,
    ) -> Result<(Var, Var)> {
        let n = tape.shape(x_of).0;
        let m = tape.shape(x_tf).0;
        let x_v = concat_visual(tape, x_of, x_tf)?;
        let out = self.update(tape, store, x_v, r)?;
        Ok((tape.slice_rows(out, 0, n)?, tape.slice_rows(out, n, m)?))
    }

    /// Value-level convenience: builds `R` from depth values and runs the module.
    pub fn forward(
        &self,
        store: &ParamStore,
        x_of: &Matrix,
        x_tf: &Matrix,
        dv: &[DepthValue],
    ) -> Result<(Matrix, Matrix)> {
        if dv.len() != x_of.rows() + x_tf.rows() {
            return Err(Error::shape(
                "depth values",
                (dv.len(), 1),
                (x_of.rows() + x_tf.rows(), 1),
            ));
        }
        let mut tape = Tape::new();
        let a = tape.constant(x_of.clone());
        let b = tape.constant(x_tf.clone());
        let r = tape.constant(relative_depth_matrix(dv));
        let (o, t) = self.defum_update(&mut tape, store, a, b, Some(r))?;
        Ok((tape.value(o).clone(), tape.value(t).clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_order_and_errors() {
        let mut rng = SplitMix64::new(1);
        let mut tape = Tape::new();
        let o = tape.constant(rng.matrix(2, 4, -1.0, 1.0));
        let t = tape.constant(rng.matrix(3, 4, -1.0, 1.0));
        let v = concat_visual(&mut tape, o, t).unwrap();
        assert_eq!(tape.shape(v), (5, 4));
        assert_eq!(tape.value(v).row(1), tape.value(o).row(1));
        assert_eq!(tape.value(v).row(2), tape.value(t).row(0));
        let none = tape.constant(Matrix::zeros(0, 4));
        assert!(concat_visual(&mut tape, none, t).is_err());
        let wide = tape.constant(Matrix::zeros(1, 5));
        assert!(concat_visual(&mut tape, o, wide).is_err());
    }

    #[test]
    fn zero_layers_rejected() {
        let mut store = ParamStore::new();
        let mut rng = SplitMix64::new(1);
        assert!(DefumParams::register(&mut store, &mut rng, 4, 0, 1, 1).is_err());
    }

    #[test]
    fn two_entity_closed_form() {
        // W_Q = W_K = W_V = I, d = 2, x = [[1, 0], [0, 1]], R from depths (1, e^..).
        let mut store = ParamStore::new();
        let mut rng = SplitMix64::new(1);
        let p = DefumParams::register(&mut store, &mut rng, 2, 1, 1, 1).unwrap();
        for id in [p.w_q, p.w_k, p.w_v] {
            *store.get_mut(id) = Matrix::identity(2);
        }
        let x = Matrix::identity(2);
        let r = Matrix::from_rows(&[[0.0, 0.5], [-0.5, 0.0]]).unwrap();

        // Hand evaluation: A = I / sqrt 2; row 0 logits (1/sqrt2, 0.5), row 1 (-0.5, 1/sqrt2).
        let s = 1.0 / 2f64.sqrt();
        let p0 = 1.0 / (1.0 + (0.5 - s).exp());
        let p1 = 1.0 / (1.0 + (-0.5 - s).exp());
        // attention output rows: [p0, 1-p0] and [1-p1, p1]; residual adds I.
        let pre = [[1.0 + p0, 1.0 - p0], [1.0 - p1, 1.0 + p1]];
        // LN of a 2-vector [a, b] with unit gain: +-(a-b)/2 / sqrt(((a-b)/2)^2 + eps).
        let ln2 = |a: f64, b: f64| {
            let h = (a - b) / 2.0;
            let z = h / (h * h + 1e-5).sqrt();
            [z, -z]
        };
        let want = [ln2(pre[0][0], pre[0][1]), ln2(pre[1][0], pre[1][1])];

        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let rv = tape.constant(r);
        let (out, w) = p
            .depth_aware_attention_with_weights(&mut tape, &store, xv, Some(rv))
            .unwrap();
        let out = tape.value(out);
        for i in 0..2 {
            for j in 0..2 {
                assert!((out.get(i, j) - want[i][j]).abs() < 1e-12, "{out:?}");
            }
        }
        let w = tape.value(w);
        assert!((w.get(0, 0) - p0).abs() < 1e-15);
        for row in w.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_bias_matches_unbiased() {
        let mut store = ParamStore::new();
        let mut rng = SplitMix64::new(3);
        let p = DefumParams::register(&mut store, &mut rng, 8, 2, 2, 1).unwrap();
        let x_of = rng.matrix(3, 8, -1.0, 1.0);
        let x_tf = rng.matrix(4, 8, -1.0, 1.0);
        let (o1, t1) = p.forward(&store, &x_of, &x_tf, &[DepthValue(40); 7]).unwrap();

        let mut tape = Tape::new();
        let a = tape.constant(x_of);
        let b = tape.constant(x_tf);
        let (o2, t2) = p.defum_update(&mut tape, &store, a, b, None).unwrap();
        assert_eq!(o1.shape(), (3, 8));
        assert!(o1.max_abs_diff(tape.value(o2)) <= 1e-12);
        assert!(t1.max_abs_diff(tape.value(t2)) <= 1e-12);
    }

    #[test]
    fn multi_head_depth_stage() {
        let mut store = ParamStore::new();
        let mut rng = SplitMix64::new(4);
        let p = DefumParams::register(&mut store, &mut rng, 8, 1, 2, 2).unwrap();
        let x_of = rng.matrix(2, 8, -1.0, 1.0);
        let x_tf = rng.matrix(2, 8, -1.0, 1.0);
        let dv = [DepthValue(10), DepthValue(200), DepthValue(30), DepthValue(90)];
        let (o, t) = p.forward(&store, &x_of, &x_tf, &dv).unwrap();
        assert!(o.is_finite() && t.is_finite());
        assert!(DefumParams::register(&mut store, &mut rng, 8, 1, 2, 3).is_err());
    }
}
