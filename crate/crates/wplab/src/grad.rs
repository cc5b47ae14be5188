//! Recorded forward passes and gradient plumbing.
//!
//! [`build_tape`] replays the exact arithmetic of [`crate::forward::forward`]
//! onto a [`Tape`], registering every parameter tensor as a leaf and keeping
//! handles to the residual-stream stages. Scalar utilities (anchor cosine,
//! need inner products, training loss) are appended on top, and one backward
//! pass yields gradients with respect to all parameters and all recorded
//! intermediate states.
//!
//! The tape is generic over precision: `f32` in production, `f64` for the
//! finite-difference acceptance oracle.

use crate::autodiff::{Gradients, NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::{tensor_names, ModelConfig, ModelParamsT};
use crate::tensor::{self, Real};

/// Node handles for one recorded forward pass.
pub struct TapedModel<T: Real> {
    pub tape: Tape<T>,
    pub config: ModelConfig,
    pub seq_len: usize,
    /// Parameter leaves in directory order, parallel to [`tensor_names`].
    pub param_nodes: Vec<(String, NodeId)>,
    /// `Z_0 ..= Z_last`.
    pub residuals: Vec<NodeId>,
    /// `Z'_l` per recorded layer.
    pub post_attn: Vec<NodeId>,
    /// Normalized attention input per recorded layer.
    pub attn_inputs: Vec<NodeId>,
    /// Normalized MLP input per recorded layer.
    pub mlp_inputs: Vec<NodeId>,
    /// Present when the pass ran through the output head.
    pub logits: Option<NodeId>,
}

impl<T: Real> TapedModel<T> {
    pub fn param_node(&self, name: &str) -> Option<NodeId> {
        self.param_nodes.iter().find(|(n, _)| n == name).map(|(_, id)| *id)
    }

    /// Gradients per parameter tensor, in directory order. Tensors the output
    /// does not depend on come back zero-filled.
    pub fn named_param_grads(&self, grads: &Gradients<T>) -> Vec<(String, Vec<T>)> {
        self.param_nodes
            .iter()
            .map(|(name, id)| {
                let g = match grads.get(*id) {
                    Some(g) => g.to_vec(),
                    None => vec![T::default(); self.tape.value(*id).len()],
                };
                (name.clone(), g)
            })
            .collect()
    }
}

/// Record a forward pass. `upto_layer` stops after that layer (1-based,
/// inclusive) when downstream stages are not needed; `with_logits` runs the
/// final norm and output head (forcing all layers).
pub fn build_tape<T: Real>(
    params: &ModelParamsT<T>,
    tokens: &[usize],
    upto_layer: Option<usize>,
    with_logits: bool,
) -> Result<TapedModel<T>> {
    let cfg = params.config;
    let t_len = tokens.len();
    if t_len == 0 {
        return Err(Error::EmptyInput("build_tape: empty token sequence"));
    }
    let d = cfg.d_model;
    let dk = cfg.d_head();
    let last_layer = if with_logits { cfg.n_layers } else { upto_layer.unwrap_or(cfg.n_layers).min(cfg.n_layers) };

    let mut tape: Tape<T> = Tape::new();
    let mut param_nodes = Vec::new();
    for name in tensor_names(&cfg) {
        let data = params.tensor(&name)?.to_vec();
        let (r, c) = crate::model::tensor_shape(&cfg, &name)?;
        let id = tape.leaf(data, r, c, true)?;
        param_nodes.push((name, id));
    }
    let node = |nodes: &[(String, NodeId)], name: &str| -> NodeId {
        nodes.iter().find(|(n, _)| n == name).map(|(_, id)| *id).expect("directory is total")
    };

    let emb_table = node(&param_nodes, "token_embedding");
    let mut z = tape.embed(emb_table, tokens)?;

    let mut tm = TapedModel {
        config: cfg,
        seq_len: t_len,
        param_nodes,
        residuals: vec![z],
        post_attn: Vec::new(),
        attn_inputs: Vec::new(),
        mlp_inputs: Vec::new(),
        logits: None,
        tape: Tape::new(),
    };

    let mask = tensor::causal_mask::<T>(t_len, t_len);
    let scale = 1.0 / (dk as f64).sqrt();

    for l in 1..=last_layer {
        let w_q = node(&tm.param_nodes, &format!("layers.{l}.w_q"));
        let w_k = node(&tm.param_nodes, &format!("layers.{l}.w_k"));
        let w_v = node(&tm.param_nodes, &format!("layers.{l}.w_v"));
        let w_o = node(&tm.param_nodes, &format!("layers.{l}.w_o"));
        let w_gate = node(&tm.param_nodes, &format!("layers.{l}.w_gate"));
        let w_up = node(&tm.param_nodes, &format!("layers.{l}.w_up"));
        let w_down = node(&tm.param_nodes, &format!("layers.{l}.w_down"));
        let attn_norm = node(&tm.param_nodes, &format!("layers.{l}.attn_norm"));
        let mlp_norm = node(&tm.param_nodes, &format!("layers.{l}.mlp_norm"));

        let xn = tape.rmsnorm(z, attn_norm)?;
        let q_full = tape.matmul(xn, w_q)?;
        let k_full = tape.matmul(xn, w_k)?;
        let v_full = tape.matmul(xn, w_v)?;
        let q_rot = tape.rope(q_full, dk)?;
        let k_rot = tape.rope(k_full, dk)?;

        let mut z_mid = z;
        for h in 0..cfg.n_heads {
            let g = cfg.kv_group(h);
            let qh = tape.slice_cols(q_rot, h * dk, dk)?;
            let kg = tape.slice_cols(k_rot, g * dk, dk)?;
            let vg = tape.slice_cols(v_full, g * dk, dk)?;
            let scores = tape.matmul_nt(qh, kg)?;
            let scaled = tape.scale(scores, scale)?;
            let probs = tape.softmax_masked(scaled, mask.clone())?;
            let oh = tape.matmul(probs, vg)?;
            let wo_rows = tape.slice_rows(w_o, h * dk, dk)?;
            let wb = tape.matmul(oh, wo_rows)?;
            z_mid = tape.add(z_mid, wb)?;
        }

        let xn2 = tape.rmsnorm(z_mid, mlp_norm)?;
        let gate = tape.matmul(xn2, w_gate)?;
        let up = tape.matmul(xn2, w_up)?;
        let act = tape.silu(gate)?;
        let hidden = tape.mul_elem(act, up)?;
        let mlp_out = tape.matmul(hidden, w_down)?;
        let z_next = tape.add(z_mid, mlp_out)?;

        tm.attn_inputs.push(xn);
        tm.post_attn.push(z_mid);
        tm.mlp_inputs.push(xn2);
        tm.residuals.push(z_next);
        z = z_next;
    }

    if with_logits {
        let final_norm = node(&tm.param_nodes, "final_norm");
        let lm_head = node(&tm.param_nodes, "lm_head");
        let zn = tape.rmsnorm(z, final_norm)?;
        tm.logits = Some(tape.matmul(zn, lm_head)?);
    }

    tm.tape = tape;
    Ok(tm)
}

/// Append the anchor utility: cosine of `z_layer(pos)` with a constant
/// direction `v`. Returns the scalar node.
pub fn anchor_scalar<T: Real>(tm: &mut TapedModel<T>, layer: usize, pos: usize, v: &[T]) -> Result<NodeId> {
    if layer >= tm.residuals.len() {
        return Err(Error::InvalidConfig(format!(
            "anchor layer {} not recorded (tape has {} residual stages)",
            layer,
            tm.residuals.len() - 1
        )));
    }
    let row = tm.tape.row(tm.residuals[layer], pos)?;
    let v_leaf = tm.tape.leaf(v.to_vec(), 1, v.len(), false)?;
    tm.tape.cosine(row, v_leaf)
}

/// Append a mean cross-entropy loss over masked positions; the model must
/// have been taped with logits.
pub fn loss_scalar<T: Real>(tm: &mut TapedModel<T>, targets: &[usize], mask: &[bool]) -> Result<NodeId> {
    let logits = tm.logits.ok_or(Error::EmptyInput("loss_scalar: tape has no logits"))?;
    tm.tape.cross_entropy_masked(logits, targets, mask)
}

/// Append the need utility: inner product of a recorded stage with a constant
/// direction.
pub fn inner_product_scalar<T: Real>(tm: &mut TapedModel<T>, stage: NodeId, direction: &[T]) -> Result<NodeId> {
    let leaf = tm.tape.leaf(direction.to_vec(), 1, direction.len(), false)?;
    tm.tape.dot(stage, leaf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use crate::forward::{forward, Hooks};
    use crate::model::{init_model, test_config, ModelParams};

    fn toy_tokens() -> Vec<usize> {
        vec![1, 5, 9, 3, 2, 7]
    }

    /// The taped forward must agree with the plain engine bit for bit: both
    /// run the same kernels in the same order.
    #[test]
    fn taped_forward_matches_plain_forward() {
        let params = init_model(&test_config(), 21).unwrap();
        let tokens = toy_tokens();
        let plain = forward(&params.view(), &tokens, &Hooks::none()).unwrap();
        let tm = build_tape(&params, &tokens, None, true).unwrap();
        for l in 0..=params.config.n_layers {
            assert_eq!(tm.tape.value(tm.residuals[l]), &plain.residuals[l][..], "layer {l}");
        }
        assert_eq!(tm.tape.value(tm.logits.unwrap()), &plain.logits[..]);
    }

    #[test]
    fn anchor_gradients_match_finite_differences() {
        // Double-precision check of backward() against central differences
        // for the anchor utility on the 2-layer, d=16 model.
        let config = test_config();
        let params32 = init_model(&config, 33).unwrap();
        let params = params32.cast::<f64>();
        let tokens = toy_tokens();
        let layer = 2;
        let pos = tokens.len() - 1;
        // Any fixed direction works; use a trace row so it is in-distribution.
        let probe = forward(&params32.view(), &[2, 4, 6, 8, 1, 3], &Hooks::none()).unwrap();
        let v: Vec<f64> = probe.residual_row(layer, pos).iter().map(|&x| x as f64 + 0.05).collect();

        let mut tm = build_tape(&params, &tokens, Some(layer), false).unwrap();
        let fa = anchor_scalar(&mut tm, layer, pos, &v).unwrap();
        let grads = tm.tape.backward(fa).unwrap();

        // Check a representative subset of tensors (full coverage lives in the
        // acceptance suite).
        let flat_names =
            ["layers.1.w_q", "layers.1.w_gate", "layers.2.w_down", "token_embedding", "layers.2.attn_norm"];
        let mut param_vecs = Vec::new();
        let mut analytic = Vec::new();
        for name in flat_names {
            param_vecs.push(params.tensor(name).unwrap().to_vec());
            let id = tm.param_node(name).unwrap();
            analytic.push(grads.get(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; params.tensor(name).unwrap().len()]));
        }

        let err = finite_diff_check(
            |p| {
                let mut m: ModelParamsT<f64> = params.clone();
                for (name, vals) in flat_names.iter().zip(p) {
                    m.tensor_mut(name).unwrap().copy_from_slice(vals);
                }
                let mut tm = build_tape(&m, &tokens, Some(layer), false)?;
                let fa = anchor_scalar(&mut tm, layer, pos, &v)?;
                Ok(tm.tape.scalar(fa))
            },
            &param_vecs,
            &analytic,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn grads_absent_beyond_anchor_layer() {
        let config = test_config();
        let params: ModelParams = init_model(&config, 40).unwrap();
        let tokens = toy_tokens();
        let mut tm = build_tape(&params, &tokens, None, true).unwrap();
        let v = vec![0.5f32; config.d_model];
        let fa = anchor_scalar(&mut tm, 1, 2, &v).unwrap();
        let grads = tm.tape.backward(fa).unwrap();
        // Layer 2 and the output head sit after the readout.
        assert!(grads.get(tm.param_node("layers.2.w_q").unwrap()).is_none());
        assert!(grads.get(tm.param_node("lm_head").unwrap()).is_none());
        assert!(grads.get(tm.param_node("layers.1.w_q").unwrap()).is_some());
    }

    #[test]
    fn training_loss_gradients_match_finite_differences() {
        let config = test_config();
        let params = init_model(&config, 50).unwrap().cast::<f64>();
        let tokens = toy_tokens();
        let targets = vec![5usize, 9, 3, 2, 7, 4];
        let mask = vec![false, false, true, true, true, true];

        let mut tm = build_tape(&params, &tokens, None, true).unwrap();
        let loss = loss_scalar(&mut tm, &targets, &mask).unwrap();
        let grads = tm.tape.backward(loss).unwrap();

        let names = ["lm_head", "layers.2.w_up", "final_norm"];
        let mut param_vecs = Vec::new();
        let mut analytic = Vec::new();
        for name in names {
            param_vecs.push(params.tensor(name).unwrap().to_vec());
            let id = tm.param_node(name).unwrap();
            analytic.push(grads.get(id).unwrap().to_vec());
        }
        let err = finite_diff_check(
            |p| {
                let mut m = params.clone();
                for (name, vals) in names.iter().zip(p) {
                    m.tensor_mut(name).unwrap().copy_from_slice(vals);
                }
                let mut tm = build_tape(&m, &tokens, None, true)?;
                let loss = loss_scalar(&mut tm, &targets, &mask)?;
                Ok(tm.tape.scalar(loss))
            },
            &param_vecs,
            &analytic,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "loss gradient error {err}");
    }
}
