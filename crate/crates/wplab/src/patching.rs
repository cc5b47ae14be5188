//! Exact interventions: parameter-space weight patching (single and
//! set-wise), fixed-input cross-model activation patching, and knockout.
//!
//! A head's replaceable slice is its query columns and output rows; key and
//! value projections are shared across a KV group and stay out of the slice.
//! A neuron's slice is its gate column, up column, and down row. Replacement
//! is an overlay over the base parameters: only tensors actually touched by
//! a slice are copied.

use crate::anchor::{anchor_utility_from_trace, AnchorSpec, GapSet};
use crate::error::{Error, Result};
use crate::forward::{forward, generate_greedy, Hooks, LayerRef, ParamsRef, ResidualTrace};
use crate::model::{tensor_shape, ComponentId, ComponentKind, ModelConfig, ModelParams};
use crate::score::{ScoreMeta, ScoreTable};
use std::collections::BTreeMap;

/// A rectangular region of one named tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Cols { start: usize, len: usize },
    Rows { start: usize, len: usize },
}

impl Region {
    /// Flat indices of the region within a `rows x cols` tensor.
    pub fn indices(&self, rows: usize, cols: usize) -> Vec<usize> {
        match *self {
            Region::Cols { start, len } => {
                let mut out = Vec::with_capacity(rows * len);
                for r in 0..rows {
                    for c in start..start + len {
                        out.push(r * cols + c);
                    }
                }
                out
            }
            Region::Rows { start, len } => ((start * cols)..((start + len) * cols)).collect(),
        }
    }
}

/// The replaceable parameter slice of one component.
#[derive(Debug, Clone)]
pub struct ParamSlice {
    pub component: ComponentId,
    pub regions: Vec<(String, Region)>,
}

/// Exact slice definition: heads replace `W_Q[:, I_h]` and `W_O[I_h, :]`;
/// neurons replace `W_gate[:, j]`, `W_up[:, j]`, and `W_down[j, :]`.
pub fn component_slice(c: ComponentId, config: &ModelConfig) -> Result<ParamSlice> {
    c.validate(config)?;
    let l = c.layer;
    let dk = config.d_head();
    let regions = match c.kind {
        ComponentKind::Head => vec![
            (format!("layers.{l}.w_q"), Region::Cols { start: c.index * dk, len: dk }),
            (format!("layers.{l}.w_o"), Region::Rows { start: c.index * dk, len: dk }),
        ],
        ComponentKind::Neuron => vec![
            (format!("layers.{l}.w_gate"), Region::Cols { start: c.index, len: 1 }),
            (format!("layers.{l}.w_up"), Region::Cols { start: c.index, len: 1 }),
            (format!("layers.{l}.w_down"), Region::Rows { start: c.index, len: 1 }),
        ],
    };
    Ok(ParamSlice { component: c, regions })
}

/// Per-tensor boolean masks covering the union of the given components'
/// slices. Errors on duplicate components (the only way slices can overlap).
pub fn slice_masks(config: &ModelConfig, comps: &[ComponentId]) -> Result<BTreeMap<String, Vec<bool>>> {
    let mut seen = std::collections::BTreeSet::new();
    for c in comps {
        if !seen.insert(*c) {
            return Err(Error::OverlappingSlices(c.to_string()));
        }
    }
    let mut masks: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for &c in comps {
        let slice = component_slice(c, config)?;
        for (name, region) in &slice.regions {
            let (r, cols) = tensor_shape(config, name)?;
            let mask = masks.entry(name.clone()).or_insert_with(|| vec![false; r * cols]);
            for i in region.indices(r, cols) {
                mask[i] = true;
            }
        }
    }
    Ok(masks)
}

/// Base parameters with an overlay of replaced regions. Reading a parameter
/// yields the donor value iff its index lies in a replaced region; untouched
/// tensors are borrowed from the base.
pub struct PatchedModelView<'a> {
    base: &'a ModelParams,
    patched: BTreeMap<String, Vec<f32>>,
}

impl<'a> PatchedModelView<'a> {
    pub fn tensor(&self, name: &str) -> Result<&[f32]> {
        if let Some(t) = self.patched.get(name) {
            return Ok(t);
        }
        self.base.tensor(name)
    }

    /// Parameter view suitable for `forward`.
    pub fn view(&self) -> ParamsRef<'_> {
        let get = |name: &str| -> &[f32] {
            self.patched.get(name).map(|v| &v[..]).unwrap_or_else(|| self.base.tensor(name).unwrap())
        };
        ParamsRef {
            config: self.base.config,
            token_embedding: get("token_embedding"),
            layers: (1..=self.base.config.n_layers)
                .map(|l| LayerRef {
                    w_q: get(&format!("layers.{l}.w_q")),
                    w_k: get(&format!("layers.{l}.w_k")),
                    w_v: get(&format!("layers.{l}.w_v")),
                    w_o: get(&format!("layers.{l}.w_o")),
                    w_gate: get(&format!("layers.{l}.w_gate")),
                    w_up: get(&format!("layers.{l}.w_up")),
                    w_down: get(&format!("layers.{l}.w_down")),
                    attn_norm: get(&format!("layers.{l}.attn_norm")),
                    mlp_norm: get(&format!("layers.{l}.mlp_norm")),
                })
                .collect(),
            final_norm: get("final_norm"),
            lm_head: get("lm_head"),
        }
    }

    /// Copy the overlay out into a standalone parameter set.
    pub fn materialize(&self) -> ModelParams {
        let mut out = self.base.clone();
        for (name, data) in &self.patched {
            out.tensor_mut(name).unwrap().copy_from_slice(data);
        }
        out
    }
}

/// Build the set-wise replaced model: parameters inside the slice union come
/// from the donor, everything else from the base.
pub fn replace_params<'a>(
    base: &'a ModelParams,
    donor: &ModelParams,
    set: &[ComponentId],
) -> Result<PatchedModelView<'a>> {
    if base.config != donor.config {
        return Err(Error::InvalidConfig("replace_params: config mismatch".into()));
    }
    let masks = slice_masks(&base.config, set)?;
    let mut patched = BTreeMap::new();
    for (name, mask) in masks {
        let mut tensor = base.tensor(&name)?.to_vec();
        let donor_t = donor.tensor(&name)?;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                tensor[i] = donor_t[i];
            }
        }
        patched.insert(name, tensor);
    }
    Ok(PatchedModelView { base, patched })
}

/// Exact weight-patching restoration effect of a component set: the mean
/// fraction of the anchor gap restored when only those slices are
/// transplanted from the specialized model.
pub fn exact_wp_effect(
    base: &ModelParams,
    sft: &ModelParams,
    set: &[ComponentId],
    spec: &AnchorSpec,
    eval: &GapSet,
) -> Result<f64> {
    let patched = replace_params(base, sft, set)?;
    let view = patched.view();
    eval.normalized_mean(|_, x| anchor_utility(&view, x, spec))
}

fn anchor_utility(view: &ParamsRef<'_>, x: &[usize], spec: &AnchorSpec) -> Result<f64> {
    let trace = forward(view, x, &Hooks::none())?;
    anchor_utility_from_trace(&trace, spec)
}

/// Per-component exact WP sweep over a candidate list.
pub fn wp_sweep(
    base: &ModelParams,
    sft: &ModelParams,
    comps: &[ComponentId],
    spec: &AnchorSpec,
    eval: &GapSet,
) -> Result<ScoreTable> {
    let mut entries = Vec::with_capacity(comps.len());
    for &c in comps {
        entries.push((c, exact_wp_effect(base, sft, &[c], spec, eval)?));
    }
    Ok(ScoreTable {
        meta: ScoreMeta {
            score: "wp_exact".into(),
            utility: format!("anchor_cosine@layer{}", spec.layer),
            eval_id: format!("n={},excluded={}", eval.n_included(), eval.n_excluded()),
            normalization: format!("gap_floor={}", eval.gap_floor),
        },
        entries,
    })
}

/// Base-model forward on `x` with component `c`'s residual write-back
/// replaced by the one captured from the specialized model on the same
/// input.
pub fn cross_model_ap_run(
    base: &ParamsRef<'_>,
    donor_trace: &ResidualTrace,
    x: &[usize],
    c: ComponentId,
) -> Result<ResidualTrace> {
    let wb = donor_trace.writeback(c)?;
    let hooks = Hooks { writeback_overrides: vec![(c, wb)], ..Hooks::none() };
    forward(base, x, &hooks)
}

/// Exact activation-patching restoration effect: same normalization contract
/// as [`exact_wp_effect`], with the intervention on the write-back term.
pub fn activation_effect(
    base: &ModelParams,
    sft: &ModelParams,
    c: ComponentId,
    spec: &AnchorSpec,
    eval: &GapSet,
) -> Result<f64> {
    let base_view = base.view();
    let sft_view = sft.view();
    eval.normalized_mean(|_, x| {
        let donor_trace = forward(&sft_view, x, &Hooks::none())?;
        let patched = cross_model_ap_run(&base_view, &donor_trace, x, c)?;
        anchor_utility_from_trace(&patched, spec)
    })
}

/// Per-component AP sweep.
pub fn ap_sweep(
    base: &ModelParams,
    sft: &ModelParams,
    comps: &[ComponentId],
    spec: &AnchorSpec,
    eval: &GapSet,
) -> Result<ScoreTable> {
    // Donor traces are shared across components; capture once per input.
    let sft_view = sft.view();
    let base_view = base.view();
    let mut donor_traces = Vec::with_capacity(eval.inputs.len());
    for x in &eval.inputs {
        donor_traces.push(forward(&sft_view, x, &Hooks::none())?);
    }
    let mut entries = Vec::with_capacity(comps.len());
    for &c in comps {
        let score = eval.normalized_mean(|i, x| {
            let patched = cross_model_ap_run(&base_view, &donor_traces[i], x, c)?;
            anchor_utility_from_trace(&patched, spec)
        })?;
        entries.push((c, score));
    }
    Ok(ScoreTable {
        meta: ScoreMeta {
            score: "ap_exact".into(),
            utility: format!("anchor_cosine@layer{}", spec.layer),
            eval_id: format!("n={},excluded={}", eval.n_included(), eval.n_excluded()),
            normalization: format!("gap_floor={}", eval.gap_floor),
        },
        entries,
    })
}

/// How a knockout removes a component set from the specialized model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnockoutMode {
    /// Reverse weight patching: specialized slices replaced with base slices.
    Param,
    /// Reverse activation patching: specialized write-backs replaced with
    /// base-run write-backs under the same input.
    Activation,
}

/// Degrade the specialized model by removing a component set. In `Param`
/// mode the result is a patched parameter set; in `Activation` mode the
/// degradation is applied per input at generation time.
pub struct Knockout<'a> {
    pub mode: KnockoutMode,
    sft: &'a ModelParams,
    base: &'a ModelParams,
    set: Vec<ComponentId>,
    param_view: Option<PatchedModelView<'a>>,
}

pub fn knockout<'a>(
    sft: &'a ModelParams,
    base: &'a ModelParams,
    set: &[ComponentId],
    mode: KnockoutMode,
) -> Result<Knockout<'a>> {
    let param_view = match mode {
        KnockoutMode::Param => Some(replace_params(sft, base, set)?),
        KnockoutMode::Activation => None,
    };
    Ok(Knockout { mode, sft, base, set: set.to_vec(), param_view })
}

impl Knockout<'_> {
    /// Greedy generation under the knockout.
    pub fn generate(&self, prompt: &[usize], max_new: usize) -> Result<Vec<usize>> {
        match self.mode {
            KnockoutMode::Param => {
                generate_greedy(&self.param_view.as_ref().unwrap().view(), prompt, max_new, &Hooks::none())
            }
            KnockoutMode::Activation => {
                // Re-capture base write-backs for the growing sequence at
                // every step.
                let sft_view = self.sft.view();
                let base_view = self.base.view();
                let mut seq = prompt.to_vec();
                if seq.is_empty() {
                    return Err(Error::EmptyInput("knockout generate: empty prompt"));
                }
                for _ in 0..max_new {
                    if seq.len() >= self.sft.config.max_seq_len {
                        break;
                    }
                    let base_trace = forward(&base_view, &seq, &Hooks::none())?;
                    let mut hooks = Hooks::none();
                    for &c in &self.set {
                        hooks.writeback_overrides.push((c, base_trace.writeback(c)?));
                    }
                    let trace = forward(&sft_view, &seq, &hooks)?;
                    let next = crate::forward::argmax(trace.logits_row(seq.len() - 1));
                    seq.push(next);
                }
                Ok(seq)
            }
        }
    }
}
