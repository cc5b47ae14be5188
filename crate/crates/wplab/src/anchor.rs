//! The vector-anchor behavioral interface.
//!
//! A task direction is extracted from residual-stream differences between
//! instruction-present and instruction-removed inputs, an anchor layer is
//! selected by steering recovery, and the anchor utility (cosine of the
//! anchor-site residual state with the direction) becomes the shared
//! criterion every restoration effect is normalized against.

use crate::error::{Error, Result};
use crate::forward::{forward, Hooks, ParamsRef, ResidualTrace, SteerSite};
use crate::model::ModelConfig;
use crate::tensor;
use crate::workshop::{steered_task_accuracy, task_accuracy, PairedExample, ToyTask};
use serde::{Deserialize, Serialize};

/// Where the anchor state is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionRule {
    /// Last token of the prompt (the position whose next-token prediction
    /// carries the behavior).
    LastPromptToken,
    /// Fixed absolute position.
    Index(usize),
}

impl PositionRule {
    pub fn resolve(&self, prompt_len: usize) -> usize {
        match self {
            PositionRule::LastPromptToken => prompt_len - 1,
            PositionRule::Index(i) => (*i).min(prompt_len - 1),
        }
    }
}

/// Inputs whose anchor gap falls below this are excluded from normalized
/// effect averages.
pub const DEFAULT_GAP_FLOOR: f64 = 0.05;

/// The anchor interface: direction, site, and calibration statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub layer: usize,
    pub position_rule: PositionRule,
    pub mu_bar: f32,
    pub v: Vec<f32>,
}

impl AnchorSpec {
    /// Unit direction; `v` keeps the raw extracted scale.
    pub fn v_hat(&self) -> Result<Vec<f32>> {
        let n = tensor::norm2(&self.v);
        if n == 0.0 {
            return Err(Error::ZeroNorm("anchor direction"));
        }
        Ok(self.v.iter().map(|&x| (x as f64 / n) as f32).collect())
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.layer == 0 || self.layer > config.n_layers {
            return Err(Error::InvalidConfig(format!(
                "anchor layer {} outside 1..={}",
                self.layer, config.n_layers
            )));
        }
        if self.v.len() != config.d_model {
            return Err(Error::ShapeMismatch {
                op: "anchor",
                detail: format!("direction len {} vs d_model {}", self.v.len(), config.d_model),
            });
        }
        let _ = self.v_hat()?;
        Ok(())
    }

    /// Steering hook for one prompt length.
    pub fn steer_site(&self, prompt_len: usize) -> Result<SteerSite> {
        Ok(SteerSite {
            layer: self.layer,
            pos: self.position_rule.resolve(prompt_len),
            v_hat: self.v_hat()?,
            mu_bar: self.mu_bar,
        })
    }
}

/// Mean residual-stream difference at the anchor position between
/// instructed and instruction-removed runs of the specialized model.
pub fn extract_layer_direction(
    sft: &ParamsRef<'_>,
    pairs: &[PairedExample],
    layer: usize,
    rule: PositionRule,
) -> Result<Vec<f32>> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("extract_layer_direction: no pairs"));
    }
    let d = sft.config.d_model;
    let mut acc = vec![0.0f64; d];
    for p in pairs {
        let tr = forward(sft, &p.x_r, &Hooks::none())?;
        let tc = forward(sft, &p.x_cf, &Hooks::none())?;
        let zr = tr.residual_row(layer, rule.resolve(p.x_r.len()));
        let zc = tc.residual_row(layer, rule.resolve(p.x_cf.len()));
        for i in 0..d {
            acc[i] += zr[i] as f64 - zc[i] as f64;
        }
    }
    Ok(acc.iter().map(|&x| (x / pairs.len() as f64) as f32).collect())
}

/// Mean projection of instructed anchor states (specialized model) onto the
/// unit direction.
pub fn calibrate_mu_bar(
    sft: &ParamsRef<'_>,
    pairs: &[PairedExample],
    layer: usize,
    rule: PositionRule,
    v: &[f32],
) -> Result<f32> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("calibrate_mu_bar: no pairs"));
    }
    let n = tensor::norm2(v);
    if n == 0.0 {
        return Err(Error::ZeroNorm("anchor direction"));
    }
    let v_hat: Vec<f32> = v.iter().map(|&x| (x as f64 / n) as f32).collect();
    let mut acc = 0.0f64;
    for p in pairs {
        let tr = forward(sft, &p.x_r, &Hooks::none())?;
        acc += tensor::dot(tr.residual_row(layer, rule.resolve(p.x_r.len())), &v_hat);
    }
    Ok((acc / pairs.len() as f64) as f32)
}

/// Anchor utility from an existing trace.
pub fn anchor_utility_from_trace(trace: &ResidualTrace, spec: &AnchorSpec) -> Result<f64> {
    let pos = spec.position_rule.resolve(trace.seq_len);
    tensor::cosine(trace.residual_row(spec.layer, pos), &spec.v, "anchor state")
}

/// Anchor utility of a model on one input.
pub fn anchor_utility(model: &ParamsRef<'_>, x: &[usize], spec: &AnchorSpec) -> Result<f64> {
    let trace = forward(model, x, &Hooks::none())?;
    anchor_utility_from_trace(&trace, spec)
}

/// Specialized-to-base anchor gap on one input.
pub fn anchor_gap(base: &ParamsRef<'_>, sft: &ParamsRef<'_>, x: &[usize], spec: &AnchorSpec) -> Result<f64> {
    Ok(anchor_utility(sft, x, spec)? - anchor_utility(base, x, spec)?)
}

/// Evaluation inputs with precomputed base/specialized utilities and gaps.
/// Inputs whose |gap| falls below the floor are excluded from all normalized
/// averages; the count is reported.
#[derive(Debug, Clone)]
pub struct GapSet {
    pub inputs: Vec<Vec<usize>>,
    pub fa_base: Vec<f64>,
    pub fa_sft: Vec<f64>,
    pub gaps: Vec<f64>,
    pub included: Vec<bool>,
    pub gap_floor: f64,
}

impl GapSet {
    pub fn n_included(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }

    pub fn n_excluded(&self) -> usize {
        self.inputs.len() - self.n_included()
    }

    /// Mean of `(score(x) - fa_base(x)) / gap(x)` over included inputs, where
    /// `score` supplies the patched-run utility per input index.
    pub fn normalized_mean<F>(&self, mut score: F) -> Result<f64>
    where
        F: FnMut(usize, &[usize]) -> Result<f64>,
    {
        if self.n_included() == 0 {
            return Err(Error::EmptyEvalSet { excluded: self.n_excluded() });
        }
        let mut acc = 0.0f64;
        let mut n = 0usize;
        for (i, x) in self.inputs.iter().enumerate() {
            if !self.included[i] {
                continue;
            }
            acc += (score(i, x)? - self.fa_base[i]) / self.gaps[i];
            n += 1;
        }
        Ok(acc / n as f64)
    }
}

/// Precompute gaps for a set of instructed inputs.
pub fn gap_set(
    base: &ParamsRef<'_>,
    sft: &ParamsRef<'_>,
    inputs: &[Vec<usize>],
    spec: &AnchorSpec,
    gap_floor: f64,
) -> Result<GapSet> {
    let mut fa_base = Vec::with_capacity(inputs.len());
    let mut fa_sft = Vec::with_capacity(inputs.len());
    let mut gaps = Vec::with_capacity(inputs.len());
    let mut included = Vec::with_capacity(inputs.len());
    for x in inputs {
        let fb = anchor_utility(base, x, spec)?;
        let fs = anchor_utility(sft, x, spec)?;
        let g = fs - fb;
        fa_base.push(fb);
        fa_sft.push(fs);
        gaps.push(g);
        included.push(g.abs() >= gap_floor);
    }
    Ok(GapSet { inputs: inputs.to_vec(), fa_base, fa_sft, gaps, included, gap_floor })
}

/// Normalized fraction of the base-to-specialized accuracy gap recovered by
/// steering.
pub fn correction_rate(acc_base: f64, acc_inst: f64, acc_steer: f64) -> Result<f64> {
    if acc_inst <= acc_base {
        return Err(Error::DegenerateDenominator("correction_rate: acc_inst <= acc_base"));
    }
    Ok((acc_steer - acc_base) / (acc_inst - acc_base))
}

/// Outcome of anchor-layer selection.
#[derive(Debug, Clone)]
pub struct AnchorSelection {
    pub spec: AnchorSpec,
    /// Correction rate per candidate layer (1-based index = layer).
    pub recovery_by_layer: Vec<f64>,
    /// Set when no candidate layer recovered any behavior.
    pub all_zero_recovery: bool,
}

/// Select the anchor layer by steering recovery: directions come from the
/// extraction pairs, recovery is measured on the held-out evaluation pairs.
pub fn select_anchor(
    base: &ParamsRef<'_>,
    sft: &ParamsRef<'_>,
    extraction: &[PairedExample],
    evaluation: &[PairedExample],
    task: &ToyTask,
    rule: PositionRule,
) -> Result<AnchorSelection> {
    if extraction.is_empty() || evaluation.is_empty() {
        return Err(Error::EmptyInput("select_anchor: empty split"));
    }
    let config = base.config;
    let acc_base = task_accuracy(base, task, evaluation)?;
    let acc_inst = task_accuracy(sft, task, evaluation)?;

    let mut best: Option<(usize, f64, AnchorSpec)> = None;
    let mut recovery = Vec::with_capacity(config.n_layers);
    for layer in 1..=config.n_layers {
        let v = extract_layer_direction(sft, extraction, layer, rule)?;
        if tensor::norm2(&v) == 0.0 {
            recovery.push(0.0);
            continue;
        }
        let mu_bar = calibrate_mu_bar(sft, extraction, layer, rule, &v)?;
        let candidate = AnchorSpec { layer, position_rule: rule, mu_bar, v };
        let acc_steer = steered_task_accuracy(base, task, evaluation, &candidate)?;
        let r = if acc_inst > acc_base { (acc_steer - acc_base) / (acc_inst - acc_base) } else { 0.0 };
        recovery.push(r);
        if best.as_ref().map_or(true, |(_, br, _)| r > *br) {
            best = Some((layer, r, candidate));
        }
    }
    let (_, best_r, spec) = best.ok_or(Error::EmptyInput("select_anchor: no candidate layer"))?;
    Ok(AnchorSelection { spec, recovery_by_layer: recovery, all_zero_recovery: best_r <= 0.0 })
}
