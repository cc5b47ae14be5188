//! The paired-model workshop: synthetic instruction tasks, base/specialized
//! training, and ground-truth planted edits.
//!
//! A toy task maps content tokens through a fixed bijection (a rotation of
//! the content alphabet) when its instruction token is present. The base
//! model is pre-trained on copying plus the raw transformation cued by a
//! separate pre-training token, so the capability exists in the base while
//! instruction-conditioned control does not; specialization then wires the
//! instruction token to the behavior, by default touching only head/neuron
//! parameter slices.

use crate::anchor::AnchorSpec;
use crate::error::{Error, Result};
use crate::forward::{generate_greedy, Hooks, ParamsRef};
use crate::grad::{build_tape, loss_scalar};
use crate::model::{tensor_names, tensor_shape, ComponentId, ModelConfig, ModelParams};
use crate::patching::slice_masks;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

pub const BOS: usize = 0;
pub const SEP: usize = 1;

/// A deterministic instruction-following toy task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyTask {
    pub name: String,
    /// Token that requests the transformation (the "instruction").
    pub instruction_token: usize,
    /// Pre-training cue tokens under which the raw transformation is
    /// learned. Several distinct cues share one behavior so the mode is
    /// encoded as an abstract feature rather than a single token identity.
    pub cue_tokens: Vec<usize>,
    /// Neutral trailer token under which the continuation is a plain copy.
    pub plain_token: usize,
    /// Content rotation amount; a bijection on the content alphabet.
    pub offset: usize,
    pub content_lo: usize,
    pub n_content: usize,
    pub min_ctx: usize,
    pub max_ctx: usize,
}

impl ToyTask {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let mut special = vec![BOS, SEP, self.instruction_token, self.plain_token];
        special.extend_from_slice(&self.cue_tokens);
        if self.cue_tokens.is_empty() {
            return Err(Error::InvalidConfig("task needs at least one cue token".into()));
        }
        if self.content_lo + self.n_content > config.vocab_size {
            return Err(Error::InvalidConfig("content range exceeds vocab".into()));
        }
        for s in special {
            if s >= self.content_lo && s < self.content_lo + self.n_content {
                return Err(Error::InvalidConfig("special token inside content range".into()));
            }
        }
        if self.min_ctx == 0 || self.min_ctx > self.max_ctx {
            return Err(Error::InvalidConfig("bad context length range".into()));
        }
        if self.n_content == 0 {
            return Err(Error::InvalidConfig("empty content alphabet".into()));
        }
        Ok(())
    }

    /// The content bijection.
    pub fn apply(&self, tok: usize) -> usize {
        debug_assert!(tok >= self.content_lo && tok < self.content_lo + self.n_content);
        self.content_lo + ((tok - self.content_lo + self.offset) % self.n_content)
    }

    pub fn sample_content(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let len = rng.gen_range(self.min_ctx..=self.max_ctx);
        (0..len).map(|_| self.content_lo + rng.gen_range(0..self.n_content)).collect()
    }
}

/// Default task pair sharing one content alphabet.
pub fn task_a() -> ToyTask {
    ToyTask {
        name: "shift7".into(),
        instruction_token: 2,
        cue_tokens: vec![5, 6, 7, 8, 9],
        plain_token: 4,
        offset: 7,
        content_lo: 16,
        n_content: 64,
        min_ctx: 1,
        max_ctx: 1,
    }
}

pub fn task_b() -> ToyTask {
    ToyTask {
        name: "shift13".into(),
        instruction_token: 3,
        cue_tokens: vec![10, 11, 12, 13, 14],
        offset: 13,
        ..task_a()
    }
}

/// Instructed input and its instruction-removed counterpart with matched
/// context, plus the instructed continuation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedExample {
    pub x_r: Vec<usize>,
    pub x_cf: Vec<usize>,
    pub target: Vec<usize>,
}

impl PairedExample {
    pub fn content(&self) -> &[usize] {
        // x_cf = [BOS, content.., SEP]
        &self.x_cf[1..self.x_cf.len() - 1]
    }
}

/// Deterministic paired dataset: `x_r = [BOS, content.., SEP, I]`, `x_cf`
/// the same with the trailing instruction token deleted. The instruction
/// sits at the last prompt position, so the instruction-conditioned state is
/// read out exactly where the continuation starts.
pub fn make_instruction_dataset(task: &ToyTask, n: usize, seed: u64) -> Vec<PairedExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let content = task.sample_content(&mut rng);
            let mut x_cf = vec![BOS];
            x_cf.extend_from_slice(&content);
            x_cf.push(SEP);
            let mut x_r = x_cf.clone();
            x_r.push(task.instruction_token);
            let target = content.iter().map(|&c| task.apply(c)).collect();
            PairedExample { x_r, x_cf, target }
        })
        .collect()
}

/// Disjoint halves: the first for direction extraction, the second for
/// steering/localization evaluation.
pub fn split_halves(examples: &[PairedExample]) -> (&[PairedExample], &[PairedExample]) {
    examples.split_at(examples.len() / 2)
}

pub fn write_jsonl<W: Write>(mut w: W, examples: &[PairedExample]) -> Result<()> {
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<PairedExample>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Training hyperparameters (plain Adam, fixed step counts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub pretrain_steps: usize,
    pub sft_steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub sft_lr: f32,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper { pretrain_steps: 4000, sft_steps: 2000, batch_size: 8, lr: 3e-3, sft_lr: 1e-3, seed: 17 }
    }
}

/// Which parameters an update may touch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trainable {
    /// Everything, including embeddings, norms, and the output head.
    All,
    /// The union of every component slice: the full `W_Q`, `W_O`, `W_gate`,
    /// `W_up`, `W_down` of every layer. The default for specialization, so
    /// the parameter delta is supported exactly on component slices.
    ComponentSlices,
    /// Only the named components' slices.
    Components(Vec<ComponentId>),
}

enum UpdateMask {
    Full,
    Frozen,
    Partial(Vec<bool>),
}

fn build_update_masks(config: &ModelConfig, trainable: &Trainable) -> Result<BTreeMap<String, UpdateMask>> {
    let mut masks = BTreeMap::new();
    let slice_tensors = ["w_q", "w_o", "w_gate", "w_up", "w_down"];
    for name in tensor_names(config) {
        let mask = match trainable {
            Trainable::All => UpdateMask::Full,
            Trainable::ComponentSlices => {
                let is_slice = slice_tensors.iter().any(|t| name.ends_with(&format!(".{t}")));
                if is_slice {
                    UpdateMask::Full
                } else {
                    UpdateMask::Frozen
                }
            }
            Trainable::Components(_) => UpdateMask::Frozen,
        };
        masks.insert(name, mask);
    }
    if let Trainable::Components(comps) = trainable {
        for (name, bools) in slice_masks(config, comps)? {
            masks.insert(name, UpdateMask::Partial(bools));
        }
    }
    Ok(masks)
}

/// One teacher-forced training example.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub prompt: Vec<usize>,
    pub continuation: Vec<usize>,
}

impl TrainExample {
    /// Input tokens, next-token targets, and the continuation mask.
    fn teacher_forcing(&self) -> (Vec<usize>, Vec<usize>, Vec<bool>) {
        let mut seq = self.prompt.clone();
        seq.extend_from_slice(&self.continuation);
        let input = seq[..seq.len() - 1].to_vec();
        let targets = seq[1..].to_vec();
        let mask: Vec<bool> = (0..input.len()).map(|t| t + 1 >= self.prompt.len()).collect();
        (input, targets, mask)
    }
}

struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: usize,
}

const ADAM_B1: f32 = 0.9;
const ADAM_B2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

/// Deterministic single-writer training loop: sample a batch, accumulate
/// gradients over separate tapes, apply one masked Adam step.
pub fn train<F>(
    params: &mut ModelParams,
    steps: usize,
    batch_size: usize,
    lr: f32,
    seed: u64,
    trainable: &Trainable,
    mut sample: F,
) -> Result<()>
where
    F: FnMut(&mut ChaCha8Rng) -> TrainExample,
{
    let config = params.config;
    let masks = build_update_masks(&config, trainable)?;
    let names = tensor_names(&config);
    let sizes: Vec<usize> = names
        .iter()
        .map(|n| {
            let (r, c) = tensor_shape(&config, n).unwrap();
            r * c
        })
        .collect();
    let mut adam = AdamState {
        m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        t: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for _ in 0..steps {
        let mut acc: Vec<Vec<f32>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
        for _ in 0..batch_size {
            let ex = sample(&mut rng);
            let (input, targets, mask) = ex.teacher_forcing();
            let mut tm = build_tape(params, &input, None, true)?;
            let loss = loss_scalar(&mut tm, &targets, &mask)?;
            let grads = tm.tape.backward(loss)?;
            for (i, (_, id)) in tm.param_nodes.iter().enumerate() {
                if let Some(g) = grads.get(*id) {
                    for (a, &gi) in acc[i].iter_mut().zip(g) {
                        *a += gi;
                    }
                }
            }
        }
        let inv_b = 1.0 / batch_size as f32;
        adam.t += 1;
        let bc1 = 1.0 - ADAM_B1.powi(adam.t as i32);
        let bc2 = 1.0 - ADAM_B2.powi(adam.t as i32);
        for (i, name) in names.iter().enumerate() {
            let mask = &masks[name];
            if matches!(mask, UpdateMask::Frozen) {
                continue;
            }
            let tensor = params.tensor_mut(name)?;
            for j in 0..tensor.len() {
                if let UpdateMask::Partial(bools) = mask {
                    if !bools[j] {
                        continue;
                    }
                }
                let g = acc[i][j] * inv_b;
                adam.m[i][j] = ADAM_B1 * adam.m[i][j] + (1.0 - ADAM_B1) * g;
                adam.v[i][j] = ADAM_B2 * adam.v[i][j] + (1.0 - ADAM_B2) * g * g;
                let mh = adam.m[i][j] / bc1;
                let vh = adam.v[i][j] / bc2;
                tensor[j] -= lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
    }
    Ok(())
}

fn sample_cue(task: &ToyTask, rng: &mut ChaCha8Rng) -> usize {
    task.cue_tokens[rng.gen_range(0..task.cue_tokens.len())]
}

fn sample_copy(tasks: &[ToyTask], rng: &mut ChaCha8Rng) -> TrainExample {
    // Copy under a diverse trailer population (the plain token or any content
    // token) so copying is the default for trailers never seen in training.
    let t = &tasks[rng.gen_range(0..tasks.len())];
    let trailer = if rng.gen_bool(0.5) {
        t.plain_token
    } else {
        t.content_lo + rng.gen_range(0..t.n_content)
    };
    sample_prompted(t, trailer, false, rng)
}

fn sample_prompted(task: &ToyTask, trailer: usize, transform: bool, rng: &mut ChaCha8Rng) -> TrainExample {
    let content = task.sample_content(rng);
    let mut prompt = vec![BOS];
    prompt.extend_from_slice(&content);
    prompt.push(SEP);
    prompt.push(trailer);
    let continuation =
        if transform { content.iter().map(|&c| task.apply(c)).collect() } else { content };
    TrainExample { prompt, continuation }
}

/// Pre-train a base model: copying, plus each task's raw transformation under
/// its cue token, plus instruction-token prompts that continue as plain
/// copies (the capability exists, the instruction is ignored).
pub fn pretrain_base(
    config: &ModelConfig,
    tasks: &[ToyTask],
    hyper: &TrainHyper,
    init_seed: u64,
) -> Result<ModelParams> {
    for t in tasks {
        t.validate(config)?;
    }
    let mut params = crate::model::init_model(config, init_seed)?;
    let tasks = tasks.to_vec();
    train(
        &mut params,
        hyper.pretrain_steps,
        hyper.batch_size,
        hyper.lr,
        hyper.seed,
        &Trainable::All,
        move |rng| {
            let r: f64 = rng.gen();
            let t = &tasks[rng.gen_range(0..tasks.len())];
            if r < 0.50 {
                sample_copy(&tasks, rng)
            } else {
                let cue = sample_cue(t, rng);
                sample_prompted(t, cue, true, rng)
            }
        },
    )?;
    Ok(params)
}

/// Specialize a base model toward one task's instructed behavior. Other
/// tasks' instruction tokens keep their copy behavior so the update stays
/// inert off-task.
pub fn specialize(
    base: &ModelParams,
    task: &ToyTask,
    inert_instructions: &[usize],
    hyper: &TrainHyper,
    trainable: &Trainable,
) -> Result<ModelParams> {
    task.validate(&base.config)?;
    let mut params = base.clone();
    let task = task.clone();
    let inert = inert_instructions.to_vec();
    train(
        &mut params,
        hyper.sft_steps,
        hyper.batch_size,
        hyper.sft_lr,
        hyper.seed.wrapping_add(1),
        trainable,
        move |rng| {
            let r: f64 = rng.gen();
            if r < 0.45 {
                sample_prompted(&task, task.instruction_token, true, rng)
            } else if r < 0.70 {
                sample_copy(std::slice::from_ref(&task), rng)
            } else if r < 0.90 || inert.is_empty() {
                let cue = sample_cue(&task, rng);
                sample_prompted(&task, cue, true, rng)
            } else {
                let trailer = inert[rng.gen_range(0..inert.len())];
                sample_prompted(&task, trailer, false, rng)
            }
        },
    )?;
    Ok(params)
}

/// Convergence thresholds for the paired setting.
pub const SFT_MIN_ACCURACY: f64 = 0.95;
pub const BASE_MAX_ACCURACY: f64 = 0.10;

/// Build the paired setting: shared-init pre-training, then slice-restricted
/// specialization. Errors with the measured accuracies if either side misses
/// its threshold.
pub fn train_base_and_specialized(
    config: &ModelConfig,
    task: &ToyTask,
    hyper: &TrainHyper,
) -> Result<(ModelParams, ModelParams)> {
    let base = pretrain_base(config, std::slice::from_ref(task), hyper, hyper.seed)?;
    let sft = specialize(&base, task, &[], hyper, &Trainable::ComponentSlices)?;
    let eval = make_instruction_dataset(task, 64, hyper.seed.wrapping_add(9001));
    let acc_base = task_accuracy(&base.view(), task, &eval)?;
    let acc_sft = task_accuracy(&sft.view(), task, &eval)?;
    if acc_sft < SFT_MIN_ACCURACY || acc_base > BASE_MAX_ACCURACY {
        return Err(Error::NonConvergence(format!(
            "specialized accuracy {acc_sft:.3} (need >= {SFT_MIN_ACCURACY}), base accuracy {acc_base:.3} (need <= {BASE_MAX_ACCURACY})"
        )));
    }
    Ok((base, sft))
}

/// A ground-truth edit plan: perturb exactly the named components' slices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantSpec {
    pub edits: Vec<(ComponentId, f32)>,
    pub seed: u64,
}

/// Perturb only the listed components' parameter slices with deterministic
/// Gaussian noise. The parameter delta's support is exactly the slice union.
pub fn plant_component_edits(base: &ModelParams, spec: &PlantSpec) -> Result<ModelParams> {
    let comps: Vec<ComponentId> = spec.edits.iter().map(|(c, _)| *c).collect();
    // Validates disjointness (duplicate components are the only overlap).
    let _ = slice_masks(&base.config, &comps)?;
    let mut out = base.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
    for (c, scale) in &spec.edits {
        let slice = crate::patching::component_slice(*c, &base.config)?;
        for (name, region) in &slice.regions {
            let (r, cols) = tensor_shape(&base.config, name)?;
            let tensor = out.tensor_mut(name)?;
            for i in region.indices(r, cols) {
                tensor[i] += scale * normal.sample(&mut rng);
            }
        }
    }
    Ok(out)
}

/// Strict-match accuracy of greedy continuations against the instructed
/// targets.
pub fn task_accuracy(model: &ParamsRef<'_>, task: &ToyTask, examples: &[PairedExample]) -> Result<f64> {
    task_accuracy_hooked(model, task, examples, |_| Hooks::none())
}

/// Accuracy under calibrated steering at the anchor.
pub fn steered_task_accuracy(
    model: &ParamsRef<'_>,
    task: &ToyTask,
    examples: &[PairedExample],
    spec: &AnchorSpec,
) -> Result<f64> {
    task_accuracy_hooked(model, task, examples, |ex| match spec.steer_site(ex.x_r.len()) {
        Ok(site) => Hooks { steer: vec![site], ..Hooks::none() },
        Err(_) => Hooks::none(),
    })
}

fn task_accuracy_hooked<F>(
    model: &ParamsRef<'_>,
    _task: &ToyTask,
    examples: &[PairedExample],
    hooks_for: F,
) -> Result<f64>
where
    F: Fn(&PairedExample) -> Hooks,
{
    if examples.is_empty() {
        return Err(Error::EmptyInput("task_accuracy: no examples"));
    }
    let mut hits = 0usize;
    for ex in examples {
        let out = generate_greedy(model, &ex.x_r, ex.target.len(), &hooks_for(ex))?;
        if out[ex.x_r.len()..] == ex.target[..] {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, test_config};

    #[test]
    fn dataset_is_deterministic_and_paired() {
        let task = task_a();
        let a = make_instruction_dataset(&task, 10, 5);
        let b = make_instruction_dataset(&task, 10, 5);
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        for ex in &a {
            // x_cf is x_r with the instruction token deleted.
            let mut rebuilt = ex.x_r.clone();
            rebuilt.pop();
            assert_eq!(rebuilt, ex.x_cf);
            assert_eq!(ex.target.len(), ex.content().len());
            for (c, t) in ex.content().iter().zip(&ex.target) {
                assert_eq!(task.apply(*c), *t);
            }
        }
    }

    #[test]
    fn transformation_is_a_bijection() {
        let task = task_a();
        let mut seen = std::collections::BTreeSet::new();
        for c in task.content_lo..task.content_lo + task.n_content {
            let t = task.apply(c);
            assert!(t >= task.content_lo && t < task.content_lo + task.n_content);
            assert!(seen.insert(t));
        }
    }

    #[test]
    fn jsonl_round_trip_and_field_names() {
        let examples = make_instruction_dataset(&task_a(), 3, 1);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &examples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"x_r\":["));
        assert!(text.contains("\"x_cf\":["));
        assert!(text.contains("\"target\":["));
        let back = read_jsonl(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back, examples);
    }

    #[test]
    fn empty_plant_is_identity() {
        let base = init_model(&test_config(), 1).unwrap();
        let planted = plant_component_edits(&base, &PlantSpec { edits: vec![], seed: 3 }).unwrap();
        assert_eq!(planted, base);
    }

    #[test]
    fn planted_neuron_touches_exactly_three_regions() {
        let cfg = test_config();
        let base = init_model(&cfg, 2).unwrap();
        let c = ComponentId::neuron(2, 5);
        let planted =
            plant_component_edits(&base, &PlantSpec { edits: vec![(c, 0.5)], seed: 4 }).unwrap();
        let mut changed = Vec::new();
        for name in tensor_names(&cfg) {
            if planted.tensor(&name).unwrap() != base.tensor(&name).unwrap() {
                changed.push(name);
            }
        }
        assert_eq!(changed, vec!["layers.2.w_gate", "layers.2.w_up", "layers.2.w_down"]);
        // And within those, only column/row 5 moved.
        let masks = slice_masks(&cfg, &[c]).unwrap();
        for (name, mask) in masks {
            let b = base.tensor(&name).unwrap();
            let p = planted.tensor(&name).unwrap();
            for i in 0..b.len() {
                if mask[i] {
                    assert_ne!(b[i], p[i]);
                } else {
                    assert_eq!(b[i], p[i]);
                }
            }
        }
    }

    #[test]
    fn zero_specialization_steps_leave_delta_zero() {
        let cfg = test_config();
        let base = init_model(&cfg, 3).unwrap();
        let hyper = TrainHyper { sft_steps: 0, ..TrainHyper::default() };
        let sft = specialize(&base, &task_a(), &[], &hyper, &Trainable::ComponentSlices).unwrap();
        assert_eq!(sft, base);
    }

    #[test]
    fn slice_restricted_training_freezes_non_slice_tensors() {
        let cfg = test_config();
        let base = init_model(&cfg, 4).unwrap();
        let hyper = TrainHyper { sft_steps: 3, batch_size: 2, ..TrainHyper::default() };
        let sft = specialize(&base, &task_a(), &[], &hyper, &Trainable::ComponentSlices).unwrap();
        for name in tensor_names(&cfg) {
            let frozen = name == "token_embedding"
                || name == "final_norm"
                || name == "lm_head"
                || name.contains("norm")
                || name.contains("w_k")
                || name.contains("w_v");
            let equal = sft.tensor(&name).unwrap() == base.tensor(&name).unwrap();
            assert_eq!(equal, frozen, "{name}");
        }
    }

    #[test]
    fn component_restricted_training_stays_on_slices() {
        let cfg = test_config();
        let base = init_model(&cfg, 5).unwrap();
        let comps = vec![ComponentId::neuron(1, 0), ComponentId::head(2, 1)];
        let hyper = TrainHyper { sft_steps: 3, batch_size: 2, ..TrainHyper::default() };
        let sft =
            specialize(&base, &task_a(), &[], &hyper, &Trainable::Components(comps.clone())).unwrap();
        let masks = slice_masks(&cfg, &comps).unwrap();
        for name in tensor_names(&cfg) {
            let b = base.tensor(&name).unwrap();
            let s = sft.tensor(&name).unwrap();
            match masks.get(&name) {
                Some(mask) => {
                    for i in 0..b.len() {
                        if !mask[i] {
                            assert_eq!(b[i], s[i], "{name}[{i}] outside slice moved");
                        }
                    }
                }
                None => assert_eq!(b, s, "{name} moved without being trainable"),
            }
        }
    }

    #[test]
    fn constant_model_scores_zero_accuracy() {
        // A model that emits a constant token almost never strict-matches.
        let cfg = test_config();
        let mut params = init_model(&cfg, 6).unwrap();
        // Bias the head so one vocab entry dominates.
        for row in 0..cfg.d_model {
            params.lm_head[row * cfg.vocab_size + 3] = 50.0;
        }
        let task = task_a();
        let eval = make_instruction_dataset(&task, 32, 7);
        let acc = task_accuracy(&params.view(), &task, &eval).unwrap();
        assert!(acc < 0.05, "constant model accuracy {acc}");
    }
}
