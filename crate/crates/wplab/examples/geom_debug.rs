//! Geometry of the specialized-vs-base state difference at the anchor site.

use wplab::anchor::{extract_layer_direction, PositionRule};
use wplab::forward::{forward, generate_greedy, Hooks};
use wplab::model::ModelConfig;
use wplab::tensor;
use wplab::workshop::{
    make_instruction_dataset, split_halves, task_a, train_base_and_specialized, TrainHyper,
};

fn env<T: std::str::FromStr>(k: &str, d: T) -> T {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn main() -> wplab::Result<()> {
    let config = ModelConfig {
        n_layers: env("LAYERS", 2),
        d_model: env("DMODEL", 32),
        n_heads: 4,
        n_kv_heads: 2,
        d_ff: env("DFF", 64),
        vocab_size: 96,
        max_seq_len: 24,
    };
    let task = task_a();
    let hyper = TrainHyper {
        pretrain_steps: env("PRETRAIN", 4000),
        sft_lr: env("SFT_LR", 5e-4),
        sft_steps: env("SFT_STEPS", 4000),
        ..TrainHyper::default()
    };
    let (base, sft) = train_base_and_specialized(&config, &task, &hyper)?;
    let pairs = make_instruction_dataset(&task, 128, 42);
    let (ext, eval) = split_halves(&pairs);
    let eval = &eval[..32];
    let d = config.d_model;

    for layer in 1..=config.n_layers {
        let v = extract_layer_direction(&sft.view(), ext, layer, PositionRule::LastPromptToken)?;

        // Per-input cross-model differences on the eval half.
        let mut deltas: Vec<Vec<f32>> = Vec::new();
        for ex in eval {
            let t_a = ex.x_r.len() - 1;
            let zs = forward(&sft.view(), &ex.x_r, &Hooks::none())?;
            let zb = forward(&base.view(), &ex.x_r, &Hooks::none())?;
            let delta: Vec<f32> = zs.residual_row(layer, t_a)
                .iter()
                .zip(zb.residual_row(layer, t_a))
                .map(|(a, b)| a - b)
                .collect();
            deltas.push(delta);
        }
        let mean: Vec<f32> = (0..d)
            .map(|i| deltas.iter().map(|dl| dl[i] as f64).sum::<f64>() as f32 / deltas.len() as f32)
            .collect();
        let mean_norm = tensor::norm2(&mean);
        let avg_norm: f64 = deltas.iter().map(|dl| tensor::norm2(dl)).sum::<f64>() / deltas.len() as f64;
        let avg_cos_mean: f64 = deltas
            .iter()
            .map(|dl| tensor::cosine(dl, &mean, "x").unwrap_or(0.0))
            .sum::<f64>()
            / deltas.len() as f64;
        let cos_v_mean = tensor::cosine(&v, &mean, "x").unwrap_or(0.0);

        // Steering variant: add the full mean difference vector.
        let mut add_mean_hits = 0usize;
        for ex in eval {
            let t_a = ex.x_r.len() - 1;
            let zb = forward(&base.view(), &ex.x_r, &Hooks::none())?;
            let mut row = zb.residual_row(layer, t_a).to_vec();
            for i in 0..d {
                row[i] += mean[i];
            }
            let hooks = Hooks { residual_row_overrides: vec![(layer, t_a, row)], ..Hooks::none() };
            let out = generate_greedy(&base.view(), &ex.x_r, ex.target.len(), &hooks)?;
            if out[ex.x_r.len()..] == ex.target[..] {
                add_mean_hits += 1;
            }
        }
        // Base-only cue direction: mean over extraction inputs of
        // z_base(cue-version) - z_base(x_r), added at full magnitude.
        let mut cue_dir = vec![0.0f64; d];
        for ex in ext {
            let t_a = ex.x_r.len() - 1;
            let mut x_cue = ex.x_r.clone();
            *x_cue.last_mut().unwrap() = task.cue_tokens[0];
            let zc = forward(&base.view(), &x_cue, &Hooks::none())?;
            let zb = forward(&base.view(), &ex.x_r, &Hooks::none())?;
            for i in 0..d {
                cue_dir[i] += (zc.residual_row(layer, t_a)[i] - zb.residual_row(layer, t_a)[i]) as f64;
            }
        }
        let cue_dir: Vec<f32> = cue_dir.iter().map(|&x| (x / ext.len() as f64) as f32).collect();
        let mut cue_hits = 0usize;
        for ex in eval {
            let t_a = ex.x_r.len() - 1;
            let zb = forward(&base.view(), &ex.x_r, &Hooks::none())?;
            let mut row = zb.residual_row(layer, t_a).to_vec();
            for i in 0..d {
                row[i] += cue_dir[i];
            }
            let hooks = Hooks { residual_row_overrides: vec![(layer, t_a, row)], ..Hooks::none() };
            let out = generate_greedy(&base.view(), &ex.x_r, ex.target.len(), &hooks)?;
            if out[ex.x_r.len()..] == ex.target[..] {
                cue_hits += 1;
            }
        }
        println!(
            "layer {layer}: |mean_dz|={mean_norm:.3} avg|dz|={avg_norm:.3} cos(dz,mean)={avg_cos_mean:.3} cos(v,mean)={cos_v_mean:.3} add_mean={add_mean_hits}/{} base_cue_dir={cue_hits}/{}",
            eval.len(),
            eval.len()
        );
    }
    Ok(())
}
