//! Diagnostic: where does the instruction mode live, and what interventions
//! at the anchor position flip behavior?

use wplab::anchor::{calibrate_mu_bar, extract_layer_direction, PositionRule};
use wplab::forward::{forward, generate_greedy, Hooks, SteerSite};
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
        sft_lr: env("SFT_LR", 1e-3),
        sft_steps: env("SFT_STEPS", 2000),
        ..TrainHyper::default()
    };
    let (base, sft) = train_base_and_specialized(&config, &task, &hyper)?;
    let pairs = make_instruction_dataset(&task, 128, 42);
    let (ext, eval) = split_halves(&pairs);
    let eval = &eval[..32];

    for layer in 1..=config.n_layers {
        let v = extract_layer_direction(&sft.view(), ext, layer, PositionRule::LastPromptToken)?;
        let mu = calibrate_mu_bar(&sft.view(), ext, layer, PositionRule::LastPromptToken, &v)?;
        let n = tensor::norm2(&v);
        let v_hat: Vec<f32> = v.iter().map(|&x| (x as f64 / n) as f32).collect();

        let mut steer_full = 0usize; // strict match under calibrated steering
        let mut steer_first = 0usize; // first-token match
        let mut steer_over = 0usize; // 3x overshoot, first token
        let mut steer_cross = 0usize; // cross-model direction, first token

        // Cross-model mean direction at this layer (diagnostic only).
        let d = config.d_model;
        let mut xdir = vec![0.0f64; d];
        let mut mu_x = 0.0f64;
        for ex in ext {
            let t_a = ex.x_r.len() - 1;
            let zs = forward(&sft.view(), &ex.x_r, &Hooks::none())?;
            let zb = forward(&base.view(), &ex.x_r, &Hooks::none())?;
            for i in 0..d {
                xdir[i] += (zs.residual_row(layer, t_a)[i] - zb.residual_row(layer, t_a)[i]) as f64;
            }
        }
        let xn = xdir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let x_hat: Vec<f32> = xdir.iter().map(|&v| (v / xn) as f32).collect();
        for ex in ext {
            let t_a = ex.x_r.len() - 1;
            let zs = forward(&sft.view(), &ex.x_r, &Hooks::none())?;
            mu_x += tensor::dot(zs.residual_row(layer, t_a), &x_hat);
        }
        let mu_x = (mu_x / ext.len() as f64) as f32;
        let mut replace_full = 0usize; // strict match when the whole row is transplanted
        let mut replace_first = 0usize;
        let mut base_proj = 0.0f64;
        for ex in eval {
            let t_a = ex.x_r.len() - 1;
            // Calibrated steering.
            let hooks = Hooks {
                steer: vec![SteerSite { layer, pos: t_a, v_hat: v_hat.clone(), mu_bar: mu }],
                ..Hooks::none()
            };
            let out = generate_greedy(&base.view(), &ex.x_r, ex.target.len(), &hooks)?;
            if out[ex.x_r.len()..] == ex.target[..] {
                steer_full += 1;
            }
            if out[ex.x_r.len()] == ex.target[0] {
                steer_first += 1;
            }
            // Overshoot x3.
            let hooks3 = Hooks {
                steer: vec![SteerSite {
                    layer,
                    pos: t_a,
                    v_hat: v_hat.clone(),
                    mu_bar: mu + 2.0 * (mu - tensor::dot(
                        forward(&base.view(), &ex.x_r, &Hooks::none())?.residual_row(layer, t_a),
                        &v_hat) as f32),
                }],
                ..Hooks::none()
            };
            let out3 = generate_greedy(&base.view(), &ex.x_r, ex.target.len(), &hooks3)?;
            if out3[ex.x_r.len()] == ex.target[0] {
                steer_over += 1;
            }
            // Cross-model direction diagnostic: steer along mean(sft - base).
            let hooks_x = Hooks {
                steer: vec![SteerSite { layer, pos: t_a, v_hat: x_hat.clone(), mu_bar: mu_x }],
                ..Hooks::none()
            };
            let out_x = generate_greedy(&base.view(), &ex.x_r, ex.target.len(), &hooks_x)?;
            if out_x[ex.x_r.len()] == ex.target[0] {
                steer_cross += 1;
            }

            // Upper bound: transplant the specialized model's full residual
            // row at (layer, t_a) into the base run.
            let sft_trace = forward(&sft.view(), &ex.x_r, &Hooks::none())?;
            let base_trace = forward(&base.view(), &ex.x_r, &Hooks::none())?;
            base_proj += tensor::dot(base_trace.residual_row(layer, t_a), &v_hat);
            let _ = base_trace;
            let row = sft_trace.residual_row(layer, t_a).to_vec();
            let hooks_r =
                Hooks { residual_row_overrides: vec![(layer, t_a, row)], ..Hooks::none() };
            let out_r = generate_greedy(&base.view(), &ex.x_r, ex.target.len(), &hooks_r)?;
            if out_r[ex.x_r.len()..] == ex.target[..] {
                replace_full += 1;
            }
            if out_r[ex.x_r.len()] == ex.target[0] {
                replace_first += 1;
            }
        }
        println!(
            "layer {layer}: |v|={:.3} mu={:.3} base_proj={:.3} steer_strict={}/{} steer_first={}/{} over3={}/{} cross={}/{} row_strict={}/{} row_first={}/{}",
            n,
            mu,
            base_proj / eval.len() as f64,
            steer_full,
            eval.len(),
            steer_first,
            eval.len(),
            steer_over,
            eval.len(),
            steer_cross,
            eval.len(),
            replace_full,
            eval.len(),
            replace_first,
            eval.len()
        );
    }
    Ok(())
}
