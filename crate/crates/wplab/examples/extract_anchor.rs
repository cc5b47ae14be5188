//! Extract layer-wise task directions from a trained pair, select the anchor
//! layer by steering recovery, and print the recovery curve.

use wplab::anchor::{select_anchor, PositionRule};
use wplab::model::ModelConfig;
use wplab::workshop::{
    make_instruction_dataset, split_halves, task_a, task_accuracy, train_base_and_specialized,
    TrainHyper,
};

fn main() -> wplab::Result<()> {
    let config = ModelConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 4,
        n_kv_heads: 2,
        d_ff: 64,
        vocab_size: 96,
        max_seq_len: 24,
    };
    let task = task_a();
    let hyper = TrainHyper::default();
    let (base, sft) = train_base_and_specialized(&config, &task, &hyper)?;

    let pairs = make_instruction_dataset(&task, 128, 42);
    let (extraction, evaluation) = split_halves(&pairs);

    let sel = select_anchor(
        &base.view(),
        &sft.view(),
        extraction,
        evaluation,
        &task,
        PositionRule::LastPromptToken,
    )?;

    println!("acc base {:.3}", task_accuracy(&base.view(), &task, evaluation)?);
    println!("acc sft  {:.3}", task_accuracy(&sft.view(), &task, evaluation)?);
    for (l, r) in sel.recovery_by_layer.iter().enumerate() {
        println!("layer {}  correction rate {:.3}", l + 1, r);
    }
    println!("selected anchor layer {} (mu_bar {:.4})", sel.spec.layer, sel.spec.mu_bar);
    Ok(())
}
