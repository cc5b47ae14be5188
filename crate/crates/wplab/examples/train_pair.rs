//! Train a paired base/specialized model on the default toy task and report
//! accuracies on held-out instructed prompts.

use wplab::model::ModelConfig;
use wplab::workshop::{
    make_instruction_dataset, pretrain_base, specialize, task_a, task_accuracy, TrainHyper, Trainable,
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

    let t0 = std::time::Instant::now();
    let base = pretrain_base(&config, std::slice::from_ref(&task), &hyper, hyper.seed)?;
    println!("pre-trained base in {:.1?}", t0.elapsed());

    let t1 = std::time::Instant::now();
    let sft = specialize(&base, &task, &[], &hyper, &Trainable::ComponentSlices)?;
    println!("specialized in {:.1?}", t1.elapsed());

    let eval = make_instruction_dataset(&task, 64, 9001);
    let copy_eval: Vec<_> = eval
        .iter()
        .map(|ex| {
            let mut x = ex.x_r.clone();
            *x.last_mut().unwrap() = task.plain_token;
            wplab::workshop::PairedExample { x_r: x.clone(), x_cf: x, target: ex.content().to_vec() }
        })
        .collect();
    let cue_eval: Vec<_> = eval
        .iter()
        .map(|ex| {
            let mut x = ex.x_r.clone();
            *x.last_mut().unwrap() = task.cue_tokens[0];
            wplab::workshop::PairedExample { x_r: x.clone(), x_cf: x, target: ex.target.clone() }
        })
        .collect();

    println!("base  copy accuracy        {:.3}", task_accuracy(&base.view(), &task, &copy_eval)?);
    println!("base  cue-transform acc    {:.3}", task_accuracy(&base.view(), &task, &cue_eval)?);
    println!("base  instructed accuracy  {:.3}", task_accuracy(&base.view(), &task, &eval)?);
    println!("sft   instructed accuracy  {:.3}", task_accuracy(&sft.view(), &task, &eval)?);
    println!("sft   copy accuracy        {:.3}", task_accuracy(&sft.view(), &task, &copy_eval)?);
    Ok(())
}
