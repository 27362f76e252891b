//! Minimal library walkthrough: build a two-vocabulary synthetic corpus,
//! run the staged pipeline and the full-parameter baseline, and compare
//! their evaluation curves.
//!
//! Run with: `cargo run --release -p disco-core --example staged_run`

use disco_core::data::{synthetic_clustered_corpus, Corpus, SyntheticSpec};
use disco_core::model::MoEConfig;
use disco_core::pipeline::{run_disco, run_full_baseline, RunConfig};

fn main() {
    let mut spec = SyntheticSpec::new(2, 60_000, 7);
    spec.words_per_vocab = 160;
    let (text, _) = synthetic_clustered_corpus(&spec);
    let corpus = Corpus::from_text(&text);
    println!(
        "corpus: {} sentences, {} tokens",
        corpus.len(),
        corpus.total_tokens()
    );

    let model = MoEConfig {
        vocab_size: 256,
        d_model: 64,
        n_layers: 2,
        n_heads: 4,
        d_ff: 128,
        num_experts: 2,
        top_k: 2,
        max_seq_len: 64,
    };
    let mut run = RunConfig::new(model, 1);
    run.submodel_steps = 150;
    run.finetune_steps = 150;
    run.baseline_steps = 300;
    run.submodel_lr = 1e-3;
    run.finetune_peak_lr = 3e-3;
    run.eval_every = 25;

    let baseline = run_full_baseline::<f32>(&run, &corpus).expect("baseline");
    println!("\nfull-parameter baseline:");
    for p in &baseline.report.points {
        println!("  step {:4}  loss {:.4}  ppl {:8.2}", p.step, p.loss, p.ppl);
    }

    let staged = run_disco::<f32>(&run, &corpus).expect("staged run");
    println!("\nshards: {:?}", staged.gamma.values());
    for report in &staged.reports {
        println!("\nphase {}:", report.phase);
        for p in &report.points {
            println!("  step {:4}  loss {:.4}  ppl {:8.2}", p.step, p.loss, p.ppl);
        }
    }
    println!(
        "\nsubmodel wall times: {:?}; fine-tune wall: {:.1}s; cross-worker accesses: {}",
        staged
            .cost_inputs
            .submodel_wall_times_s
            .iter()
            .map(|t| format!("{t:.1}s"))
            .collect::<Vec<_>>(),
        staged.cost_inputs.finetune_wall_s,
        staged.comm.cross_worker
    );
}
