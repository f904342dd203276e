//! Forward-only split execution: serve predictions while the workers hold
//! nothing but masked tensors, with every reply integrity-checked.
//!
//! Run with: cargo run --example masked_inference

use veilnn::dataset::synthetic_blobs;
use veilnn::engine::{infer_protocol, train_protocol, IntegrityPolicy};
use veilnn::nn::layer::LayerSpec;
use veilnn::nn::loss::argmax;
use veilnn::nn::model::Model;
use veilnn::nn::train::TrainConfig;
use veilnn::protocol::transcript::{MessageKind, Transcript};
use veilnn::protocol::worker::WorkerProfile;
use veilnn::protocol::SessionConfig;
use veilnn::tensor::{rel_linf, Precision};

fn honest(n: usize) -> Vec<WorkerProfile> {
    (0..n).map(WorkerProfile::honest).collect()
}

fn main() -> veilnn::Result<()> {
    // Train a small classifier first (masked as well — see train_masked for
    // the play-by-play), then serve it.
    let data = synthetic_blobs(2, 8, 50, 4.0, 3)?;
    let (train, val) = data.split(0.2, 4)?;
    let mut model = Model::init(
        vec![
            LayerSpec::Dense { in_dim: 8, out_dim: 12 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_dim: 12, out_dim: 2 },
        ],
        &[8],
        6,
    )?;
    let tcfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 4,
        epochs: 3,
        max_steps: None,
        precision: Precision::F64,
        seed: 8,
        track_trajectory: false,
    };
    let scfg = SessionConfig { seed: 15, ..SessionConfig::default() };
    let mut transcript = Transcript::new();
    train_protocol(
        &mut model,
        &tcfg,
        &train,
        &val,
        &scfg,
        &honest(scfg.workers_needed()),
        IntegrityPolicy::Abort,
        &mut transcript,
    )?;

    // Masked inference over the validation split. Virtual batches hold up to
    // k = 2 inputs; the trailing odd one simply gets a smaller group.
    let mut transcript = Transcript::new();
    let report = infer_protocol(
        &model,
        &val.xs,
        &scfg,
        &honest(scfg.workers_needed()),
        IntegrityPolicy::Abort,
        &mut transcript,
    )?;

    let mut worst = 0.0f64;
    let mut hits = 0usize;
    for ((x, &label), logits) in val.xs.iter().zip(&val.ys).zip(&report.logits) {
        let local = model.forward(x, Precision::F64)?;
        worst = worst.max(rel_linf(logits, &local, 1e-30));
        hits += usize::from(argmax(logits) == label);
    }
    println!("served {} inputs; val acc {:.4}", val.len(), hits as f64 / val.len() as f64);
    println!("max relative logit gap vs local forward: {worst:.2e}");
    assert!(worst < 1e-8, "masked logits must match the local model");

    let verdicts = transcript
        .messages()
        .iter()
        .filter(|m| m.kind == MessageKind::Verdict)
        .count();
    println!("integrity verdicts issued: {verdicts} (one per masked layer pass), all passing");
    assert_eq!(report.integrity_failures, 0);

    // Single-input mode (k = 1) trades batching for the tightest accuracy:
    // only one sample is mixed with the noise, so decode error is minimal.
    let scfg1 = SessionConfig { k: 1, seed: 21, ..SessionConfig::default() };
    let mut t1 = Transcript::new();
    let single = infer_protocol(
        &model,
        &val.xs[..3],
        &scfg1,
        &honest(scfg1.workers_needed()),
        IntegrityPolicy::Abort,
        &mut t1,
    )?;
    let mut worst1 = 0.0f64;
    for (x, logits) in val.xs[..3].iter().zip(&single.logits) {
        worst1 = worst1.max(rel_linf(logits, &model.forward(x, Precision::F64)?, 1e-30));
    }
    println!("single-input (k = 1) max logit gap: {worst1:.2e}");
    assert!(worst1 < 1e-10);

    println!("\nno worker saw an unmasked input or an unmasked logit.");
    Ok(())
}
