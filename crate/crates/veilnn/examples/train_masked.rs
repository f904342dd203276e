//! Train the same model twice — once locally in the clear, once with every
//! bilinear kernel offloaded to workers on masked tensors — and watch the
//! two runs stay glued together while the wire traffic stays opaque.
//!
//! Run with: cargo run --example train_masked

use veilnn::dataset::synthetic_blobs;
use veilnn::engine::{train_protocol, IntegrityPolicy};
use veilnn::nn::layer::LayerSpec;
use veilnn::nn::model::Model;
use veilnn::nn::train::{train_plaintext, TrainConfig};
use veilnn::protocol::transcript::{tensor_digest_hex, MessageKind, Transcript};
use veilnn::protocol::worker::WorkerProfile;
use veilnn::protocol::{audit_one_encoding, audit_secrecy, SessionConfig};
use veilnn::tensor::{rel_linf, Precision};

fn main() -> veilnn::Result<()> {
    let data = synthetic_blobs(3, 8, 40, 4.0, 11)?;
    let (train, val) = data.split(0.2, 2)?;
    println!("dataset: {} train / {} val, 3 classes", train.len(), val.len());

    let layers = vec![
        LayerSpec::Dense { in_dim: 8, out_dim: 16 },
        LayerSpec::Relu,
        LayerSpec::Dense { in_dim: 16, out_dim: 3 },
    ];
    let cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 4,
        epochs: 4,
        max_steps: None,
        precision: Precision::F64,
        seed: 9,
        track_trajectory: true,
    };

    // Baseline: ordinary SGD, nothing leaves the process.
    let mut plain_model = Model::init(layers.clone(), &[8], 1)?;
    let plain = train_plaintext(&mut plain_model, &cfg, &train, &val)?;

    // Masked run: identical data order and update rule, but the workers do
    // all dense-layer arithmetic on masked tensors. k = 2 samples share each
    // virtual batch with one sigma^2 = 1e8 noise tensor and one redundant
    // tensor for verification.
    let scfg = SessionConfig { seed: 77, ..SessionConfig::default() };
    let profiles: Vec<WorkerProfile> = (0..scfg.workers_needed()).map(WorkerProfile::honest).collect();
    let mut masked_model = Model::init(layers, &[8], 1)?;
    let mut transcript = Transcript::new();
    let (masked, _pool) = train_protocol(
        &mut masked_model,
        &cfg,
        &train,
        &val,
        &scfg,
        &profiles,
        IntegrityPolicy::Abort,
        &mut transcript,
    )?;

    println!("\nepoch |   plain loss |  masked loss | plain acc | masked acc");
    for (p, q) in plain.epochs.iter().zip(&masked.epochs) {
        println!(
            "{:>5} | {:>12.8} | {:>12.8} | {:>9.4} | {:>10.4}",
            p.epoch, p.loss, q.loss, p.train_acc, q.train_acc
        );
    }

    // Per-step parameter trajectories agree to float-mixing precision.
    let mut worst = 0.0f64;
    for (a, b) in masked.trajectory.iter().zip(&plain.trajectory) {
        for (ta, tb) in a.iter().zip(b) {
            worst = worst.max(rel_linf(ta, tb, 1e-30));
        }
    }
    println!("\nmax relative parameter gap across {} steps: {worst:.2e}", masked.steps);
    assert!(worst < 1e-6, "masked run drifted from the plain one");

    // Same predictions, sample for sample.
    let agree = train
        .xs
        .iter()
        .filter(|x| {
            masked_model.predict(x, cfg.precision).unwrap()
                == plain_model.predict(x, cfg.precision).unwrap()
        })
        .count();
    println!("prediction agreement: {agree}/{}", train.len());
    assert_eq!(agree, train.len());

    // What actually crossed the trust boundary?
    let jobs = transcript.messages().iter().filter(|m| m.kind == MessageKind::Job).count();
    let results = transcript.messages().iter().filter(|m| m.kind == MessageKind::Result).count();
    let bcasts = transcript.messages().iter().filter(|m| m.kind == MessageKind::Broadcast).count();
    println!("\ntranscript: {} messages ({jobs} jobs, {results} results, {bcasts} broadcasts)", transcript.len());

    let one = audit_one_encoding(&transcript);
    println!("one-masked-tensor-per-worker-per-group audit: ok = {}", one.ok);
    assert!(one.ok);

    let secrets: Vec<String> = train.xs.iter().map(tensor_digest_hex).collect();
    let sec = audit_secrecy(&transcript, &secrets);
    println!("raw-input secrecy audit over {} digests: ok = {}", secrets.len(), sec.ok);
    assert!(sec.ok);

    println!("\nthe workers did every dense-layer multiply without ever holding");
    println!("an unmasked sample, and the trained model is the plain one.");
    Ok(())
}
