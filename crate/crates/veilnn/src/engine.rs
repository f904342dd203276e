//! Split-execution training and inference.
//!
//! The coordinator runs the *same* SGD loop as [`crate::nn::train`] — same
//! epoch shuffle, same batch chunking, same `lr/batch` update rule, same
//! per-epoch evaluation — but every bilinear kernel (dense/conv forward,
//! weight gradient, input gradient) is evaluated by untrusted workers on
//! masked tensors. Each SGD batch is split into consecutive virtual batches
//! of `k` samples; each virtual batch gets a fresh masking group per layer
//! pass. Biases, nonlinearities, the loss, and the evaluation stay on the
//! coordinator: they are input-independent or cheap, and keeping them local
//! is what lets the trajectory track the plain trainer to float precision.
//!
//! Weight-gradient passes reuse the forward pass's masked tensors
//! byte-for-byte (each worker only ever sees one masked tensor per group);
//! input-gradient passes mask the per-sample output gradients under a fresh
//! group of their own. Every redundant-column verdict funnels through one
//! [`IntegrityPolicy`], and failed verdicts are tallied into the epoch
//! metrics whichever policy is active.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nn::model::{add_bias, bias_grad, GradSet, Model};
use crate::nn::train::{
    effective_epochs, epoch_order, evaluate, EpochMetrics, TrainConfig, TrainReport,
};
use crate::protocol::transcript::Transcript;
use crate::protocol::worker::WorkerProfile;
use crate::protocol::{
    run_grad_equations, run_input_grad, run_virtual_batch, BatchVerdict, MaskedBatch,
    SessionConfig, WorkerPool,
};
use crate::tensor::Tensor;

/// What to do when a redundant-column check fails mid-run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrityPolicy {
    /// Stop the run on the first failed verdict. The default: a failed
    /// check means a worker returned something it could not have gotten
    /// from honest execution.
    #[default]
    Abort,
    /// Re-run the offending pass (fresh masking group for forward and
    /// input-gradient passes, fresh fault draws either way) up to
    /// [`MAX_PASS_RETRIES`] times, then abort. Rides out transient faults.
    RetryBatch,
    /// Count the failure and keep the possibly-corrupted result.
    LogAndContinue,
}

/// Retry budget per masked pass under [`IntegrityPolicy::RetryBatch`].
pub const MAX_PASS_RETRIES: usize = 3;

/// Run one masked pass through the policy filter. Every *failed* verdict
/// counts toward `failures`, including ones a retry later papers over —
/// the tally records how often workers were caught, not how often the run
/// lost data.
fn checked<T>(
    policy: IntegrityPolicy,
    failures: &mut usize,
    what: &str,
    mut attempt: impl FnMut() -> Result<(T, Option<BatchVerdict>)>,
) -> Result<T> {
    let attempts = match policy {
        IntegrityPolicy::RetryBatch => 1 + MAX_PASS_RETRIES,
        _ => 1,
    };
    let mut last: Option<BatchVerdict> = None;
    for _ in 0..attempts {
        let (value, verdict) = attempt()?;
        match verdict {
            Some(v) if !v.passed => {
                *failures += 1;
                last = Some(v);
                match policy {
                    IntegrityPolicy::Abort => {
                        return Err(Error::IntegrityAbort(format!(
                            "{what}: residual {:.3e} exceeds tau {:.3e}",
                            v.max_residual, v.tau
                        )))
                    }
                    IntegrityPolicy::LogAndContinue => return Ok(value),
                    IntegrityPolicy::RetryBatch => continue,
                }
            }
            _ => return Ok(value),
        }
    }
    let v = last.expect("retry loop exits early unless a verdict failed");
    Err(Error::IntegrityAbort(format!(
        "{what}: residual {:.3e} exceeds tau {:.3e} after {attempts} attempts",
        v.max_residual, v.tau
    )))
}

/// Everything the coordinator keeps from a masked forward so the backward
/// pass can reuse it.
struct MaskedForward {
    /// `layer_inputs[l][s]` = plaintext input of layer `l` for sample `s`
    /// (the coordinator's private cache, mirroring the plain trainer's).
    layer_inputs: Vec<Vec<Tensor>>,
    /// The masked batch of each bilinear layer, so the weight-gradient pass
    /// can pair gradients with the *same* masked tensors the workers
    /// already hold.
    masked: Vec<Option<MaskedBatch>>,
    /// Per-sample network outputs.
    outputs: Vec<Tensor>,
}

/// Forward `inputs` (one virtual batch) through the model, offloading every
/// bilinear layer as a masked pass and keeping biases and nonlinearities
/// local.
fn masked_forward(
    model: &Model,
    pool: &mut WorkerPool,
    inputs: &[Tensor],
    scfg: &SessionConfig,
    policy: IntegrityPolicy,
    failures: &mut usize,
    transcript: &mut Transcript,
) -> Result<MaskedForward> {
    let prec = scfg.precision;
    let mut cur: Vec<Tensor> = inputs
        .iter()
        .map(|x| {
            let mut t = x.clone();
            prec.quantize(&mut t);
            t
        })
        .collect();
    let n_layers = model.layers.len();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut masked: Vec<Option<MaskedBatch>> = (0..n_layers).map(|_| None).collect();
    for (l, (layer, weights)) in model.layers.iter().zip(&model.weights).enumerate() {
        layer_inputs.push(cur.clone());
        match weights {
            Some(lw) => {
                let outcome = checked(policy, failures, &format!("forward pass, layer {l}"), || {
                    let o = run_virtual_batch(pool, layer, l, &cur, scfg, transcript)?;
                    let v = o.verdict;
                    Ok((o, v))
                })?;
                let mut outs = outcome.outputs;
                for y in &mut outs {
                    add_bias(layer, y, &lw.b)?;
                    prec.quantize(y);
                }
                masked[l] = Some(outcome.masked);
                cur = outs;
            }
            None => {
                let mut next = Vec::with_capacity(cur.len());
                for x in &cur {
                    let mut y = layer.nonlinear_forward(x)?;
                    prec.quantize(&mut y);
                    next.push(y);
                }
                cur = next;
            }
        }
    }
    Ok(MaskedForward { layer_inputs, masked, outputs: cur })
}

/// Backward one virtual batch from the per-sample logit gradients,
/// accumulating parameter gradients into `grads`. Weight gradients come
/// from grad-equation passes over the forward groups; input gradients (the
/// deltas handed to the next layer down) come from fresh masked passes;
/// bias gradients are summed locally.
#[allow(clippy::too_many_arguments)]
fn masked_backward(
    model: &Model,
    pool: &mut WorkerPool,
    fwd: &MaskedForward,
    dlogits: &[Tensor],
    scfg: &SessionConfig,
    policy: IntegrityPolicy,
    failures: &mut usize,
    grads: &mut GradSet,
    transcript: &mut Transcript,
) -> Result<()> {
    let prec = scfg.precision;
    let mut deltas: Vec<Tensor> = dlogits
        .iter()
        .map(|d| {
            let mut t = d.clone();
            prec.quantize(&mut t);
            t
        })
        .collect();
    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        let xs = &fwd.layer_inputs[l];
        match &model.weights[l] {
            Some(_) => {
                let mb = fwd.masked[l]
                    .as_ref()
                    .expect("bilinear layer ran forward, so its masked batch is cached");
                let gout =
                    checked(policy, failures, &format!("weight-gradient pass, layer {l}"), || {
                        let g = run_grad_equations(pool, layer, mb, &deltas, scfg, transcript)?;
                        let v = g.verdict;
                        Ok((g, v))
                    })?;
                let mut bg = bias_grad(layer, &deltas[0])?;
                for d in &deltas[1..] {
                    bg.axpy(1.0, &bias_grad(layer, d)?)?;
                }
                let slot = grads[l].get_or_insert_with(|| crate::nn::layer::LayerWeights {
                    w: Tensor::zeros(gout.grad.shape()),
                    b: Tensor::zeros(bg.shape()),
                });
                slot.w.axpy(1.0, &gout.grad)?;
                slot.b.axpy(1.0, &bg)?;
                if l > 0 {
                    let in_shape = xs[0].shape().to_vec();
                    let outcome =
                        checked(policy, failures, &format!("input-gradient pass, layer {l}"), || {
                            let o = run_input_grad(
                                pool,
                                layer,
                                l,
                                &deltas,
                                Some(&in_shape),
                                scfg,
                                transcript,
                            )?;
                            let v = o.verdict;
                            Ok((o, v))
                        })?;
                    deltas = outcome.outputs;
                }
            }
            None => {
                let mut next = Vec::with_capacity(deltas.len());
                for (x, d) in xs.iter().zip(&deltas) {
                    let mut nd = layer.nonlinear_backward(x, d)?;
                    prec.quantize(&mut nd);
                    next.push(nd);
                }
                deltas = next;
            }
        }
    }
    Ok(())
}

/// Forward + loss + backward for one virtual batch of `k` samples.
#[allow(clippy::too_many_arguments)]
fn step_virtual_batch(
    model: &Model,
    pool: &mut WorkerPool,
    inputs: &[Tensor],
    labels: &[usize],
    scfg: &SessionConfig,
    policy: IntegrityPolicy,
    failures: &mut usize,
    grads: &mut GradSet,
    step: usize,
    transcript: &mut Transcript,
) -> Result<()> {
    let fwd = masked_forward(model, pool, inputs, scfg, policy, failures, transcript)?;
    let mut dlogits = Vec::with_capacity(inputs.len());
    for (logits, &y) in fwd.outputs.iter().zip(labels) {
        let (loss, dl) = model.loss_and_dlogits(logits, y)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        dlogits.push(dl);
    }
    masked_backward(model, pool, &fwd, &dlogits, scfg, policy, failures, grads, transcript)
}

fn validate_pair(tcfg: &TrainConfig, scfg: &SessionConfig, n_profiles: usize) -> Result<()> {
    tcfg.validate()?;
    scfg.validate()?;
    if tcfg.precision != scfg.precision {
        return Err(Error::Config(format!(
            "training precision {:?} disagrees with session precision {:?}",
            tcfg.precision, scfg.precision
        )));
    }
    if tcfg.batch_size % scfg.k != 0 {
        return Err(Error::Config(format!(
            "batch_size {} must be a multiple of k = {} so every SGD batch splits into whole \
             virtual batches",
            tcfg.batch_size, scfg.k
        )));
    }
    let need = scfg.workers_needed();
    if n_profiles < need {
        return Err(Error::InsufficientWorkers { need, have: n_profiles });
    }
    Ok(())
}

/// Train `model` with SGD where the workers do all the bilinear work on
/// masked tensors. Mirrors [`crate::nn::train::train_plaintext`] decision
/// for decision: the two produce matching trajectories to float-mixing
/// precision when the workers are honest.
///
/// `tcfg.seed` drives the data order (so masked and plain runs shuffle
/// identically); `scfg.seed` drives schemes, masking noise, slot
/// assignment, and fault draws. Each SGD step ends with a broadcast that
/// applies the identical update to every worker replica, keeping replica
/// weights bit-equal to the coordinator's.
///
/// Returns the report together with the worker pool so callers can inspect
/// collusion logs and replica state after the run.
#[allow(clippy::too_many_arguments)]
pub fn train_protocol(
    model: &mut Model,
    tcfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    scfg: &SessionConfig,
    profiles: &[WorkerProfile],
    policy: IntegrityPolicy,
    transcript: &mut Transcript,
) -> Result<(TrainReport, WorkerPool)> {
    validate_pair(tcfg, scfg, profiles.len())?;
    let mut pool = WorkerPool::new(profiles, &model.weights, scfg.seed)?;
    let mut report = TrainReport {
        epochs: Vec::new(),
        steps: 0,
        trajectory: Vec::new(),
        integrity_failures: 0,
    };
    let epochs = effective_epochs(tcfg, train.len());
    'outer: for epoch in 0..epochs {
        let failures_at_epoch_start = report.integrity_failures;
        let order = epoch_order(train.len(), tcfg.seed, epoch);
        for batch in order.chunks_exact(tcfg.batch_size) {
            if tcfg.max_steps.is_some_and(|m| report.steps >= m) {
                break 'outer;
            }
            let mut grads = model.zero_grads();
            for vb in batch.chunks_exact(scfg.k) {
                let inputs: Vec<Tensor> = vb.iter().map(|&i| train.xs[i].clone()).collect();
                let labels: Vec<usize> = vb.iter().map(|&i| train.ys[i]).collect();
                step_virtual_batch(
                    model,
                    &mut pool,
                    &inputs,
                    &labels,
                    scfg,
                    policy,
                    &mut report.integrity_failures,
                    &mut grads,
                    report.steps,
                    transcript,
                )?;
            }
            model.apply_grads(&grads, tcfg.learning_rate, batch.len(), tcfg.precision)?;
            pool.broadcast_update(
                &grads,
                tcfg.learning_rate,
                batch.len(),
                tcfg.precision,
                transcript,
            )?;
            report.steps += 1;
            if tcfg.track_trajectory {
                report.trajectory.push(model.snapshot());
            }
        }
        let (loss, train_acc) = evaluate(model, train, tcfg.precision)?;
        let val_acc = if val.is_empty() {
            None
        } else {
            Some(evaluate(model, val, tcfg.precision)?.1)
        };
        report.epochs.push(EpochMetrics {
            epoch,
            loss,
            train_acc,
            val_acc,
            integrity_failures: report.integrity_failures - failures_at_epoch_start,
        });
    }
    Ok((report, pool))
}

/// Logits from a masked inference run, plus how many integrity checks
/// tripped along the way (always zero under the default abort policy —
/// a failure would have ended the run instead).
#[derive(Debug, Clone)]
pub struct InferReport {
    pub logits: Vec<Tensor>,
    pub integrity_failures: usize,
}

/// Masked inference: forward `inputs` in virtual batches of up to `k`
/// samples (the trailing group may be smaller — schemes are sized per
/// group). Workers never see raw inputs or logits; nonlinearities and
/// biases stay on the coordinator exactly as in training.
pub fn infer_protocol(
    model: &Model,
    inputs: &[Tensor],
    scfg: &SessionConfig,
    profiles: &[WorkerProfile],
    policy: IntegrityPolicy,
    transcript: &mut Transcript,
) -> Result<InferReport> {
    scfg.validate()?;
    let need = scfg.workers_needed();
    if profiles.len() < need {
        return Err(Error::InsufficientWorkers { need, have: profiles.len() });
    }
    let mut pool = WorkerPool::new(profiles, &model.weights, scfg.seed)?;
    let mut failures = 0usize;
    let mut logits = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(scfg.k) {
        let fwd = masked_forward(model, &mut pool, chunk, scfg, policy, &mut failures, transcript)?;
        logits.extend(fwd.outputs);
    }
    Ok(InferReport { logits, integrity_failures: failures })
}
