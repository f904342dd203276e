//! Split execution: a trusted coordinator orchestrating untrusted workers.
//!
//! The coordinator holds every secret (raw data, mixing coefficients,
//! decode weights) and does only cheap work: masking, combining, decoding,
//! verifying. Workers hold replicas of the public model weights and do the
//! heavy linear algebra on masked tensors. Every message that crosses the
//! boundary is logged to a [`transcript::Transcript`], which the audits at
//! the bottom of this module inspect after the fact:
//!
//! * each worker sees at most **one** masked tensor per masking group
//!   (gradient-equation jobs reuse the forward payload byte-for-byte, which
//!   shows up as equal digests), and
//! * no secret tensor's digest ever appears in a worker-directed message.
//!
//! Three passes cover a training step, all built on the same dispatch core:
//! forward ([`run_virtual_batch`]), the weight-gradient equations
//! ([`run_grad_equations`], reusing the forward group), and the
//! backpropagated input gradient ([`run_input_grad`], a fresh group because
//! it masks a *different* set of sources — the per-sample deltas).

pub mod transcript;
pub mod worker;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coding::{CodingScheme, EncodedBatch, VirtualBatch, DEFAULT_C_MIN};
use crate::error::{Error, Result};
use crate::nn::layer::{LayerSpec, LayerWeights};
use crate::nn::model::GradSet;
use crate::tensor::{Precision, Tensor};
use transcript::{
    coordinator, digest_hex, fold_digests, tensor_digest_hex, worker_name, MessageKind,
    Transcript, GROUP_STRIDE,
};
use worker::{
    worker_step, CollusionLog, JobKind, LinearJob, WorkerProfile, WorkerState,
};

/// Job-id offset separating gradient-equation jobs from the forward jobs of
/// the same masking group (`job_id = group·GROUP_STRIDE + offset + slot`).
pub const GRAD_JOB_OFFSET: u64 = GROUP_STRIDE / 2;

/// How masked slots map onto workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assignment {
    /// Slot `s` goes to worker `s`. The default; transcripts are easiest to
    /// read this way.
    #[default]
    Identity,
    /// A fresh seeded shuffle per masking group, exercising the fact that
    /// nothing in the protocol depends on which worker holds which slot.
    Permuted,
}

/// Knobs for one split-execution session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Real samples per virtual batch.
    pub k: usize,
    /// Noise tensors mixed into each virtual batch.
    pub m: usize,
    /// Redundant masked tensors per group (0 disables integrity checks).
    pub ext: usize,
    /// Variance of the masking noise.
    pub sigma2: f64,
    /// Mean of the masking noise.
    pub noise_mean: f64,
    /// Relative-residual tolerance for integrity verdicts.
    pub tau: f64,
    pub precision: Precision,
    /// Session seed; every scheme, noise draw, fault, and shuffle descends
    /// from it.
    pub seed: u64,
    /// Noise-coefficient floor handed to scheme generation.
    pub c_min: f64,
    /// Ship raw per-sample gradients plus a combination row to workers
    /// instead of combining on the coordinator. Same math, weaker secrecy
    /// boundary — [`audit_secrecy`] is expected to flag it.
    pub offload_grad_combine: bool,
    /// Replace the random mixing with the identity matrix (no masking, no
    /// float mixing error). Debug baseline only: workers see raw sources.
    pub identity_scheme: bool,
    pub assignment: Assignment,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            k: 2,
            m: 1,
            ext: 1,
            sigma2: 1e8,
            noise_mean: 0.0,
            tau: default_tau(Precision::F64),
            precision: Precision::F64,
            seed: 0,
            c_min: DEFAULT_C_MIN,
            offload_grad_combine: false,
            identity_scheme: false,
            assignment: Assignment::Identity,
        }
    }
}

/// Default verification tolerance per arithmetic width: well above honest
/// decode error, well below anything worth calling an attack.
pub fn default_tau(precision: Precision) -> f64 {
    match precision {
        Precision::F64 => 1e-6,
        Precision::F32 => 1e-2,
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.m == 0 {
            return Err(Error::Config(
                "m must be >= 1: unmasked offloading leaks inputs outright".into(),
            ));
        }
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(Error::Config(format!(
                "sigma2 must be finite and >= 0, got {}",
                self.sigma2
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!(
                "tau must be finite and > 0, got {}",
                self.tau
            )));
        }
        if !(self.c_min.is_finite() && self.c_min > 0.0 && self.c_min <= 1.0) {
            return Err(Error::Config(format!(
                "c_min must lie in (0, 1], got {}",
                self.c_min
            )));
        }
        Ok(())
    }

    /// Workers a session needs: one per masked tensor, primaries plus
    /// redundant.
    pub fn workers_needed(&self) -> usize {
        self.k + self.m + self.ext
    }
}

/// Integrity outcome for one masked pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchVerdict {
    pub passed: bool,
    /// Largest relative mismatch across the redundant comparisons.
    pub max_residual: f64,
    /// Which redundant comparison tripped, for failed verdicts. With one
    /// redundant column this cannot localize the faulty worker — it names
    /// the check, not the culprit.
    pub offending_index: Option<usize>,
    pub tau: f64,
}

impl BatchVerdict {
    fn from_integrity(v: crate::coding::IntegrityVerdict, tau: f64) -> Self {
        Self {
            passed: v.pass,
            max_residual: v.max_residual,
            offending_index: (!v.pass).then_some(v.worst_index),
            tau,
        }
    }
}

/// Everything the coordinator keeps from a masked pass so later passes can
/// reuse the group: the secret scheme, the encoded tensors as sent, and
/// which worker holds which slot.
#[derive(Debug, Clone)]
pub struct MaskedBatch {
    pub group: u32,
    pub layer_index: usize,
    pub scheme: CodingScheme,
    pub encoded: EncodedBatch,
    /// `assignment[slot]` = index of the worker holding that slot.
    pub assignment: Vec<usize>,
}

/// Result of a linear-decode pass (forward or input-gradient).
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// The `k` decoded per-sample results.
    pub outputs: Vec<Tensor>,
    /// `None` when the session runs without redundant columns.
    pub verdict: Option<BatchVerdict>,
    pub masked: MaskedBatch,
}

/// Result of a gradient-equation pass.
#[derive(Debug, Clone)]
pub struct GradOutcome {
    /// The summed weight gradient over the group's `k` samples.
    pub grad: Tensor,
    /// `None` unless the scheme admits the dual decoding pair (`k = 1`)
    /// and has a redundant column.
    pub verdict: Option<BatchVerdict>,
}

/// The untrusted side of the split: worker replicas, plus the coordinator's
/// book-keeping about them (collusion logs, group allocation).
#[derive(Debug, Clone)]
pub struct WorkerPool {
    workers: Vec<WorkerState>,
    /// One log per (colluder ring, masking group) pair.
    collusion: BTreeMap<(u32, u32), CollusionLog>,
    session_seed: u64,
    next_group: u32,
}

impl WorkerPool {
    /// Stand up `profiles.len()` workers, each holding a replica of
    /// `weights`. Profiles must be numbered `0..n` in order — worker ids
    /// double as dispatch indices.
    pub fn new(
        profiles: &[WorkerProfile],
        weights: &[Option<LayerWeights>],
        session_seed: u64,
    ) -> Result<Self> {
        if profiles.is_empty() {
            return Err(Error::Config("worker pool needs at least one worker".into()));
        }
        for (i, prof) in profiles.iter().enumerate() {
            prof.validate()?;
            if prof.worker_id != i {
                return Err(Error::Config(format!(
                    "worker profiles must be numbered 0..n in order; position {i} has id {}",
                    prof.worker_id
                )));
            }
        }
        let workers = profiles
            .iter()
            .map(|&p| WorkerState::new(p, weights.to_vec(), session_seed))
            .collect();
        Ok(Self { workers, collusion: BTreeMap::new(), session_seed, next_group: 0 })
    }

    pub fn n_workers(&self) -> usize {
        self.workers.len()
    }

    /// Current weights version (identical across workers by construction).
    pub fn version(&self) -> u64 {
        self.workers[0].version()
    }

    /// One worker's weight replica, for equality checks against the
    /// coordinator's model.
    pub fn replica_weights(&self, worker: usize) -> &[Option<LayerWeights>] {
        &self.workers[worker].weights
    }

    /// What colluder ring `ring` pooled from masking group `group`, if
    /// anything.
    pub fn collusion_log(&self, ring: u32, group: u32) -> Option<&CollusionLog> {
        self.collusion.get(&(ring, group))
    }

    pub fn collusion_logs(&self) -> impl Iterator<Item = &CollusionLog> {
        self.collusion.values()
    }

    fn alloc_group(&mut self) -> u32 {
        let g = self.next_group;
        self.next_group += 1;
        g
    }

    /// Map `n_slots` masked slots onto distinct workers.
    fn assign_slots(&self, n_slots: usize, group: u32, mode: Assignment) -> Result<Vec<usize>> {
        if n_slots > self.workers.len() {
            return Err(Error::InsufficientWorkers { need: n_slots, have: self.workers.len() });
        }
        match mode {
            Assignment::Identity => Ok((0..n_slots).collect()),
            Assignment::Permuted => {
                let mut idx: Vec<usize> = (0..self.workers.len()).collect();
                let mut rng = crate::rng::chacha(
                    crate::rng::mix(self.session_seed, crate::rng::stream::ASSIGNMENT),
                    group as u64,
                );
                for i in (1..idx.len()).rev() {
                    let j = rand::Rng::random_range(&mut rng, 0..=i);
                    idx.swap(i, j);
                }
                idx.truncate(n_slots);
                Ok(idx)
            }
        }
    }

    /// Send one job to one worker, logging every tensor that crosses the
    /// boundary, and collect the reply.
    fn execute(
        &mut self,
        group: u32,
        worker_idx: usize,
        job: &LinearJob,
        layer: &LayerSpec,
        precision: Precision,
        transcript: &mut Transcript,
    ) -> Result<Tensor> {
        let state = &mut self.workers[worker_idx];
        let wname = worker_name(state.profile.worker_id);
        transcript.push(
            coordinator(),
            wname.clone(),
            MessageKind::Job,
            Some(job.job_id),
            Some(tensor_digest_hex(&job.payload)),
            Some(job.payload.shape().to_vec()),
        );
        if let Some(d) = &job.delta {
            transcript.push(
                coordinator(),
                wname.clone(),
                MessageKind::JobDelta,
                Some(job.job_id),
                Some(tensor_digest_hex(d)),
                Some(d.shape().to_vec()),
            );
        }
        if let Some(raw) = &job.raw_deltas {
            for d in raw {
                transcript.push(
                    coordinator(),
                    wname.clone(),
                    MessageKind::JobDelta,
                    Some(job.job_id),
                    Some(tensor_digest_hex(d)),
                    Some(d.shape().to_vec()),
                );
            }
        }
        let (result, collusion_entry) = worker_step(state, job, layer, precision)?;
        transcript.push(
            wname,
            coordinator(),
            MessageKind::Result,
            Some(job.job_id),
            Some(tensor_digest_hex(&result.output)),
            Some(result.output.shape().to_vec()),
        );
        if let Some((ring, slot, payload)) = collusion_entry {
            self.collusion
                .entry((ring, group))
                .or_insert_with(|| CollusionLog {
                    ring,
                    group_id: group,
                    payloads: Vec::new(),
                    assumed_knowledge: worker::AssumedKnowledge::CoefficientsKnown,
                })
                .payloads
                .push((slot, payload));
        }
        Ok(result.output)
    }

    /// SGD step broadcast: apply `theta -= lr/batch · grad` to every
    /// replica (bit-identical to [`crate::nn::Model::apply_grads`]) and bump
    /// the weights version. Returns the new version.
    pub fn broadcast_update(
        &mut self,
        grads: &GradSet,
        lr: f64,
        batch: usize,
        precision: Precision,
        transcript: &mut Transcript,
    ) -> Result<u64> {
        let scale = -lr / batch as f64;
        for state in &mut self.workers {
            for (w, g) in state.weights.iter_mut().zip(grads) {
                if let (Some(lw), Some(g)) = (w.as_mut(), g.as_ref()) {
                    lw.w.axpy(scale, &g.w)?;
                    lw.b.axpy(scale, &g.b)?;
                    precision.quantize(&mut lw.w);
                    precision.quantize(&mut lw.b);
                }
            }
            state.version += 1;
        }
        let digest = fold_digests(
            self.workers[0]
                .weights
                .iter()
                .flatten()
                .flat_map(|lw| [lw.w.digest(), lw.b.digest()]),
        );
        for state in &self.workers {
            transcript.push(
                coordinator(),
                worker_name(state.profile.worker_id),
                MessageKind::Broadcast,
                None,
                Some(digest_hex(digest)),
                None,
            );
        }
        Ok(self.version())
    }
}

fn build_scheme(cfg: &SessionConfig, k: usize, session_seed: u64, group: u32) -> Result<CodingScheme> {
    let seed = crate::rng::mix(session_seed, group as u64);
    if cfg.identity_scheme {
        let p = k + cfg.m;
        let a: Vec<Vec<f64>> = (0..p)
            .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        // One all-equal redundant column per slot keeps verification
        // meaningful (the redundant tensor is the plain source sum).
        let norm = (p as f64).sqrt();
        let a_ext: Vec<Vec<f64>> =
            (0..p).map(|_| (0..cfg.ext).map(|_| 1.0 / norm).collect()).collect();
        let a_ext = if cfg.ext == 0 { Vec::new() } else { a_ext };
        CodingScheme::from_parts(a, vec![1.0; p], a_ext, k, seed)
    } else {
        CodingScheme::generate(k, cfg.m, cfg.ext, cfg.c_min, seed)
    }
}

/// Dispatch core shared by the two linear-decode passes: mask `sources`
/// under a fresh scheme, fan the masked tensors out one-per-worker, gather,
/// verify against the redundant results, decode.
fn run_masked_linear(
    pool: &mut WorkerPool,
    layer: &LayerSpec,
    layer_index: usize,
    kind: JobKind,
    sources: &[Tensor],
    in_shape: Option<&[usize]>,
    cfg: &SessionConfig,
    transcript: &mut Transcript,
) -> Result<BatchOutcome> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::InvalidArgument("masked pass needs at least one source".into()));
    }
    let k = sources.len();
    let group = pool.alloc_group();
    let scheme = build_scheme(cfg, k, pool.session_seed, group)?;
    let (p, e) = (scheme.p(), scheme.ext_cols());
    let assignment = pool.assign_slots(p + e, group, cfg.assignment)?;

    let mut noise_rng = crate::rng::chacha(
        crate::rng::mix(pool.session_seed, crate::rng::stream::NOISE),
        group as u64,
    );
    let batch = VirtualBatch::draw(
        sources.to_vec(),
        cfg.m,
        cfg.noise_mean,
        cfg.sigma2,
        &mut noise_rng,
    )?;
    let mut encoded = scheme.encode(&batch)?;
    for t in encoded.all_mut() {
        cfg.precision.quantize(t);
    }

    let version = pool.version();
    let mut results = Vec::with_capacity(p + e);
    for slot in 0..p + e {
        let job = LinearJob {
            job_id: group as u64 * GROUP_STRIDE + slot as u64,
            layer_index,
            kind,
            payload: encoded.all()[slot].clone(),
            slot,
            delta: None,
            raw_deltas: None,
            beta_row: None,
            in_shape: in_shape.map(<[usize]>::to_vec),
            weights_version: version,
        };
        results.push(pool.execute(group, assignment[slot], &job, layer, cfg.precision, transcript)?);
    }

    let verdict = if e >= 1 {
        let v = scheme.verify_forward(&results, cfg.tau)?;
        transcript.push(
            coordinator(),
            coordinator(),
            MessageKind::Verdict,
            Some(group as u64 * GROUP_STRIDE),
            None,
            None,
        );
        Some(BatchVerdict::from_integrity(v, cfg.tau))
    } else {
        None
    };

    let mut outputs = scheme.decode_forward(&results[..p])?;
    for t in &mut outputs {
        cfg.precision.quantize(t);
    }
    Ok(BatchOutcome {
        outputs,
        verdict,
        masked: MaskedBatch { group, layer_index, scheme, encoded, assignment },
    })
}

/// Forward pass for one virtual batch: mask the `k` inputs, have each
/// worker apply the layer's linear kernel to one masked tensor, verify,
/// decode the `k` per-sample results. Biases and nonlinearities are *not*
/// applied here — they are input-independent or cheap, so the coordinator
/// keeps them.
pub fn run_virtual_batch(
    pool: &mut WorkerPool,
    layer: &LayerSpec,
    layer_index: usize,
    inputs: &[Tensor],
    cfg: &SessionConfig,
    transcript: &mut Transcript,
) -> Result<BatchOutcome> {
    run_masked_linear(
        pool,
        layer,
        layer_index,
        JobKind::ForwardLinear,
        inputs,
        None,
        cfg,
        transcript,
    )
}

/// Backpropagated input gradient as a masked pass of its own: the sources
/// being masked are the `k` per-sample output gradients, so this uses a
/// fresh masking group (new scheme, new noise), never the forward one.
pub fn run_input_grad(
    pool: &mut WorkerPool,
    layer: &LayerSpec,
    layer_index: usize,
    deltas: &[Tensor],
    in_shape: Option<&[usize]>,
    cfg: &SessionConfig,
    transcript: &mut Transcript,
) -> Result<BatchOutcome> {
    run_masked_linear(
        pool,
        layer,
        layer_index,
        JobKind::InputGradLinear,
        deltas,
        in_shape,
        cfg,
        transcript,
    )
}

/// Weight-gradient pass for a group that already ran forward: every worker
/// pairs its *existing* masked tensor (same bytes, same digest) with a
/// gradient partner and evaluates one bilinear equation; the weighted sum
/// of the replies is the exact summed weight gradient.
///
/// By default the coordinator combines the raw per-sample gradients itself
/// and ships only the blend; with `offload_grad_combine` the workers
/// receive the raw gradients plus their combination row and blend locally.
pub fn run_grad_equations(
    pool: &mut WorkerPool,
    layer: &LayerSpec,
    masked: &MaskedBatch,
    deltas: &[Tensor],
    cfg: &SessionConfig,
    transcript: &mut Transcript,
) -> Result<GradOutcome> {
    cfg.validate()?;
    let scheme = &masked.scheme;
    let (p, e) = (scheme.p(), scheme.ext_cols());

    let mut deltas_q = deltas.to_vec();
    for d in &mut deltas_q {
        cfg.precision.quantize(d);
    }
    let mut combined = scheme.combine_deltas(&deltas_q)?;
    for d in &mut combined {
        cfg.precision.quantize(d);
    }

    let version = pool.version();
    let base = masked.group as u64 * GROUP_STRIDE + GRAD_JOB_OFFSET;
    let mut eqs = Vec::with_capacity(p + 1);
    for (j, partner) in combined.into_iter().enumerate() {
        let mut job = LinearJob {
            job_id: base + j as u64,
            layer_index: masked.layer_index,
            kind: JobKind::GradEquation,
            payload: masked.encoded.all()[j].clone(),
            slot: j,
            delta: None,
            raw_deltas: None,
            beta_row: None,
            in_shape: None,
            weights_version: version,
        };
        if cfg.offload_grad_combine {
            job.raw_deltas = Some(deltas_q.clone());
            job.beta_row = Some(scheme.beta_rows()[j].clone());
        } else {
            job.delta = Some(partner);
        }
        eqs.push(pool.execute(
            masked.group,
            masked.assignment[j],
            &job,
            layer,
            cfg.precision,
            transcript,
        )?);
    }

    let verdict = if e >= 1 && scheme.grad_check().is_some() {
        let mut partner = scheme.grad_check_delta(&deltas_q)?;
        cfg.precision.quantize(&mut partner);
        let slot = p; // first redundant tensor carries the check equation
        let mut job = LinearJob {
            job_id: base + slot as u64,
            layer_index: masked.layer_index,
            kind: JobKind::GradEquation,
            payload: masked.encoded.all()[slot].clone(),
            slot,
            delta: None,
            raw_deltas: None,
            beta_row: None,
            in_shape: None,
            weights_version: version,
        };
        if cfg.offload_grad_combine {
            job.raw_deltas = Some(deltas_q.clone());
            job.beta_row = Some(vec![scheme.grad_check().unwrap().b_ext()]);
        } else {
            job.delta = Some(partner);
        }
        let check_eq = pool.execute(
            masked.group,
            masked.assignment[slot],
            &job,
            layer,
            cfg.precision,
            transcript,
        )?;
        let mut all = eqs.clone();
        all.push(check_eq);
        let v = scheme.verify_grad(&all, cfg.tau)?;
        transcript.push(
            coordinator(),
            coordinator(),
            MessageKind::Verdict,
            Some(base),
            None,
            None,
        );
        Some(BatchVerdict::from_integrity(v, cfg.tau))
    } else {
        None
    };

    let mut grad = scheme.decode_grad(&eqs)?;
    cfg.precision.quantize(&mut grad);
    Ok(GradOutcome { grad, verdict })
}

/// Outcome of a transcript audit: `ok` plus one human-readable line per
/// violation.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Check the one-masked-tensor rule: within each masking group, every
/// worker must have received exactly one distinct job payload (gradient
/// jobs are allowed — and expected — to repeat the forward payload).
pub fn audit_one_encoding(transcript: &Transcript) -> AuditReport {
    let mut seen: BTreeMap<(u64, String), Vec<String>> = BTreeMap::new();
    for msg in transcript.messages() {
        if msg.kind != MessageKind::Job {
            continue;
        }
        let (Some(job_id), Some(digest)) = (msg.job_id, msg.tensor_digest.as_ref()) else {
            continue;
        };
        let group = job_id / GROUP_STRIDE;
        let digests = seen.entry((group, msg.to.clone())).or_default();
        if !digests.contains(digest) {
            digests.push(digest.clone());
        }
    }
    let violations: Vec<String> = seen
        .iter()
        .filter(|(_, digests)| digests.len() > 1)
        .map(|((group, to), digests)| {
            format!("{to} saw {} distinct masked tensors in group {group}", digests.len())
        })
        .collect();
    AuditReport { ok: violations.is_empty(), violations }
}

/// Check that none of `secret_digests` (hex, as produced by
/// [`transcript::tensor_digest_hex`]) appears in any worker-directed
/// message. Run it with the digests of raw inputs, raw per-sample
/// gradients, and any coefficient tensors; a clean default-mode transcript
/// passes, an offloaded-combination transcript fails on the raw gradients.
pub fn audit_secrecy(transcript: &Transcript, secret_digests: &[String]) -> AuditReport {
    let mut violations = Vec::new();
    for msg in transcript.messages() {
        if !msg.to.starts_with("worker:") {
            continue;
        }
        if let Some(d) = &msg.tensor_digest {
            if secret_digests.contains(d) {
                violations.push(format!(
                    "secret tensor {d} sent to {} in message {} ({:?})",
                    msg.to, msg.seq, msg.kind
                ));
            }
        }
    }
    AuditReport { ok: violations.is_empty(), violations }
}
