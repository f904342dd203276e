//! Worker-side execution: what an untrusted compute node does with a job.
//!
//! Workers hold a replica of the (public) model weights and perform exactly
//! one kind of work: linear/bilinear kernels on masked tensors. They never
//! see mixing coefficients, decode weights, or raw data. Adversarial
//! behaviors are modeled per worker: tampering with outputs (`Faulty`) and
//! recording received payloads for a collusion pool (`Colluding`).

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::{LayerSpec, LayerWeights};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Behavior {
    Honest,
    /// With probability `fault_probability` per job, adds
    /// `perturbation_scale · ‖output‖₂ · u` to the output, `u` a random
    /// unit-norm tensor.
    Faulty { perturbation_scale: f64, fault_probability: f64 },
    /// Computes honestly but appends every received payload to its group's
    /// shared log (the attack surface consumed by [`crate::attack`]).
    Colluding { group: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub worker_id: usize,
    pub behavior: Behavior,
}

impl WorkerProfile {
    pub fn honest(worker_id: usize) -> Self {
        Self { worker_id, behavior: Behavior::Honest }
    }

    pub fn validate(&self) -> Result<()> {
        if let Behavior::Faulty { perturbation_scale, fault_probability } = self.behavior {
            if !(perturbation_scale.is_finite() && perturbation_scale >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "perturbation_scale must be finite and >= 0, got {perturbation_scale}"
                )));
            }
            if !(0.0..=1.0).contains(&fault_probability) {
                return Err(Error::InvalidArgument(format!(
                    "fault_probability must be in [0,1], got {fault_probability}"
                )));
            }
        }
        Ok(())
    }
}

/// The kinds of linear work a job can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobKind {
    /// `W ⊛ payload` (dense matvec / convolution), no bias.
    ForwardLinear,
    /// One gradient equation: `weight_grad(delta, payload)`.
    GradEquation,
    /// Backpropagated input gradient: `input_grad(W, payload)`.
    InputGradLinear,
}

/// One unit of offloaded work. Exactly one masked tensor per job.
#[derive(Debug, Clone)]
pub struct LinearJob {
    pub job_id: u64,
    pub layer_index: usize,
    pub kind: JobKind,
    /// The single masked tensor this job operates on.
    pub payload: Tensor,
    /// Which masked slot of its group the payload is (metadata for the
    /// collusion log; under identity assignment it equals the worker id).
    pub slot: usize,
    /// Pre-combined gradient partner (coordinator-side combination, the
    /// default placement).
    pub delta: Option<Tensor>,
    /// Offloaded-combination placement: the worker combines these raw
    /// per-sample gradients with `beta_row` itself. Weaker secrecy
    /// boundary; off by default.
    pub raw_deltas: Option<Vec<Tensor>>,
    pub beta_row: Option<Vec<f64>>,
    /// Original input shape for `InputGradLinear` on geometry-ambiguous
    /// layers (strided convolution).
    pub in_shape: Option<Vec<usize>>,
    pub weights_version: u64,
}

#[derive(Debug, Clone)]
pub struct LinearResult {
    pub job_id: u64,
    pub worker_id: usize,
    pub output: Tensor,
}

/// What the colluders are assumed to know beyond their captured tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssumedKnowledge {
    /// Only the input prior — no coefficient knowledge.
    None,
    /// Worst case: the true mixing coefficients of the captured slots.
    /// The protocol never reveals them, so this grants the attacker
    /// strictly more than any real colluder has; leakage measured this way
    /// is conservative.
    CoefficientsKnown,
}

/// What one colluder ring has gathered from one masking group: `(slot,
/// payload)` pairs, at most one per colluder. Payloads from different
/// masking groups carry unrelated coefficient matrices, so the pool keeps
/// one log per (ring, group) pair.
#[derive(Debug, Clone)]
pub struct CollusionLog {
    /// The colluder ring that pooled these payloads.
    pub ring: u32,
    /// The masking group the payloads belong to.
    pub group_id: u32,
    /// `(slot, masked tensor)` — which encoded position each colluder held.
    pub payloads: Vec<(usize, Tensor)>,
    pub assumed_knowledge: AssumedKnowledge,
}

/// A worker actor: profile, weight replica, fault RNG.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub profile: WorkerProfile,
    pub(crate) weights: Vec<Option<LayerWeights>>,
    pub(crate) version: u64,
    rng: ChaCha20Rng,
}

impl WorkerState {
    pub fn new(profile: WorkerProfile, weights: Vec<Option<LayerWeights>>, session_seed: u64) -> Self {
        let rng = crate::rng::chacha(
            crate::rng::mix(session_seed, crate::rng::stream::WORKER_FAULTS),
            profile.worker_id as u64,
        );
        Self { profile, weights, version: 1, rng }
    }

    pub fn version(&self) -> u64 {
        self.version
    }
}

/// Execute one job on one worker. Honest math first, then the behavior
/// overlay; output is quantized to `precision` (the worker's arithmetic
/// width is a trust-boundary property, not the coordinator's choice).
///
/// Returns the payload to append to a collusion log, if this worker
/// colludes.
pub fn worker_step(
    state: &mut WorkerState,
    job: &LinearJob,
    layer: &LayerSpec,
    precision: Precision,
) -> Result<(LinearResult, Option<(u32, usize, Tensor)>)> {
    if job.weights_version != state.version {
        return Err(Error::StaleWeights {
            worker: state.profile.worker_id,
            held: state.version,
            wanted: job.weights_version,
        });
    }
    let weights = state.weights.get(job.layer_index).and_then(|w| w.as_ref());
    let mut output = match job.kind {
        JobKind::ForwardLinear => {
            let lw = weights.ok_or_else(|| {
                Error::InvalidArgument(format!("layer {} holds no weights", job.layer_index))
            })?;
            layer.linear_forward(&lw.w, &job.payload)?
        }
        JobKind::GradEquation => {
            let d = match (&job.delta, &job.raw_deltas, &job.beta_row) {
                (Some(d), _, _) => d.clone(),
                (None, Some(raw), Some(beta)) => {
                    if raw.len() != beta.len() {
                        return Err(Error::ShapeMismatch(format!(
                            "{} raw gradients vs {} combination coefficients",
                            raw.len(),
                            beta.len()
                        )));
                    }
                    let terms: Vec<(f64, &Tensor)> =
                        beta.iter().zip(raw).map(|(&c, t)| (c, t)).collect();
                    Tensor::lin_comb(&terms)?
                }
                _ => {
                    return Err(Error::InvalidArgument(
                        "gradient equation job carries neither a combined delta nor raw deltas + coefficients".into(),
                    ))
                }
            };
            layer.weight_grad(&d, &job.payload)?
        }
        JobKind::InputGradLinear => {
            let lw = weights.ok_or_else(|| {
                Error::InvalidArgument(format!("layer {} holds no weights", job.layer_index))
            })?;
            match &job.in_shape {
                Some(shape) => layer.input_grad_with_shape(&lw.w, &job.payload, shape)?,
                None => layer.input_grad(&lw.w, &job.payload)?,
            }
        }
    };

    let mut collusion_entry = None;
    match state.profile.behavior {
        Behavior::Honest => {}
        Behavior::Faulty { perturbation_scale, fault_probability } => {
            if perturbation_scale > 0.0 && state.rng.random::<f64>() < fault_probability {
                let noise = Tensor::randn(output.shape(), 0.0, 1.0, &mut state.rng);
                let norm = noise.l2_norm();
                if norm > 0.0 {
                    output.axpy(perturbation_scale * output.l2_norm() / norm, &noise)?;
                }
            }
        }
        Behavior::Colluding { group } => {
            collusion_entry = Some((group, job.slot, job.payload.clone()));
        }
    }
    precision.quantize(&mut output);
    Ok((
        LinearResult { job_id: job.job_id, worker_id: state.profile.worker_id, output },
        collusion_entry,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_setup() -> (LayerSpec, Vec<Option<LayerWeights>>, Tensor) {
        let layer = LayerSpec::Dense { in_dim: 4, out_dim: 3 };
        let mut rng = crate::rng::chacha(40, 0);
        let w = Tensor::randn(&[3, 4], 0.0, 1.0, &mut rng);
        let b = Tensor::zeros(&[3]);
        let x = Tensor::randn(&[4], 0.0, 1.0, &mut rng);
        (layer, vec![Some(LayerWeights { w, b })], x)
    }

    fn job(payload: Tensor) -> LinearJob {
        LinearJob {
            job_id: 1,
            layer_index: 0,
            kind: JobKind::ForwardLinear,
            payload,
            slot: 0,
            delta: None,
            raw_deltas: None,
            beta_row: None,
            in_shape: None,
            weights_version: 1,
        }
    }

    #[test]
    fn honest_worker_computes_the_plain_linear_op() {
        let (layer, weights, x) = dense_setup();
        let mut state = WorkerState::new(WorkerProfile::honest(0), weights.clone(), 7);
        let (res, log) = worker_step(&mut state, &job(x.clone()), &layer, Precision::F64).unwrap();
        let want = layer.linear_forward(&weights[0].as_ref().unwrap().w, &x).unwrap();
        assert_eq!(res.output, want);
        assert!(log.is_none());
    }

    #[test]
    fn zero_scale_fault_is_identical_to_honest() {
        let (layer, weights, x) = dense_setup();
        let mut honest = WorkerState::new(WorkerProfile::honest(0), weights.clone(), 7);
        let mut faulty = WorkerState::new(
            WorkerProfile {
                worker_id: 0,
                behavior: Behavior::Faulty { perturbation_scale: 0.0, fault_probability: 1.0 },
            },
            weights,
            7,
        );
        let (a, _) = worker_step(&mut honest, &job(x.clone()), &layer, Precision::F64).unwrap();
        let (b, _) = worker_step(&mut faulty, &job(x), &layer, Precision::F64).unwrap();
        assert_eq!(a.output, b.output);
    }

    #[test]
    fn faulty_worker_perturbs_at_the_requested_relative_scale() {
        let (layer, weights, x) = dense_setup();
        let mut honest = WorkerState::new(WorkerProfile::honest(0), weights.clone(), 7);
        let mut faulty = WorkerState::new(
            WorkerProfile {
                worker_id: 0,
                behavior: Behavior::Faulty { perturbation_scale: 1e-2, fault_probability: 1.0 },
            },
            weights,
            7,
        );
        let (a, _) = worker_step(&mut honest, &job(x.clone()), &layer, Precision::F64).unwrap();
        let (b, _) = worker_step(&mut faulty, &job(x), &layer, Precision::F64).unwrap();
        let diff = b.output.sub(&a.output).unwrap().l2_norm();
        let rel = diff / a.output.l2_norm();
        assert!((rel - 1e-2).abs() < 1e-9, "perturbation rel norm {rel}");
    }

    #[test]
    fn fault_probability_is_respected_and_seeded() {
        let (layer, weights, x) = dense_setup();
        let run = |seed: u64| -> usize {
            let mut state = WorkerState::new(
                WorkerProfile {
                    worker_id: 2,
                    behavior: Behavior::Faulty { perturbation_scale: 1e-3, fault_probability: 0.25 },
                },
                weights.clone(),
                seed,
            );
            let mut honest = WorkerState::new(WorkerProfile::honest(2), weights.clone(), seed);
            (0..400)
                .filter(|_| {
                    let (a, _) =
                        worker_step(&mut state, &job(x.clone()), &layer, Precision::F64).unwrap();
                    let (h, _) =
                        worker_step(&mut honest, &job(x.clone()), &layer, Precision::F64).unwrap();
                    a.output != h.output
                })
                .count()
        };
        let hits = run(7);
        assert!((60..=140).contains(&hits), "400 Bernoulli(0.25) trials hit {hits}");
        assert_eq!(hits, run(7), "fault pattern must be seed-deterministic");
    }

    #[test]
    fn colluding_worker_is_honest_but_logs_the_payload() {
        let (layer, weights, x) = dense_setup();
        let mut honest = WorkerState::new(WorkerProfile::honest(0), weights.clone(), 7);
        let mut colluder = WorkerState::new(
            WorkerProfile { worker_id: 0, behavior: Behavior::Colluding { group: 3 } },
            weights,
            7,
        );
        let mut j = job(x.clone());
        j.slot = 5;
        let (a, _) = worker_step(&mut honest, &j, &layer, Precision::F64).unwrap();
        let (b, log) = worker_step(&mut colluder, &j, &layer, Precision::F64).unwrap();
        assert_eq!(a.output, b.output);
        let (group, slot, payload) = log.unwrap();
        assert_eq!((group, slot), (3, 5));
        assert_eq!(payload, x);
    }

    #[test]
    fn stale_weights_are_rejected() {
        let (layer, weights, x) = dense_setup();
        let mut state = WorkerState::new(WorkerProfile::honest(4), weights, 7);
        let mut j = job(x);
        j.weights_version = 9;
        let err = worker_step(&mut state, &j, &layer, Precision::F64).unwrap_err();
        assert!(matches!(err, Error::StaleWeights { worker: 4, held: 1, wanted: 9 }));
    }

    #[test]
    fn grad_equation_accepts_either_delta_placement() {
        let (layer, weights, x) = dense_setup();
        let mut rng = crate::rng::chacha(41, 0);
        let d1 = Tensor::randn(&[3], 0.0, 1.0, &mut rng);
        let d2 = Tensor::randn(&[3], 0.0, 1.0, &mut rng);
        let beta = vec![0.3, -1.7];
        let combined = Tensor::lin_comb(&[(beta[0], &d1), (beta[1], &d2)]).unwrap();

        let mut state = WorkerState::new(WorkerProfile::honest(0), weights, 7);
        let mut pre = job(x.clone());
        pre.kind = JobKind::GradEquation;
        pre.delta = Some(combined);
        let (a, _) = worker_step(&mut state, &pre, &layer, Precision::F64).unwrap();

        let mut raw = job(x);
        raw.kind = JobKind::GradEquation;
        raw.raw_deltas = Some(vec![d1, d2]);
        raw.beta_row = Some(beta);
        let (b, _) = worker_step(&mut state, &raw, &layer, Precision::F64).unwrap();
        assert_eq!(a.output, b.output);

        let mut bad = job(Tensor::zeros(&[4]));
        bad.kind = JobKind::GradEquation;
        assert!(worker_step(&mut state, &bad, &layer, Precision::F64).is_err());
    }
}
