//! Best-effort reconstruction attacks by colluding workers.
//!
//! The experiment here is the empirical counterpart of
//! [`crate::privacy::mi_bound_colluding`]: hand a set of colluders their
//! captured masked tensors, grant them worst-case knowledge (the true
//! mixing columns for their slots — more than the protocol ever reveals),
//! and let them solve the best linear reconstruction. The interesting
//! boundary is sharp:
//!
//! * up to `m` colluders, the system stays underdetermined and the noise
//!   floor `c_min` guarantees every captured tensor is noise-carrying —
//!   the reconstruction does no better than guessing the prior;
//! * `m + 1` colluders make the system square and the masking collapses —
//!   recovery is exact up to float error.
//!
//! That dichotomy is what "keep the number of colluders at or below the
//! noise count" means operationally.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::coding::{CodingScheme, VirtualBatch};
use crate::error::{Error, Result};
use crate::privacy::{mi_bound_colluding, PrivacyParams};
use crate::protocol::worker::{AssumedKnowledge, CollusionLog};
use crate::tensor::Tensor;

/// Regularizer added to the normal equations; keeps underdetermined solves
/// well-posed without materially biasing determined ones.
pub const DEFAULT_RIDGE: f64 = 1e-9;

/// Output of [`reconstruct_least_squares`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Estimated input tensors, one per real input of the attacked group.
    pub estimates: Vec<Tensor>,
    /// Mean squared error of each estimate against its ground truth.
    pub mse_per_input: Vec<f64>,
}

/// Solve the colluders' best linear reconstruction.
///
/// With coefficients known, stacks one equation per captured tensor —
/// `payload_s = Σ_i column_s[i] · source_i` — and solves for *all* `p`
/// source tensors (inputs and noises jointly) via ridge-regularized normal
/// equations, coordinate-wise. Without coefficient knowledge the attacker
/// has nothing to invert and falls back to the prior mean (zero).
///
/// `truth` holds the real inputs, used only for scoring; `scheme` must be
/// the group's true scheme when the log claims coefficient knowledge.
pub fn reconstruct_least_squares(
    log: &CollusionLog,
    scheme: Option<&CodingScheme>,
    truth: &[Tensor],
    ridge: f64,
) -> Result<Reconstruction> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("need at least one ground-truth input".into()));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be finite and >= 0, got {ridge}"
        )));
    }
    let shape = truth[0].shape().to_vec();
    for t in truth {
        if t.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "ground-truth inputs mix shapes {:?} and {:?}",
                shape,
                t.shape()
            )));
        }
    }

    let blind = log.assumed_knowledge == AssumedKnowledge::None || log.payloads.is_empty();
    let estimates: Vec<Tensor> = if blind {
        truth.iter().map(|_| Tensor::zeros(&shape)).collect()
    } else {
        let scheme = scheme.ok_or_else(|| {
            Error::InvalidArgument(
                "coefficients-known reconstruction requires the group's true scheme".into(),
            )
        })?;
        let p = scheme.p();
        if truth.len() != scheme.k() {
            return Err(Error::InvalidArgument(format!(
                "{} ground-truth inputs for a k={} scheme",
                truth.len(),
                scheme.k()
            )));
        }
        let n = log.payloads.len();
        let d = truth[0].numel();
        let mut mat = DMatrix::<f64>::zeros(n, p);
        let mut obs = DMatrix::<f64>::zeros(n, d);
        for (s, (slot, payload)) in log.payloads.iter().enumerate() {
            if payload.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "captured tensor {s} has shape {:?}, inputs have {:?}",
                    payload.shape(),
                    shape
                )));
            }
            let column: Vec<f64> = if *slot < p {
                (0..p).map(|i| scheme.mixing_rows()[i][*slot]).collect()
            } else {
                let c = *slot - p;
                if c >= scheme.ext_cols() {
                    return Err(Error::InvalidArgument(format!(
                        "captured slot {slot} does not exist in a p={p}, e={} scheme",
                        scheme.ext_cols()
                    )));
                }
                scheme.ext_column(c)
            };
            for i in 0..p {
                mat[(s, i)] = column[i];
            }
            for (t, &v) in payload.data().iter().enumerate() {
                obs[(s, t)] = v;
            }
        }
        let mut gram = mat.transpose() * &mat;
        for i in 0..p {
            gram[(i, i)] += ridge;
        }
        let rhs = mat.transpose() * obs;
        let solved = gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidArgument("normal equations are singular".into()))?;
        (0..truth.len())
            .map(|i| {
                Tensor::new(shape.clone(), (0..d).map(|t| solved[(i, t)]).collect())
            })
            .collect::<Result<_>>()?
    };

    let mse_per_input = estimates
        .iter()
        .zip(truth)
        .map(|(est, x)| {
            let d = est.sub(x)?;
            Ok(d.data().iter().map(|v| v * v).sum::<f64>() / d.numel() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(Reconstruction { estimates, mse_per_input })
}

/// Attack-side knobs for [`leakage_report`]; the privacy side comes from
/// [`PrivacyParams`].
#[derive(Debug, Clone, Copy)]
pub struct AttackConfig {
    /// How many colluders (`|S|`); they capture the first `|S|` primary
    /// slots (columns are exchangeable in distribution, so which slots is
    /// immaterial).
    pub colluders: usize,
    /// Entries per input tensor.
    pub dim: usize,
    pub knowledge: AssumedKnowledge,
    pub ridge: f64,
    pub base_seed: u64,
}

impl AttackConfig {
    pub fn new(colluders: usize, base_seed: u64) -> Self {
        Self {
            colluders,
            dim: 256,
            knowledge: AssumedKnowledge::CoefficientsKnown,
            ridge: DEFAULT_RIDGE,
            base_seed,
        }
    }
}

/// One trial's outcome: empirical reconstruction error next to the
/// closed-form colluding bound it must not contradict.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LeakageRow {
    pub seed: u64,
    pub colluders: usize,
    pub m: usize,
    pub sigma2: f64,
    /// Reconstruction MSE averaged over the group's inputs.
    pub mse: f64,
    pub bound_colluding: f64,
}

/// Run `trials` seeded reconstruction attacks against fresh schemes and
/// report one row per trial. Deterministic in `atk.base_seed`; the noise
/// draw underlying trial `t` is shared across `sigma2` values (the
/// variance only scales it), so sweeps are directly comparable.
pub fn leakage_report(
    trials: usize,
    p: &PrivacyParams,
    atk: &AttackConfig,
) -> Result<Vec<LeakageRow>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    // Not `p.validate()`: the bounds need sigma2 > 0, but the attack is
    // well-defined (and instructive) at sigma2 = 0 — leakage is infinite
    // and recovery is exact.
    if !(p.sigma2.is_finite() && p.sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma2 must be finite and >= 0, got {}",
            p.sigma2
        )));
    }
    if atk.colluders > p.k + p.m {
        return Err(Error::InvalidArgument(format!(
            "{} colluders but only {} masked slots exist",
            atk.colluders,
            p.k + p.m
        )));
    }
    if atk.dim == 0 {
        return Err(Error::InvalidArgument("input dimension must be >= 1".into()));
    }
    let bound = if p.sigma2 > 0.0 { mi_bound_colluding(p) } else { f64::INFINITY };
    let mut rows = Vec::with_capacity(trials);
    for t in 0..trials {
        let seed = crate::rng::mix(atk.base_seed, t as u64);
        let mut rng = crate::rng::chacha(seed, crate::rng::stream::EXPERIMENT);
        let scheme = CodingScheme::generate(p.k, p.m, 0, p.c_min, seed)?;
        let inputs: Vec<Tensor> =
            (0..p.k).map(|_| Tensor::randn(&[atk.dim], 0.0, 1.0, &mut rng)).collect();
        let batch =
            VirtualBatch::draw(inputs.clone(), p.m, 0.0, p.sigma2, &mut rng)?;
        let encoded = scheme.encode(&batch)?;
        let log = CollusionLog {
            ring: 0,
            group_id: t as u32,
            payloads: (0..atk.colluders).map(|s| (s, encoded.base()[s].clone())).collect(),
            assumed_knowledge: atk.knowledge,
        };
        let rec = reconstruct_least_squares(&log, Some(&scheme), &inputs, atk.ridge)?;
        let mse =
            rec.mse_per_input.iter().sum::<f64>() / rec.mse_per_input.len() as f64;
        rows.push(LeakageRow {
            seed,
            colluders: atk.colluders,
            m: p.m,
            sigma2: p.sigma2,
            mse,
            bound_colluding: bound,
        });
    }
    Ok(rows)
}

/// Render rows as CSV (header + one line per row, shortest-roundtrip float
/// formatting, byte-deterministic).
pub fn leakage_csv(rows: &[LeakageRow]) -> String {
    let mut out = String::from("seed,colluders,m,sigma2,mse,bound_colluding\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.seed, r.colluders, r.m, r.sigma2, r.mse, r.bound_colluding
        )
        .expect("string write cannot fail");
    }
    out
}
