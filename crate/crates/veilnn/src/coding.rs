//! Secret masking coefficients and exact linear decoding.
//!
//! A [`CodingScheme`] turns `k` real samples plus `m` large random noise
//! tensors into `p = k + m` masked tensors (plus `e` redundant ones for
//! integrity checks). Any *linear* map applied to the masked tensors can be
//! undone by the coordinator, because linear maps commute with the mixing:
//!
//! * forward: workers return `f(x̄_j)`; multiplying by the cached inverse of
//!   the mixing matrix recovers every `f(x_i)` exactly (up to float error).
//! * backward: workers evaluate one bilinear "equation" per masked tensor,
//!   pairing it with a pre-combined gradient tensor; a secret per-equation
//!   weight `γ_j` makes the weighted sum collapse to the true summed weight
//!   gradient.
//!
//! The coefficients are secrets held by the coordinator. Workers only ever
//! see masked tensors (and, in the offloaded-combination mode, rows of `B`,
//! which are useless without `Γ`).
//!
//! Matrix layout used throughout: `a[i][j]` is the coefficient of source `i`
//! (sources 0..k-1 are inputs, k..p-1 are noises) in masked output `j`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{rel_linf, Tensor};

/// Default floor on the noise-coefficient norm of every masked output
/// (`‖A₂ column‖₂`). Every masked tensor then carries a non-negligible noise
/// component, which both the single-worker and the colluding leakage bounds
/// rely on. Small enough that orthogonal draws rarely need resampling.
pub const DEFAULT_C_MIN: f64 = 0.05;

/// Resampling cap for degenerate random draws in [`CodingScheme::generate`].
const MAX_ATTEMPTS: usize = 32;

/// Floor on how detectable a corruption of any single primary result is.
///
/// A corruption of result `j` shifts redundant prediction `c` by
/// `g_cj = Σ_i a_ext[i][c]·a_inv[j][i]` times the injected error, while the
/// redundant observation it is compared against is (in the noise-dominated
/// regime, redundant columns scaled to unit norm) at most noise-sized. A
/// tamper of relative size `s` on result `j` therefore leaves a relative
/// residual of roughly `s · max_c |g_cj| · ‖noise rows of column j‖` or
/// more. Draws where that product falls below this floor for some `j` are
/// resampled, so a perturbation a few decades above the verification
/// tolerance can never hide, whichever single result it lands on.
const EXT_DETECT_MIN: f64 = 0.03;

/// Denominator guard for relative residuals on near-zero outputs.
const RESIDUAL_FLOOR: f64 = 1e-30;

/// Outcome of an integrity check over redundant worker results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrityVerdict {
    pub pass: bool,
    /// Largest relative mismatch observed across all redundant comparisons.
    pub max_residual: f64,
    /// Index of the comparison producing `max_residual` (forward: extension
    /// column index; backward: always 0, there is a single comparison).
    pub worst_index: usize,
}

/// Secondary decoding data for the backward integrity check.
///
/// Two different weight vectors over `p + 1` gradient equations (the `p`
/// base equations plus one computed on the first redundant masked tensor)
/// that must collapse to the *same* summed weight gradient on honest data.
/// `gamma1` ignores the redundant equation; `gamma2` ignores the base
/// equation at `pivot`. A corrupted equation enters the two sums with
/// different weights, so the sums split apart.
///
/// Such a pair exists only for `k = 1` schemes: with two or more real
/// samples per batch, any second decoding vector over a deleted-column
/// subset is forced to reproduce the first one's combination weights, so no
/// honest-data invariant remains to test. [`CodingScheme::verify_grad`]
/// reports [`Error::GradCheckUnavailable`] in that case; forward
/// verification still covers every worker reply.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheck {
    gamma1: Vec<f64>,
    gamma2: Vec<f64>,
    b_ext: f64,
    pivot: usize,
}

impl GradCheck {
    pub fn pivot(&self) -> usize {
        self.pivot
    }
    /// Combination coefficient for the redundant gradient equation
    /// (counterpart of a `B` row, for the single `k = 1` input).
    pub fn b_ext(&self) -> f64 {
        self.b_ext
    }
    pub fn gamma_pair(&self) -> (&[f64], &[f64]) {
        (&self.gamma1, &self.gamma2)
    }
}

/// One virtual batch: `k` real samples and `m` freshly drawn noise tensors,
/// all of one shape.
#[derive(Debug, Clone)]
pub struct VirtualBatch {
    pub inputs: Vec<Tensor>,
    pub noises: Vec<Tensor>,
}

impl VirtualBatch {
    pub fn new(inputs: Vec<Tensor>, noises: Vec<Tensor>) -> Result<Self> {
        if inputs.is_empty() || noises.is_empty() {
            return Err(Error::InvalidArgument(
                "virtual batch needs at least one input and one noise tensor".into(),
            ));
        }
        let shape = inputs[0].shape();
        for t in inputs.iter().chain(&noises) {
            if t.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "virtual batch mixes shapes {:?} and {:?}",
                    shape,
                    t.shape()
                )));
            }
        }
        Ok(Self { inputs, noises })
    }

    /// Build a batch by drawing `m` noise tensors `~ Normal(mu, sigma2)`.
    pub fn draw<R: Rng>(
        inputs: Vec<Tensor>,
        m: usize,
        mu: f64,
        sigma2: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("empty virtual batch".into()));
        }
        if !(sigma2.is_finite() && sigma2 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be finite and >= 0, got {sigma2}"
            )));
        }
        let shape = inputs[0].shape().to_vec();
        let noises = (0..m)
            .map(|_| Tensor::randn(&shape, mu, sigma2.sqrt(), rng))
            .collect();
        Self::new(inputs, noises)
    }
}

/// Masked tensors produced by [`CodingScheme::encode`]: `p` primary ones and
/// `e` redundant ones for integrity checks. Workers receive these; nothing
/// else about the batch leaves the coordinator.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    tensors: Vec<Tensor>,
    p: usize,
    /// Identifies the generating scheme to the coordinator; meaningless to
    /// workers.
    pub scheme_seed: u64,
}

impl EncodedBatch {
    /// The `p` primary masked tensors.
    pub fn base(&self) -> &[Tensor] {
        &self.tensors[..self.p]
    }
    /// The `e` redundant masked tensors.
    pub fn ext(&self) -> &[Tensor] {
        &self.tensors[self.p..]
    }
    /// All masked tensors, primary then redundant.
    pub fn all(&self) -> &[Tensor] {
        &self.tensors
    }
    pub fn all_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }
}

/// The coordinator's secret per-virtual-batch coefficients.
#[derive(Debug, Clone)]
pub struct CodingScheme {
    k: usize,
    m: usize,
    e: usize,
    /// p×p mixing matrix, `a[i][j]` = weight of source i in masked output j.
    a: Vec<Vec<f64>>,
    /// Cached inverse of `a` (row j, column i). Never exported.
    a_inv: Vec<Vec<f64>>,
    /// p×e redundant-column coefficients.
    a_ext: Vec<Vec<f64>>,
    /// p×k gradient-combination rows: masked output j pairs its tensor with
    /// `Σ_i b[j][i]·δ⁽ⁱ⁾`.
    b: Vec<Vec<f64>>,
    /// Secret decoding weights for the gradient equations.
    gamma: Vec<f64>,
    grad_check: Option<GradCheck>,
    seed: u64,
}

impl CodingScheme {
    /// Draw a fresh scheme. `k` real inputs, `m` noise tensors, `e`
    /// redundant columns, deterministic in `seed`.
    ///
    /// For `m = 1` the mixing matrix is orthogonal (QR of a Gaussian draw,
    /// sign-fixed), so its condition number is exactly 1. For `m >= 2` the
    /// noise rows are rescaled so every masked output keeps at least
    /// `c_min` worth of noise, and the draw is rejected if that pushes the
    /// condition number past 1e6. Degenerate draws are resampled up to a
    /// cap, then reported as [`Error::DegenerateScheme`].
    pub fn generate(k: usize, m: usize, e: usize, c_min: f64, seed: u64) -> Result<Self> {
        if k == 0 || m == 0 {
            return Err(Error::InvalidArgument(
                "scheme needs k >= 1 inputs and m >= 1 noise tensors".into(),
            ));
        }
        if !(c_min.is_finite() && c_min > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "c_min must be finite and > 0, got {c_min}"
            )));
        }
        let p = k + m;
        let mut rng = crate::rng::chacha(seed, crate::rng::stream::SCHEME);
        for _ in 0..MAX_ATTEMPTS {
            let Some(a_mat) = draw_mixing_matrix(p, k, m, c_min, &mut rng) else {
                continue;
            };
            let Some(a_inv_mat) = a_mat.clone().try_inverse() else {
                continue;
            };
            // Guard against a barely-invertible draw slipping past the
            // condition-number screen.
            let id_err = (&a_mat * &a_inv_mat - nalgebra::DMatrix::identity(p, p)).abs().max();
            if id_err > 1e-8 {
                continue;
            }

            let gamma: Vec<f64> = (0..p).map(|_| signed_unit_range(&mut rng)).collect();
            let b: Vec<Vec<f64>> = (0..p)
                .map(|j| (0..k).map(|i| a_inv_mat[(j, i)] / gamma[j]).collect())
                .collect();
            let a: Vec<Vec<f64>> = (0..p)
                .map(|i| (0..p).map(|j| a_mat[(i, j)]).collect())
                .collect();
            let a_inv: Vec<Vec<f64>> = (0..p)
                .map(|j| (0..p).map(|i| a_inv_mat[(j, i)]).collect())
                .collect();
            let mut a_ext: Vec<Vec<f64>> = (0..p)
                .map(|_| {
                    (0..e)
                        .map(|_| {
                            let z: f64 =
                                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                            z
                        })
                        .collect()
                })
                .collect();
            // Scale each redundant column to unit norm. Verification
            // residuals are invariant to this (prediction and observation
            // scale together), but it caps how large the redundant
            // observation can be relative to the primaries, which the
            // detectability floor below relies on.
            if !normalize_ext_columns(&mut a_ext, p, e) {
                continue;
            }
            if e >= 1 && !ext_tamper_detectable(&a_ext, &a_mat, &a_inv_mat, k, p, e) {
                continue;
            }

            let grad_check = if k == 1 && e >= 1 {
                let pivot = rng.random_range(0..p);
                let b_ext = signed_unit_range(&mut rng);
                match build_grad_check(&a, &a_ext, &b, &gamma, b_ext, pivot) {
                    Some(gc) => Some(gc),
                    None => continue,
                }
            } else {
                None
            };

            let scheme = Self { k, m, e, a, a_inv, a_ext, b, gamma, grad_check, seed };
            if scheme.constraint_residual() > 1e-10 {
                continue;
            }
            return Ok(scheme);
        }
        Err(Error::DegenerateScheme { attempts: MAX_ATTEMPTS })
    }

    /// Build a scheme from explicit coefficients (mixing matrix rows,
    /// per-equation weights, redundant columns). Intended for fixed-matrix
    /// tests and for the identity-mixing debug mode; [`Self::generate`] is
    /// the normal entry point.
    pub fn from_parts(
        a: Vec<Vec<f64>>,
        gamma: Vec<f64>,
        a_ext: Vec<Vec<f64>>,
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        let p = a.len();
        if p == 0 || a.iter().any(|row| row.len() != p) {
            return Err(Error::InvalidArgument("mixing matrix must be square".into()));
        }
        if k == 0 || k >= p {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= k < p, got k={k}, p={p}"
            )));
        }
        if gamma.len() != p || gamma.iter().any(|&g| g == 0.0 || !g.is_finite()) {
            return Err(Error::InvalidArgument(
                "gamma must be length p with nonzero finite entries".into(),
            ));
        }
        let e = a_ext.first().map_or(0, Vec::len);
        if a_ext.len() != p && !(a_ext.is_empty() && e == 0) {
            return Err(Error::InvalidArgument(
                "redundant-column coefficients must have p rows".into(),
            ));
        }
        if a_ext.iter().any(|row| row.len() != e) {
            return Err(Error::InvalidArgument(
                "redundant-column rows must all have the same length".into(),
            ));
        }
        let a_mat = nalgebra::DMatrix::from_fn(p, p, |i, j| a[i][j]);
        let a_inv_mat = a_mat
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("mixing matrix is singular".into()))?;
        let b: Vec<Vec<f64>> = (0..p)
            .map(|j| (0..k).map(|i| a_inv_mat[(j, i)] / gamma[j]).collect())
            .collect();
        let a_inv: Vec<Vec<f64>> = (0..p)
            .map(|j| (0..p).map(|i| a_inv_mat[(j, i)]).collect())
            .collect();
        let a_ext = if a_ext.is_empty() { vec![Vec::new(); p] } else { a_ext };
        let grad_check = if k == 1 && e >= 1 {
            build_grad_check(&a, &a_ext, &b, &gamma, 1.0, p - 1)
        } else {
            None
        };
        Ok(Self { k, m: p - k, e, a, a_inv, a_ext, b, gamma, grad_check, seed })
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn m(&self) -> usize {
        self.m
    }
    /// Number of primary masked outputs (`k + m`).
    pub fn p(&self) -> usize {
        self.k + self.m
    }
    /// Number of redundant integrity columns.
    pub fn ext_cols(&self) -> usize {
        self.e
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    /// Mixing matrix rows (source-major). Secret; exposed for analysis and
    /// attack experiments, never sent to workers by the protocol.
    pub fn mixing_rows(&self) -> &[Vec<f64>] {
        &self.a
    }
    /// Coefficients of the sources in redundant column `c`.
    pub fn ext_column(&self, c: usize) -> Vec<f64> {
        self.a_ext.iter().map(|row| row[c]).collect()
    }
    /// Gradient-combination rows (`p` rows of `k` coefficients each).
    pub fn beta_rows(&self) -> &[Vec<f64>] {
        &self.b
    }
    /// Secret per-equation decoding weights.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }
    pub fn grad_check(&self) -> Option<&GradCheck> {
        self.grad_check.as_ref()
    }

    /// Mask a virtual batch: masked output `j = Σ_i a[i][j]·source_i`, then
    /// the `e` redundant columns likewise.
    pub fn encode(&self, batch: &VirtualBatch) -> Result<EncodedBatch> {
        if batch.inputs.len() != self.k || batch.noises.len() != self.m {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} inputs / {} noises, scheme wants {} / {}",
                batch.inputs.len(),
                batch.noises.len(),
                self.k,
                self.m
            )));
        }
        let sources: Vec<&Tensor> = batch.inputs.iter().chain(&batch.noises).collect();
        let p = self.p();
        let mut tensors = Vec::with_capacity(p + self.e);
        for j in 0..p {
            let terms: Vec<(f64, &Tensor)> =
                (0..p).map(|i| (self.a[i][j], sources[i])).collect();
            tensors.push(Tensor::lin_comb(&terms)?);
        }
        for c in 0..self.e {
            let terms: Vec<(f64, &Tensor)> =
                (0..p).map(|i| (self.a_ext[i][c], sources[i])).collect();
            tensors.push(Tensor::lin_comb(&terms)?);
        }
        Ok(EncodedBatch { tensors, p, scheme_seed: self.seed })
    }

    /// Recover all `p` per-source images `f(source_i)` from the `p` primary
    /// worker results of a linear map `f`.
    fn decode_sources(&self, ybar: &[Tensor]) -> Result<Vec<Tensor>> {
        let p = self.p();
        if ybar.len() < p {
            return Err(Error::IncompleteBatch { index: ybar.len() });
        }
        (0..p)
            .map(|i| {
                let terms: Vec<(f64, &Tensor)> =
                    (0..p).map(|j| (self.a_inv[j][i], &ybar[j])).collect();
                Tensor::lin_comb(&terms)
            })
            .collect()
    }

    /// Recover the `k` per-input images `f(x_i)` of a linear map from the
    /// `p` primary worker results (noise images are discarded).
    pub fn decode_forward(&self, ybar: &[Tensor]) -> Result<Vec<Tensor>> {
        let p = self.p();
        if ybar.len() != p {
            if ybar.len() < p {
                return Err(Error::IncompleteBatch { index: ybar.len() });
            }
            return Err(Error::InvalidArgument(format!(
                "expected exactly {} primary results, got {}",
                p,
                ybar.len()
            )));
        }
        let mut sources = self.decode_sources(ybar)?;
        sources.truncate(self.k);
        Ok(sources)
    }

    /// Coordinator-side gradient pre-combination: tensor `j` of the result
    /// is `Σ_i b[j][i]·deltas[i]`, the partner a worker pairs with masked
    /// tensor `j` in its gradient equation.
    pub fn combine_deltas(&self, deltas: &[Tensor]) -> Result<Vec<Tensor>> {
        if deltas.len() != self.k {
            return Err(Error::ShapeMismatch(format!(
                "got {} gradient tensors, scheme wants k={}",
                deltas.len(),
                self.k
            )));
        }
        (0..self.p())
            .map(|j| {
                let terms: Vec<(f64, &Tensor)> =
                    (0..self.k).map(|i| (self.b[j][i], &deltas[i])).collect();
                Tensor::lin_comb(&terms)
            })
            .collect()
    }

    /// Gradient partner for the redundant equation used by
    /// [`Self::verify_grad`] (`k = 1` schemes only).
    pub fn grad_check_delta(&self, deltas: &[Tensor]) -> Result<Tensor> {
        let gc = self.grad_check.as_ref().ok_or(Error::GradCheckUnavailable)?;
        if deltas.len() != self.k {
            return Err(Error::ShapeMismatch(format!(
                "got {} gradient tensors, scheme wants k={}",
                deltas.len(),
                self.k
            )));
        }
        Ok(deltas[0].scale(gc.b_ext))
    }

    /// Collapse the `p` per-equation gradient results into the summed
    /// weight gradient `Σ_i ∂W(δ⁽ⁱ⁾, x⁽ⁱ⁾)` (summation in ascending
    /// equation order for determinism).
    pub fn decode_grad(&self, eqs: &[Tensor]) -> Result<Tensor> {
        let p = self.p();
        if eqs.len() != p {
            if eqs.len() < p {
                return Err(Error::IncompleteBatch { index: eqs.len() });
            }
            return Err(Error::InvalidArgument(format!(
                "expected exactly {} gradient equations, got {}",
                p,
                eqs.len()
            )));
        }
        let terms: Vec<(f64, &Tensor)> =
            (0..p).map(|j| (self.gamma[j], &eqs[j])).collect();
        Tensor::lin_comb(&terms)
    }

    /// Forward integrity check. Decodes all `p` per-source images from the
    /// primary results, predicts what each redundant result must be (the
    /// same linear map applied to the redundant masked tensor), and
    /// compares: `‖predicted − observed‖∞ / (‖observed‖∞ + floor) < tau`
    /// for every redundant column.
    pub fn verify_forward(&self, ybar_full: &[Tensor], tau: f64) -> Result<IntegrityVerdict> {
        if self.e == 0 {
            return Err(Error::IntegrityNotEnabled);
        }
        let p = self.p();
        if ybar_full.len() != p + self.e {
            if ybar_full.len() < p + self.e {
                return Err(Error::IncompleteBatch { index: ybar_full.len() });
            }
            return Err(Error::InvalidArgument(format!(
                "expected {} results ({} primary + {} redundant), got {}",
                p + self.e,
                p,
                self.e,
                ybar_full.len()
            )));
        }
        let sources = self.decode_sources(&ybar_full[..p])?;
        let mut verdict =
            IntegrityVerdict { pass: true, max_residual: 0.0, worst_index: 0 };
        for c in 0..self.e {
            let terms: Vec<(f64, &Tensor)> =
                (0..p).map(|i| (self.a_ext[i][c], &sources[i])).collect();
            let predicted = Tensor::lin_comb(&terms)?;
            let observed = &ybar_full[p + c];
            let res = rel_linf(&predicted, observed, RESIDUAL_FLOOR);
            if res > verdict.max_residual {
                verdict.max_residual = res;
                verdict.worst_index = c;
            }
        }
        verdict.pass = verdict.max_residual < tau;
        Ok(verdict)
    }

    /// Backward integrity check over `p + 1` gradient equations (the `p`
    /// base ones plus the redundant one). Decodes the summed weight
    /// gradient twice with the two secret weight vectors and compares.
    /// Available only when the scheme was built with `k = 1` and at least
    /// one redundant column; see [`GradCheck`] for why.
    pub fn verify_grad(&self, eqs: &[Tensor], tau: f64) -> Result<IntegrityVerdict> {
        let gc = self.grad_check.as_ref().ok_or(Error::GradCheckUnavailable)?;
        let p = self.p();
        if eqs.len() != p + 1 {
            if eqs.len() < p + 1 {
                return Err(Error::IncompleteBatch { index: eqs.len() });
            }
            return Err(Error::InvalidArgument(format!(
                "expected {} gradient equations ({} base + 1 redundant), got {}",
                p + 1,
                p,
                eqs.len()
            )));
        }
        let comb = |w: &[f64]| -> Result<Tensor> {
            let terms: Vec<(f64, &Tensor)> =
                w.iter().zip(eqs).map(|(&c, t)| (c, t)).collect();
            Tensor::lin_comb(&terms)
        };
        let g1 = comb(&gc.gamma1)?;
        let g2 = comb(&gc.gamma2)?;
        let denom = g1.linf_norm().max(g2.linf_norm()) + RESIDUAL_FLOOR;
        let diff = g1.sub(&g2)?;
        let res = diff.linf_norm() / denom;
        Ok(IntegrityVerdict { pass: res < tau, max_residual: res, worst_index: 0 })
    }

    /// `max_{i<k, l<p} |Σ_j b[j][i]·γ_j·a[l][j] − [i == l]|`: how far the
    /// stored coefficients are from the exact-gradient-decode identity.
    /// Freshly generated schemes sit near 1e-15.
    pub fn constraint_residual(&self) -> f64 {
        constraint_residual_of(&self.a, &self.b, &self.gamma, self.k)
    }

    /// `‖AᵀA − I‖∞`. Near 1e-15 for `m = 1` schemes (orthogonal mixing);
    /// meaningful but unconstrained for `m >= 2` (noise rows rescaled).
    pub fn orthogonality_residual(&self) -> f64 {
        let p = self.p();
        let mut worst = 0.0f64;
        for j1 in 0..p {
            for j2 in 0..p {
                let dot: f64 = (0..p).map(|i| self.a[i][j1] * self.a[i][j2]).sum();
                let target = if j1 == j2 { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Euclidean norms of the noise-coefficient block, one per masked
    /// output. Each is kept at or above the generation-time `c_min`.
    pub fn noise_column_norms(&self) -> Vec<f64> {
        let p = self.p();
        (0..p)
            .map(|j| {
                (self.k..p)
                    .map(|i| self.a[i][j] * self.a[i][j])
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// The scheme's public-shape summary plus full coefficients, as a JSON
    /// value (diagnostics/export; treat the output as secret material).
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "k": self.k,
            "m": self.m,
            "ext_cols": self.e,
            "seed": self.seed,
            "a": self.a,
            "a_ext": self.a_ext,
            "b": self.b,
            "gamma": self.gamma,
        })
    }
}

/// Shared residual kernel so tests can evaluate scaled/perturbed coefficient
/// sets without building a scheme.
pub(crate) fn constraint_residual_of(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    gamma: &[f64],
    k: usize,
) -> f64 {
    let p = a.len();
    let mut worst = 0.0f64;
    for i in 0..k {
        for l in 0..p {
            let sum: f64 = (0..p).map(|j| b[j][i] * gamma[j] * a[l][j]).sum();
            let target = if i == l { 1.0 } else { 0.0 };
            worst = worst.max((sum - target).abs());
        }
    }
    worst
}

/// ±Uniform[0.5, 2]: bounded away from zero in both directions so secret
/// weights never vanish or explode.
fn signed_unit_range<R: Rng>(rng: &mut R) -> f64 {
    let mag = rng.random_range(0.5..2.0);
    if rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

/// One candidate mixing matrix: QR of a Gaussian draw, sign-fixed so the
/// factorization (and hence the matrix) is a deterministic function of the
/// draw. Returns `None` when the draw fails the noise-floor or conditioning
/// screens and should be resampled.
fn draw_mixing_matrix<R: Rng>(
    p: usize,
    k: usize,
    m: usize,
    c_min: f64,
    rng: &mut R,
) -> Option<nalgebra::DMatrix<f64>> {
    let g = nalgebra::DMatrix::from_fn(p, p, |_, _| {
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        z
    });
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if m == 1 {
        // Orthogonal mode: condition number is exactly 1; just insist every
        // masked output keeps at least c_min worth of noise.
        let min_noise = (0..p).map(|j| q[(k, j)].abs()).fold(f64::INFINITY, f64::min);
        if min_noise < c_min {
            return None;
        }
        return Some(q);
    }
    // m >= 2: rescale the noise rows so the weakest masked output reaches
    // the floor, then make sure the matrix stayed well-conditioned.
    let col_noise_norm = |mat: &nalgebra::DMatrix<f64>, j: usize| -> f64 {
        (k..p).map(|i| mat[(i, j)] * mat[(i, j)]).sum::<f64>().sqrt()
    };
    let min_norm = (0..p).map(|j| col_noise_norm(&q, j)).fold(f64::INFINITY, f64::min);
    if min_norm < 1e-12 {
        return None;
    }
    if min_norm < c_min {
        let s = c_min / min_norm;
        for i in k..p {
            for j in 0..p {
                q[(i, j)] *= s;
            }
        }
    }
    let sv = q.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 0.0 || smax / smin > 1e6 {
        return None;
    }
    Some(q)
}

/// Scale every redundant column to unit Euclidean norm. Returns `false` on
/// a (measure-zero) zero-norm column so the caller can resample.
fn normalize_ext_columns(a_ext: &mut [Vec<f64>], p: usize, e: usize) -> bool {
    for c in 0..e {
        let norm = (0..p).map(|i| a_ext[i][c] * a_ext[i][c]).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return false;
        }
        for row in a_ext.iter_mut() {
            row[c] /= norm;
        }
    }
    true
}

/// True when a corruption of any single primary result leaves a detectable
/// mark on at least one redundant prediction: for every result `j`,
/// `max_c |g_cj| · ‖noise rows of mixing column j‖₂ >= EXT_DETECT_MIN`
/// (see [`EXT_DETECT_MIN`] for why this product is the right figure).
fn ext_tamper_detectable(
    a_ext: &[Vec<f64>],
    a: &nalgebra::DMatrix<f64>,
    a_inv: &nalgebra::DMatrix<f64>,
    k: usize,
    p: usize,
    e: usize,
) -> bool {
    (0..p).all(|j| {
        let noise_gain: f64 =
            (k..p).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt();
        (0..e).any(|c| {
            let g: f64 = (0..p).map(|i| a_ext[i][c] * a_inv[(j, i)]).sum();
            g.abs() * noise_gain >= EXT_DETECT_MIN
        })
    })
}

/// Construct the dual decoding pair for `k = 1`; `None` when this
/// coefficient set does not admit a well-separated pair (callers resample).
fn build_grad_check(
    a: &[Vec<f64>],
    a_ext: &[Vec<f64>],
    b: &[Vec<f64>],
    gamma: &[f64],
    b_ext: f64,
    pivot: usize,
) -> Option<GradCheck> {
    let p = a.len();
    debug_assert!(pivot < p);
    // Per-equation delta coefficients: base equations use b[j][0], the
    // redundant one uses b_ext. All must be safely nonzero since gamma2
    // divides by them.
    let mut bt: Vec<f64> = (0..p).map(|j| b[j][0]).collect();
    bt.push(b_ext);
    if bt.iter().any(|&v| v.abs() < 1e-6) {
        return None;
    }
    // Columns of the extended mixing matrix [A | a_ext[:,0]], minus the
    // pivot column; solve for the weights that rebuild source 0 from the
    // remaining p equations.
    let cols: Vec<usize> = (0..=p).filter(|&j| j != pivot).collect();
    let m2 = nalgebra::DMatrix::from_fn(p, p, |i, idx| {
        let j = cols[idx];
        if j < p {
            a[i][j]
        } else {
            a_ext[i][0]
        }
    });
    let inv2 = m2.try_inverse()?;
    let mut gamma2 = vec![0.0; p + 1];
    for (idx, &j) in cols.iter().enumerate() {
        gamma2[j] = inv2[(idx, 0)] / bt[j];
    }
    let mut gamma1: Vec<f64> = gamma.to_vec();
    gamma1.push(0.0);
    // A corrupted equation j is detectable iff gamma1[j] != gamma2[j];
    // insist on clear separation everywhere so single-fault detection is
    // certain, not merely generic.
    for j in 0..=p {
        if (gamma1[j] - gamma2[j]).abs() < 1e-9 * (1.0 + gamma1[j].abs() + gamma2[j].abs()) {
            return None;
        }
    }
    Some(GradCheck { gamma1, gamma2, b_ext, pivot })
}
