//! Closed-form leakage bounds for masked execution, plus a numerical
//! mutual-information oracle to sanity-check them.
//!
//! All quantities are mutual information in **nats**. The threat model: a
//! worker sees one masked tensor `x̄_j = Σ_i a_ij·x_i + Σ_m a_mj·r_m` with
//! noise `r ~ N(μ_r, σ²)` and wants to learn about the inputs `x_i`
//! (entries bounded by `c1`). Three regimes are bounded:
//!
//! * single observation with known coefficients ([`mi_bound_single`]),
//! * all `k+1` masked tensors jointly, Gaussian coefficients
//!   ([`mi_bound_joint`]),
//! * `m` colluding workers pooling their observations against the noise
//!   floor `c_min` ([`mi_bound_colluding`]).
//!
//! Every bound decays like `1/σ²`: noise power buys privacy at a fixed
//! exchange rate. [`mi_oracle_scalar`] integrates the exact
//! binary-input-Gaussian-channel MI so tests can confirm the closed forms
//! really do sit above the truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Everything the bound formulas need to know about a deployment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrivacyParams {
    /// Inputs per virtual batch.
    pub k: usize,
    /// Noise tensors per virtual batch (= maximum colluding set the
    /// colluding bound covers).
    pub m: usize,
    /// Entrywise input magnitude bound: |x| <= c1.
    pub c1: f64,
    /// Masking-noise variance.
    pub sigma2: f64,
    /// Largest mixing-coefficient magnitude.
    pub alpha_max: f64,
    /// Smallest (noise-)mixing-coefficient magnitude.
    pub alpha_min: f64,
    /// Floor on the noise-coefficient column norms (scheme generation
    /// enforces this; see [`crate::coding::CodingScheme::generate`]).
    pub c_min: f64,
    /// Total input variance Σ Var(x_{i,entry}) pooled over the colluding
    /// observations.
    pub var_sum: f64,
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if !(self.c1.is_finite() && self.c1 >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "c1 must be finite and >= 0, got {}",
                self.c1
            )));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma2 must be finite and > 0, got {}",
                self.sigma2
            )));
        }
        if !(self.alpha_min > 0.0 && self.alpha_max >= self.alpha_min) {
            return Err(Error::InvalidArgument(format!(
                "need alpha_max >= alpha_min > 0, got {} / {}",
                self.alpha_max, self.alpha_min
            )));
        }
        if !(self.c_min.is_finite() && self.c_min > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "c_min must be finite and > 0, got {}",
                self.c_min
            )));
        }
        if !(self.var_sum.is_finite() && self.var_sum >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "var_sum must be finite and >= 0, got {}",
                self.var_sum
            )));
        }
        Ok(())
    }

    /// Defaults matching the strongest noise regime the trainer ships with.
    pub fn default_for(k: usize, m: usize, sigma2: f64) -> Self {
        Self {
            k,
            m,
            c1: 1.0,
            sigma2,
            alpha_max: 1.0,
            alpha_min: 1.0,
            c_min: crate::coding::DEFAULT_C_MIN,
            var_sum: k as f64,
        }
    }
}

/// Which closed-form bound a caller wants inverted or reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Single,
    Joint,
    Colluding,
}

/// Leakage to one worker holding one masked tensor, coefficients known:
/// `k·c1²·(ᾱ/α̲)² / (2σ²)` nats. With all coefficient magnitudes equal this
/// collapses to `k·c1²/(2σ²)` exactly.
pub fn mi_bound_single(p: &PrivacyParams) -> f64 {
    let ratio = (p.alpha_max * p.alpha_max) / (p.alpha_min * p.alpha_min);
    (p.k as f64) * p.c1 * p.c1 * ratio / (2.0 * p.sigma2)
}

/// Leakage from the whole set of `k+1` masked tensors jointly, in the
/// Gaussian-coefficient regime: `16·k⁴·c1²/σ²` nats.
pub fn mi_bound_joint(p: &PrivacyParams) -> f64 {
    let k = p.k as f64;
    16.0 * k * k * k * k * p.c1 * p.c1 / p.sigma2
}

/// Leakage to `m` colluding workers pooling their masked tensors:
/// `var_sum / (c_min·σ²)` nats.
pub fn mi_bound_colluding(p: &PrivacyParams) -> f64 {
    p.var_sum / (p.c_min * p.sigma2)
}

pub fn bound(kind: BoundKind, p: &PrivacyParams) -> f64 {
    match kind {
        BoundKind::Single => mi_bound_single(p),
        BoundKind::Joint => mi_bound_joint(p),
        BoundKind::Colluding => mi_bound_colluding(p),
    }
}

/// Smallest noise variance that pushes the selected bound down to
/// `target_leakage` nats (all three bounds are exactly `const/σ²`, so this
/// is the algebraic inverse; plugging the result back reproduces the target
/// to rounding).
pub fn required_sigma2(target_leakage: f64, p: &PrivacyParams, kind: BoundKind) -> Result<f64> {
    if !(target_leakage.is_finite() && target_leakage > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target leakage must be finite and > 0, got {target_leakage}"
        )));
    }
    let mut probe = *p;
    probe.sigma2 = 1.0;
    Ok(bound(kind, &probe) / target_leakage)
}

/// One worker's unit-round-off: any leakage below this is indistinguishable
/// from 32-bit quantization noise.
pub fn f32_roundoff() -> f64 {
    (2.0f64).powi(-24)
}

/// Is the single-observation bound below the f32 unit round-off?
pub fn perfect_privacy_f32(p: &PrivacyParams) -> bool {
    mi_bound_single(p) < f32_roundoff()
}

/// The published accuracy-vs-noise table is internally consistent with a
/// single calibration: bound = 20/σ² nats across all four noise settings.
/// Exposed as an explicit preset, deliberately separate from
/// [`mi_bound_single`]: plugging the accompanying parameter set (k=2,
/// c1=1, coefficient ratio² = 10) into the formula directly gives 10/σ² —
/// a factor-2 gap nobody should paper over. Compare
/// [`reference_table_bound`] against `mi_bound_single` at the same σ² to
/// see both numbers.
pub fn reference_table_bound(sigma2: f64) -> f64 {
    20.0 / sigma2
}

/// The four (σ², leakage-bound) rows of the published table, reproduced by
/// [`reference_table_bound`] exactly.
pub const REFERENCE_TABLE: [(f64, f64); 4] = [
    (1.6e7, 1.25e-6),
    (2.5e7, 8e-7),
    (1e8, 2e-7),
    (4e8, 5e-8),
];

/// Exact mutual information of the scalar channel `y = a·x + b·r`, with
/// `x` uniform on `{−c1, +c1}` and `r ~ N(0, σ²)`, by numerical
/// integration (`grid` Simpson intervals over ±12 standard deviations).
///
/// This is the worst-case single-entry channel the closed-form bounds
/// dominate; it approaches `ln 2` (one full bit) as noise vanishes.
pub fn mi_oracle_scalar(c1: f64, a: f64, b: f64, sigma2: f64, grid: usize) -> Result<f64> {
    for (name, v) in [("c1", c1), ("a", a), ("b", b), ("sigma2", sigma2)] {
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!("{name} must be finite, got {v}")));
        }
    }
    if c1 < 0.0 {
        return Err(Error::InvalidArgument(format!("c1 must be >= 0, got {c1}")));
    }
    if sigma2 <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma2 must be > 0, got {sigma2}"
        )));
    }
    if b == 0.0 {
        return Err(Error::InvalidArgument(
            "b = 0 leaves no noise in the channel (leakage is a full bit, not finite-σ behavior)"
                .into(),
        ));
    }
    if grid < 1000 {
        return Err(Error::InvalidArgument(format!(
            "grid must be >= 1000 intervals, got {grid}"
        )));
    }
    if c1 == 0.0 || a == 0.0 {
        return Ok(0.0);
    }
    // Signal-to-noise amplitude ratio of the two-point input constellation.
    let mu = (a.abs() * c1) / (b.abs() * sigma2.sqrt());
    // I = ln 2 − E_{z~N(0,1)}[ softplus(−2μ(z+μ)) ]
    let n = grid + (grid % 2); // Simpson needs an even interval count
    let (lo, hi) = (-12.0f64, 12.0f64);
    let h = (hi - lo) / n as f64;
    let f = |z: f64| standard_normal_pdf(z) * softplus(-2.0 * mu * (z + mu));
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + h * i as f64);
    }
    let integral = acc * h / 3.0;
    Ok((std::f64::consts::LN_2 - integral).clamp(0.0, std::f64::consts::LN_2))
}

/// The closed-form ceiling the oracle must respect:
/// `min(a²·c1²/(2·b²·σ²), ln 2)`.
pub fn mi_oracle_ceiling(c1: f64, a: f64, b: f64, sigma2: f64) -> f64 {
    (a * a * c1 * c1 / (2.0 * b * b * sigma2)).min(std::f64::consts::LN_2)
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

fn standard_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Overflow-safe `ln(1 + e^t)`.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// CSV report for a list of parameter sets (the `analyze-privacy`
/// subcommand's payload). Floats use shortest-roundtrip formatting, so the
/// output is byte-deterministic.
pub fn report_csv(rows: &[PrivacyParams]) -> Result<String> {
    let mut out = String::from(
        "k,m,c1,sigma2,alpha_ratio,bound_single,bound_joint,bound_colluding,perfect_privacy_f32\n",
    );
    for p in rows {
        p.validate()?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.k,
            p.m,
            p.c1,
            p.sigma2,
            p.alpha_max / p.alpha_min,
            mi_bound_single(p),
            mi_bound_joint(p),
            mi_bound_colluding(p),
            perfect_privacy_f32(p),
        ));
    }
    Ok(out)
}
