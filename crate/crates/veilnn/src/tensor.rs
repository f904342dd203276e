//! Dense row-major tensors over `f64`.
//!
//! Everything the pipeline moves around — inputs, weights, noise, encodings,
//! gradients — is a `Tensor`. Storage is always `f64`; the optional `f32`
//! compute mode is modeled by quantizing a tensor's entries to `f32` at the
//! points where a real deployment would store or transmit single-precision
//! values (see [`Precision::quantize`]). That keeps the exact-decode path
//! testable in `f64` while still exposing the precision/noise trade-off.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numeric precision of the simulated pipeline.
///
/// `F64` is the default everywhere. `F32` rounds every produced tensor to
/// single precision, which is what makes very large masking noise start to
/// erase the low-order bits of the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    /// Round `t` to this precision in place. A no-op for `F64`.
    pub fn quantize(self, t: &mut Tensor) {
        if self == Precision::F32 {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that `data` matches `shape` and is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} wants {n} values, got {}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite value in tensor data".into(),
            ));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for values produced by our own arithmetic.
    /// Callers guarantee the length invariant; finiteness is debug-checked.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite tensor entry");
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; n])
    }

    /// Standard-normal entries scaled by `std` and shifted by `mean`.
    pub fn randn<R: rand::Rng>(shape: &[usize], mean: f64, std: f64, rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            })
            .collect();
        Self::from_parts(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} ({} values) to {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Self::from_parts(shape, self.data.clone()))
    }

    /// `self += c * other`. Shapes must match exactly.
    pub fn axpy(&mut self, c: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "axpy of {:?} into {:?}",
                other.shape, self.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|v| c * v).collect())
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// Weighted sum `sum_i coeffs[i] * terms[i]`. This is the inner loop of
    /// encoding, so it is written as a single accumulation pass.
    pub fn lin_comb(terms: &[(f64, &Tensor)]) -> Result<Self> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::InvalidArgument("lin_comb of zero terms".into()))?;
        let mut out = Tensor::zeros(first.shape());
        for &(c, t) in terms {
            out.axpy(c, t)?;
        }
        Ok(out)
    }

    /// Full inner product, flattening both operands.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "dot of {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn linf_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// FNV-1a (64-bit) over the little-endian bytes of the data. Used by
    /// protocol transcripts so that message logs are byte-stable without
    /// embedding whole tensors.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in &self.data {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

/// `max_i |a_i - b_i| / (max_i |b_i| + floor)` — the relative mismatch used
/// by integrity verification, with `floor` guarding all-zero references.
pub fn rel_linf(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let num = a
        .data
        .iter()
        .zip(&b.data)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    num / (b.linf_norm() + floor)
}

/// `‖a - b‖₂ / ‖b‖₂`, with the same guard as [`rel_linf`].
pub fn rel_l2(a: &Tensor, b: &Tensor) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let num = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    num / (b.l2_norm() + 1e-30)
}
