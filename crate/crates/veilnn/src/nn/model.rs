//! A model is a layer stack plus its parameters, with plain (unmasked)
//! forward/backward passes. The masked trainer drives the same `LayerSpec`
//! kernels through workers; this module is both the reference it is compared
//! against and the source of the nonlinear pieces it keeps locally.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::{LayerSpec, LayerWeights};
use crate::nn::loss::{argmax, softmax_cross_entropy};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub layers: Vec<LayerSpec>,
    /// One entry per layer; `None` for parameter-free layers.
    pub weights: Vec<Option<LayerWeights>>,
    pub in_shape: Vec<usize>,
    pub n_classes: usize,
}

/// Per-layer gradients in layer order, matching `Model::weights`.
pub type GradSet = Vec<Option<LayerWeights>>;

impl Model {
    /// Validate the shape chain and draw initial parameters: He-scaled
    /// normals for weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init(layers: Vec<LayerSpec>, in_shape: &[usize], seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        let mut rng = crate::rng::chacha(seed, crate::rng::stream::WEIGHT_INIT);
        let mut shape = in_shape.to_vec();
        let mut weights = Vec::with_capacity(layers.len());
        for layer in &layers {
            shape = layer.out_shape(&shape).map_err(|e| {
                Error::Config(format!("layer {layer:?} rejects incoming shape: {e}"))
            })?;
            weights.push(match layer.weight_shape() {
                Some(ws) => {
                    let fan_in: usize = match layer {
                        LayerSpec::Dense { in_dim, .. } => *in_dim,
                        LayerSpec::Conv2d {
                            in_ch, kernel: (kh, kw), ..
                        } => in_ch * kh * kw,
                        _ => unreachable!(),
                    };
                    let std = (2.0 / fan_in as f64).sqrt();
                    let n: usize = ws.iter().product();
                    let data = (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            std * z
                        })
                        .collect();
                    Some(LayerWeights {
                        w: Tensor::new(ws, data)?,
                        b: Tensor::zeros(&layer.bias_shape().unwrap()),
                    })
                }
                None => None,
            });
        }
        let [n_classes] = shape[..] else {
            return Err(Error::Config(format!(
                "model must end in a logit vector, got {shape:?}"
            )));
        };
        Ok(Self {
            layers,
            weights,
            in_shape: in_shape.to_vec(),
            n_classes,
        })
    }

    /// Forward one sample, returning the logits and the cached input of each
    /// layer (needed for the backward pass).
    pub fn forward_cached(&self, x: &Tensor, prec: Precision) -> Result<(Tensor, Vec<Tensor>)> {
        let mut cur = x.clone();
        prec.quantize(&mut cur);
        let mut caches = Vec::with_capacity(self.layers.len());
        for (layer, weights) in self.layers.iter().zip(&self.weights) {
            caches.push(cur.clone());
            cur = match weights {
                Some(lw) => {
                    let mut y = layer.linear_forward(&lw.w, &cur)?;
                    add_bias(layer, &mut y, &lw.b)?;
                    y
                }
                None => layer.nonlinear_forward(&cur)?,
            };
            prec.quantize(&mut cur);
        }
        Ok((cur, caches))
    }

    pub fn forward(&self, x: &Tensor, prec: Precision) -> Result<Tensor> {
        Ok(self.forward_cached(x, prec)?.0)
    }

    pub fn predict(&self, x: &Tensor, prec: Precision) -> Result<usize> {
        Ok(argmax(&self.forward(x, prec)?))
    }

    /// Backward one sample from the logit gradient, producing per-layer
    /// parameter gradients (accumulated into `grads`) and consuming the
    /// caches from [`Model::forward_cached`].
    pub fn backward_accumulate(
        &self,
        caches: &[Tensor],
        dlogits: &Tensor,
        prec: Precision,
        grads: &mut GradSet,
    ) -> Result<()> {
        let mut delta = dlogits.clone();
        prec.quantize(&mut delta);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &caches[l];
            match &self.weights[l] {
                Some(lw) => {
                    let wg = layer.weight_grad(&delta, x)?;
                    let bg = bias_grad(layer, &delta)?;
                    let slot = grads[l].get_or_insert_with(|| LayerWeights {
                        w: Tensor::zeros(wg.shape()),
                        b: Tensor::zeros(bg.shape()),
                    });
                    slot.w.axpy(1.0, &wg)?;
                    slot.b.axpy(1.0, &bg)?;
                    if l > 0 {
                        delta = layer.input_grad_with_shape(&lw.w, &delta, x.shape())?;
                        prec.quantize(&mut delta);
                    }
                }
                None => {
                    delta = layer.nonlinear_backward(x, &delta)?;
                    prec.quantize(&mut delta);
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> GradSet {
        self.weights
            .iter()
            .map(|w| {
                w.as_ref().map(|lw| LayerWeights {
                    w: Tensor::zeros(lw.w.shape()),
                    b: Tensor::zeros(lw.b.shape()),
                })
            })
            .collect()
    }

    /// Plain SGD step: `theta -= lr/batch * grad_sum`.
    pub fn apply_grads(&mut self, grads: &GradSet, lr: f64, batch: usize, prec: Precision) -> Result<()> {
        let scale = -lr / batch as f64;
        for (w, g) in self.weights.iter_mut().zip(grads) {
            if let (Some(lw), Some(g)) = (w.as_mut(), g.as_ref()) {
                lw.w.axpy(scale, &g.w)?;
                lw.b.axpy(scale, &g.b)?;
                prec.quantize(&mut lw.w);
                prec.quantize(&mut lw.b);
            }
        }
        Ok(())
    }

    /// Loss + logit gradient for one sample; shared by both trainers.
    pub fn loss_and_dlogits(&self, logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
        softmax_cross_entropy(logits, label)
    }

    /// Flat snapshot of every parameter tensor, in layer order — used for
    /// trajectory comparisons between trainers.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.weights
            .iter()
            .flatten()
            .flat_map(|lw| [lw.w.clone(), lw.b.clone()])
            .collect()
    }
}

/// Bias addition: per-output for dense, per-channel for conv. Kept out of
/// `linear_forward` because the bias is input-independent and therefore never
/// offloaded — the coordinator adds it after decoding.
pub fn add_bias(layer: &LayerSpec, y: &mut Tensor, b: &Tensor) -> Result<()> {
    match layer {
        LayerSpec::Dense { .. } => y.axpy(1.0, b),
        LayerSpec::Conv2d { .. } => {
            let [out_ch, oh, ow] = y.shape() else {
                return Err(Error::ShapeMismatch("conv bias on non-3d output".into()));
            };
            let (out_ch, oh, ow) = (*out_ch, *oh, *ow);
            if b.shape() != [out_ch] {
                return Err(Error::ShapeMismatch(format!(
                    "conv bias {:?}, want [{out_ch}]",
                    b.shape()
                )));
            }
            let data = y.data_mut();
            for oc in 0..out_ch {
                for i in 0..oh * ow {
                    data[oc * oh * ow + i] += b.data()[oc];
                }
            }
            Ok(())
        }
        _ => Err(Error::InvalidArgument("bias on parameter-free layer".into())),
    }
}

/// Bias gradient: the output gradient summed over everything but the output
/// unit/channel. Cheap, so the coordinator computes it directly.
pub fn bias_grad(layer: &LayerSpec, delta: &Tensor) -> Result<Tensor> {
    match layer {
        LayerSpec::Dense { .. } => Ok(delta.clone()),
        LayerSpec::Conv2d { .. } => {
            let [out_ch, oh, ow] = delta.shape() else {
                return Err(Error::ShapeMismatch("conv bias grad on non-3d delta".into()));
            };
            let (out_ch, oh, ow) = (*out_ch, *oh, *ow);
            let mut g = vec![0.0; out_ch];
            for oc in 0..out_ch {
                g[oc] = delta.data()[oc * oh * ow..(oc + 1) * oh * ow].iter().sum();
            }
            Ok(Tensor::from_parts(vec![out_ch], g))
        }
        _ => Err(Error::InvalidArgument("bias on parameter-free layer".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_mlp(seed: u64) -> Model {
        Model::init(
            vec![
                LayerSpec::Dense { in_dim: 4, out_dim: 5 },
                LayerSpec::Relu,
                LayerSpec::Dense { in_dim: 5, out_dim: 3 },
            ],
            &[4],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn init_validates_shape_chain() {
        let bad = Model::init(
            vec![
                LayerSpec::Dense { in_dim: 4, out_dim: 5 },
                LayerSpec::Dense { in_dim: 6, out_dim: 3 },
            ],
            &[4],
            0,
        );
        assert!(matches!(bad, Err(Error::Config(_))));
        let not_logits = Model::init(
            vec![LayerSpec::Conv2d {
                in_ch: 1,
                out_ch: 2,
                kernel: (3, 3),
                stride: 1,
                pad: 0,
            }],
            &[1, 5, 5],
            0,
        );
        assert!(not_logits.is_err());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = tiny_mlp(11);
        let b = tiny_mlp(11);
        assert_eq!(a.snapshot(), b.snapshot());
        let c = tiny_mlp(12);
        assert_ne!(a.snapshot(), c.snapshot());
    }

    /// End-to-end gradient check through the full stack (dense + relu +
    /// bias), against central finite differences of the scalar loss.
    #[test]
    fn full_backward_matches_finite_differences() {
        let model = tiny_mlp(3);
        let mut rng = crate::rng::chacha(17, 0);
        let x = Tensor::randn(&[4], 0.0, 1.0, &mut rng);
        let label = 2usize;

        let (logits, caches) = model.forward_cached(&x, Precision::F64).unwrap();
        let (_, dlogits) = model.loss_and_dlogits(&logits, label).unwrap();
        let mut grads = model.zero_grads();
        model
            .backward_accumulate(&caches, &dlogits, Precision::F64, &mut grads)
            .unwrap();

        let eps = 1e-6;
        for l in [0usize, 2] {
            let analytic = grads[l].as_ref().unwrap();
            for idx in 0..analytic.w.numel() {
                let loss_at = |bump: f64| {
                    let mut m = model.clone();
                    m.weights[l].as_mut().unwrap().w.data_mut()[idx] += bump;
                    let y = m.forward(&x, Precision::F64).unwrap();
                    m.loss_and_dlogits(&y, label).unwrap().0
                };
                let fd = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
                let a = analytic.w.data()[idx];
                assert!(
                    (fd - a).abs() <= 1e-6 * (1.0 + a.abs()),
                    "layer {l} weight {idx}: fd {fd} vs {a}"
                );
            }
            for idx in 0..analytic.b.numel() {
                let loss_at = |bump: f64| {
                    let mut m = model.clone();
                    m.weights[l].as_mut().unwrap().b.data_mut()[idx] += bump;
                    let y = m.forward(&x, Precision::F64).unwrap();
                    m.loss_and_dlogits(&y, label).unwrap().0
                };
                let fd = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
                let a = analytic.b.data()[idx];
                assert!(
                    (fd - a).abs() <= 1e-6 * (1.0 + a.abs()),
                    "layer {l} bias {idx}: fd {fd} vs {a}"
                );
            }
        }
    }

    #[test]
    fn conv_stack_backward_matches_finite_differences() {
        let model = Model::init(
            vec![
                LayerSpec::Conv2d {
                    in_ch: 1,
                    out_ch: 2,
                    kernel: (3, 3),
                    stride: 1,
                    pad: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { window: (2, 2) },
                LayerSpec::Flatten,
                LayerSpec::Dense { in_dim: 2 * 3 * 3, out_dim: 2 },
            ],
            &[1, 6, 6],
            5,
        )
        .unwrap();
        let mut rng = crate::rng::chacha(23, 0);
        let x = Tensor::randn(&[1, 6, 6], 0.0, 1.0, &mut rng);
        let (logits, caches) = model.forward_cached(&x, Precision::F64).unwrap();
        let (_, dl) = model.loss_and_dlogits(&logits, 1).unwrap();
        let mut grads = model.zero_grads();
        model
            .backward_accumulate(&caches, &dl, Precision::F64, &mut grads)
            .unwrap();
        let analytic = grads[0].as_ref().unwrap();
        let eps = 1e-6;
        for idx in 0..analytic.w.numel() {
            let loss_at = |bump: f64| {
                let mut m = model.clone();
                m.weights[0].as_mut().unwrap().w.data_mut()[idx] += bump;
                let y = m.forward(&x, Precision::F64).unwrap();
                m.loss_and_dlogits(&y, 1).unwrap().0
            };
            let fd = (loss_at(eps) - loss_at(-eps)) / (2.0 * eps);
            let a = analytic.w.data()[idx];
            assert!(
                (fd - a).abs() <= 1e-5 * (1.0 + a.abs()),
                "conv weight {idx}: fd {fd} vs {a}"
            );
        }
    }

    #[test]
    fn apply_grads_with_zero_lr_is_identity() {
        let mut model = tiny_mlp(1);
        let before = model.snapshot();
        let mut grads = model.zero_grads();
        for g in grads.iter_mut().flatten() {
            g.w = Tensor::randn(g.w.shape(), 0.0, 1.0, &mut crate::rng::chacha(2, 0));
        }
        model.apply_grads(&grads, 0.0, 4, Precision::F64).unwrap();
        assert_eq!(model.snapshot(), before);
    }
}
