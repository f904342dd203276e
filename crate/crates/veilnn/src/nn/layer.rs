//! Layer shapes and the per-layer compute kernels.
//!
//! The split that matters here: `Dense` and `Conv2d` are *bilinear* — their
//! forward map, weight gradient, and input gradient are each linear in one
//! argument with the other held fixed. Those three kernels are exactly what
//! gets offloaded to untrusted workers, so they take explicit `(W, x)` or
//! `(delta, x)` arguments and know nothing about masking. `Relu`, `MaxPool2d`
//! and `Flatten` are cheap elementwise/index ops the coordinator keeps for
//! itself.
//!
//! Tensors are laid out as single samples: dense inputs are `[in_dim]`,
//! images are `[channels, height, width]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
    },
    Relu,
    #[serde(rename = "maxpool2d")]
    MaxPool2d {
        window: (usize, usize),
    },
    Flatten,
}

/// Weight + bias pair for a bilinear layer. The bias never leaves the
/// coordinator: it is input-independent, so it is added after decoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub w: Tensor,
    pub b: Tensor,
}

impl LayerSpec {
    /// True for layers whose heavy kernels are offloaded.
    pub fn is_bilinear(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => Some(vec![out_dim, in_dim]),
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel: (kh, kw),
                ..
            } => Some(vec![out_ch, in_ch, kh, kw]),
            _ => None,
        }
    }

    pub fn bias_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Dense { out_dim, .. } => Some(vec![out_dim]),
            LayerSpec::Conv2d { out_ch, .. } => Some(vec![out_ch]),
            _ => None,
        }
    }

    /// Output shape for an input of shape `in_shape`, or an error if the
    /// layer cannot accept it.
    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_shape != [in_dim] {
                    return Err(Error::ShapeMismatch(format!(
                        "dense({in_dim}->{out_dim}) got input {in_shape:?}"
                    )));
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel: (kh, kw),
                stride,
                pad,
            } => {
                if stride == 0 || kh == 0 || kw == 0 {
                    return Err(Error::InvalidArgument("conv2d with zero stride/kernel".into()));
                }
                let [c, h, w] = *in_shape else {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d wants [ch, h, w], got {in_shape:?}"
                    )));
                };
                if c != in_ch {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d wants {in_ch} channels, got {c}"
                    )));
                }
                if h + 2 * pad < kh || w + 2 * pad < kw {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d kernel ({kh},{kw}) larger than padded input ({h},{w}; pad {pad})"
                    )));
                }
                let oh = (h + 2 * pad - kh) / stride + 1;
                let ow = (w + 2 * pad - kw) / stride + 1;
                Ok(vec![out_ch, oh, ow])
            }
            LayerSpec::Relu => Ok(in_shape.to_vec()),
            LayerSpec::MaxPool2d { window: (ph, pw) } => {
                let [c, h, w] = *in_shape else {
                    return Err(Error::ShapeMismatch(format!(
                        "maxpool2d wants [ch, h, w], got {in_shape:?}"
                    )));
                };
                if ph == 0 || pw == 0 || h < ph || w < pw {
                    return Err(Error::ShapeMismatch(format!(
                        "maxpool2d window ({ph},{pw}) does not fit input ({h},{w})"
                    )));
                }
                Ok(vec![c, h / ph, w / pw])
            }
            LayerSpec::Flatten => {
                let n: usize = in_shape.iter().product();
                Ok(vec![n])
            }
        }
    }

    /// `y = <W, x>`: matrix-vector product for dense, direct cross-correlation
    /// for conv. Linear in `x` for fixed `W` and vice versa — the property
    /// every masking trick in this crate rests on.
    pub fn linear_forward(&self, w: &Tensor, x: &Tensor) -> Result<Tensor> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                self.check_weight(w)?;
                self.out_shape(x.shape())?;
                let xv = x.data();
                let wv = w.data();
                let mut y = vec![0.0; out_dim];
                for o in 0..out_dim {
                    let row = &wv[o * in_dim..(o + 1) * in_dim];
                    y[o] = row.iter().zip(xv).map(|(a, b)| a * b).sum();
                }
                Ok(Tensor::from_parts(vec![out_dim], y))
            }
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel: (kh, kw),
                stride,
                pad,
            } => {
                self.check_weight(w)?;
                let os = self.out_shape(x.shape())?;
                let (oh, ow) = (os[1], os[2]);
                let (h, wd) = (x.shape()[1], x.shape()[2]);
                let xv = x.data();
                let wv = w.data();
                let mut y = vec![0.0; out_ch * oh * ow];
                for oc in 0..out_ch {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut acc = 0.0;
                            for ic in 0..in_ch {
                                for dr in 0..kh {
                                    // Signed arithmetic: padding can push the tap off the input.
                                    let ir = (r * stride + dr) as isize - pad as isize;
                                    if ir < 0 || ir >= h as isize {
                                        continue;
                                    }
                                    for dc in 0..kw {
                                        let icol = (c * stride + dc) as isize - pad as isize;
                                        if icol < 0 || icol >= wd as isize {
                                            continue;
                                        }
                                        acc += wv[((oc * in_ch + ic) * kh + dr) * kw + dc]
                                            * xv[(ic * h + ir as usize) * wd + icol as usize];
                                    }
                                }
                            }
                            y[(oc * oh + r) * ow + c] = acc;
                        }
                    }
                }
                Ok(Tensor::from_parts(os, y))
            }
            _ => Err(Error::InvalidArgument(format!(
                "linear_forward on non-bilinear layer {self:?}"
            ))),
        }
    }

    /// `<delta, x>`: gradient of a scalar loss w.r.t. the weights, given the
    /// output gradient `delta` and the input `x`. Outer product for dense;
    /// for conv each kernel tap accumulates over the output positions it fed.
    pub fn weight_grad(&self, delta: &Tensor, x: &Tensor) -> Result<Tensor> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                self.out_shape(x.shape())?;
                if delta.shape() != [out_dim] {
                    return Err(Error::ShapeMismatch(format!(
                        "dense weight_grad delta {:?}, want [{out_dim}]",
                        delta.shape()
                    )));
                }
                let dv = delta.data();
                let xv = x.data();
                let mut g = vec![0.0; out_dim * in_dim];
                for o in 0..out_dim {
                    for i in 0..in_dim {
                        g[o * in_dim + i] = dv[o] * xv[i];
                    }
                }
                Ok(Tensor::from_parts(vec![out_dim, in_dim], g))
            }
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel: (kh, kw),
                stride,
                pad,
            } => {
                let os = self.out_shape(x.shape())?;
                if delta.shape() != os {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d weight_grad delta {:?}, want {os:?}",
                        delta.shape()
                    )));
                }
                let (oh, ow) = (os[1], os[2]);
                let (h, wd) = (x.shape()[1], x.shape()[2]);
                let dv = delta.data();
                let xv = x.data();
                let mut g = vec![0.0; out_ch * in_ch * kh * kw];
                for oc in 0..out_ch {
                    for ic in 0..in_ch {
                        for dr in 0..kh {
                            for dc in 0..kw {
                                let mut acc = 0.0;
                                for r in 0..oh {
                                    let ir = (r * stride + dr) as isize - pad as isize;
                                    if ir < 0 || ir >= h as isize {
                                        continue;
                                    }
                                    for c in 0..ow {
                                        let icol = (c * stride + dc) as isize - pad as isize;
                                        if icol < 0 || icol >= wd as isize {
                                            continue;
                                        }
                                        acc += dv[(oc * oh + r) * ow + c]
                                            * xv[(ic * h + ir as usize) * wd + icol as usize];
                                    }
                                }
                                g[((oc * in_ch + ic) * kh + dr) * kw + dc] = acc;
                            }
                        }
                    }
                }
                Ok(Tensor::from_parts(vec![out_ch, in_ch, kh, kw], g))
            }
            _ => Err(Error::InvalidArgument(format!(
                "weight_grad on non-bilinear layer {self:?}"
            ))),
        }
    }

    /// `<W^T, delta>`: gradient w.r.t. the layer input. Transposed matvec for
    /// dense; for conv, the "full" correlation that scatters each output
    /// gradient back through the taps that produced it.
    pub fn input_grad(&self, w: &Tensor, delta: &Tensor) -> Result<Tensor> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                self.check_weight(w)?;
                if delta.shape() != [out_dim] {
                    return Err(Error::ShapeMismatch(format!(
                        "dense input_grad delta {:?}, want [{out_dim}]",
                        delta.shape()
                    )));
                }
                let dv = delta.data();
                let wv = w.data();
                let mut g = vec![0.0; in_dim];
                for o in 0..out_dim {
                    let row = &wv[o * in_dim..(o + 1) * in_dim];
                    for i in 0..in_dim {
                        g[i] += row[i] * dv[o];
                    }
                }
                Ok(Tensor::from_parts(vec![in_dim], g))
            }
            LayerSpec::Conv2d { .. } => {
                // Input shape is not recoverable from delta alone when stride
                // or padding are in play, so delta must carry it via the
                // caller keeping x's shape: we reconstruct from the weight and
                // delta shapes assuming the forward geometry.
                self.input_grad_conv(w, delta)
            }
            _ => Err(Error::InvalidArgument(format!(
                "input_grad on non-bilinear layer {self:?}"
            ))),
        }
    }

    /// Conv input gradient for an explicitly supplied input shape. The plain
    /// [`LayerSpec::input_grad`] covers the common stride-1 geometry; the
    /// engine always knows the cached input shape and calls this one.
    pub fn input_grad_with_shape(
        &self,
        w: &Tensor,
        delta: &Tensor,
        in_shape: &[usize],
    ) -> Result<Tensor> {
        match *self {
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel: (kh, kw),
                stride,
                pad,
            } => {
                self.check_weight(w)?;
                let os = self.out_shape(in_shape)?;
                if delta.shape() != os {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d input_grad delta {:?}, want {os:?}",
                        delta.shape()
                    )));
                }
                let (oh, ow) = (os[1], os[2]);
                let (h, wd) = (in_shape[1], in_shape[2]);
                let dv = delta.data();
                let wv = w.data();
                let mut g = vec![0.0; in_ch * h * wd];
                for oc in 0..out_ch {
                    for r in 0..oh {
                        for c in 0..ow {
                            let d = dv[(oc * oh + r) * ow + c];
                            for ic in 0..in_ch {
                                for dr in 0..kh {
                                    let ir = (r * stride + dr) as isize - pad as isize;
                                    if ir < 0 || ir >= h as isize {
                                        continue;
                                    }
                                    for dc in 0..kw {
                                        let icol = (c * stride + dc) as isize - pad as isize;
                                        if icol < 0 || icol >= wd as isize {
                                            continue;
                                        }
                                        g[(ic * h + ir as usize) * wd + icol as usize] +=
                                            d * wv[((oc * in_ch + ic) * kh + dr) * kw + dc];
                                    }
                                }
                            }
                        }
                    }
                }
                Ok(Tensor::from_parts(vec![in_ch, h, wd], g))
            }
            _ => self.input_grad(w, delta),
        }
    }

    fn input_grad_conv(&self, w: &Tensor, delta: &Tensor) -> Result<Tensor> {
        let LayerSpec::Conv2d {
            kernel: (kh, kw),
            stride,
            pad,
            ..
        } = *self
        else {
            unreachable!()
        };
        // Invert the output-size formula; exact only when the forward pass
        // consumed the whole input, which holds for stride 1 and for the
        // stride-aligned shapes the engine produces.
        let (oh, ow) = (delta.shape()[1], delta.shape()[2]);
        let h = (oh - 1) * stride + kh - 2 * pad;
        let wd = (ow - 1) * stride + kw - 2 * pad;
        let in_ch = w.shape()[1];
        self.input_grad_with_shape(w, delta, &[in_ch, h, wd])
    }

    /// Coordinator-side nonlinearities (and `Flatten`, which is free).
    pub fn nonlinear_forward(&self, x: &Tensor) -> Result<Tensor> {
        match *self {
            LayerSpec::Relu => Ok(Tensor::from_parts(
                x.shape().to_vec(),
                x.data().iter().map(|&v| v.max(0.0)).collect(),
            )),
            LayerSpec::MaxPool2d { window: (ph, pw) } => {
                let os = self.out_shape(x.shape())?;
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (oh, ow) = (os[1], os[2]);
                let xv = x.data();
                let mut y = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    for r in 0..oh {
                        for col in 0..ow {
                            let (argmax, _) = pool_argmax(xv, ch, r, col, ph, pw, h, w);
                            y[(ch * oh + r) * ow + col] = xv[argmax];
                        }
                    }
                }
                Ok(Tensor::from_parts(os, y))
            }
            LayerSpec::Flatten => x.reshape(vec![x.numel()]),
            _ => Err(Error::InvalidArgument(format!(
                "nonlinear_forward on bilinear layer {self:?}"
            ))),
        }
    }

    /// Backward pass through a nonlinearity: `x` is the forward input (used
    /// to recover relu masks / pool argmaxes), `delta` the output gradient.
    pub fn nonlinear_backward(&self, x: &Tensor, delta: &Tensor) -> Result<Tensor> {
        match *self {
            LayerSpec::Relu => {
                if x.shape() != delta.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "relu backward: input {:?} vs delta {:?}",
                        x.shape(),
                        delta.shape()
                    )));
                }
                // relu'(0) := 0, consistent with forward's max(0, x).
                Ok(Tensor::from_parts(
                    x.shape().to_vec(),
                    x.data()
                        .iter()
                        .zip(delta.data())
                        .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                        .collect(),
                ))
            }
            LayerSpec::MaxPool2d { window: (ph, pw) } => {
                let os = self.out_shape(x.shape())?;
                if delta.shape() != os {
                    return Err(Error::ShapeMismatch(format!(
                        "maxpool backward: delta {:?}, want {os:?}",
                        delta.shape()
                    )));
                }
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (oh, ow) = (os[1], os[2]);
                let xv = x.data();
                let dv = delta.data();
                let mut g = vec![0.0; c * h * w];
                for ch in 0..c {
                    for r in 0..oh {
                        for col in 0..ow {
                            let (argmax, _) = pool_argmax(xv, ch, r, col, ph, pw, h, w);
                            g[argmax] += dv[(ch * oh + r) * ow + col];
                        }
                    }
                }
                Ok(Tensor::from_parts(x.shape().to_vec(), g))
            }
            LayerSpec::Flatten => delta.reshape(x.shape().to_vec()),
            _ => Err(Error::InvalidArgument(format!(
                "nonlinear_backward on bilinear layer {self:?}"
            ))),
        }
    }

    fn check_weight(&self, w: &Tensor) -> Result<()> {
        let want = self.weight_shape().expect("bilinear layer has weights");
        if w.shape() != want {
            return Err(Error::ShapeMismatch(format!(
                "weight {:?} for {self:?}, want {want:?}",
                w.shape()
            )));
        }
        Ok(())
    }
}

/// Row-major argmax of one pool window. Ties go to the first (lowest) index
/// scanned, which pins the backward routing deterministically.
fn pool_argmax(
    xv: &[f64],
    ch: usize,
    r: usize,
    col: usize,
    ph: usize,
    pw: usize,
    h: usize,
    w: usize,
) -> (usize, f64) {
    let mut best_idx = (ch * h + r * ph) * w + col * pw;
    let mut best = xv[best_idx];
    for dr in 0..ph {
        for dc in 0..pw {
            let idx = (ch * h + r * ph + dr) * w + col * pw + dc;
            if xv[idx] > best {
                best = xv[idx];
                best_idx = idx;
            }
        }
    }
    (best_idx, best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn dense(in_dim: usize, out_dim: usize) -> LayerSpec {
        LayerSpec::Dense { in_dim, out_dim }
    }

    fn conv(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> LayerSpec {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel: (k, k),
            stride,
            pad,
        }
    }

    /// Independent conv oracle: materialize the zero-padded input, then run
    /// the textbook sliding window with no bounds logic. Kept deliberately
    /// separate from the implementation's skip-on-out-of-range indexing.
    fn conv_oracle(layer: &LayerSpec, w: &Tensor, x: &Tensor) -> Tensor {
        let LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel: (kh, kw),
            stride,
            pad,
        } = *layer
        else {
            panic!("not a conv layer")
        };
        let (h, wd) = (x.shape()[1], x.shape()[2]);
        let (hp, wp) = (h + 2 * pad, wd + 2 * pad);
        let mut padded = vec![0.0; in_ch * hp * wp];
        for ic in 0..in_ch {
            for r in 0..h {
                for c in 0..wd {
                    padded[(ic * hp + r + pad) * wp + c + pad] = x.data()[(ic * h + r) * wd + c];
                }
            }
        }
        let oh = (hp - kh) / stride + 1;
        let ow = (wp - kw) / stride + 1;
        let mut y = vec![0.0; out_ch * oh * ow];
        for oc in 0..out_ch {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..in_ch {
                        for dr in 0..kh {
                            for dc in 0..kw {
                                acc += w.data()[((oc * in_ch + ic) * kh + dr) * kw + dc]
                                    * padded[(ic * hp + r * stride + dr) * wp + c * stride + dc];
                            }
                        }
                    }
                    y[(oc * oh + r) * ow + c] = acc;
                }
            }
        }
        Tensor::new(vec![out_ch, oh, ow], y).unwrap()
    }

    #[test]
    fn dense_matches_hand_computation() {
        let l = dense(3, 2);
        let w = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap();
        let x = Tensor::new(vec![3], vec![2.0, -1.0, 1.0]).unwrap();
        let y = l.linear_forward(&w, &x).unwrap();
        assert_eq!(y.data(), &[3.0, -0.5]);
    }

    #[test]
    fn conv_matches_padded_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for &(ic, oc, k, s, p, h) in &[
            (1usize, 1usize, 3usize, 1usize, 0usize, 5usize),
            (2, 3, 3, 1, 1, 6),
            (2, 2, 3, 2, 1, 7),
            (3, 1, 2, 2, 0, 6),
        ] {
            let l = conv(ic, oc, k, s, p);
            let w = Tensor::randn(&[oc, ic, k, k], 0.0, 1.0, &mut rng);
            let x = Tensor::randn(&[ic, h, h], 0.0, 1.0, &mut rng);
            let got = l.linear_forward(&w, &x).unwrap();
            let want = conv_oracle(&l, &w, &x);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "conv mismatch: {a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_is_linear_in_input_and_weight() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let cases: Vec<(LayerSpec, Vec<usize>)> =
            vec![(dense(7, 4), vec![7]), (conv(2, 3, 3, 1, 1), vec![2, 5, 5])];
        for (l, in_shape) in cases {
            let ws = l.weight_shape().unwrap();
            for _ in 0..10 {
                let w = Tensor::randn(&ws, 0.0, 1.0, &mut rng);
                let x1 = Tensor::randn(&in_shape, 0.0, 1.0, &mut rng);
                let x2 = Tensor::randn(&in_shape, 0.0, 1.0, &mut rng);
                let (a, b) = (1.7, -0.3);
                let mixed = Tensor::lin_comb(&[(a, &x1), (b, &x2)]).unwrap();
                let lhs = l.linear_forward(&w, &mixed).unwrap();
                let rhs = Tensor::lin_comb(&[
                    (a, &l.linear_forward(&w, &x1).unwrap()),
                    (b, &l.linear_forward(&w, &x2).unwrap()),
                ])
                .unwrap();
                for (p, q) in lhs.data().iter().zip(rhs.data()) {
                    assert!((p - q).abs() < 1e-10);
                }
                // Same check in the weight argument.
                let w2 = Tensor::randn(&ws, 0.0, 1.0, &mut rng);
                let wm = Tensor::lin_comb(&[(a, &w), (b, &w2)]).unwrap();
                let lhs = l.linear_forward(&wm, &x1).unwrap();
                let rhs = Tensor::lin_comb(&[
                    (a, &l.linear_forward(&w, &x1).unwrap()),
                    (b, &l.linear_forward(&w2, &x1).unwrap()),
                ])
                .unwrap();
                for (p, q) in lhs.data().iter().zip(rhs.data()) {
                    assert!((p - q).abs() < 1e-10);
                }
            }
        }
    }

    /// Scalar probe loss L = <G, forward(W, x)> so that dL/dW and dL/dx have
    /// closed forms via weight_grad / input_grad with delta = G.
    fn probe_loss(l: &LayerSpec, w: &Tensor, x: &Tensor, g: &Tensor) -> f64 {
        l.linear_forward(w, x).unwrap().dot(g).unwrap()
    }

    #[test]
    fn weight_grad_matches_central_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(29);
        let eps = 1e-6;
        let cases: Vec<(LayerSpec, Vec<usize>)> =
            vec![(dense(6, 5), vec![6]), (conv(2, 2, 3, 1, 1), vec![2, 5, 5])];
        for (l, in_shape) in cases {
            let ws = l.weight_shape().unwrap();
            for _ in 0..10 {
                let w = Tensor::randn(&ws, 0.0, 1.0, &mut rng);
                let x = Tensor::randn(&in_shape, 0.0, 1.0, &mut rng);
                let g = Tensor::randn(&l.out_shape(&in_shape).unwrap(), 0.0, 1.0, &mut rng);
                let analytic = l.weight_grad(&g, &x).unwrap();
                for idx in 0..w.numel() {
                    let mut wp = w.clone();
                    wp.data_mut()[idx] += eps;
                    let mut wm = w.clone();
                    wm.data_mut()[idx] -= eps;
                    let num = (probe_loss(&l, &wp, &x, &g) - probe_loss(&l, &wm, &x, &g))
                        / (2.0 * eps);
                    let a = analytic.data()[idx];
                    assert!(
                        (num - a).abs() <= 1e-6 * (1.0 + a.abs()),
                        "weight grad mismatch at {idx}: fd {num} vs {a}"
                    );
                }
            }
        }
    }

    #[test]
    fn input_grad_matches_central_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let eps = 1e-6;
        let cases: Vec<(LayerSpec, Vec<usize>)> =
            vec![(dense(6, 5), vec![6]), (conv(2, 2, 3, 2, 1), vec![2, 5, 5])];
        for (l, in_shape) in cases {
            let ws = l.weight_shape().unwrap();
            for _ in 0..10 {
                let w = Tensor::randn(&ws, 0.0, 1.0, &mut rng);
                let x = Tensor::randn(&in_shape, 0.0, 1.0, &mut rng);
                let g = Tensor::randn(&l.out_shape(&in_shape).unwrap(), 0.0, 1.0, &mut rng);
                let analytic = l.input_grad_with_shape(&w, &g, &in_shape).unwrap();
                for idx in 0..x.numel() {
                    let mut xp = x.clone();
                    xp.data_mut()[idx] += eps;
                    let mut xm = x.clone();
                    xm.data_mut()[idx] -= eps;
                    let num = (probe_loss(&l, &w, &xp, &g) - probe_loss(&l, &w, &xm, &g))
                        / (2.0 * eps);
                    let a = analytic.data()[idx];
                    assert!(
                        (num - a).abs() <= 1e-6 * (1.0 + a.abs()),
                        "input grad mismatch at {idx}: fd {num} vs {a}"
                    );
                }
            }
        }
    }

    #[test]
    fn maxpool_ties_route_to_first_row_major_index() {
        let l = LayerSpec::MaxPool2d { window: (2, 2) };
        // All four candidates equal: gradient must land on index (0,0).
        let x = Tensor::new(vec![1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap();
        let y = l.nonlinear_forward(&x).unwrap();
        assert_eq!(y.data(), &[5.0]);
        let d = Tensor::new(vec![1, 1, 1], vec![3.0]).unwrap();
        let g = l.nonlinear_backward(&x, &d).unwrap();
        assert_eq!(g.data(), &[3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn relu_zero_input_gets_zero_gradient() {
        let l = LayerSpec::Relu;
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        let d = Tensor::new(vec![3], vec![10.0, 10.0, 10.0]).unwrap();
        let g = l.nonlinear_backward(&x, &d).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 10.0]);
    }

    #[test]
    fn out_shape_agrees_with_actual_outputs() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = Tensor::randn(&[2, 6, 6], 0.0, 1.0, &mut rng);
        for l in [
            conv(2, 4, 3, 1, 0),
            conv(2, 4, 3, 2, 1),
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { window: (2, 2) },
            LayerSpec::Flatten,
        ] {
            let want = l.out_shape(x.shape()).unwrap();
            let got = if l.is_bilinear() {
                let w = Tensor::randn(&l.weight_shape().unwrap(), 0.0, 1.0, &mut rng);
                l.linear_forward(&w, &x).unwrap()
            } else {
                l.nonlinear_forward(&x).unwrap()
            };
            assert_eq!(got.shape(), want);
        }
    }

    #[test]
    fn shape_errors_are_reported_not_panicked() {
        let l = dense(4, 2);
        let w = Tensor::zeros(&[2, 4]);
        let x = Tensor::zeros(&[5]);
        assert!(matches!(
            l.linear_forward(&w, &x),
            Err(Error::ShapeMismatch(_))
        ));
        let c = conv(1, 1, 7, 1, 0);
        assert!(c.out_shape(&[1, 5, 5]).is_err());
        assert!(LayerSpec::Relu.linear_forward(&w, &x).is_err());
    }
}
