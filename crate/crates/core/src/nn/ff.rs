//! Two-hidden-layer feedforward network with tanh nonlinearities and a
//! scalar head. The head pre-activation is returned raw; each model
//! applies its own head activation.

use super::linalg::{matvec, matvec_t_acc, outer_acc};
use super::{Gradients, NetParams};
use crate::error::{Error, Result};

/// Intermediates for the backward pass.
#[derive(Debug, Clone)]
pub struct FfCache {
    pub(crate) input: Vec<f64>,
    pub(crate) a1: Vec<f64>,
    pub(crate) a2: Vec<f64>,
}

fn run(params: &NetParams, h: &[f64], extra: &[f64]) -> Result<(f64, FfCache)> {
    let shape = params.shape;
    if h.len() != shape.hidden || extra.len() != shape.ff_extra {
        return Err(Error::Shape(format!(
            "ff input ({}, {}) does not match shape ({}, {})",
            h.len(),
            extra.len(),
            shape.hidden,
            shape.ff_extra
        )));
    }
    let seg = shape.segments();
    let (f1, f2) = shape.ff_widths;
    let din = shape.ff_input_dim();

    let mut input = Vec::with_capacity(din);
    input.extend_from_slice(h);
    input.extend_from_slice(extra);

    let mut a1 = vec![0.0; f1];
    matvec(params.seg(seg.ff1_w), f1, din, &input, &mut a1);
    for (v, b) in a1.iter_mut().zip(params.seg(seg.ff1_b)) {
        *v = (*v + b).tanh();
    }

    let mut a2 = vec![0.0; f2];
    matvec(params.seg(seg.ff2_w), f2, f1, &a1, &mut a2);
    for (v, b) in a2.iter_mut().zip(params.seg(seg.ff2_b)) {
        *v = (*v + b).tanh();
    }

    let mut z = params.seg(seg.head_b)[0];
    for (w, a) in params.seg(seg.head_w).iter().zip(&a2) {
        z += w * a;
    }

    Ok((z, FfCache { input, a1, a2 }))
}

/// Scalar head pre-activation for hidden state `h` and extra inputs.
pub fn ff_forward(params: &NetParams, h: &[f64], extra: &[f64]) -> Result<f64> {
    run(params, h, extra).map(|(z, _)| z)
}

/// As [`ff_forward`] but also returns the cache for the backward pass.
pub fn ff_forward_cached(params: &NetParams, h: &[f64], extra: &[f64]) -> Result<(f64, FfCache)> {
    run(params, h, extra)
}

/// Reverse-mode pass from the head pre-activation gradient `d_z`.
/// Accumulates parameter gradients and returns the gradient w.r.t. the
/// concatenated input `[h, extra]`.
pub fn ff_backward(params: &NetParams, cache: &FfCache, d_z: f64, grads: &mut Gradients) -> Vec<f64> {
    let shape = params.shape;
    let seg = shape.segments();
    let (f1, f2) = shape.ff_widths;
    let din = shape.ff_input_dim();

    for (g, a) in grads.seg_mut(seg.head_w).iter_mut().zip(&cache.a2) {
        *g += d_z * a;
    }
    grads.seg_mut(seg.head_b)[0] += d_z;

    let mut dz2 = vec![0.0; f2];
    for (i, d) in dz2.iter_mut().enumerate() {
        let da2 = d_z * params.seg(seg.head_w)[i];
        *d = da2 * (1.0 - cache.a2[i] * cache.a2[i]);
    }
    outer_acc(grads.seg_mut(seg.ff2_w), f2, f1, &dz2, &cache.a1);
    for (b, d) in grads.seg_mut(seg.ff2_b).iter_mut().zip(&dz2) {
        *b += *d;
    }

    let mut da1 = vec![0.0; f1];
    matvec_t_acc(params.seg(seg.ff2_w), f2, f1, &dz2, &mut da1);
    let mut dz1 = vec![0.0; f1];
    for (i, d) in dz1.iter_mut().enumerate() {
        *d = da1[i] * (1.0 - cache.a1[i] * cache.a1[i]);
    }
    outer_acc(grads.seg_mut(seg.ff1_w), f1, din, &dz1, &cache.input);
    for (b, d) in grads.seg_mut(seg.ff1_b).iter_mut().zip(&dz1) {
        *b += *d;
    }

    let mut d_input = vec![0.0; din];
    matvec_t_acc(params.seg(seg.ff1_w), f1, din, &dz1, &mut d_input);
    d_input
}
