//! Single LSTM cell: forward step, cached forward, and backward step.

use super::linalg::{matvec, matvec_acc, matvec_t_acc, outer_acc};
use super::{sigmoid, Gradients, NetParams, GATE_CELL, GATE_FORGET, GATE_INPUT, GATE_OUTPUT};
use crate::error::{Error, Result};

/// Hidden and cell state carried between timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// Intermediates recorded by [`lstm_step_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub(crate) x: Vec<f64>,
    pub(crate) h_prev: Vec<f64>,
    pub(crate) c_prev: Vec<f64>,
    pub(crate) gi: Vec<f64>,
    pub(crate) gf: Vec<f64>,
    pub(crate) gc: Vec<f64>,
    pub(crate) go: Vec<f64>,
    pub(crate) c_new: Vec<f64>,
    pub(crate) tanh_c: Vec<f64>,
}

fn gates(params: &NetParams, x: &[f64], state: &LstmState) -> Vec<f64> {
    let shape = params.shape;
    let seg = shape.segments();
    let h4 = 4 * shape.hidden;
    let mut z = params.seg(seg.b).to_vec();
    let mut wx = vec![0.0; h4];
    matvec(params.seg(seg.w_x), h4, shape.input_dim, x, &mut wx);
    for (a, b) in z.iter_mut().zip(&wx) {
        *a += *b;
    }
    matvec_acc(params.seg(seg.w_h), h4, shape.hidden, &state.h, &mut z);
    z
}

/// One LSTM step. Returns the next state; `state.h` is the step output.
pub fn lstm_step(params: &NetParams, x: &[f64], state: &LstmState) -> Result<LstmState> {
    check_input(params, x)?;
    let h = params.shape.hidden;
    let z = gates(params, x, state);
    let mut next = LstmState::zeros(h);
    for j in 0..h {
        let i = sigmoid(z[GATE_INPUT * h + j]);
        let f = sigmoid(z[GATE_FORGET * h + j]);
        let g = z[GATE_CELL * h + j].tanh();
        let o = sigmoid(z[GATE_OUTPUT * h + j]);
        let c = f * state.c[j] + i * g;
        next.c[j] = c;
        next.h[j] = o * c.tanh();
    }
    Ok(next)
}

/// One LSTM step recording everything the backward pass needs.
pub fn lstm_step_cached(params: &NetParams, x: &[f64], state: &LstmState) -> Result<(LstmState, LstmCache)> {
    check_input(params, x)?;
    let h = params.shape.hidden;
    let z = gates(params, x, state);
    let mut cache = LstmCache {
        x: x.to_vec(),
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        gi: vec![0.0; h],
        gf: vec![0.0; h],
        gc: vec![0.0; h],
        go: vec![0.0; h],
        c_new: vec![0.0; h],
        tanh_c: vec![0.0; h],
    };
    let mut next = LstmState::zeros(h);
    for j in 0..h {
        let i = sigmoid(z[GATE_INPUT * h + j]);
        let f = sigmoid(z[GATE_FORGET * h + j]);
        let g = z[GATE_CELL * h + j].tanh();
        let o = sigmoid(z[GATE_OUTPUT * h + j]);
        let c = f * state.c[j] + i * g;
        let tc = c.tanh();
        cache.gi[j] = i;
        cache.gf[j] = f;
        cache.gc[j] = g;
        cache.go[j] = o;
        cache.c_new[j] = c;
        cache.tanh_c[j] = tc;
        next.c[j] = c;
        next.h[j] = o * tc;
    }
    Ok((next, cache))
}

/// Reverse-mode step: given upstream gradients w.r.t. the step's output
/// state (`d_h`, `d_c`), accumulates parameter gradients into `grads`
/// and returns `(d_x, d_h_prev, d_c_prev)`.
pub fn lstm_step_backward(
    params: &NetParams,
    cache: &LstmCache,
    d_h: &[f64],
    d_c: &[f64],
    grads: &mut Gradients,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let shape = params.shape;
    let h = shape.hidden;
    let seg = shape.segments();
    let h4 = 4 * h;

    // Gradients on pre-activation gates, in stacked layout.
    let mut dz = vec![0.0; h4];
    let mut d_c_prev = vec![0.0; h];
    for j in 0..h {
        let o = cache.go[j];
        let tc = cache.tanh_c[j];
        let d_o = d_h[j] * tc;
        let d_c_total = d_c[j] + d_h[j] * o * (1.0 - tc * tc);
        let i = cache.gi[j];
        let f = cache.gf[j];
        let g = cache.gc[j];
        let d_i = d_c_total * g;
        let d_f = d_c_total * cache.c_prev[j];
        let d_g = d_c_total * i;
        d_c_prev[j] = d_c_total * f;
        dz[GATE_INPUT * h + j] = d_i * i * (1.0 - i);
        dz[GATE_FORGET * h + j] = d_f * f * (1.0 - f);
        dz[GATE_CELL * h + j] = d_g * (1.0 - g * g);
        dz[GATE_OUTPUT * h + j] = d_o * o * (1.0 - o);
    }

    outer_acc(grads.seg_mut(seg.w_x), h4, shape.input_dim, &dz, &cache.x);
    outer_acc(grads.seg_mut(seg.w_h), h4, h, &dz, &cache.h_prev);
    for (b, d) in grads.seg_mut(seg.b).iter_mut().zip(&dz) {
        *b += *d;
    }

    let mut d_x = vec![0.0; shape.input_dim];
    matvec_t_acc(params.seg(seg.w_x), h4, shape.input_dim, &dz, &mut d_x);
    let mut d_h_prev = vec![0.0; h];
    matvec_t_acc(params.seg(seg.w_h), h4, h, &dz, &mut d_h_prev);

    (d_x, d_h_prev, d_c_prev)
}

fn check_input(params: &NetParams, x: &[f64]) -> Result<()> {
    if x.len() != params.shape.input_dim {
        return Err(Error::Shape(format!(
            "lstm input has length {}, expected {}",
            x.len(),
            params.shape.input_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lstm input".into()));
    }
    Ok(())
}
