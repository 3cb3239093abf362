//! Dense numerical core: a single-layer LSTM feeding a two-hidden-layer
//! feedforward network with a scalar head, reverse-mode gradients, Adam,
//! and a finite-difference gradient checker.
//!
//! All parameters of one network live in a single flat `Vec<f64>`; the
//! [`NetShape`] describes how the flat vector is carved into tensors.
//! This keeps the optimizer, serialization, and gradient checking trivial
//! and allocation-free on the hot path.

mod adam;
mod ff;
mod gradcheck;
mod linalg;
mod lstm;

pub use adam::AdamState;
pub use ff::{ff_backward, ff_forward, ff_forward_cached, FfCache};
pub use gradcheck::{finite_difference_grad, max_rel_error};
pub use lstm::{lstm_step, lstm_step_backward, lstm_step_cached, LstmCache, LstmState};

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// Gate order inside the stacked LSTM weight matrices.
pub(crate) const GATE_INPUT: usize = 0;
pub(crate) const GATE_FORGET: usize = 1;
pub(crate) const GATE_CELL: usize = 2;
pub(crate) const GATE_OUTPUT: usize = 3;

/// Static description of a network: LSTM input width and hidden size,
/// extra scalars appended to the feedforward input, and the two
/// feedforward hidden widths. The head is always a single neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input_dim: usize,
    pub hidden: usize,
    pub ff_extra: usize,
    pub ff_widths: (usize, usize),
}

/// Byte offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Segments {
    pub w_x: (usize, usize),
    pub w_h: (usize, usize),
    pub b: (usize, usize),
    pub ff1_w: (usize, usize),
    pub ff1_b: (usize, usize),
    pub ff2_w: (usize, usize),
    pub ff2_b: (usize, usize),
    pub head_w: (usize, usize),
    pub head_b: (usize, usize),
}

impl NetShape {
    pub fn new(input_dim: usize, hidden: usize, ff_extra: usize, ff_widths: (usize, usize)) -> Self {
        assert!(input_dim > 0 && hidden > 0 && ff_widths.0 > 0 && ff_widths.1 > 0);
        Self { input_dim, hidden, ff_extra, ff_widths }
    }

    pub fn ff_input_dim(&self) -> usize {
        self.hidden + self.ff_extra
    }

    pub(crate) fn segments(&self) -> Segments {
        let h4 = 4 * self.hidden;
        let (f1, f2) = self.ff_widths;
        let mut at = 0usize;
        let mut seg = |len: usize| {
            let s = (at, at + len);
            at += len;
            s
        };
        Segments {
            w_x: seg(h4 * self.input_dim),
            w_h: seg(h4 * self.hidden),
            b: seg(h4),
            ff1_w: seg(f1 * self.ff_input_dim()),
            ff1_b: seg(f1),
            ff2_w: seg(f2 * f1),
            ff2_b: seg(f2),
            head_w: seg(f2),
            head_b: seg(1),
        }
    }

    pub fn param_len(&self) -> usize {
        self.segments().head_b.1
    }

    /// Human-readable name of the tensor owning flat index `i`.
    pub fn describe_index(&self, i: usize) -> String {
        let s = self.segments();
        let named = [
            ("lstm.w_x", s.w_x),
            ("lstm.w_h", s.w_h),
            ("lstm.b", s.b),
            ("ff1.w", s.ff1_w),
            ("ff1.b", s.ff1_b),
            ("ff2.w", s.ff2_w),
            ("ff2.b", s.ff2_b),
            ("head.w", s.head_w),
            ("head.b", s.head_b),
        ];
        for (name, (lo, hi)) in named {
            if i >= lo && i < hi {
                return format!("{}[{}]", name, i - lo);
            }
        }
        format!("out-of-range[{i}]")
    }
}

/// Flat parameter vector plus its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub shape: NetShape,
    pub values: Vec<f64>,
}

impl NetParams {
    pub fn zeros(shape: NetShape) -> Self {
        Self { values: vec![0.0; shape.param_len()], shape }
    }

    pub(crate) fn seg(&self, range: (usize, usize)) -> &[f64] {
        &self.values[range.0..range.1]
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "parameter {}",
                    self.shape.describe_index(i)
                )));
            }
        }
        Ok(())
    }
}

/// Gradient buffer matching a [`NetParams`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub shape: NetShape,
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(shape: NetShape) -> Self {
        Self { values: vec![0.0; shape.param_len()], shape }
    }

    pub fn reset(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.values.iter_mut().for_each(|v| *v *= k);
    }

    pub(crate) fn seg_mut(&mut self, range: (usize, usize)) -> &mut [f64] {
        &mut self.values[range.0..range.1]
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of {}",
                    self.shape.describe_index(i)
                )));
            }
        }
        Ok(())
    }
}

/// Seeded fan-in scaled initialization: every weight of a tensor with
/// `fan_in` input columns is drawn uniformly from `(-1/sqrt(fan_in),
/// 1/sqrt(fan_in))`; biases start at zero except the LSTM forget gate,
/// which starts at +1.
pub fn init_params(shape: NetShape, seed: u64) -> NetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetParams::zeros(shape);
    let seg = shape.segments();

    let mut fill = |values: &mut Vec<f64>, range: (usize, usize), fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut values[range.0..range.1] {
            *v = rng.random_range(-bound..bound);
        }
    };

    fill(&mut params.values, seg.w_x, shape.input_dim);
    fill(&mut params.values, seg.w_h, shape.hidden);
    fill(&mut params.values, seg.ff1_w, shape.ff_input_dim());
    fill(&mut params.values, seg.ff2_w, shape.ff_widths.0);
    fill(&mut params.values, seg.head_w, shape.ff_widths.1);

    let h = shape.hidden;
    for j in 0..h {
        params.values[seg.b.0 + GATE_FORGET * h + j] = 1.0;
    }
    params
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> NetShape {
        NetShape::new(3, 5, 1, (7, 4))
    }

    #[test]
    fn segments_tile_the_flat_vector() {
        let s = shape();
        let seg = s.segments();
        assert_eq!(seg.w_x.0, 0);
        assert_eq!(seg.w_x.1, seg.w_h.0);
        assert_eq!(seg.head_b.1, s.param_len());
        assert_eq!(s.param_len(), 4 * 5 * 3 + 4 * 5 * 5 + 4 * 5 + 7 * 6 + 7 + 4 * 7 + 4 + 4 + 1);
    }

    #[test]
    fn init_same_seed_identical() {
        let a = init_params(shape(), 7);
        let b = init_params(shape(), 7);
        assert_eq!(a, b);
    }

    #[test]
    fn init_different_seed_differs() {
        let a = init_params(shape(), 7);
        let b = init_params(shape(), 8);
        assert_ne!(a, b);
    }

    #[test]
    fn init_weights_within_fan_in_bound() {
        let s = shape();
        let p = init_params(s, 42);
        let seg = s.segments();
        let check = |range: (usize, usize), fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &p.values[range.0..range.1] {
                assert!(v.abs() <= bound, "{v} outside ±{bound}");
            }
        };
        check(seg.w_x, 3);
        check(seg.w_h, 5);
        check(seg.ff1_w, 6);
        check(seg.ff2_w, 7);
        check(seg.head_w, 4);
    }

    #[test]
    fn forget_gate_bias_is_one() {
        let s = shape();
        let p = init_params(s, 1);
        let seg = s.segments();
        for j in 0..s.hidden {
            assert_eq!(p.values[seg.b.0 + GATE_FORGET * s.hidden + j], 1.0);
        }
        for j in 0..s.hidden {
            assert_eq!(p.values[seg.b.0 + GATE_INPUT * s.hidden + j], 0.0);
        }
    }

    #[test]
    fn describe_index_names_tensors() {
        let s = shape();
        assert_eq!(s.describe_index(0), "lstm.w_x[0]");
        assert_eq!(s.describe_index(s.param_len() - 1), "head.b[0]");
    }
}
