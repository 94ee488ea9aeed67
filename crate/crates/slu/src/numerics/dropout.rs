//! Inverted dropout keyed by an explicit seeded RNG, plus the train/eval
//! mode handle threaded through every forward pass.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::graph::{Mat, Var};

/// Optional instrumentation collected during a forward pass.
#[derive(Default)]
pub struct Trace {
    /// Recurrent dropout masks in the order they are applied (one push per
    /// timestep, so tests can assert the mask is constant within a sequence).
    pub recurrent_masks: Vec<Mat>,
    /// Attention probability matrices (rows are query positions).
    pub attention: Vec<Mat>,
}

/// Forward-pass mode: training with a seeded RNG, or deterministic eval.
#[derive(Clone, Default)]
pub struct Mode {
    rng: Option<Rc<RefCell<ChaCha8Rng>>>,
    pub trace: Option<Rc<RefCell<Trace>>>,
}

impl Mode {
    pub fn eval() -> Self {
        Mode::default()
    }

    pub fn train(rng: ChaCha8Rng) -> Self {
        Mode {
            rng: Some(Rc::new(RefCell::new(rng))),
            trace: None,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Rc::new(RefCell::new(Trace::default())));
        self
    }

    pub fn is_train(&self) -> bool {
        self.rng.is_some()
    }

    /// Sample an inverted-dropout mask (entries 0 or 1/keep), or `None`
    /// in eval mode or when keep >= 1.
    pub fn dropout_mask(&self, rows: usize, cols: usize, keep: f64) -> Option<Mat> {
        let rng = self.rng.as_ref()?;
        if keep >= 1.0 {
            return None;
        }
        let mut rng = rng.borrow_mut();
        let scale = 1.0 / keep;
        Some(Mat::from_shape_fn((rows, cols), |_| {
            if rng.gen::<f64>() < keep {
                scale
            } else {
                0.0
            }
        }))
    }

    pub fn record_recurrent_mask(&self, mask: &Mat) {
        if let Some(trace) = &self.trace {
            trace.borrow_mut().recurrent_masks.push(mask.clone());
        }
    }

    pub fn record_attention(&self, probs: &Mat) {
        if let Some(trace) = &self.trace {
            trace.borrow_mut().attention.push(probs.clone());
        }
    }
}

/// Apply inverted dropout to `x` (identity in eval mode).
pub fn dropout<'g>(x: Var<'g>, keep: f64, mode: &Mode) -> Var<'g> {
    match mode.dropout_mask(x.rows(), x.cols(), keep) {
        Some(mask) => x.mul_const(mask),
        None => x,
    }
}
