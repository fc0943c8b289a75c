use crate::error::{dim_err, Result};
use crate::numerics::Matrix;

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub value: Matrix,
    pub grad: Matrix,
}

impl Parameter {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub step: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamState {
    pub const DEFAULT_LR: f32 = 3e-4;

    pub fn new(rows: usize, cols: usize) -> Self {
        Self::with_lr(rows, cols, Self::DEFAULT_LR)
    }

    pub fn with_lr(rows: usize, cols: usize, lr: f32) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `param.value`; `param.grad` is left as is.
pub fn adam_step(param: &mut Parameter, state: &mut AdamState) -> Result<()> {
    adam_update(&mut param.value, &param.grad, state)
}

pub(crate) fn adam_update(value: &mut Matrix, grad: &Matrix, state: &mut AdamState) -> Result<()> {
    if value.shape() != grad.shape() || state.m.shape() != value.shape() || state.v.shape() != value.shape() {
        return Err(dim_err(
            "adam_step",
            format!(
                "value {:?}, grad {:?}, moments {:?}/{:?}",
                value.shape(),
                grad.shape(),
                state.m.shape(),
                state.v.shape()
            ),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - (b1 as f64).powi(t);
    let bc2 = 1.0 - (b2 as f64).powi(t);
    let step_size = (state.lr as f64 / bc1) as f32;
    let bc2_sqrt = bc2.sqrt() as f32;
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((x, &g), m), v) in value
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *x -= step_size * *m / (v.sqrt() / bc2_sqrt + state.eps);
    }
    Ok(())
}
