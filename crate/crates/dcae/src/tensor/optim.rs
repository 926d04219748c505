//! RMSprop parameter updates.

use super::{Element, TensorError};

/// Running average of squared gradients for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsPropState<T: Element> {
    pub acc: Vec<T>,
}

impl<T: Element> RmsPropState<T> {
    pub fn new(len: usize) -> Self {
        RmsPropState {
            acc: vec![T::zero(); len],
        }
    }
}

/// One update: acc <- rho*acc + (1-rho)*g^2, then p <- p - lr*g/(sqrt(acc)+eps).
pub fn rmsprop_step<T: Element>(
    param: &mut [T],
    grad: &[T],
    state: &mut RmsPropState<T>,
    lr: T,
    rho: T,
    eps: T,
) -> Result<(), TensorError> {
    if param.len() != grad.len() || param.len() != state.acc.len() {
        return Err(TensorError::Optimizer(format!(
            "length mismatch: param {}, grad {}, accumulator {}",
            param.len(),
            grad.len(),
            state.acc.len()
        )));
    }
    let one = T::one();
    for ((p, &g), a) in param.iter_mut().zip(grad).zip(state.acc.iter_mut()) {
        *a = rho * *a + (one - rho) * g * g;
        *p -= lr * g / (a.sqrt() + eps);
    }
    Ok(())
}
