use ndarray::{Array, Dimension};

use super::Elem;

pub fn leaky_relu<F: Elem, D: Dimension>(x: &Array<F, D>, slope: F) -> Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { v * slope })
}

/// Gradient w.r.t. the input, given the forward input.
pub fn leaky_relu_back<F: Elem, D: Dimension>(
    x: &Array<F, D>,
    dout: &Array<F, D>,
    slope: F,
) -> Array<F, D> {
    let mut dx = dout.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= F::zero() {
            *d = *d * slope;
        }
    });
    dx
}

pub fn relu<F: Elem, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu_back<F: Elem, D: Dimension>(x: &Array<F, D>, dout: &Array<F, D>) -> Array<F, D> {
    let mut dx = dout.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

pub fn tanh_fwd<F: Elem, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| v.tanh())
}

/// Gradient through tanh, given the forward *output*.
pub fn tanh_back<F: Elem, D: Dimension>(y: &Array<F, D>, dout: &Array<F, D>) -> Array<F, D> {
    let mut dx = dout.clone();
    dx.zip_mut_with(y, |d, &v| *d = *d * (F::one() - v * v));
    dx
}

pub fn sigmoid<F: Elem, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| F::one() / (F::one() + (-v).exp()))
}

/// Gradient through sigmoid, given the forward *output*.
pub fn sigmoid_back<F: Elem, D: Dimension>(y: &Array<F, D>, dout: &Array<F, D>) -> Array<F, D> {
    let mut dx = dout.clone();
    dx.zip_mut_with(y, |d, &v| *d = *d * v * (F::one() - v));
    dx
}
