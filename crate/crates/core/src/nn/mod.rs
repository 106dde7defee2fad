//! Minimal explicit-backprop neural net layers on `ndarray`.
//!
//! No tape, no graph: each layer exposes `forward` and a matching
//! `backward` that consumes whatever the forward cached. Everything is
//! generic over [`Elem`] so training runs in `f32` while gradient checks
//! and precision-sensitive tests run in `f64`. All kernels are
//! deterministic: parallel loops write disjoint slices and reductions
//! are summed in fixed order.

mod act;
mod adam;
mod conv;
mod init;
mod linear;
mod norm;
mod params;

pub use act::{leaky_relu, leaky_relu_back, relu, relu_back, sigmoid, sigmoid_back, tanh_back, tanh_fwd};
pub use adam::Adam;
pub use conv::{conv_out_len, Conv2d, ConvTranspose2d};
pub use init::sample_normal;
pub use linear::Linear;
pub use norm::{InstanceNorm2d, InstanceNormCache};
pub use params::{Grads, ParamVisitor, ParamVisitorMut, Visitable};

/// Scalar element type for the net stack: `f32` or `f64`.
pub trait Elem: ndarray::NdFloat + std::iter::Sum + 'static {
    const DTYPE: &'static str;
    const BYTES: usize;
    fn from_f(v: f64) -> Self;
    fn into_f(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Elem for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;
    #[inline]
    fn from_f(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn into_f(self) -> f64 {
        f64::from(self)
    }
    #[inline]
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Elem for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;
    #[inline]
    fn from_f(v: f64) -> Self {
        v
    }
    #[inline]
    fn into_f(self) -> f64 {
        self
    }
    #[inline]
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}
