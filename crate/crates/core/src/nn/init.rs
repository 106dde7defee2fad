use ndarray::{Array, Dimension, ShapeBuilder};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Elem;

/// Seeded Gaussian init. Sampling happens in `f64` regardless of `F`, so
/// an `f32` net and an `f64` net built from the same seed agree to
/// rounding.
pub fn sample_normal<F: Elem, Sh, D>(rng: &mut (impl Rng + ?Sized), shape: Sh, std: f64) -> Array<F, D>
where
    D: Dimension,
    Sh: ShapeBuilder<Dim = D>,
{
    let mut arr = Array::<F, D>::zeros(shape);
    for v in arr.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = F::from_f(z * std);
    }
    arr
}
