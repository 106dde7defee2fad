use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{init::sample_normal, Elem};

/// Fully connected layer, weight layout `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear<F: Elem> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Elem> Linear<F> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut (impl Rng + ?Sized)) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        Self {
            w: sample_normal(rng, (out_dim, in_dim), std),
            b: Array1::zeros(out_dim),
        }
    }

    /// `x: [n, in] -> [n, out]`
    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        y
    }

    pub fn backward(
        &self,
        x: &Array2<F>,
        dout: &Array2<F>,
    ) -> (Array2<F>, Array2<F>, Array1<F>) {
        let dx = dout.dot(&self.w);
        let dw = dout.t().dot(x);
        let db = dout.sum_axis(Axis(0));
        (dx, dw, db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::numeric_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn linear_gradcheck() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let lin = Linear::<f64>::new(4, 3, &mut rng);
        let x: Array2<f64> = sample_normal(&mut rng, (2, 4), 1.0);
        let dout: Array2<f64> = sample_normal(&mut rng, (2, 3), 1.0);
        let (dx, dw, db) = lin.backward(&x, &dout);

        let loss = |x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>| {
            let l = Linear {
                w: w.clone(),
                b: b.clone(),
            };
            (l.forward(x) * &dout).sum()
        };
        let ndx = numeric_grad(&x, |x| loss(x, &lin.w, &lin.b));
        let ndw = numeric_grad(&lin.w, |w| loss(&x, w, &lin.b));
        let ndb = numeric_grad(&lin.b, |b| loss(&x, &lin.w, b));
        assert!((&dx - &ndx).iter().all(|v| v.abs() < 1e-6));
        assert!((&dw - &ndw).iter().all(|v| v.abs() < 1e-6));
        assert!((&db - &ndb).iter().all(|v| v.abs() < 1e-6));
    }
}
