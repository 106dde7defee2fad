//! Training objective: least-squares GAN terms for the two
//! discriminators, global and masked-local L1, two-channel segmentation
//! BCE, identity-embedding MSE, and the weighted generator total.
//!
//! Every term reduces by *mean* over batch, channels, and pixels. Each
//! loss comes with an analytic gradient; all of them are checked against
//! central finite differences in the acceptance suite.

use ndarray::{Array, Array2, Array4, Dimension};
use serde::{Deserialize, Serialize};

use crate::nn::Elem;
use crate::{CoreError, Result};

/// BCE probability clamp.
pub const BCE_EPS: f64 = 1e-7;

/// Weights for the six generator loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub lambda6: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 100.0,
            lambda4: 200.0,
            lambda5: 3.0,
            lambda6: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda4,
            self.lambda5,
            self.lambda6,
        ];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(CoreError::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Unweighted generator loss terms for one step.
#[derive(Debug, Clone, Copy, Default)]
pub struct GeneratorTerms {
    pub g_gan_global: f64,
    pub g_gan_local: f64,
    pub l1_global: f64,
    pub l1_local: f64,
    pub seg: f64,
    pub id: f64,
}

/// Per-step scalar report, serialized as one JSON line in the training log.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub g_gan_global: f64,
    pub g_gan_local: f64,
    pub l1_global: f64,
    pub l1_local: f64,
    pub seg: f64,
    pub id: f64,
    pub total: f64,
    pub d_global: f64,
    pub d_local: f64,
}

/// Weighted total of the six generator terms. The discriminator fields
/// are filled in by the training step.
pub fn total_g_loss(terms: &GeneratorTerms, w: &LossWeights) -> LossReport {
    let total = w.lambda1 * terms.g_gan_global
        + w.lambda2 * terms.g_gan_local
        + w.lambda3 * terms.l1_global
        + w.lambda4 * terms.l1_local
        + w.lambda5 * terms.seg
        + w.lambda6 * terms.id;
    LossReport {
        g_gan_global: terms.g_gan_global,
        g_gan_local: terms.g_gan_local,
        l1_global: terms.l1_global,
        l1_local: terms.l1_local,
        seg: terms.seg,
        id: terms.id,
        total,
        d_global: 0.0,
        d_local: 0.0,
    }
}

fn mean_of<F: Elem, D: Dimension>(x: &Array<F, D>) -> F {
    x.sum() / F::from_f(x.len() as f64)
}

/// Discriminator LSGAN loss: `mean((real - 1)^2) + mean(fake^2)`.
pub fn lsgan_d_loss<F: Elem, D: Dimension>(real: &Array<F, D>, fake: &Array<F, D>) -> Result<F> {
    if real.iter().any(|v| !v.into_f().is_finite()) || fake.iter().any(|v| !v.into_f().is_finite())
    {
        return Err(CoreError::NonFinite("discriminator score map".into()));
    }
    let one = F::one();
    let lr = mean_of(&real.mapv(|v| (v - one) * (v - one)));
    let lf = mean_of(&fake.mapv(|v| v * v));
    Ok(lr + lf)
}

/// Loss plus gradients w.r.t. both score maps.
pub fn lsgan_d_loss_grads<F: Elem, D: Dimension>(
    real: &Array<F, D>,
    fake: &Array<F, D>,
) -> Result<(F, Array<F, D>, Array<F, D>)> {
    let loss = lsgan_d_loss(real, fake)?;
    let nr = F::from_f(real.len() as f64);
    let nf = F::from_f(fake.len() as f64);
    let two = F::from_f(2.0);
    let dreal = real.mapv(|v| two * (v - F::one()) / nr);
    let dfake = fake.mapv(|v| two * v / nf);
    Ok((loss, dreal, dfake))
}

/// Generator LSGAN loss: `mean((fake - 1)^2)`.
pub fn lsgan_g_loss<F: Elem, D: Dimension>(fake: &Array<F, D>) -> F {
    let one = F::one();
    mean_of(&fake.mapv(|v| (v - one) * (v - one)))
}

pub fn lsgan_g_loss_grad<F: Elem, D: Dimension>(fake: &Array<F, D>) -> (F, Array<F, D>) {
    let loss = lsgan_g_loss(fake);
    let n = F::from_f(fake.len() as f64);
    let two = F::from_f(2.0);
    (loss, fake.mapv(|v| two * (v - F::one()) / n))
}

/// Element-wise product of an image batch `[N,C,H,W]` with a one-channel
/// mask `[N,1,H,W]`, broadcast over channels.
pub fn masked<F: Elem>(image: &Array4<F>, mask: &Array4<F>) -> Array4<F> {
    let dim = image.raw_dim();
    let m = mask.broadcast(dim).expect("mask broadcast to image shape");
    image * &m
}

/// Mean absolute difference over all elements.
pub fn l1_loss<F: Elem, D: Dimension>(y_hat: &Array<F, D>, y: &Array<F, D>) -> F {
    let diff = y_hat - y;
    mean_of(&diff.mapv(|v| v.abs()))
}

/// Loss plus gradient w.r.t. `y_hat` (sign subgradient, zero at ties).
pub fn l1_loss_grad<F: Elem, D: Dimension>(
    y_hat: &Array<F, D>,
    y: &Array<F, D>,
) -> (F, Array<F, D>) {
    let loss = l1_loss(y_hat, y);
    let n = F::from_f(y_hat.len() as f64);
    let mut grad = y_hat - y;
    grad.mapv_inplace(|v| {
        if v > F::zero() {
            F::one() / n
        } else if v < F::zero() {
            -F::one() / n
        } else {
            F::zero()
        }
    });
    (loss, grad)
}

/// Binary cross entropy over the two mask channels, mean-reduced.
/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn seg_bce<F: Elem, D: Dimension>(m_hat: &Array<F, D>, m: &Array<F, D>) -> F {
    let eps = F::from_f(BCE_EPS);
    let one = F::one();
    let mut acc = F::zero();
    for (&p, &t) in m_hat.iter().zip(m.iter()) {
        let p = p.max(eps).min(one - eps);
        acc = acc - (t * p.ln() + (one - t) * (one - p).ln());
    }
    acc / F::from_f(m_hat.len() as f64)
}

pub fn seg_bce_grad<F: Elem, D: Dimension>(
    m_hat: &Array<F, D>,
    m: &Array<F, D>,
) -> (F, Array<F, D>) {
    let loss = seg_bce(m_hat, m);
    let eps = F::from_f(BCE_EPS);
    let one = F::one();
    let n = F::from_f(m_hat.len() as f64);
    let mut grad = m_hat.clone();
    ndarray::Zip::from(&mut grad).and(m).for_each(|p, &t| {
        let raw = *p;
        if raw <= eps || raw >= one - eps {
            // clamped region: locally constant
            *p = F::zero();
        } else {
            *p = (-t / raw + (one - t) / (one - raw)) / n;
        }
    });
    (loss, grad)
}

/// Identity loss, mean square error over embedding dims and batch.
pub fn id_mse<F: Elem>(emb_hat: &Array2<F>, emb_true: &Array2<F>) -> F {
    let diff = emb_hat - emb_true;
    mean_of(&diff.mapv(|v| v * v))
}

pub fn id_mse_grad<F: Elem>(emb_hat: &Array2<F>, emb_true: &Array2<F>) -> (F, Array2<F>) {
    let loss = id_mse(emb_hat, emb_true);
    let n = F::from_f(emb_hat.len() as f64);
    let two = F::from_f(2.0);
    let grad = (emb_hat - emb_true).mapv(|v| two * v / n);
    (loss, grad)
}

/// Unsquared variant: mean over the batch of the embedding-difference
/// 2-norm (the objective as typeset rather than as described in prose).
pub fn id_l2norm<F: Elem>(emb_hat: &Array2<F>, emb_true: &Array2<F>) -> F {
    let n = emb_hat.nrows();
    let mut acc = F::zero();
    for i in 0..n {
        let mut s = F::zero();
        for j in 0..emb_hat.ncols() {
            let d = emb_hat[[i, j]] - emb_true[[i, j]];
            s = s + d * d;
        }
        acc = acc + s.sqrt();
    }
    acc / F::from_f(n as f64)
}

pub fn id_l2norm_grad<F: Elem>(emb_hat: &Array2<F>, emb_true: &Array2<F>) -> (F, Array2<F>) {
    let loss = id_l2norm(emb_hat, emb_true);
    let n = emb_hat.nrows();
    let nf = F::from_f(n as f64);
    let mut grad = Array2::<F>::zeros(emb_hat.raw_dim());
    for i in 0..n {
        let mut s = F::zero();
        for j in 0..emb_hat.ncols() {
            let d = emb_hat[[i, j]] - emb_true[[i, j]];
            s = s + d * d;
        }
        let norm = s.sqrt();
        if norm > F::zero() {
            for j in 0..emb_hat.ncols() {
                grad[[i, j]] = (emb_hat[[i, j]] - emb_true[[i, j]]) / (norm * nf);
            }
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::numeric_grad;
    use ndarray::{Array2, Array4};

    const TOL: f64 = 1e-6;

    fn score(v: f64) -> Array4<f64> {
        Array4::from_elem((2, 1, 3, 3), v)
    }

    #[test]
    fn lsgan_d_hand_values() {
        assert!(lsgan_d_loss(&score(1.0), &score(0.0)).unwrap().abs() < TOL);
        assert!((lsgan_d_loss(&score(0.5), &score(0.5)).unwrap() - 0.5).abs() < TOL);
        assert!((lsgan_d_loss(&score(0.0), &score(1.0)).unwrap() - 2.0).abs() < TOL);
    }

    #[test]
    fn lsgan_d_rejects_non_finite() {
        let mut bad = score(0.5);
        bad[[0, 0, 0, 0]] = f64::NAN;
        assert!(lsgan_d_loss(&bad, &score(0.5)).is_err());
        assert!(lsgan_d_loss(&score(0.5), &bad).is_err());
    }

    #[test]
    fn lsgan_g_hand_values() {
        assert!(lsgan_g_loss(&score(1.0)).abs() < TOL);
        assert!((lsgan_g_loss(&score(0.0)) - 1.0).abs() < TOL);
        assert!((lsgan_g_loss(&score(0.25)) - 0.5625).abs() < TOL);
    }

    #[test]
    fn masked_semantics() {
        let img = Array4::from_shape_fn((1, 3, 2, 2), |(_, c, y, x)| (c * 4 + y * 2 + x) as f64);
        let ones = Array4::from_elem((1, 1, 2, 2), 1.0);
        let zeros = Array4::from_elem((1, 1, 2, 2), 0.0);
        assert_eq!(masked(&img, &ones), img);
        assert_eq!(masked(&img, &zeros).sum(), 0.0);
        // idempotence for binary masks
        let m = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, y, x)| ((y + x) % 2) as f64);
        let once = masked(&img, &m);
        assert_eq!(masked(&once, &m), once);
    }

    #[test]
    fn l1_hand_values() {
        let y = Array4::from_shape_fn((1, 3, 2, 2), |(_, c, i, j)| (c + i + j) as f64 * 0.1);
        assert_eq!(l1_loss(&y, &y), 0.0);
        let y_hat = &y + 0.5;
        assert!((l1_loss(&y_hat, &y) - 0.5).abs() < TOL);
        // masked-out local variant
        let zeros = Array4::from_elem((1, 1, 2, 2), 0.0);
        let any = Array4::from_elem((1, 3, 2, 2), 3.7);
        assert_eq!(l1_loss(&masked(&any, &zeros), &masked(&y, &zeros)), 0.0);
    }

    #[test]
    fn seg_bce_hand_values() {
        let m = Array4::from_shape_fn((1, 2, 2, 2), |(_, c, y, x)| ((c + y + x) % 2) as f64);
        assert!(seg_bce(&m, &m) <= 1.2e-7, "clamped perfect prediction");
        let ones = Array4::from_elem((1, 2, 2, 2), 1.0);
        let half = Array4::from_elem((1, 2, 2, 2), 0.5);
        assert!((seg_bce(&half, &ones) - std::f64::consts::LN_2).abs() < TOL);
        let zeros = Array4::from_elem((1, 2, 2, 2), 0.0);
        assert!((seg_bce(&half, &zeros) - std::f64::consts::LN_2).abs() < TOL);
    }

    #[test]
    fn id_hand_values() {
        let a: Array2<f64> = Array2::from_elem((2, 8), 0.3);
        assert_eq!(id_mse(&a, &a), 0.0);
        let b = &a + 0.1;
        assert!((id_mse(&b, &a) - 0.01).abs() < TOL);
        // homogeneity: scaling both embeddings by c scales loss by c^2
        let a2 = &a * 3.0;
        let b2 = &b * 3.0;
        assert!((id_mse(&b2, &a2) - 9.0 * id_mse(&b, &a)).abs() < TOL);
    }

    #[test]
    fn total_matches_paper_weights() {
        let terms = GeneratorTerms {
            g_gan_global: 1.0,
            g_gan_local: 1.0,
            l1_global: 1.0,
            l1_local: 1.0,
            seg: 1.0,
            id: 1.0,
        };
        let w = LossWeights::default();
        let report = total_g_loss(&terms, &w);
        assert!((report.total - 310.0).abs() < TOL);

        let zeroed = total_g_loss(&GeneratorTerms::default(), &w);
        assert_eq!(zeroed.total, 0.0);

        // "without identity term" ablation objective
        let no_id = LossWeights {
            lambda6: 0.0,
            ..LossWeights::default()
        };
        assert!((total_g_loss(&terms, &no_id).total - 305.0).abs() < TOL);
    }

    #[test]
    fn weight_linearity() {
        let terms = GeneratorTerms {
            g_gan_global: 0.3,
            g_gan_local: 0.7,
            l1_global: 0.11,
            l1_local: 0.05,
            seg: 0.9,
            id: 0.02,
        };
        let base = LossWeights::default();
        let values = [
            terms.g_gan_global,
            terms.g_gan_local,
            terms.l1_global,
            terms.l1_local,
            terms.seg,
            terms.id,
        ];
        for (i, term) in values.iter().enumerate() {
            let mut bumped = base;
            match i {
                0 => bumped.lambda1 += 2.0,
                1 => bumped.lambda2 += 2.0,
                2 => bumped.lambda3 += 2.0,
                3 => bumped.lambda4 += 2.0,
                4 => bumped.lambda5 += 2.0,
                _ => bumped.lambda6 += 2.0,
            }
            let delta = total_g_loss(&terms, &bumped).total - total_g_loss(&terms, &base).total;
            assert!((delta - 2.0 * term).abs() < TOL, "term {i}");
        }
    }

    #[test]
    fn loss_gradchecks() {
        let a = Array4::from_shape_fn((2, 3, 4, 4), |(n, c, y, x)| {
            ((n * 37 + c * 13 + y * 5 + x) % 17) as f64 * 0.11 - 0.8
        });
        let b = Array4::from_shape_fn((2, 3, 4, 4), |(n, c, y, x)| {
            ((n * 29 + c * 7 + y * 3 + x * 2) % 19) as f64 * 0.09 - 0.7
        });

        let (_, g) = lsgan_g_loss_grad(&a);
        let n = numeric_grad(&a, |a| lsgan_g_loss(a));
        assert!((&g - &n).iter().all(|v| v.abs() < 1e-7));

        let (_, dr, df) = lsgan_d_loss_grads(&a, &b).unwrap();
        let nr = numeric_grad(&a, |a| lsgan_d_loss(a, &b).unwrap());
        let nf = numeric_grad(&b, |b| lsgan_d_loss(&a, b).unwrap());
        assert!((&dr - &nr).iter().all(|v| v.abs() < 1e-7));
        assert!((&df - &nf).iter().all(|v| v.abs() < 1e-7));

        let (_, g) = l1_loss_grad(&a, &b);
        let n = numeric_grad(&a, |a| l1_loss(a, &b));
        assert!((&g - &n).iter().all(|v| v.abs() < 1e-7));

        let p = Array4::from_shape_fn((2, 2, 4, 4), |(n, c, y, x)| {
            0.05 + 0.9 * (((n * 31 + c * 17 + y * 7 + x * 3) % 11) as f64 / 11.0)
        });
        let t = Array4::from_shape_fn((2, 2, 4, 4), |(n, c, y, x)| ((n + c + y + x) % 2) as f64);
        let (_, g) = seg_bce_grad(&p, &t);
        let n = numeric_grad(&p, |p| seg_bce(p, &t));
        assert!((&g - &n).iter().all(|v| v.abs() < 1e-5));

        let e1 = Array2::from_shape_fn((2, 16), |(i, j)| ((i * 7 + j) % 9) as f64 * 0.2 - 0.5);
        let e2 = Array2::from_shape_fn((2, 16), |(i, j)| ((i * 5 + j * 3) % 11) as f64 * 0.15);
        let (_, g) = id_mse_grad(&e1, &e2);
        let n = numeric_grad(&e1, |e| id_mse(e, &e2));
        assert!((&g - &n).iter().all(|v| v.abs() < 1e-7));

        let (_, g) = id_l2norm_grad(&e1, &e2);
        let n = numeric_grad(&e1, |e| id_l2norm(e, &e2));
        assert!((&g - &n).iter().all(|v| v.abs() < 1e-7));
    }

    #[test]
    fn non_negative_on_random_inputs() {
        for seed in 0..20u64 {
            let a = Array4::from_shape_fn((1, 2, 3, 3), |(_, c, y, x)| {
                ((seed as usize * 31 + c * 13 + y * 5 + x) % 23) as f64 * 0.17 - 1.5
            });
            let b = a.mapv(|v| v * 0.3 + 0.2);
            assert!(lsgan_d_loss(&a, &b).unwrap() >= 0.0);
            assert!(lsgan_g_loss(&a) >= 0.0);
            assert!(l1_loss(&a, &b) >= 0.0);
            let p = a.mapv(|v| 1.0 / (1.0 + (-v).exp()));
            let t = b.mapv(|v| f64::from(v > 0.0));
            assert!(seg_bce(&p, &t) >= 0.0);
        }
    }
}
