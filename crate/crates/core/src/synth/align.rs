//! Face alignment onto a canonical five-landmark template, and the head
//! pose rule.
//!
//! The canonical template is left/right symmetric about the image center
//! axis, so mirrored inputs align to exactly mirrored outputs. Alignment
//! solves the 4-parameter similarity (uniform scale, rotation,
//! translation) least-squares fit in closed form.

use ndarray::{Array2, Array3};

use super::{FacePose, Landmarks};
use crate::{CoreError, Result};

/// Canonical landmark offsets in a 112-unit reference frame, relative to
/// its center. Symmetrized from the usual face-crop convention.
const REF_UNIT: f32 = 112.0;
const REF_OFFSETS: [[f32; 2]; 5] = [
    [-17.6186, -4.40115], // left eye
    [17.6186, -4.40115],  // right eye
    [0.0, 15.7366],       // nose tip
    [-14.5903, 36.2848],  // left mouth corner
    [14.5903, 36.2848],   // right mouth corner
];

/// Canonical landmark positions for a given output size. The template is
/// symmetric about the pixel-center axis `(size - 1) / 2`.
pub fn canonical_landmarks(size: usize) -> Landmarks {
    let c = (size as f32 - 1.0) / 2.0;
    let k = size as f32 / REF_UNIT;
    let mut out = [[0.0f32; 2]; 5];
    for (o, r) in out.iter_mut().zip(REF_OFFSETS.iter()) {
        o[0] = c + k * r[0];
        o[1] = c + k * r[1];
    }
    out
}

/// Direct similarity `p -> [a -b; b a] p + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub a: f32,
    pub b: f32,
    pub tx: f32,
    pub ty: f32,
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    #[inline]
    pub fn apply(&self, p: [f32; 2]) -> [f32; 2] {
        [
            self.a * p[0] - self.b * p[1] + self.tx,
            self.b * p[0] + self.a * p[1] + self.ty,
        ]
    }

    pub fn scale(&self) -> f32 {
        (self.a * self.a + self.b * self.b).sqrt()
    }

    pub fn inverse(&self) -> Result<Similarity> {
        let det = self.a * self.a + self.b * self.b;
        if det < 1e-12 {
            return Err(CoreError::Alignment("degenerate similarity".into()));
        }
        let ia = self.a / det;
        let ib = -self.b / det;
        Ok(Similarity {
            a: ia,
            b: ib,
            tx: -(ia * self.tx - ib * self.ty),
            ty: -(ib * self.tx + ia * self.ty),
        })
    }

    /// Compose: apply `self` after `other`.
    pub fn after(&self, other: &Similarity) -> Similarity {
        let a = self.a * other.a - self.b * other.b;
        let b = self.b * other.a + self.a * other.b;
        let t = self.apply([other.tx, other.ty]);
        Similarity {
            a,
            b,
            tx: t[0],
            ty: t[1],
        }
    }
}

/// Least-squares similarity mapping `src[i]` onto `dst[i]`.
pub fn fit_similarity(src: &[[f32; 2]], dst: &[[f32; 2]]) -> Result<Similarity> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(CoreError::Alignment(
            "need at least two point correspondences".into(),
        ));
    }
    let n = src.len() as f32;
    let (mut pcx, mut pcy, mut qcx, mut qcy) = (0.0f32, 0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst.iter()) {
        pcx += p[0];
        pcy += p[1];
        qcx += q[0];
        qcy += q[1];
    }
    pcx /= n;
    pcy /= n;
    qcx /= n;
    qcy /= n;

    let (mut dot, mut cross, mut norm) = (0.0f32, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst.iter()) {
        let (px, py) = (p[0] - pcx, p[1] - pcy);
        let (qx, qy) = (q[0] - qcx, q[1] - qcy);
        dot += px * qx + py * qy;
        cross += px * qy - py * qx;
        norm += px * px + py * py;
    }
    if norm < 1e-9 {
        return Err(CoreError::Alignment("source points are coincident".into()));
    }
    let a = dot / norm;
    let b = cross / norm;
    Ok(Similarity {
        a,
        b,
        tx: qcx - (a * pcx - b * pcy),
        ty: qcy - (b * pcx + a * pcy),
    })
}

fn interocular(lm: &Landmarks) -> f32 {
    let dx = lm[1][0] - lm[0][0];
    let dy = lm[1][1] - lm[0][1];
    (dx * dx + dy * dy).sqrt()
}

fn check_landmarks(lm: &Landmarks) -> Result<f32> {
    let io = interocular(lm);
    if io < 1e-6 {
        return Err(CoreError::Alignment("eye landmarks coincide".into()));
    }
    // collinear eyes/nose (within tolerance) make an invalid face
    let ex = lm[1][0] - lm[0][0];
    let ey = lm[1][1] - lm[0][1];
    let nx = lm[2][0] - lm[0][0];
    let ny = lm[2][1] - lm[0][1];
    let area2 = (ex * ny - ey * nx).abs();
    if area2 <= 1e-4 * io * io {
        return Err(CoreError::Alignment(
            "eyes and nose are collinear within tolerance".into(),
        ));
    }
    Ok(io)
}

/// Similarity that maps the given landmarks onto the canonical template
/// for `image_size`.
pub fn fit_alignment(landmarks: &Landmarks, image_size: usize) -> Result<Similarity> {
    check_landmarks(landmarks)?;
    fit_similarity(landmarks, &canonical_landmarks(image_size))
}

/// Bilinear RGB sample with zero outside the image.
#[inline]
pub fn sample_bilinear_rgb(img: &Array3<f32>, x: f32, y: f32) -> [f32; 3] {
    let (_, h, w) = img.dim();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut out = [0.0f32; 3];
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        let yy = y0 as i64 + dy;
        if yy < 0 || yy >= h as i64 || wy == 0.0 {
            continue;
        }
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let xx = x0 as i64 + dx;
            if xx < 0 || xx >= w as i64 || wx == 0.0 {
                continue;
            }
            let wgt = wx * wy;
            for c in 0..3 {
                out[c] += wgt * img[[c, yy as usize, xx as usize]];
            }
        }
    }
    out
}

#[inline]
fn sample_bilinear_scalar(img: &Array2<f32>, x: f32, y: f32) -> f32 {
    let (h, w) = img.dim();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut out = 0.0f32;
    for (dy, wy) in [(0i64, 1.0 - fy), (1, fy)] {
        let yy = y0 as i64 + dy;
        if yy < 0 || yy >= h as i64 || wy == 0.0 {
            continue;
        }
        for (dx, wx) in [(0i64, 1.0 - fx), (1, fx)] {
            let xx = x0 as i64 + dx;
            if xx < 0 || xx >= w as i64 || wx == 0.0 {
                continue;
            }
            out += wx * wy * img[[yy as usize, xx as usize]];
        }
    }
    out
}

/// Inverse-warp an RGB image through `transform` onto an `out_size`
/// square grid.
pub fn warp_rgb(img: &Array3<f32>, transform: &Similarity, out_size: usize) -> Result<Array3<f32>> {
    let inv = transform.inverse()?;
    let mut out = Array3::zeros((3, out_size, out_size));
    for yy in 0..out_size {
        for xx in 0..out_size {
            let src = inv.apply([xx as f32, yy as f32]);
            let px = sample_bilinear_rgb(img, src[0], src[1]);
            for c in 0..3 {
                out[[c, yy, xx]] = px[c];
            }
        }
    }
    Ok(out)
}

/// Inverse-warp a binary mask; bilinear density binarized at 0.5, ties
/// rounding to 1.
pub fn warp_mask(mask: &Array2<u8>, transform: &Similarity, out_size: usize) -> Result<Array2<u8>> {
    let inv = transform.inverse()?;
    let f = mask.mapv(|v| f32::from(v));
    let mut out = Array2::zeros((out_size, out_size));
    for yy in 0..out_size {
        for xx in 0..out_size {
            let src = inv.apply([xx as f32, yy as f32]);
            out[[yy, xx]] = u8::from(sample_bilinear_scalar(&f, src[0], src[1]) >= 0.5);
        }
    }
    Ok(out)
}

/// Align a face image to the canonical template; returns the aligned
/// image and the transformed landmarks.
pub fn align_face(
    image: &Array3<f32>,
    landmarks: &Landmarks,
    image_size: usize,
) -> Result<(Array3<f32>, Landmarks)> {
    let t = fit_alignment(landmarks, image_size)?;
    let aligned = warp_rgb(image, &t, image_size)?;
    let mut lm = *landmarks;
    for p in lm.iter_mut() {
        *p = t.apply(*p);
    }
    Ok((aligned, lm))
}

/// Head pose from the nose offset against the eye midpoint:
/// within `tol_factor * interocular` of center counts as frontal
/// (boundary inclusive); otherwise the sign of the offset picks the
/// image-left or image-right bucket.
pub fn classify_pose(landmarks: &Landmarks, tol_factor: f32) -> FacePose {
    let mid_x = 0.5 * (landmarks[0][0] + landmarks[1][0]);
    let dx = landmarks[2][0] - mid_x;
    let tol = tol_factor * interocular(landmarks);
    if dx.abs() <= tol {
        FacePose::Frontal
    } else if dx < 0.0 {
        FacePose::LeftFront
    } else {
        FacePose::RightFront
    }
}
