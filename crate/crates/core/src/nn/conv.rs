use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use rayon::prelude::*;

use super::{init::sample_normal, Elem};

/// Number of output positions for conv arithmetic.
#[inline]
pub fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unfold `[C,H,W]` into `[C*k*k, oh*ow]` with zero padding.
fn im2col<F: Elem>(
    x: &ArrayView3<F>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<F> {
    let (c, h, w) = x.dim();
    let mut col = Array2::<F>::zeros((c * k * k, oh * ow));
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let mut dst = col.row_mut(row);
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dst[oy * ow + ox] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    col
}

/// Fold `[C*k*k, oh*ow]` back onto a `[C,H,W]` image, accumulating
/// overlapping windows. Exact adjoint of [`im2col`].
fn col2im<F: Elem>(
    col: &ArrayView2<F>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array3<F> {
    let mut x = Array3::<F>::zeros((c, h, w));
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = col.row(row);
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[[ci, iy as usize, ix as usize]] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
    x
}

/// 2-D convolution, weight layout `[out_ch, in_ch, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d<F: Elem> {
    pub w: Array4<F>,
    pub b: Array1<F>,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Elem> Conv2d<F> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut (impl Rng + ?Sized),
    ) -> Self {
        Self {
            w: sample_normal(rng, (out_ch, in_ch, k, k), 0.02),
            b: Array1::zeros(out_ch),
            stride,
            pad,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.w.dim().2;
        (
            conv_out_len(h, k, self.stride, self.pad),
            conv_out_len(w, k, self.stride, self.pad),
        )
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let (n, cin, h, w) = x.dim();
        let (cout, cin_w, k, _) = self.w.dim();
        assert_eq!(cin, cin_w, "conv input channels");
        let (oh, ow) = self.out_spatial(h, w);
        let w_mat = self
            .w
            .view()
            .into_shape_with_order((cout, cin * k * k))
            .expect("contiguous conv weight");

        let mut out = Array4::<F>::zeros((n, cout, oh, ow));
        let xs: Vec<ArrayView3<F>> = x.outer_iter().collect();
        let mut outs: Vec<_> = out.outer_iter_mut().collect();
        outs.par_iter_mut().zip(xs.par_iter()).for_each(|(o, xi)| {
            let col = im2col(xi, k, self.stride, self.pad, oh, ow);
            let y = w_mat.dot(&col);
            let mut y = y.into_shape_with_order((cout, oh, ow)).unwrap();
            for (mut ych, &bias) in y.outer_iter_mut().zip(self.b.iter()) {
                ych += bias;
            }
            o.assign(&y);
        });
        out
    }

    /// Returns `(dx (if requested), dw, db)`.
    pub fn backward(
        &self,
        x: &Array4<F>,
        dout: &Array4<F>,
        need_dx: bool,
    ) -> (Option<Array4<F>>, Array4<F>, Array1<F>) {
        let (n, cin, h, w) = x.dim();
        let (cout, _, k, _) = self.w.dim();
        let (_, _, oh, ow) = dout.dim();
        let w_mat = self
            .w
            .view()
            .into_shape_with_order((cout, cin * k * k))
            .expect("contiguous conv weight");

        let xs: Vec<ArrayView3<F>> = x.outer_iter().collect();
        let douts: Vec<ArrayView3<F>> = dout.outer_iter().collect();
        let per_item: Vec<(Array2<F>, Option<Array3<F>>)> = xs
            .par_iter()
            .zip(douts.par_iter())
            .map(|(xi, doi)| {
                let col = im2col(xi, k, self.stride, self.pad, oh, ow);
                let do_std = doi.as_standard_layout();
                let do_mat = do_std
                    .into_shape_with_order((cout, oh * ow))
                    .expect("dout reshape");
                let dw = do_mat.dot(&col.t());
                let dx = if need_dx {
                    let dcol = w_mat.t().dot(&do_mat);
                    Some(col2im(
                        &dcol.view(),
                        cin,
                        h,
                        w,
                        k,
                        self.stride,
                        self.pad,
                        oh,
                        ow,
                    ))
                } else {
                    None
                };
                (dw, dx)
            })
            .collect();

        // fixed-order reduction keeps gradients bit-reproducible
        let mut dw_mat = Array2::<F>::zeros((cout, cin * k * k));
        let mut dx = need_dx.then(|| Array4::<F>::zeros((n, cin, h, w)));
        for (i, (dwi, dxi)) in per_item.into_iter().enumerate() {
            dw_mat += &dwi;
            if let (Some(dx), Some(dxi)) = (dx.as_mut(), dxi) {
                dx.index_axis_mut(Axis(0), i).assign(&dxi);
            }
        }
        let dw = dw_mat
            .into_shape_with_order((cout, cin, k, k))
            .expect("dw shape");
        let db = dout
            .sum_axis(Axis(3))
            .sum_axis(Axis(2))
            .sum_axis(Axis(0));
        (dx, dw, db)
    }
}

/// 2-D transposed convolution, weight layout `[in_ch, out_ch, k, k]`.
///
/// Forward is the adjoint of a stride-`s` convolution, so the output
/// spatial size is `(h - 1) * stride - 2 * pad + k`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<F: Elem> {
    pub w: Array4<F>,
    pub b: Array1<F>,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Elem> ConvTranspose2d<F> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut (impl Rng + ?Sized),
    ) -> Self {
        Self {
            w: sample_normal(rng, (in_ch, out_ch, k, k), 0.02),
            b: Array1::zeros(out_ch),
            stride,
            pad,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.w.dim().2;
        (
            (h - 1) * self.stride + k - 2 * self.pad,
            (w - 1) * self.stride + k - 2 * self.pad,
        )
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let (n, cin, h, w) = x.dim();
        let (cin_w, cout, k, _) = self.w.dim();
        assert_eq!(cin, cin_w, "deconv input channels");
        let (oh, ow) = self.out_spatial(h, w);
        let w_mat = self
            .w
            .view()
            .into_shape_with_order((cin, cout * k * k))
            .expect("contiguous deconv weight");

        let mut out = Array4::<F>::zeros((n, cout, oh, ow));
        let xs: Vec<ArrayView3<F>> = x.outer_iter().collect();
        let mut outs: Vec<_> = out.outer_iter_mut().collect();
        outs.par_iter_mut().zip(xs.par_iter()).for_each(|(o, xi)| {
            let x_std = xi.as_standard_layout();
            let x_mat = x_std
                .into_shape_with_order((cin, h * w))
                .expect("input reshape");
            let dcol = w_mat.t().dot(&x_mat);
            let mut y = col2im(&dcol.view(), cout, oh, ow, k, self.stride, self.pad, h, w);
            for (mut ych, &bias) in y.outer_iter_mut().zip(self.b.iter()) {
                ych += bias;
            }
            o.assign(&y);
        });
        out
    }

    /// Returns `(dx (if requested), dw, db)`.
    pub fn backward(
        &self,
        x: &Array4<F>,
        dout: &Array4<F>,
        need_dx: bool,
    ) -> (Option<Array4<F>>, Array4<F>, Array1<F>) {
        let (n, cin, h, w) = x.dim();
        let (_, cout, k, _) = self.w.dim();
        let w_mat = self
            .w
            .view()
            .into_shape_with_order((cin, cout * k * k))
            .expect("contiguous deconv weight");

        let xs: Vec<ArrayView3<F>> = x.outer_iter().collect();
        let douts: Vec<ArrayView3<F>> = dout.outer_iter().collect();
        let per_item: Vec<(Array2<F>, Option<Array3<F>>)> = xs
            .par_iter()
            .zip(douts.par_iter())
            .map(|(xi, doi)| {
                let col = im2col(doi, k, self.stride, self.pad, h, w);
                let x_std = xi.as_standard_layout();
                let x_mat = x_std
                    .into_shape_with_order((cin, h * w))
                    .expect("input reshape");
                let dw = x_mat.dot(&col.t());
                let dx = if need_dx {
                    let dx_mat = w_mat.dot(&col);
                    Some(dx_mat.into_shape_with_order((cin, h, w)).unwrap())
                } else {
                    None
                };
                (dw, dx)
            })
            .collect();

        let mut dw_mat = Array2::<F>::zeros((cin, cout * k * k));
        let mut dx = need_dx.then(|| Array4::<F>::zeros((n, cin, h, w)));
        for (i, (dwi, dxi)) in per_item.into_iter().enumerate() {
            dw_mat += &dwi;
            if let (Some(dx), Some(dxi)) = (dx.as_mut(), dxi) {
                dx.index_axis_mut(Axis(0), i).assign(&dxi);
            }
        }
        let dw = dw_mat
            .into_shape_with_order((cin, cout, k, k))
            .expect("dw shape");
        let db = dout
            .sum_axis(Axis(3))
            .sum_axis(Axis(2))
            .sum_axis(Axis(0));
        (dx, dw, db)
    }
}
