//! Recover an eyewear template from a removal result by thresholding the
//! edited region, closing the loop back into the synthesis pipeline.

use ndarray::{Array2, Array3};

use super::{FacePose, GlassesTemplate};
use crate::{CoreError, Result};

/// Threshold the edited region into a reusable template.
///
/// `x01` and `y_hat01` are `[3,H,W]` images on the `[0,1]` intensity
/// scale; a pixel joins the template when the predicted glasses mask
/// exceeds 0.5 and the max-channel difference exceeds `threshold`.
/// The recovered layer takes its colors from `x01` with alpha 1; lens
/// anchors are the centroids of the left and right mask halves.
///
/// Returns `Ok(None)` when nothing survives thresholding, so the caller
/// can discard the result.
pub fn extract_glasses_template(
    x01: &Array3<f32>,
    y_hat01: &Array3<f32>,
    m_hat_g: &Array2<f32>,
    threshold: f32,
    pose: FacePose,
) -> Result<Option<GlassesTemplate>> {
    let (c, h, w) = x01.dim();
    if c != 3 || y_hat01.dim() != (3, h, w) || m_hat_g.dim() != (h, w) {
        return Err(CoreError::Shape(
            "extract requires x, y_hat, and mask of equal size".into(),
        ));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CoreError::Config(format!(
            "threshold {threshold} outside [0,1]"
        )));
    }

    let mut mask = Array2::<u8>::zeros((h, w));
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            if m_hat_g[[y, x]] <= 0.5 {
                continue;
            }
            let mut diff = 0.0f32;
            for ch in 0..3 {
                diff = diff.max((x01[[ch, y, x]] - y_hat01[[ch, y, x]]).abs());
            }
            if diff > threshold {
                mask[[y, x]] = 1;
                any = true;
            }
        }
    }
    if !any {
        return Ok(None);
    }

    let mut layer = Array3::<f32>::zeros((4, h, w));
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] != 0 {
                for ch in 0..3 {
                    layer[[ch, y, x]] = x01[[ch, y, x]];
                }
                layer[[3, y, x]] = 1.0;
            }
        }
    }

    // anchors: centroids of the left/right halves of the recovered mask
    let mid = w as f32 / 2.0;
    let mut acc = [[0.0f32; 2]; 2];
    let mut cnt = [0usize; 2];
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] != 0 {
                let side = usize::from(x as f32 >= mid);
                acc[side][0] += x as f32;
                acc[side][1] += y as f32;
                cnt[side] += 1;
            }
        }
    }
    // fall back to the overall centroid when one side is empty
    let overall = {
        let total = (cnt[0] + cnt[1]) as f32;
        [
            (acc[0][0] + acc[1][0]) / total,
            (acc[0][1] + acc[1][1]) / total,
        ]
    };
    let anchor = |side: usize| -> [f32; 2] {
        if cnt[side] == 0 {
            overall
        } else {
            [
                acc[side][0] / cnt[side] as f32,
                acc[side][1] / cnt[side] as f32,
            ]
        }
    };
    let anchors = [anchor(0), anchor(1)];

    Ok(Some(GlassesTemplate::from_layer(layer, pose, anchors)?))
}
