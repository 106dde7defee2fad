//! Eyewear templates: an RGBA layer, its support mask, lens/frame
//! split, pose tag, and the two lens-center anchors.
//!
//! Convention for the alpha channel: opaque pixels (alpha >= 0.5) are
//! frame, faintly transparent pixels (0 < alpha < 0.5) are lens glass.
//! Lenses always carry a small base alpha so the support mask covers
//! them; that keeps every pixel the compositor can touch inside the
//! stored glasses mask.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{derive_record_seed, FacePose, SynthesisConfig};
use crate::imgio;
use crate::{CoreError, Result};

/// Alpha below this (and above zero) classifies a pixel as lens glass.
pub const LENS_ALPHA_SPLIT: f32 = 0.5;
/// Base alpha given to untinted lens interiors.
pub const LENS_BASE_ALPHA: f32 = 0.04;

#[derive(Debug, Clone)]
pub struct GlassesTemplate {
    /// `[4,H,W]` RGBA in `[0,1]`.
    pub color_layer: Array3<f32>,
    /// Support: exactly the pixels with alpha > 0.
    pub mask: Array2<u8>,
    /// Lens-glass subset of the support, fixed at construction.
    pub lens: Array2<u8>,
    pub pose: FacePose,
    /// Left and right lens centers, template pixel coordinates.
    pub anchor_points: [[f32; 2]; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct TemplateSidecar {
    pose: FacePose,
    anchor_points: [[f32; 2]; 2],
}

impl GlassesTemplate {
    /// Derive support and lens masks from the alpha channel.
    pub fn from_layer(
        color_layer: Array3<f32>,
        pose: FacePose,
        anchor_points: [[f32; 2]; 2],
    ) -> Result<Self> {
        let (c, h, w) = color_layer.dim();
        if c != 4 {
            return Err(CoreError::Shape("template layer must be RGBA".into()));
        }
        let mut mask = Array2::<u8>::zeros((h, w));
        let mut lens = Array2::<u8>::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let a = color_layer[[3, y, x]];
                if a > 0.0 {
                    mask[[y, x]] = 1;
                    if a < LENS_ALPHA_SPLIT {
                        lens[[y, x]] = 1;
                    }
                }
            }
        }
        let t = Self {
            color_layer,
            mask,
            lens,
            pose,
            anchor_points,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn size(&self) -> (usize, usize) {
        let (_, h, w) = self.color_layer.dim();
        (h, w)
    }

    /// Tight bounding box of the support mask: `(y0, x0, y1, x1)`
    /// inclusive, or `None` when the mask is empty.
    pub fn mask_bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let (h, w) = self.mask.dim();
        let (mut y0, mut x0, mut y1, mut x1) = (h, w, 0usize, 0usize);
        let mut any = false;
        for y in 0..h {
            for x in 0..w {
                if self.mask[[y, x]] != 0 {
                    any = true;
                    y0 = y0.min(y);
                    x0 = x0.min(x);
                    y1 = y1.max(y);
                    x1 = x1.max(x);
                }
            }
        }
        any.then_some((y0, x0, y1, x1))
    }

    pub fn validate(&self) -> Result<()> {
        let (_, h, w) = self.color_layer.dim();
        if self.mask.dim() != (h, w) || self.lens.dim() != (h, w) {
            return Err(CoreError::Shape("template mask size mismatch".into()));
        }
        for y in 0..h {
            for x in 0..w {
                let a = self.color_layer[[3, y, x]];
                if (self.mask[[y, x]] != 0) != (a > 0.0) {
                    return Err(CoreError::Config(format!(
                        "mask is not exactly the alpha support at ({y},{x})"
                    )));
                }
                if self.lens[[y, x]] != 0 && self.mask[[y, x]] == 0 {
                    return Err(CoreError::Config("lens outside support mask".into()));
                }
            }
        }
        if let Some((y0, x0, y1, x1)) = self.mask_bbox() {
            for p in &self.anchor_points {
                if p[0] < x0 as f32 || p[0] > x1 as f32 || p[1] < y0 as f32 || p[1] > y1 as f32 {
                    return Err(CoreError::Config(
                        "anchor points must lie inside the mask bounding box".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Dye the lens interiors: the tint color composites over the lens with
/// the given opacity. Frame pixels and the support mask are untouched.
pub fn apply_tint(template: &GlassesTemplate, color: [f32; 3], alpha: f32) -> Result<GlassesTemplate> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::Config(format!("tint alpha {alpha} outside [0,1]")));
    }
    let mut out = template.clone();
    let (h, w) = out.mask.dim();
    for y in 0..h {
        for x in 0..w {
            if template.lens[[y, x]] == 0 {
                continue;
            }
            for c in 0..3 {
                let base = out.color_layer[[c, y, x]];
                out.color_layer[[c, y, x]] = alpha * color[c] + (1.0 - alpha) * base;
            }
            let a = out.color_layer[[3, y, x]];
            out.color_layer[[3, y, x]] = a + alpha * (1.0 - a);
        }
    }
    Ok(out)
}

/// Screen-blend one soft-edged elliptical highlight into the lens
/// region: a solid core up to the ellipse boundary, then a Gaussian
/// skirt with sigma = 15% of the mean radius. Pixels outside the lens
/// are never touched.
pub fn add_glare_spot(
    template: &mut GlassesTemplate,
    center: [f32; 2],
    radii: [f32; 2],
    angle: f32,
    peak: f32,
) {
    let (h, w) = template.mask.dim();
    let cx = center[0];
    let cy = center[1];
    if cx < 0.0 || cy < 0.0 || cx >= w as f32 || cy >= h as f32 {
        return;
    }
    if template.lens[[cy.round() as usize, cx.round() as usize]] == 0 {
        // spots centered outside the lens are discarded entirely
        return;
    }
    let mean_r = 0.5 * (radii[0] + radii[1]);
    let sigma = 0.15 * mean_r;
    let reach = radii[0].max(radii[1]) + 4.0 * sigma;
    let (sin, cos) = angle.sin_cos();
    let y_lo = ((cy - reach).floor().max(0.0)) as usize;
    let y_hi = ((cy + reach).ceil() as usize).min(h - 1);
    let x_lo = ((cx - reach).floor().max(0.0)) as usize;
    let x_hi = ((cx + reach).ceil() as usize).min(w - 1);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            if template.lens[[y, x]] == 0 {
                continue;
            }
            let dx = x as f32 - cx;
            let dy = y as f32 - cy;
            let u = cos * dx + sin * dy;
            let v = -sin * dx + cos * dy;
            let rho = ((u / radii[0]).powi(2) + (v / radii[1]).powi(2)).sqrt();
            let falloff = if rho <= 1.0 {
                1.0
            } else {
                let d = (rho - 1.0) * mean_r;
                (-0.5 * (d / sigma).powi(2)).exp()
            };
            let g = peak * falloff;
            if g <= 0.0 {
                continue;
            }
            for c in 0..3 {
                let base = template.color_layer[[c, y, x]];
                template.color_layer[[c, y, x]] = base + g * (1.0 - base);
            }
            let a = template.color_layer[[3, y, x]];
            template.color_layer[[3, y, x]] = a + g * (1.0 - a);
        }
    }
}

/// Randomly place glare highlights on the lenses per the config.
pub fn apply_glare(
    template: &GlassesTemplate,
    rng: &mut ChaCha12Rng,
    cfg: &SynthesisConfig,
) -> Result<GlassesTemplate> {
    cfg.validate()?;
    let mut out = template.clone();
    if rng.random::<f32>() >= cfg.glare_probability {
        return Ok(out);
    }
    let lens_bbox = {
        let (h, w) = out.lens.dim();
        let mut bb = None;
        for y in 0..h {
            for x in 0..w {
                if out.lens[[y, x]] != 0 {
                    let (y0, x0, y1, x1) = bb.unwrap_or((y, x, y, x));
                    bb = Some((y0.min(y), x0.min(x), y1.max(y), x1.max(x)));
                }
            }
        }
        bb
    };
    let Some((y0, x0, y1, x1)) = lens_bbox else {
        return Ok(out); // no lens glass to reflect off
    };
    let k = rng.random_range(cfg.glare_count_range.0..=cfg.glare_count_range.1);
    let extent = ((y1 - y0).min(x1 - x0) + 1) as f32;
    for _ in 0..k {
        let mut placed = None;
        for _ in 0..20 {
            let cx = rng.random_range(x0 as f32..=x1 as f32);
            let cy = rng.random_range(y0 as f32..=y1 as f32);
            if out.lens[[cy.round() as usize, cx.round() as usize]] != 0 {
                placed = Some([cx, cy]);
                break;
            }
        }
        let Some(center) = placed else { continue };
        let r = rng.random_range(0.10 * extent..=0.30 * extent).max(1.0);
        let aspect = rng.random_range(0.4..=1.0);
        let angle = rng.random_range(0.0..std::f32::consts::PI);
        let peak = rng.random_range(0.3..=0.75);
        add_glare_spot(&mut out, center, [r, r * aspect], angle, peak);
    }
    Ok(out)
}

const POOL_CANVAS_W: usize = 128;
const POOL_CANVAS_H: usize = 56;

/// Deterministic procedural eyewear pool. Each template is an opaque
/// dark frame (two rims, bridge, temple stubs) with faint glass lenses;
/// non-frontal poses get one foreshortened lens.
pub fn procedural_glasses_pool(n: usize, seed: u64) -> Vec<GlassesTemplate> {
    (0..n).map(|i| procedural_template(i, seed)).collect()
}

fn procedural_template(index: usize, seed: u64) -> GlassesTemplate {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_record_seed(seed, index as u64));
    let pose = match index % 3 {
        0 => FacePose::Frontal,
        1 => FacePose::LeftFront,
        _ => FacePose::RightFront,
    };
    let (w, h) = (POOL_CANVAS_W, POOL_CANVAS_H);
    let cy = h as f32 * 0.5;
    let sep: f32 = rng.random_range(52.0..=60.0);
    let mut rx_l: f32 = rng.random_range(15.0..=20.0);
    let mut rx_r: f32 = rx_l;
    let ry: f32 = rng.random_range(10.0..=15.0);
    let thickness: f32 = rng.random_range(2.5..=4.5);
    let frame = [
        rng.random_range(0.0..=0.35),
        rng.random_range(0.0..=0.35),
        rng.random_range(0.0..=0.35),
    ];
    match pose {
        FacePose::LeftFront => rx_l *= rng.random_range(0.6..=0.8),
        FacePose::RightFront => rx_r *= rng.random_range(0.6..=0.8),
        FacePose::Frontal => {}
    }
    let cx_l = w as f32 * 0.5 - sep * 0.5;
    let cx_r = w as f32 * 0.5 + sep * 0.5;

    let mut layer = Array3::<f32>::zeros((4, h, w));
    let mut put_frame = |x: usize, y: usize, layer: &mut Array3<f32>| {
        for c in 0..3 {
            layer[[c, y, x]] = frame[c];
        }
        layer[[3, y, x]] = 1.0;
    };
    let ellipse = |x: f32, y: f32, cx: f32, rx: f32| -> f32 {
        (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt()
    };

    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f32, y as f32);
            for (cx, rx) in [(cx_l, rx_l), (cx_r, rx_r)] {
                let outer = ellipse(xf, yf, cx, rx);
                if outer <= 1.0 {
                    let inner = (((xf - cx) / (rx - thickness)).powi(2)
                        + ((yf - cy) / (ry - thickness)).powi(2))
                    .sqrt();
                    if inner <= 1.0 {
                        // lens glass
                        for c in 0..3 {
                            layer[[c, y, x]] = frame[c];
                        }
                        layer[[3, y, x]] = LENS_BASE_ALPHA;
                    } else {
                        put_frame(x, y, &mut layer);
                    }
                }
            }
        }
    }

    // bridge between the inner rim edges
    let bridge_half = 1.5f32;
    let x_in_l = cx_l + rx_l - thickness * 0.5;
    let x_in_r = cx_r - rx_r + thickness * 0.5;
    for y in 0..h {
        let yf = y as f32;
        if (yf - (cy - 2.0)).abs() <= bridge_half + 1.0 {
            for x in 0..w {
                let xf = x as f32;
                if xf >= x_in_l && xf <= x_in_r && (yf - (cy - 2.0)).abs() <= bridge_half {
                    put_frame(x, y, &mut layer);
                }
            }
        }
    }

    // temple stubs toward the canvas edges
    for y in 0..h {
        let yf = y as f32;
        if (yf - (cy - 1.0)).abs() <= 1.5 {
            for x in 0..w {
                let xf = x as f32;
                if xf < cx_l - rx_l + thickness * 0.5 || xf > cx_r + rx_r - thickness * 0.5 {
                    put_frame(x, y, &mut layer);
                }
            }
        }
    }

    GlassesTemplate::from_layer(layer, pose, [[cx_l, cy], [cx_r, cy]])
        .expect("procedural template is self-consistent")
}

/// Write a pool as `NNNN.png` RGBA plus `NNNN.json` sidecars.
pub fn save_template_pool(dir: &Path, pool: &[GlassesTemplate]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    for (i, t) in pool.iter().enumerate() {
        let png = dir.join(format!("{i:04}.png"));
        imgio::save_rgba01_png(&png, &t.color_layer)?;
        let sidecar = dir.join(format!("{i:04}.json"));
        let meta = TemplateSidecar {
            pose: t.pose,
            anchor_points: t.anchor_points,
        };
        std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)
            .map_err(|e| CoreError::io(&sidecar, e))?;
    }
    Ok(())
}

/// Load a pool directory (sorted by file name). Masks are derived from
/// the stored alpha channel.
pub fn load_template_pool(dir: &Path) -> Result<Vec<GlassesTemplate>> {
    let mut pngs: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CoreError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    pngs.sort();
    if pngs.is_empty() {
        return Err(CoreError::Dataset(format!(
            "no templates found in {}",
            dir.display()
        )));
    }
    let mut pool = Vec::with_capacity(pngs.len());
    for png in pngs {
        let layer = imgio::load_rgba01_png(&png)?;
        let sidecar = png.with_extension("json");
        let raw = std::fs::read_to_string(&sidecar).map_err(|e| CoreError::io(&sidecar, e))?;
        let meta: TemplateSidecar = serde_json::from_str(&raw)?;
        pool.push(GlassesTemplate::from_layer(
            layer,
            meta.pose,
            meta.anchor_points,
        )?);
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_lens_template() -> GlassesTemplate {
        // 8x16 canvas: lens block on the left, frame block on the right
        let mut layer = Array3::<f32>::zeros((4, 8, 16));
        for y in 2..6 {
            for x in 2..8 {
                for c in 0..3 {
                    layer[[c, y, x]] = 0.5;
                }
                layer[[3, y, x]] = LENS_BASE_ALPHA;
            }
            for x in 9..14 {
                for c in 0..3 {
                    layer[[c, y, x]] = 0.1;
                }
                layer[[3, y, x]] = 1.0;
            }
        }
        GlassesTemplate::from_layer(layer, FacePose::Frontal, [[4.0, 4.0], [11.0, 4.0]]).unwrap()
    }

    #[test]
    fn mask_is_alpha_support_and_lens_split_works() {
        let t = flat_lens_template();
        assert_eq!(t.mask[[4, 4]], 1);
        assert_eq!(t.lens[[4, 4]], 1);
        assert_eq!(t.mask[[4, 11]], 1);
        assert_eq!(t.lens[[4, 11]], 0); // opaque frame
        assert_eq!(t.mask[[0, 0]], 0);
        assert!(t.validate().is_ok());
    }

    #[test]
    fn tint_zero_is_identity_and_one_is_opaque() {
        let t = flat_lens_template();
        let same = apply_tint(&t, [1.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(same.color_layer, t.color_layer);

        let black = apply_tint(&t, [0.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(black.color_layer[[0, 4, 4]], 0.0);
        assert_eq!(black.color_layer[[3, 4, 4]], 1.0); // fully opaque lens
        // frame untouched
        assert_eq!(black.color_layer[[0, 4, 11]], t.color_layer[[0, 4, 11]]);
        assert_eq!(black.mask, t.mask);
    }

    #[test]
    fn tint_hand_value() {
        // alpha 0.4, red over gray 0.5 -> (0.7, 0.3, 0.3)
        let t = flat_lens_template();
        let tinted = apply_tint(&t, [1.0, 0.0, 0.0], 0.4).unwrap();
        assert!((tinted.color_layer[[0, 4, 4]] - 0.7).abs() < 1e-6);
        assert!((tinted.color_layer[[1, 4, 4]] - 0.3).abs() < 1e-6);
        assert!((tinted.color_layer[[2, 4, 4]] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn glare_peak_is_screen_blend() {
        // lens value 0.2, peak 0.6 -> 0.2 + 0.6*(1-0.2) = 0.68 at center
        let mut t = flat_lens_template();
        for y in 2..6 {
            for x in 2..8 {
                for c in 0..3 {
                    t.color_layer[[c, y, x]] = 0.2;
                }
            }
        }
        add_glare_spot(&mut t, [4.0, 4.0], [2.0, 1.5], 0.3, 0.6);
        assert!((t.color_layer[[0, 4, 4]] - 0.68).abs() < 1e-5);
        // frame pixel unchanged
        assert!((t.color_layer[[0, 4, 11]] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn glare_spot_centered_outside_lens_is_discarded() {
        let mut t = flat_lens_template();
        let before = t.color_layer.clone();
        add_glare_spot(&mut t, [11.0, 4.0], [3.0, 3.0], 0.0, 0.7); // frame center
        add_glare_spot(&mut t, [0.0, 0.0], [3.0, 3.0], 0.0, 0.7); // empty corner
        assert_eq!(t.color_layer, before);
    }

    #[test]
    fn glare_probability_zero_is_identity() {
        let t = flat_lens_template();
        let mut cfg = SynthesisConfig::desk(1);
        cfg.glare_probability = 0.0;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let out = apply_glare(&t, &mut rng, &cfg).unwrap();
        assert_eq!(out.color_layer, t.color_layer);
    }

    #[test]
    fn procedural_pool_is_deterministic_and_valid() {
        let a = procedural_glasses_pool(6, 42);
        let b = procedural_glasses_pool(6, 42);
        assert_eq!(a.len(), 6);
        for (ta, tb) in a.iter().zip(b.iter()) {
            assert_eq!(ta.color_layer, tb.color_layer);
            assert_eq!(ta.pose, tb.pose);
            ta.validate().unwrap();
            assert!(ta.lens.sum() > 0, "pool template has lens glass");
        }
        let poses: std::collections::HashSet<_> = a.iter().map(|t| t.pose).collect();
        assert_eq!(poses.len(), 3, "all poses represented");
    }

    #[test]
    fn pool_round_trips_through_directory_format() {
        let dir = tempfile::tempdir().unwrap();
        let pool = procedural_glasses_pool(3, 7);
        save_template_pool(dir.path(), &pool).unwrap();
        let loaded = load_template_pool(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        for (orig, back) in pool.iter().zip(loaded.iter()) {
            assert_eq!(orig.pose, back.pose);
            assert_eq!(orig.anchor_points, back.anchor_points);
            assert_eq!(orig.mask, back.mask);
            assert_eq!(orig.lens, back.lens);
        }
    }
}
