//! Lens refraction: radially compress the face content just inside each
//! lens boundary, the way strong corrective lenses shift the apparent
//! face outline.
//!
//! For a pixel `p` inside a lens component at distance `d` from the
//! component boundary, the output samples the face at
//! `p + strength * s(d / band) * outward`, where `s` is a reversed
//! smoothstep (1 at the boundary, 0 at `band` and beyond) and `outward`
//! points away from the component centroid. Only lens pixels within the
//! band change; everything else is untouched.

use ndarray::{Array2, Array3};

/// Band fraction of the lens width.
const BAND_FRACTION: f32 = 0.25;

/// Falloff band in pixels for a lens component of the given width.
pub fn refraction_band_width(lens_width: usize) -> f32 {
    BAND_FRACTION * lens_width as f32
}

/// Reversed smoothstep: 1 at t=0 decaying to 0 at t>=1.
#[inline]
fn falloff(t: f32) -> f32 {
    if t >= 1.0 {
        0.0
    } else if t <= 0.0 {
        1.0
    } else {
        1.0 - (3.0 * t * t - 2.0 * t * t * t)
    }
}

#[inline]
fn sample_clamped(img: &Array3<f32>, x: f32, y: f32) -> [f32; 3] {
    let (_, h, w) = img.dim();
    let xc = x.clamp(0.0, (w - 1) as f32);
    let yc = y.clamp(0.0, (h - 1) as f32);
    let x0 = xc.floor();
    let y0 = yc.floor();
    let fx = xc - x0;
    let fy = yc - y0;
    let x0 = x0 as usize;
    let y0 = y0 as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let mut out = [0.0f32; 3];
    for c in 0..3 {
        let top = img[[c, y0, x0]] * (1.0 - fx) + img[[c, y0, x1]] * fx;
        let bot = img[[c, y1, x0]] * (1.0 - fx) + img[[c, y1, x1]] * fx;
        out[c] = top * (1.0 - fy) + bot * fy;
    }
    out
}

struct LensComponent {
    pixels: Vec<(usize, usize)>,
    boundary: Vec<(f32, f32)>,
    centroid: (f32, f32),
    band: f32,
}

fn components(mask: &Array2<u8>) -> Vec<LensComponent> {
    let (h, w) = mask.dim();
    let mut seen = Array2::<u8>::zeros((h, w));
    let mut out = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if mask[[sy, sx]] == 0 || seen[[sy, sx]] != 0 {
                continue;
            }
            let mut queue = vec![(sy, sx)];
            seen[[sy, sx]] = 1;
            let mut pixels = Vec::new();
            while let Some((y, x)) = queue.pop() {
                pixels.push((y, x));
                let neighbors = [
                    (y.wrapping_sub(1), x),
                    (y + 1, x),
                    (y, x.wrapping_sub(1)),
                    (y, x + 1),
                ];
                for (ny, nx) in neighbors {
                    if ny < h && nx < w && mask[[ny, nx]] != 0 && seen[[ny, nx]] == 0 {
                        seen[[ny, nx]] = 1;
                        queue.push((ny, nx));
                    }
                }
            }
            let mut boundary = Vec::new();
            let (mut x0, mut x1) = (usize::MAX, 0usize);
            let (mut cy, mut cx) = (0.0f32, 0.0f32);
            for &(y, x) in &pixels {
                x0 = x0.min(x);
                x1 = x1.max(x);
                cy += y as f32;
                cx += x as f32;
                let on_edge = y == 0 || y == h - 1 || x == 0 || x == w - 1;
                let exposed = on_edge
                    || mask[[y - 1, x]] == 0
                    || mask[[y + 1, x]] == 0
                    || mask[[y, x - 1]] == 0
                    || mask[[y, x + 1]] == 0;
                if exposed {
                    boundary.push((y as f32, x as f32));
                }
            }
            let n = pixels.len() as f32;
            out.push(LensComponent {
                band: refraction_band_width(x1 - x0 + 1),
                centroid: (cy / n, cx / n),
                pixels,
                boundary,
            });
        }
    }
    out
}

/// Displacement applied at a lens pixel; zero outside the falloff band.
fn displacement(comp: &LensComponent, y: usize, x: usize, strength: f32) -> Option<(f32, f32)> {
    if strength == 0.0 || comp.band <= 0.0 {
        return None;
    }
    let mut d2_min = f32::INFINITY;
    for &(by, bx) in &comp.boundary {
        let d2 = (by - y as f32).powi(2) + (bx - x as f32).powi(2);
        if d2 < d2_min {
            d2_min = d2;
        }
    }
    let dist = d2_min.sqrt();
    let amount = strength * falloff(dist / comp.band);
    if amount <= 0.0 {
        return None;
    }
    let dy = y as f32 - comp.centroid.0;
    let dx = x as f32 - comp.centroid.1;
    let norm = (dy * dy + dx * dx).sqrt();
    if norm < 1e-6 {
        return None; // exactly at the centroid: no outward direction
    }
    Some((amount * dy / norm, amount * dx / norm))
}

/// Apply the refraction deformation inside the given lens mask.
pub fn apply_refraction(
    face: &Array3<f32>,
    lens_mask: &Array2<u8>,
    strength: f32,
) -> Array3<f32> {
    let (_, h, w) = face.dim();
    assert_eq!(lens_mask.dim(), (h, w), "lens mask size");
    let mut out = face.clone();
    if strength == 0.0 {
        return out;
    }
    for comp in components(lens_mask) {
        for &(y, x) in &comp.pixels {
            if let Some((dy, dx)) = displacement(&comp, y, x, strength) {
                let px = sample_clamped(face, x as f32 + dx, y as f32 + dy);
                for c in 0..3 {
                    out[[c, y, x]] = px[c];
                }
            }
        }
    }
    out
}

/// Reference displacement field for tests and callers that need to know
/// which pixels can change: `Some((dy course, dx))` per lens pixel.
pub fn displacement_field(
    lens_mask: &Array2<u8>,
    strength: f32,
) -> Array2<Option<(f32, f32)>> {
    let (h, w) = lens_mask.dim();
    let mut field = Array2::from_elem((h, w), None);
    for comp in components(lens_mask) {
        for &(y, x) in &comp.pixels {
            field[[y, x]] = displacement(&comp, y, x, strength);
        }
    }
    field
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_mask(h: usize, w: usize, cy: f32, cx: f32, r: f32) -> Array2<u8> {
        Array2::from_shape_fn((h, w), |(y, x)| {
            u8::from(((y as f32 - cy).powi(2) + (x as f32 - cx).powi(2)).sqrt() <= r)
        })
    }

    #[test]
    fn zero_strength_is_identity() {
        let face = Array3::from_shape_fn((3, 24, 24), |(c, y, x)| {
            ((c * 19 + y * 5 + x * 3) % 17) as f32 / 17.0
        });
        let mask = disc_mask(24, 24, 12.0, 12.0, 7.0);
        assert_eq!(apply_refraction(&face, &mask, 0.0), face);
    }

    #[test]
    fn constant_field_is_unchanged_for_any_strength() {
        let face = Array3::from_elem((3, 24, 24), 0.42f32);
        let mask = disc_mask(24, 24, 12.0, 12.0, 7.0);
        let out = apply_refraction(&face, &mask, 3.0);
        let max = (&out - &face).iter().fold(0.0f32, |a, v| a.max(v.abs()));
        assert!(max < 1e-6);
    }

    #[test]
    fn pixels_beyond_band_are_unchanged_and_rest_moves_inward() {
        let face = Array3::from_shape_fn((3, 32, 32), |(c, y, x)| {
            ((c * 7 + y * 3 + x * 11) % 13) as f32 / 13.0
        });
        let mask = disc_mask(32, 32, 16.0, 16.0, 10.0);
        let band = refraction_band_width(21); // bbox width of r=10 disc
        let out = apply_refraction(&face, &mask, 2.0);
        let field = displacement_field(&mask, 2.0);
        for y in 0..32 {
            for x in 0..32 {
                let changed = (0..3).any(|c| out[[c, y, x]] != face[[c, y, x]]);
                if mask[[y, x]] == 0 {
                    assert!(!changed, "outside lens changed at ({y},{x})");
                    continue;
                }
                if let Some((dy, dx)) = field[[y, x]] {
                    let mag = (dy * dy + dx * dx).sqrt();
                    assert!(mag <= 2.0 + 1e-5, "displacement exceeds strength");
                } else {
                    assert!(!changed, "pixel without displacement changed at ({y},{x})");
                    // far interior pixels: verify distance is indeed >= band
                    let dist_to_edge = 10.0
                        - (((y as f32 - 16.0).powi(2) + (x as f32 - 16.0).powi(2)).sqrt());
                    // allow the centroid special case
                    if dist_to_edge < band - 2.0 {
                        let at_centroid = (y, x) == (16, 16);
                        assert!(at_centroid || dist_to_edge >= band - 2.0);
                    }
                }
            }
        }
    }

    #[test]
    fn stripe_card_matches_scalar_oracle() {
        // Vertical stripes; independent pointwise recomputation of
        // displaced bilinear samples.
        let face = Array3::from_shape_fn((3, 40, 40), |(_, _, x)| f32::from(x % 6 < 3));
        let mask = disc_mask(40, 40, 20.0, 20.0, 12.0);
        let strength = 2.0;
        let out = apply_refraction(&face, &mask, strength);
        let field = displacement_field(&mask, strength);

        for y in 0..40usize {
            for x in 0..40usize {
                let expect = match (mask[[y, x]], field[[y, x]]) {
                    (0, _) | (_, None) => face[[0, y, x]],
                    (_, Some((dy, dx))) => {
                        // scalar bilinear with clamped coordinates
                        let sx = (x as f32 + dx).clamp(0.0, 39.0);
                        let sy = (y as f32 + dy).clamp(0.0, 39.0);
                        let x0 = sx.floor() as usize;
                        let y0 = sy.floor() as usize;
                        let x1 = (x0 + 1).min(39);
                        let y1 = (y0 + 1).min(39);
                        let fx = sx - x0 as f32;
                        let fy = sy - y0 as f32;
                        let v = |yy: usize, xx: usize| face[[0, yy, xx]];
                        (v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx) * (1.0 - fy)
                            + (v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx) * fy
                    }
                };
                assert!(
                    (out[[0, y, x]] - expect).abs() < 1e-6,
                    "mismatch at ({y},{x}): {} vs {expect}",
                    out[[0, y, x]]
                );
            }
        }
    }
}
