//! Put glasses on a face: warp a template so its lens anchors land on
//! the eye landmarks, refract the face under the lenses, alpha-composite
//! the layer, and record the exact glasses/face-shape masks.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use super::{
    apply_glare, apply_refraction, apply_tint, classify_pose, derive_record_seed, dilate,
    fit_alignment, fit_similarity, warp_mask, warp_rgb, DatasetManifest, FacePose, FaceRecord,
    GlassesTemplate, Landmarks, ManifestRecord, PairedSample, Similarity, SynthesisConfig,
};
use crate::imgio;
use crate::{CoreError, Result};

/// A face standardized onto the canonical landmark grid.
#[derive(Debug, Clone)]
pub struct AlignedFace {
    pub image: Array3<f32>, // [3,s,s] in [0,1]
    pub landmarks: Landmarks,
    pub face_shape_mask: Array2<u8>,
    pub identity_id: u32,
    pub pose: FacePose,
}

impl AlignedFace {
    /// Align a raw face record to the configured size.
    pub fn from_record(face: &FaceRecord, cfg: &SynthesisConfig) -> Result<Self> {
        let t = fit_alignment(&face.landmarks, cfg.image_size)?;
        let image = warp_rgb(&face.image, &t, cfg.image_size)?;
        let face_shape_mask = warp_mask(&face.face_shape_mask, &t, cfg.image_size)?;
        let mut landmarks = face.landmarks;
        for p in landmarks.iter_mut() {
            *p = t.apply(*p);
        }
        let pose = classify_pose(&landmarks, cfg.pose_tolerance);
        Ok(Self {
            image,
            landmarks,
            face_shape_mask,
            identity_id: face.identity_id,
            pose,
        })
    }
}

/// Exact 2-point similarity placing the template anchors on the eyes.
fn anchor_transform(template: &GlassesTemplate, eyes: [[f32; 2]; 2]) -> Result<Similarity> {
    fit_similarity(&template.anchor_points, &eyes)
}

fn bbox_in_bounds(
    template: &GlassesTemplate,
    t: &Similarity,
    size: usize,
) -> Result<()> {
    let Some((y0, x0, y1, x1)) = template.mask_bbox() else {
        return Ok(()); // empty template never leaves bounds
    };
    let corners = [
        [x0 as f32, y0 as f32],
        [x1 as f32, y0 as f32],
        [x0 as f32, y1 as f32],
        [x1 as f32, y1 as f32],
    ];
    let lim = (size - 1) as f32;
    for c in corners {
        let p = t.apply(c);
        if p[0] < 0.0 || p[0] > lim || p[1] < 0.0 || p[1] > lim {
            return Err(CoreError::TemplateRejected(format!(
                "warped mask corner ({:.1}, {:.1}) leaves the {size}x{size} image",
                p[0], p[1]
            )));
        }
    }
    Ok(())
}

/// Premultiplied-alpha bilinear sample of the template layer.
#[inline]
fn sample_template(layer: &Array3<f32>, x: f32, y: f32) -> [f32; 4] {
    let (_, h, w) = layer.dim();
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut out = [0.0f32; 4];
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
            let a = layer[[3, yy as usize, xx as usize]];
            for c in 0..3 {
                out[c] += wgt * a * layer[[c, yy as usize, xx as usize]];
            }
            out[3] += wgt * a;
        }
    }
    out
}

/// Composite one augmented template onto an aligned glasses-free face.
///
/// All template contribution is confined to the stored glasses mask
/// dilated by `r_dilate`, which is what makes the pixels-untouched
/// locality contract hold for arbitrary templates and warp scales.
pub fn composite_glasses(
    face: &AlignedFace,
    template: &GlassesTemplate,
    cfg: &SynthesisConfig,
    rng: &mut ChaCha12Rng,
) -> Result<PairedSample> {
    cfg.validate()?;
    if template.pose != face.pose {
        return Err(CoreError::TemplateRejected(format!(
            "template pose {} does not match face pose {}",
            template.pose.as_str(),
            face.pose.as_str()
        )));
    }
    let size = cfg.image_size;
    if face.image.dim() != (3, size, size) {
        return Err(CoreError::Shape("face not aligned to image_size".into()));
    }

    // photorealism augmentation: tint, then glare
    let mut tpl = template.clone();
    if rng.random::<f32>() < cfg.tint_probability {
        let color = [
            rng.random_range(0.0..=1.0),
            rng.random_range(0.0..=1.0),
            rng.random_range(0.0..=1.0),
        ];
        let alpha = rng.random_range(cfg.tint_alpha_range.0..=cfg.tint_alpha_range.1);
        tpl = apply_tint(&tpl, color, alpha)?;
    }
    let tpl = apply_glare(&tpl, rng, cfg)?;

    let eyes = [face.landmarks[0], face.landmarks[1]];
    let t = anchor_transform(&tpl, eyes)?;
    bbox_in_bounds(&tpl, &t, size)?;

    let m_g = warp_mask(&tpl.mask, &t, size)?;
    let lens_warped = warp_mask(&tpl.lens, &t, size)?;

    let strength = if cfg.refraction_strength_range.1 > cfg.refraction_strength_range.0 {
        rng.random_range(cfg.refraction_strength_range.0..=cfg.refraction_strength_range.1)
    } else {
        cfg.refraction_strength_range.0
    };
    let refracted = apply_refraction(&face.image, &lens_warped, strength);

    let allowed = dilate(&m_g, cfg.r_dilate);
    let inv = t.inverse()?;
    let mut x01 = refracted;
    for yy in 0..size {
        for xx in 0..size {
            if allowed[[yy, xx]] == 0 {
                continue;
            }
            let src = inv.apply([xx as f32, yy as f32]);
            let px = sample_template(&tpl.color_layer, src[0], src[1]);
            let a = px[3];
            if a <= 0.0 {
                continue;
            }
            for c in 0..3 {
                x01[[c, yy, xx]] = px[c] + (1.0 - a) * x01[[c, yy, xx]];
            }
        }
    }

    let mut m = Array3::<u8>::zeros((2, size, size));
    for yy in 0..size {
        for xx in 0..size {
            m[[0, yy, xx]] = m_g[[yy, xx]];
            m[[1, yy, xx]] = face.face_shape_mask[[yy, xx]];
        }
    }

    Ok(PairedSample {
        x: imgio::rgb01_to_pm1(&x01),
        y: imgio::rgb01_to_pm1(&face.image),
        m,
        pose: face.pose,
        identity_id: face.identity_id,
    })
}

/// Synthesize one record: alignment, template choice, composite.
/// Deterministic given `(cfg.rng_seed, index)`.
pub fn synthesize_record(
    face: &FaceRecord,
    pool: &[GlassesTemplate],
    cfg: &SynthesisConfig,
    index: u64,
) -> Result<(PairedSample, usize, u64)> {
    let seed = derive_record_seed(cfg.rng_seed, index);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let aligned = AlignedFace::from_record(face, cfg)?;
    let candidates: Vec<usize> = pool
        .iter()
        .enumerate()
        .filter(|(_, t)| t.pose == aligned.pose)
        .map(|(i, _)| i)
        .collect();
    if candidates.is_empty() {
        return Err(CoreError::Dataset(format!(
            "no {} template available for face {index}",
            aligned.pose.as_str()
        )));
    }
    let mut last_err = None;
    for _ in 0..8 {
        let template_id = candidates[rng.random_range(0..candidates.len())];
        match composite_glasses(&aligned, &pool[template_id], cfg, &mut rng) {
            Ok(sample) => return Ok((sample, template_id, seed)),
            Err(e @ CoreError::TemplateRejected(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| CoreError::Dataset("template retries exhausted".into())))
}

/// Emit one pair per face into `<out>/x|y|m/NNNNNN.png` plus
/// `manifest.jsonl`. Records are processed in parallel; each derives its
/// own seed so the output is independent of scheduling.
pub fn emit_dataset(
    faces: &[FaceRecord],
    pool: &[GlassesTemplate],
    cfg: &SynthesisConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(CoreError::Dataset("empty template pool".into()));
    }
    for sub in ["x", "y", "m"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| CoreError::io(&dir, e))?;
    }

    let results: Vec<Result<ManifestRecord>> = faces
        .par_iter()
        .enumerate()
        .map(|(i, face)| {
            let (sample, template_id, seed) = synthesize_record(face, pool, cfg, i as u64)?;
            let x_path = format!("x/{i:06}.png");
            let y_path = format!("y/{i:06}.png");
            let mask_path = format!("m/{i:06}.png");
            imgio::save_pm1_png(&out_dir.join(&x_path), &sample.x)?;
            imgio::save_pm1_png(&out_dir.join(&y_path), &sample.y)?;
            imgio::save_mask2_png(&out_dir.join(&mask_path), &sample.m)?;
            Ok(ManifestRecord {
                x_path,
                y_path,
                mask_path,
                identity_id: sample.identity_id,
                pose: sample.pose,
                template_id,
                seed,
            })
        })
        .collect();

    let total = results.len();
    let mut records = Vec::with_capacity(total);
    let mut first_err = None;
    let mut written = 0usize;
    for r in results {
        match r {
            Ok(rec) => {
                written += 1;
                records.push(rec);
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(CoreError::PartialOutput {
            written,
            total,
            source: Box::new(e),
        });
    }

    let manifest = DatasetManifest { records };
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{procedural_glasses_pool, procedural_toy_faces};
    use ndarray::Array3;

    fn desk_cfg(seed: u64) -> SynthesisConfig {
        SynthesisConfig::desk(seed)
    }

    fn one_aligned_face(seed: u64) -> AlignedFace {
        let faces = procedural_toy_faces(1, 1, seed, 96).unwrap();
        AlignedFace::from_record(&faces[0], &desk_cfg(seed)).unwrap()
    }

    fn matching_template(face: &AlignedFace, seed: u64) -> GlassesTemplate {
        procedural_glasses_pool(9, seed)
            .into_iter()
            .find(|t| t.pose == face.pose)
            .expect("pool covers all poses")
    }

    #[test]
    fn pose_mismatch_is_rejected() {
        let face = one_aligned_face(3);
        let other = procedural_glasses_pool(9, 3)
            .into_iter()
            .find(|t| t.pose != face.pose)
            .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let err = composite_glasses(&face, &other, &desk_cfg(3), &mut rng);
        assert!(matches!(err, Err(CoreError::TemplateRejected(_))));
    }

    #[test]
    fn out_of_bounds_warp_is_rejected() {
        let face = one_aligned_face(4);
        let mut tpl = matching_template(&face, 4);
        // anchors almost on top of each other force a huge upscale
        let mid = [
            (tpl.anchor_points[0][0] + tpl.anchor_points[1][0]) / 2.0,
            tpl.anchor_points[0][1],
        ];
        tpl.anchor_points = [[mid[0] - 0.5, mid[1]], [mid[0] + 0.5, mid[1]]];
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let err = composite_glasses(&face, &tpl, &desk_cfg(4), &mut rng);
        assert!(matches!(err, Err(CoreError::TemplateRejected(_))));
    }

    #[test]
    fn transparent_template_leaves_face_untouched() {
        let face = one_aligned_face(5);
        let tpl = matching_template(&face, 5);
        let empty = GlassesTemplate::from_layer(
            Array3::zeros(tpl.color_layer.raw_dim()),
            face.pose,
            tpl.anchor_points,
        )
        .unwrap();
        let mut cfg = desk_cfg(5);
        cfg.tint_probability = 0.0; // tint/glare no-ops on empty masks anyway
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let pair = composite_glasses(&face, &empty, &cfg, &mut rng).unwrap();
        assert_eq!(pair.x, pair.y, "alpha-free template must leave x == y");
        assert_eq!(pair.m.index_axis(ndarray::Axis(0), 0).sum(), 0);
    }

    #[test]
    fn opaque_frame_pixel_wins_over_face() {
        let face = one_aligned_face(6);
        let tpl = matching_template(&face, 6);
        let mut cfg = desk_cfg(6);
        cfg.tint_probability = 0.0;
        cfg.glare_probability = 0.0;
        cfg.refraction_strength_range = (0.0, 0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let pair = composite_glasses(&face, &tpl, &cfg, &mut rng).unwrap();

        // find a face pixel whose inverse-warped sample is fully opaque
        let t = anchor_transform(&tpl, [face.landmarks[0], face.landmarks[1]]).unwrap();
        let inv = t.inverse().unwrap();
        let mut checked = 0;
        for yy in 0..cfg.image_size {
            for xx in 0..cfg.image_size {
                let src = inv.apply([xx as f32, yy as f32]);
                let px = sample_template(&tpl.color_layer, src[0], src[1]);
                if px[3] >= 0.9999 {
                    for c in 0..3 {
                        let got = (pair.x[[c, yy, xx]] + 1.0) * 0.5;
                        assert!(
                            (got - px[c]).abs() < 1e-5,
                            "opaque pixel should equal the frame color"
                        );
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > 10, "expected opaque frame coverage, got {checked}");
    }

    #[test]
    fn composite_is_deterministic_for_fixed_seed() {
        let face = one_aligned_face(7);
        let tpl = matching_template(&face, 7);
        let cfg = desk_cfg(7);
        let run = || {
            let mut rng = ChaCha12Rng::seed_from_u64(42);
            composite_glasses(&face, &tpl, &cfg, &mut rng).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.m, b.m);
    }

    #[test]
    fn locality_outside_dilated_mask() {
        for seed in 0..4u64 {
            let face = one_aligned_face(40 + seed);
            let tpl = matching_template(&face, 40 + seed);
            let cfg = desk_cfg(40 + seed);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let pair = composite_glasses(&face, &tpl, &cfg, &mut rng).unwrap();
            let m_g = pair.m.index_axis(ndarray::Axis(0), 0).to_owned();
            let allowed = dilate(&m_g, cfg.r_dilate);
            for yy in 0..cfg.image_size {
                for xx in 0..cfg.image_size {
                    if allowed[[yy, xx]] == 0 {
                        for c in 0..3 {
                            assert_eq!(
                                pair.x[[c, yy, xx]],
                                pair.y[[c, yy, xx]],
                                "pixel ({yy},{xx}) changed outside the dilated mask"
                            );
                        }
                    }
                }
            }
            assert!(m_g.sum() > 0, "glasses mask present");
        }
    }

    #[test]
    fn emit_writes_layout_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let faces = procedural_toy_faces(4, 2, 11, 96).unwrap();
        let pool = procedural_glasses_pool(9, 11);
        let cfg = desk_cfg(11);
        let manifest = emit_dataset(&faces, &pool, &cfg, dir.path()).unwrap();
        assert_eq!(manifest.records.len(), 4);
        manifest.verify_paths(dir.path()).unwrap();
        let reload = DatasetManifest::load(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(reload.records.len(), 4);
        for (i, rec) in reload.records.iter().enumerate() {
            assert_eq!(rec.identity_id, (i / 2) as u32);
            assert_eq!(rec.seed, derive_record_seed(cfg.rng_seed, i as u64));
        }
    }
}
