//! Synthetic paired-data generation: aligned glasses-free faces get
//! eyewear templates composited on, with tint, glare, and refraction
//! augmentation, yielding `(x, y, mask)` training pairs.
//!
//! Everything is deterministic given the config seed. Each emitted
//! record derives its own seed, so any single pair can be regenerated in
//! isolation.

mod align;
mod composite;
mod extract;
mod refract;
mod template;
mod toyface;

pub use align::{
    align_face, canonical_landmarks, classify_pose, fit_alignment, fit_similarity,
    sample_bilinear_rgb, warp_mask, warp_rgb, Similarity,
};
pub use composite::{composite_glasses, emit_dataset, AlignedFace};
pub use extract::extract_glasses_template;
pub use refract::{apply_refraction, refraction_band_width};
pub use template::{
    apply_glare, apply_tint, load_template_pool, procedural_glasses_pool, save_template_pool,
    GlassesTemplate, LENS_ALPHA_SPLIT, LENS_BASE_ALPHA,
};
pub use toyface::procedural_toy_faces;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Head pose bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FacePose {
    Frontal,
    LeftFront,
    RightFront,
}

impl FacePose {
    pub fn as_str(&self) -> &'static str {
        match self {
            FacePose::Frontal => "frontal",
            FacePose::LeftFront => "left-front",
            FacePose::RightFront => "right-front",
        }
    }
}

/// Five facial landmarks in pixel coordinates, ordered
/// (left eye, right eye, nose, left mouth, right mouth).
pub type Landmarks = [[f32; 2]; 5];

/// Knobs for the synthesis pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub image_size: usize,
    pub tint_alpha_range: (f32, f32),
    pub tint_probability: f32,
    /// Refraction displacement magnitude bounds, in pixels.
    pub refraction_strength_range: (f32, f32),
    pub glare_probability: f32,
    pub glare_count_range: (usize, usize),
    /// Dilation radius for the pixels-untouched locality contract.
    pub r_dilate: usize,
    /// Frontal-pose half-width as a fraction of the inter-ocular distance.
    pub pose_tolerance: f32,
    pub rng_seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            tint_alpha_range: (0.15, 0.7),
            tint_probability: 0.8,
            refraction_strength_range: (0.0, 3.0),
            glare_probability: 0.5,
            glare_count_range: (1, 3),
            r_dilate: 2,
            pose_tolerance: 0.08,
            rng_seed: 0,
        }
    }
}

impl SynthesisConfig {
    /// Desk-scale defaults used by tests and the toy pipeline.
    pub fn desk(seed: u64) -> Self {
        Self {
            image_size: 64,
            rng_seed: seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f32| (0.0..=1.0).contains(&v);
        if self.image_size < 16 {
            return Err(CoreError::Config("image_size must be at least 16".into()));
        }
        if !(in_unit(self.tint_alpha_range.0)
            && in_unit(self.tint_alpha_range.1)
            && self.tint_alpha_range.0 <= self.tint_alpha_range.1)
        {
            return Err(CoreError::Config(
                "tint_alpha_range must be within [0,1]".into(),
            ));
        }
        if !in_unit(self.tint_probability) || !in_unit(self.glare_probability) {
            return Err(CoreError::Config("probabilities must be within [0,1]".into()));
        }
        if self.refraction_strength_range.0 < 0.0
            || self.refraction_strength_range.0 > self.refraction_strength_range.1
        {
            return Err(CoreError::Config(
                "refraction_strength_range must be non-negative and ordered".into(),
            ));
        }
        if self.glare_count_range.0 > self.glare_count_range.1 {
            return Err(CoreError::Config("glare_count_range must be ordered".into()));
        }
        if self.pose_tolerance <= 0.0 {
            return Err(CoreError::Config("pose_tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// One aligned training pair.
///
/// `x`/`y` are `[3,H,W]` in `[-1,1]`; `m` is `[2,H,W]` binary with
/// channel 0 the glasses region and channel 1 the face shape.
#[derive(Debug, Clone)]
pub struct PairedSample {
    pub x: Array3<f32>,
    pub y: Array3<f32>,
    pub m: Array3<u8>,
    pub pose: FacePose,
    pub identity_id: u32,
}

/// A raw (unaligned) source face with exact annotations.
#[derive(Debug, Clone)]
pub struct FaceRecord {
    pub image: Array3<f32>, // [3,H,W] in [0,1]
    pub landmarks: Landmarks,
    pub face_shape_mask: Array2<u8>,
    pub identity_id: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub x_path: String,
    pub y_path: String,
    pub mask_path: String,
    pub identity_id: u32,
    pub pose: FacePose,
    pub template_id: usize,
    pub seed: u64,
}

/// Dataset index: one JSON object per emitted record, in emission order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
        for rec in &self.records {
            let line = serde_json::to_string(rec)?;
            writeln!(file, "{line}").map_err(|e| CoreError::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| CoreError::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| CoreError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Self { records })
    }

    /// Check that every referenced file exists under `root`.
    pub fn verify_paths(&self, root: &Path) -> Result<()> {
        for (i, rec) in self.records.iter().enumerate() {
            for p in [&rec.x_path, &rec.y_path, &rec.mask_path] {
                let full = root.join(p);
                if !full.is_file() {
                    return Err(CoreError::Dataset(format!(
                        "record {i}: missing file {}",
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, root: &Path, rel: &str) -> PathBuf {
        root.join(rel)
    }
}

/// Per-record seed derivation (splitmix64 over the config seed and the
/// record index) so records are reproducible in isolation.
pub fn derive_record_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Chebyshev (square) dilation by `r` pixels.
pub fn dilate(mask: &Array2<u8>, r: usize) -> Array2<u8> {
    if r == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dim();
    let r = r as isize;
    let mut out = Array2::<u8>::zeros((h, w));
    for y in 0..h as isize {
        for x in 0..w as isize {
            if mask[[y as usize, x as usize]] == 0 {
                continue;
            }
            for dy in -r..=r {
                for dx in -r..=r {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny >= 0 && ny < h as isize && nx >= 0 && nx < w as isize {
                        out[[ny as usize, nx as usize]] = 1;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_catches_bad_ranges() {
        assert!(SynthesisConfig::default().validate().is_ok());
        let mut bad = SynthesisConfig::default();
        bad.tint_alpha_range = (0.8, 0.2);
        assert!(bad.validate().is_err());
        let mut bad = SynthesisConfig::default();
        bad.refraction_strength_range = (-1.0, 2.0);
        assert!(bad.validate().is_err());
        let mut bad = SynthesisConfig::default();
        bad.glare_probability = 1.5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn record_seeds_differ_per_index_and_are_stable() {
        let a = derive_record_seed(42, 0);
        let b = derive_record_seed(42, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_record_seed(42, 0));
    }

    #[test]
    fn dilate_grows_square_neighborhood() {
        let mut m = Array2::<u8>::zeros((7, 7));
        m[[3, 3]] = 1;
        let d = dilate(&m, 2);
        assert_eq!(d.sum() as usize, 25);
        assert_eq!(d[[1, 1]], 1);
        assert_eq!(d[[0, 0]], 0);
        assert_eq!(dilate(&m, 0), m);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let manifest = DatasetManifest {
            records: vec![ManifestRecord {
                x_path: "x/000000.png".into(),
                y_path: "y/000000.png".into(),
                mask_path: "m/000000.png".into(),
                identity_id: 3,
                pose: FacePose::LeftFront,
                template_id: 7,
                seed: 99,
            }],
        };
        manifest.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back.records.len(), 1);
        assert_eq!(back.records[0].identity_id, 3);
        assert_eq!(back.records[0].pose, FacePose::LeftFront);
    }
}
