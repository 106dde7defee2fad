//! Hermetic cartoon faces with exact landmarks and face-shape masks.
//!
//! Identity decides the base geometry and palette; each variant of an
//! identity gets small seeded pose/position jitter. Faces are drawn as
//! hard-edged primitives (head ellipse, hair band, eyes, nose, mouth) so
//! masks and landmarks are exact by construction.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{derive_record_seed, FaceRecord, FacePose, Landmarks};
use crate::{CoreError, Result};

/// Generate `n` faces; face `i` belongs to identity `i / variants_per_identity`.
pub fn procedural_toy_faces(
    n: usize,
    variants_per_identity: usize,
    rng_seed: u64,
    canvas: usize,
) -> Result<Vec<FaceRecord>> {
    if n == 0 {
        return Err(CoreError::Config("need at least one face".into()));
    }
    if variants_per_identity == 0 {
        return Err(CoreError::Config("variants_per_identity must be positive".into()));
    }
    if canvas < 48 {
        return Err(CoreError::Config("canvas must be at least 48".into()));
    }
    Ok((0..n)
        .map(|i| {
            let identity = (i / variants_per_identity) as u32;
            draw_face(identity, i as u64, rng_seed, canvas)
        })
        .collect())
}

struct IdentityParams {
    skin: [f32; 3],
    hair: [f32; 3],
    iris: [f32; 3],
    mouth: [f32; 3],
    head_rx: f32,
    head_ry: f32,
    eye_dx: f32,
    eye_r: f32,
    mouth_hw: f32,
}

fn identity_params(identity: u32, seed: u64, s: f32) -> IdentityParams {
    let mut rng = ChaCha12Rng::seed_from_u64(derive_record_seed(seed ^ 0x1D0_CAFE, identity as u64));
    IdentityParams {
        skin: [
            rng.random_range(0.60..=0.90),
            rng.random_range(0.45..=0.70),
            rng.random_range(0.35..=0.55),
        ],
        hair: [
            rng.random_range(0.10..=0.45),
            rng.random_range(0.08..=0.35),
            rng.random_range(0.05..=0.30),
        ],
        iris: [
            rng.random_range(0.1..=0.6),
            rng.random_range(0.2..=0.6),
            rng.random_range(0.3..=0.8),
        ],
        mouth: [rng.random_range(0.55..=0.8), 0.2, 0.25],
        head_rx: rng.random_range(0.26..=0.32) * s,
        head_ry: rng.random_range(0.34..=0.42) * s,
        eye_dx: rng.random_range(0.12..=0.16) * s,
        eye_r: rng.random_range(0.035..=0.050) * s,
        mouth_hw: rng.random_range(0.09..=0.14) * s,
    }
}

fn draw_face(identity: u32, face_index: u64, seed: u64, canvas: usize) -> FaceRecord {
    let s = canvas as f32;
    let id = identity_params(identity, seed, s);
    let mut rng = ChaCha12Rng::seed_from_u64(derive_record_seed(seed ^ 0xFACE_0FF, face_index));

    // variant jitter
    let scale: f32 = rng.random_range(0.94..=1.06);
    let jx: f32 = rng.random_range(-0.02..=0.02) * s;
    let jy: f32 = rng.random_range(-0.02..=0.02) * s;
    let pose_roll: f32 = rng.random_range(0.0..1.0);
    let io = 2.0 * id.eye_dx * scale;
    let nose_off = if pose_roll < 0.5 {
        rng.random_range(-0.02..=0.02) * io
    } else if pose_roll < 0.75 {
        -rng.random_range(0.15..=0.25) * io
    } else {
        rng.random_range(0.15..=0.25) * io
    };

    let cx = 0.5 * s + jx;
    let cy = 0.52 * s + jy;
    let head_rx = id.head_rx * scale;
    let head_ry = id.head_ry * scale;
    let eye_dx = id.eye_dx * scale;
    let eye_y = cy - 0.09 * s * scale;
    let eye_r = id.eye_r * scale;
    let nose = [cx + nose_off, cy + 0.06 * s * scale];
    let mouth_y = cy + 0.18 * s * scale;
    let mouth_hw = id.mouth_hw * scale;
    let hair_line = eye_y - 0.12 * s * scale;

    let in_ellipse = |x: f32, y: f32, ex: f32, ey: f32, rx: f32, ry: f32| {
        ((x - ex) / rx).powi(2) + ((y - ey) / ry).powi(2) <= 1.0
    };

    let bg = [0.86f32, 0.88, 0.91];
    let mut img = Array3::<f32>::zeros((3, canvas, canvas));
    let mut mask = Array2::<u8>::zeros((canvas, canvas));

    for yy in 0..canvas {
        for xx in 0..canvas {
            let (x, y) = (xx as f32, yy as f32);
            let mut px = bg;
            if in_ellipse(x, y, cx, cy, head_rx, head_ry) {
                mask[[yy, xx]] = 1;
                px = id.skin;
                if y < hair_line {
                    px = id.hair;
                }
                // eyes: white, iris, pupil
                for ex in [cx - eye_dx, cx + eye_dx] {
                    if in_ellipse(x, y, ex, eye_y, eye_r * 1.4, eye_r) {
                        px = [0.95, 0.95, 0.95];
                        let look = ex + nose_off * 0.25;
                        if in_ellipse(x, y, look, eye_y, eye_r * 0.55, eye_r * 0.55) {
                            px = id.iris;
                            if in_ellipse(x, y, look, eye_y, eye_r * 0.25, eye_r * 0.25) {
                                px = [0.05, 0.05, 0.05];
                            }
                        }
                    }
                }
                // nose wedge down to the tip
                let bridge_y = cy - 0.02 * s * scale;
                if y >= bridge_y && y <= nose[1] {
                    let t = (y - bridge_y) / (nose[1] - bridge_y).max(1.0);
                    let half = 0.008 * s + 0.022 * s * t;
                    if (x - (cx + nose_off * t)).abs() <= half {
                        px = [
                            (id.skin[0] * 0.82).min(1.0),
                            (id.skin[1] * 0.82).min(1.0),
                            (id.skin[2] * 0.82).min(1.0),
                        ];
                    }
                }
                // mouth band
                if in_ellipse(x, y, cx + nose_off * 0.5, mouth_y, mouth_hw, 0.035 * s) {
                    px = id.mouth;
                }
            }
            for c in 0..3 {
                img[[c, yy, xx]] = px[c];
            }
        }
    }

    let landmarks: Landmarks = [
        [cx - eye_dx, eye_y],
        [cx + eye_dx, eye_y],
        nose,
        [cx + nose_off * 0.5 - mouth_hw, mouth_y],
        [cx + nose_off * 0.5 + mouth_hw, mouth_y],
    ];

    FaceRecord {
        image: img,
        landmarks,
        face_shape_mask: mask,
        identity_id: identity,
    }
}

/// Pose implied by the drawn nose offset (handy for tests).
pub(crate) fn pose_of(face: &FaceRecord, tol: f32) -> FacePose {
    super::classify_pose(&face.landmarks, tol)
}
