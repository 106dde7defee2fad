//! Network architecture: the dual-decoder generator, the patch
//! discriminators, and the identity embedder.
//!
//! The generator is a U-Net: an encoder of strided conv blocks and two
//! mirrored decoders. The face decoder (FD) emits the glasses-removed
//! image through tanh; the segmentation decoder (SD) emits the
//! glasses/face-shape mask pair through sigmoid. Encoder features skip
//! into both decoders at matching resolutions, and each SD block's
//! output is additionally concatenated into the same-resolution FD block
//! input so the predicted segmentation guides reconstruction. Both SD
//! wiring choices are ablatable to reproduce the baseline structures.

mod disc;
mod ie;

pub use disc::{DiscriminatorConfig, PatchDiscriminator};
pub use ie::{
    arcface_ce_grads, arcface_logits, IdentityEmbedder, IdentityEmbedderConfig, EMBED_DIM,
};

use ndarray::{s, Array4, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    leaky_relu, leaky_relu_back, relu, relu_back, sigmoid, sigmoid_back, tanh_back, tanh_fwd,
    Conv2d, ConvTranspose2d, Elem, Grads, InstanceNorm2d, InstanceNormCache, ParamVisitor,
    ParamVisitorMut, Visitable,
};
use crate::{CoreError, Result};

/// Encoder LeakyReLU slope.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Channel width cap for deep configurations.
pub const MAX_CHANNELS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Number of strided encoder blocks (and decoder up blocks).
    pub depth: usize,
    /// First encoder block width; doubles per block, capped at 512.
    pub base_channels: usize,
    pub input_size: usize,
    /// Instance-wise feature normalization in every non-output block.
    pub instance_norm: bool,
    /// Concatenate SD block outputs into FD block inputs.
    pub sd_fd_skips: bool,
    /// Restrict SD to a single glasses-mask channel.
    pub glasses_mask_only: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            base_channels: 64,
            input_size: 256,
            instance_norm: true,
            sd_fd_skips: true,
            glasses_mask_only: false,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(CoreError::Config(format!(
                "generator depth must be >= 2, got {}",
                self.depth
            )));
        }
        if self.base_channels == 0 {
            return Err(CoreError::Config("base_channels must be positive".into()));
        }
        let div = 1usize << self.depth;
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(CoreError::Config(format!(
                "input_size {} not divisible by 2^depth = {div}",
                self.input_size
            )));
        }
        Ok(())
    }

    pub fn mask_channels(&self) -> usize {
        if self.glasses_mask_only {
            1
        } else {
            2
        }
    }

    /// Encoder block output widths, index 0 = first block.
    pub fn encoder_channels(&self) -> Vec<usize> {
        (0..self.depth)
            .map(|i| (self.base_channels << i).min(MAX_CHANNELS))
            .collect()
    }

    pub fn bottleneck_spatial(&self) -> usize {
        self.input_size >> self.depth
    }
}

/// `y_hat` in `[-1,1]` via tanh, `m_hat` in `[0,1]` via sigmoid.
#[derive(Debug, Clone)]
pub struct GeneratorOutput<F: Elem> {
    pub y_hat: Array4<F>,
    pub m_hat: Array4<F>,
}

#[derive(Debug, Clone)]
struct BlockCache<F: Elem> {
    input: Array4<F>,
    norm: Option<InstanceNormCache<F>>,
    pre_act: Array4<F>,
}

/// Forward activations needed for one backward pass.
pub struct GeneratorCache<F: Elem> {
    enc: Vec<BlockCache<F>>,
    sd: Vec<BlockCache<F>>,
    fd: Vec<BlockCache<F>>,
    sd_out_in: Array4<F>,
    fd_out_in: Array4<F>,
    m_hat: Array4<F>,
    y_hat: Array4<F>,
}

#[derive(Debug, Clone)]
pub struct Generator<F: Elem> {
    pub cfg: GeneratorConfig,
    enc: Vec<Conv2d<F>>,
    sd_up: Vec<ConvTranspose2d<F>>,
    fd_up: Vec<ConvTranspose2d<F>>,
    sd_out: ConvTranspose2d<F>,
    fd_out: ConvTranspose2d<F>,
    norm: InstanceNorm2d,
}

/// Per-block `(in_channels, out_channels)` pairs, exposed so tests can
/// verify the skip wiring and the ablation structures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WiringReport {
    pub enc: Vec<(usize, usize)>,
    pub sd_up: Vec<(usize, usize)>,
    pub fd_up: Vec<(usize, usize)>,
    pub sd_out: (usize, usize),
    pub fd_out: (usize, usize),
}

impl<F: Elem> Generator<F> {
    /// Build a generator; wiring is validated structurally.
    pub fn build(cfg: GeneratorConfig, rng: &mut (impl Rng + ?Sized)) -> Result<Self> {
        cfg.validate()?;
        let ch = cfg.encoder_channels();
        let d = cfg.depth;

        let mut enc = Vec::with_capacity(d);
        let mut prev = 3;
        for &c in &ch {
            enc.push(Conv2d::new(prev, c, 4, 2, 1, rng));
            prev = c;
        }

        // Up block j (1-based): output matches the encoder width at the
        // next-shallower resolution; full resolution keeps base width.
        let up_out = |j: usize| -> usize {
            if j == d {
                ch[0]
            } else {
                ch[d - 1 - j]
            }
        };
        let mut sd_up = Vec::with_capacity(d);
        let mut fd_up = Vec::with_capacity(d);
        for j in 1..=d {
            let skip_e = if j >= 2 { ch[d - j + 1 - 1] } else { 0 };
            let sd_in = if j == 1 { ch[d - 1] } else { up_out(j - 1) + skip_e };
            let fd_in = if j == 1 {
                ch[d - 1]
            } else {
                up_out(j - 1) + skip_e + if cfg.sd_fd_skips { up_out(j - 1) } else { 0 }
            };
            sd_up.push(ConvTranspose2d::new(sd_in, up_out(j), 4, 2, 1, rng));
            fd_up.push(ConvTranspose2d::new(fd_in, up_out(j), 4, 2, 1, rng));
        }

        let sd_out = ConvTranspose2d::new(ch[0], cfg.mask_channels(), 3, 1, 1, rng);
        let fd_out_in = ch[0] + if cfg.sd_fd_skips { ch[0] } else { 0 };
        let fd_out = ConvTranspose2d::new(fd_out_in, 3, 3, 1, 1, rng);

        let gen = Self {
            cfg,
            enc,
            sd_up,
            fd_up,
            sd_out,
            fd_out,
            norm: InstanceNorm2d::default(),
        };
        gen.verify_wiring()?;
        Ok(gen)
    }

    /// Recompute the expected channel composition at every block and
    /// check it against the actual layer shapes.
    pub fn verify_wiring(&self) -> Result<()> {
        let report = self.wiring();
        let ch = self.cfg.encoder_channels();
        let d = self.cfg.depth;
        let up_out = |j: usize| if j == d { ch[0] } else { ch[d - 1 - j] };

        let mut prev = 3;
        for (i, &(cin, cout)) in report.enc.iter().enumerate() {
            if cin != prev || cout != ch[i] {
                return Err(CoreError::Config(format!(
                    "encoder block {i} wiring: got {cin}->{cout}"
                )));
            }
            prev = cout;
        }
        for j in 1..=d {
            let e_skip = if j >= 2 { ch[d - j] } else { 0 };
            let expect_sd = if j == 1 { ch[d - 1] } else { up_out(j - 1) + e_skip };
            let expect_fd = if j == 1 {
                ch[d - 1]
            } else {
                up_out(j - 1)
                    + e_skip
                    + if self.cfg.sd_fd_skips { up_out(j - 1) } else { 0 }
            };
            if report.sd_up[j - 1] != (expect_sd, up_out(j)) {
                return Err(CoreError::Config(format!(
                    "segmentation up block {j}: got {:?}, expected ({expect_sd}, {})",
                    report.sd_up[j - 1],
                    up_out(j)
                )));
            }
            if report.fd_up[j - 1] != (expect_fd, up_out(j)) {
                return Err(CoreError::Config(format!(
                    "face up block {j}: got {:?}, expected ({expect_fd}, {})",
                    report.fd_up[j - 1],
                    up_out(j)
                )));
            }
        }
        let expect_fd_out = ch[0] + if self.cfg.sd_fd_skips { ch[0] } else { 0 };
        if report.fd_out != (expect_fd_out, 3) {
            return Err(CoreError::Config("face output block wiring".into()));
        }
        if report.sd_out != (ch[0], self.cfg.mask_channels()) {
            return Err(CoreError::Config("segmentation output block wiring".into()));
        }
        Ok(())
    }

    pub fn wiring(&self) -> WiringReport {
        let conv_io = |c: &Conv2d<F>| (c.w.dim().1, c.w.dim().0);
        let deconv_io = |c: &ConvTranspose2d<F>| (c.w.dim().0, c.w.dim().1);
        WiringReport {
            enc: self.enc.iter().map(conv_io).collect(),
            sd_up: self.sd_up.iter().map(deconv_io).collect(),
            fd_up: self.fd_up.iter().map(deconv_io).collect(),
            sd_out: deconv_io(&self.sd_out),
            fd_out: deconv_io(&self.fd_out),
        }
    }

    fn down_forward(&self, conv: &Conv2d<F>, x: &Array4<F>) -> (Array4<F>, BlockCache<F>) {
        let z = conv.forward(x);
        let (pre, norm) = if self.cfg.instance_norm {
            let (n, c) = self.norm.forward(&z);
            (n, Some(c))
        } else {
            (z, None)
        };
        let out = leaky_relu(&pre, F::from_f(LEAKY_SLOPE));
        (
            out,
            BlockCache {
                input: x.clone(),
                norm,
                pre_act: pre,
            },
        )
    }

    fn up_forward(&self, deconv: &ConvTranspose2d<F>, x: &Array4<F>) -> (Array4<F>, BlockCache<F>) {
        let z = deconv.forward(x);
        let (pre, norm) = if self.cfg.instance_norm {
            let (n, c) = self.norm.forward(&z);
            (n, Some(c))
        } else {
            (z, None)
        };
        let out = relu(&pre);
        (
            out,
            BlockCache {
                input: x.clone(),
                norm,
                pre_act: pre,
            },
        )
    }

    /// Forward pass keeping everything backward needs.
    pub fn forward_t(&self, x: &Array4<F>) -> Result<(GeneratorOutput<F>, GeneratorCache<F>)> {
        let (n, c, h, w) = x.dim();
        if c != 3 || h != self.cfg.input_size || w != self.cfg.input_size {
            return Err(CoreError::Shape(format!(
                "generator expects [{n},3,{0},{0}], got [{n},{c},{h},{w}]",
                self.cfg.input_size
            )));
        }
        let d = self.cfg.depth;

        let mut enc_caches = Vec::with_capacity(d);
        let mut e_out = Vec::with_capacity(d);
        let mut cur = x.clone();
        for conv in &self.enc {
            let (out, cache) = self.down_forward(conv, &cur);
            enc_caches.push(cache);
            e_out.push(out.clone());
            cur = out;
        }

        let cat = |parts: &[&Array4<F>]| -> Array4<F> {
            let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
            let joined = ndarray::concatenate(Axis(1), &views).expect("channel concat");
            // concatenate along axis 1 yields a permuted layout; the conv
            // kernels flatten per-item planes, so normalize once here
            if joined.is_standard_layout() {
                joined
            } else {
                joined.as_standard_layout().to_owned()
            }
        };

        let mut sd_caches = Vec::with_capacity(d);
        let mut fd_caches = Vec::with_capacity(d);
        let mut s_out: Vec<Array4<F>> = Vec::with_capacity(d);
        let mut f_out: Vec<Array4<F>> = Vec::with_capacity(d);
        for j in 1..=d {
            let sd_in = if j == 1 {
                e_out[d - 1].clone()
            } else {
                cat(&[&s_out[j - 2], &e_out[d - j]])
            };
            let (s, c) = self.up_forward(&self.sd_up[j - 1], &sd_in);
            sd_caches.push(c);
            s_out.push(s);

            let fd_in = if j == 1 {
                e_out[d - 1].clone()
            } else if self.cfg.sd_fd_skips {
                cat(&[&f_out[j - 2], &e_out[d - j], &s_out[j - 2]])
            } else {
                cat(&[&f_out[j - 2], &e_out[d - j]])
            };
            let (f, c) = self.up_forward(&self.fd_up[j - 1], &fd_in);
            fd_caches.push(c);
            f_out.push(f);
        }

        let sd_out_in = s_out[d - 1].clone();
        let m_hat = sigmoid(&self.sd_out.forward(&sd_out_in));

        let fd_out_in = if self.cfg.sd_fd_skips {
            cat(&[&f_out[d - 1], &s_out[d - 1]])
        } else {
            f_out[d - 1].clone()
        };
        let y_hat = tanh_fwd(&self.fd_out.forward(&fd_out_in));

        Ok((
            GeneratorOutput {
                y_hat: y_hat.clone(),
                m_hat: m_hat.clone(),
            },
            GeneratorCache {
                enc: enc_caches,
                sd: sd_caches,
                fd: fd_caches,
                sd_out_in,
                fd_out_in,
                m_hat,
                y_hat,
            },
        ))
    }

    /// Inference forward.
    pub fn forward(&self, x: &Array4<F>) -> Result<GeneratorOutput<F>> {
        Ok(self.forward_t(x)?.0)
    }

    fn up_backward(
        &self,
        name: &str,
        deconv: &ConvTranspose2d<F>,
        cache: &BlockCache<F>,
        d_out: &Array4<F>,
        grads: &mut Grads<F>,
    ) -> Array4<F> {
        let d_pre = relu_back(&cache.pre_act, d_out);
        let d_z = match &cache.norm {
            Some(nc) => self.norm.backward(nc, &d_pre),
            None => d_pre,
        };
        let (dx, dw, db) = deconv.backward(&cache.input, &d_z, true);
        grads.add(&format!("{name}.w"), dw.into_dyn());
        grads.add(&format!("{name}.b"), db.into_dyn());
        dx.expect("dx requested")
    }

    /// Backward from gradients on the two heads; returns parameter grads.
    pub fn backward(
        &self,
        cache: &GeneratorCache<F>,
        d_y_hat: &Array4<F>,
        d_m_hat: &Array4<F>,
    ) -> Grads<F> {
        let d = self.cfg.depth;
        let ch = self.cfg.encoder_channels();
        let mut grads = Grads::new();

        let add_to = |acc: &mut Option<Array4<F>>, delta: Array4<F>| match acc {
            Some(a) => *a += &delta,
            None => *acc = Some(delta),
        };

        // gradient buckets w.r.t. block outputs
        let mut d_e: Vec<Option<Array4<F>>> = vec![None; d];
        let mut d_s: Vec<Option<Array4<F>>> = vec![None; d];
        let mut d_f: Vec<Option<Array4<F>>> = vec![None; d];

        // face output block
        let d_tanh = tanh_back(&cache.y_hat, d_y_hat);
        let (dx, dw, db) = self.fd_out.backward(&cache.fd_out_in, &d_tanh, true);
        grads.add("fd_out.w", dw.into_dyn());
        grads.add("fd_out.b", db.into_dyn());
        let dx = dx.unwrap();
        if self.cfg.sd_fd_skips {
            let b = ch[0];
            add_to(&mut d_f[d - 1], dx.slice(s![.., ..b, .., ..]).to_owned());
            add_to(&mut d_s[d - 1], dx.slice(s![.., b.., .., ..]).to_owned());
        } else {
            add_to(&mut d_f[d - 1], dx);
        }

        // segmentation output block
        let d_sig = sigmoid_back(&cache.m_hat, d_m_hat);
        let (dx, dw, db) = self.sd_out.backward(&cache.sd_out_in, &d_sig, true);
        grads.add("sd_out.w", dw.into_dyn());
        grads.add("sd_out.b", db.into_dyn());
        add_to(&mut d_s[d - 1], dx.unwrap());

        // decoders, deepest-resolution block last
        for j in (1..=d).rev() {
            let e_idx = d - j; // encoder skip feeding block j (j >= 2)

            let d_fj = d_f[j - 1].take().expect("face decoder grad");
            let dx = self.up_backward(
                &format!("fd_up{j}"),
                &self.fd_up[j - 1],
                &cache.fd[j - 1],
                &d_fj,
                &mut grads,
            );
            if j == 1 {
                add_to(&mut d_e[d - 1], dx);
            } else {
                let c_prev = self.fd_up[j - 2].w.dim().1;
                let c_skip = ch[e_idx];
                add_to(&mut d_f[j - 2], dx.slice(s![.., ..c_prev, .., ..]).to_owned());
                add_to(
                    &mut d_e[e_idx],
                    dx.slice(s![.., c_prev..c_prev + c_skip, .., ..]).to_owned(),
                );
                if self.cfg.sd_fd_skips {
                    add_to(
                        &mut d_s[j - 2],
                        dx.slice(s![.., c_prev + c_skip.., .., ..]).to_owned(),
                    );
                }
            }

            let d_sj = d_s[j - 1].take().expect("segmentation decoder grad");
            let dx = self.up_backward(
                &format!("sd_up{j}"),
                &self.sd_up[j - 1],
                &cache.sd[j - 1],
                &d_sj,
                &mut grads,
            );
            if j == 1 {
                add_to(&mut d_e[d - 1], dx);
            } else {
                let c_prev = self.sd_up[j - 2].w.dim().1;
                add_to(&mut d_s[j - 2], dx.slice(s![.., ..c_prev, .., ..]).to_owned());
                add_to(&mut d_e[e_idx], dx.slice(s![.., c_prev.., .., ..]).to_owned());
            }
        }

        // encoder chain
        for i in (0..d).rev() {
            let d_out = d_e[i].take().expect("encoder grad");
            let cache_i = &cache.enc[i];
            let d_pre = leaky_relu_back(&cache_i.pre_act, &d_out, F::from_f(LEAKY_SLOPE));
            let d_z = match &cache_i.norm {
                Some(nc) => self.norm.backward(nc, &d_pre),
                None => d_pre,
            };
            let need_dx = i > 0;
            let (dx, dw, db) = self.enc[i].backward(&cache_i.input, &d_z, need_dx);
            grads.add(&format!("enc{}.w", i + 1), dw.into_dyn());
            grads.add(&format!("enc{}.b", i + 1), db.into_dyn());
            if let Some(dx) = dx {
                add_to(&mut d_e[i - 1], dx);
            }
        }

        grads
    }
}

impl<F: Elem> Visitable<F> for Generator<F> {
    fn visit<'a>(&'a self, f: &mut ParamVisitor<'a, F>) {
        for (i, c) in self.enc.iter().enumerate() {
            f(&format!("enc{}.w", i + 1), c.w.view().into_dyn());
            f(&format!("enc{}.b", i + 1), c.b.view().into_dyn());
        }
        for (j, c) in self.sd_up.iter().enumerate() {
            f(&format!("sd_up{}.w", j + 1), c.w.view().into_dyn());
            f(&format!("sd_up{}.b", j + 1), c.b.view().into_dyn());
        }
        for (j, c) in self.fd_up.iter().enumerate() {
            f(&format!("fd_up{}.w", j + 1), c.w.view().into_dyn());
            f(&format!("fd_up{}.b", j + 1), c.b.view().into_dyn());
        }
        f("sd_out.w", self.sd_out.w.view().into_dyn());
        f("sd_out.b", self.sd_out.b.view().into_dyn());
        f("fd_out.w", self.fd_out.w.view().into_dyn());
        f("fd_out.b", self.fd_out.b.view().into_dyn());
    }

    fn visit_mut<'a>(&'a mut self, f: &mut ParamVisitorMut<'a, F>) {
        for (i, c) in self.enc.iter_mut().enumerate() {
            f(&format!("enc{}.w", i + 1), c.w.view_mut().into_dyn());
            f(&format!("enc{}.b", i + 1), c.b.view_mut().into_dyn());
        }
        for (j, c) in self.sd_up.iter_mut().enumerate() {
            f(&format!("sd_up{}.w", j + 1), c.w.view_mut().into_dyn());
            f(&format!("sd_up{}.b", j + 1), c.b.view_mut().into_dyn());
        }
        for (j, c) in self.fd_up.iter_mut().enumerate() {
            f(&format!("fd_up{}.w", j + 1), c.w.view_mut().into_dyn());
            f(&format!("fd_up{}.b", j + 1), c.b.view_mut().into_dyn());
        }
        f("sd_out.w", self.sd_out.w.view_mut().into_dyn());
        f("sd_out.b", self.sd_out.b.view_mut().into_dyn());
        f("fd_out.w", self.fd_out.w.view_mut().into_dyn());
        f("fd_out.b", self.fd_out.b.view_mut().into_dyn());
    }
}

/// Apply named parameter arrays onto a freshly built net.
pub fn load_params<F: Elem, N: Visitable<F>>(
    net: &mut N,
    params: &[(String, ndarray::ArrayD<F>)],
) -> Result<()> {
    let map: std::collections::HashMap<&str, &ndarray::ArrayD<F>> =
        params.iter().map(|(n, a)| (n.as_str(), a)).collect();
    let mut missing = Vec::new();
    let mut bad_shape = Vec::new();
    net.visit_mut(&mut |name, mut view: ArrayViewMutD<F>| match map.get(name) {
        Some(arr) => {
            if arr.shape() == view.shape() {
                view.assign(arr);
            } else {
                bad_shape.push(name.to_string());
            }
        }
        None => missing.push(name.to_string()),
    });
    if !missing.is_empty() || !bad_shape.is_empty() {
        return Err(CoreError::Checkpoint(format!(
            "parameter mismatch: missing {missing:?}, bad shapes {bad_shape:?}"
        )));
    }
    Ok(())
}

/// Snapshot named parameters into owned arrays.
pub fn dump_params<F: Elem, N: Visitable<F>>(net: &N) -> Vec<(String, ndarray::ArrayD<F>)> {
    let mut out = Vec::new();
    net.visit(&mut |name, view: ArrayViewD<F>| {
        out.push((name.to_string(), view.to_owned()));
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::numeric_grad;
    use ndarray::ArrayD;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn small_cfg() -> GeneratorConfig {
        GeneratorConfig {
            depth: 3,
            base_channels: 4,
            input_size: 16,
            ..GeneratorConfig::default()
        }
    }

    fn sample_input(n: usize, size: usize, seed: usize) -> Array4<f64> {
        Array4::from_shape_fn((n, 3, size, size), |(b, c, y, x)| {
            (((b * 97 + c * 31 + y * 7 + x * 3 + seed) % 41) as f64 / 20.0) - 1.0
        })
    }

    #[test]
    fn config_validation() {
        assert!(GeneratorConfig::default().validate().is_ok());
        assert!(GeneratorConfig {
            depth: 1,
            ..small_cfg()
        }
        .validate()
        .is_err());
        assert!(GeneratorConfig {
            input_size: 20,
            ..small_cfg()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn bottleneck_size_matches_depth() {
        let cfg = GeneratorConfig::default();
        assert_eq!(cfg.bottleneck_spatial(), 8); // 256 / 2^5
    }

    #[test]
    fn forward_shapes_and_ranges() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let gen = Generator::<f64>::build(small_cfg(), &mut rng).unwrap();
        let x = sample_input(2, 16, 0);
        let out = gen.forward(&x).unwrap();
        assert_eq!(out.y_hat.dim(), (2, 3, 16, 16));
        assert_eq!(out.m_hat.dim(), (2, 2, 16, 16));
        assert!(out.y_hat.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(out.m_hat.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn wrong_input_size_is_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let gen = Generator::<f64>::build(small_cfg(), &mut rng).unwrap();
        let x = sample_input(1, 8, 0);
        assert!(gen.forward(&x).is_err());
    }

    #[test]
    fn batch_items_are_independent() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let gen = Generator::<f64>::build(small_cfg(), &mut rng).unwrap();
        let one = sample_input(1, 16, 3);
        let mut two = Array4::zeros((2, 3, 16, 16));
        two.index_axis_mut(Axis(0), 0).assign(&one.index_axis(Axis(0), 0));
        two.index_axis_mut(Axis(0), 1).assign(&one.index_axis(Axis(0), 0));
        let o1 = gen.forward(&one).unwrap();
        let o2 = gen.forward(&two).unwrap();
        for i in 0..2 {
            assert_eq!(
                o1.y_hat.index_axis(Axis(0), 0),
                o2.y_hat.index_axis(Axis(0), i)
            );
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let gen = Generator::<f64>::build(small_cfg(), &mut rng).unwrap();
        let x = Array4::zeros((1, 3, 16, 16));
        let a = gen.forward(&x).unwrap();
        let b = gen.forward(&x).unwrap();
        assert_eq!(a.y_hat, b.y_hat);
        assert_eq!(a.m_hat, b.m_hat);
    }

    #[test]
    fn ablation_structures() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        // Experiment A: glasses mask only, no decoder cross-skips.
        let a = Generator::<f64>::build(
            GeneratorConfig {
                sd_fd_skips: false,
                glasses_mask_only: true,
                ..small_cfg()
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(a.wiring().sd_out.1, 1);
        // Experiment B: both masks, still no cross-skips.
        let b = Generator::<f64>::build(
            GeneratorConfig {
                sd_fd_skips: false,
                ..small_cfg()
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(b.wiring().sd_out.1, 2);
        // Full model's FD blocks see prev + encoder skip + SD skip.
        let full = Generator::<f64>::build(small_cfg(), &mut rng).unwrap();
        let wf = full.wiring();
        let wb = b.wiring();
        for j in 1..wf.fd_up.len() {
            let sd_width = wf.sd_up[j - 1].1;
            assert_eq!(wf.fd_up[j].0, wb.fd_up[j].0 + sd_width, "block {j}");
        }
        let m1 = a.forward(&sample_input(1, 16, 1)).unwrap().m_hat;
        assert_eq!(m1.dim().1, 1);
    }

    #[test]
    fn full_generator_gradcheck_tiny() {
        // End-to-end wiring check: analytic parameter gradients vs
        // finite differences on a minimal config.
        let cfg = GeneratorConfig {
            depth: 2,
            base_channels: 2,
            input_size: 8,
            ..GeneratorConfig::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let gen = Generator::<f64>::build(cfg, &mut rng).unwrap();
        let x = sample_input(2, 8, 7);

        let loss_of = |g: &Generator<f64>| {
            let out = g.forward(&x).unwrap();
            // mix both heads so every parameter participates
            out.y_hat.mapv(|v| v * v).sum() * 0.5 + out.m_hat.mapv(|v| v * v).sum() * 0.25
        };

        let (out, cache) = gen.forward_t(&x).unwrap();
        let d_y = out.y_hat.mapv(|v| v);
        let d_m = out.m_hat.mapv(|v| v * 0.5);
        let grads = gen.backward(&cache, &d_y, &d_m);

        for name in gen.param_names() {
            let analytic = grads.get(&name).expect("grad for every param").clone();
            let probe = gen.clone();
            let base: ArrayD<f64> = {
                let mut out = None;
                probe.visit(&mut |n, v| {
                    if n == name {
                        out = Some(v.to_owned());
                    }
                });
                out.unwrap()
            };
            let numeric = numeric_grad(&base, |p| {
                let mut g2 = probe.clone();
                g2.visit_mut(&mut |n, mut v| {
                    if n == name {
                        v.assign(p);
                    }
                });
                loss_of(&g2)
            });
            let max_err = (&analytic - &numeric)
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()));
            assert!(max_err < 2e-4, "param {name}: max abs err {max_err}");
        }
    }

    #[test]
    fn gradient_flow_reaches_every_parameter() {
        let mut rng = ChaCha12Rng::seed_from_u64(16);
        let gen = Generator::<f64>::build(small_cfg(), &mut rng).unwrap();
        let x = sample_input(2, 16, 5);
        let (out, cache) = gen.forward_t(&x).unwrap();

        // loss on y_hat reaches encoder + face decoder (and, through the
        // cross skips, the segmentation decoder as well)
        let d_y = Array4::from_elem(out.y_hat.raw_dim(), 1.0 / out.y_hat.len() as f64);
        let d_m0 = Array4::zeros(out.m_hat.raw_dim());
        let g1 = gen.backward(&cache, &d_y, &d_m0);
        for name in gen.param_names() {
            if name.starts_with("enc") || name.starts_with("fd") {
                let g = g1.get(&name).unwrap();
                assert!(
                    g.iter().any(|v| *v != 0.0),
                    "no y_hat gradient in {name}"
                );
            }
        }

        // loss on m_hat reaches encoder + segmentation decoder
        let d_y0 = Array4::zeros(out.y_hat.raw_dim());
        let d_m = Array4::from_elem(out.m_hat.raw_dim(), 1.0 / out.m_hat.len() as f64);
        let g2 = gen.backward(&cache, &d_y0, &d_m);
        for name in gen.param_names() {
            if name.starts_with("enc") || name.starts_with("sd") {
                let g = g2.get(&name).unwrap();
                assert!(
                    g.iter().any(|v| *v != 0.0),
                    "no m_hat gradient in {name}"
                );
            }
        }
    }
}
