use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    leaky_relu, leaky_relu_back, Conv2d, Elem, Grads, InstanceNorm2d, InstanceNormCache,
    ParamVisitor, ParamVisitorMut, Visitable,
};
use crate::{CoreError, Result};

use super::{LEAKY_SLOPE, MAX_CHANNELS};

/// Patch discriminator: `n_strided` stride-2 conv blocks, two stride-1
/// blocks, and a raw 1-channel score map output (least-squares GAN
/// operates on unsquashed scores). The default reproduces the common
/// 70x70-receptive-field configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub n_strided: usize,
    pub instance_norm: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_channels: 64,
            n_strided: 3,
            instance_norm: true,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_strided == 0 || self.base_channels == 0 || self.in_channels == 0 {
            return Err(CoreError::Config("discriminator config fields must be positive".into()));
        }
        Ok(())
    }

    /// Side length of one patch's receptive field.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1usize;
        let mut jump = 1usize;
        for _ in 0..self.n_strided {
            rf += 3 * jump;
            jump *= 2;
        }
        rf + 3 * jump + 3 * jump // two stride-1 k4 layers
    }
}

#[derive(Debug, Clone)]
pub struct PatchDiscriminator<F: Elem> {
    pub cfg: DiscriminatorConfig,
    convs: Vec<Conv2d<F>>,
    norm: InstanceNorm2d,
}

pub struct DiscCache<F: Elem> {
    inputs: Vec<Array4<F>>,
    norms: Vec<Option<InstanceNormCache<F>>>,
    pre_acts: Vec<Array4<F>>,
}

impl<F: Elem> PatchDiscriminator<F> {
    pub fn build(cfg: DiscriminatorConfig, rng: &mut (impl Rng + ?Sized)) -> Result<Self> {
        cfg.validate()?;
        let mut convs = Vec::new();
        let mut prev = cfg.in_channels;
        let mut width = cfg.base_channels;
        for _ in 0..cfg.n_strided {
            convs.push(Conv2d::new(prev, width, 4, 2, 1, rng));
            prev = width;
            width = (width * 2).min(MAX_CHANNELS);
        }
        convs.push(Conv2d::new(prev, width, 4, 1, 1, rng));
        convs.push(Conv2d::new(width, 1, 4, 1, 1, rng));
        Ok(Self {
            cfg,
            convs,
            norm: InstanceNorm2d::default(),
        })
    }

    /// Score-map spatial size for a given input size.
    pub fn score_spatial(&self, mut size: usize) -> usize {
        for c in &self.convs {
            size = crate::nn::conv_out_len(size, 4, c.stride, c.pad);
        }
        size
    }

    pub fn forward_t(&self, x: &Array4<F>) -> (Array4<F>, DiscCache<F>) {
        let n_layers = self.convs.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut norms = Vec::with_capacity(n_layers);
        let mut pre_acts = Vec::with_capacity(n_layers);
        let mut cur = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            inputs.push(cur.clone());
            let z = conv.forward(&cur);
            let last = i == n_layers - 1;
            // first block and final score layer have no normalization
            let normed = if !last && i > 0 && self.cfg.instance_norm {
                let (y, c) = self.norm.forward(&z);
                norms.push(Some(c));
                y
            } else {
                norms.push(None);
                z
            };
            if last {
                pre_acts.push(normed.clone());
                cur = normed; // raw scores
            } else {
                pre_acts.push(normed.clone());
                cur = leaky_relu(&normed, F::from_f(LEAKY_SLOPE));
            }
        }
        (
            cur,
            DiscCache {
                inputs,
                norms,
                pre_acts,
            },
        )
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        self.forward_t(x).0
    }

    /// Backward; parameter grads are optional so the generator update can
    /// cheaply pull only the input gradient through a frozen critic.
    pub fn backward(
        &self,
        cache: &DiscCache<F>,
        d_scores: &Array4<F>,
        want_param_grads: bool,
    ) -> (Array4<F>, Grads<F>) {
        let n_layers = self.convs.len();
        let mut grads = Grads::new();
        let mut d_cur = d_scores.clone();
        for i in (0..n_layers).rev() {
            let last = i == n_layers - 1;
            if !last {
                d_cur = leaky_relu_back(&cache.pre_acts[i], &d_cur, F::from_f(LEAKY_SLOPE));
            }
            if let Some(nc) = &cache.norms[i] {
                d_cur = self.norm.backward(nc, &d_cur);
            }
            let (dx, dw, db) = self.convs[i].backward(&cache.inputs[i], &d_cur, true);
            if want_param_grads {
                grads.add(&format!("conv{i}.w"), dw.into_dyn());
                grads.add(&format!("conv{i}.b"), db.into_dyn());
            }
            d_cur = dx.expect("dx requested");
        }
        (d_cur, grads)
    }
}

impl<F: Elem> Visitable<F> for PatchDiscriminator<F> {
    fn visit<'a>(&'a self, f: &mut ParamVisitor<'a, F>) {
        for (i, c) in self.convs.iter().enumerate() {
            f(&format!("conv{i}.w"), c.w.view().into_dyn());
            f(&format!("conv{i}.b"), c.b.view().into_dyn());
        }
    }

    fn visit_mut<'a>(&'a mut self, f: &mut ParamVisitorMut<'a, F>) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            f(&format!("conv{i}.w"), c.w.view_mut().into_dyn());
            f(&format!("conv{i}.b"), c.b.view_mut().into_dyn());
        }
    }
}
