use ndarray::{Array2, Array4, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    leaky_relu, leaky_relu_back, Conv2d, Elem, Grads, InstanceNorm2d, InstanceNormCache, Linear,
    ParamVisitor, ParamVisitorMut, Visitable,
};
use crate::{CoreError, Result};

use super::LEAKY_SLOPE;

/// Identity embeddings are fixed at 512 dimensions.
pub const EMBED_DIM: usize = 512;

/// Residual embedder: stem conv plus four downsampling residual stages,
/// global average pooling, and a linear projection to 512 dimensions.
/// A desk-scale stand-in for a large pretrained face classifier; the
/// interface (512-d vector, frozen during generator training) is what
/// the rest of the system relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityEmbedderConfig {
    pub input_size: usize,
    pub base_channels: usize,
}

impl Default for IdentityEmbedderConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            base_channels: 16,
        }
    }
}

const STAGES: usize = 4;

impl IdentityEmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        let div = 1usize << STAGES;
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(CoreError::Config(format!(
                "embedder input_size {} must be divisible by {div}",
                self.input_size
            )));
        }
        if self.base_channels == 0 {
            return Err(CoreError::Config("embedder base_channels must be positive".into()));
        }
        Ok(())
    }

    pub fn stage_channels(&self) -> Vec<usize> {
        (1..=STAGES).map(|i| self.base_channels << i).collect()
    }
}

#[derive(Debug, Clone)]
struct ResStage<F: Elem> {
    conv1: Conv2d<F>,
    conv2: Conv2d<F>,
    skip: Conv2d<F>,
}

#[derive(Debug, Clone)]
pub struct IdentityEmbedder<F: Elem> {
    pub cfg: IdentityEmbedderConfig,
    stem: Conv2d<F>,
    stages: Vec<ResStage<F>>,
    fc: Linear<F>,
    norm: InstanceNorm2d,
}

struct StageCache<F: Elem> {
    input: Array4<F>,
    n1: InstanceNormCache<F>,
    h1_pre: Array4<F>,
    h1: Array4<F>,
    n2: InstanceNormCache<F>,
    nskip: InstanceNormCache<F>,
    sum_pre: Array4<F>,
}

pub struct EmbedCache<F: Elem> {
    x: Array4<F>,
    stem_norm: InstanceNormCache<F>,
    stem_pre: Array4<F>,
    stages: Vec<StageCache<F>>,
    pooled_in_spatial: (usize, usize),
    pooled: Array2<F>,
}

impl<F: Elem> IdentityEmbedder<F> {
    pub fn build(cfg: IdentityEmbedderConfig, rng: &mut (impl Rng + ?Sized)) -> Result<Self> {
        cfg.validate()?;
        let ch = cfg.stage_channels();
        let stem = Conv2d::new(3, cfg.base_channels, 3, 1, 1, rng);
        let mut stages = Vec::with_capacity(STAGES);
        let mut prev = cfg.base_channels;
        for &c in &ch {
            stages.push(ResStage {
                conv1: Conv2d::new(prev, c, 3, 2, 1, rng),
                conv2: Conv2d::new(c, c, 3, 1, 1, rng),
                skip: Conv2d::new(prev, c, 1, 2, 0, rng),
            });
            prev = c;
        }
        let fc = Linear::new(prev, EMBED_DIM, rng);
        Ok(Self {
            cfg,
            stem,
            stages,
            fc,
            norm: InstanceNorm2d::default(),
        })
    }

    pub fn forward_t(&self, x: &Array4<F>) -> Result<(Array2<F>, EmbedCache<F>)> {
        let (_, c, h, w) = x.dim();
        if c != 3 || h != self.cfg.input_size || w != self.cfg.input_size {
            return Err(CoreError::Shape(format!(
                "embedder expects [n,3,{0},{0}], got [?,{c},{h},{w}]",
                self.cfg.input_size
            )));
        }
        let slope = F::from_f(LEAKY_SLOPE);

        let z = self.stem.forward(x);
        let (stem_pre, stem_norm) = self.norm.forward(&z);
        let mut cur = leaky_relu(&stem_pre, slope);

        let mut stage_caches = Vec::with_capacity(self.stages.len());
        for st in &self.stages {
            let input = cur.clone();
            let (h1_pre, n1) = self.norm.forward(&st.conv1.forward(&input));
            let h1 = leaky_relu(&h1_pre, slope);
            let (h2, n2) = self.norm.forward(&st.conv2.forward(&h1));
            let (sk, nskip) = self.norm.forward(&st.skip.forward(&input));
            let sum_pre = &h2 + &sk;
            cur = leaky_relu(&sum_pre, slope);
            stage_caches.push(StageCache {
                input,
                n1,
                h1_pre,
                h1,
                n2,
                nskip,
                sum_pre,
            });
        }

        let (n, cc, hh, ww) = cur.dim();
        let area = F::from_f((hh * ww) as f64);
        let mut pooled = Array2::<F>::zeros((n, cc));
        for i in 0..n {
            for ch in 0..cc {
                let plane = cur.index_axis(Axis(0), i);
                pooled[[i, ch]] = plane.index_axis(Axis(0), ch).sum() / area;
            }
        }
        let emb = self.fc.forward(&pooled);
        Ok((
            emb,
            EmbedCache {
                x: x.clone(),
                stem_norm,
                stem_pre,
                stages: stage_caches,
                pooled_in_spatial: (hh, ww),
                pooled,
            },
        ))
    }

    pub fn forward(&self, x: &Array4<F>) -> Result<Array2<F>> {
        Ok(self.forward_t(x)?.0)
    }

    /// Backward to the input image; parameter grads only when training
    /// the embedder itself (it is frozen inside generator training).
    pub fn backward(
        &self,
        cache: &EmbedCache<F>,
        d_emb: &Array2<F>,
        want_param_grads: bool,
    ) -> (Array4<F>, Grads<F>) {
        let slope = F::from_f(LEAKY_SLOPE);
        let mut grads = Grads::new();

        let (d_pooled, dw_fc, db_fc) = self.fc.backward(&cache.pooled, d_emb);
        if want_param_grads {
            grads.add("fc.w", dw_fc.into_dyn());
            grads.add("fc.b", db_fc.into_dyn());
        }

        let (hh, ww) = cache.pooled_in_spatial;
        let (n, cc) = d_pooled.dim();
        let area = F::from_f((hh * ww) as f64);
        let mut d_cur = Array4::<F>::zeros((n, cc, hh, ww));
        for i in 0..n {
            for ch in 0..cc {
                let v = d_pooled[[i, ch]] / area;
                d_cur
                    .index_axis_mut(Axis(0), i)
                    .index_axis_mut(Axis(0), ch)
                    .fill(v);
            }
        }

        for (idx, st) in self.stages.iter().enumerate().rev() {
            let c = &cache.stages[idx];
            let d_sum = leaky_relu_back(&c.sum_pre, &d_cur, slope);

            // main branch
            let d_h2 = self.norm.backward(&c.n2, &d_sum);
            let (d_h1_post, dw2, db2) = {
                let (dx, dw, db) = st.conv2.backward(&c.h1, &d_h2, true);
                (dx.unwrap(), dw, db)
            };
            let d_h1_pre = leaky_relu_back(&c.h1_pre, &d_h1_post, slope);
            let d_z1 = self.norm.backward(&c.n1, &d_h1_pre);
            let (dx_main, dw1, db1) = {
                let (dx, dw, db) = st.conv1.backward(&c.input, &d_z1, true);
                (dx.unwrap(), dw, db)
            };

            // skip branch
            let d_sk = self.norm.backward(&c.nskip, &d_sum);
            let (dx_skip, dws, dbs) = {
                let (dx, dw, db) = st.skip.backward(&c.input, &d_sk, true);
                (dx.unwrap(), dw, db)
            };

            if want_param_grads {
                grads.add(&format!("stage{idx}.conv1.w"), dw1.into_dyn());
                grads.add(&format!("stage{idx}.conv1.b"), db1.into_dyn());
                grads.add(&format!("stage{idx}.conv2.w"), dw2.into_dyn());
                grads.add(&format!("stage{idx}.conv2.b"), db2.into_dyn());
                grads.add(&format!("stage{idx}.skip.w"), dws.into_dyn());
                grads.add(&format!("stage{idx}.skip.b"), dbs.into_dyn());
            }
            d_cur = dx_main + dx_skip;
        }

        let d_stem_post = leaky_relu_back(&cache.stem_pre, &d_cur, slope);
        let d_z = self.norm.backward(&cache.stem_norm, &d_stem_post);
        let (dx, dw, db) = self.stem.backward(&cache.x, &d_z, true);
        if want_param_grads {
            grads.add("stem.w", dw.into_dyn());
            grads.add("stem.b", db.into_dyn());
        }
        (dx.unwrap(), grads)
    }
}

impl<F: Elem> Visitable<F> for IdentityEmbedder<F> {
    fn visit<'a>(&'a self, f: &mut ParamVisitor<'a, F>) {
        f("stem.w", self.stem.w.view().into_dyn());
        f("stem.b", self.stem.b.view().into_dyn());
        for (i, st) in self.stages.iter().enumerate() {
            f(&format!("stage{i}.conv1.w"), st.conv1.w.view().into_dyn());
            f(&format!("stage{i}.conv1.b"), st.conv1.b.view().into_dyn());
            f(&format!("stage{i}.conv2.w"), st.conv2.w.view().into_dyn());
            f(&format!("stage{i}.conv2.b"), st.conv2.b.view().into_dyn());
            f(&format!("stage{i}.skip.w"), st.skip.w.view().into_dyn());
            f(&format!("stage{i}.skip.b"), st.skip.b.view().into_dyn());
        }
        f("fc.w", self.fc.w.view().into_dyn());
        f("fc.b", self.fc.b.view().into_dyn());
    }

    fn visit_mut<'a>(&'a mut self, f: &mut ParamVisitorMut<'a, F>) {
        f("stem.w", self.stem.w.view_mut().into_dyn());
        f("stem.b", self.stem.b.view_mut().into_dyn());
        for (i, st) in self.stages.iter_mut().enumerate() {
            f(&format!("stage{i}.conv1.w"), st.conv1.w.view_mut().into_dyn());
            f(&format!("stage{i}.conv1.b"), st.conv1.b.view_mut().into_dyn());
            f(&format!("stage{i}.conv2.w"), st.conv2.w.view_mut().into_dyn());
            f(&format!("stage{i}.conv2.b"), st.conv2.b.view_mut().into_dyn());
            f(&format!("stage{i}.skip.w"), st.skip.w.view_mut().into_dyn());
            f(&format!("stage{i}.skip.b"), st.skip.b.view_mut().into_dyn());
        }
        f("fc.w", self.fc.w.view_mut().into_dyn());
        f("fc.b", self.fc.b.view_mut().into_dyn());
    }
}

fn normalize_rows<F: Elem>(m: &Array2<F>, what: &str) -> Result<(Array2<F>, Vec<F>)> {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.nrows());
    for mut row in out.rows_mut() {
        let norm = row.iter().fold(F::zero(), |a, &v| a + v * v).sqrt();
        if norm.into_f() < 1e-12 {
            return Err(CoreError::Eval(format!("zero-norm {what} row")));
        }
        row.mapv_inplace(|v| v / norm);
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Additive-angular-margin logits:
/// `scale * cos(theta_c + margin * [c == target])` over L2-normalized
/// embeddings and class weights.
pub fn arcface_logits<F: Elem>(
    emb: &Array2<F>,
    class_weights: &Array2<F>,
    targets: &[usize],
    margin: f64,
    scale: f64,
) -> Result<Array2<F>> {
    if emb.ncols() != class_weights.ncols() {
        return Err(CoreError::Shape(
            "embedding and class weight dims differ".into(),
        ));
    }
    if targets.len() != emb.nrows() {
        return Err(CoreError::Shape("one target per embedding row".into()));
    }
    let (u, _) = normalize_rows(emb, "embedding")?;
    let (v, _) = normalize_rows(class_weights, "class weight")?;
    let mut cos = u.dot(&v.t());
    let one = F::one();
    cos.mapv_inplace(|c| c.min(one).max(-one));

    let cos_m = F::from_f(margin.cos());
    let sin_m = F::from_f(margin.sin());
    let s = F::from_f(scale);
    let mut logits = cos.clone();
    for (i, &t) in targets.iter().enumerate() {
        if t >= class_weights.nrows() {
            return Err(CoreError::Config(format!("target {t} out of range")));
        }
        let c = cos[[i, t]];
        let sin = (one - c * c).max(F::zero()).sqrt();
        logits[[i, t]] = c * cos_m - sin * sin_m;
    }
    logits.mapv_inplace(|v| v * s);
    Ok(logits)
}

/// Mean softmax cross entropy over arcface logits, plus analytic
/// gradients w.r.t. the raw embeddings and class weights.
pub fn arcface_ce_grads<F: Elem>(
    emb: &Array2<F>,
    class_weights: &Array2<F>,
    targets: &[usize],
    margin: f64,
    scale: f64,
) -> Result<(F, Array2<F>, Array2<F>)> {
    let n = emb.nrows();
    let (u, e_norms) = normalize_rows(emb, "embedding")?;
    let (v, w_norms) = normalize_rows(class_weights, "class weight")?;
    let logits = arcface_logits(emb, class_weights, targets, margin, scale)?;
    let cos = u.dot(&v.t());

    // softmax CE
    let mut loss = F::zero();
    let mut d_logits = Array2::<F>::zeros(logits.raw_dim());
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().fold(F::from_f(f64::NEG_INFINITY), |a, &b| a.max(b));
        let exps: Vec<F> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: F = exps.iter().copied().sum();
        let t = targets[i];
        loss = loss - ((logits[[i, t]] - max) - sum.ln());
        for c in 0..logits.ncols() {
            let p = exps[c] / sum;
            d_logits[[i, c]] = (p - if c == t { F::one() } else { F::zero() })
                / F::from_f(n as f64);
        }
    }
    loss = loss / F::from_f(n as f64);

    // chain through the margin and the normalizations
    let cos_m = F::from_f(margin.cos());
    let sin_m = F::from_f(margin.sin());
    let s = F::from_f(scale);
    let one = F::one();
    let mut d_cos = Array2::<F>::zeros(cos.raw_dim());
    for i in 0..n {
        for c in 0..cos.ncols() {
            let g = d_logits[[i, c]] * s;
            if c == targets[i] {
                let cv = cos[[i, c]].min(one).max(-one);
                let sin = (one - cv * cv).max(F::from_f(1e-12)).sqrt();
                // d/dcos [cos*cos_m - sin*sin_m] = cos_m + (cos/sin) sin_m
                d_cos[[i, c]] = g * (cos_m + cv / sin * sin_m);
            } else {
                d_cos[[i, c]] = g;
            }
        }
    }

    // cos = u v^T; deproject through the row normalizations
    let d_u = d_cos.dot(&v);
    let d_v = d_cos.t().dot(&u);
    let mut d_emb = Array2::<F>::zeros(emb.raw_dim());
    for i in 0..n {
        let ui = u.row(i);
        let dui = d_u.row(i);
        let dot = ui.iter().zip(dui.iter()).fold(F::zero(), |a, (&x, &y)| a + x * y);
        for j in 0..emb.ncols() {
            d_emb[[i, j]] = (dui[j] - ui[j] * dot) / e_norms[i];
        }
    }
    let mut d_w = Array2::<F>::zeros(class_weights.raw_dim());
    for c in 0..class_weights.nrows() {
        let vc = v.row(c);
        let dvc = d_v.row(c);
        let dot = vc.iter().zip(dvc.iter()).fold(F::zero(), |a, (&x, &y)| a + x * y);
        for j in 0..class_weights.ncols() {
            d_w[[c, j]] = (dvc[j] - vc[j] * dot) / w_norms[c];
        }
    }
    Ok((loss, d_emb, d_w))
}
