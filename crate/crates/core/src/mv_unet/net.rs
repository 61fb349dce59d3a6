//! Filter-reduced U-Net with an optional prior-fusing bottleneck.

use ndarray::{s, Array4};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{
    cross_entropy_batch, max_pool2, max_pool2_backward, path, stream, ActCache, Activation,
    BatchNorm2d, BatchNormCache, Conv2d, Conv2dCache, ConvTranspose2d, ConvTranspose2dCache,
    Param, Params, PoolCache, Real,
};
use crate::shape_mae::SOURCE_VIEWS;
use crate::{Error, Result};

const ACT: Activation = Activation::Relu;

/// Channel concatenation into a standard-layout array (required by conv).
fn concat_channels<F: Real>(a: &Array4<F>, b: &Array4<F>) -> Array4<F> {
    let (n, ca, h, w) = a.dim();
    let cb = b.dim().1;
    let mut out = Array4::zeros((n, ca + cb, h, w));
    out.slice_mut(s![.., ..ca, .., ..]).assign(a);
    out.slice_mut(s![.., ca.., .., ..]).assign(b);
    out
}
pub const NUM_CLASSES: usize = 2;
/// Spatial reduction from input image to bottleneck: four 2x2 pools.
pub const DOWN_FACTOR: usize = 16;
const LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MvUnetSpec {
    pub image_size: usize,
    pub base_filters: usize,
    pub fuse_enabled: bool,
    /// Channels each shape code unflattens to before the views concatenate.
    pub latent_channels: usize,
}

impl Default for MvUnetSpec {
    fn default() -> Self {
        MvUnetSpec {
            image_size: 128,
            base_filters: 16,
            fuse_enabled: true,
            latent_channels: 8,
        }
    }
}

impl MvUnetSpec {
    /// Filter counts per level, doubling from `base_filters`.
    pub fn channels(&self) -> [usize; 5] {
        [1, 2, 4, 8, 16].map(|m| m * self.base_filters)
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.base_filters * 16
    }

    /// Bottleneck (and prior) grid side for a conforming input.
    pub fn latent_spatial(&self) -> usize {
        self.image_size / DOWN_FACTOR
    }

    pub fn priors_channels(&self) -> usize {
        SOURCE_VIEWS * self.latent_channels
    }

    /// Flat length of one view's shape code at this geometry.
    pub fn latent_dim(&self) -> usize {
        self.latent_channels * self.latent_spatial() * self.latent_spatial()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % DOWN_FACTOR != 0 {
            return Err(Error::Config(format!(
                "image size {} is not a positive multiple of {DOWN_FACTOR}",
                self.image_size
            )));
        }
        if self.base_filters == 0 || self.latent_channels == 0 {
            return Err(Error::Config(
                "base_filters and latent_channels must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Conv3x3 -> batch norm -> ReLU.
#[derive(Debug, Clone)]
struct ConvUnit<F: Real> {
    conv: Conv2d<F>,
    norm: BatchNorm2d<F>,
}

#[derive(Debug)]
struct ConvUnitCache<F: Real> {
    conv: Conv2dCache<F>,
    norm: BatchNormCache<F>,
    act: ActCache<F>,
}

impl<F: Real> ConvUnit<F> {
    fn new(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize) -> Self {
        ConvUnit {
            conv: Conv2d::new(rng, in_ch, out_ch, 3, 1, 1),
            norm: BatchNorm2d::new(out_ch),
        }
    }

    fn forward(&self, x: &Array4<F>) -> Result<Array4<F>> {
        let mut y = self.norm.forward(&self.conv.forward(x)?)?;
        ACT.forward(&mut y);
        Ok(y)
    }

    fn forward_t(&mut self, x: Array4<F>) -> Result<(Array4<F>, ConvUnitCache<F>)> {
        let (y, conv) = self.conv.forward_t(x)?;
        let (y, norm) = self.norm.forward_t(y)?;
        let (y, act) = ACT.forward_t(y);
        Ok((y, ConvUnitCache { conv, norm, act }))
    }

    fn backward(&mut self, cache: &ConvUnitCache<F>, gy: &Array4<F>) -> Array4<F> {
        let g = ACT.backward(&cache.act, gy);
        let g = self.norm.backward(&cache.norm, &g);
        self.conv.backward(&cache.conv, &g)
    }
}

impl<F: Real> Params<F> for ConvUnit<F> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        self.conv.visit_params(&path(prefix, "conv"), f);
        self.norm.visit_params(&path(prefix, "norm"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ndarray::ArrayD<F>)) {
        self.norm.visit_buffers(&path(prefix, "norm"), f);
    }
}

/// The standard two-conv level.
#[derive(Debug, Clone)]
struct DoubleConv<F: Real> {
    a: ConvUnit<F>,
    b: ConvUnit<F>,
}

#[derive(Debug)]
struct DoubleConvCache<F: Real> {
    a: ConvUnitCache<F>,
    b: ConvUnitCache<F>,
}

impl<F: Real> DoubleConv<F> {
    fn new(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize) -> Self {
        DoubleConv {
            a: ConvUnit::new(rng, in_ch, out_ch),
            b: ConvUnit::new(rng, out_ch, out_ch),
        }
    }

    fn forward(&self, x: &Array4<F>) -> Result<Array4<F>> {
        self.b.forward(&self.a.forward(x)?)
    }

    fn forward_t(&mut self, x: Array4<F>) -> Result<(Array4<F>, DoubleConvCache<F>)> {
        let (y, a) = self.a.forward_t(x)?;
        let (y, b) = self.b.forward_t(y)?;
        Ok((y, DoubleConvCache { a, b }))
    }

    fn backward(&mut self, cache: &DoubleConvCache<F>, gy: &Array4<F>) -> Array4<F> {
        let g = self.b.backward(&cache.b, gy);
        self.a.backward(&cache.a, &g)
    }
}

impl<F: Real> Params<F> for DoubleConv<F> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        self.a.visit_params(&path(prefix, "a"), f);
        self.b.visit_params(&path(prefix, "b"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ndarray::ArrayD<F>)) {
        self.a.visit_buffers(&path(prefix, "a"), f);
        self.b.visit_buffers(&path(prefix, "b"), f);
    }
}

/// Projects the stacked shape codes and adds them into the bottleneck:
/// `p1 = act(norm(conv1(priors)))`, `fused = bottleneck + p1 + conv2(p1)`.
/// The residual carries `p1` past the second conv; with every fuse weight
/// zero the block is an exact identity on the bottleneck.
#[derive(Debug, Clone)]
pub struct FuseBlock<F: Real> {
    conv1: Conv2d<F>,
    norm: BatchNorm2d<F>,
    conv2: Conv2d<F>,
}

#[derive(Debug)]
pub struct FuseCache<F: Real> {
    conv1: Conv2dCache<F>,
    norm: BatchNormCache<F>,
    act: ActCache<F>,
    conv2: Conv2dCache<F>,
}

impl<F: Real> FuseBlock<F> {
    fn new(rng: &mut ChaCha8Rng, priors_ch: usize, bottleneck_ch: usize) -> Self {
        FuseBlock {
            conv1: Conv2d::new(rng, priors_ch, bottleneck_ch, 3, 1, 1),
            norm: BatchNorm2d::new(bottleneck_ch),
            conv2: Conv2d::new(rng, bottleneck_ch, bottleneck_ch, 3, 1, 1),
        }
    }

    fn check(&self, bottleneck: &Array4<F>, priors: &Array4<F>) -> Result<()> {
        let (n, _, h, w) = bottleneck.dim();
        let expected = (n, self.conv1.in_channels(), h, w);
        if priors.dim() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("priors {expected:?} matching the bottleneck grid"),
                actual: format!("{:?}", priors.dim()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, bottleneck: &Array4<F>, priors: &Array4<F>) -> Result<Array4<F>> {
        self.check(bottleneck, priors)?;
        let mut p1 = self.norm.forward(&self.conv1.forward(priors)?)?;
        ACT.forward(&mut p1);
        let p2 = self.conv2.forward(&p1)?;
        let mut out = bottleneck + &p1;
        out.scaled_add(F::one(), &p2);
        Ok(out)
    }

    pub fn forward_t(
        &mut self,
        bottleneck: &Array4<F>,
        priors: Array4<F>,
    ) -> Result<(Array4<F>, FuseCache<F>)> {
        self.check(bottleneck, &priors)?;
        let (y, conv1) = self.conv1.forward_t(priors)?;
        let (y, norm) = self.norm.forward_t(y)?;
        let (p1, act) = ACT.forward_t(y);
        let (p2, conv2) = self.conv2.forward_t(p1.clone())?;
        let mut out = bottleneck + &p1;
        out.scaled_add(F::one(), &p2);
        Ok((
            out,
            FuseCache {
                conv1,
                norm,
                act,
                conv2,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the priors. The bottleneck gradient is `gy` itself (identity path).
    pub fn backward(&mut self, cache: &FuseCache<F>, gy: &Array4<F>) -> Array4<F> {
        let mut gp1 = self.conv2.backward(&cache.conv2, gy);
        gp1.scaled_add(F::one(), gy);
        let g = ACT.backward(&cache.act, &gp1);
        let g = self.norm.backward(&cache.norm, &g);
        self.conv1.backward(&cache.conv1, &g)
    }

    pub fn conv_weight_count(&self) -> usize {
        self.conv1.weight_count() + self.conv2.weight_count()
    }
}

impl<F: Real> Params<F> for FuseBlock<F> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        self.conv1.visit_params(&path(prefix, "conv1"), f);
        self.norm.visit_params(&path(prefix, "norm"), f);
        self.conv2.visit_params(&path(prefix, "conv2"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ndarray::ArrayD<F>)) {
        self.norm.visit_buffers(&path(prefix, "norm"), f);
    }
}

#[derive(Debug)]
pub struct MvUnetCache<F: Real> {
    down: Vec<DoubleConvCache<F>>,
    pools: Vec<PoolCache>,
    bottleneck: ConvUnitCache<F>,
    fuse: Option<FuseCache<F>>,
    up: Vec<(ConvTranspose2dCache<F>, DoubleConvCache<F>)>,
    head: Conv2dCache<F>,
}

#[derive(Debug, Clone)]
pub struct MvUnet<F: Real> {
    pub spec: MvUnetSpec,
    down: Vec<DoubleConv<F>>,
    bottleneck: ConvUnit<F>,
    upconvs: Vec<ConvTranspose2d<F>>,
    up: Vec<DoubleConv<F>>,
    head: Conv2d<F>,
    fuse: Option<FuseBlock<F>>,
}

impl<F: Real> MvUnet<F> {
    pub fn new(spec: MvUnetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream(seed, "mv_unet.init");
        let ch = spec.channels();
        let mut down = Vec::with_capacity(LEVELS);
        let mut in_ch = 1;
        for &c in &ch[..LEVELS] {
            down.push(DoubleConv::new(&mut rng, in_ch, c));
            in_ch = c;
        }
        let bottleneck = ConvUnit::new(&mut rng, ch[LEVELS - 1], ch[LEVELS]);
        let mut upconvs = Vec::with_capacity(LEVELS);
        let mut up = Vec::with_capacity(LEVELS);
        let mut prev = ch[LEVELS];
        for &c in ch[..LEVELS].iter().rev() {
            upconvs.push(ConvTranspose2d::new(&mut rng, prev, c));
            up.push(DoubleConv::new(&mut rng, 2 * c, c));
            prev = c;
        }
        let head = Conv2d::new(&mut rng, ch[0], NUM_CLASSES, 1, 1, 0);
        // Drawn last, so fused and baseline nets share trunk weights when
        // seeded identically.
        let fuse = spec
            .fuse_enabled
            .then(|| FuseBlock::new(&mut rng, spec.priors_channels(), ch[LEVELS]));
        Ok(MvUnet {
            spec,
            down,
            bottleneck,
            upconvs,
            up,
            head,
            fuse,
        })
    }

    pub fn has_fuse(&self) -> bool {
        self.fuse.is_some()
    }

    pub fn fuse_conv_weight_count(&self) -> usize {
        self.fuse.as_ref().map_or(0, FuseBlock::conv_weight_count)
    }

    /// Zeroes every fuse parameter, reducing the net to the plain baseline.
    pub fn zero_fuse_weights(&mut self) {
        if let Some(fuse) = &mut self.fuse {
            fuse.visit_params("", &mut |_, p| p.value.fill(F::zero()));
        }
    }

    fn check_image(&self, image: &Array4<F>) -> Result<usize> {
        let sz = self.spec.image_size;
        let (n, c, h, w) = image.dim();
        if n == 0 || c != 1 || h != sz || w != sz {
            return Err(Error::ShapeMismatch {
                expected: format!("(n, 1, {sz}, {sz}) image batch"),
                actual: format!("{:?}", image.dim()),
            });
        }
        Ok(n)
    }

    fn check_priors<'a>(&self, priors: Option<&'a Array4<F>>) -> Result<Option<&'a Array4<F>>> {
        match (&self.fuse, priors) {
            (Some(_), Some(p)) => Ok(Some(p)),
            (Some(_), None) => Err(Error::InvalidInput(
                "fuse block is enabled but no shape codes were supplied".into(),
            )),
            (None, Some(_)) => {
                log::warn!("shape codes supplied but the fuse block is disabled; ignoring them");
                Ok(None)
            }
            (None, None) => Ok(None),
        }
    }

    /// Inference forward pass (normalization uses running statistics).
    pub fn forward(&self, image: &Array4<F>, priors: Option<&Array4<F>>) -> Result<Array4<F>> {
        self.check_image(image)?;
        let priors = self.check_priors(priors)?;
        let mut skips = Vec::with_capacity(LEVELS);
        let mut x = image.clone();
        for level in &self.down {
            let y = level.forward(&x)?;
            let (pooled, _) = max_pool2(&y)?;
            skips.push(y);
            x = pooled;
        }
        let mut x = self.bottleneck.forward(&x)?;
        if let (Some(fuse), Some(p)) = (&self.fuse, priors) {
            x = fuse.forward(&x, p)?;
        }
        for (k, (upconv, level)) in self.upconvs.iter().zip(&self.up).enumerate() {
            let u = upconv.forward(&x)?;
            let cat = concat_channels(&u, &skips[LEVELS - 1 - k]);
            x = level.forward(&cat)?;
        }
        self.head.forward(&x)
    }

    /// Training forward pass (batch statistics; updates running estimates).
    pub fn forward_t(
        &mut self,
        image: &Array4<F>,
        priors: Option<&Array4<F>>,
    ) -> Result<(Array4<F>, MvUnetCache<F>)> {
        self.check_image(image)?;
        let priors = self.check_priors(priors)?;
        let mut down_caches = Vec::with_capacity(LEVELS);
        let mut pools = Vec::with_capacity(LEVELS);
        let mut skips = Vec::with_capacity(LEVELS);
        let mut x = image.clone();
        for level in &mut self.down {
            let (y, c) = level.forward_t(x)?;
            let (pooled, pc) = max_pool2(&y)?;
            down_caches.push(c);
            pools.push(pc);
            skips.push(y);
            x = pooled;
        }
        let (mut x, bottleneck) = self.bottleneck.forward_t(x)?;
        let fuse = match (&mut self.fuse, priors) {
            (Some(f), Some(p)) => {
                let (fused, fc) = f.forward_t(&x, p.clone())?;
                x = fused;
                Some(fc)
            }
            _ => None,
        };
        let mut up_caches = Vec::with_capacity(LEVELS);
        for k in 0..LEVELS {
            let (u, uc) = self.upconvs[k].forward_t(x)?;
            let cat = concat_channels(&u, &skips[LEVELS - 1 - k]);
            let (y, lc) = self.up[k].forward_t(cat)?;
            up_caches.push((uc, lc));
            x = y;
        }
        let (logits, head) = self.head.forward_t(x)?;
        Ok((
            logits,
            MvUnetCache {
                down: down_caches,
                pools,
                bottleneck,
                fuse,
                up: up_caches,
                head,
            },
        ))
    }

    /// Accumulates parameter gradients; returns the prior gradient when the
    /// fuse path ran (codes are constants during training, so callers
    /// usually discard it).
    pub fn backward(&mut self, cache: &MvUnetCache<F>, glogits: &Array4<F>) -> Option<Array4<F>> {
        let ch = self.spec.channels();
        let mut g = self.head.backward(&cache.head, glogits);
        let mut gskips: Vec<Option<Array4<F>>> = (0..LEVELS).map(|_| None).collect();
        for k in (0..LEVELS).rev() {
            let (uc, lc) = &cache.up[k];
            let gcat = self.up[k].backward(lc, &g);
            let split = ch[LEVELS - 1 - k];
            gskips[LEVELS - 1 - k] = Some(gcat.slice(s![.., split.., .., ..]).to_owned());
            let gu = gcat.slice(s![.., ..split, .., ..]).to_owned();
            g = self.upconvs[k].backward(uc, &gu);
        }
        let gpriors = match (&mut self.fuse, &cache.fuse) {
            (Some(f), Some(fc)) => Some(f.backward(fc, &g)),
            _ => None,
        };
        let mut g = self.bottleneck.backward(&cache.bottleneck, &g);
        for k in (0..LEVELS).rev() {
            let mut gy = max_pool2_backward(&cache.pools[k], &g);
            gy.scaled_add(F::one(), gskips[k].as_ref().expect("skip gradient"));
            g = self.down[k].backward(&cache.down[k], &gy);
        }
        gpriors
    }

    /// Training-mode cross-entropy without backward; the finite-difference
    /// probe target.
    pub fn train_loss(
        &mut self,
        image: &Array4<F>,
        priors: Option<&Array4<F>>,
        targets: &ndarray::Array3<u8>,
    ) -> Result<f64> {
        let (logits, _) = self.forward_t(image, priors)?;
        Ok(cross_entropy_batch(&logits, targets)?.0)
    }

    /// One training forward/backward; returns the batch cross-entropy.
    pub fn loss_backward(
        &mut self,
        image: &Array4<F>,
        priors: Option<&Array4<F>>,
        targets: &ndarray::Array3<u8>,
    ) -> Result<f64> {
        let (logits, cache) = self.forward_t(image, priors)?;
        let (ce, glogits) = cross_entropy_batch(&logits, targets)?;
        drop(logits);
        self.backward(&cache, &glogits);
        Ok(ce)
    }
}

impl<F: Real> Params<F> for MvUnet<F> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        for (i, d) in self.down.iter_mut().enumerate() {
            d.visit_params(&path(prefix, &format!("d{}", i + 1)), f);
        }
        self.bottleneck.visit_params(&path(prefix, "bottleneck"), f);
        for k in 0..LEVELS {
            self.upconvs[k].visit_params(&path(prefix, &format!("u{}.convt", k + 1)), f);
            self.up[k].visit_params(&path(prefix, &format!("u{}", k + 1)), f);
        }
        self.head.visit_params(&path(prefix, "head"), f);
        if let Some(fuse) = &mut self.fuse {
            fuse.visit_params(&path(prefix, "fuse"), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut ndarray::ArrayD<F>)) {
        for (i, d) in self.down.iter_mut().enumerate() {
            d.visit_buffers(&path(prefix, &format!("d{}", i + 1)), f);
        }
        self.bottleneck.visit_buffers(&path(prefix, "bottleneck"), f);
        for k in 0..LEVELS {
            self.up[k].visit_buffers(&path(prefix, &format!("u{}", k + 1)), f);
        }
        if let Some(fuse) = &mut self.fuse {
            fuse.visit_buffers(&path(prefix, "fuse"), f);
        }
    }
}
