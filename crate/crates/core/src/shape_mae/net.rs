//! Per-view encoder and decoder networks.
//!
//! The encoder downsamples 16x through four stride-2 conv stages (each
//! followed by a residual block), projects to `latent_channels` with a 1x1
//! conv, squashes through a sigmoid and flattens channel-major. The decoder
//! mirrors it: unflatten, four 2x transposed-conv stages, 1x1 conv to
//! two-class logits. Instance norm and leaky ReLU throughout.

use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{
    path, ActCache, Activation, Conv2d, Conv2dCache, ConvTranspose2d, ConvTranspose2dCache,
    InstanceNorm2d, InstanceNormCache, Param, Params, Real, ResBlock, ResBlockCache,
};
use crate::{Error, Result};

const ACT: Activation = Activation::LeakyRelu;

/// Spatial shrink factor of the encoder (and growth factor of the decoder):
/// four stride-2 stages.
pub const STAGE_FACTOR: usize = 16;

#[derive(Debug, Clone)]
struct EncStage<F: Real> {
    conv: Conv2d<F>,
    norm: InstanceNorm2d<F>,
    res: ResBlock<F>,
}

#[derive(Debug)]
struct EncStageCache<F: Real> {
    conv: Conv2dCache<F>,
    norm: InstanceNormCache<F>,
    act: ActCache<F>,
    res: ResBlockCache<F>,
}

#[derive(Debug, Clone)]
pub struct Encoder<F: Real> {
    stages: Vec<EncStage<F>>,
    head: Conv2d<F>,
    image_size: usize,
}

#[derive(Debug)]
pub struct EncoderCache<F: Real> {
    stages: Vec<EncStageCache<F>>,
    head: Conv2dCache<F>,
    sig: ActCache<F>,
    sig_shape: (usize, usize, usize, usize),
}

impl<F: Real> Encoder<F> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        widths: [usize; 4],
        latent_channels: usize,
        image_size: usize,
    ) -> Self {
        let mut in_ch = 1;
        let stages = widths
            .iter()
            .map(|&w| {
                let s = EncStage {
                    conv: Conv2d::new(rng, in_ch, w, 3, 2, 1),
                    norm: InstanceNorm2d::new(w),
                    res: ResBlock::new(rng, w, ACT),
                };
                in_ch = w;
                s
            })
            .collect();
        Encoder {
            stages,
            head: Conv2d::new(rng, in_ch, latent_channels, 1, 1, 0),
            image_size,
        }
    }

    /// Flattened code length: `latent_channels * (image_size/16)^2`.
    pub fn latent_dim(&self) -> usize {
        let s = self.image_size / STAGE_FACTOR;
        self.head.out_channels() * s * s
    }

    fn check_input(&self, x: &Array4<F>) -> Result<()> {
        let (_, _, h, w) = x.dim();
        if h != self.image_size || w != self.image_size {
            return Err(Error::ShapeMismatch {
                expected: format!("{0}x{0} view", self.image_size),
                actual: format!("{h}x{w}"),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array4<F>) -> Result<Array2<F>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for stage in &self.stages {
            h = stage.conv.forward(&h)?;
            h = stage.norm.forward(&h)?;
            ACT.forward(&mut h);
            h = stage.res.forward(&h)?;
        }
        let mut y = self.head.forward(&h)?;
        Activation::Sigmoid.forward(&mut y);
        let (n, c, hh, ww) = y.dim();
        Ok(y
            .into_shape_with_order((n, c * hh * ww))
            .expect("contiguous code"))
    }

    pub fn forward_t(&self, x: Array4<F>) -> Result<(Array2<F>, EncoderCache<F>)> {
        self.check_input(&x)?;
        let mut h = x;
        let mut stages = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let (a, conv) = stage.conv.forward_t(h)?;
            let (a, norm) = stage.norm.forward_t(a)?;
            let (a, act) = ACT.forward_t(a);
            let (a, res) = stage.res.forward_t(a)?;
            h = a;
            stages.push(EncStageCache {
                conv,
                norm,
                act,
                res,
            });
        }
        let (y, head) = self.head.forward_t(h)?;
        let (y, sig) = Activation::Sigmoid.forward_t(y);
        let sig_shape = y.dim();
        let (n, c, hh, ww) = sig_shape;
        let code = y
            .into_shape_with_order((n, c * hh * ww))
            .expect("contiguous code");
        Ok((
            code,
            EncoderCache {
                stages,
                head,
                sig,
                sig_shape,
            },
        ))
    }

    /// Accumulates parameter gradients from a code gradient; the image
    /// gradient is discarded (views are data, not parameters).
    pub fn backward(&mut self, cache: &EncoderCache<F>, gcode: &Array2<F>) {
        let g4 = gcode
            .to_owned()
            .into_shape_with_order(cache.sig_shape)
            .expect("code gradient matches cached shape");
        let g = Activation::Sigmoid.backward(&cache.sig, &g4);
        let mut g = self.head.backward(&cache.head, &g);
        for (k, (stage, sc)) in self
            .stages
            .iter_mut()
            .zip(cache.stages.iter())
            .enumerate()
            .rev()
        {
            g = stage.res.backward(&sc.res, &g);
            g = ACT.backward(&sc.act, &g);
            g = stage.norm.backward(&sc.norm, &g);
            if k == 0 {
                stage.conv.backward_params_only(&sc.conv, &g);
            } else {
                g = stage.conv.backward(&sc.conv, &g);
            }
        }
    }
}

impl<F: Real> Params<F> for Encoder<F> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        for (k, stage) in self.stages.iter_mut().enumerate() {
            let p = path(prefix, &format!("s{}", k + 1));
            stage.conv.visit_params(&path(&p, "conv"), f);
            stage.norm.visit_params(&path(&p, "norm"), f);
            stage.res.visit_params(&path(&p, "res"), f);
        }
        self.head.visit_params(&path(prefix, "head"), f);
    }
}

#[derive(Debug, Clone)]
struct UpStage<F: Real> {
    convt: ConvTranspose2d<F>,
    norm: InstanceNorm2d<F>,
}

#[derive(Debug)]
struct UpStageCache<F: Real> {
    convt: ConvTranspose2dCache<F>,
    norm: InstanceNormCache<F>,
    act: ActCache<F>,
}

#[derive(Debug, Clone)]
pub struct Decoder<F: Real> {
    ups: Vec<UpStage<F>>,
    head: Conv2d<F>,
    latent_channels: usize,
    latent_spatial: usize,
}

#[derive(Debug)]
pub struct DecoderCache<F: Real> {
    ups: Vec<UpStageCache<F>>,
    head: Conv2dCache<F>,
}

impl<F: Real> Decoder<F> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        widths: [usize; 4],
        latent_channels: usize,
        latent_spatial: usize,
    ) -> Self {
        let mut in_ch = latent_channels;
        let ups = widths
            .iter()
            .rev()
            .map(|&w| {
                let s = UpStage {
                    convt: ConvTranspose2d::new(rng, in_ch, w),
                    norm: InstanceNorm2d::new(w),
                };
                in_ch = w;
                s
            })
            .collect();
        Decoder {
            ups,
            head: Conv2d::new(rng, in_ch, 2, 1, 1, 0),
            latent_channels,
            latent_spatial,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_channels * self.latent_spatial * self.latent_spatial
    }

    fn unflatten(&self, code: &Array2<F>) -> Result<Array4<F>> {
        let (n, d) = code.dim();
        if d != self.latent_dim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}-d code", self.latent_dim()),
                actual: format!("{d}-d"),
            });
        }
        let s = self.latent_spatial;
        Ok(code
            .to_owned()
            .into_shape_with_order((n, self.latent_channels, s, s))
            .expect("contiguous code"))
    }

    pub fn forward(&self, code: &Array2<F>) -> Result<Array4<F>> {
        let mut h = self.unflatten(code)?;
        for up in &self.ups {
            h = up.convt.forward(&h)?;
            h = up.norm.forward(&h)?;
            ACT.forward(&mut h);
        }
        self.head.forward(&h)
    }

    pub fn forward_t(&self, code: &Array2<F>) -> Result<(Array4<F>, DecoderCache<F>)> {
        let mut h = self.unflatten(code)?;
        let mut ups = Vec::with_capacity(self.ups.len());
        for up in &self.ups {
            let (a, convt) = up.convt.forward_t(h)?;
            let (a, norm) = up.norm.forward_t(a)?;
            let (a, act) = ACT.forward_t(a);
            h = a;
            ups.push(UpStageCache { convt, norm, act });
        }
        let (logits, head) = self.head.forward_t(h)?;
        Ok((logits, DecoderCache { ups, head }))
    }

    /// Accumulates parameter gradients and returns the code gradient.
    pub fn backward(&mut self, cache: &DecoderCache<F>, glogits: &Array4<F>) -> Array2<F> {
        let mut g = self.head.backward(&cache.head, glogits);
        for (up, uc) in self.ups.iter_mut().zip(cache.ups.iter()).rev() {
            g = ACT.backward(&uc.act, &g);
            g = up.norm.backward(&uc.norm, &g);
            g = up.convt.backward(&uc.convt, &g);
        }
        let (n, c, h, w) = g.dim();
        g.into_shape_with_order((n, c * h * w))
            .expect("contiguous gradient")
    }
}

impl<F: Real> Params<F> for Decoder<F> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        for (k, up) in self.ups.iter_mut().enumerate() {
            let p = path(prefix, &format!("u{}", k + 1));
            up.convt.visit_params(&path(&p, "convt"), f);
            up.norm.visit_params(&path(&p, "norm"), f);
        }
        self.head.visit_params(&path(prefix, "head"), f);
    }
}
