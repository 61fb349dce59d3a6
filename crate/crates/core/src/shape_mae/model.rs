//! The assembled autoencoder: four encoders, six decoders, one loss.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use super::loss::{code_regularizer_grads, shape_mae_loss, LossBreakdown, LossWeights};
use super::net::{Decoder, Encoder, STAGE_FACTOR};
use super::{SOURCE_VIEWS, TARGET_VIEWS, VIEW_NAMES};
use crate::blocks::{cross_entropy_batch, path, stream, Param, Params, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeMaeSpec {
    pub image_size: usize,
    /// Encoder stage widths; decoders mirror them in reverse.
    pub widths: [usize; 4],
    pub latent_channels: usize,
}

impl Default for ShapeMaeSpec {
    fn default() -> Self {
        ShapeMaeSpec {
            image_size: 128,
            widths: [16, 32, 64, 64],
            latent_channels: 8,
        }
    }
}

impl ShapeMaeSpec {
    /// Side length of the latent grid a code reshapes to.
    pub fn latent_spatial(&self) -> usize {
        self.image_size / STAGE_FACTOR
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_channels * self.latent_spatial() * self.latent_spatial()
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.image_size % STAGE_FACTOR != 0 {
            return Err(Error::Config(format!(
                "image size {} is not a positive multiple of {STAGE_FACTOR}",
                self.image_size
            )));
        }
        if self.widths.contains(&0) || self.latent_channels == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        Ok(())
    }
}

/// Codes and all 24 cross-view predictions from one forward pass.
#[derive(Debug)]
pub struct ForwardAll<F: Real> {
    /// `codes[i]`: `(n, latent_dim)` for source view `i`.
    pub codes: [Array2<F>; SOURCE_VIEWS],
    /// `preds[i * 6 + j]`: decoder `j`'s logits from encoder `i`'s code.
    pub preds: Vec<Array4<F>>,
}

#[derive(Debug, Clone)]
pub struct ShapeMae<F: Real> {
    pub spec: ShapeMaeSpec,
    pub encoders: Vec<Encoder<F>>,
    pub decoders: Vec<Decoder<F>>,
}

impl<F: Real> ShapeMae<F> {
    pub fn new(spec: ShapeMaeSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream(seed, "shape_mae.init");
        let encoders = (0..SOURCE_VIEWS)
            .map(|_| Encoder::new(&mut rng, spec.widths, spec.latent_channels, spec.image_size))
            .collect();
        let decoders = (0..TARGET_VIEWS)
            .map(|_| Decoder::new(&mut rng, spec.widths, spec.latent_channels, spec.latent_spatial()))
            .collect();
        Ok(ShapeMae {
            spec,
            encoders,
            decoders,
        })
    }

    pub fn encode(&self, view: &Array4<F>, i: usize) -> Result<Array2<F>> {
        let enc = self.encoders.get(i).ok_or_else(|| {
            Error::InvalidInput(format!("encoder index {i} out of range ({SOURCE_VIEWS} views)"))
        })?;
        enc.forward(view)
    }

    pub fn decode(&self, code: &Array2<F>, j: usize) -> Result<Array4<F>> {
        let dec = self.decoders.get(j).ok_or_else(|| {
            Error::InvalidInput(format!("decoder index {j} out of range ({TARGET_VIEWS} views)"))
        })?;
        dec.forward(code)
    }

    fn check_views(&self, views: &[Array4<F>; SOURCE_VIEWS]) -> Result<usize> {
        let n = views[0].dim().0;
        if n == 0 {
            return Err(Error::InvalidInput("empty view batch".into()));
        }
        let sz = self.spec.image_size;
        for (i, v) in views.iter().enumerate() {
            if v.dim() != (n, 1, sz, sz) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{} view ({n}, 1, {sz}, {sz})", VIEW_NAMES[i]),
                    actual: format!("{:?}", v.dim()),
                });
            }
        }
        Ok(n)
    }

    pub fn forward_all(&self, views: &[Array4<F>; SOURCE_VIEWS]) -> Result<ForwardAll<F>> {
        self.check_views(views)?;
        let mut codes = Vec::with_capacity(SOURCE_VIEWS);
        for (enc, view) in self.encoders.iter().zip(views.iter()) {
            codes.push(enc.forward(view)?);
        }
        let codes: [Array2<F>; SOURCE_VIEWS] = codes.try_into().expect("four codes");
        let mut preds = Vec::with_capacity(SOURCE_VIEWS * TARGET_VIEWS);
        for code in &codes {
            for dec in &self.decoders {
                preds.push(dec.forward(code)?);
            }
        }
        Ok(ForwardAll { codes, preds })
    }

    pub fn loss(
        &self,
        views: &[Array4<F>; SOURCE_VIEWS],
        targets: &[Array3<u8>; TARGET_VIEWS],
        w: &LossWeights,
    ) -> Result<LossBreakdown> {
        let fa = self.forward_all(views)?;
        shape_mae_loss(&fa.preds, targets, &fa.codes, w)
    }

    /// One full forward/backward pass, accumulating parameter gradients.
    ///
    /// Keeps all four encoder caches but walks the 24 decoder paths one at a
    /// time, so peak memory stays near a single decoder activation set. Code
    /// gradients collect the 24 reconstruction terms (inter terms scaled by
    /// alpha) plus `beta` times the regularizer gradient, then flow back
    /// through the sigmoid into each encoder.
    pub fn loss_backward(
        &mut self,
        views: &[Array4<F>; SOURCE_VIEWS],
        targets: &[Array3<u8>; TARGET_VIEWS],
        w: &LossWeights,
    ) -> Result<LossBreakdown> {
        self.check_views(views)?;
        let mut codes = Vec::with_capacity(SOURCE_VIEWS);
        let mut caches = Vec::with_capacity(SOURCE_VIEWS);
        for (enc, view) in self.encoders.iter().zip(views.iter()) {
            let (code, cache) = enc.forward_t(view.clone())?;
            codes.push(code);
            caches.push(cache);
        }
        let codes: [Array2<F>; SOURCE_VIEWS] = codes.try_into().expect("four codes");
        let mut gcodes: Vec<Array2<F>> = codes.iter().map(|c| Array2::zeros(c.raw_dim())).collect();
        let mut intra = 0.0;
        let mut inter = 0.0;
        let mut terms = (0, 0);
        for i in 0..SOURCE_VIEWS {
            for j in 0..TARGET_VIEWS {
                let (logits, dcache) = self.decoders[j].forward_t(&codes[i])?;
                let (ce, mut glogits) = cross_entropy_batch(&logits, &targets[j])?;
                drop(logits);
                if i == j {
                    intra += ce;
                    terms.0 += 1;
                } else {
                    inter += ce;
                    terms.1 += 1;
                    glogits.mapv_inplace(|g| g * F::of(w.alpha));
                }
                let gcode = self.decoders[j].backward(&dcache, &glogits);
                gcodes[i].scaled_add(F::one(), &gcode);
            }
        }
        let (reg, rgrads) = code_regularizer_grads(&codes)?;
        for (g, r) in gcodes.iter_mut().zip(rgrads.iter()) {
            g.scaled_add(F::of(w.beta), r);
        }
        for ((enc, cache), g) in self.encoders.iter_mut().zip(caches.iter()).zip(gcodes.iter()) {
            enc.backward(cache, g);
        }
        Ok(LossBreakdown::compose(intra, inter, reg, w, terms))
    }
}

impl<F: Real> Params<F> for ShapeMae<F> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<F>)) {
        for (i, e) in self.encoders.iter_mut().enumerate() {
            e.visit_params(&path(prefix, &format!("enc{}", i + 1)), f);
        }
        for (j, d) in self.decoders.iter_mut().enumerate() {
            d.visit_params(&path(prefix, &format!("dec{}", j + 1)), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{param_count, param_names, zero_grads, GradCheck};
    use approx::assert_abs_diff_eq;
    use ndarray::ArrayD;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_spec() -> ShapeMaeSpec {
        ShapeMaeSpec {
            image_size: 32,
            widths: [2, 2, 3, 3],
            latent_channels: 2,
        }
    }

    fn tiny_batch(seed: u64, n: usize) -> ([Array4<f64>; 4], [Array3<u8>; 6]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let views = std::array::from_fn(|_| {
            Array4::from_shape_simple_fn((n, 1, 32, 32), || rng.random_range(0.0..1.0))
        });
        let targets = std::array::from_fn(|_| {
            Array3::from_shape_simple_fn((n, 32, 32), || rng.random_range(0..2u8))
        });
        (views, targets)
    }

    #[test]
    fn default_spec_reaches_512() {
        let spec = ShapeMaeSpec::default();
        assert_eq!(spec.latent_spatial(), 8);
        assert_eq!(spec.latent_dim(), 512);
        spec.validate().unwrap();
        assert!(ShapeMaeSpec {
            image_size: 120,
            ..spec
        }
        .validate()
        .is_err());
    }

    #[test]
    fn default_parameter_count_is_pinned() {
        // Per encoder 232,296 and per decoder 29,234 with the default
        // widths; any architecture drift shows up here first.
        let mut model = ShapeMae::<f32>::new(ShapeMaeSpec::default(), 0).unwrap();
        assert_eq!(param_count(&mut model), 4 * 232_296 + 6 * 29_234);
        let names = param_names(&mut model);
        assert_eq!(names[0], "enc1.s1.conv.weight");
        assert!(names.contains(&"enc4.head.bias".to_string()));
        assert_eq!(names.last().unwrap(), "dec6.head.bias");
    }

    #[test]
    fn weights_are_independent_per_view() {
        let model = ShapeMae::<f64>::new(tiny_spec(), 3).unwrap();
        let (v, _) = tiny_batch(1, 1);
        let mut seen = Vec::new();
        for i in 0..4 {
            seen.push(model.encode(&v[0], i).unwrap());
        }
        for i in 0..4 {
            for k in (i + 1)..4 {
                assert_ne!(seen[i], seen[k], "encoders {i} and {k} coincide");
            }
        }
        let code = &seen[0];
        let outs: Vec<_> = (0..6).map(|j| model.decode(code, j).unwrap()).collect();
        for j in 0..6 {
            for k in (j + 1)..6 {
                assert_ne!(outs[j], outs[k], "decoders {j} and {k} coincide");
            }
        }
    }

    #[test]
    fn forward_all_matches_per_view_calls() {
        let model = ShapeMae::<f64>::new(tiny_spec(), 5).unwrap();
        let (views, targets) = tiny_batch(7, 2);
        let fa = model.forward_all(&views).unwrap();
        assert_eq!(fa.preds.len(), 24);
        for i in 0..4 {
            assert_eq!(fa.codes[i], model.encode(&views[i], i).unwrap());
            for j in 0..6 {
                assert_eq!(fa.preds[i * 6 + j].dim(), (2, 2, 32, 32));
            }
        }
        let w = LossWeights::default();
        let a = model.loss(&views, &targets, &w).unwrap();
        let b = model.loss(&views, &targets, &w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn index_and_shape_errors() {
        let model = ShapeMae::<f32>::new(tiny_spec(), 0).unwrap();
        let v = Array4::<f32>::zeros((1, 1, 32, 32));
        assert!(model.encode(&v, 4).is_err());
        assert!(model.decode(&Array2::zeros((1, 8)), 6).is_err());
        let mut views: [Array4<f32>; 4] = std::array::from_fn(|_| v.clone());
        views[2] = Array4::zeros((1, 1, 16, 16));
        let err = model.forward_all(&views).unwrap_err().to_string();
        assert!(err.contains("LA3"), "error names the offending view: {err}");
    }

    #[test]
    fn composite_gradients_pass_the_checker() {
        let mut model = ShapeMae::<f64>::new(tiny_spec(), 11).unwrap();
        let (views, targets) = tiny_batch(13, 2);
        let w = LossWeights {
            alpha: 0.5,
            beta: 0.01,
        };
        zero_grads(&mut model);
        let breakdown = model.loss_backward(&views, &targets, &w).unwrap();
        assert!(breakdown.is_finite());
        assert_eq!((breakdown.intra_terms, breakdown.inter_terms), (4, 20));

        let report = GradCheck {
            probes: 48,
            ..GradCheck::default()
        }
        .run(&mut model, &mut |m| {
            m.loss(&views, &targets, &w).unwrap().total
        });
        assert!(
            report.max_rel_err < 1e-3,
            "rel err {} at {}",
            report.max_rel_err,
            report.worst
        );
    }

    #[test]
    fn loss_backward_breakdown_matches_eval_loss() {
        let mut model = ShapeMae::<f64>::new(tiny_spec(), 17).unwrap();
        let (views, targets) = tiny_batch(19, 2);
        let w = LossWeights::default();
        let eval = model.loss(&views, &targets, &w).unwrap();
        let train = model.loss_backward(&views, &targets, &w).unwrap();
        assert_abs_diff_eq!(eval.total, train.total, epsilon = 1e-12);
        assert_abs_diff_eq!(eval.intra, train.intra, epsilon = 1e-12);
        assert_abs_diff_eq!(eval.inter, train.inter, epsilon = 1e-12);
        assert_abs_diff_eq!(eval.reg, train.reg, epsilon = 1e-12);
    }

    /// The regularizer only reaches the encoders: decoder gradients are
    /// bitwise independent of beta, and the encoder-gradient difference
    /// scales linearly in beta.
    #[test]
    fn beta_zero_decouples_codes_from_the_regularizer() {
        let (views, targets) = tiny_batch(23, 2);
        let grads_at = |beta: f64| -> (Vec<ArrayD<f64>>, Vec<ArrayD<f64>>) {
            let mut model = ShapeMae::<f64>::new(tiny_spec(), 29).unwrap();
            zero_grads(&mut model);
            model
                .loss_backward(&views, &targets, &LossWeights { alpha: 0.5, beta })
                .unwrap();
            let mut enc = Vec::new();
            let mut dec = Vec::new();
            model.visit_params("", &mut |name, p| {
                if name.starts_with("enc") {
                    enc.push(p.grad.clone());
                } else {
                    dec.push(p.grad.clone());
                }
            });
            (enc, dec)
        };
        let (e0, d0) = grads_at(0.0);
        let (e1, d1) = grads_at(1.0);
        let (e2, d2) = grads_at(2.0);
        assert_eq!(d0, d1);
        assert_eq!(d1, d2);
        let mut max_dev = 0.0f64;
        let mut max_diff = 0.0f64;
        for ((a0, a1), a2) in e0.iter().zip(e1.iter()).zip(e2.iter()) {
            for ((g0, g1), g2) in a0.iter().zip(a1.iter()).zip(a2.iter()) {
                max_diff = max_diff.max((g1 - g0).abs());
                max_dev = max_dev.max(((g2 - g0) - 2.0 * (g1 - g0)).abs());
            }
        }
        assert!(max_diff > 0.0, "beta must reach the encoders");
        assert!(max_dev < 1e-12, "regularizer term not linear in beta: {max_dev}");
    }
}
