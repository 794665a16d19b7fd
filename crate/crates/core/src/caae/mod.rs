//! Conditional adversarial autoencoder: the two-way mapping between face
//! images and bounded feature vectors, conditioned on age and gender.
//!
//! Encoder `E` compresses an image to `h` in `[-1,1]^n` (tanh head). Decoder
//! `G` renders `(h, label)` back to an image. `D_z` pushes encodings toward
//! the uniform prior on `[-1,1]^n`; `D_img` judges (image, label) pairs.
//! Adversarial terms use the non-saturating form for the generator side.

pub mod label;

use crate::error::{Error, Result};
use crate::numerics::adam::{Adam, AdamConfig};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::layers::{Activation, Conv2d, ConvTranspose2d, Dense, Mlp};
use crate::numerics::params::{ParamId, Parameters};
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::{Scalar, Tensor};

pub use label::{encode_label, stack_labels, ConditionLabel, AGE_GROUPS, LABEL_DIM};

/// Square RGB face image with pixels in `[-1, 1]`, shape `[S, S, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage<S: Scalar> {
    pixels: Tensor<S>,
}

impl<S: Scalar> FaceImage<S> {
    pub fn new(pixels: Tensor<S>) -> Result<Self> {
        let shape = pixels.shape();
        if shape.len() != 3 || shape[0] != shape[1] || shape[2] != 3 {
            return Err(Error::shape(format!(
                "face image must be [S,S,3], got {shape:?}"
            )));
        }
        let side = shape[0];
        if side < 32 || !side.is_power_of_two() {
            return Err(Error::invalid(format!(
                "image side {side} must be a power of two >= 32"
            )));
        }
        let one = S::one();
        if pixels.data().iter().any(|&v| v < -one || v > one) {
            return Err(Error::invalid("pixel outside [-1, 1]"));
        }
        Ok(FaceImage { pixels })
    }

    pub fn side(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn pixels(&self) -> &Tensor<S> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor<S> {
        self.pixels
    }
}

/// Bounded feature vector `h` in `[-1, 1]^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<S: Scalar> {
    values: Tensor<S>,
}

impl<S: Scalar> FeatureVector<S> {
    pub fn new(values: Tensor<S>) -> Result<Self> {
        if values.rank() != 1 {
            return Err(Error::shape(format!(
                "feature vector must be rank 1, got {:?}",
                values.shape()
            )));
        }
        let one = S::one();
        if values.data().iter().any(|&v| v < -one || v > one) {
            return Err(Error::invalid("feature coordinate outside [-1, 1]"));
        }
        Ok(FeatureVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.numel()
    }

    pub fn values(&self) -> &Tensor<S> {
        &self.values
    }
}

/// Stack images into an NHWC batch `[B, S, S, 3]`.
pub fn stack_images<S: Scalar>(images: &[FaceImage<S>]) -> Result<Tensor<S>> {
    if images.is_empty() {
        return Err(Error::invalid("empty image batch"));
    }
    let side = images[0].side();
    let mut data = Vec::with_capacity(images.len() * side * side * 3);
    for im in images {
        if im.side() != side {
            return Err(Error::shape("mixed image sides in batch"));
        }
        data.extend_from_slice(im.pixels().data());
    }
    Tensor::new(vec![images.len(), side, side, 3], data)
}

/// Architecture hyperparameters.
#[derive(Debug, Clone)]
pub struct CaaeConfig {
    /// Image side S; power of two, at least 32.
    pub image_side: usize,
    /// Feature dimension n.
    pub feature_dim: usize,
    /// Encoder conv widths; the decoder mirrors them.
    pub conv_widths: [usize; 4],
    /// Image-discriminator conv widths.
    pub dimg_widths: [usize; 3],
    /// Feature-discriminator hidden widths.
    pub dz_hidden: [usize; 2],
    /// Negative slope for discriminator activations.
    pub leaky_slope: f64,
}

impl Default for CaaeConfig {
    fn default() -> Self {
        CaaeConfig {
            image_side: 64,
            feature_dim: 100,
            conv_widths: [32, 64, 128, 256],
            dimg_widths: [32, 64, 128],
            dz_hidden: [64, 32],
            leaky_slope: 0.2,
        }
    }
}

impl CaaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_side < 32 || !self.image_side.is_power_of_two() {
            return Err(Error::invalid(format!(
                "image_side {} must be a power of two >= 32",
                self.image_side
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        if self.conv_widths.iter().any(|&w| w == 0)
            || self.dimg_widths.iter().any(|&w| w == 0)
            || self.dz_hidden.iter().any(|&w| w == 0)
        {
            return Err(Error::invalid("zero layer width"));
        }
        Ok(())
    }

    fn bottleneck_side(&self) -> usize {
        self.image_side / 16
    }
}

/// The four sub-networks of the autoencoder. Parameter names are prefixed
/// `encoder.`, `decoder.`, `d_z.`, `d_img.`, which keeps the sets disjoint.
pub struct CaaeModel<S: Scalar> {
    pub config: CaaeConfig,
    pub params: Parameters<S>,
    enc_convs: Vec<Conv2d>,
    enc_fc: Dense,
    dec_fc: Dense,
    dec_tconvs: Vec<ConvTranspose2d>,
    d_z: Mlp,
    dimg_convs: Vec<Conv2d>,
    dimg_fc: Dense,
}

impl<S: Scalar> CaaeModel<S> {
    pub fn new(config: CaaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed).derive("caae-init");
        let mut params = Parameters::new();
        let n = config.feature_dim;
        let [c1, c2, c3, c4] = config.conv_widths;
        let bottleneck = config.bottleneck_side() * config.bottleneck_side() * c4;

        let mut enc_convs = Vec::new();
        for (i, (ci, co)) in [(3, c1), (c1, c2), (c2, c3), (c3, c4)].iter().enumerate() {
            enc_convs.push(Conv2d::new(
                &mut params,
                &format!("encoder.conv{}", i + 1),
                *ci,
                *co,
                5,
                2,
                2,
                &mut rng,
            )?);
        }
        let enc_fc = Dense::new(&mut params, "encoder.fc", bottleneck, n, &mut rng)?;

        let dec_fc = Dense::new(&mut params, "decoder.fc", n + LABEL_DIM, bottleneck, &mut rng)?;
        let mut dec_tconvs = Vec::new();
        for (i, (ci, co)) in [(c4, c3), (c3, c2), (c2, c1), (c1, 3)].iter().enumerate() {
            dec_tconvs.push(ConvTranspose2d::new(
                &mut params,
                &format!("decoder.tconv{}", i + 1),
                *ci,
                *co,
                5,
                2,
                2,
                1,
                &mut rng,
            )?);
        }

        let d_z = Mlp::new(
            &mut params,
            "d_z",
            &[n, config.dz_hidden[0], config.dz_hidden[1], 1],
            Activation::LeakyRelu(config.leaky_slope),
            Activation::Sigmoid,
            &mut rng,
        )?;

        let [d1, d2, d3] = config.dimg_widths;
        let mut dimg_convs = Vec::new();
        for (i, (ci, co)) in [(3 + LABEL_DIM, d1), (d1, d2), (d2, d3)].iter().enumerate() {
            dimg_convs.push(Conv2d::new(
                &mut params,
                &format!("d_img.conv{}", i + 1),
                *ci,
                *co,
                5,
                2,
                2,
                &mut rng,
            )?);
        }
        let dimg_spatial = config.image_side / 8;
        let dimg_fc = Dense::new(
            &mut params,
            "d_img.fc",
            dimg_spatial * dimg_spatial * d3,
            1,
            &mut rng,
        )?;

        Ok(CaaeModel {
            config,
            params,
            enc_convs,
            enc_fc,
            dec_fc,
            dec_tconvs,
            d_z,
            dimg_convs,
            dimg_fc,
        })
    }

    pub fn encoder_ids(&self) -> Vec<ParamId> {
        self.params.ids_with_prefix("encoder.")
    }

    pub fn decoder_ids(&self) -> Vec<ParamId> {
        self.params.ids_with_prefix("decoder.")
    }

    pub fn dz_ids(&self) -> Vec<ParamId> {
        self.params.ids_with_prefix("d_z.")
    }

    pub fn dimg_ids(&self) -> Vec<ParamId> {
        self.params.ids_with_prefix("d_img.")
    }

    // ── Graph-level forward passes ──────────────────────────────────────

    /// `[B,S,S,3] -> [B,n]`, tanh-bounded.
    pub fn encode_batch(&self, g: &mut Graph<S>, x: NodeId) -> Result<NodeId> {
        let mut t = x;
        for conv in &self.enc_convs {
            t = conv.forward(g, &self.params, t)?;
            t = g.relu(t)?;
        }
        let b = g.value(t).shape()[0];
        let flat = g.value(t).numel() / b;
        t = g.reshape(t, &[b, flat])?;
        t = self.enc_fc.forward(g, &self.params, t)?;
        g.tanh(t)
    }

    /// `([B,n], [B,20]) -> [B,S,S,3]`, tanh-bounded.
    pub fn decode_batch(&self, g: &mut Graph<S>, h: NodeId, labels: NodeId) -> Result<NodeId> {
        let hl = g.concat_last(h, labels)?;
        let mut t = self.dec_fc.forward(g, &self.params, hl)?;
        t = g.relu(t)?;
        let b = g.value(t).shape()[0];
        let side = self.config.bottleneck_side();
        let c4 = self.config.conv_widths[3];
        t = g.reshape(t, &[b, side, side, c4])?;
        let last = self.dec_tconvs.len() - 1;
        for (i, tconv) in self.dec_tconvs.iter().enumerate() {
            t = tconv.forward(g, &self.params, t)?;
            t = if i == last { g.tanh(t)? } else { g.relu(t)? };
        }
        Ok(t)
    }

    /// Feature discriminator on `[B,n]` -> probabilities `[B,1]`.
    pub fn dz_forward(&self, g: &mut Graph<S>, z: NodeId) -> Result<NodeId> {
        self.d_z.forward(g, &self.params, z)
    }

    /// Conditional image discriminator on (`[B,S,S,3]`, `[B,20]`) ->
    /// probabilities `[B,1]`. The label vector is broadcast over every pixel
    /// and concatenated on the channel axis.
    pub fn dimg_forward(&self, g: &mut Graph<S>, x: NodeId, labels: NodeId) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        let lb = g.broadcast_spatial(labels, shape[1], shape[2])?;
        let mut t = g.concat_last(x, lb)?;
        for conv in &self.dimg_convs {
            t = conv.forward(g, &self.params, t)?;
            t = g.leaky_relu(t, self.config.leaky_slope)?;
        }
        let b = g.value(t).shape()[0];
        let flat = g.value(t).numel() / b;
        t = g.reshape(t, &[b, flat])?;
        t = self.dimg_fc.forward(g, &self.params, t)?;
        g.sigmoid(t)
    }

    // ── Single-item inference ───────────────────────────────────────────

    pub fn encode(&self, image: &FaceImage<S>) -> Result<FeatureVector<S>> {
        if image.side() != self.config.image_side {
            return Err(Error::shape(format!(
                "image side {} != model side {}",
                image.side(),
                self.config.image_side
            )));
        }
        let batch = self.encode_batch_values(&stack_images(std::slice::from_ref(image))?)?;
        FeatureVector::new(Tensor::new(
            vec![self.config.feature_dim],
            batch.into_data(),
        )?)
    }

    pub fn decode(&self, h: &FeatureVector<S>, label: &ConditionLabel) -> Result<FaceImage<S>> {
        if h.dim() != self.config.feature_dim {
            return Err(Error::shape(format!(
                "feature dim {} != model dim {}",
                h.dim(),
                self.config.feature_dim
            )));
        }
        let mut g = Graph::new();
        let hn = g.constant(h.values().reshape(&[1, h.dim()])?)?;
        let ln = g.constant(Tensor::new(vec![1, LABEL_DIM], label.encoded())?)?;
        let out = self.decode_batch(&mut g, hn, ln)?;
        let s = self.config.image_side;
        FaceImage::new(g.value(out).reshape(&[s, s, 3])?)
    }

    /// Batched encode returning plain values `[B,n]`.
    pub fn encode_batch_values(&self, images: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let x = g.constant(images.clone())?;
        let h = self.encode_batch(&mut g, x)?;
        Ok(g.value(h).clone())
    }

    /// Batched decode returning plain values `[B,S,S,3]`.
    pub fn decode_batch_values(&self, h: &Tensor<S>, labels: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let hn = g.constant(h.clone())?;
        let ln = g.constant(labels.clone())?;
        let out = self.decode_batch(&mut g, hn, ln)?;
        Ok(g.value(out).clone())
    }

    // ── Persistence ─────────────────────────────────────────────────────

    pub fn checkpoint_entries(&self) -> Vec<crate::data::CheckpointEntry> {
        crate::data::params_to_entries(&self.params)
    }

    /// Restore weights from checkpoint entries; the architecture (names and
    /// shapes) must match exactly.
    pub fn load_entries(&mut self, entries: &[crate::data::CheckpointEntry]) -> Result<()> {
        crate::data::load_entries_into_params(entries, &mut self.params)
    }
}

// ── Losses ──────────────────────────────────────────────────────────────

/// Mean squared pixel difference between two images.
pub fn reconstruction_loss<S: Scalar>(x: &FaceImage<S>, x_hat: &FaceImage<S>) -> Result<f64> {
    if x.side() != x_hat.side() {
        return Err(Error::shape("reconstruction_loss on different sides"));
    }
    let n = x.pixels().numel() as f64;
    let sum: f64 = x
        .pixels()
        .data()
        .iter()
        .zip(x_hat.pixels().data())
        .map(|(&a, &b)| {
            let d = a.into_f64() - b.into_f64();
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// In-graph mean squared difference.
pub fn mse_loss<S: Scalar>(g: &mut Graph<S>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

/// Uniform prior samples on `[-1,1]^n`, shape `[count, n]`.
pub fn sample_prior<S: Scalar>(count: usize, n: usize, rng: &mut SeededRng) -> Result<Tensor<S>> {
    if count == 0 {
        return Err(Error::invalid("sample_prior needs count > 0"));
    }
    let mut t = Tensor::zeros(&[count, n]);
    rng.fill_uniform(t.data_mut(), -1.0, 1.0);
    Ok(t)
}

fn target_nodes<S: Scalar>(g: &mut Graph<S>, shape: &[usize]) -> Result<(NodeId, NodeId)> {
    let ones = g.constant(Tensor::full(shape, S::one()))?;
    let zeros = g.constant(Tensor::zeros(shape))?;
    Ok((ones, zeros))
}

/// Feature-prior losses on given feature/prior batches:
/// (discriminator loss, non-saturating encoder adversarial loss).
pub fn dz_losses<S: Scalar>(
    model: &CaaeModel<S>,
    h_batch: &Tensor<S>,
    z_prior: &Tensor<S>,
) -> Result<(f64, f64)> {
    if h_batch.rank() != 2 || z_prior.rank() != 2 || h_batch.shape()[1] != z_prior.shape()[1] {
        return Err(Error::shape(format!(
            "dz_losses {:?} vs {:?}",
            h_batch.shape(),
            z_prior.shape()
        )));
    }
    let mut g = Graph::new();
    let h = g.constant(h_batch.clone())?;
    let z = g.constant(z_prior.clone())?;
    let ph = model.dz_forward(&mut g, h)?;
    let pz = model.dz_forward(&mut g, z)?;
    let shape = g.value(ph).shape().to_vec();
    let (ones, zeros) = target_nodes(&mut g, &shape)?;
    let disc_prior = g.bce(pz, ones)?;
    let disc_enc = g.bce(ph, zeros)?;
    let disc = g.add(disc_prior, disc_enc)?;
    let adv = g.bce(ph, ones)?;
    Ok((
        g.value(disc).item()?.into_f64(),
        g.value(adv).item()?.into_f64(),
    ))
}

/// Conditional image losses on an (images, labels) batch and its generated
/// counterparts: (discriminator loss, non-saturating generator loss).
pub fn dimg_losses<S: Scalar>(
    model: &CaaeModel<S>,
    x_batch: &Tensor<S>,
    x_gen: &Tensor<S>,
    labels: &Tensor<S>,
) -> Result<(f64, f64)> {
    if x_batch.shape() != x_gen.shape() || x_batch.shape()[0] != labels.shape()[0] {
        return Err(Error::shape("dimg_losses misaligned batches"));
    }
    let mut g = Graph::new();
    let x = g.constant(x_batch.clone())?;
    let xg = g.constant(x_gen.clone())?;
    let l = g.constant(labels.clone())?;
    let p_real = model.dimg_forward(&mut g, x, l)?;
    let p_gen = model.dimg_forward(&mut g, xg, l)?;
    let shape = g.value(p_real).shape().to_vec();
    let (ones, zeros) = target_nodes(&mut g, &shape)?;
    let d_real = g.bce(p_real, ones)?;
    let d_gen = g.bce(p_gen, zeros)?;
    let disc = g.add(d_real, d_gen)?;
    let adv = g.bce(p_gen, ones)?;
    Ok((
        g.value(disc).item()?.into_f64(),
        g.value(adv).item()?.into_f64(),
    ))
}

// ── Training ────────────────────────────────────────────────────────────

/// Weights on the encoder/decoder objective terms.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub dz: f64,
    pub dimg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reconstruction: 1.0,
            dz: 1.0,
            dimg: 1.0,
        }
    }
}

/// The five terms of the combined objective, reported per step as losses
/// (negated log expectations).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaaeLossReport {
    /// L(x, G(E(x), l)) — mean squared reconstruction error.
    pub reconstruction: f64,
    /// −E[log D_z(z*)]
    pub dz_prior: f64,
    /// −E[log(1 − D_z(E(x)))]
    pub dz_encoded: f64,
    /// −E[log D_img(x, l)]
    pub dimg_real: f64,
    /// −E[log(1 − D_img(G(E(x), l), l))]
    pub dimg_generated: f64,
}

/// One Adam instance per alternation side.
pub struct CaaeOptimizers<S: Scalar> {
    pub dz: Adam<S>,
    pub dimg: Adam<S>,
    pub enc_dec: Adam<S>,
}

impl<S: Scalar> CaaeOptimizers<S> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        Ok(CaaeOptimizers {
            dz: Adam::new(config)?,
            dimg: Adam::new(config)?,
            enc_dec: Adam::new(config)?,
        })
    }
}

fn check_batch<S: Scalar>(images: &Tensor<S>, labels: &Tensor<S>, side: usize) -> Result<usize> {
    let si = images.shape();
    if si.len() != 4 || si[1] != side || si[2] != side || si[3] != 3 {
        return Err(Error::shape(format!(
            "image batch {si:?}, expected [B,{side},{side},3]"
        )));
    }
    if labels.shape() != [si[0], LABEL_DIM] {
        return Err(Error::shape(format!(
            "label batch {:?}, expected [{}, {LABEL_DIM}]",
            labels.shape(),
            si[0]
        )));
    }
    Ok(si[0])
}

/// Discriminator half-step: one ascent step each for D_z and D_img on the
/// current batch. Only `d_z.*` and `d_img.*` parameters change.
/// Returns the (dz_prior, dz_encoded, dimg_real, dimg_generated) loss values.
pub fn discriminator_phase<S: Scalar>(
    model: &mut CaaeModel<S>,
    opt: &mut CaaeOptimizers<S>,
    images: &Tensor<S>,
    labels: &Tensor<S>,
    rng: &mut SeededRng,
) -> Result<(f64, f64, f64, f64)> {
    let batch = check_batch(images, labels, model.config.image_side)?;
    let n = model.config.feature_dim;

    // Forward-only pass of the frozen encoder/decoder for this step.
    let (h_val, x_gen_val) = {
        let mut g = Graph::new();
        let x = g.constant(images.clone())?;
        let l = g.constant(labels.clone())?;
        let h = model.encode_batch(&mut g, x)?;
        let xg = model.decode_batch(&mut g, h, l)?;
        (g.value(h).clone(), g.value(xg).clone())
    };

    let z_prior = sample_prior::<S>(batch, n, rng)?;

    // D_z ascent.
    let (dz_prior, dz_encoded) = {
        let mut g = Graph::new();
        let h = g.constant(h_val)?;
        let z = g.constant(z_prior)?;
        let ph = model.dz_forward(&mut g, h)?;
        let pz = model.dz_forward(&mut g, z)?;
        let shape = g.value(ph).shape().to_vec();
        let (ones, zeros) = target_nodes(&mut g, &shape)?;
        let prior_term = g.bce(pz, ones)?;
        let enc_term = g.bce(ph, zeros)?;
        let disc = g.add(prior_term, enc_term)?;
        g.backward(disc)?;
        model.params.zero_all_grads();
        g.accumulate_param_grads(&mut model.params);
        let ids = model.dz_ids();
        opt.dz.step(&mut model.params, &ids)?;
        (
            g.value(prior_term).item()?.into_f64(),
            g.value(enc_term).item()?.into_f64(),
        )
    };

    // D_img ascent.
    let (dimg_real, dimg_generated) = {
        let mut g = Graph::new();
        let x = g.constant(images.clone())?;
        let xg = g.constant(x_gen_val)?;
        let l = g.constant(labels.clone())?;
        let p_real = model.dimg_forward(&mut g, x, l)?;
        let p_gen = model.dimg_forward(&mut g, xg, l)?;
        let shape = g.value(p_real).shape().to_vec();
        let (ones, zeros) = target_nodes(&mut g, &shape)?;
        let real_term = g.bce(p_real, ones)?;
        let gen_term = g.bce(p_gen, zeros)?;
        let disc = g.add(real_term, gen_term)?;
        g.backward(disc)?;
        model.params.zero_all_grads();
        g.accumulate_param_grads(&mut model.params);
        let ids = model.dimg_ids();
        opt.dimg.step(&mut model.params, &ids)?;
        (
            g.value(real_term).item()?.into_f64(),
            g.value(gen_term).item()?.into_f64(),
        )
    };

    Ok((dz_prior, dz_encoded, dimg_real, dimg_generated))
}

/// Encoder/decoder half-step: descend the weighted sum of reconstruction and
/// the two non-saturating adversarial terms. Only `encoder.*` and `decoder.*`
/// parameters change. Returns the reconstruction loss value.
pub fn generator_phase<S: Scalar>(
    model: &mut CaaeModel<S>,
    opt: &mut CaaeOptimizers<S>,
    images: &Tensor<S>,
    labels: &Tensor<S>,
    weights: &LossWeights,
) -> Result<f64> {
    check_batch(images, labels, model.config.image_side)?;

    let mut g = Graph::new();
    let x = g.constant(images.clone())?;
    let l = g.constant(labels.clone())?;
    let h = model.encode_batch(&mut g, x)?;
    let x_gen = model.decode_batch(&mut g, h, l)?;
    let recon = mse_loss(&mut g, x, x_gen)?;

    let ph = model.dz_forward(&mut g, h)?;
    let prob_shape = g.value(ph).shape().to_vec();
    let ones = g.constant(Tensor::full(&prob_shape, S::one()))?;
    let dz_adv = g.bce(ph, ones)?;

    let p_gen = model.dimg_forward(&mut g, x_gen, l)?;
    let dimg_adv = g.bce(p_gen, ones)?;

    let wr = g.scale(recon, weights.reconstruction)?;
    let wz = g.scale(dz_adv, weights.dz)?;
    let wi = g.scale(dimg_adv, weights.dimg)?;
    let partial = g.add(wr, wz)?;
    let total = g.add(partial, wi)?;

    g.backward(total)?;
    model.params.zero_all_grads();
    g.accumulate_param_grads(&mut model.params);
    let mut ids = model.encoder_ids();
    ids.extend(model.decoder_ids());
    opt.enc_dec.step(&mut model.params, &ids)?;

    Ok(g.value(recon).item()?.into_f64())
}

/// One alternating update: discriminators ascend, then encoder/decoder
/// descend. Deterministic given the model, optimizer states and rng state.
pub fn train_step<S: Scalar>(
    model: &mut CaaeModel<S>,
    opt: &mut CaaeOptimizers<S>,
    images: &Tensor<S>,
    labels: &Tensor<S>,
    weights: &LossWeights,
    rng: &mut SeededRng,
) -> Result<CaaeLossReport> {
    let (dz_prior, dz_encoded, dimg_real, dimg_generated) =
        discriminator_phase(model, opt, images, labels, rng)?;
    let reconstruction = generator_phase(model, opt, images, labels, weights)?;
    Ok(CaaeLossReport {
        reconstruction,
        dz_prior,
        dz_encoded,
        dimg_real,
        dimg_generated,
    })
}

#[cfg(test)]
mod tests;
