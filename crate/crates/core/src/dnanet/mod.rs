//! DNA-Net: feature-to-gene and gene-to-feature mappings, the parent-to-child
//! selection operator, and the adversarial regulariser `D_h`.
//!
//! `T_fg` maps a bounded feature vector to an unbounded gene vector; `T_gf`
//! maps genes back into `[-1,1]^n` (tanh head). A child's genes come from the
//! elementwise selection `S`: the deterministic max rule during training, or a
//! 0-1 mask per coordinate for sibling sampling. `D_h` pushes the composed
//! output toward the same uniform prior the autoencoder uses, so decoded
//! children stay on the decoder's input distribution.

use crate::caae::FeatureVector;
use crate::error::{Error, Result};
use crate::numerics::adam::{Adam, AdamConfig};
use crate::numerics::graph::{Graph, NodeId, NormKind};
use crate::numerics::layers::{Activation, Mlp};
use crate::numerics::params::{ParamId, Parameters};
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::{Scalar, Tensor};

/// Gene vector `g`, unbounded, length m.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneVector<S: Scalar> {
    values: Tensor<S>,
}

impl<S: Scalar> GeneVector<S> {
    pub fn new(values: Tensor<S>) -> Result<Self> {
        if values.rank() != 1 {
            return Err(Error::shape(format!(
                "gene vector must be rank 1, got {:?}",
                values.shape()
            )));
        }
        Ok(GeneVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.numel()
    }

    pub fn values(&self) -> &Tensor<S> {
        &self.values
    }
}

/// Random 0-1 sequence for gene selection.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SelectionMask {
    bits: Vec<u8>,
}

impl SelectionMask {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::invalid("selection mask entries must be 0 or 1"));
        }
        Ok(SelectionMask { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// The complement mask 1 - r.
    pub fn complement(&self) -> SelectionMask {
        SelectionMask {
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }
}

/// Draw i.i.d. Bernoulli(1/2) bits.
pub fn sample_mask(len: usize, rng: &mut SeededRng) -> SelectionMask {
    SelectionMask {
        bits: (0..len).map(|_| rng.bernoulli(0.5) as u8).collect(),
    }
}

/// Selection rule applied to the parents' gene vectors.
#[derive(Debug, Clone)]
pub enum SelectionMode {
    /// Keep the coordinatewise maximum (the deterministic training rule).
    Max,
    /// Coordinate i comes from the father where the mask bit is 1, from the
    /// mother where it is 0.
    Mask(SelectionMask),
}

/// Elementwise maximum of the two parents' genes.
pub fn select_max<S: Scalar>(g_f: &GeneVector<S>, g_m: &GeneVector<S>) -> Result<GeneVector<S>> {
    if g_f.dim() != g_m.dim() {
        return Err(Error::shape(format!(
            "select_max dims {} vs {}",
            g_f.dim(),
            g_m.dim()
        )));
    }
    let data = g_f
        .values()
        .data()
        .iter()
        .zip(g_m.values().data())
        .map(|(&a, &b)| if a >= b { a } else { b })
        .collect();
    GeneVector::new(Tensor::new(vec![g_f.dim()], data)?)
}

/// Masked blend: `g_c[i] = r[i]*g_f[i] + (1-r[i])*g_m[i]`. Because the bits
/// are 0/1 the result is copied, not computed — every coordinate equals one
/// parent's exactly.
pub fn select_mask<S: Scalar>(
    g_f: &GeneVector<S>,
    g_m: &GeneVector<S>,
    mask: &SelectionMask,
) -> Result<GeneVector<S>> {
    if g_f.dim() != g_m.dim() || g_f.dim() != mask.len() {
        return Err(Error::shape(format!(
            "select_mask dims {} / {} / mask {}",
            g_f.dim(),
            g_m.dim(),
            mask.len()
        )));
    }
    let data = mask
        .bits()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if r == 1 {
                g_f.values().data()[i]
            } else {
                g_m.values().data()[i]
            }
        })
        .collect();
    GeneVector::new(Tensor::new(vec![g_f.dim()], data)?)
}

/// Architecture hyperparameters. `T_fg`/`T_gf` are mirror-shaped 3-layer
/// fully connected networks.
#[derive(Debug, Clone)]
pub struct DnaNetConfig {
    /// Feature dimension n.
    pub feature_dim: usize,
    /// Gene dimension m.
    pub gene_dim: usize,
    /// The two hidden widths of T_fg (reversed for T_gf).
    pub hidden: [usize; 2],
    /// Hidden widths of D_h.
    pub dh_hidden: [usize; 2],
    pub leaky_slope: f64,
}

impl Default for DnaNetConfig {
    fn default() -> Self {
        DnaNetConfig {
            feature_dim: 100,
            gene_dim: 100,
            hidden: [128, 128],
            dh_hidden: [64, 32],
            leaky_slope: 0.2,
        }
    }
}

impl DnaNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.gene_dim == 0 {
            return Err(Error::invalid("dimensions must be positive"));
        }
        if self.hidden.iter().any(|&w| w == 0) || self.dh_hidden.iter().any(|&w| w == 0) {
            return Err(Error::invalid("zero layer width"));
        }
        Ok(())
    }
}

/// Parameter names are prefixed `t_fg.`, `t_gf.`, `d_h.`.
pub struct DnaNetModel<S: Scalar> {
    pub config: DnaNetConfig,
    pub params: Parameters<S>,
    t_fg: Mlp,
    t_gf: Mlp,
    d_h: Mlp,
}

impl<S: Scalar> DnaNetModel<S> {
    pub fn new(config: DnaNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed).derive("dnanet-init");
        let mut params = Parameters::new();
        let (n, m) = (config.feature_dim, config.gene_dim);
        let [h1, h2] = config.hidden;

        let t_fg = Mlp::new(
            &mut params,
            "t_fg",
            &[n, h1, h2, m],
            Activation::Relu,
            Activation::Linear,
            &mut rng,
        )?;
        let t_gf = Mlp::new(
            &mut params,
            "t_gf",
            &[m, h2, h1, n],
            Activation::Relu,
            Activation::Tanh,
            &mut rng,
        )?;
        let d_h = Mlp::new(
            &mut params,
            "d_h",
            &[n, config.dh_hidden[0], config.dh_hidden[1], 1],
            Activation::LeakyRelu(config.leaky_slope),
            Activation::Sigmoid,
            &mut rng,
        )?;

        Ok(DnaNetModel {
            config,
            params,
            t_fg,
            t_gf,
            d_h,
        })
    }

    pub fn t_ids(&self) -> Vec<ParamId> {
        let mut ids = self.params.ids_with_prefix("t_fg.");
        ids.extend(self.params.ids_with_prefix("t_gf."));
        ids
    }

    pub fn dh_ids(&self) -> Vec<ParamId> {
        self.params.ids_with_prefix("d_h.")
    }

    // ── Graph-level passes ──────────────────────────────────────────────

    /// `[B,n] -> [B,m]`.
    pub fn genes_batch(&self, g: &mut Graph<S>, h: NodeId) -> Result<NodeId> {
        self.t_fg.forward(g, &self.params, h)
    }

    /// `[B,m] -> [B,n]`, tanh-bounded.
    pub fn features_batch(&self, g: &mut Graph<S>, genes: NodeId) -> Result<NodeId> {
        self.t_gf.forward(g, &self.params, genes)
    }

    /// Discriminator on `[B,n]` -> probabilities `[B,1]`.
    pub fn dh_forward(&self, g: &mut Graph<S>, h: NodeId) -> Result<NodeId> {
        self.d_h.forward(g, &self.params, h)
    }

    /// In-graph selection over `[B,m]` gene batches. A mask applies the same
    /// bits to every row.
    pub fn select_batch(
        &self,
        g: &mut Graph<S>,
        genes_f: NodeId,
        genes_m: NodeId,
        mode: &SelectionMode,
    ) -> Result<NodeId> {
        match mode {
            SelectionMode::Max => g.max(genes_f, genes_m),
            SelectionMode::Mask(mask) => {
                let shape = g.value(genes_f).shape().to_vec();
                if shape.len() != 2 || shape[1] != mask.len() {
                    return Err(Error::shape(format!(
                        "mask of length {} on genes {shape:?}",
                        mask.len()
                    )));
                }
                let rows = shape[0];
                let mut r = Vec::with_capacity(rows * mask.len());
                let mut rc = Vec::with_capacity(rows * mask.len());
                for _ in 0..rows {
                    r.extend(mask.bits().iter().map(|&b| S::from_f64(b as f64)));
                    rc.extend(mask.bits().iter().map(|&b| S::from_f64((1 - b) as f64)));
                }
                let rn = g.constant(Tensor::new(shape.clone(), r)?)?;
                let rcn = g.constant(Tensor::new(shape, rc)?)?;
                let from_f = g.mul(genes_f, rn)?;
                let from_m = g.mul(genes_m, rcn)?;
                g.add(from_f, from_m)
            }
        }
    }

    /// The full composition `T(h_f, h_m) = T_gf(S(T_fg(h_f), T_fg(h_m)))`
    /// over batches.
    pub fn child_batch(
        &self,
        g: &mut Graph<S>,
        h_f: NodeId,
        h_m: NodeId,
        mode: &SelectionMode,
    ) -> Result<NodeId> {
        let gf = self.genes_batch(g, h_f)?;
        let gm = self.genes_batch(g, h_m)?;
        let gc = self.select_batch(g, gf, gm, mode)?;
        self.features_batch(g, gc)
    }

    // ── Single-item inference ───────────────────────────────────────────

    pub fn genes_from_feature(&self, h: &FeatureVector<S>) -> Result<GeneVector<S>> {
        if h.dim() != self.config.feature_dim {
            return Err(Error::shape(format!(
                "feature dim {} != model dim {}",
                h.dim(),
                self.config.feature_dim
            )));
        }
        let mut g = Graph::new();
        let hn = g.constant(h.values().reshape(&[1, h.dim()])?)?;
        let out = self.genes_batch(&mut g, hn)?;
        GeneVector::new(Tensor::new(
            vec![self.config.gene_dim],
            g.value(out).data().to_vec(),
        )?)
    }

    pub fn feature_from_genes(&self, genes: &GeneVector<S>) -> Result<FeatureVector<S>> {
        if genes.dim() != self.config.gene_dim {
            return Err(Error::shape(format!(
                "gene dim {} != model dim {}",
                genes.dim(),
                self.config.gene_dim
            )));
        }
        let mut g = Graph::new();
        let gn = g.constant(genes.values().reshape(&[1, genes.dim()])?)?;
        let out = self.features_batch(&mut g, gn)?;
        FeatureVector::new(Tensor::new(
            vec![self.config.feature_dim],
            g.value(out).data().to_vec(),
        )?)
    }

    /// Predict a child's feature vector from the parents'.
    pub fn child_feature(
        &self,
        h_f: &FeatureVector<S>,
        h_m: &FeatureVector<S>,
        mode: &SelectionMode,
    ) -> Result<FeatureVector<S>> {
        let gf = self.genes_from_feature(h_f)?;
        let gm = self.genes_from_feature(h_m)?;
        let gc = match mode {
            SelectionMode::Max => select_max(&gf, &gm)?,
            SelectionMode::Mask(mask) => select_mask(&gf, &gm, mask)?,
        };
        self.feature_from_genes(&gc)
    }

    pub fn sample_mask(&self, rng: &mut SeededRng) -> SelectionMask {
        sample_mask(self.config.gene_dim, rng)
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

/// Norm of the difference between a predicted and a real child feature.
/// L2 by default in training; L1 selectable.
pub fn dnanet_reconstruction_loss<S: Scalar>(
    h_pred: &Tensor<S>,
    h_c: &Tensor<S>,
    norm: NormKind,
) -> Result<f64> {
    if h_pred.shape() != h_c.shape() || h_pred.rank() != 1 {
        return Err(Error::shape(format!(
            "dnanet_reconstruction_loss {:?} vs {:?}",
            h_pred.shape(),
            h_c.shape()
        )));
    }
    let acc: f64 = h_pred
        .data()
        .iter()
        .zip(h_c.data())
        .map(|(&a, &b)| {
            let d = a.into_f64() - b.into_f64();
            match norm {
                NormKind::L2 => d * d,
                NormKind::L1 => d.abs(),
            }
        })
        .sum();
    Ok(match norm {
        NormKind::L2 => acc.sqrt(),
        NormKind::L1 => acc,
    })
}

/// In-graph batch loss: mean over rows of the per-row difference norm.
pub fn recon_loss_batch<S: Scalar>(
    g: &mut Graph<S>,
    h_pred: NodeId,
    h_c: NodeId,
    norm: NormKind,
) -> Result<NodeId> {
    let d = g.sub(h_pred, h_c)?;
    let per_row = g.row_norm(d, norm)?;
    g.mean(per_row)
}

/// Adversarial losses on predicted child features vs prior samples:
/// (discriminator loss, non-saturating generator loss). Mirrors the
/// feature-prior convention of the autoencoder.
pub fn dh_losses<S: Scalar>(
    model: &DnaNetModel<S>,
    h_pred_batch: &Tensor<S>,
    z_prior: &Tensor<S>,
) -> Result<(f64, f64)> {
    if h_pred_batch.rank() != 2
        || z_prior.rank() != 2
        || h_pred_batch.shape()[1] != z_prior.shape()[1]
    {
        return Err(Error::shape(format!(
            "dh_losses {:?} vs {:?}",
            h_pred_batch.shape(),
            z_prior.shape()
        )));
    }
    let mut g = Graph::new();
    let h = g.constant(h_pred_batch.clone())?;
    let z = g.constant(z_prior.clone())?;
    let ph = model.dh_forward(&mut g, h)?;
    let pz = model.dh_forward(&mut g, z)?;
    let shape = g.value(ph).shape().to_vec();
    let ones = g.constant(Tensor::full(&shape, S::one()))?;
    let zeros = g.constant(Tensor::zeros(&shape))?;
    let prior_term = g.bce(pz, ones)?;
    let gen_term_d = g.bce(ph, zeros)?;
    let disc = g.add(prior_term, gen_term_d)?;
    let adv = g.bce(ph, ones)?;
    Ok((
        g.value(disc).item()?.into_f64(),
        g.value(adv).item()?.into_f64(),
    ))
}

// ── Training ────────────────────────────────────────────────────────────

/// Weights on the T_fg/T_gf objective. The adversarial term defaults to 0.1:
/// reconstruction is the primary signal on small kinship data.
#[derive(Debug, Clone, Copy)]
pub struct DnaNetWeights {
    pub reconstruction: f64,
    pub dh: f64,
}

impl Default for DnaNetWeights {
    fn default() -> Self {
        DnaNetWeights {
            reconstruction: 1.0,
            dh: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DnaNetLossReport {
    /// Mean per-triplet difference norm.
    pub reconstruction: f64,
    /// −E[log D_h(z*)]
    pub dh_prior: f64,
    /// −E[log(1 − D_h(T(h_f, h_m)))]
    pub dh_generated: f64,
}

pub struct DnaNetOptimizers<S: Scalar> {
    pub dh: Adam<S>,
    pub t: Adam<S>,
}

impl<S: Scalar> DnaNetOptimizers<S> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        Ok(DnaNetOptimizers {
            dh: Adam::new(config)?,
            t: Adam::new(config)?,
        })
    }
}

/// Feature batches of one triplet minibatch, each `[B, n]`.
pub struct TripletBatch<'a, S: Scalar> {
    pub fathers: &'a Tensor<S>,
    pub mothers: &'a Tensor<S>,
    pub children: &'a Tensor<S>,
}

impl<S: Scalar> TripletBatch<'_, S> {
    fn validate(&self, n: usize) -> Result<usize> {
        let sf = self.fathers.shape();
        if sf.len() != 2 || sf[1] != n {
            return Err(Error::shape(format!("father batch {sf:?}, expected [B,{n}]")));
        }
        if self.mothers.shape() != sf || self.children.shape() != sf {
            return Err(Error::shape("triplet batches misaligned"));
        }
        Ok(sf[0])
    }
}

/// One alternating update: D_h ascends, then T_fg/T_gf descend on the
/// weighted reconstruction + adversarial objective. Training always uses the
/// deterministic max rule. Inputs are precomputed features from a frozen
/// encoder; nothing here touches autoencoder parameters.
pub fn dnanet_train_step<S: Scalar>(
    model: &mut DnaNetModel<S>,
    opt: &mut DnaNetOptimizers<S>,
    batch: &TripletBatch<'_, S>,
    weights: &DnaNetWeights,
    norm: NormKind,
    rng: &mut SeededRng,
) -> Result<DnaNetLossReport> {
    let b = batch.validate(model.config.feature_dim)?;
    let n = model.config.feature_dim;

    // Forward-only prediction for the discriminator phase.
    let h_pred_val = {
        let mut g = Graph::new();
        let hf = g.constant(batch.fathers.clone())?;
        let hm = g.constant(batch.mothers.clone())?;
        let pred = model.child_batch(&mut g, hf, hm, &SelectionMode::Max)?;
        g.value(pred).clone()
    };

    let mut z = Tensor::zeros(&[b, n]);
    rng.fill_uniform(z.data_mut(), -1.0, 1.0);

    // D_h ascent.
    let (dh_prior, dh_generated) = {
        let mut g = Graph::new();
        let h = g.constant(h_pred_val)?;
        let zn = g.constant(z)?;
        let ph = model.dh_forward(&mut g, h)?;
        let pz = model.dh_forward(&mut g, zn)?;
        let shape = g.value(ph).shape().to_vec();
        let ones = g.constant(Tensor::full(&shape, S::one()))?;
        let zeros = g.constant(Tensor::zeros(&shape))?;
        let prior_term = g.bce(pz, ones)?;
        let gen_term = g.bce(ph, zeros)?;
        let disc = g.add(prior_term, gen_term)?;
        g.backward(disc)?;
        model.params.zero_all_grads();
        g.accumulate_param_grads(&mut model.params);
        let ids = model.dh_ids();
        opt.dh.step(&mut model.params, &ids)?;
        (
            g.value(prior_term).item()?.into_f64(),
            g.value(gen_term).item()?.into_f64(),
        )
    };

    // T_fg / T_gf descent.
    let reconstruction = {
        let mut g = Graph::new();
        let hf = g.constant(batch.fathers.clone())?;
        let hm = g.constant(batch.mothers.clone())?;
        let hc = g.constant(batch.children.clone())?;
        let pred = model.child_batch(&mut g, hf, hm, &SelectionMode::Max)?;
        let recon = recon_loss_batch(&mut g, pred, hc, norm)?;
        let ph = model.dh_forward(&mut g, pred)?;
        let shape = g.value(ph).shape().to_vec();
        let ones = g.constant(Tensor::full(&shape, S::one()))?;
        let adv = g.bce(ph, ones)?;
        let wr = g.scale(recon, weights.reconstruction)?;
        let wa = g.scale(adv, weights.dh)?;
        let total = g.add(wr, wa)?;
        g.backward(total)?;
        model.params.zero_all_grads();
        g.accumulate_param_grads(&mut model.params);
        let ids = model.t_ids();
        opt.t.step(&mut model.params, &ids)?;
        g.value(recon).item()?.into_f64()
    };

    Ok(DnaNetLossReport {
        reconstruction,
        dh_prior,
        dh_generated,
    })
}
