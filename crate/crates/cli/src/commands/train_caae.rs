use std::collections::BTreeMap;

use kinsynth_core::caae::{
    self, encode_label, stack_images, stack_labels, CaaeModel, CaaeOptimizers, ConditionLabel,
    FaceImage, LossWeights,
};
use kinsynth_core::data::image_io::load_image;
use kinsynth_core::data::{save_checkpoint, scan_labeled_dir};
use kinsynth_core::numerics::graph::Graph;
use kinsynth_core::numerics::tensor::Tensor;
use kinsynth_core::SeededRng;

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{CliError, CliResult};

use super::prepare_output;

pub(crate) fn load_labeled_dataset(
    config: &RunConfig,
) -> CliResult<(Vec<FaceImage<f32>>, Vec<ConditionLabel>)> {
    let dir = config
        .labeled_dir
        .as_ref()
        .ok_or_else(|| CliError::Config("labeled_dir: required for train-caae".into()))?;
    let records = scan_labeled_dir(dir)?;
    if records.is_empty() {
        return Err(CliError::Runtime(format!(
            "no labeled images found in {}",
            dir.display()
        )));
    }
    let mut images = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for r in &records {
        images.push(load_image(&r.image_path, config.image_side)?);
        labels.push(encode_label(r.age_years as i64, r.gender)?);
    }
    Ok((images, labels))
}

/// Mean reconstruction loss over the whole dataset with frozen weights.
pub(crate) fn dataset_recon_loss(
    model: &CaaeModel<f32>,
    images: &[FaceImage<f32>],
    labels: &[ConditionLabel],
    batch_size: usize,
) -> CliResult<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (chunk_i, chunk_l) in images.chunks(batch_size).zip(labels.chunks(batch_size)) {
        let x = stack_images(chunk_i)?;
        let l = stack_labels(chunk_l)?;
        let mut g = Graph::new();
        let xn = g.constant(x)?;
        let ln = g.constant(l)?;
        let h = model.encode_batch(&mut g, xn)?;
        let xg = model.decode_batch(&mut g, h, ln)?;
        let loss = caae::mse_loss(&mut g, xn, xg)?;
        total += g.value(loss).item()?.into_f64() * chunk_i.len() as f64;
        count += chunk_i.len();
    }
    Ok(total / count as f64)
}

pub(crate) fn caae_weights(config: &RunConfig) -> LossWeights {
    LossWeights {
        reconstruction: config.weight_recon,
        dz: config.weight_dz,
        dimg: config.weight_dimg,
    }
}

/// Train the autoencoder on a labeled face directory. The checkpoint is
/// rewritten after every epoch; the manifest carries the per-epoch loss
/// table, with epoch 0 recorded before any update.
pub fn cmd_train_caae(config: &RunConfig) -> CliResult<()> {
    config.validate()?;
    let (images, labels) = load_labeled_dataset(config)?;
    prepare_output(config)?;
    let out = &config.output_dir;
    let mut manifest = RunManifest::begin("train-caae", config);

    let mut model = CaaeModel::<f32>::new(config.caae_config(), config.seed_training)?;
    let mut opt = CaaeOptimizers::new(config.adam_config())?;
    let weights = caae_weights(config);
    let mut rng = SeededRng::new(config.seed_training).derive("caae-train");

    let epoch0 = dataset_recon_loss(&model, &images, &labels, config.batch_size)?;
    manifest.record_epoch(0, BTreeMap::from([("reconstruction".into(), epoch0)]));
    log::info!("epoch 0: reconstruction {epoch0:.6}");

    let ckpt_rel = "caae.ksnc";
    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut steps = 0usize;
        for batch_idx in order.chunks(config.batch_size) {
            let batch_images: Vec<FaceImage<f32>> =
                batch_idx.iter().map(|&i| images[i].clone()).collect();
            let batch_labels: Vec<ConditionLabel> =
                batch_idx.iter().map(|&i| labels[i]).collect();
            let x = stack_images(&batch_images)?;
            let l = stack_labels(&batch_labels)?;
            let report = caae::train_step(&mut model, &mut opt, &x, &l, &weights, &mut rng)?;
            for (name, v) in [
                ("reconstruction", report.reconstruction),
                ("dz_prior", report.dz_prior),
                ("dz_encoded", report.dz_encoded),
                ("dimg_real", report.dimg_real),
                ("dimg_generated", report.dimg_generated),
            ] {
                *sums.entry(name.into()).or_default() += v;
            }
            steps += 1;
        }
        let means: BTreeMap<String, f64> = sums
            .into_iter()
            .map(|(k, v)| (k, v / steps as f64))
            .collect();
        log::info!(
            "epoch {epoch}: reconstruction {:.6}",
            means.get("reconstruction").copied().unwrap_or(f64::NAN)
        );
        manifest.record_epoch(epoch, means);
        save_checkpoint(&model.checkpoint_entries(), out.join(ckpt_rel))?;
    }

    if config.epochs == 0 {
        save_checkpoint(&model.checkpoint_entries(), out.join(ckpt_rel))?;
    }
    manifest.artifact(out, ckpt_rel)?;
    manifest.artifact(out, "config.json")?;
    manifest.finish(out)?;
    Ok(())
}

/// Helper for other commands: tensors for one batch of images and labels.
pub(crate) fn batch_tensors(
    images: &[FaceImage<f32>],
    labels: &[ConditionLabel],
) -> CliResult<(Tensor<f32>, Tensor<f32>)> {
    Ok((stack_images(images)?, stack_labels(labels)?))
}
