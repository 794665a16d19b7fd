use std::collections::BTreeMap;
use std::path::Path;

use kinsynth_core::caae::CaaeModel;
use kinsynth_core::data::image_io::load_image;
use kinsynth_core::data::{
    load_checkpoint, load_triplets, save_checkpoint, split_by_family, CheckpointEntry,
    TripletRecord,
};
use kinsynth_core::dnanet::{
    dnanet_train_step, DnaNetModel, DnaNetOptimizers, DnaNetWeights, TripletBatch,
};
use kinsynth_core::numerics::tensor::Tensor;
use kinsynth_core::SeededRng;

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{CliError, CliResult};

use super::prepare_output;

/// Per-triplet feature tensors `[count, n]`, cache-file order.
pub(crate) struct TripletFeatures {
    pub fathers: Tensor<f32>,
    pub mothers: Tensor<f32>,
    pub children: Tensor<f32>,
}

fn features_to_entries(features: &TripletFeatures, n: usize) -> Vec<CheckpointEntry> {
    let count = features.fathers.shape()[0];
    let mut entries = Vec::with_capacity(count * 3);
    for i in 0..count {
        for (role, tensor) in [
            ("father", &features.fathers),
            ("mother", &features.mothers),
            ("child", &features.children),
        ] {
            entries.push(CheckpointEntry {
                name: format!("t{i}.{role}"),
                shape: vec![n],
                values: tensor.data()[i * n..(i + 1) * n].to_vec(),
            });
        }
    }
    entries
}

fn entries_to_features(entries: &[CheckpointEntry], n: usize) -> CliResult<TripletFeatures> {
    if entries.len() % 3 != 0 || entries.is_empty() {
        return Err(CliError::Runtime(format!(
            "feature cache holds {} entries, expected a multiple of 3",
            entries.len()
        )));
    }
    let count = entries.len() / 3;
    let mut tensors = [
        vec![0.0f32; count * n],
        vec![0.0f32; count * n],
        vec![0.0f32; count * n],
    ];
    let by_name: std::collections::HashMap<&str, &CheckpointEntry> =
        entries.iter().map(|e| (e.name.as_str(), e)).collect();
    for i in 0..count {
        for (slot, role) in ["father", "mother", "child"].iter().enumerate() {
            let name = format!("t{i}.{role}");
            let e = by_name
                .get(name.as_str())
                .ok_or_else(|| CliError::Runtime(format!("feature cache missing {name}")))?;
            if e.shape != [n] {
                return Err(CliError::Runtime(format!(
                    "feature cache entry {name} has shape {:?}, expected [{n}]",
                    e.shape
                )));
            }
            tensors[slot][i * n..(i + 1) * n].copy_from_slice(&e.values);
        }
    }
    let mut iter = tensors.into_iter();
    Ok(TripletFeatures {
        fathers: Tensor::new(vec![count, n], iter.next().unwrap())
            .map_err(|e| CliError::Runtime(e.to_string()))?,
        mothers: Tensor::new(vec![count, n], iter.next().unwrap())
            .map_err(|e| CliError::Runtime(e.to_string()))?,
        children: Tensor::new(vec![count, n], iter.next().unwrap())
            .map_err(|e| CliError::Runtime(e.to_string()))?,
    })
}

/// Encode every face of the triplets with the frozen autoencoder.
pub(crate) fn compute_triplet_features(
    model: &CaaeModel<f32>,
    records: &[TripletRecord],
    image_side: usize,
    batch_size: usize,
) -> CliResult<TripletFeatures> {
    let n = model.config.feature_dim;
    let count = records.len();
    let mut out = [
        vec![0.0f32; count * n],
        vec![0.0f32; count * n],
        vec![0.0f32; count * n],
    ];
    for start in (0..count).step_by(batch_size) {
        let end = (start + batch_size).min(count);
        for (slot, path_of) in [
            |r: &TripletRecord| r.father_path.clone(),
            |r: &TripletRecord| r.mother_path.clone(),
            |r: &TripletRecord| r.child_path.clone(),
        ]
        .iter()
        .enumerate()
        {
            let images: Vec<_> = records[start..end]
                .iter()
                .map(|r| load_image::<f32>(path_of(r), image_side))
                .collect::<Result<_, _>>()?;
            let batch = kinsynth_core::caae::stack_images(&images)?;
            let h = model.encode_batch_values(&batch)?;
            out[slot][start * n..end * n].copy_from_slice(h.data());
        }
    }
    let mut iter = out.into_iter();
    Ok(TripletFeatures {
        fathers: Tensor::new(vec![count, n], iter.next().unwrap())
            .map_err(|e| CliError::Runtime(e.to_string()))?,
        mothers: Tensor::new(vec![count, n], iter.next().unwrap())
            .map_err(|e| CliError::Runtime(e.to_string()))?,
        children: Tensor::new(vec![count, n], iter.next().unwrap())
            .map_err(|e| CliError::Runtime(e.to_string()))?,
    })
}

pub(crate) fn load_caae_from_checkpoint(
    config: &RunConfig,
    path: &Path,
) -> CliResult<CaaeModel<f32>> {
    let mut model = CaaeModel::<f32>::new(config.caae_config(), 0)?;
    let entries = load_checkpoint(path)?;
    model.load_entries(&entries)?;
    Ok(model)
}

/// Train DNA-Net on triplet features from a frozen autoencoder checkpoint.
/// Features are computed once and cached beside the output checkpoint.
pub fn cmd_train_dnanet(config: &RunConfig, caae_ckpt: &Path) -> CliResult<()> {
    config.validate()?;
    let csv = config
        .triplets_csv
        .as_ref()
        .ok_or_else(|| CliError::Config("triplets_csv: required for train-dnanet".into()))?;
    let records = load_triplets(csv)?;
    let (train, _test) = split_by_family(&records, config.test_fraction);
    if train.is_empty() {
        return Err(CliError::Runtime("no training triplets after the split".into()));
    }

    prepare_output(config)?;
    let out = &config.output_dir;
    let mut manifest = RunManifest::begin("train-dnanet", config);
    manifest.consume(caae_ckpt)?;

    let caae = load_caae_from_checkpoint(config, caae_ckpt)?;
    let n = config.feature_dim;

    let cache_rel = "features.ksnc";
    let cache_path = out.join(cache_rel);
    let features = if cache_path.is_file() {
        let cached = entries_to_features(&load_checkpoint(&cache_path)?, n)?;
        if cached.fathers.shape()[0] == train.len() {
            log::info!("reusing cached features for {} triplets", train.len());
            cached
        } else {
            let fresh = compute_triplet_features(&caae, &train, config.image_side, config.batch_size)?;
            save_checkpoint(&features_to_entries(&fresh, n), &cache_path)?;
            fresh
        }
    } else {
        let fresh = compute_triplet_features(&caae, &train, config.image_side, config.batch_size)?;
        save_checkpoint(&features_to_entries(&fresh, n), &cache_path)?;
        fresh
    };

    let mut model = DnaNetModel::<f32>::new(config.dnanet_config(), config.seed_training)?;
    let mut opt = DnaNetOptimizers::new(config.adam_config())?;
    let weights = DnaNetWeights {
        reconstruction: config.weight_recon,
        dh: config.weight_dh,
    };
    let norm = config.norm.into();
    let mut rng = SeededRng::new(config.seed_training).derive("dnanet-train");

    let count = features.fathers.shape()[0];
    let mut order: Vec<usize> = (0..count).collect();
    let ckpt_rel = "dnanet.ksnc";
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut steps = 0usize;
        for batch_idx in order.chunks(config.batch_size) {
            let gather = |t: &Tensor<f32>| -> CliResult<Tensor<f32>> {
                let mut data = Vec::with_capacity(batch_idx.len() * n);
                for &i in batch_idx {
                    data.extend_from_slice(&t.data()[i * n..(i + 1) * n]);
                }
                Tensor::new(vec![batch_idx.len(), n], data)
                    .map_err(|e| CliError::Runtime(e.to_string()))
            };
            let fathers = gather(&features.fathers)?;
            let mothers = gather(&features.mothers)?;
            let children = gather(&features.children)?;
            let batch = TripletBatch {
                fathers: &fathers,
                mothers: &mothers,
                children: &children,
            };
            let report = dnanet_train_step(&mut model, &mut opt, &batch, &weights, norm, &mut rng)?;
            for (name, v) in [
                ("reconstruction", report.reconstruction),
                ("dh_prior", report.dh_prior),
                ("dh_generated", report.dh_generated),
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
    manifest.artifact(out, cache_rel)?;
    manifest.artifact(out, "config.json")?;
    manifest.finish(out)?;
    Ok(())
}
