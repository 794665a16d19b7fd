use std::collections::HashSet;
use std::path::{Path, PathBuf};

use kinsynth_core::caae::encode_label;
use kinsynth_core::data::image_io::{load_image, save_image};
use kinsynth_core::data::load_checkpoint;
use kinsynth_core::dnanet::{select_mask, select_max, DnaNetModel, SelectionMask};
use kinsynth_core::SeededRng;

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{CliError, CliResult};

use super::{prepare_output, write_text};
use super::train_dnanet::load_caae_from_checkpoint;

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub caae_ckpt: PathBuf,
    pub dnanet_ckpt: PathBuf,
    pub father_image: PathBuf,
    pub mother_image: PathBuf,
    pub age_years: i64,
    pub gender: u8,
    /// 0 keeps the deterministic max rule; k > 0 draws k distinct masks.
    pub siblings: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct GenerateOutput {
    pub files: Vec<PathBuf>,
    pub masks: Vec<SelectionMask>,
}

/// Encode both parents, map to genes, recombine (max rule, or `siblings`
/// distinct seeded masks), decode under the requested age/gender label, and
/// write PNGs whose names embed the seed and the label.
pub fn cmd_generate(config: &RunConfig, args: &GenerateArgs) -> CliResult<GenerateOutput> {
    config.validate()?;
    let label = encode_label(args.age_years, args.gender)
        .map_err(|e| CliError::Config(e.to_string()))?;
    prepare_output(config)?;
    let out = &config.output_dir;
    let mut manifest = RunManifest::begin("generate", config);
    manifest.consume(&args.caae_ckpt)?;
    manifest.consume(&args.dnanet_ckpt)?;

    let caae = load_caae_from_checkpoint(config, &args.caae_ckpt)?;
    let mut dnanet = DnaNetModel::<f32>::new(config.dnanet_config(), 0)?;
    dnanet.load_entries(&load_checkpoint(&args.dnanet_ckpt)?)?;

    let father = load_image::<f32>(&args.father_image, config.image_side)?;
    let mother = load_image::<f32>(&args.mother_image, config.image_side)?;
    let genes_f = dnanet.genes_from_feature(&caae.encode(&father)?)?;
    let genes_m = dnanet.genes_from_feature(&caae.encode(&mother)?)?;

    let mut files = Vec::new();
    let mut masks = Vec::new();
    let gender = args.gender;
    let age = args.age_years;
    let seed = args.seed;

    if args.siblings == 0 {
        let child_feature = dnanet.feature_from_genes(&select_max(&genes_f, &genes_m)?)?;
        let image = caae.decode(&child_feature, &label)?;
        let rel = format!("child_seed{seed}_age{age}_gender{gender}_max.png");
        save_image(&image, out.join(&rel))?;
        manifest.artifact(out, &rel)?;
        files.push(out.join(rel));
    } else {
        let mut rng = SeededRng::new(seed).derive("sibling-masks");
        let mut seen = HashSet::new();
        while masks.len() < args.siblings {
            let mask = dnanet.sample_mask(&mut rng);
            // distinct masks only; redraw on the (unlikely) collision
            if seen.insert(mask.bits().to_vec()) {
                masks.push(mask);
            }
        }
        for (i, mask) in masks.iter().enumerate() {
            let child_feature =
                dnanet.feature_from_genes(&select_mask(&genes_f, &genes_m, mask)?)?;
            let image = caae.decode(&child_feature, &label)?;
            let rel = format!("child_seed{seed}_sib{i}_age{age}_gender{gender}.png");
            save_image(&image, out.join(&rel))?;
            manifest.artifact(out, &rel)?;
            files.push(out.join(rel));
        }
        let mask_json = serde_json::to_string_pretty(
            &masks.iter().map(|m| m.bits().to_vec()).collect::<Vec<_>>(),
        )
        .expect("mask bits serialize");
        write_text(&out.join("masks.json"), &mask_json)?;
        manifest.artifact(out, "masks.json")?;
    }

    manifest.artifact(out, "config.json")?;
    manifest.finish(out)?;
    Ok(GenerateOutput { files, masks })
}

/// Sweep a set of age groups with fixed genes (the max-rule child) under one
/// gender, for age-conditioning grids.
pub fn generate_age_sweep(
    config: &RunConfig,
    caae_ckpt: &Path,
    dnanet_ckpt: &Path,
    father_image: &Path,
    mother_image: &Path,
    ages_years: &[i64],
    gender: u8,
    seed: u64,
) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for &age in ages_years {
        let args = GenerateArgs {
            caae_ckpt: caae_ckpt.to_path_buf(),
            dnanet_ckpt: dnanet_ckpt.to_path_buf(),
            father_image: father_image.to_path_buf(),
            mother_image: mother_image.to_path_buf(),
            age_years: age,
            gender,
            siblings: 0,
            seed,
        };
        files.extend(cmd_generate(config, &args)?.files);
    }
    Ok(files)
}
