use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use kinsynth_core::caae::{encode_label, stack_labels, ConditionLabel};
use kinsynth_core::data::{load_checkpoint, load_triplets, split_by_family};
use kinsynth_core::dnanet::{DnaNetModel, SelectionMode};
use kinsynth_core::eval::{
    embedding_similarity_report, project_2d, roc_and_accuracy, PairLabel, ScoredPair,
};
use kinsynth_core::eval::verify::cosine_similarity;
use kinsynth_core::numerics::graph::Graph;
use kinsynth_core::numerics::tensor::Tensor;
use kinsynth_core::SeededRng;

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{CliError, CliResult};

use super::train_dnanet::{compute_triplet_features, load_caae_from_checkpoint};
use super::{prepare_output, write_text};

#[derive(Debug, Clone, Serialize)]
pub struct PairTypeMetrics {
    pub pair_type: String,
    pub auc: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateReport {
    pub test_triplets: usize,
    pub rows: Vec<PairTypeMetrics>,
    /// Mean cosine distance of matched real/generated pairs.
    pub matched_mean_distance: f64,
    /// Mean cosine distance of generated children against re-paired reals.
    pub random_mean_distance: f64,
}

fn rows_of(t: &Tensor<f32>) -> Vec<Vec<f64>> {
    let n = t.shape()[1];
    t.data()
        .chunks(n)
        .map(|row| row.iter().map(|&v| v as f64).collect())
        .collect()
}

/// Held-out verification: per test triplet, generate a child, re-embed it
/// with the frozen encoder, then score kin vs seeded non-kin pairs for the
/// four pair types. Real and generated children share the same negative
/// re-pairing.
pub fn cmd_evaluate(
    config: &RunConfig,
    caae_ckpt: &Path,
    dnanet_ckpt: &Path,
    triplets_csv: &Path,
) -> CliResult<EvaluateReport> {
    config.validate()?;
    let records = load_triplets(triplets_csv)?;
    let (_train, test) = split_by_family(&records, config.test_fraction);
    if test.is_empty() {
        return Err(CliError::Runtime("empty test split".into()));
    }

    prepare_output(config)?;
    let out = &config.output_dir;
    let mut manifest = RunManifest::begin("evaluate", config);
    manifest.consume(caae_ckpt)?;
    manifest.consume(dnanet_ckpt)?;

    let caae = load_caae_from_checkpoint(config, caae_ckpt)?;
    let mut dnanet = DnaNetModel::<f32>::new(config.dnanet_config(), 0)?;
    dnanet.load_entries(&load_checkpoint(dnanet_ckpt)?)?;

    // Frozen-encoder embeddings of all test faces.
    let features = compute_triplet_features(&caae, &test, config.image_side, config.batch_size)?;
    let count = test.len();
    let n = config.feature_dim;

    // Predicted child features via the deterministic max rule.
    let h_gen = {
        let mut g = Graph::new();
        let hf = g.constant(features.fathers.clone())?;
        let hm = g.constant(features.mothers.clone())?;
        let pred = dnanet.child_batch(&mut g, hf, hm, &SelectionMode::Max)?;
        g.value(pred).clone()
    };

    // Render each generated child under its real sibling's label, then
    // re-embed the rendered image.
    let labels: Vec<ConditionLabel> = test
        .iter()
        .map(|r| encode_label(r.child_age_years as i64, r.child_gender))
        .collect::<Result<_, _>>()?;
    let mut e_gen_data = vec![0.0f32; count * n];
    for start in (0..count).step_by(config.batch_size) {
        let end = (start + config.batch_size).min(count);
        let h_chunk = Tensor::new(
            vec![end - start, n],
            h_gen.data()[start * n..end * n].to_vec(),
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        let l_chunk = stack_labels(&labels[start..end])?;
        let images = caae.decode_batch_values(&h_chunk, &l_chunk)?;
        let embedded = caae.encode_batch_values(&images)?;
        e_gen_data[start * n..end * n].copy_from_slice(embedded.data());
    }
    let e_gen = Tensor::new(vec![count, n], e_gen_data)
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let fathers = rows_of(&features.fathers);
    let mothers = rows_of(&features.mothers);
    let children = rows_of(&features.children);
    let generated = rows_of(&e_gen);

    // One seeded derangement-style re-pairing shared by all four pair types.
    let mut neg_rng = SeededRng::new(config.seed_sampling).derive("negatives");
    let partners: Vec<usize> = (0..count)
        .map(|i| {
            if count == 1 {
                0
            } else {
                let mut j = neg_rng.below(count as u64 - 1) as usize;
                if j >= i {
                    j += 1;
                }
                j
            }
        })
        .collect();

    let score_set = |parents: &[Vec<f64>], kids: &[Vec<f64>]| -> CliResult<Vec<ScoredPair>> {
        let mut pairs = Vec::with_capacity(count * 2);
        for i in 0..count {
            pairs.push(
                ScoredPair::new(cosine_similarity(&parents[i], &kids[i])?, PairLabel::Kin)
                    .map_err(|e| CliError::Runtime(e.to_string()))?,
            );
            pairs.push(
                ScoredPair::new(
                    cosine_similarity(&parents[i], &kids[partners[i]])?,
                    PairLabel::NonKin,
                )
                .map_err(|e| CliError::Runtime(e.to_string()))?,
            );
        }
        Ok(pairs)
    };

    let mut rows = Vec::new();
    for (pair_type, parents, kids) in [
        ("father-real", &fathers, &children),
        ("father-generated", &fathers, &generated),
        ("mother-real", &mothers, &children),
        ("mother-generated", &mothers, &generated),
    ] {
        let roc = roc_and_accuracy(&score_set(parents, kids)?)?;
        rows.push(PairTypeMetrics {
            pair_type: pair_type.to_string(),
            auc: roc.auc,
            accuracy: roc.best_threshold_accuracy,
        });
    }

    let mut pairing_rng = SeededRng::new(config.seed_sampling).derive("embedding-pairing");
    let (matched_mean_distance, random_mean_distance) =
        embedding_similarity_report(&children, &generated, &mut pairing_rng)?;

    let report = EvaluateReport {
        test_triplets: count,
        rows,
        matched_mean_distance,
        random_mean_distance,
    };

    // metrics.json / metrics.csv
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Runtime(format!("metrics json: {e}")))?;
    write_text(&out.join("metrics.json"), &json)?;
    let mut csv = String::from("pair_type,auc,accuracy\n");
    for row in &report.rows {
        let _ = writeln!(csv, "{},{},{}", row.pair_type, row.auc, row.accuracy);
    }
    write_text(&out.join("metrics.csv"), &csv)?;

    // 2-D projection of every feature group.
    let mut all: Vec<Vec<f64>> = Vec::with_capacity(count * 4);
    let mut groups: Vec<&str> = Vec::with_capacity(count * 4);
    for (name, set) in [
        ("father", &fathers),
        ("mother", &mothers),
        ("real-child", &children),
        ("generated-child", &generated),
    ] {
        all.extend(set.iter().cloned());
        groups.extend(std::iter::repeat_n(name, count));
    }
    let points = project_2d(&all, config.seed_sampling)?;
    let mut proj_csv = String::from("group,x,y\n");
    for (group, p) in groups.iter().zip(&points) {
        let _ = writeln!(proj_csv, "{group},{},{}", p[0], p[1]);
    }
    write_text(&out.join("projection.csv"), &proj_csv)?;

    manifest.artifact(out, "metrics.json")?;
    manifest.artifact(out, "metrics.csv")?;
    manifest.artifact(out, "projection.csv")?;
    manifest.artifact(out, "config.json")?;
    manifest.finish(out)?;
    Ok(report)
}

/// Paths consumed by `evaluate`, for the argument parser.
#[derive(Debug, Clone)]
pub struct EvaluatePaths {
    pub caae_ckpt: PathBuf,
    pub dnanet_ckpt: PathBuf,
    pub triplets_csv: PathBuf,
}
