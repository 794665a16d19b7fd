use std::fmt::Write as _;

use kinsynth_core::data::{synth_family, write_triplets_csv, SyntheticWorld};
use kinsynth_core::data::image_io::save_image;
use kinsynth_core::SeededRng;

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{CliError, CliResult};

use super::{prepare_output, write_text};

/// Emit a fully seed-determined synthetic dataset: labeled face images (the
/// filename carries age/gender), a triplet CSV, and the ground-truth gene
/// table with the selection masks.
pub fn cmd_synth_data(config: &RunConfig) -> CliResult<()> {
    config.validate()?;
    prepare_output(config)?;
    let out = &config.output_dir;
    let mut manifest = RunManifest::begin("synth-data", config);

    let images_dir = out.join("images");
    std::fs::create_dir_all(&images_dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", images_dir.display())))?;

    let world = SyntheticWorld::new(config.seed_world, config.synth_gene_dim, config.image_side)?;
    let mut rng = SeededRng::new(config.seed_sampling).derive("synth-data");

    let mut csv_rows = Vec::new();
    let mut genes_csv = String::from("family_id,member");
    for i in 0..config.synth_gene_dim {
        let _ = write!(genes_csv, ",g{i}");
    }
    genes_csv.push('\n');

    for i in 0..config.synth_families {
        let family_id = format!("fam{i:05}");
        let family = synth_family(&world, &mut rng)?;
        let father_age = 25 + rng.below(31) as u32;
        let mother_age = 25 + rng.below(31) as u32;
        let child_age = rng.below(21) as u32;
        let child_gender = rng.bernoulli(0.5) as u8;

        let father_name = format!("{father_age}_0_0_{family_id}-f.png");
        let mother_name = format!("{mother_age}_1_0_{family_id}-m.png");
        let child_name = format!("{child_age}_{child_gender}_0_{family_id}-c.png");
        save_image(&family.father.image, images_dir.join(&father_name))?;
        save_image(&family.mother.image, images_dir.join(&mother_name))?;
        save_image(&family.child.image, images_dir.join(&child_name))?;

        csv_rows.push((
            family_id.clone(),
            format!("images/{father_name}"),
            format!("images/{mother_name}"),
            format!("images/{child_name}"),
            child_age,
            child_gender,
        ));

        for (member, genes) in [
            ("father", &family.father.genes),
            ("mother", &family.mother.genes),
            ("child", &family.child.genes),
        ] {
            let _ = write!(genes_csv, "{family_id},{member}");
            for v in genes.values().data() {
                let _ = write!(genes_csv, ",{v}");
            }
            genes_csv.push('\n');
        }
        let _ = write!(genes_csv, "{family_id},mask");
        for b in family.mask.bits() {
            let _ = write!(genes_csv, ",{b}");
        }
        genes_csv.push('\n');
    }

    write_triplets_csv(out.join("triplets.csv"), &csv_rows)?;
    write_text(&out.join("genes.csv"), &genes_csv)?;

    manifest.artifact(out, "triplets.csv")?;
    manifest.artifact(out, "genes.csv")?;
    manifest.artifact(out, "config.json")?;
    manifest.finish(out)?;
    Ok(())
}
