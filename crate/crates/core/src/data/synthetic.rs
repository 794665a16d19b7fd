//! A synthetic genetic world with known ground truth.
//!
//! Real kinship datasets never expose the latent genes, so there is no way to
//! check recombination end to end on them. This world fixes that: individuals
//! ARE their gene vectors, a seeded nonlinear render map turns genes into
//! images, and children are exact mask-selections of their parents' genes.
//! Whatever the pipeline recovers can be compared against this ground truth.

use crate::caae::FaceImage;
use crate::dnanet::{sample_mask, select_mask, GeneVector, SelectionMask};
use crate::error::{Error, Result};
use crate::numerics::rng::SeededRng;
use crate::numerics::tensor::Tensor;

/// Fixed render map from true genes to images: seeded dense layer, tanh,
/// then a 3x3 binomial smoothing with edge-clamped padding (a convex
/// combination, so pixels stay inside (-1, 1)).
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    gene_dim: usize,
    image_side: usize,
    seed: u64,
    weights: Vec<f32>,
    biases: Vec<f32>,
}

impl SyntheticWorld {
    pub fn new(seed: u64, gene_dim: usize, image_side: usize) -> Result<Self> {
        if gene_dim == 0 {
            return Err(Error::invalid("gene_dim must be positive"));
        }
        if image_side < 32 || !image_side.is_power_of_two() {
            return Err(Error::invalid(format!(
                "image_side {image_side} must be a power of two >= 32"
            )));
        }
        let pixels = image_side * image_side * 3;
        let mut rng = SeededRng::new(seed).derive("synthetic-world");
        // Scale so pre-activations have std around 1.2 for uniform genes.
        let a = 3.6 / (gene_dim as f64).sqrt();
        let mut weights = vec![0.0f32; pixels * gene_dim];
        rng.fill_uniform(&mut weights, -a, a);
        let mut biases = vec![0.0f32; pixels];
        rng.fill_uniform(&mut biases, -0.5, 0.5);
        Ok(SyntheticWorld {
            gene_dim,
            image_side,
            seed,
            weights,
            biases,
        })
    }

    pub fn gene_dim(&self) -> usize {
        self.gene_dim
    }

    pub fn image_side(&self) -> usize {
        self.image_side
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Draw a gene vector uniformly on `[-1,1]^d`.
    pub fn sample_genes(&self, rng: &mut SeededRng) -> GeneVector<f32> {
        let mut t = Tensor::zeros(&[self.gene_dim]);
        rng.fill_uniform(t.data_mut(), -1.0, 1.0);
        GeneVector::new(t).expect("rank-1 by construction")
    }

    /// Deterministic render of a gene vector.
    pub fn render(&self, genes: &GeneVector<f32>) -> Result<FaceImage<f32>> {
        if genes.dim() != self.gene_dim {
            return Err(Error::shape(format!(
                "genes dim {} != world dim {}",
                genes.dim(),
                self.gene_dim
            )));
        }
        let side = self.image_side;
        let pixels = side * side * 3;
        let g = genes.values().data();
        let mut flat = vec![0.0f32; pixels];
        for (p, out) in flat.iter_mut().enumerate() {
            let row = &self.weights[p * self.gene_dim..(p + 1) * self.gene_dim];
            let mut acc = self.biases[p];
            for (w, x) in row.iter().zip(g) {
                acc += w * x;
            }
            *out = acc.tanh();
        }

        // 3x3 binomial smoothing per channel, edge-clamped.
        let kernel = [1.0f32, 2.0, 1.0];
        let mut smoothed = vec![0.0f32; pixels];
        let clamp = |v: isize| -> usize { v.clamp(0, side as isize - 1) as usize };
        for y in 0..side {
            for x in 0..side {
                for c in 0..3 {
                    let mut acc = 0.0f32;
                    for (dy, ky) in (-1isize..=1).zip(kernel) {
                        for (dx, kx) in (-1isize..=1).zip(kernel) {
                            let sy = clamp(y as isize + dy);
                            let sx = clamp(x as isize + dx);
                            acc += ky * kx * flat[(sy * side + sx) * 3 + c];
                        }
                    }
                    smoothed[(y * side + x) * 3 + c] = acc / 16.0;
                }
            }
        }
        FaceImage::new(Tensor::new(vec![side, side, 3], smoothed)?)
    }

    /// Sample and render one unrelated individual.
    pub fn sample_individual(&self, rng: &mut SeededRng) -> Result<SynthMember> {
        let genes = self.sample_genes(rng);
        let image = self.render(&genes)?;
        Ok(SynthMember { genes, image })
    }
}

#[derive(Debug, Clone)]
pub struct SynthMember {
    pub genes: GeneVector<f32>,
    pub image: FaceImage<f32>,
}

#[derive(Debug, Clone)]
pub struct SynthFamily {
    pub father: SynthMember,
    pub mother: SynthMember,
    pub child: SynthMember,
    pub mask: SelectionMask,
}

/// Draw parents uniformly, pick the child's genes by a random 0-1 mask over
/// the parents', and render all three through the same map.
pub fn synth_family(world: &SyntheticWorld, rng: &mut SeededRng) -> Result<SynthFamily> {
    let father_genes = world.sample_genes(rng);
    let mother_genes = world.sample_genes(rng);
    let mask = sample_mask(world.gene_dim(), rng);
    let child_genes = select_mask(&father_genes, &mother_genes, &mask)?;
    Ok(SynthFamily {
        father: SynthMember {
            image: world.render(&father_genes)?,
            genes: father_genes,
        },
        mother: SynthMember {
            image: world.render(&mother_genes)?,
            genes: mother_genes,
        },
        child: SynthMember {
            image: world.render(&child_genes)?,
            genes: child_genes,
        },
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seeds_same_family() {
        let w1 = SyntheticWorld::new(7, 8, 32).unwrap();
        let w2 = SyntheticWorld::new(7, 8, 32).unwrap();
        let f1 = synth_family(&w1, &mut SeededRng::new(3)).unwrap();
        let f2 = synth_family(&w2, &mut SeededRng::new(3)).unwrap();
        assert_eq!(f1.father.genes, f2.father.genes);
        assert_eq!(f1.child.image.pixels().data(), f2.child.image.pixels().data());
        assert_eq!(f1.mask, f2.mask);
    }

    #[test]
    fn child_genes_come_from_parents() {
        let world = SyntheticWorld::new(1, 8, 32).unwrap();
        let mut rng = SeededRng::new(2);
        for _ in 0..50 {
            let fam = synth_family(&world, &mut rng).unwrap();
            for i in 0..8 {
                let c = fam.child.genes.values().data()[i];
                let f = fam.father.genes.values().data()[i];
                let m = fam.mother.genes.values().data()[i];
                assert!(c == f || c == m);
                let from_father = fam.mask.bits()[i] == 1;
                assert_eq!(c, if from_father { f } else { m });
            }
        }
    }

    #[test]
    fn identical_parents_give_identical_child_image() {
        let world = SyntheticWorld::new(5, 8, 32).unwrap();
        let mut rng = SeededRng::new(6);
        let genes = world.sample_genes(&mut rng);
        let mask = sample_mask(8, &mut rng);
        let child_genes = select_mask(&genes, &genes, &mask).unwrap();
        assert_eq!(child_genes, genes);
        let a = world.render(&genes).unwrap();
        let b = world.render(&child_genes).unwrap();
        assert_eq!(a.pixels().data(), b.pixels().data());
    }

    #[test]
    fn renders_differ_across_genes() {
        let world = SyntheticWorld::new(9, 8, 32).unwrap();
        let mut rng = SeededRng::new(10);
        let a = world.sample_individual(&mut rng).unwrap();
        let b = world.sample_individual(&mut rng).unwrap();
        let diff: f32 = a
            .image
            .pixels()
            .data()
            .iter()
            .zip(b.image.pixels().data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        assert!(diff > 1.0, "images too similar: {diff}");
    }

    #[test]
    fn world_validation() {
        assert!(SyntheticWorld::new(0, 0, 32).is_err());
        assert!(SyntheticWorld::new(0, 8, 20).is_err());
        assert!(SyntheticWorld::new(0, 8, 48).is_err());
    }
}
