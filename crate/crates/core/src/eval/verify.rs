use crate::error::{Error, Result};
use crate::numerics::rng::SeededRng;

/// `dot(a,b) / (|a||b|)`, clamped into `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!(
            "cosine_similarity dims {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine_similarity on a zero vector"));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 - cosine_similarity`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Kin,
    NonKin,
}

/// A similarity score with its ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    score: f64,
    label: PairLabel,
}

impl ScoredPair {
    pub fn new(score: f64, label: PairLabel) -> Result<Self> {
        if !score.is_finite() || !(-1.0..=1.0).contains(&score) {
            return Err(Error::invalid(format!("score {score} outside [-1, 1]")));
        }
        Ok(ScoredPair { score, label })
    }

    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn label(&self) -> PairLabel {
        self.label
    }
}

/// ROC curve with its area and the best accuracy over the threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// (false-positive-rate, true-positive-rate), non-decreasing, from (0,0)
    /// to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub best_threshold_accuracy: f64,
}

/// Sweep thresholds over the distinct scores (kin iff score >= threshold).
/// AUC by the trapezoid rule; accuracy ties break toward the lower threshold.
pub fn roc_and_accuracy(pairs: &[ScoredPair]) -> Result<RocCurve> {
    let pos = pairs.iter().filter(|p| p.label == PairLabel::Kin).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(format!(
            "need both classes: {pos} kin, {neg} non-kin"
        )));
    }

    let mut sorted: Vec<&ScoredPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("scores are finite"));

    // One curve point per distinct score, descending.
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].score;
        while i < sorted.len() && sorted[i].score == s {
            match sorted[i].label {
                PairLabel::Kin => tp += 1,
                PairLabel::NonKin => fp += 1,
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }

    let mut auc = 0.0;
    for w in points.windows(2) {
        let (x1, y1) = w[0];
        let (x2, y2) = w[1];
        auc += (x2 - x1) * (y1 + y2) / 2.0;
    }

    // Accuracy sweep, ascending so ties keep the lowest threshold. The
    // all-negative classifier (threshold above every score) is a candidate
    // too.
    let mut thresholds: Vec<f64> = sorted.iter().map(|p| p.score).collect();
    thresholds.dedup();
    thresholds.reverse();
    let mut best_acc = 0.0;
    for &t in &thresholds {
        let correct = pairs
            .iter()
            .filter(|p| match p.label {
                PairLabel::Kin => p.score >= t,
                PairLabel::NonKin => p.score < t,
            })
            .count();
        let acc = correct as f64 / pairs.len() as f64;
        if acc > best_acc {
            best_acc = acc;
        }
    }
    let all_negative = neg as f64 / pairs.len() as f64;
    if all_negative > best_acc {
        best_acc = all_negative;
    }

    Ok(RocCurve {
        points,
        auc,
        best_threshold_accuracy: best_acc,
    })
}

/// Mean cosine distance over matched (real, generated) pairs, and over a
/// seeded random re-pairing of the same lists (each generated child against
/// a different family's real child).
pub fn embedding_similarity_report(
    real_children: &[Vec<f64>],
    generated_children: &[Vec<f64>],
    rng: &mut SeededRng,
) -> Result<(f64, f64)> {
    if real_children.is_empty() || real_children.len() != generated_children.len() {
        return Err(Error::invalid(format!(
            "need aligned non-empty lists: {} real, {} generated",
            real_children.len(),
            generated_children.len()
        )));
    }
    let k = real_children.len();
    let mut matched = 0.0;
    for (r, g) in real_children.iter().zip(generated_children) {
        matched += cosine_distance(r, g)?;
    }
    matched /= k as f64;

    let mut random = 0.0;
    for (i, g) in generated_children.iter().enumerate() {
        let j = if k == 1 {
            0
        } else {
            // a seeded partner other than the matched one
            let mut j = rng.below(k as u64 - 1) as usize;
            if j >= i {
                j += 1;
            }
            j
        };
        random += cosine_distance(&real_children[j], g)?;
    }
    random /= k as f64;

    Ok((matched, random))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(score: f64, kin: bool) -> ScoredPair {
        ScoredPair::new(score, if kin { PairLabel::Kin } else { PairLabel::NonKin }).unwrap()
    }

    /// The rank statistic: fraction of (kin, non-kin) pairs ordered
    /// correctly, ties counted half.
    pub(super) fn brute_force_auc(pairs: &[ScoredPair]) -> f64 {
        let kin: Vec<f64> = pairs
            .iter()
            .filter(|p| p.label() == PairLabel::Kin)
            .map(|p| p.score())
            .collect();
        let non: Vec<f64> = pairs
            .iter()
            .filter(|p| p.label() == PairLabel::NonKin)
            .map(|p| p.score())
            .collect();
        let mut acc = 0.0;
        for &k in &kin {
            for &n in &non {
                acc += if k > n {
                    1.0
                } else if k == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        acc / (kin.len() * non.len()) as f64
    }

    #[test]
    fn cosine_basics() {
        let v = vec![0.3, -0.7, 0.2];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            0.0
        );
        let got = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((got - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn perfectly_separated_scores() {
        let pairs = vec![pair(0.9, true), pair(0.8, true), pair(0.2, false), pair(0.1, false)];
        let roc = roc_and_accuracy(&pairs).unwrap();
        assert_eq!(roc.auc, 1.0);
        assert_eq!(roc.best_threshold_accuracy, 1.0);
        assert_eq!(roc.points.first().unwrap(), &(0.0, 0.0));
        assert_eq!(roc.points.last().unwrap(), &(1.0, 1.0));
    }

    #[test]
    fn all_equal_scores_auc_half() {
        let pairs = vec![pair(0.5, true), pair(0.5, false), pair(0.5, true), pair(0.5, false)];
        let roc = roc_and_accuracy(&pairs).unwrap();
        assert_eq!(roc.auc, 0.5);
        assert_eq!(roc.points, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn worked_example_auc_075() {
        let pairs = vec![
            pair(0.9, true),
            pair(0.8, false),
            pair(0.7, true),
            pair(0.1, false),
        ];
        let roc = roc_and_accuracy(&pairs).unwrap();
        assert_eq!(roc.auc, 0.75);
        assert_eq!(roc.auc, brute_force_auc(&pairs));
        assert_eq!(roc.best_threshold_accuracy, 0.75);
    }

    #[test]
    fn single_class_rejected() {
        let pairs = vec![pair(0.9, true), pair(0.1, true)];
        assert!(roc_and_accuracy(&pairs).is_err());
    }

    #[test]
    fn curve_is_monotone() {
        let mut rng = SeededRng::new(4);
        let pairs: Vec<ScoredPair> = (0..60)
            .map(|_| {
                // quantised scores force plenty of ties
                let s = (rng.uniform(-1.0, 1.0) * 4.0).round() / 4.0;
                pair(s, rng.bernoulli(0.4))
            })
            .collect();
        let roc = roc_and_accuracy(&pairs).unwrap();
        for w in roc.points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        assert!((roc.auc - brute_force_auc(&pairs)).abs() < 1e-12);
    }

    #[test]
    fn monotone_transform_invariance() {
        let mut rng = SeededRng::new(5);
        let pairs: Vec<ScoredPair> = (0..40)
            .map(|_| pair((rng.uniform(-1.0, 1.0) * 8.0).round() / 8.0, rng.bernoulli(0.5)))
            .collect();
        let base = roc_and_accuracy(&pairs).unwrap();
        // strictly monotone map of [-1,1] into itself: atan-like squash
        let squashed: Vec<ScoredPair> = pairs
            .iter()
            .map(|p| ScoredPair::new((p.score() * 0.5).tanh(), p.label()).unwrap())
            .collect();
        let after = roc_and_accuracy(&squashed).unwrap();
        assert!((base.auc - after.auc).abs() < 1e-12);
        assert!((base.best_threshold_accuracy - after.best_threshold_accuracy).abs() < 1e-12);
    }

    #[test]
    fn embedding_report_identity_and_determinism() {
        let mut rng = SeededRng::new(6);
        let real: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let (matched, random) =
            embedding_similarity_report(&real, &real, &mut SeededRng::new(7)).unwrap();
        assert!(matched.abs() < 1e-12);
        assert!(random > 0.0);

        let again = embedding_similarity_report(&real, &real, &mut SeededRng::new(7)).unwrap();
        assert_eq!((matched, random), again);

        assert!(embedding_similarity_report(&[], &[], &mut rng).is_err());
    }
}
