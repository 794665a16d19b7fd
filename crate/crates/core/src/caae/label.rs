use crate::error::{Error, Result};
use crate::numerics::tensor::{Scalar, Tensor};

/// Number of age bins.
pub const AGE_GROUPS: u8 = 10;
/// Encoded label width: 10-dim age one-hot plus a 10-dim gender block.
pub const LABEL_DIM: usize = 20;

/// Age-group and gender conditioning for the decoder.
///
/// The encoding is a 10-dim age one-hot concatenated with the 2-dim gender
/// one-hot tiled five times, so both halves are 10-dim and the gender block
/// sums to 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionLabel {
    age_group: u8,
    gender: u8,
}

impl ConditionLabel {
    pub fn new(age_group: u8, gender: u8) -> Result<Self> {
        if age_group >= AGE_GROUPS {
            return Err(Error::invalid(format!("age_group {age_group} out of 0..9")));
        }
        if gender > 1 {
            return Err(Error::invalid(format!("gender {gender} must be 0 or 1")));
        }
        Ok(ConditionLabel { age_group, gender })
    }

    pub fn age_group(&self) -> u8 {
        self.age_group
    }

    pub fn gender(&self) -> u8 {
        self.gender
    }

    pub fn encoded<S: Scalar>(&self) -> Vec<S> {
        let mut v = vec![S::zero(); LABEL_DIM];
        v[self.age_group as usize] = S::one();
        for tile in 0..5 {
            v[10 + tile * 2 + self.gender as usize] = S::one();
        }
        v
    }
}

/// Bin an age in years into the 10 age groups
/// {0-5, 6-10, 11-15, 16-20, 21-30, 31-40, 41-50, 51-60, 61-70, 71-80};
/// ages above 80 clamp to the last group.
pub fn encode_label(age_years: i64, gender: u8) -> Result<ConditionLabel> {
    if age_years < 0 {
        return Err(Error::invalid(format!("negative age {age_years}")));
    }
    let group = match age_years {
        0..=5 => 0,
        6..=10 => 1,
        11..=15 => 2,
        16..=20 => 3,
        21..=30 => 4,
        31..=40 => 5,
        41..=50 => 6,
        51..=60 => 7,
        61..=70 => 8,
        _ => 9,
    };
    ConditionLabel::new(group, gender)
}

/// Stack encoded labels into a `[batch, 20]` tensor.
pub fn stack_labels<S: Scalar>(labels: &[ConditionLabel]) -> Result<Tensor<S>> {
    if labels.is_empty() {
        return Err(Error::invalid("empty label batch"));
    }
    let mut data = Vec::with_capacity(labels.len() * LABEL_DIM);
    for l in labels {
        data.extend(l.encoded::<S>());
    }
    Tensor::new(vec![labels.len(), LABEL_DIM], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_age_bins() {
        assert_eq!(encode_label(3, 0).unwrap().age_group(), 0);
        assert_eq!(encode_label(25, 1).unwrap().age_group(), 4);
        assert_eq!(encode_label(116, 0).unwrap().age_group(), 9);
        // bin edges
        assert_eq!(encode_label(5, 0).unwrap().age_group(), 0);
        assert_eq!(encode_label(6, 0).unwrap().age_group(), 1);
        assert_eq!(encode_label(21, 0).unwrap().age_group(), 4);
        assert_eq!(encode_label(80, 0).unwrap().age_group(), 9);
    }

    #[test]
    fn negative_age_rejected() {
        assert!(encode_label(-1, 0).is_err());
    }

    #[test]
    fn encoding_sums() {
        for age_group in 0..AGE_GROUPS {
            for gender in 0..=1u8 {
                let l = ConditionLabel::new(age_group, gender).unwrap();
                let e = l.encoded::<f64>();
                assert_eq!(e.len(), LABEL_DIM);
                let age_sum: f64 = e[..10].iter().sum();
                let gender_sum: f64 = e[10..].iter().sum();
                assert_eq!(age_sum, 1.0);
                assert_eq!(gender_sum, 5.0);
            }
        }
    }

    #[test]
    fn encoding_is_injective_over_all_20_codes() {
        let mut seen = std::collections::HashSet::new();
        for age_group in 0..AGE_GROUPS {
            for gender in 0..=1u8 {
                let e = ConditionLabel::new(age_group, gender)
                    .unwrap()
                    .encoded::<f32>()
                    .iter()
                    .map(|v| *v as u8)
                    .collect::<Vec<_>>();
                assert!(seen.insert(e));
            }
        }
        assert_eq!(seen.len(), 20);
    }
}
