use crate::error::{Error, Result};

/// Group-relative advantages `(r_i - mean) / std` with the population
/// standard deviation. A group whose rewards are all equal gets all-zero
/// advantages.
pub fn compute_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::BadGroup(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFiniteLoss("non-finite reward in group".into()));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(compute_advantages(&[1.0, 0.0]).unwrap(), vec![1.0, -1.0]);
        assert_eq!(compute_advantages(&[0.3; 4]).unwrap(), vec![0.0; 4]);
        assert_eq!(
            compute_advantages(&[1.0, 0.0, 0.0, 1.0]).unwrap(),
            vec![1.0, -1.0, -1.0, 1.0]
        );
        assert!(matches!(compute_advantages(&[1.0]), Err(Error::BadGroup(1))));
    }

    proptest! {
        #[test]
        fn zero_mean_unit_std(rewards in prop::collection::vec(-1.0f64..1.0, 2..32)) {
            let a = compute_advantages(&rewards).unwrap();
            let n = a.len() as f64;
            let sum: f64 = a.iter().sum();
            prop_assert!(sum.abs() <= 1e-9);
            if rewards.iter().any(|&r| r != rewards[0]) {
                let std = (a.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
                prop_assert!((std - 1.0).abs() <= 1e-9);
            } else {
                prop_assert!(a.iter().all(|&x| x == 0.0));
            }
        }
    }
}
