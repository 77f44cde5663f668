//! Unbiased pass@k: `1 − C(n−c, k) / C(n, k)`.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

fn check(n: usize, c: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return contract(format!("pass@k needs 1 ≤ k ≤ n, got k = {k}, n = {n}"));
    }
    if c > n {
        return contract(format!("correct count {c} exceeds samples {n}"));
    }
    Ok(())
}

pub fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Exact rational estimate.
pub fn pass_at_k_exact(n: usize, c: usize, k: usize) -> Result<BigRational> {
    check(n, c, k)?;
    let miss = BigRational::new(binomial(n - c, k).into(), binomial(n, k).into());
    Ok(BigRational::one() - miss)
}

/// Floating-point estimate via the product `1 − Π_{i=n−c+1}^{n} (1 − k/i)`.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    check(n, c, k)?;
    if n - c < k {
        return Ok(1.0);
    }
    let prod: f64 = ((n - c + 1)..=n)
        .map(|i| 1.0 - k as f64 / i as f64)
        .product();
    Ok(1.0 - prod)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtK {
    pub n: usize,
    pub k: usize,
    pub per_task: Vec<f64>,
    pub mean: f64,
}

/// pass@k for each task (given its correct count out of `n`) and the mean.
pub fn pass_at_k_tasks(n: usize, correct: &[usize], k: usize) -> Result<PassAtK> {
    if correct.is_empty() {
        return contract("pass@k needs at least one task");
    }
    let per_task = correct
        .iter()
        .map(|&c| pass_at_k(n, c, k))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Ok(PassAtK {
        n,
        k,
        per_task,
        mean,
    })
}

pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        assert_eq!(pass_at_k(2, 1, 1).unwrap(), 0.5);
        for k in 1..=5 {
            assert_eq!(pass_at_k(5, 5, k).unwrap(), 1.0);
            assert_eq!(pass_at_k_exact(5, 5, k).unwrap(), BigRational::one());
            assert_eq!(pass_at_k(5, 0, k).unwrap(), 0.0);
        }
        assert!(pass_at_k(3, 1, 4).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
    }

    #[test]
    fn float_agrees_with_exact() {
        for n in 1..=20 {
            for c in 0..=n {
                for k in 1..=n {
                    let e = to_f64(&pass_at_k_exact(n, c, k).unwrap());
                    assert!(
                        (pass_at_k(n, c, k).unwrap() - e).abs() < 1e-13,
                        "{n} {c} {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), BigUint::from(10u32));
        assert_eq!(binomial(3, 5), BigUint::zero());
        assert_eq!(binomial(60, 30).to_string(), "118264581564861424");
    }
}
