//! Where tuned and baseline greedy outputs first part ways.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::evalkit::stats::sign_test;
use crate::evalkit::{evaluate, EvalMode, Evaluation};
use crate::model::{Adapted, HybridModel, Token};
use crate::scalar::Scalar;
use crate::tasks::TaskInstance;
use crate::tuning::{AdaptationBundle, StateBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FlipType {
    FailToPass,
    PassToFail,
    Unchanged,
}

impl FlipType {
    pub fn classify(baseline_pass: bool, tuned_pass: bool) -> Self {
        match (baseline_pass, tuned_pass) {
            (false, true) => FlipType::FailToPass,
            (true, false) => FlipType::PassToFail,
            _ => FlipType::Unchanged,
        }
    }
}

/// Index of the first differing token, `-1` when the sequences are identical.
/// A strict prefix differs at the shorter length.
pub fn first_divergence(a: &[Token], b: &[Token]) -> i64 {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => i as i64,
        None if a.len() == b.len() => -1,
        None => a.len().min(b.len()) as i64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRecord {
    pub task_id: u64,
    pub flip: FlipType,
    pub index: i64,
    /// `index / len(tuned output)`; absent when the outputs are identical.
    pub fraction: Option<f64>,
}

impl DivergenceRecord {
    pub fn new(task_id: u64, flip: FlipType, baseline: &[Token], tuned: &[Token]) -> Self {
        let index = first_divergence(baseline, tuned);
        let fraction = (index >= 0).then(|| index as f64 / tuned.len().max(1) as f64);
        Self {
            task_id,
            flip,
            index,
            fraction,
        }
    }
}

/// Share of the completion counted as "early" for the concentration test.
pub const EARLY_FRACTION: f64 = 0.1;
/// Null probability of an early divergence used by the sign test.
pub const DIVERGENCE_NULL_P: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceStudy {
    /// FAIL→PASS records only.
    pub records: Vec<DivergenceRecord>,
    pub n_flips: usize,
    pub at_zero: usize,
    pub fraction_at_zero: f64,
    pub mean_fraction: f64,
    pub median_fraction: f64,
    /// Flips diverging strictly before `EARLY_FRACTION` of the completion.
    pub early: usize,
    pub null_p: f64,
    /// One-sided binomial `P(X ≥ early)`.
    pub sign_test_p: f64,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Every task's divergence record, FAIL→PASS or otherwise.
pub fn divergence_records(
    baseline: &Evaluation,
    tuned: &Evaluation,
) -> Result<Vec<DivergenceRecord>> {
    if baseline.records.len() != tuned.records.len() {
        return contract("baseline and tuned evaluations cover different tasks");
    }
    baseline
        .records
        .iter()
        .zip(&tuned.records)
        .map(|(b, t)| {
            if b.task_id != t.task_id {
                return contract("baseline and tuned evaluations are not aligned by task");
            }
            Ok(DivergenceRecord::new(
                b.task_id,
                FlipType::classify(b.passed(), t.passed()),
                &b.output,
                &t.output,
            ))
        })
        .collect()
}

/// Summary over FAIL→PASS flips with the sign test for early concentration.
pub fn summarize_flips(records: &[DivergenceRecord], null_p: f64) -> Result<DivergenceStudy> {
    let flips: Vec<DivergenceRecord> = records
        .iter()
        .filter(|r| r.flip == FlipType::FailToPass)
        .cloned()
        .collect();
    if flips.is_empty() {
        return Err(Error::Contract("no flips to analyze".into()));
    }
    let fractions: Vec<f64> = flips.iter().map(|r| r.fraction.unwrap_or(0.0)).collect();
    let at_zero = flips.iter().filter(|r| r.index == 0).count();
    let early = fractions.iter().filter(|&&f| f < EARLY_FRACTION).count();
    let n = flips.len();
    Ok(DivergenceStudy {
        n_flips: n,
        at_zero,
        fraction_at_zero: at_zero as f64 / n as f64,
        mean_fraction: fractions.iter().sum::<f64>() / n as f64,
        median_fraction: median(&fractions),
        early,
        null_p,
        sign_test_p: sign_test(early as u64, n as u64, null_p)?,
        records: flips,
    })
}

/// Greedy evaluation with and without `bank`, then the flip summary.
pub fn divergence_study<T: Scalar>(
    model: &HybridModel<T>,
    bank: &StateBank<T>,
    tasks: &[TaskInstance],
) -> Result<DivergenceStudy> {
    let none = AdaptationBundle::none();
    let tuned_bundle = AdaptationBundle::with_state(bank.clone());
    let base = evaluate(
        &Adapted {
            model,
            bundle: &none,
        },
        tasks,
        EvalMode::Greedy,
    )?;
    let tuned = evaluate(
        &Adapted {
            model,
            bundle: &tuned_bundle,
        },
        tasks,
        EvalMode::Greedy,
    )?;
    summarize_flips(&divergence_records(&base, &tuned)?, DIVERGENCE_NULL_P)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_divergence_cases() {
        assert_eq!(first_divergence(&[1, 2, 3], &[1, 2, 3]), -1);
        assert_eq!(first_divergence(&[], &[]), -1);
        assert_eq!(first_divergence(&[4, 2], &[1, 2]), 0);
        assert_eq!(first_divergence(&[1, 2], &[1, 2, 0]), 2);
        let r = DivergenceRecord::new(7, FlipType::FailToPass, &[5, 5], &[6, 5, 0]);
        assert_eq!((r.index, r.fraction), (0, Some(0.0)));
    }

    #[test]
    fn all_flips_at_zero() {
        let recs: Vec<DivergenceRecord> = (0..20)
            .map(|i| DivergenceRecord {
                task_id: i,
                flip: FlipType::FailToPass,
                index: 0,
                fraction: Some(0.0),
            })
            .collect();
        let s = summarize_flips(&recs, 0.5).unwrap();
        assert_eq!(s.at_zero, 20);
        assert!((s.sign_test_p - 0.5f64.powi(20)).abs() < 1e-18);
        assert!(s.sign_test_p < 1e-5);
    }

    #[test]
    fn no_flips_is_an_error() {
        let r = DivergenceRecord {
            task_id: 0,
            flip: FlipType::Unchanged,
            index: -1,
            fraction: None,
        };
        let err = summarize_flips(&[r], 0.5).unwrap_err();
        assert!(err.to_string().contains("no flips to analyze"));
    }
}
