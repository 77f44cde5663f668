//! Per-seed results, multi-seed aggregation, and report rendering.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::evalkit::evaluate::Evaluation;
use crate::evalkit::stats::{mean, sample_std, welch_t};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub baseline_accuracy: f64,
    pub tuned_accuracy: f64,
    /// `tuned_accuracy − baseline_accuracy`.
    pub delta: f64,
    /// PASS→FAIL tasks relative to the same-seed baseline.
    pub degraded: usize,
    /// FAIL→PASS tasks.
    pub flipped: usize,
}

impl SeedResult {
    /// Compares two evaluations over the same task list.
    pub fn compare(seed: u64, baseline: &Evaluation, tuned: &Evaluation) -> Result<Self> {
        if baseline.records.len() != tuned.records.len()
            || baseline
                .records
                .iter()
                .zip(&tuned.records)
                .any(|(a, b)| a.task_id != b.task_id)
        {
            return contract("baseline and tuned evaluations cover different tasks");
        }
        let mut degraded = 0;
        let mut flipped = 0;
        for (b, t) in baseline.records.iter().zip(&tuned.records) {
            match (b.passed(), t.passed()) {
                (true, false) => degraded += 1,
                (false, true) => flipped += 1,
                _ => {}
            }
        }
        Ok(Self {
            seed,
            baseline_accuracy: baseline.accuracy,
            tuned_accuracy: tuned.accuracy,
            delta: tuned.accuracy - baseline.accuracy,
            degraded,
            flipped,
        })
    }
}

/// Seeds at or below this count are reported as supportive evidence only.
pub const SUPPORTIVE_MAX_SEEDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub trainable_params: usize,
    pub per_seed: Vec<SeedResult>,
    /// Mean of per-seed deltas.
    pub mean: f64,
    /// Sample std (n−1) of per-seed deltas; absent with one seed.
    pub std: Option<f64>,
    pub p_value: Option<f64>,
    pub comparator: Option<String>,
    pub test: String,
    pub supportive: bool,
}

impl EvalReport {
    pub fn deltas(&self) -> Vec<f64> {
        self.per_seed.iter().map(|s| s.delta).collect()
    }

    pub fn mean_degraded(&self) -> f64 {
        mean(
            &self
                .per_seed
                .iter()
                .map(|s| s.degraded as f64)
                .collect::<Vec<_>>(),
        )
    }
}

/// Summarizes per-seed deltas; with a comparator and ≥ 2 seeds on both
/// sides, adds a two-sided Welch p-value against the comparator's deltas.
pub fn aggregate(
    method: &str,
    trainable_params: usize,
    results: &[SeedResult],
    comparator: Option<&EvalReport>,
) -> Result<EvalReport> {
    if results.is_empty() {
        return contract("aggregate needs at least one seed result");
    }
    let deltas: Vec<f64> = results.iter().map(|r| r.delta).collect();
    let std = (deltas.len() >= 2).then(|| sample_std(&deltas));
    let (p_value, comparator_name, test) = match comparator {
        Some(c) if deltas.len() >= 2 && c.per_seed.len() >= 2 => {
            match welch_t(&deltas, &c.deltas()) {
                Ok(w) => (
                    Some(w.p),
                    Some(c.method.clone()),
                    format!("Welch two-sided t = {:.4}, df = {:.2}", w.t, w.df),
                ),
                Err(Error::DegenerateSample(why)) => {
                    (None, Some(c.method.clone()), format!("p undefined: {why}"))
                }
                Err(e) => return Err(e),
            }
        }
        Some(c) => (
            None,
            Some(c.method.clone()),
            "p omitted: fewer than 2 seeds".to_string(),
        ),
        None => (None, None, "none".to_string()),
    };
    Ok(EvalReport {
        method: method.to_string(),
        trainable_params,
        per_seed: results.to_vec(),
        mean: mean(&deltas),
        std,
        p_value,
        comparator: comparator_name,
        test,
        supportive: results.len() <= SUPPORTIVE_MAX_SEEDS,
    })
}

/// Report for the untuned model: zero delta on every seed.
pub fn baseline_report(results: &[SeedResult]) -> Result<EvalReport> {
    let zero: Vec<SeedResult> = results
        .iter()
        .map(|r| SeedResult {
            seed: r.seed,
            baseline_accuracy: r.baseline_accuracy,
            tuned_accuracy: r.baseline_accuracy,
            delta: 0.0,
            degraded: 0,
            flipped: 0,
        })
        .collect();
    aggregate("baseline", 0, &zero, None)
}

fn fmt_opt(x: Option<f64>, prec: usize) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$}"))
}

fn fmt_p(p: Option<f64>) -> String {
    p.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}"))
}

/// Aligned text table: method, params, mean Δ (pp), std, degraded, p.
pub fn render_table(reports: &[EvalReport]) -> String {
    let header = [
        "method",
        "params",
        "mean Δ (pp)",
        "std",
        "degraded",
        "p",
        "seeds",
    ];
    let rows: Vec<[String; 7]> = reports
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.trainable_params.to_string(),
                format!("{:+.2}", 100.0 * r.mean),
                fmt_opt(r.std.map(|s| 100.0 * s), 2),
                format!("{:.1}", r.mean_degraded()),
                fmt_p(r.p_value),
                format!(
                    "{}{}",
                    r.per_seed.len(),
                    if r.supportive { "*" } else { "" }
                ),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<String>| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                let pad = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(header.iter().map(|s| s.to_string()).collect());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.to_vec()));
        out.push('\n');
    }
    out
}

/// Per-seed table for one report.
pub fn render_seed_table(report: &EvalReport) -> String {
    let mut s = format!(
        "{}\nseed  baseline  tuned  delta(pp)  degraded  flipped\n",
        report.method
    );
    for r in &report.per_seed {
        s.push_str(&format!(
            "{:>4}  {:>8.3}  {:>5.3}  {:>+9.2}  {:>8}  {:>7}\n",
            r.seed,
            r.baseline_accuracy,
            r.tuned_accuracy,
            100.0 * r.delta,
            r.degraded,
            r.flipped
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sr(seed: u64, base: f64, tuned: f64) -> SeedResult {
        SeedResult {
            seed,
            baseline_accuracy: base,
            tuned_accuracy: tuned,
            delta: tuned - base,
            degraded: 0,
            flipped: 0,
        }
    }

    #[test]
    fn single_seed_is_supportive_without_p() {
        let base = baseline_report(&[sr(1, 0.5, 0.5), sr(2, 0.5, 0.5)]).unwrap();
        let r = aggregate("s0", 10, &[sr(1, 0.5, 0.6)], Some(&base)).unwrap();
        assert!(r.p_value.is_none());
        assert!(r.std.is_none());
        assert!(r.supportive);
    }

    #[test]
    fn mean_and_std_recompute() {
        let rs: Vec<SeedResult> = (0..10)
            .map(|i| sr(i, 0.4, 0.4 + 0.01 * (i as f64 % 4.0)))
            .collect();
        let base = baseline_report(&rs).unwrap();
        let r = aggregate("s0", 10, &rs, Some(&base)).unwrap();
        let d: Vec<f64> = rs.iter().map(|x| x.delta).collect();
        let m = d.iter().sum::<f64>() / 10.0;
        let v = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 9.0;
        assert!((r.mean - m).abs() < 1e-12);
        assert!((r.std.unwrap() - v.sqrt()).abs() < 1e-12);
        assert!(r.p_value.unwrap() < 0.05);
        assert!(!r.supportive);
        assert!(render_table(&[r.clone(), base]).contains("s0"));
    }
}
