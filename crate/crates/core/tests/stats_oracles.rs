//! Statistics checked against independent routes: subset enumeration,
//! exact rational arithmetic, and the statrs distributions.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use statetune::evalkit::{
    aggregate, mean, pass_at_k, pass_at_k_exact, sample_std, sign_test, spearman, welch_t,
    SeedResult,
};
use statetune::numerics::Prng;

/// pass@k by enumerating every k-subset of n samples, c of them correct.
fn enumerate_pass_at_k(n: usize, c: usize, k: usize) -> BigRational {
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        total += 1;
        if (0..c).any(|i| mask & (1 << i) != 0) {
            hit += 1;
        }
    }
    BigRational::new(BigInt::from(hit), BigInt::from(total))
}

#[test]
fn pass_at_k_equals_subset_enumeration() {
    for n in 1..=8 {
        for c in 0..=n {
            for k in 1..=n {
                let want = enumerate_pass_at_k(n, c, k);
                assert_eq!(pass_at_k_exact(n, c, k).unwrap(), want, "n={n} c={c} k={k}");
                let f = pass_at_k(n, c, k).unwrap();
                assert!((f - want.to_f64().unwrap()).abs() < 1e-15);
            }
        }
    }
}

proptest! {
    #[test]
    fn pass_at_k_is_monotone(n in 1usize..60, c_frac in 0.0f64..=1.0, k_frac in 0.0f64..1.0) {
        let c = (c_frac * n as f64).round() as usize;
        let k = 1 + (k_frac * n as f64) as usize % n;
        let here = pass_at_k(n, c, k).unwrap();
        if k < n {
            prop_assert!(pass_at_k(n, c, k + 1).unwrap() >= here);
        }
        if c < n {
            prop_assert!(pass_at_k(n, c + 1, k).unwrap() >= here);
        }
        prop_assert!((0.0..=1.0).contains(&here));
    }

    #[test]
    fn welch_is_antisymmetric(a in prop::collection::vec(-5.0f64..5.0, 2..12), b in prop::collection::vec(-5.0f64..5.0, 2..12)) {
        prop_assume!(sample_std(&a) > 1e-6 && sample_std(&b) > 1e-6);
        let ab = welch_t(&a, &b).unwrap();
        let ba = welch_t(&b, &a).unwrap();
        prop_assert!((ab.t + ba.t).abs() < 1e-12 * ab.t.abs().max(1.0));
        prop_assert!((ab.p - ba.p).abs() < 1e-12);
        prop_assert!((ab.df - ba.df).abs() < 1e-9 * ab.df);
    }
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

/// Exact sample mean and unbiased variance of f64 data.
fn exact_moments(xs: &[f64]) -> (BigRational, BigRational) {
    let n = BigRational::from_integer(BigInt::from(xs.len()));
    let m = xs
        .iter()
        .map(|&x| exact(x))
        .fold(BigRational::zero(), |s, x| s + x)
        / &n;
    let ss = xs
        .iter()
        .map(|&x| (exact(x) - &m) * (exact(x) - &m))
        .fold(BigRational::zero(), |s, x| s + x);
    (m, ss / (n - BigRational::one()))
}

/// Welch statistic, df, and two-sided p from exact moments and statrs' t distribution.
fn welch_oracle(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let (ma, va) = exact_moments(a);
    let (mb, vb) = exact_moments(b);
    let na = BigRational::from_integer(BigInt::from(a.len()));
    let nb = BigRational::from_integer(BigInt::from(b.len()));
    let sa = &va / &na;
    let sb = &vb / &nb;
    let se2 = &sa + &sb;
    let t = (ma - mb).to_f64().unwrap() / se2.to_f64().unwrap().sqrt();
    let one = BigRational::one();
    let df = (&se2 * &se2) / (&sa * &sa / (na - &one) + &sb * &sb / (nb - &one));
    let df = df.to_f64().unwrap();
    let p = 2.0 * StudentsT::new(0.0, 1.0, df).unwrap().cdf(-t.abs());
    (t, df, p)
}

#[test]
fn welch_matches_exact_moment_oracle() {
    let mut rng = Prng::new(2024);
    for trial in 0..100 {
        let na = 2 + rng.below(14) as usize;
        let nb = 2 + rng.below(14) as usize;
        let shift = rng.normal() * 2.0;
        let sa = 0.1 + 3.0 * rng.uniform();
        let sb = 0.1 + 3.0 * rng.uniform();
        let a: Vec<f64> = (0..na).map(|_| rng.normal() * sa).collect();
        let b: Vec<f64> = (0..nb).map(|_| shift + rng.normal() * sb).collect();
        let w = welch_t(&a, &b).unwrap();
        let (t, df, p) = welch_oracle(&a, &b);
        assert!(
            (w.t - t).abs() < 1e-9 * t.abs().max(1.0),
            "trial {trial}: t {} vs {t}",
            w.t
        );
        assert!(
            (w.df - df).abs() < 1e-9 * df,
            "trial {trial}: df {} vs {df}",
            w.df
        );
        assert!((w.p - p).abs() < 1e-9, "trial {trial}: p {} vs {p}", w.p);
    }
}

#[test]
fn welch_reference_pair() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [2.0, 3.0, 4.0, 5.0, 6.0];
    let w = welch_t(&a, &b).unwrap();
    let (t, df, p) = welch_oracle(&a, &b);
    assert!((w.t - t).abs() < 1e-12 && (w.df - df).abs() < 1e-12 && (w.p - p).abs() < 1e-10);
    assert!((w.t + 1.0).abs() < 1e-12 && (w.df - 8.0).abs() < 1e-12);
}

#[test]
fn welch_huge_separation() {
    let a: Vec<f64> = (0..10).map(|i| 0.001 * i as f64).collect();
    let b: Vec<f64> = (0..10).map(|i| 100.0 + 0.001 * i as f64).collect();
    assert!(welch_t(&a, &b).unwrap().p < 1e-10);
}

/// Upper binomial tail in exact rationals.
fn binomial_tail(successes: u64, trials: u64, p: f64) -> BigRational {
    let p = exact(p);
    let q = BigRational::one() - &p;
    let mut total = BigRational::zero();
    for i in successes..=trials {
        let mut c = BigInt::one();
        for j in 0..i {
            c = c * BigInt::from(trials - j) / BigInt::from(j + 1);
        }
        let mut term = BigRational::from_integer(c);
        for _ in 0..i {
            term *= &p;
        }
        for _ in i..trials {
            term *= &q;
        }
        total += term;
    }
    total
}

#[test]
fn sign_test_matches_exact_binomial_tail() {
    assert!((sign_test(5, 10, 0.5).unwrap() - 0.623046875).abs() < 1e-12);
    assert_eq!(sign_test(0, 13, 0.3).unwrap(), 1.0);
    let mut rng = Prng::new(9);
    for _ in 0..100 {
        let n = 1 + rng.below(60);
        let s = rng.below(n + 1);
        let p = 0.02 + 0.96 * rng.uniform();
        let want = binomial_tail(s, n, p).to_f64().unwrap();
        let got = sign_test(s, n, p).unwrap();
        assert!(
            (got - want).abs() < 1e-9 * want.max(1e-300) || (got - want).abs() < 1e-15,
            "{s}/{n} at {p}: {got} vs {want}"
        );
    }
    let p27 = sign_test(27, 27, 0.1).unwrap();
    assert!((p27 / 1e-27 - 1.0).abs() < 1e-9);
    assert!(sign_test(23, 27, 0.1).unwrap() < 1e-8);
}

#[test]
fn spearman_matches_rank_oracle() {
    fn ranks(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&v| {
                let below = x.iter().filter(|&&u| u < v).count() as f64;
                let equal = x.iter().filter(|&&u| u == v).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let mut rng = Prng::new(4);
    for _ in 0..50 {
        let n = 3 + rng.below(20) as usize;
        let x: Vec<f64> = (0..n).map(|_| rng.below(6) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let (rx, ry) = (ranks(&x), ranks(&y));
        let (mx, my) = (mean(&rx), mean(&ry));
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
        if vx == 0.0 {
            continue;
        }
        let want = cov / (vx * vy).sqrt();
        assert!((spearman(&x, &y).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn aggregate_mean_is_exact_arithmetic_mean() {
    let mut rng = Prng::new(12);
    let rows: Vec<SeedResult> = (0..10)
        .map(|s| {
            let b = rng.uniform();
            let t = rng.uniform();
            SeedResult {
                seed: s,
                baseline_accuracy: b,
                tuned_accuracy: t,
                delta: t - b,
                degraded: 0,
                flipped: 0,
            }
        })
        .collect();
    let r = aggregate("s0", 10, &rows, None).unwrap();
    let deltas: Vec<f64> = rows.iter().map(|r| r.delta).collect();
    let exact_mean = deltas
        .iter()
        .map(|&d| exact(d))
        .fold(BigRational::zero(), |s, x| s + x)
        / BigRational::from_integer(BigInt::from(10));
    assert!((r.mean - exact_mean.to_f64().unwrap()).abs() < 1e-12);
    let (_, var) = exact_moments(&deltas);
    assert!((r.std.unwrap() - var.to_f64().unwrap().sqrt()).abs() < 1e-12);
    assert!(r.p_value.is_none() && !r.supportive);
}
