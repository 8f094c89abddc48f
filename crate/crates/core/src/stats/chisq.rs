//! Pearson chi-square test for counts over the positive integers.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::GoFReport;
use crate::error::{Error, Result};

const MIN_EXPECTED: f64 = 5.0;

/// Upper `1 - alpha` quantile of the chi-square law with `df` degrees of freedom.
pub fn chi_square_quantile(df: usize, level: f64) -> f64 {
    ChiSquared::new(df as f64).map(|d| d.inverse_cdf(level)).unwrap_or(f64::NAN)
}

/// Tests `counts[i]` (the number of observations of state `first_state + i`)
/// against `pmf` at the 5% level.
///
/// Bins are taken in increasing state order while both the bin and the
/// remaining tail expect at least five observations; everything after is
/// pooled into one tail bin.
pub fn chi_square_gof(counts: &[u64], first_state: u64, pmf: impl Fn(u64) -> f64, family: &str) -> Result<GoFReport> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidParams("chi-square test needs observations".into()));
    }
    let n = total as f64;
    let mut expected = Vec::new();
    let mut observed = Vec::new();
    let mut mass_used = 0.0;
    let mut obs_used = 0u64;
    let mut state = first_state;
    loop {
        let p = pmf(state);
        let tail_after = (1.0 - mass_used - p).max(0.0);
        if n * p < MIN_EXPECTED || n * tail_after < MIN_EXPECTED {
            break;
        }
        let o = counts.get((state - first_state) as usize).copied().unwrap_or(0);
        expected.push(n * p);
        observed.push(o);
        mass_used += p;
        obs_used += o;
        state += 1;
    }
    let tail_expected = n * (1.0 - mass_used).max(0.0);
    if tail_expected > 0.0 {
        expected.push(tail_expected);
        observed.push(total - obs_used);
    }
    if expected.len() < 2 {
        return Err(Error::InvalidParams("degenerate binning: fewer than two bins".into()));
    }
    let stat: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let df = expected.len() - 1;
    Ok(GoFReport::new(family, stat, chi_square_quantile(df, 0.95), total as usize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::logseries_pmf;

    #[test]
    fn quantile_reference_values() {
        // standard table values
        assert!((chi_square_quantile(1, 0.95) - 3.841).abs() < 1e-3);
        assert!((chi_square_quantile(5, 0.95) - 11.070).abs() < 1e-3);
        assert!((chi_square_quantile(10, 0.95) - 18.307).abs() < 1e-3);
    }

    #[test]
    fn exact_expected_counts_pass() {
        let pmf = |s: u64| logseries_pmf(0.5, s).unwrap();
        let counts: Vec<u64> = (1..40).map(|s| (10_000.0 * pmf(s)).round() as u64).collect();
        let rep = chi_square_gof(&counts, 1, pmf, "logseries:0.5").unwrap();
        assert!(rep.pass);
        assert!(rep.statistic < 1.0);
    }

    #[test]
    fn misspecified_counts_fail() {
        let counts: Vec<u64> = (1..60).map(|s| (10_000.0 * logseries_pmf(0.8, s).unwrap()).round() as u64).collect();
        let rep = chi_square_gof(&counts, 1, |s| logseries_pmf(0.5, s).unwrap(), "logseries:0.5").unwrap();
        assert!(!rep.pass);
    }

    #[test]
    fn degenerate_binning_rejected() {
        assert!(chi_square_gof(&[3], 1, |s| logseries_pmf(0.5, s).unwrap(), "x").is_err());
        assert!(chi_square_gof(&[], 1, |s| logseries_pmf(0.5, s).unwrap(), "x").is_err());
    }
}
