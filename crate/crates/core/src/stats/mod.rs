//! Empirical distributions, goodness-of-fit tests and closed-form oracles.

mod chisq;
mod growth;
mod ks;
mod oracles;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use chisq::{chi_square_gof, chi_square_quantile};
pub use growth::{growth_diagnostics, simulate_growth, GrowthDiagnostics, GrowthPath, GrowthRecorder};
pub use ks::{ks_statistic, ks_two_sample, ks_with_threshold, KS_CRITICAL_5PCT};
pub use oracles::{linear_bd_survival, logseries_mean, logseries_pmf};

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParams("empirical distribution needs at least one sample".into()));
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidParams("samples contain NaN".into()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Fraction of samples `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.samples.partition_point(|s| *s <= x) as f64 / self.len() as f64
    }

    /// Lower empirical quantile.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let idx = ((p * self.len() as f64).ceil() as usize).clamp(1, self.len()) - 1;
        self.samples[idx]
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.len() as f64
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        let n = self.len() as f64;
        if n < 2.0 {
            return f64::NAN;
        }
        let m = self.mean();
        let var = self.samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }
}

/// Outcome of one goodness-of-fit test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoFReport {
    pub family: String,
    pub statistic: f64,
    pub threshold: f64,
    pub n: usize,
    pub pass: bool,
}

impl GoFReport {
    pub fn new(family: impl Into<String>, statistic: f64, threshold: f64, n: usize) -> Self {
        Self { family: family.into(), statistic, threshold, n, pass: statistic <= threshold }
    }
}

/// Reference laws addressable by name (`uniform`, `exp:RATE`, `power:K`,
/// `logseries:LAMBDA`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceLaw {
    Uniform,
    Exponential { rate: f64 },
    /// Law of the maximum of `k` iid uniforms, cdf `u^k`.
    Power { k: u32 },
    LogSeries { lambda: f64 },
}

impl ReferenceLaw {
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            ReferenceLaw::Uniform => x.clamp(0.0, 1.0),
            ReferenceLaw::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            ReferenceLaw::Power { k } => x.clamp(0.0, 1.0).powi(k as i32),
            ReferenceLaw::LogSeries { lambda } => {
                if x < 1.0 {
                    return 0.0;
                }
                let top = x.floor() as u64;
                (1..=top).map(|n| logseries_pmf(lambda, n).unwrap_or(0.0)).sum::<f64>().min(1.0)
            }
        }
    }
}

impl fmt::Display for ReferenceLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceLaw::Uniform => write!(f, "uniform"),
            ReferenceLaw::Exponential { rate } => write!(f, "exp:{rate}"),
            ReferenceLaw::Power { k } => write!(f, "power:{k}"),
            ReferenceLaw::LogSeries { lambda } => write!(f, "logseries:{lambda}"),
        }
    }
}

impl FromStr for ReferenceLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::Usage(format!("law `{s}` needs a parameter")))?
                .parse::<f64>()
                .map_err(|e| Error::Usage(format!("bad parameter in `{s}`: {e}")))
        };
        let law = match name {
            "uniform" => ReferenceLaw::Uniform,
            "exp" | "exponential" => {
                let rate = num(arg)?;
                if !(rate > 0.0) {
                    return Err(Error::Usage(format!("exponential rate must be positive in `{s}`")));
                }
                ReferenceLaw::Exponential { rate }
            }
            "power" => {
                let k = num(arg)?;
                if k < 1.0 || k.fract() != 0.0 {
                    return Err(Error::Usage(format!("power exponent must be a positive integer in `{s}`")));
                }
                ReferenceLaw::Power { k: k as u32 }
            }
            "logseries" => {
                let lambda = num(arg)?;
                logseries_pmf(lambda, 1).map_err(|_| Error::Usage(format!("log-series needs 0 < lambda < 1 in `{s}`")))?;
                ReferenceLaw::LogSeries { lambda }
            }
            _ => return Err(Error::Usage(format!("unknown reference law `{s}`"))),
        };
        Ok(law)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_basics() {
        let e = EmpiricalDistribution::new(vec![3.0, 1.0, 2.0, 4.0]).unwrap();
        assert_eq!(e.samples(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.cdf(2.0), 0.5);
        assert_eq!(e.cdf(0.5), 0.0);
        assert_eq!(e.quantile(0.5), 2.0);
        assert_eq!(e.quantile(1.0), 4.0);
        assert_eq!(e.mean(), 2.5);
        assert!(EmpiricalDistribution::new(vec![]).is_err());
        assert!(EmpiricalDistribution::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn law_names_round_trip() {
        for s in ["uniform", "exp:3", "power:2", "logseries:0.5"] {
            let law: ReferenceLaw = s.parse().unwrap();
            assert_eq!(law.to_string(), s);
        }
        assert!("exp".parse::<ReferenceLaw>().is_err());
        assert!("power:1.5".parse::<ReferenceLaw>().is_err());
        assert!("logseries:1.2".parse::<ReferenceLaw>().is_err());
        assert!("normal".parse::<ReferenceLaw>().is_err());
    }

    #[test]
    fn law_cdfs() {
        assert_eq!(ReferenceLaw::Uniform.cdf(0.3), 0.3);
        assert!((ReferenceLaw::Exponential { rate: 2.0 }.cdf(1.0) - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        assert!((ReferenceLaw::Power { k: 3 }.cdf(0.5) - 0.125).abs() < 1e-15);
        let ls = ReferenceLaw::LogSeries { lambda: 0.5 };
        assert!((ls.cdf(1.0) - 0.5 / 2f64.ln()).abs() < 1e-12);
        assert!((ls.cdf(300.0) - 1.0).abs() < 1e-12);
    }
}
