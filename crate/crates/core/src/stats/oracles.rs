use crate::error::{Error, Result};

fn check_subcritical(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidParams(format!("need 0 < lambda < 1, got {lambda}")));
    }
    Ok(())
}

/// Stationary law of the population size for `lambda < 1`:
/// `lambda^n / (n * -ln(1 - lambda))`.
pub fn logseries_pmf(lambda: f64, n: u64) -> Result<f64> {
    check_subcritical(lambda)?;
    if n == 0 {
        return Err(Error::InvalidParams("log-series support starts at 1".into()));
    }
    let log_p = n as f64 * lambda.ln() - (n as f64).ln() - (-(-lambda).ln_1p()).ln();
    Ok(log_p.exp())
}

pub fn logseries_mean(lambda: f64) -> Result<f64> {
    check_subcritical(lambda)?;
    Ok(lambda / ((1.0 - lambda) * -(-lambda).ln_1p()))
}

/// Survival probability at `t` of the linear birth-death chain (birth rate
/// `lambda`, death rate 1 per individual, 0 absorbing) started from one
/// individual.
pub fn linear_bd_survival(lambda: f64, t: f64) -> Result<f64> {
    check_subcritical(lambda)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidParams(format!("t must be nonnegative, got {t}")));
    }
    let e = (-(1.0 - lambda) * t).exp();
    Ok(e * (1.0 - lambda) / (1.0 - lambda * e))
}
