//! Renewal equations for the limit laws of the maximal fitness and of the
//! age of the fittest type (`lambda < 1`, `r > 0`).
//!
//! With `F` the law of the first regeneration time `R_1` and
//! `h(t) = P(observable_t <= threshold, R_1 > t)`, the one-time law
//! `H(t) = P(observable_t <= threshold)` solves `H = h + H * F`, and
//! `H(t) -> (1/mu) int_0^inf h(s) ds` with `mu = E R_1`.

use std::io::{Read, Write};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::engine::{ModelParams, Simulator};
use crate::error::{Error, Result};
use crate::regen::ExcursionTracker;
use crate::replicate::try_run_replicas;
use crate::rng;

/// Samples of a function on `0, dt, 2 dt, ..`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParams(format!("grid step must be positive, got {dt}")));
        }
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("grid values must be finite and non-empty".into()));
        }
        Ok(Self { dt, values })
    }

    pub fn from_fn(dt: f64, horizon: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let n = grid_len(dt, horizon)?;
        Self::new(dt, (0..n).map(|k| f(k as f64 * dt)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.dt * (self.len() - 1) as f64
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| k as f64 * self.dt)
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Trapezoid rule over the whole grid.
    pub fn integral(&self) -> f64 {
        let v = &self.values;
        if v.len() < 2 {
            return 0.0;
        }
        self.dt * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[v.len() - 1]))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "value"])?;
        for (t, v) in self.times().zip(&self.values) {
            wr.write_record([t.to_string(), v.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a two-column `t,value` CSV on an evenly spaced grid from 0.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut ts = Vec::new();
        let mut vs = Vec::new();
        for row in rd.deserialize::<(f64, f64)>() {
            let (t, v) = row?;
            ts.push(t);
            vs.push(v);
        }
        if ts.len() < 2 || ts[0] != 0.0 {
            return Err(Error::InvalidParams("grid CSV must start at t = 0 with at least two rows".into()));
        }
        let dt = ts[1] - ts[0];
        if ts.iter().enumerate().any(|(k, t)| (t - k as f64 * dt).abs() > 1e-9 * (1.0 + t.abs())) {
            return Err(Error::InvalidParams("grid CSV is not evenly spaced".into()));
        }
        Self::new(dt, vs)
    }
}

fn grid_len(dt: f64, horizon: f64) -> Result<usize> {
    if !(dt > 0.0 && horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParams(format!("bad grid: dt = {dt}, horizon = {horizon}")));
    }
    Ok((horizon / dt + 1e-9).floor() as usize + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalProblem {
    /// Distribution function of `R_1`.
    pub f: GridFunction,
    /// Forcing term `h`.
    pub h: GridFunction,
    pub mu: f64,
}

impl RenewalProblem {
    pub fn new(f: GridFunction, h: GridFunction, mu: f64) -> Result<Self> {
        if f.len() != h.len() || (f.dt - h.dt).abs() > 1e-12 {
            return Err(Error::InvalidParams("F and h must share a grid".into()));
        }
        if f.values[0] != 0.0 {
            return Err(Error::InvalidParams("F must vanish at 0 (no mass at the origin)".into()));
        }
        if f.values.windows(2).any(|w| w[1] < w[0]) || f.values.iter().any(|v| *v > 1.0 + 1e-12) {
            return Err(Error::InvalidParams("F must be a nondecreasing distribution function".into()));
        }
        if h.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParams("h must take values in [0, 1]".into()));
        }
        if !(mu > 0.0) {
            return Err(Error::InvalidParams(format!("mu must be positive, got {mu}")));
        }
        Ok(Self { f, h, mu })
    }
}

/// Bound on `|H|` beyond which the solution is reported as diverging.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Solves `H(t_k) = h(t_k) + sum_{j=1..k} H(t_k - t_j) (F(t_j) - F(t_{j-1}))`.
pub fn solve_renewal(problem: &RenewalProblem) -> Result<GridFunction> {
    let f = &problem.f.values;
    let h = &problem.h.values;
    let df: Vec<f64> = std::iter::once(0.0).chain(f.windows(2).map(|w| w[1] - w[0])).collect();
    let mut out = Vec::with_capacity(h.len());
    for k in 0..h.len() {
        let conv: f64 = (1..=k).map(|j| out[k - j] * df[j]).sum();
        let v = h[k] + conv;
        if !v.is_finite() || v.abs() > DIVERGENCE_BOUND {
            return Err(Error::Diverged { time: k as f64 * problem.h.dt, value: v, bound: DIVERGENCE_BOUND });
        }
        out.push(v);
    }
    GridFunction::new(problem.h.dt, out)
}

/// `(1/mu) int_0^horizon h`, by the trapezoid rule.
pub fn limit_value(h: &GridFunction, mu: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::InvalidParams(format!("mu must be positive, got {mu}")));
    }
    if h.last() > 1e-3 {
        log::warn!("h({}) = {} exceeds 1e-3; the limit is truncated", h.horizon(), h.last());
    }
    Ok(h.integral() / mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fitness,
    Age,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fitness" => Ok(Mode::Fitness),
            "age" => Ok(Mode::Age),
            _ => Err(Error::Usage(format!("mode must be `fitness` or `age`, got `{s}`"))),
        }
    }
}

/// Monte Carlo inputs of the renewal equation, for several thresholds at once
/// (common random numbers, so the estimates are monotone in the threshold).
#[derive(Debug, Clone)]
pub struct RenewalInputs {
    pub mode: Mode,
    pub thresholds: Vec<f64>,
    /// `h` for each threshold.
    pub h: Vec<GridFunction>,
    /// Empirical distribution function of `R_1` on the same grid.
    pub f: GridFunction,
    pub mu_hat: f64,
    pub n_replicas: u64,
    pub censored: u64,
    /// Per-replica `(R_1, trapezoid integral of the indicator for each threshold)`;
    /// censored replicas report `R_1 = t_censor`.
    pub per_replica: Vec<(f64, Vec<f64>)>,
}

impl RenewalInputs {
    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.n_replicas as f64
    }

    /// Limit estimate and its delta-method standard error for threshold `i`.
    pub fn limit_with_error(&self, i: usize) -> (f64, f64) {
        let n = self.per_replica.len() as f64;
        let mean_r = self.per_replica.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_j = self.per_replica.iter().map(|p| p.1[i]).sum::<f64>() / n;
        let l = mean_j / mean_r;
        let var = self.per_replica.iter().map(|p| (p.1[i] - l * p.0).powi(2)).sum::<f64>() / (n - 1.0);
        (l, (var / n).sqrt() / mean_r)
    }

    pub fn problem(&self, i: usize) -> Result<RenewalProblem> {
        RenewalProblem::new(self.f.clone(), self.h[i].clone(), self.mu_hat)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub dt: f64,
    pub horizon: f64,
}

/// Estimates `h(t) = P(observable_t <= threshold, R_1 > t)` on a grid.
///
/// Every replica starts from one type with uniform fitness; in age mode its
/// age is exponential with rate `2 (lambda + 1)`, the law of the survivor's
/// age at a regeneration. Replicas run to the first regeneration or to
/// `max(horizon, t_censor)`.
pub fn estimate_h(
    params: ModelParams,
    thresholds: &[f64],
    mode: Mode,
    grid: GridSpec,
    n_replicas: u64,
    seed: u64,
    workers: usize,
) -> Result<RenewalInputs> {
    if !(params.lambda() < 1.0 && params.r() > 0.0) {
        return Err(Error::Usage(format!(
            "renewal estimation needs lambda < 1 and r > 0, got lambda = {}, r = {}",
            params.lambda(),
            params.r()
        )));
    }
    if thresholds.is_empty() {
        return Err(Error::Usage("at least one threshold is required".into()));
    }
    let len = grid_len(grid.dt, grid.horizon)?;
    let t_censor = grid.horizon.max(crate::regen::default_censor_time(&params));
    let age_rate = 2.0 * (params.lambda() + 1.0);

    let rows = try_run_replicas(n_replicas, workers, |replica| {
        let initial_age = match mode {
            Mode::Fitness => 0.0,
            Mode::Age => rng::exp_rate(&mut rng::substream(seed, "renewal/initial-age", replica), age_rate),
        };
        let mut sim = Simulator::new(params, seed, replica, initial_age);
        let mut tracker = ExcursionTracker::new(*sim.state().champion());
        // indicator per grid point and threshold, filled while R_1 > t
        let mut hits = vec![vec![false; thresholds.len()]; len];
        let mut next_k = 0usize;
        let mut r1 = None;
        let mut failure = None;
        // (max fitness, champion birth time) of the state before the next event
        let champion = |s: &crate::engine::PopulationState| (s.max_fitness(), s.champion().birth_time);
        let mut fill_until = |(phi, born): (f64, f64), upto: f64, hits: &mut Vec<Vec<bool>>| {
            while next_k < len && (next_k as f64 * grid.dt) < upto {
                let t = next_k as f64 * grid.dt;
                let v = match mode {
                    Mode::Fitness => phi,
                    Mode::Age => t - born,
                };
                for (slot, thr) in hits[next_k].iter_mut().zip(thresholds) {
                    *slot = v <= *thr;
                }
                next_k += 1;
            }
        };
        let mut prev = champion(sim.state());
        sim.run(
            t_censor,
            &[],
            |ev, state| {
                fill_until(prev, ev.time, &mut hits);
                match tracker.on_event(ev) {
                    Ok(Some(rec)) if rec.epsilon => {
                        r1 = Some(ev.time);
                        return ControlFlow::Break(());
                    }
                    Ok(_) => {}
                    Err(e) => {
                        failure = Some(e);
                        return ControlFlow::Break(());
                    }
                }
                prev = champion(state);
                ControlFlow::Continue(())
            },
            |_| {},
        );
        if let Some(e) = failure {
            return Err(e);
        }
        if r1.is_none() {
            fill_until(prev, f64::INFINITY, &mut hits);
        }
        let integrals: Vec<f64> = (0..thresholds.len())
            .map(|i| {
                let col: Vec<f64> = hits.iter().map(|row| f64::from(u8::from(row[i]))).collect();
                trapezoid(&col, grid.dt)
            })
            .collect();
        Ok((r1, hits, integrals))
    })?;

    let n = n_replicas as f64;
    let mut h = vec![vec![0.0; len]; thresholds.len()];
    let mut f = vec![0.0; len];
    let mut per_replica = Vec::with_capacity(rows.len());
    let mut censored = 0;
    let mut r1_sum = 0.0;
    for (r1, hits, integrals) in rows {
        for (k, row) in hits.iter().enumerate() {
            for (i, hit) in row.iter().enumerate() {
                if *hit {
                    h[i][k] += 1.0 / n;
                }
            }
        }
        match r1 {
            Some(t) => {
                let first = ((t / grid.dt).ceil() as usize).min(len);
                for v in &mut f[first..] {
                    *v += 1.0 / n;
                }
                r1_sum += t;
                per_replica.push((t, integrals));
            }
            None => {
                censored += 1;
                per_replica.push((t_censor, integrals));
            }
        }
    }
    if censored as f64 / n > 1e-3 {
        log::warn!("{censored} of {n_replicas} replicas censored at t = {t_censor}");
    }
    let uncensored = n_replicas - censored;
    let mu_hat = if uncensored > 0 { r1_sum / uncensored as f64 } else { f64::NAN };
    for v in &mut f {
        *v = v.min(1.0);
    }
    f[0] = 0.0;
    Ok(RenewalInputs {
        mode,
        thresholds: thresholds.to_vec(),
        h: h.into_iter().map(|v| GridFunction::new(grid.dt, v.into_iter().map(|x| x.min(1.0)).collect())).collect::<Result<_>>()?,
        f: GridFunction::new(grid.dt, f)?,
        mu_hat,
        n_replicas,
        censored,
        per_replica,
    })
}

fn trapezoid(v: &[f64], dt: f64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    dt * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[v.len() - 1]))
}

/// Machine-readable summary of one renewal run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalReport {
    pub v_or_x: f64,
    pub limit: f64,
    pub limit_std_error: f64,
    #[serde(rename = "H_at_horizon")]
    pub h_at_horizon: f64,
    pub mu_hat: f64,
    pub censored_fraction: f64,
}

/// Estimation, solution and limit for each threshold.
pub fn renewal_reports(inputs: &RenewalInputs) -> Result<Vec<(RenewalReport, GridFunction)>> {
    (0..inputs.thresholds.len())
        .map(|i| {
            let problem = inputs.problem(i)?;
            let big_h = solve_renewal(&problem)?;
            let limit = limit_value(&problem.h, problem.mu)?;
            let (_, se) = inputs.limit_with_error(i);
            Ok((
                RenewalReport {
                    v_or_x: inputs.thresholds[i],
                    limit,
                    limit_std_error: se,
                    h_at_horizon: big_h.last(),
                    mu_hat: inputs.mu_hat,
                    censored_fraction: inputs.censored_fraction(),
                },
                big_h,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: Vec<f64>) -> GridFunction {
        GridFunction::new(0.1, values).unwrap()
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let f = GridFunction::from_fn(0.1, 5.0, |t| 1.0 - (-t).exp()).unwrap();
        let h = grid(vec![0.0; f.len()]);
        let sol = solve_renewal(&RenewalProblem::new(f, h, 1.0).unwrap()).unwrap();
        assert!(sol.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn no_mass_on_grid_gives_forcing() {
        let f = grid(vec![0.0; 30]);
        let h = GridFunction::from_fn(0.1, 2.9, |t| (-t).exp()).unwrap();
        let sol = solve_renewal(&RenewalProblem::new(f, h.clone(), 1.0).unwrap()).unwrap();
        assert_eq!(sol, h);
    }

    #[test]
    fn unit_mass_at_first_step_telescopes() {
        let mut fv = vec![1.0; 20];
        fv[0] = 0.0;
        let sol = solve_renewal(&RenewalProblem::new(grid(fv), grid(vec![1.0; 20]), 0.1).unwrap()).unwrap();
        for (k, v) in sol.values.iter().enumerate() {
            assert_eq!(*v, (k + 1) as f64);
        }
    }

    #[test]
    fn divergence_reported() {
        let h = GridFunction { dt: 0.1, values: vec![2.0 * DIVERGENCE_BOUND; 3] };
        let f = GridFunction { dt: 0.1, values: vec![0.0; 3] };
        let err = solve_renewal(&RenewalProblem { f, h, mu: 1.0 }).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn invalid_problems_rejected() {
        let h = grid(vec![0.5; 5]);
        assert!(RenewalProblem::new(grid(vec![0.5; 5]), h.clone(), 1.0).is_err());
        assert!(RenewalProblem::new(grid(vec![0.0, 0.5, 0.4, 0.6, 0.7]), h.clone(), 1.0).is_err());
        assert!(RenewalProblem::new(grid(vec![0.0; 4]), h.clone(), 1.0).is_err());
        assert!(RenewalProblem::new(grid(vec![0.0; 5]), h.clone(), 0.0).is_err());
        assert!(RenewalProblem::new(grid(vec![0.0; 5]), grid(vec![1.5; 5]), 1.0).is_err());
    }

    #[test]
    fn limit_value_examples() {
        let zero = grid(vec![0.0; 10]);
        assert_eq!(limit_value(&zero, 2.0).unwrap(), 0.0);
        let h = GridFunction::from_fn(0.001, 40.0, |t| (-t).exp()).unwrap();
        assert!((limit_value(&h, 2.0).unwrap() - 0.5).abs() < 1e-6);
        assert!(limit_value(&h, 0.0).is_err());
    }

    #[test]
    fn first_order_convergence_exponential_renewal() {
        // F exponential(1), h = e^{-2t}; Laplace inversion gives H = (1 + e^{-2t}) / 2
        let exact = 0.5 * (1.0 + (-10.0f64).exp());
        let solve_at = |dt: f64| {
            let f = GridFunction::from_fn(dt, 5.0, |t| 1.0 - (-t).exp()).unwrap();
            let h = GridFunction::from_fn(dt, 5.0, |t| (-2.0 * t).exp()).unwrap();
            solve_renewal(&RenewalProblem::new(f, h, 1.0).unwrap()).unwrap().last()
        };
        let e1 = (solve_at(0.02) - exact).abs();
        let e2 = (solve_at(0.01) - exact).abs();
        let e3 = (solve_at(0.005) - exact).abs();
        assert!(e1 > 0.0 && e1 < 0.01);
        assert!((e1 / e2 - 2.0).abs() < 0.2, "{e1} {e2}");
        assert!((e2 / e3 - 2.0).abs() < 0.2, "{e2} {e3}");
    }

    #[test]
    fn csv_round_trip() {
        let g = GridFunction::from_fn(0.25, 2.0, |t| t * t).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = GridFunction::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), g.len());
        for (a, b) in back.values.iter().zip(&g.values) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(GridFunction::read_csv("t,value\n0,1\n0.1,2\n0.3,3\n".as_bytes()).is_err());
    }

    #[test]
    fn estimate_h_edge_thresholds() {
        let p = ModelParams::new(0.5, 0.5).unwrap();
        let spec = GridSpec { dt: 0.5, horizon: 60.0 };
        let inp = estimate_h(p, &[0.0, 0.5, 1.0], Mode::Fitness, spec, 400, 3, 1).unwrap();
        assert!(inp.h[0].values.iter().all(|v| *v == 0.0));
        // v = 1: h is the empirical survival function of R_1
        for (hv, fv) in inp.h[2].values.iter().zip(&inp.f.values) {
            assert!((hv + fv - 1.0).abs() < 1e-9, "{hv} {fv}");
        }
        assert!(inp.h[0].values.iter().zip(&inp.h[1].values).all(|(a, b)| a <= b));
        assert!(inp.h[1].values.iter().zip(&inp.h[2].values).all(|(a, b)| a <= b));
        assert!(estimate_h(ModelParams::new(1.2, 0.5).unwrap(), &[0.5], Mode::Age, spec, 10, 1, 1).is_err());
    }
}
