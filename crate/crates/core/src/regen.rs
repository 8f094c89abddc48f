//! Excursion and regeneration structure for `lambda < 1`, `r > 0`.
//!
//! An excursion runs from one return of the population to a single type
//! (time `T_{n-1}`) to the next (`T_n`). It opens with a sojourn `xi` at one
//! type, after which a newcomer with fitness `u` joins the incumbent. The
//! first sojourn at two types lasts `eta` and ends with a birth, a least-fit
//! death, or a random death that hits either the incumbent or the newcomer.
//! When the incumbent is removed by random killing (`epsilon = 1`) the
//! population is back to one type whose fitness is a fresh uniform and whose
//! age is `eta`; these return times are the regeneration times `R_n`.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::engine::{EventKind, EventLog, EventRecord, ModelParams, Simulator, TypeRecord};
use crate::error::{Error, Result};
use crate::replicate::try_run_replicas;
use crate::stats::EmpiricalDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Up,
    DownLeastFit,
    DownRandomKillsIncumbent,
    DownRandomKillsNewcomer,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Up => "up",
            Outcome::DownLeastFit => "down_least_fit",
            Outcome::DownRandomKillsIncumbent => "down_random_incumbent",
            Outcome::DownRandomKillsNewcomer => "down_random_newcomer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcursionRecord {
    /// 1-based excursion index.
    pub n: u64,
    pub return_time_prev: f64,
    pub xi: f64,
    pub newcomer_fitness: f64,
    pub incumbent_fitness: f64,
    pub eta: f64,
    pub outcome: Outcome,
    pub epsilon: bool,
    /// Time the excursion ends back at one type; `None` while unfinished.
    pub return_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegenRecord {
    pub n: u64,
    pub time: f64,
    pub phi_at_r: f64,
    pub age_at_r: f64,
}

#[derive(Debug, Clone)]
enum Phase {
    AtOne { since: f64, incumbent: TypeRecord },
    AtTwo { since: f64, xi: f64, incumbent: TypeRecord, newcomer: TypeRecord },
    Away(ExcursionRecord),
}

/// Online excursion classifier fed one event at a time.
#[derive(Debug, Clone)]
pub struct ExcursionTracker {
    phase: Phase,
    alive: BTreeMap<u64, f64>,
    completed: u64,
}

impl ExcursionTracker {
    pub fn new(initial: TypeRecord) -> Self {
        let mut alive = BTreeMap::new();
        alive.insert(initial.id, initial.fitness);
        Self { phase: Phase::AtOne { since: 0.0, incumbent: initial }, alive, completed: 0 }
    }

    pub fn completed(&self) -> u64 {
        self.completed
    }

    /// The running excursion once its first two-type sojourn is classified.
    pub fn partial(&self) -> Option<ExcursionRecord> {
        match &self.phase {
            Phase::Away(rec) => Some(*rec),
            _ => None,
        }
    }

    /// Start of the running (unfinished) excursion.
    pub fn open_since(&self) -> f64 {
        match &self.phase {
            Phase::AtOne { since, .. } => *since,
            Phase::AtTwo { since, xi, .. } => since - xi,
            Phase::Away(rec) => rec.return_time_prev,
        }
    }

    /// Feeds one event; returns the excursion it completes, if any.
    pub fn on_event(&mut self, ev: &EventRecord) -> Result<Option<ExcursionRecord>> {
        match ev.kind {
            EventKind::Birth => {
                self.alive.insert(ev.subject_id, ev.fitness);
            }
            _ => {
                if self.alive.remove(&ev.subject_id).is_none() {
                    return Err(Error::InvalidParams(format!("event log kills unknown type {}", ev.subject_id)));
                }
            }
        }
        let next_index = self.completed + 1;
        let back_to_one = ev.kind.is_death() && ev.population_after == 1;
        let (next, done) = match std::mem::replace(&mut self.phase, Phase::AtOne { since: 0.0, incumbent: dummy() }) {
            Phase::AtOne { since, incumbent } => {
                if ev.kind != EventKind::Birth {
                    return Err(Error::InvalidParams(format!("death at a single type (t = {})", ev.time)));
                }
                let newcomer = TypeRecord { id: ev.subject_id, fitness: ev.fitness, birth_time: ev.time };
                (Phase::AtTwo { since: ev.time, xi: ev.time - since, incumbent, newcomer }, None)
            }
            Phase::AtTwo { since, xi, incumbent, newcomer } => {
                let outcome = match ev.kind {
                    EventKind::Birth => Outcome::Up,
                    EventKind::DeathLeastFit => Outcome::DownLeastFit,
                    EventKind::DeathRandom if ev.subject_id == incumbent.id => Outcome::DownRandomKillsIncumbent,
                    EventKind::DeathRandom => Outcome::DownRandomKillsNewcomer,
                };
                let rec = ExcursionRecord {
                    n: next_index,
                    return_time_prev: since - xi,
                    xi,
                    newcomer_fitness: newcomer.fitness,
                    incumbent_fitness: incumbent.fitness,
                    eta: ev.time - since,
                    outcome,
                    epsilon: outcome == Outcome::DownRandomKillsIncumbent,
                    return_time: None,
                };
                if back_to_one {
                    (self.restart(ev.time)?, Some(rec))
                } else {
                    (Phase::Away(rec), None)
                }
            }
            Phase::Away(rec) => {
                if back_to_one {
                    (self.restart(ev.time)?, Some(rec))
                } else {
                    (Phase::Away(rec), None)
                }
            }
        };
        self.phase = next;
        Ok(done.map(|mut rec| {
            rec.return_time = Some(ev.time);
            self.completed += 1;
            rec
        }))
    }

    fn restart(&self, at: f64) -> Result<Phase> {
        let (&id, &fitness) = self
            .alive
            .iter()
            .next()
            .filter(|_| self.alive.len() == 1)
            .ok_or_else(|| Error::InvalidParams("log population disagrees with replayed types".into()))?;
        Ok(Phase::AtOne { since: at, incumbent: TypeRecord { id, fitness, birth_time: f64::NAN } })
    }
}

fn dummy() -> TypeRecord {
    TypeRecord { id: u64::MAX, fitness: f64::NAN, birth_time: f64::NAN }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcursionScan {
    pub excursions: Vec<ExcursionRecord>,
    /// Classified but unfinished final excursion.
    pub partial: Option<ExcursionRecord>,
    /// Unfinished excursions dropped from `excursions` (0 or 1).
    pub censored: usize,
}

/// Splits an event log that starts at one type into excursions.
pub fn detect_excursions(log: &EventLog) -> Result<ExcursionScan> {
    let mut tracker = ExcursionTracker::new(log.initial);
    let mut excursions = Vec::new();
    for ev in &log.events {
        if let Some(rec) = tracker.on_event(ev)? {
            excursions.push(rec);
        }
    }
    let last_return = excursions.last().and_then(|e| e.return_time).unwrap_or(0.0);
    let censored = usize::from(log.t_end > last_return || log.events.is_empty());
    Ok(ExcursionScan { excursions, partial: tracker.partial(), censored })
}

/// Regeneration times: returns ending an excursion with `epsilon = 1`.
/// Each is checked against the log to have exactly one type alive.
pub fn detect_regenerations(excursions: &[ExcursionRecord], log: &EventLog) -> Result<Vec<RegenRecord>> {
    let mut out = Vec::new();
    for e in excursions.iter().filter(|e| e.epsilon) {
        let time = e.return_time.ok_or_else(|| Error::InvalidParams("regeneration from unfinished excursion".into()))?;
        let idx = log.events.partition_point(|ev| ev.time < time);
        let ok = log.events.get(idx).is_some_and(|ev| {
            ev.time == time && ev.population_after == 1 && ev.kind == EventKind::DeathRandom
        });
        if !ok {
            return Err(Error::InvalidParams(format!("no single-type return in the log at t = {time}")));
        }
        out.push(RegenRecord { n: out.len() as u64 + 1, time, phi_at_r: e.newcomer_fitness, age_at_r: e.eta });
    }
    Ok(out)
}

/// Probability that a given excursion ends with the incumbent removed by
/// random killing: `r / (2 (1 + lambda))`.
pub fn bernoulli_p(params: &ModelParams) -> f64 {
    params.r() / (2.0 * (1.0 + params.lambda()))
}

/// Default censoring horizon `50 / (1 - lambda)`.
pub fn default_censor_time(params: &ModelParams) -> f64 {
    50.0 / (1.0 - params.lambda()).max(1e-3)
}

#[derive(Debug, Clone)]
pub struct R1Estimate {
    /// Uncensored first regeneration times; `None` when every replica was censored.
    pub samples: Option<EmpiricalDistribution>,
    pub n_replicas: u64,
    pub censored: u64,
    pub mu_hat: f64,
    pub mu_std_error: f64,
}

impl R1Estimate {
    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.n_replicas as f64
    }
}

/// Runs one replica until its first regeneration; `None` if censored.
pub fn first_regeneration(
    params: ModelParams,
    t_censor: f64,
    seed: u64,
    replica: u64,
    initial_age: f64,
) -> Result<Option<RegenRecord>> {
    let mut sim = Simulator::new(params, seed, replica, initial_age);
    let mut tracker = ExcursionTracker::new(*sim.state().champion());
    let mut found = None;
    let mut failure = None;
    sim.run(
        t_censor,
        &[],
        |ev, _| match tracker.on_event(ev) {
            Ok(Some(rec)) if rec.epsilon => {
                found = Some(RegenRecord { n: 1, time: ev.time, phi_at_r: rec.newcomer_fitness, age_at_r: rec.eta });
                ControlFlow::Break(())
            }
            Ok(_) => ControlFlow::Continue(()),
            Err(e) => {
                failure = Some(e);
                ControlFlow::Break(())
            }
        },
        |_| {},
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(found),
    }
}

/// Monte Carlo law of the first regeneration time.
///
/// Needs `lambda < 1`: supercritical runs grow without bound before the
/// censoring time. With `r = 0` every replica is censored.
pub fn estimate_r1(params: ModelParams, n_replicas: u64, t_censor: f64, seed: u64, workers: usize) -> Result<R1Estimate> {
    if !(params.lambda() < 1.0) {
        return Err(Error::Usage(format!("R_1 estimation needs lambda < 1, got {}", params.lambda())));
    }
    if !(t_censor > 0.0) {
        return Err(Error::Usage(format!("t_censor must be positive, got {t_censor}")));
    }
    if n_replicas == 0 {
        return Err(Error::Usage("need at least one replica".into()));
    }
    let results = try_run_replicas(n_replicas, workers, |i| first_regeneration(params, t_censor, seed, i, 0.0))?;
    let times: Vec<f64> = results.iter().flatten().map(|r| r.time).collect();
    let censored = n_replicas - times.len() as u64;
    if censored as f64 / n_replicas as f64 > 1e-3 {
        log::warn!("{censored} of {n_replicas} replicas censored at t = {t_censor}");
    }
    let samples = if times.is_empty() { None } else { Some(EmpiricalDistribution::new(times)?) };
    let (mu_hat, mu_std_error) = samples.as_ref().map_or((f64::NAN, f64::NAN), |s| (s.mean(), s.std_error()));
    Ok(R1Estimate { samples, n_replicas, censored, mu_hat, mu_std_error })
}

/// Decay rates of the empirical survival function on `[q50, q90]` and
/// `[q90, q99]`; an exponential tail gives two similar rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailCheck {
    pub rate_mid: f64,
    pub rate_far: f64,
}

impl TailCheck {
    pub fn ratio(&self) -> f64 {
        self.rate_far / self.rate_mid
    }
}

pub fn exponential_tail_check(samples: &EmpiricalDistribution) -> TailCheck {
    let surv = |t: f64| 1.0 - samples.cdf(t);
    let rate = |a: f64, b: f64| (surv(a) / surv(b)).ln() / (b - a);
    let (q50, q90, q99) = (samples.quantile(0.5), samples.quantile(0.9), samples.quantile(0.99));
    TailCheck { rate_mid: rate(q50, q90), rate_far: rate(q90, q99) }
}

/// Regenerations of one long trajectory, together with its excursions.
pub fn regenerations_for_replica(
    params: ModelParams,
    t_max: f64,
    seed: u64,
    replica: u64,
) -> Result<(ExcursionScan, Vec<RegenRecord>)> {
    let traj = crate::engine::simulate_replica(params, t_max, &[], seed, replica)?;
    let scan = detect_excursions(&traj.log)?;
    let regens = detect_regenerations(&scan.excursions, &traj.log)?;
    Ok((scan, regens))
}

/// Lag-1 sample correlation of a series.
pub fn lag1_correlation(xs: &[f64]) -> f64 {
    if xs.len() < 3 {
        return f64::NAN;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    let cov: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    cov / var
}
