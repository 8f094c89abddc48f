//! Exact event-driven simulation of the population process.
//!
//! The next event time is drawn from the total jump rate, then the event
//! type, then (for deaths) the killing rule and the victim. Each of those
//! draws comes from its own seeded substream (see [`crate::rng`]), so the
//! killing coin of a run can be inspected independently of everything else.

mod ranked;
pub mod reduced;

use std::cmp::Ordering;
use std::ops::ControlFlow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

pub use ranked::{RankKey, RankedList};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    lambda: f64,
    r: f64,
}

impl ModelParams {
    pub fn new(lambda: f64, r: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParams(format!("lambda must be positive, got {lambda}")));
        }
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidParams(format!("r must lie in [0, 1], got {r}")));
        }
        Ok(Self { lambda, r })
    }

    #[inline]
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn r(&self) -> f64 {
        self.r
    }
}

/// One living type. A negative `birth_time` encodes an age carried into the run
/// by the initial type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeRecord {
    pub id: u64,
    pub fitness: f64,
    pub birth_time: f64,
}

impl RankKey for TypeRecord {
    #[inline]
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.fitness.total_cmp(&other.fitness).then(self.id.cmp(&other.id))
    }

    #[inline]
    fn unit_key(&self) -> f64 {
        self.fitness
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Birth,
    DeathRandom,
    DeathLeastFit,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Birth => "birth",
            EventKind::DeathRandom => "death_random",
            EventKind::DeathLeastFit => "death_least_fit",
        }
    }

    pub fn is_death(self) -> bool {
        !matches!(self, EventKind::Birth)
    }
}

/// One transition. `fitness` is the fitness of the created or killed type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub kind: EventKind,
    pub subject_id: u64,
    pub fitness: f64,
    pub population_after: u64,
}

/// Complete audit trail of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub initial: TypeRecord,
    pub events: Vec<EventRecord>,
    /// Time up to which the log is complete.
    pub t_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    #[serde(rename = "t")]
    pub time: f64,
    #[serde(rename = "X")]
    pub x: u64,
    pub phi: f64,
    pub age: f64,
    pub births: u64,
}

/// Per-replica random streams, one per kind of draw.
#[derive(Debug, Clone)]
pub struct EngineRngs {
    pub clock: SimRng,
    pub choice: SimRng,
    pub fitness: SimRng,
    pub coin: SimRng,
    pub victim: SimRng,
}

impl EngineRngs {
    pub fn new(seed: u64, replica: u64) -> Self {
        Self {
            clock: rng::substream(seed, "engine/clock", replica),
            choice: rng::substream(seed, "engine/choice", replica),
            fitness: rng::substream(seed, "engine/fitness", replica),
            coin: rng::substream(seed, "engine/coin", replica),
            victim: rng::substream(seed, "engine/victim", replica),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PopulationState {
    pub time: f64,
    types: RankedList<TypeRecord>,
    next_id: u64,
    births: u64,
}

impl PopulationState {
    /// A single type with the given fitness and age at time 0.
    pub fn singleton(fitness: f64, age: f64) -> Self {
        let mut types = RankedList::new();
        types.insert(TypeRecord { id: 0, fitness, birth_time: -age });
        Self { time: 0.0, types, next_id: 1, births: 1 }
    }

    /// State at `time` holding `types`; ids are assigned in the given order.
    pub fn from_types(time: f64, types: &[(f64, f64)]) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::InvalidParams("population must hold at least one type".into()));
        }
        let records = types.iter().enumerate().map(|(i, &(fitness, birth_time))| TypeRecord {
            id: i as u64,
            fitness,
            birth_time,
        });
        Ok(Self {
            time,
            types: RankedList::from_unsorted(records),
            next_id: types.len() as u64,
            births: types.len() as u64,
        })
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.types.len()
    }

    /// Number of types created so far, the initial ones included.
    #[inline]
    pub fn births(&self) -> u64 {
        self.births
    }

    pub fn types(&self) -> &RankedList<TypeRecord> {
        &self.types
    }

    #[inline]
    pub fn champion(&self) -> &TypeRecord {
        self.types.last().expect("population is never empty")
    }

    #[inline]
    pub fn least_fit(&self) -> &TypeRecord {
        self.types.first().expect("population is never empty")
    }

    #[inline]
    pub fn max_fitness(&self) -> f64 {
        self.champion().fitness
    }

    #[inline]
    pub fn age_of_fittest(&self) -> f64 {
        self.time - self.champion().birth_time
    }

    pub fn observe(&self, time: f64) -> Observation {
        Observation {
            time,
            x: self.count() as u64,
            phi: self.max_fitness(),
            age: time - self.champion().birth_time,
            births: self.births,
        }
    }

    /// Total jump rate: `lambda` at one type, `n (lambda + 1)` above.
    #[inline]
    pub fn total_rate(&self, params: &ModelParams) -> f64 {
        total_rate(self.count(), params)
    }

    /// Applies one transition at time `at` and returns its record.
    pub fn apply_event(&mut self, at: f64, params: &ModelParams, rngs: &mut EngineRngs) -> EventRecord {
        debug_assert!(at >= self.time);
        self.time = at;
        let n = self.count();
        let birth = n == 1 || {
            let birth_share = params.lambda / (params.lambda + 1.0);
            rngs.choice.random::<f64>() < birth_share
        };
        let (kind, victim) = if birth {
            let fitness = rng::open01(&mut rngs.fitness);
            let rec = TypeRecord { id: self.next_id, fitness, birth_time: at };
            self.next_id += 1;
            self.births += 1;
            self.types.insert(rec);
            (EventKind::Birth, rec)
        } else if rngs.coin.random::<f64>() < params.r {
            let rank = rngs.victim.random_range(0..n);
            (EventKind::DeathRandom, self.types.remove_rank(rank).unwrap())
        } else {
            (EventKind::DeathLeastFit, self.types.remove_rank(0).unwrap())
        };
        EventRecord {
            time: at,
            kind,
            subject_id: victim.id,
            fitness: victim.fitness,
            population_after: self.count() as u64,
        }
    }

    /// Advances by one exponential holding time and one transition.
    pub fn step(&mut self, params: &ModelParams, rngs: &mut EngineRngs) -> EventRecord {
        let at = self.time + rng::exp_rate(&mut rngs.clock, self.total_rate(params));
        self.apply_event(at, params, rngs)
    }
}

#[inline]
pub fn total_rate(n: usize, params: &ModelParams) -> f64 {
    if n <= 1 {
        params.lambda
    } else {
        n as f64 * (params.lambda + 1.0)
    }
}

/// Checks a run horizon and observation grid.
pub fn validate_horizon(t_max: f64, observation_times: &[f64]) -> Result<()> {
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(Error::Usage(format!("t_max must be positive, got {t_max}")));
    }
    if observation_times.iter().any(|t| !(0.0..=t_max).contains(t)) {
        return Err(Error::Usage("observation times must lie in [0, t_max]".into()));
    }
    if observation_times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Usage("observation times must be sorted".into()));
    }
    Ok(())
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    Horizon,
    Requested,
}

/// One trajectory driven by its own streams.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: ModelParams,
    state: PopulationState,
    rngs: EngineRngs,
}

impl Simulator {
    /// Starts from a single type with uniform fitness and the given age.
    pub fn new(params: ModelParams, seed: u64, replica: u64, initial_age: f64) -> Self {
        let mut rngs = EngineRngs::new(seed, replica);
        let fitness = rng::open01(&mut rngs.fitness);
        Self { params, state: PopulationState::singleton(fitness, initial_age), rngs }
    }

    pub fn from_state(params: ModelParams, state: PopulationState, rngs: EngineRngs) -> Self {
        Self { params, state, rngs }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn state(&self) -> &PopulationState {
        &self.state
    }

    pub fn step(&mut self) -> EventRecord {
        self.state.step(&self.params, &mut self.rngs)
    }

    /// Runs to `t_max`, reporting right-continuous observations at
    /// `observation_times` and every event. `on_event` may stop the run early.
    pub fn run<E, O>(&mut self, t_max: f64, observation_times: &[f64], mut on_event: E, mut on_obs: O) -> Stop
    where
        E: FnMut(&EventRecord, &PopulationState) -> ControlFlow<()>,
        O: FnMut(Observation),
    {
        let mut obs = observation_times.iter().copied().peekable();
        while let Some(&t) = obs.peek() {
            if t >= self.state.time {
                break;
            }
            obs.next();
        }
        loop {
            let rate = self.state.total_rate(&self.params);
            let at = self.state.time + rng::exp_rate(&mut self.rngs.clock, rate);
            while let Some(&t) = obs.peek() {
                if t < at && t <= t_max {
                    on_obs(self.state.observe(t));
                    obs.next();
                } else {
                    break;
                }
            }
            if at > t_max {
                self.state.time = t_max;
                return Stop::Horizon;
            }
            let ev = self.state.apply_event(at, &self.params, &mut self.rngs);
            if on_event(&ev, &self.state).is_break() {
                return Stop::Requested;
            }
        }
    }
}

/// Observation series plus full event log of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Observation>,
    pub log: EventLog,
}

/// Simulates replica 0 for `seed`; see [`simulate_replica`].
pub fn simulate(params: ModelParams, t_max: f64, observation_times: &[f64], seed: u64) -> Result<Trajectory> {
    simulate_replica(params, t_max, observation_times, seed, 0)
}

/// Simulates one trajectory from a single uniform-fitness type of age 0.
pub fn simulate_replica(
    params: ModelParams,
    t_max: f64,
    observation_times: &[f64],
    seed: u64,
    replica: u64,
) -> Result<Trajectory> {
    validate_horizon(t_max, observation_times)?;
    let mut sim = Simulator::new(params, seed, replica, 0.0);
    let initial = *sim.state().champion();
    let mut events = Vec::new();
    let mut observations = Vec::with_capacity(observation_times.len());
    sim.run(
        t_max,
        observation_times,
        |ev, _| {
            events.push(*ev);
            ControlFlow::Continue(())
        },
        |o| observations.push(o),
    );
    Ok(Trajectory { observations, log: EventLog { initial, events, t_end: t_max } })
}

/// Evenly spaced observation times `0, dt, 2 dt, ..` up to `t_max`.
pub fn observation_grid(t_max: f64, dt: f64) -> Vec<f64> {
    let n = (t_max / dt + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * dt).filter(|t| *t <= t_max).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64, r: f64) -> ModelParams {
        ModelParams::new(lambda, r).unwrap()
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ModelParams::new(0.0, 0.5).is_err());
        assert!(ModelParams::new(-1.0, 0.5).is_err());
        assert!(ModelParams::new(1.0, 1.5).is_err());
        assert!(ModelParams::new(1.0, -0.1).is_err());
        assert!(ModelParams::new(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn total_rate_examples() {
        assert_eq!(total_rate(1, &params(0.5, 0.0)), 0.5);
        assert_eq!(total_rate(3, &params(2.0, 0.0)), 9.0);
        assert_eq!(total_rate(2, &params(1.0, 0.0)), 4.0);
    }

    #[test]
    fn singleton_only_gives_birth() {
        let p = params(0.3, 0.5);
        for replica in 0..200 {
            let mut rngs = EngineRngs::new(11, replica);
            let mut s = PopulationState::singleton(0.4, 0.0);
            let ev = s.step(&p, &mut rngs);
            assert_eq!(ev.kind, EventKind::Birth);
            assert_eq!(s.count(), 2);
        }
    }

    #[test]
    fn random_killing_at_two_is_fair() {
        let p = params(1.0, 1.0);
        let mut killed_low = 0;
        let mut deaths = 0;
        for replica in 0..20_000 {
            let mut rngs = EngineRngs::new(5, replica);
            let mut s = PopulationState::from_types(0.0, &[(0.2, 0.0), (0.7, 0.0)]).unwrap();
            let ev = s.step(&p, &mut rngs);
            if ev.kind.is_death() {
                assert_eq!(ev.kind, EventKind::DeathRandom);
                deaths += 1;
                if ev.fitness == 0.2 {
                    killed_low += 1;
                }
            }
        }
        let frac = killed_low as f64 / deaths as f64;
        let se = (0.25 / deaths as f64).sqrt();
        assert!((frac - 0.5).abs() < 4.0 * se, "frac {frac} over {deaths}");
    }

    #[test]
    fn least_fit_death_keeps_champion() {
        let p = params(0.8, 0.0);
        let mut rngs = EngineRngs::new(3, 0);
        let mut s = PopulationState::from_types(0.0, &[(0.2, 0.0), (0.7, 0.0), (0.5, 0.0)]).unwrap();
        for _ in 0..2000 {
            let before = s.max_fitness();
            let ev = s.step(&p, &mut rngs);
            if ev.kind.is_death() {
                assert_eq!(ev.kind, EventKind::DeathLeastFit);
                assert_eq!(s.max_fitness(), before);
            }
            assert!(s.count() >= 1);
        }
    }

    #[test]
    fn age_of_fittest_examples() {
        let s = PopulationState::singleton(0.3, 0.0);
        assert_eq!(s.age_of_fittest(), 0.0);
        let mut s = PopulationState::from_types(7.0, &[(0.3, 3.0)]).unwrap();
        assert_eq!(s.age_of_fittest(), 4.0);
        // Killing the champion hands the title to the runner-up.
        s = PopulationState::from_types(7.0, &[(0.3, 3.0), (0.9, 5.0), (0.6, 1.0)]).unwrap();
        assert_eq!(s.age_of_fittest(), 2.0);
        s.types.remove_rank(2);
        assert_eq!(s.age_of_fittest(), 6.0);
    }

    #[test]
    fn initial_observation_and_right_continuity() {
        let p = params(0.5, 0.3);
        let traj = simulate(p, 20.0, &[0.0, 5.0, 20.0], 9).unwrap();
        let o = traj.observations[0];
        assert_eq!((o.x, o.age, o.births), (1, 0.0, 1));
        assert_eq!(traj.observations.len(), 3);
        // Observing exactly at an event time includes that event.
        let t1 = traj.log.events[0].time;
        let again = simulate(p, 20.0, &[t1], 9).unwrap();
        assert_eq!(again.observations[0].x, 2);
    }

    #[test]
    fn rejects_bad_horizons() {
        let p = params(0.5, 0.3);
        assert!(simulate(p, 0.0, &[], 1).unwrap_err().is_usage());
        assert!(simulate(p, 5.0, &[2.0, 1.0], 1).unwrap_err().is_usage());
        assert!(simulate(p, 5.0, &[6.0], 1).unwrap_err().is_usage());
    }

    #[test]
    fn log_is_ordered_and_population_positive() {
        let p = params(1.2, 0.4);
        let traj = simulate(p, 8.0, &[], 21).unwrap();
        let mut n = 1u64;
        let mut last = 0.0;
        for ev in &traj.log.events {
            assert!(ev.time > last);
            last = ev.time;
            if ev.kind.is_death() {
                assert!(n >= 2);
                n -= 1;
            } else {
                n += 1;
            }
            assert_eq!(ev.population_after, n);
            assert!(n >= 1);
        }
    }

    #[test]
    fn r0_phi_nondecreasing() {
        let p = params(1.5, 0.0);
        let grid = observation_grid(10.0, 0.05);
        let traj = simulate(p, 10.0, &grid, 4).unwrap();
        assert!(traj.observations.windows(2).all(|w| w[1].phi >= w[0].phi));
    }

    #[test]
    fn r_positive_phi_can_drop() {
        let p = params(0.5, 1.0);
        let traj = simulate(p, 200.0, &observation_grid(200.0, 0.5), 4).unwrap();
        assert!(traj.observations.windows(2).any(|w| w[1].phi < w[0].phi));
    }

    #[test]
    fn deterministic_for_seed() {
        let p = params(0.9, 0.5);
        let a = simulate(p, 30.0, &observation_grid(30.0, 1.0), 77).unwrap();
        let b = simulate(p, 30.0, &observation_grid(30.0, 1.0), 77).unwrap();
        assert_eq!(a, b);
        let c = simulate(p, 30.0, &observation_grid(30.0, 1.0), 78).unwrap();
        assert_ne!(a.log.events, c.log.events);
    }
}
