//! Reduced chains for long supercritical runs.
//!
//! Some observables need far less than the full fitness set:
//!
//! * with least-fit killing only (`r = 0`) the fittest type can never die
//!   while two or more types are alive, so `(X, births, champion)` is an exact
//!   summary of the process;
//! * the event `{max fitness <= u}` depends only on `X` and the number of
//!   living types with fitness above `u`, for any `r`.
//!
//! Both chains consume the same substreams in the same order as
//! [`super::PopulationState::step`], so with equal seeds they reproduce the full
//! engine's observations bit for bit.
//!
//! Above a configurable population size (reached only when `lambda > 1`)
//! the chains can switch to a leap phase: over a short step `dt` births and
//! deaths are Poisson with rates frozen at the start of the step. The new
//! champion's birth time inside a step is drawn from the exponentially tilted
//! density of birth times, which keeps age errors of order `dt^2`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use super::{total_rate, validate_horizon, EngineRngs, ModelParams, Observation};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeapConfig {
    /// Population size at which exact simulation hands over to leaping.
    pub switch_population: u64,
    pub dt: f64,
}

impl LeapConfig {
    pub fn new(switch_population: u64, dt: f64) -> Result<Self> {
        if switch_population < 100 || !(dt > 0.0 && dt <= 0.1) {
            return Err(Error::InvalidParams(format!(
                "leap needs switch_population >= 100 and 0 < dt <= 0.1, got {switch_population}, {dt}"
            )));
        }
        Ok(Self { switch_population, dt })
    }
}

fn poisson(rng: &mut SimRng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

fn binomial(rng: &mut SimRng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).map(|d| d.sample(rng)).unwrap_or(0)
}

/// Receives the population path of a reduced chain.
pub trait PathObserver {
    /// An exact jump to `x` at `time`, with `births` types created so far.
    fn on_jump(&mut self, _time: f64, _x: u64, _births: u64) {}
    /// A leap over `[t0, t1]` from `(x0, b0)` to `(x1, b1)`.
    fn on_leap(&mut self, _t0: f64, _t1: f64, _x0: u64, _x1: u64, _b0: u64, _b1: u64) {}
    fn on_observation(&mut self, _obs: &Observation) {}
}

impl PathObserver for () {}

/// Exact summary of an `r = 0` trajectory.
#[derive(Debug, Clone)]
pub struct ChampionChain {
    lambda: f64,
    pub time: f64,
    pub x: u64,
    pub births: u64,
    pub champion_fitness: f64,
    pub champion_birth: f64,
    rngs: EngineRngs,
    leap_rng: SimRng,
}

impl ChampionChain {
    pub fn new(lambda: f64, seed: u64, replica: u64) -> Result<Self> {
        ModelParams::new(lambda, 0.0)?;
        let mut rngs = EngineRngs::new(seed, replica);
        let champion_fitness = rng::open01(&mut rngs.fitness);
        Ok(Self {
            lambda,
            time: 0.0,
            x: 1,
            births: 1,
            champion_fitness,
            champion_birth: 0.0,
            rngs,
            leap_rng: rng::substream(seed, "leap/champion", replica),
        })
    }

    fn observe(&self, t: f64) -> Observation {
        Observation { time: t, x: self.x, phi: self.champion_fitness, age: t - self.champion_birth, births: self.births }
    }

    fn exact_event(&mut self, at: f64) {
        self.time = at;
        let birth = self.x == 1 || self.rngs.choice.random::<f64>() < self.lambda / (self.lambda + 1.0);
        if birth {
            let u = rng::open01(&mut self.rngs.fitness);
            self.x += 1;
            self.births += 1;
            if u > self.champion_fitness {
                self.champion_fitness = u;
                self.champion_birth = at;
            }
        } else {
            // the coin stream is consumed as in the full engine; with r = 0 it never fires
            let _: f64 = self.rngs.coin.random();
            self.x -= 1;
        }
    }

    fn leap(&mut self, dt: f64) -> (u64, u64) {
        let t0 = self.time;
        let x = self.x as f64;
        let tau = effective_time(self.lambda - 1.0, dt);
        let b = poisson(&mut self.leap_rng, self.lambda * x * tau);
        let d = poisson(&mut self.leap_rng, x * tau).min(self.x + b - 1);
        if b > 0 {
            let m = (rng::open01(&mut self.leap_rng).ln() / b as f64).exp();
            if m > self.champion_fitness {
                self.champion_fitness = m;
                self.champion_birth = t0 + tilted_offset(&mut self.leap_rng, self.lambda - 1.0, dt);
            }
        }
        self.x = self.x + b - d;
        self.births += b;
        self.time = t0 + dt;
        (b, d)
    }

    /// Runs to `t_max`, producing right-continuous observations.
    pub fn run<P: PathObserver>(
        &mut self,
        t_max: f64,
        observation_times: &[f64],
        leap: Option<LeapConfig>,
        observer: &mut P,
    ) -> Result<Vec<Observation>> {
        validate_horizon(t_max, observation_times)?;
        let params = ModelParams::new(self.lambda, 0.0)?;
        let mut out = Vec::with_capacity(observation_times.len());
        let start = self.time;
        let mut obs = observation_times.iter().copied().filter(move |t| *t >= start).peekable();
        observer.on_jump(self.time, self.x, self.births);
        loop {
            if let Some(cfg) = leap {
                if self.x >= cfg.switch_population {
                    break;
                }
            }
            let at = self.time + rng::exp_rate(&mut self.rngs.clock, total_rate(self.x as usize, &params));
            while let Some(&t) = obs.peek() {
                if t < at && t <= t_max {
                    let o = self.observe(t);
                    observer.on_observation(&o);
                    out.push(o);
                    obs.next();
                } else {
                    break;
                }
            }
            if at > t_max {
                self.time = t_max;
                return Ok(out);
            }
            self.exact_event(at);
            observer.on_jump(self.time, self.x, self.births);
        }
        let cfg = leap.expect("leap phase entered only with a config");
        loop {
            while let Some(&t) = obs.peek() {
                if t <= self.time + 1e-12 {
                    let o = self.observe(t);
                    observer.on_observation(&o);
                    out.push(o);
                    obs.next();
                } else {
                    break;
                }
            }
            if self.time >= t_max - 1e-12 {
                return Ok(out);
            }
            let next_stop = obs.peek().copied().unwrap_or(t_max).min(t_max);
            let dt = cfg.dt.min(next_stop - self.time).max(1e-12);
            let (t0, x0, b0) = (self.time, self.x, self.births);
            self.leap(dt);
            observer.on_leap(t0, self.time, x0, self.x, b0, self.births);
        }
    }
}

/// `(e^{g dt} - 1) / g`: frozen-rate Poisson counts over this span have the
/// exact expected births and deaths of the linear process, so the mean
/// growth `e^{g dt}` per step carries no discretisation bias.
fn effective_time(g: f64, dt: f64) -> f64 {
    if (g * dt).abs() < 1e-9 {
        dt
    } else {
        (g * dt).exp_m1() / g
    }
}

/// Offset in `[0, dt]` with density proportional to `exp(g s)`.
fn tilted_offset(rng: &mut SimRng, g: f64, dt: f64) -> f64 {
    let u = rng::open01(rng);
    if (g * dt).abs() < 1e-9 {
        return u * dt;
    }
    ((1.0 + u * ((g * dt).exp() - 1.0)).ln() / g).clamp(0.0, dt)
}

/// Simulates the `r = 0` process through its champion summary.
pub fn champion_observations(
    lambda: f64,
    t_max: f64,
    observation_times: &[f64],
    seed: u64,
    replica: u64,
    leap: Option<LeapConfig>,
) -> Result<Vec<Observation>> {
    ChampionChain::new(lambda, seed, replica)?.run(t_max, observation_times, leap, &mut ())
}

/// Population size and number of types fitter than a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThresholdObservation {
    pub x: u64,
    pub above: u64,
}

impl ThresholdObservation {
    /// Whether the maximal fitness is at or below the threshold.
    pub fn max_at_or_below(&self) -> bool {
        self.above == 0
    }
}

/// Exact chain for `(X, #types with fitness > threshold)`.
#[derive(Debug, Clone)]
pub struct ThresholdChain {
    params: ModelParams,
    threshold: f64,
    pub time: f64,
    pub x: u64,
    pub above: u64,
    rngs: EngineRngs,
    leap_rng: SimRng,
}

impl ThresholdChain {
    pub fn new(params: ModelParams, threshold: f64, seed: u64, replica: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidParams(format!("threshold must lie in [0, 1], got {threshold}")));
        }
        let mut rngs = EngineRngs::new(seed, replica);
        let f0 = rng::open01(&mut rngs.fitness);
        Ok(Self {
            params,
            threshold,
            time: 0.0,
            x: 1,
            above: u64::from(f0 > threshold),
            rngs,
            leap_rng: rng::substream(seed, "leap/threshold", replica),
        })
    }

    fn exact_event(&mut self, at: f64) {
        self.time = at;
        let n = self.x;
        let birth = n == 1 || self.rngs.choice.random::<f64>() < self.params.lambda() / (self.params.lambda() + 1.0);
        if birth {
            let u = rng::open01(&mut self.rngs.fitness);
            self.x += 1;
            self.above += u64::from(u > self.threshold);
        } else if self.rngs.coin.random::<f64>() < self.params.r() {
            let rank = self.rngs.victim.random_range(0..n as usize) as u64;
            if rank >= n - self.above {
                self.above -= 1;
            }
            self.x -= 1;
        } else {
            if self.x == self.above {
                self.above -= 1;
            }
            self.x -= 1;
        }
    }

    fn leap(&mut self, dt: f64) {
        let lam = self.params.lambda();
        let x = self.x as f64;
        let rng = &mut self.leap_rng;
        let tau = effective_time(lam - 1.0, dt);
        let b = poisson(rng, lam * x * tau);
        let b_above = binomial(rng, b, 1.0 - self.threshold);
        let d = poisson(rng, x * tau).min(self.x - 1);
        let d_random = binomial(rng, d, self.params.r());
        let d_least = d - d_random;
        let mut above = self.above;
        let mut below = self.x - self.above;
        let random_above = binomial(rng, d_random, above as f64 / x).min(above);
        let random_below = (d_random - random_above).min(below);
        above -= random_above;
        below -= random_below;
        let least_below = d_least.min(below);
        below -= least_below;
        above -= (d_least - least_below).min(above);
        self.above = above + b_above;
        self.x = (above + below + b).max(1);
        if self.above > self.x {
            self.above = self.x;
        }
        self.time += dt;
    }

    /// Runs to `t_max` and reports the chain at each observation time.
    pub fn run(
        &mut self,
        t_max: f64,
        observation_times: &[f64],
        leap: Option<LeapConfig>,
    ) -> Result<Vec<ThresholdObservation>> {
        validate_horizon(t_max, observation_times)?;
        let mut out = Vec::with_capacity(observation_times.len());
        let start = self.time;
        let mut obs = observation_times.iter().copied().filter(move |t| *t >= start).peekable();
        loop {
            if let Some(cfg) = leap {
                if self.x >= cfg.switch_population {
                    break;
                }
            }
            let at = self.time + rng::exp_rate(&mut self.rngs.clock, total_rate(self.x as usize, &self.params));
            while let Some(&t) = obs.peek() {
                if t < at && t <= t_max {
                    out.push(ThresholdObservation { x: self.x, above: self.above });
                    obs.next();
                } else {
                    break;
                }
            }
            if at > t_max {
                self.time = t_max;
                return Ok(out);
            }
            self.exact_event(at);
        }
        let cfg = leap.expect("leap phase entered only with a config");
        loop {
            while let Some(&t) = obs.peek() {
                if t <= self.time + 1e-12 {
                    out.push(ThresholdObservation { x: self.x, above: self.above });
                    obs.next();
                } else {
                    break;
                }
            }
            if self.time >= t_max - 1e-12 {
                return Ok(out);
            }
            let next_stop = obs.peek().copied().unwrap_or(t_max).min(t_max);
            self.leap(cfg.dt.min(next_stop - self.time).max(1e-12));
        }
    }
}

/// Exact `r = 1` trajectory over unsorted fitness and birth-time vectors.
///
/// Every death removes a uniformly chosen type, so no order is kept and the
/// champion is rescanned only when it dies. The streams are the full
/// engine's, so the population path is identical for equal seeds; a victim
/// is a uniform index here rather than a uniform rank, so fitness paths
/// agree in law only.
#[derive(Debug, Clone)]
pub struct RandomKillChain {
    lambda: f64,
    pub time: f64,
    fitness: Vec<f64>,
    birth: Vec<f64>,
    champion: usize,
    births: u64,
    rngs: EngineRngs,
}

impl RandomKillChain {
    pub fn new(lambda: f64, seed: u64, replica: u64, initial_age: f64) -> Result<Self> {
        ModelParams::new(lambda, 1.0)?;
        let mut rngs = EngineRngs::new(seed, replica);
        let f = rng::open01(&mut rngs.fitness);
        Ok(Self { lambda, time: 0.0, fitness: vec![f], birth: vec![-initial_age], champion: 0, births: 1, rngs })
    }

    pub fn observe(&self, t: f64) -> Observation {
        Observation {
            time: t,
            x: self.fitness.len() as u64,
            phi: self.fitness[self.champion],
            age: t - self.birth[self.champion],
            births: self.births,
        }
    }

    pub fn fitnesses(&self) -> &[f64] {
        &self.fitness
    }

    fn exact_event(&mut self, at: f64) {
        self.time = at;
        let n = self.fitness.len();
        let birth = n == 1 || self.rngs.choice.random::<f64>() < self.lambda / (self.lambda + 1.0);
        if birth {
            let u = rng::open01(&mut self.rngs.fitness);
            self.fitness.push(u);
            self.birth.push(at);
            self.births += 1;
            if u > self.fitness[self.champion] {
                self.champion = n;
            }
            return;
        }
        let _: f64 = self.rngs.coin.random();
        let k = self.rngs.victim.random_range(0..n);
        self.fitness.swap_remove(k);
        self.birth.swap_remove(k);
        if k == self.champion {
            self.champion = self
                .fitness
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("population is never empty");
        } else if self.champion == n - 1 {
            self.champion = k;
        }
    }

    /// Runs to `t_max`, producing right-continuous observations.
    pub fn run(&mut self, t_max: f64, observation_times: &[f64]) -> Result<Vec<Observation>> {
        validate_horizon(t_max, observation_times)?;
        let params = ModelParams::new(self.lambda, 1.0)?;
        let mut out = Vec::with_capacity(observation_times.len());
        let start = self.time;
        let mut obs = observation_times.iter().copied().filter(move |t| *t >= start).peekable();
        loop {
            let at = self.time + rng::exp_rate(&mut self.rngs.clock, total_rate(self.fitness.len(), &params));
            while let Some(&t) = obs.peek() {
                if t < at && t <= t_max {
                    out.push(self.observe(t));
                    obs.next();
                } else {
                    break;
                }
            }
            if at > t_max {
                self.time = t_max;
                return Ok(out);
            }
            self.exact_event(at);
        }
    }
}

/// Extinction time of the linear birth-death chain with per-capita birth
/// rate `lambda` and death rate 1 at every level (0 absorbing), started from
/// one individual; `None` if it survives past `t_max`.
pub fn amended_extinction_time(lambda: f64, t_max: f64, seed: u64, replica: u64) -> Option<f64> {
    let mut clock = rng::substream(seed, "amended/clock", replica);
    let mut choice = rng::substream(seed, "amended/choice", replica);
    let mut n: u64 = 1;
    let mut t = 0.0;
    let p_birth = lambda / (lambda + 1.0);
    loop {
        t += rng::exp_rate(&mut clock, n as f64 * (lambda + 1.0));
        if t > t_max {
            return None;
        }
        if choice.random::<f64>() < p_birth {
            n += 1;
        } else {
            n -= 1;
            if n == 0 {
                return Some(t);
            }
        }
    }
}
