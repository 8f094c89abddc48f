//! Growth diagnostics for the supercritical least-fit process.
//!
//! For `lambda > 1` and `r = 0` the hitting times `HitTime_n` (first time the
//! population reaches `n`) satisfy `HitTime_n - ln(n)/(lambda-1) -> zeta_inf`,
//! so `N(t) e^{-(lambda-1)t}` levels off at a positive value, and the number of
//! types produced by `HitTime_n` grows linearly in `n`.

use serde::Serialize;

use crate::engine::reduced::{ChampionChain, LeapConfig, PathObserver};
use crate::engine::Observation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HitRecord {
    pub n: u64,
    pub time: f64,
    /// Types produced up to the hitting time (`S_n`).
    pub produced: u64,
}

/// Raw growth record of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthPath {
    pub hits: Vec<HitRecord>,
    /// `(t, N(t))` on the requested grid.
    pub n_of_t: Vec<(f64, u64)>,
}

/// Records hitting times of every level up to `dense_max` and of doublings
/// beyond it.
#[derive(Debug, Clone)]
pub struct GrowthRecorder {
    dense_max: u64,
    next_level: u64,
    running_max: u64,
    hits: Vec<HitRecord>,
    n_of_t: Vec<(f64, u64)>,
}

impl GrowthRecorder {
    pub fn new(dense_max: u64) -> Self {
        Self { dense_max: dense_max.max(1), next_level: 1, running_max: 0, hits: Vec::new(), n_of_t: Vec::new() }
    }

    fn advance_level(&mut self) {
        self.next_level = if self.next_level < self.dense_max { self.next_level + 1 } else { self.next_level * 2 };
    }

    pub fn finish(self) -> GrowthPath {
        GrowthPath { hits: self.hits, n_of_t: self.n_of_t }
    }
}

impl PathObserver for GrowthRecorder {
    fn on_jump(&mut self, time: f64, x: u64, births: u64) {
        if x > self.running_max {
            self.running_max = x;
            while self.next_level <= x {
                self.hits.push(HitRecord { n: self.next_level, time, produced: births });
                self.advance_level();
            }
        }
    }

    fn on_leap(&mut self, t0: f64, t1: f64, x0: u64, x1: u64, b0: u64, b1: u64) {
        if x1 <= self.running_max {
            return;
        }
        self.running_max = x1;
        let span = (x1 as f64 / x0 as f64).ln();
        while self.next_level <= x1 {
            let frac = if span > 0.0 { ((self.next_level as f64 / x0 as f64).ln() / span).clamp(0.0, 1.0) } else { 1.0 };
            self.hits.push(HitRecord {
                n: self.next_level,
                time: t0 + frac * (t1 - t0),
                produced: b0 + (frac * (b1 - b0) as f64).round() as u64,
            });
            self.advance_level();
        }
    }

    fn on_observation(&mut self, obs: &Observation) {
        self.n_of_t.push((obs.time, self.running_max.max(obs.x)));
    }
}

/// Runs the `r = 0` process and records its growth path.
pub fn simulate_growth(
    lambda: f64,
    t_max: f64,
    t_grid: &[f64],
    seed: u64,
    replica: u64,
    leap: Option<LeapConfig>,
    dense_max: u64,
) -> Result<GrowthPath> {
    let mut chain = ChampionChain::new(lambda, seed, replica)?;
    let mut rec = GrowthRecorder::new(dense_max);
    chain.run(t_max, t_grid, leap, &mut rec)?;
    Ok(rec.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthDiagnostics {
    pub lambda: f64,
    pub hit_times: Vec<(u64, f64)>,
    /// `zeta(n) = HitTime_n - ln(n)/(lambda - 1)`.
    pub zeta: Vec<(u64, f64)>,
    pub n_of_t: Vec<(f64, u64)>,
    /// `N(t) e^{-(lambda-1) t}`.
    pub scaled: Vec<(f64, f64)>,
    /// `S_n / n`.
    pub s_ratio: Vec<(u64, f64)>,
}

pub fn growth_diagnostics(path: &GrowthPath, lambda: f64) -> Result<GrowthDiagnostics> {
    if !(lambda > 1.0) {
        return Err(Error::InvalidParams(format!("growth diagnostics need lambda > 1, got {lambda}")));
    }
    let g = lambda - 1.0;
    Ok(GrowthDiagnostics {
        lambda,
        hit_times: path.hits.iter().map(|h| (h.n, h.time)).collect(),
        zeta: path.hits.iter().map(|h| (h.n, h.time - (h.n as f64).ln() / g)).collect(),
        n_of_t: path.n_of_t.clone(),
        scaled: path.n_of_t.iter().map(|&(t, n)| (t, n as f64 * (-g * t).exp())).collect(),
        s_ratio: path.hits.iter().map(|h| (h.n, h.produced as f64 / h.n as f64)).collect(),
    })
}

impl GrowthDiagnostics {
    pub fn zeta_at(&self, n: u64) -> Option<f64> {
        self.zeta.binary_search_by_key(&n, |z| z.0).ok().map(|i| self.zeta[i].1)
    }

    /// `|zeta(2n) - zeta(n)|` when both levels were recorded.
    pub fn zeta_increment(&self, n: u64) -> Option<f64> {
        Some((self.zeta_at(2 * n)? - self.zeta_at(n)?).abs())
    }

    /// `(max - min) / median` of the scaled sequence over `t >= from`.
    pub fn scaled_relative_spread(&self, from: f64) -> f64 {
        let mut v: Vec<f64> = self.scaled.iter().filter(|(t, _)| *t >= from).map(|(_, s)| *s).collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_by(f64::total_cmp);
        let median = v[v.len() / 2];
        (v[v.len() - 1] - v[0]) / median
    }

    pub fn hit_times_increasing(&self) -> bool {
        self.hit_times.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1)
    }

    pub fn n_of_t_nondecreasing(&self) -> bool {
        self.n_of_t.windows(2).all(|w| w[0].1 <= w[1].1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::observation_grid;

    #[test]
    fn rejects_subcritical() {
        let path = GrowthPath { hits: vec![], n_of_t: vec![] };
        assert!(growth_diagnostics(&path, 1.0).is_err());
    }

    #[test]
    fn recorder_dense_then_doubling() {
        let mut rec = GrowthRecorder::new(4);
        for (i, x) in [1u64, 2, 3, 2, 3, 4, 5, 6, 7, 8].iter().enumerate() {
            rec.on_jump(i as f64, *x, 10 + i as u64);
        }
        rec.on_leap(10.0, 11.0, 8, 64, 100, 400);
        let path = rec.finish();
        let levels: Vec<u64> = path.hits.iter().map(|h| h.n).collect();
        assert_eq!(levels, vec![1, 2, 3, 4, 8, 16, 32, 64]);
        assert_eq!(path.hits[3].time, 5.0);
        // exponential interpolation: level 16 sits a third of the way from 8 to 64
        assert!((path.hits[5].time - (10.0 + 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(path.hits[7].time, 11.0);
    }

    #[test]
    fn diagnostics_on_short_run() {
        let grid = observation_grid(10.0, 0.5);
        let path = simulate_growth(2.0, 10.0, &grid, 5, 0, None, 1 << 20).unwrap();
        let d = growth_diagnostics(&path, 2.0).unwrap();
        assert!(d.hit_times_increasing());
        assert!(d.n_of_t_nondecreasing());
        assert!(d.scaled.iter().all(|(_, s)| *s > 0.0 && s.is_finite()));
        assert!(d.s_ratio.iter().all(|(_, s)| *s >= 1.0));
        assert_eq!(d.zeta_at(1), Some(0.0));
    }
}
