//! Monotone coupling of the process with killing parameter `r` against the
//! process in which every death is a random killing (`r = 1`).
//!
//! Sorted fitness sets are compared componentwise: `A <= B` when the `i`-th
//! smallest element of `A` is at most the `i`-th smallest of `B` for every
//! `i`. The relation survives adding a common element to both sets, and
//! deleting any element of `A` while deleting the minimum of `B`. Driving both
//! processes with the same births, coins and ranks therefore keeps
//! `F^1(t) <= F^r(t)` forever, and in particular `max F^r >= max F^1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{total_rate, ModelParams, RankedList};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::{ks_statistic, GoFReport, ReferenceLaw};

/// Strictly increasing finite set of fitness values in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedFitnessSet {
    elements: Vec<f64>,
}

impl OrderedFitnessSet {
    pub fn new(mut elements: Vec<f64>) -> Result<Self> {
        if elements.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
            return Err(Error::InvalidParams("fitness values must lie in (0, 1)".into()));
        }
        elements.sort_by(f64::total_cmp);
        if elements.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParams("fitness values must be distinct".into()));
        }
        Ok(Self { elements })
    }

    pub fn elements(&self) -> &[f64] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn max(&self) -> Option<f64> {
        self.elements.last().copied()
    }

    fn contains(&self, w: f64) -> bool {
        self.elements.binary_search_by(|x| x.total_cmp(&w)).is_ok()
    }
}

fn dominated(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

/// `A <= B` componentwise on sorted elements.
pub fn precedes(a: &OrderedFitnessSet, b: &OrderedFitnessSet) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::Usage(format!("sets differ in size: {} vs {}", a.len(), b.len())));
    }
    Ok(dominated(&a.elements, &b.elements))
}

fn require_order(a: &OrderedFitnessSet, b: &OrderedFitnessSet) -> Result<()> {
    if !precedes(a, b)? {
        return Err(Error::Usage("precondition A <= B does not hold".into()));
    }
    Ok(())
}

fn check_post(a: OrderedFitnessSet, b: OrderedFitnessSet, what: &str) -> Result<(OrderedFitnessSet, OrderedFitnessSet)> {
    if dominated(&a.elements, &b.elements) {
        Ok((a, b))
    } else {
        Err(Error::OrderViolation(format!("{what}: A' = {:?}, B' = {:?}", a.elements, b.elements)))
    }
}

/// Adds `w` to both sets.
pub fn insert_common(
    a: &OrderedFitnessSet,
    b: &OrderedFitnessSet,
    w: f64,
) -> Result<(OrderedFitnessSet, OrderedFitnessSet)> {
    require_order(a, b)?;
    if !(w > 0.0 && w < 1.0) {
        return Err(Error::Usage(format!("inserted value must lie in (0, 1), got {w}")));
    }
    if a.contains(w) || b.contains(w) {
        return Err(Error::Usage(format!("inserted value {w} already present")));
    }
    let insert = |s: &OrderedFitnessSet| {
        let mut v = s.elements.clone();
        let pos = v.partition_point(|x| *x < w);
        v.insert(pos, w);
        OrderedFitnessSet { elements: v }
    };
    check_post(insert(a), insert(b), "insertion")
}

/// Coupled deletion. Ranks count from the largest element (`1` = maximum).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeleteRule {
    /// Delete the `j`-th largest element of both sets.
    RandomRank(usize),
    /// Delete the `j`-th largest element of `A` and the smallest of `B`.
    MinVsRank(usize),
}

pub fn delete_coupled(
    a: &OrderedFitnessSet,
    b: &OrderedFitnessSet,
    rule: DeleteRule,
) -> Result<(OrderedFitnessSet, OrderedFitnessSet)> {
    require_order(a, b)?;
    let k = a.len();
    if k < 2 {
        return Err(Error::Usage("deletion needs at least two elements".into()));
    }
    let j = match rule {
        DeleteRule::RandomRank(j) | DeleteRule::MinVsRank(j) => j,
    };
    if !(1..=k).contains(&j) {
        return Err(Error::Usage(format!("rank {j} outside 1..={k}")));
    }
    let mut av = a.elements.clone();
    let mut bv = b.elements.clone();
    av.remove(k - j);
    match rule {
        DeleteRule::RandomRank(_) => bv.remove(k - j),
        DeleteRule::MinVsRank(_) => bv.remove(0),
    };
    check_post(OrderedFitnessSet { elements: av }, OrderedFitnessSet { elements: bv }, "deletion")
}

/// Every valid lemma instance with `k <= max_k` on the grid `i/(m+1)`:
/// pairs `A <= B`, every insertable grid or half-grid point `w`, and every
/// deletion rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LemmaEnumeration {
    pub cases: u64,
    pub violations: u64,
}

pub fn enumerate_lemma_cases(max_k: usize, m: usize) -> LemmaEnumeration {
    let grid: Vec<f64> = (1..=m).map(|i| i as f64 / (m + 1) as f64).collect();
    let candidates: Vec<f64> = (1..=2 * m + 1).map(|i| i as f64 / (2 * (m + 1)) as f64).collect();
    let mut out = LemmaEnumeration { cases: 0, violations: 0 };
    for k in 1..=max_k.min(m) {
        let subsets = k_subsets(&grid, k);
        for a in &subsets {
            for b in &subsets {
                if !dominated(a, b) {
                    continue;
                }
                let sa = OrderedFitnessSet { elements: a.clone() };
                let sb = OrderedFitnessSet { elements: b.clone() };
                for &w in &candidates {
                    if sa.contains(w) || sb.contains(w) {
                        continue;
                    }
                    out.cases += 1;
                    if insert_common(&sa, &sb, w).is_err() {
                        out.violations += 1;
                    }
                }
                if k >= 2 {
                    for j in 1..=k {
                        for rule in [DeleteRule::RandomRank(j), DeleteRule::MinVsRank(j)] {
                            out.cases += 1;
                            match delete_coupled(&sa, &sb, rule) {
                                Ok((a2, b2)) if a2.max() <= b2.max() => {}
                                _ => out.violations += 1,
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn k_subsets(items: &[f64], k: usize) -> Vec<Vec<f64>> {
    fn go(items: &[f64], k: usize, start: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            go(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(items, k, 0, &mut Vec::new(), &mut out);
    out
}

/// One transition of the shared population skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DriverEvent {
    /// A birth adding the shared uniform `w`.
    Up { time: f64, w: f64 },
    /// A death at pre-death size `k` with killing coin `eps` and rank `j`
    /// (uniform on `1..=k`, counted from the largest).
    Down { time: f64, eps: bool, rank: usize },
}

/// Shared randomness for both coupled processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedDriver {
    pub initial: f64,
    pub events: Vec<DriverEvent>,
    /// Time the driver stops: the horizon or the time the size cap was hit.
    pub stop_time: f64,
    pub reached_cap: bool,
}

/// Draws a skeleton path of `X` with its births, coins and ranks, up to
/// `t_max` or until the population first reaches `population_cap`.
pub fn generate_driver(
    params: ModelParams,
    t_max: f64,
    seed: u64,
    replica: u64,
    population_cap: Option<usize>,
) -> Result<SharedDriver> {
    if !(t_max > 0.0) {
        return Err(Error::Usage(format!("t_max must be positive, got {t_max}")));
    }
    let mut clock = rng::substream(seed, "coupling/clock", replica);
    let mut choice = rng::substream(seed, "coupling/choice", replica);
    let mut marks = rng::substream(seed, "coupling/uniforms", replica);
    let mut coins = rng::substream(seed, "coupling/coins", replica);
    let mut ranks = rng::substream(seed, "coupling/ranks", replica);
    let initial = rng::open01(&mut marks);
    let mut n = 1usize;
    let mut t = 0.0;
    let mut events = Vec::new();
    let p_birth = params.lambda() / (params.lambda() + 1.0);
    loop {
        if population_cap.is_some_and(|cap| n >= cap) {
            return Ok(SharedDriver { initial, events, stop_time: t, reached_cap: true });
        }
        t += rng::exp_rate(&mut clock, total_rate(n, &params));
        if t > t_max {
            return Ok(SharedDriver { initial, events, stop_time: t_max, reached_cap: false });
        }
        if n == 1 || choice.random::<f64>() < p_birth {
            events.push(DriverEvent::Up { time: t, w: rng::open01(&mut marks) });
            n += 1;
        } else {
            let eps = coins.random::<f64>() < params.r();
            let rank = ranks.random_range(1..=n);
            events.push(DriverEvent::Down { time: t, eps, rank });
            n -= 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: f64,
    #[serde(rename = "X")]
    pub x: usize,
    pub max_f1: f64,
    pub max_fr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledRun {
    pub events: usize,
    pub stop_time: f64,
    pub reached_cap: bool,
    pub max_f1: f64,
    pub max_fr: f64,
    /// Smallest `max F^r - max F^1` over all event times.
    pub min_gap: f64,
    pub trace: Option<Vec<TraceRow>>,
}

fn ordered(f1: &RankedList<f64>, fr: &RankedList<f64>) -> bool {
    f1.len() == fr.len() && f1.iter().zip(fr.iter()).all(|(a, b)| a <= b)
}

/// Replays a driver for both processes and checks `F^1 <= F^r` after every
/// event; a violation aborts with the offending sets.
pub fn replay(driver: &SharedDriver, keep_trace: bool) -> Result<CoupledRun> {
    let mut f1 = RankedList::new();
    let mut fr = RankedList::new();
    f1.insert(driver.initial);
    fr.insert(driver.initial);
    let mut min_gap = 0.0f64;
    let mut trace = keep_trace.then(Vec::new);
    for (i, ev) in driver.events.iter().enumerate() {
        let time = match *ev {
            DriverEvent::Up { time, w } => {
                f1.insert(w);
                fr.insert(w);
                time
            }
            DriverEvent::Down { time, eps, rank } => {
                let k = f1.len();
                if k < 2 || rank == 0 || rank > k {
                    return Err(Error::InvalidParams(format!("driver event {i} deletes rank {rank} of {k}")));
                }
                f1.remove_rank(k - rank);
                if eps {
                    fr.remove_rank(k - rank);
                } else {
                    fr.remove_rank(0);
                }
                time
            }
        };
        if !ordered(&f1, &fr) {
            return Err(Error::OrderViolation(format!(
                "after event {i} at t = {time}: F1 = {:?}, Fr = {:?}",
                f1.to_vec(),
                fr.to_vec()
            )));
        }
        let (m1, mr) = (*f1.last().unwrap(), *fr.last().unwrap());
        min_gap = min_gap.min(mr - m1);
        if let Some(tr) = trace.as_mut() {
            tr.push(TraceRow { time, x: f1.len(), max_f1: m1, max_fr: mr });
        }
    }
    Ok(CoupledRun {
        events: driver.events.len(),
        stop_time: driver.stop_time,
        reached_cap: driver.reached_cap,
        max_f1: *f1.last().unwrap(),
        max_fr: *fr.last().unwrap(),
        min_gap,
        trace,
    })
}

/// Generates a shared driver and replays it for both processes.
pub fn coupled_simulate(
    params: ModelParams,
    t_max: f64,
    seed: u64,
    replica: u64,
    population_cap: Option<usize>,
    keep_trace: bool,
) -> Result<CoupledRun> {
    replay(&generate_driver(params, t_max, seed, replica, population_cap)?, keep_trace)
}

/// Largest excess of the empirical cdf of `upper` over that of `lower`;
/// `upper` stochastically dominates `lower` when this is near zero or negative.
pub fn dominance_excess(lower: &[f64], upper: &[f64]) -> f64 {
    let mut lo = lower.to_vec();
    let mut up = upper.to_vec();
    lo.sort_by(f64::total_cmp);
    up.sort_by(f64::total_cmp);
    let cdf = |v: &[f64], x: f64| v.partition_point(|s| *s <= x) as f64 / v.len() as f64;
    lo.iter().chain(&up).map(|&x| cdf(&up, x) - cdf(&lo, x)).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinReport {
    pub k: u64,
    pub report: GoFReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalLawReport {
    pub bins: Vec<BinReport>,
    /// `(k, samples)` for bins too sparse to test.
    pub skipped: Vec<(u64, usize)>,
}

impl ConditionalLawReport {
    pub fn all_pass(&self) -> bool {
        !self.bins.is_empty() && self.bins.iter().all(|b| b.report.pass)
    }
}

/// Within each population size `k` with at least `min_bin` samples, tests
/// the maximal fitness against the cdf `u^k`.
pub fn conditional_max_law(samples: &[(u64, f64)], min_bin: usize) -> Result<ConditionalLawReport> {
    let mut by_k: std::collections::BTreeMap<u64, Vec<f64>> = std::collections::BTreeMap::new();
    for &(k, phi) in samples {
        if k == 0 {
            return Err(Error::InvalidParams("population size 0 in samples".into()));
        }
        by_k.entry(k).or_default().push(phi);
    }
    let mut bins = Vec::new();
    let mut skipped = Vec::new();
    for (k, phis) in by_k {
        if phis.len() < min_bin.max(50) {
            skipped.push((k, phis.len()));
            continue;
        }
        let report = ks_statistic(&phis, ReferenceLaw::Power { k: k as u32 })?;
        bins.push(BinReport { k, report });
    }
    Ok(ConditionalLawReport { bins, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(v: &[f64]) -> OrderedFitnessSet {
        OrderedFitnessSet::new(v.to_vec()).unwrap()
    }

    #[test]
    fn precedes_examples() {
        let a = set(&[0.2, 0.5]);
        assert!(precedes(&a, &a).unwrap());
        assert!(precedes(&a, &set(&[0.3, 0.7])).unwrap());
        assert!(!precedes(&set(&[0.2, 0.8]), &set(&[0.3, 0.7])).unwrap());
        assert!(precedes(&a, &set(&[0.3])).is_err());
    }

    #[test]
    fn set_validation() {
        assert!(OrderedFitnessSet::new(vec![0.0, 0.5]).is_err());
        assert!(OrderedFitnessSet::new(vec![0.5, 0.5]).is_err());
        assert_eq!(set(&[0.5, 0.1]).elements(), &[0.1, 0.5]);
    }

    #[test]
    fn insert_examples() {
        let (a2, b2) = insert_common(&set(&[0.2, 0.5]), &set(&[0.3, 0.7]), 0.4).unwrap();
        assert_eq!(a2.elements(), &[0.2, 0.4, 0.5]);
        assert_eq!(b2.elements(), &[0.3, 0.4, 0.7]);
        let a = set(&[0.1, 0.6]);
        let (x, y) = insert_common(&a, &a, 0.3).unwrap();
        assert_eq!(x, y);
        assert!(insert_common(&a, &set(&[0.2, 0.7]), 0.6).is_err());
        assert!(insert_common(&set(&[0.2, 0.8]), &set(&[0.3, 0.7]), 0.5).is_err());
    }

    #[test]
    fn delete_examples() {
        let (a2, b2) = delete_coupled(&set(&[0.2, 0.5]), &set(&[0.3, 0.7]), DeleteRule::MinVsRank(1)).unwrap();
        assert_eq!(a2.elements(), &[0.2]);
        assert_eq!(b2.elements(), &[0.7]);
        let a = set(&[0.1, 0.4, 0.6]);
        for j in 1..=3 {
            let (x, y) = delete_coupled(&a, &a, DeleteRule::RandomRank(j)).unwrap();
            assert_eq!(x, y);
        }
        assert!(delete_coupled(&set(&[0.3]), &set(&[0.4]), DeleteRule::RandomRank(1)).is_err());
        assert!(delete_coupled(&a, &a, DeleteRule::RandomRank(4)).is_err());
        assert!(delete_coupled(&a, &a, DeleteRule::MinVsRank(0)).is_err());
    }

    #[test]
    fn exhaustive_small_sets() {
        let e = enumerate_lemma_cases(4, 7);
        assert!(e.cases > 10_000, "{}", e.cases);
        assert_eq!(e.violations, 0);
    }

    fn dominating_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|k| {
            (proptest::collection::vec(0.001f64..0.999, k), proptest::collection::vec(0.0f64..0.5, k))
        })
        .prop_filter_map("distinct", |(a, d)| {
            let mut a = a;
            a.sort_by(f64::total_cmp);
            let mut b: Vec<f64> = a.iter().zip(&d).map(|(x, dx)| (x + dx * (1.0 - x)).min(0.9999)).collect();
            b.sort_by(f64::total_cmp);
            let distinct = |v: &Vec<f64>| v.windows(2).all(|w| w[0] < w[1]);
            (distinct(&a) && distinct(&b)).then_some((a, b))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn lemma_holds_on_random_instances((a, b) in dominating_pair(), w in 0.0001f64..0.9999, j in 1usize..40, min in any::<bool>()) {
            let (sa, sb) = (set(&a), set(&b));
            // brute-force oracle: pairwise comparison of the sorted vectors
            prop_assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
            if !a.contains(&w) && !b.contains(&w) {
                let (a2, b2) = insert_common(&sa, &sb, w).unwrap();
                prop_assert!(a2.elements().iter().zip(b2.elements()).all(|(x, y)| x <= y));
            }
            if a.len() >= 2 {
                let j = 1 + (j - 1) % a.len();
                let rule = if min { DeleteRule::MinVsRank(j) } else { DeleteRule::RandomRank(j) };
                let (a2, b2) = delete_coupled(&sa, &sb, rule).unwrap();
                prop_assert!(a2.elements().iter().zip(b2.elements()).all(|(x, y)| x <= y));
                prop_assert!(b2.max() >= a2.max());
            }
        }
    }

    #[test]
    fn all_random_coins_give_identical_processes() {
        let p = ModelParams::new(2.0, 0.5).unwrap();
        let mut d = generate_driver(p, 5.0, 3, 0, Some(500)).unwrap();
        for ev in &mut d.events {
            if let DriverEvent::Down { eps, .. } = ev {
                *eps = true;
            }
        }
        let run = replay(&d, true).unwrap();
        assert!(run.trace.unwrap().iter().all(|row| row.max_f1 == row.max_fr));
        assert_eq!(run.min_gap, 0.0);
    }

    #[test]
    fn coupled_runs_dominate() {
        let p = ModelParams::new(2.0, 0.5).unwrap();
        for replica in 0..20 {
            let run = coupled_simulate(p, 6.0, 9, replica, Some(2000), false).unwrap();
            assert!(run.min_gap >= 0.0);
            assert!(run.max_fr >= run.max_f1);
        }
    }

    #[test]
    fn driver_ranks_within_population() {
        let p = ModelParams::new(1.5, 0.3).unwrap();
        let d = generate_driver(p, 8.0, 2, 1, None).unwrap();
        let mut n = 1usize;
        for ev in &d.events {
            match *ev {
                DriverEvent::Up { .. } => n += 1,
                DriverEvent::Down { rank, .. } => {
                    assert!(n >= 2 && (1..=n).contains(&rank));
                    n -= 1;
                }
            }
        }
    }

    #[test]
    fn corrupted_driver_is_caught() {
        let d = SharedDriver {
            initial: 0.5,
            events: vec![DriverEvent::Down { time: 1.0, eps: false, rank: 1 }],
            stop_time: 2.0,
            reached_cap: false,
        };
        assert!(replay(&d, false).is_err());
    }

    #[test]
    fn dominance_excess_signs() {
        let lo: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let up: Vec<f64> = lo.iter().map(|x| x + 0.05).collect();
        assert!(dominance_excess(&lo, &up) <= 0.0);
        assert!(dominance_excess(&up, &lo) > 0.0);
    }

    #[test]
    fn conditional_law_bins() {
        let mut r = rng::substream(1, "cl", 0);
        let mut samples = Vec::new();
        for _ in 0..3000 {
            samples.push((1, r.random::<f64>()));
            samples.push((2, r.random::<f64>().max(r.random::<f64>())));
        }
        samples.push((7, 0.9));
        let rep = conditional_max_law(&samples, 200).unwrap();
        assert_eq!(rep.bins.len(), 2);
        assert!(rep.all_pass());
        assert_eq!(rep.skipped, vec![(7, 1)]);
        // k = 2 samples are not uniform
        let wrong: Vec<(u64, f64)> = samples.iter().filter(|s| s.0 == 2).map(|s| (1, s.1)).collect();
        assert!(!conditional_max_law(&wrong, 200).unwrap().all_pass());
    }
}
