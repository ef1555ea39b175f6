//! Weather years, representative days and the hot-year stress set.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const HOURS_PER_YEAR: usize = 8760;
pub const DAYS_PER_YEAR: usize = 365;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("k = {k} exceeds the {distinct} distinct days")]
    TooManyMedoids { k: usize, distinct: usize },
    #[error("invalid clustering input: {0}")]
    Invalid(String),
    #[error("weather file: {0}")]
    Weather(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayScenario {
    /// °C per step
    pub ambient: Vec<f64>,
    /// °C per zone at the start of the day
    pub initial_tau: Vec<f64>,
    /// cluster id
    pub label: usize,
    /// share of the year represented
    pub weight: f64,
    /// day of the year the profile comes from
    pub day: usize,
    pub weekday: bool,
}

impl DayScenario {
    pub fn new(ambient: Vec<f64>, initial_tau: Vec<f64>) -> Self {
        Self {
            ambient,
            initial_tau,
            label: 0,
            weight: 1.0,
            day: 0,
            weekday: true,
        }
    }
}

/// The year starts on a Monday.
pub fn is_weekday(day: usize) -> bool {
    day % 7 < 5
}

/// Annual harmonic + diurnal harmonic + AR(1) residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherParams {
    pub mean: f64,
    pub annual_amplitude: f64,
    /// day of the warmest point of the annual cycle
    pub annual_peak_day: f64,
    pub diurnal_amplitude: f64,
    /// hour of the warmest point of the daily cycle
    pub diurnal_peak_hour: f64,
    pub ar_phi: f64,
    /// innovation std of the AR(1) residual
    pub ar_std: f64,
}

impl Default for WeatherParams {
    /// Continental climate with cold winters and hot summers.
    fn default() -> Self {
        Self {
            mean: 10.0,
            annual_amplitude: 12.0,
            annual_peak_day: 200.0,
            diurnal_amplitude: 7.0,
            diurnal_peak_hour: 15.0,
            ar_phi: 0.95,
            ar_std: 1.1,
        }
    }
}

pub fn harmonic(params: &WeatherParams, hour: usize) -> f64 {
    use std::f64::consts::TAU;
    let h = hour as f64;
    let annual = (TAU * (h / 24.0 - params.annual_peak_day) / DAYS_PER_YEAR as f64).cos();
    let diurnal = (TAU * (h - params.diurnal_peak_hour) / 24.0).cos();
    params.mean + params.annual_amplitude * annual + params.diurnal_amplitude * diurnal
}

pub fn synthesize_year(seed: u64, params: &WeatherParams) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.ar_std.max(0.0)).expect("finite std");
    // start the residual in its stationary distribution
    let stationary = params.ar_std / (1.0 - params.ar_phi * params.ar_phi).max(1e-12).sqrt();
    let mut e = if params.ar_std > 0.0 {
        stationary * Normal::new(0.0, 1.0).unwrap().sample(&mut rng)
    } else {
        0.0
    };
    (0..HOURS_PER_YEAR)
        .map(|h| {
            if h > 0 {
                let eps = if params.ar_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                e = params.ar_phi * e + eps;
            }
            harmonic(params, h) + e
        })
        .collect()
}

pub fn write_weather_csv<W: Write>(series: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "hour,temp_c")?;
    for (h, v) in series.iter().enumerate() {
        writeln!(w, "{h},{v}")?;
    }
    Ok(())
}

pub fn read_weather_csv<R: BufRead>(r: R) -> Result<Vec<f64>, ScenarioError> {
    let bad = |m: String| ScenarioError::Weather(m);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .map_err(|e| bad(e.to_string()))?;
    if header.trim() != "hour,temp_c" {
        return Err(bad(format!("expected header `hour,temp_c`, got `{header}`")));
    }
    let mut out = Vec::with_capacity(HOURS_PER_YEAR);
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let (h, v) = line
            .split_once(',')
            .ok_or_else(|| bad(format!("line {}: expected two columns", k + 2)))?;
        let h: usize = h.trim().parse().map_err(|_| bad(format!("line {}: bad hour", k + 2)))?;
        if h != out.len() {
            return Err(bad(format!("line {}: hour {h} out of order", k + 2)));
        }
        let v: f64 = v.trim().parse().map_err(|_| bad(format!("line {}: bad temperature", k + 2)))?;
        if !v.is_finite() {
            return Err(bad(format!("line {}: non-finite temperature", k + 2)));
        }
        out.push(v);
    }
    if out.len() != HOURS_PER_YEAR {
        return Err(bad(format!("expected {HOURS_PER_YEAR} rows, found {}", out.len())));
    }
    Ok(out)
}

/// 365 rows of 24 hourly values.
pub fn days_of(year: &[f64]) -> Vec<Vec<f64>> {
    year.chunks(24).map(<[f64]>::to_vec).collect()
}

pub fn daily_mean(day: &[f64]) -> f64 {
    day.iter().sum::<f64>() / day.len() as f64
}

pub fn daily_variance(day: &[f64]) -> f64 {
    let m = daily_mean(day);
    day.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / day.len() as f64
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Indices sorted by `key` with `better(a, b)` deciding order; stable, so
/// ties keep the earliest index first.
fn ranked(n: usize, key: impl Fn(usize) -> f64, descending: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        if descending {
            kb.total_cmp(&ka)
        } else {
            ka.total_cmp(&kb)
        }
    });
    idx
}

/// Coldest mean, hottest mean and highest variance. A criterion whose best
/// day is already taken falls back to its next-ranked day.
pub fn pick_extremes(days: &[Vec<f64>]) -> [usize; 3] {
    let n = days.len();
    let rankings = [
        ranked(n, |d| daily_mean(&days[d]), false),
        ranked(n, |d| daily_mean(&days[d]), true),
        ranked(n, |d| daily_variance(&days[d]), true),
    ];
    let mut out = [0; 3];
    let mut taken = Vec::new();
    for (k, ranking) in rankings.iter().enumerate() {
        let pick = ranking
            .iter()
            .copied()
            .find(|d| !taken.contains(d))
            .unwrap_or(ranking[0]);
        taken.push(pick);
        out[k] = pick;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// day index of each medoid; fixed medoids come first
    pub medoids: Vec<usize>,
    /// cluster of each day
    pub assignment: Vec<usize>,
    /// cluster size / number of days
    pub weights: Vec<f64>,
    pub cost: f64,
    /// objective after the build phase and after every swap
    pub history: Vec<f64>,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&d| self.assignment[d] == cluster)
            .collect()
    }
}

fn assign(dist: &[Vec<f64>], medoids: &[usize]) -> (Vec<usize>, f64) {
    let n = dist.len();
    let mut cost = 0.0;
    let assignment = (0..n)
        .map(|d| {
            let mut best = 0;
            for (c, &m) in medoids.iter().enumerate() {
                if dist[d][m] < dist[d][medoids[best]] {
                    best = c;
                }
            }
            cost += dist[d][medoids[best]];
            best
        })
        .collect();
    (assignment, cost)
}

fn count_distinct(days: &[Vec<f64>]) -> usize {
    let mut rows: Vec<Vec<u64>> = days
        .iter()
        .map(|d| d.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort();
    rows.dedup();
    rows.len()
}

/// PAM with some medoids pinned: greedy build, then steepest-descent swaps
/// of the free medoids until no swap lowers the total distance.
pub fn kmedoid_cluster(days: &[Vec<f64>], k: usize, fixed: &[usize]) -> Result<Clustering, ScenarioError> {
    let n = days.len();
    if k == 0 || n == 0 {
        return Err(ScenarioError::Invalid("need at least one day and one medoid".into()));
    }
    if fixed.len() > k {
        return Err(ScenarioError::Invalid(format!("{} fixed medoids for k = {k}", fixed.len())));
    }
    if let Some(&f) = fixed.iter().find(|&&f| f >= n) {
        return Err(ScenarioError::Invalid(format!("fixed medoid {f} out of range")));
    }
    let mut sorted_fixed = fixed.to_vec();
    sorted_fixed.sort_unstable();
    sorted_fixed.dedup();
    if sorted_fixed.len() != fixed.len() {
        return Err(ScenarioError::Invalid("fixed medoids repeat".into()));
    }
    let distinct = count_distinct(days);
    if k > distinct {
        return Err(ScenarioError::TooManyMedoids { k, distinct });
    }
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| distance(&days[i], &days[j])).collect())
        .collect();

    let mut medoids = fixed.to_vec();
    // nearest-medoid distance of every day
    let mut near: Vec<f64> = (0..n)
        .map(|d| medoids.iter().map(|&m| dist[d][m]).fold(f64::INFINITY, f64::min))
        .collect();
    while medoids.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for cand in 0..n {
            // a copy of an existing medoid adds nothing
            if medoids.iter().any(|&m| dist[cand][m] == 0.0) {
                continue;
            }
            let total: f64 = (0..n).map(|d| near[d].min(dist[d][cand])).sum();
            if best.is_none_or(|(_, c)| total < c) {
                best = Some((cand, total));
            }
        }
        let (m, _) = best.expect("enough distinct days");
        for d in 0..n {
            near[d] = near[d].min(dist[d][m]);
        }
        medoids.push(m);
    }

    let (_, mut cost) = assign(&dist, &medoids);
    let mut history = vec![cost];
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for slot in fixed.len()..k {
            for cand in 0..n {
                if medoids.iter().any(|&m| dist[cand][m] == 0.0) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[slot] = cand;
                let (_, c) = assign(&dist, &trial);
                if c < best.map_or(cost, |b| b.2) - 1e-12 * (1.0 + cost) {
                    best = Some((slot, cand, c));
                }
            }
        }
        match best {
            Some((slot, cand, c)) => {
                medoids[slot] = cand;
                cost = c;
                history.push(cost);
            }
            None => break,
        }
    }
    let (assignment, cost) = assign(&dist, &medoids);
    let mut sizes = vec![0usize; k];
    for &a in &assignment {
        sizes[a] += 1;
    }
    Ok(Clustering {
        weights: sizes.iter().map(|&s| s as f64 / n as f64).collect(),
        medoids,
        assignment,
        cost,
        history,
    })
}

/// Up-down sweep over the daily means: every other value going up, the rest
/// coming back down, so the cycle has no large jump at the wrap-around.
pub fn order_cycle(means: &[f64]) -> Vec<usize> {
    let sorted = ranked(means.len(), |i| means[i], false);
    let up = sorted.iter().step_by(2).copied();
    let down: Vec<usize> = sorted.iter().skip(1).step_by(2).copied().collect();
    up.chain(down.into_iter().rev()).collect()
}

/// Per cluster, the member day with the highest daily mean; the one from the
/// hottest cluster (highest medoid mean) is raised by 2 °C.
pub fn build_hot_year(days: &[Vec<f64>], clustering: &Clustering) -> Vec<DayScenario> {
    let hottest_cluster = (0..clustering.medoids.len())
        .max_by(|&a, &b| {
            daily_mean(&days[clustering.medoids[a]])
                .total_cmp(&daily_mean(&days[clustering.medoids[b]]))
                .then(b.cmp(&a))
        })
        .unwrap_or(0);
    (0..clustering.medoids.len())
        .map(|c| {
            let members = clustering.members(c);
            let day = members
                .iter()
                .copied()
                .max_by(|&a, &b| daily_mean(&days[a]).total_cmp(&daily_mean(&days[b])).then(b.cmp(&a)))
                .unwrap_or(clustering.medoids[c]);
            let offset = if c == hottest_cluster { 2.0 } else { 0.0 };
            DayScenario {
                ambient: days[day].iter().map(|v| v + offset).collect(),
                initial_tau: Vec::new(),
                label: c,
                weight: clustering.weights[c],
                day,
                weekday: is_weekday(day),
            }
        })
        .collect()
}

/// Two distinct members per cluster drawn uniformly (medoid excluded when
/// the cluster has other members): one for validation, one for test.
pub fn sample_validation_test(clustering: &Clustering, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (c, &m) in clustering.medoids.iter().enumerate() {
        let members = clustering.members(c);
        let mut pool: Vec<usize> = members.iter().copied().filter(|&d| d != m).collect();
        if pool.is_empty() {
            pool.push(m);
        }
        let a = pool.swap_remove(rng.random_range(0..pool.len()));
        let b = if pool.is_empty() {
            a
        } else {
            pool[rng.random_range(0..pool.len())]
        };
        val.push(a);
        test.push(b);
    }
    (val, test)
}

pub fn scenario_for_day(days: &[Vec<f64>], day: usize, label: usize, weight: f64) -> DayScenario {
    DayScenario {
        ambient: days[day].clone(),
        initial_tau: Vec::new(),
        label,
        weight,
        day,
        weekday: is_weekday(day),
    }
}
