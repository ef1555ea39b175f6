//! Task-agnostic pre-training, noise injection and decision-focused
//! training through the scheduling QP.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::plant_sim::{Plant, PlantError, SimulationTrace, Transition};
use crate::qp::{self, QpError, SolverSettings};
use crate::rc::{rc_step, RcError, ThetaParams, ZoneTopology};
use crate::scenarios::DayScenario;
use crate::scheduler::{
    parameter_map, peak_step, solve_schedule_with, Capacities, ComfortSchedule, ScheduleConfig, ScheduleError, Scheduled,
    Tariff,
};

#[derive(Debug, thiserror::Error)]
pub enum LearningError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("every scenario of epoch {0} failed")]
    EmptyEpoch(usize),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Rc(#[from] RcError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// exponent γ of the polynomial decay
    pub decay_gamma: f64,
    /// `lr_t = lr · (1 / (1 + decay_rate · t))^γ`, `t` counted in [`DecayUnit`]s
    pub decay_rate: f64,
    pub decay_unit: DecayUnit,
    pub max_epochs: usize,
    pub patience: usize,
    pub snr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            decay_gamma: 0.9,
            decay_rate: 1.0,
            decay_unit: DecayUnit::Epoch,
            max_epochs: 50,
            patience: 10,
            snr: 625.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearningError> {
        let bad = |m: &str| Err(LearningError::Config(m.into()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be non-negative");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if !(self.snr > 0.0) {
            return bad("snr must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return bad("Adam needs betas in [0, 1) and eps > 0");
        }
        if !(self.decay_rate >= 0.0 && self.decay_gamma >= 0.0) {
            return bad("decay parameters must be non-negative");
        }
        Ok(())
    }

    /// Rate for the `step`-th update (0-based) made during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize, step: usize) -> f64 {
        let t = match self.decay_unit {
            DecayUnit::Epoch => epoch,
            DecayUnit::Step => step,
        };
        self.lr * (1.0 / (1.0 + self.decay_rate * t as f64)).powf(self.decay_gamma)
    }
}

/// What the polynomial decay counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayUnit {
    Epoch,
    /// every per-sample update
    Step,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// steps rejected for a non-finite gradient
    pub skipped: usize,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1,
            beta2,
            eps,
            skipped: 0,
        }
    }

    /// Returns false (and leaves everything untouched) on a non-finite
    /// gradient.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> bool {
        assert_eq!(params.len(), grad.len());
        if grad.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return false;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        true
    }
}

/// Additive Gaussian noise with std `|θ_i|/√snr` on every flat parameter,
/// drawn in the natural domain. Positive parameters whose draw crosses zero
/// are redrawn, up to 100 times, then left unperturbed.
pub fn inject_noise(theta: &ThetaParams, snr: f64, seed: u64) -> ThetaParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_alpha = theta.layout.num_alpha();
    let scale = 1.0 / snr.sqrt();
    let flat: Vec<f64> = theta
        .pack()
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            if k < num_alpha {
                let z: f64 = StandardNormal.sample(&mut rng);
                return v + z * v.abs() * scale;
            }
            let natural = v.exp();
            for _ in 0..100 {
                let z: f64 = StandardNormal.sample(&mut rng);
                let noisy = natural + z * natural * scale;
                if noisy > 0.0 {
                    return noisy.ln();
                }
            }
            v
        })
        .collect();
    ThetaParams::unpack(&theta.layout, &flat).expect("same layout")
}

/// Level weights of the hierarchical loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub building: f64,
    pub floor: Vec<f64>,
}

impl LossWeights {
    /// Each level weighted by the number of zones it aggregates.
    pub fn from_topology(topology: &ZoneTopology) -> Self {
        Self {
            building: topology.num_zones as f64,
            floor: topology.floors.iter().map(|f| f.len() as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub building_term: f64,
    pub floor_term: f64,
    pub zone_term: f64,
    /// weighted error of each step before the 1/T average
    pub per_step: Vec<f64>,
}

fn check_grid(m: &[Vec<f64>], rows: usize, cols: usize, name: &str) -> Result<(), LearningError> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(LearningError::Shape(format!("{name} must be {rows}×{cols}")));
    }
    Ok(())
}

/// Price weight of every step: the energy price with the demand charge
/// added at the observed peak.
pub fn loss_prices(observed: &[Vec<f64>], tariff: &Tariff) -> Vec<f64> {
    let building: Vec<f64> = observed.iter().map(|r| r.iter().sum()).collect();
    tariff.all_inclusive_price(peak_step(&building))
}

pub fn hierarchical_loss_with(
    expected: &[Vec<f64>],
    observed: &[Vec<f64>],
    prices: &[f64],
    topology: &ZoneTopology,
    weights: &LossWeights,
) -> Result<LossBreakdown, LearningError> {
    let steps = prices.len();
    let nz = topology.num_zones;
    check_grid(expected, steps, nz, "expected")?;
    check_grid(observed, steps, nz, "observed")?;
    if weights.floor.len() != topology.num_floors() {
        return Err(LearningError::Shape("one floor weight per floor".into()));
    }
    let mut out = LossBreakdown {
        total: 0.0,
        building_term: 0.0,
        floor_term: 0.0,
        zone_term: 0.0,
        per_step: Vec::with_capacity(steps),
    };
    if steps == 0 {
        return Ok(out);
    }
    let inv_t = 1.0 / steps as f64;
    for t in 0..steps {
        let err: Vec<f64> = (0..nz).map(|z| expected[t][z] - observed[t][z]).collect();
        let b = weights.building * err.iter().sum::<f64>().abs();
        let f: f64 = topology
            .floors
            .iter()
            .zip(&weights.floor)
            .map(|(members, w)| w * members.iter().map(|&z| err[z]).sum::<f64>().abs())
            .sum();
        let zt: f64 = err.iter().map(|e| e.abs()).sum();
        let lambda = prices[t];
        out.building_term += inv_t * lambda * b;
        out.floor_term += inv_t * lambda * f;
        out.zone_term += inv_t * lambda * zt;
        out.per_step.push(lambda * (b + f + zt));
    }
    out.total = out.building_term + out.floor_term + out.zone_term;
    Ok(out)
}

pub fn hierarchical_loss(
    expected: &[Vec<f64>],
    observed: &[Vec<f64>],
    tariff: &Tariff,
    topology: &ZoneTopology,
) -> Result<LossBreakdown, LearningError> {
    hierarchical_loss_with(
        expected,
        observed,
        &loss_prices(observed, tariff),
        topology,
        &LossWeights::from_topology(topology),
    )
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Subgradient in the expected powers, with sign(0) = 0.
pub fn loss_gradient_with(
    expected: &[Vec<f64>],
    observed: &[Vec<f64>],
    prices: &[f64],
    topology: &ZoneTopology,
    weights: &LossWeights,
) -> Result<Vec<Vec<f64>>, LearningError> {
    let steps = prices.len();
    let nz = topology.num_zones;
    check_grid(expected, steps, nz, "expected")?;
    check_grid(observed, steps, nz, "observed")?;
    let floor_of = topology.floor_of();
    let inv_t = 1.0 / steps.max(1) as f64;
    Ok((0..steps)
        .map(|t| {
            let err: Vec<f64> = (0..nz).map(|z| expected[t][z] - observed[t][z]).collect();
            let sb = sign(err.iter().sum());
            let sf: Vec<f64> = topology
                .floors
                .iter()
                .map(|members| sign(members.iter().map(|&z| err[z]).sum()))
                .collect();
            (0..nz)
                .map(|z| {
                    let f = floor_of[z];
                    inv_t * prices[t] * (weights.building * sb + weights.floor[f] * sf[f] + sign(err[z]))
                })
                .collect()
        })
        .collect())
}

pub fn loss_gradient_wrt_expected(
    expected: &[Vec<f64>],
    observed: &[Vec<f64>],
    tariff: &Tariff,
    topology: &ZoneTopology,
) -> Result<Vec<Vec<f64>>, LearningError> {
    loss_gradient_with(
        expected,
        observed,
        &loss_prices(observed, tariff),
        topology,
        &LossWeights::from_topology(topology),
    )
}

// ---------------------------------------------------------------------------
// pre-training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    /// start from the per-zone least-squares fit in coefficient space
    pub least_squares_start: bool,
    pub dt: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            epochs: 200,
            patience: 10,
            least_squares_start: true,
            dt: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub holdout_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub theta: ThetaParams,
    pub log: Vec<PretrainRecord>,
    pub initial_mse: f64,
    pub best_epoch: usize,
}

/// Days with index ≡ 4 (mod 5) form the 20 % holdout.
pub fn is_holdout(tr: &Transition) -> bool {
    (tr.hour / 24) % 5 == 4
}

pub fn one_step_mse(theta: &ThetaParams, data: &[&Transition], dt: f64) -> Result<f64, LearningError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let partial = data
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sum = 0.0;
            for tr in chunk {
                let pred = rc_step(theta, &tr.tau, tr.ambient, &tr.p_h, &tr.p_c, dt)?;
                sum += pred.iter().zip(&tr.tau_next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            Ok(sum)
        })
        .collect::<Result<Vec<f64>, LearningError>>()?;
    Ok(partial.iter().sum::<f64>() / (data.len() * theta.num_zones()) as f64)
}

// fixed chunking keeps the reductions bitwise reproducible
const CHUNK: usize = 512;

/// Gradient of [`one_step_mse`] in the flat parameter vector.
pub fn one_step_mse_gradient(theta: &ThetaParams, data: &[&Transition], dt: f64) -> Result<Vec<f64>, LearningError> {
    let layout = &theta.layout;
    let nz = theta.num_zones();
    let (eta_h, eta_c, r, c) = (theta.eta_h(), theta.eta_c(), theta.r(), theta.c());
    let mut g = vec![0.0; layout.len()];
    if data.is_empty() {
        return Ok(g);
    }
    let scale = 2.0 / (data.len() * nz) as f64;
    let partial = data
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; layout.len()];
            for tr in chunk {
                let pred = rc_step(theta, &tr.tau, tr.ambient, &tr.p_h, &tr.p_c, dt)?;
                for i in 0..nz {
                    let e = scale * (pred[i] - tr.tau_next[i]);
                    for j in 0..nz {
                        if let Some(k) = layout.alpha_index(i, j) {
                            g[k] += e * dt * tr.tau[j];
                        }
                    }
                    let heat = dt * eta_h[i] * tr.p_h[i] / c[i];
                    let cool = dt * eta_c[i] * tr.p_c[i] / c[i];
                    let env = dt * (tr.ambient - tr.tau[i]) / (r[i] * c[i]);
                    g[layout.log_eta_h(i)] += e * heat;
                    g[layout.log_eta_c(i)] -= e * cool;
                    g[layout.log_r(i)] -= e * env;
                    g[layout.log_c(i)] -= e * (heat - cool + env);
                }
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>, LearningError>>()?;
    for p in partial {
        for (a, b) in g.iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok(g)
}

/// Solves the small SPD system in place (Cholesky); None if not positive.
fn cholesky_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut s = a[i][j];
            for k in 0..j {
                s -= a[i][k] * a[j][k];
            }
            a[i][j] = s / d;
        }
    }
    for i in 0..n {
        for k in 0..i {
            b[i] -= a[i][k] * b[k];
        }
        b[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            b[i] -= a[k][i] * b[k];
        }
        b[i] /= a[i][i];
    }
    Some(b)
}

/// Per-zone linear least squares of `τ'ᵢ = Σⱼ aᵢⱼ τⱼ + gʰ pʰ − gᶜ pᶜ + k τᵃᵐᵇ`,
/// mapped back to θ keeping each zone's C from `init`. Coefficients that come
/// out non-positive, or whose regressor never moves, keep their value in
/// `init`.
pub fn least_squares_fit(init: &ThetaParams, data: &[&Transition], dt: f64) -> Result<ThetaParams, LearningError> {
    let nz = init.num_zones();
    let layout = &init.layout;
    let coef0 = init.coefficients(dt);
    let c = init.c();
    let mut alpha = init.alpha.clone();
    let (mut eta_h, mut eta_c, mut r) = (init.eta_h(), init.eta_c(), init.r());
    for i in 0..nz {
        let cols: Vec<usize> = (0..nz).filter(|&j| layout.is_learnable(i, j)).collect();
        let na = cols.len();
        // extra columns: gh, gc, k
        let feature = |tr: &Transition, col: usize| -> f64 {
            if col < na {
                tr.tau[cols[col]]
            } else {
                match col - na {
                    0 => tr.p_h[i],
                    1 => -tr.p_c[i],
                    _ => tr.ambient,
                }
            }
        };
        let init_extra = [coef0.g_h[i], coef0.g_c[i], coef0.k[i]];
        let mut fixed = [false; 3];
        for (e, f) in fixed.iter_mut().enumerate() {
            *f = data.iter().all(|tr| feature(tr, na + e) == 0.0);
        }
        let mut solution = None;
        for _ in 0..4 {
            let free: Vec<usize> = (0..na + 3).filter(|&col| col < na || !fixed[col - na]).collect();
            let m = free.len();
            let mut ata = vec![vec![0.0; m]; m];
            let mut atb = vec![0.0; m];
            for tr in data {
                let mut y = tr.tau_next[i];
                for e in 0..3 {
                    if fixed[e] {
                        y -= init_extra[e] * feature(tr, na + e);
                    }
                }
                let x: Vec<f64> = free.iter().map(|&col| feature(tr, col)).collect();
                for p in 0..m {
                    atb[p] += x[p] * y;
                    for q in 0..=p {
                        ata[p][q] += x[p] * x[q];
                    }
                }
            }
            let trace: f64 = (0..m).map(|p| ata[p][p]).sum();
            for p in 0..m {
                ata[p][p] += 1e-12 * trace / m as f64;
                for q in 0..p {
                    ata[q][p] = ata[p][q];
                }
            }
            let Some(x) = cholesky_solve(ata, atb) else {
                break;
            };
            let mut full = vec![f64::NAN; na + 3];
            for (p, &col) in free.iter().enumerate() {
                full[col] = x[p];
            }
            let mut changed = false;
            for e in 0..3 {
                if fixed[e] {
                    full[na + e] = init_extra[e];
                } else if !(full[na + e] > 0.0) {
                    fixed[e] = true;
                    changed = true;
                }
            }
            if !changed {
                solution = Some(full);
                break;
            }
        }
        let Some(x) = solution else {
            continue;
        };
        let (gh, gc, k) = (x[na], x[na + 1], x[na + 2]);
        for (p, &j) in cols.iter().enumerate() {
            let diag = if j == i { k } else { 0.0 };
            alpha[i * nz + j] = (x[p] + diag) / dt;
        }
        eta_h[i] = gh * c[i] / dt;
        eta_c[i] = gc * c[i] / dt;
        r[i] = dt / (k * c[i]);
    }
    Ok(ThetaParams::from_natural(layout.clone(), alpha, &eta_c, &eta_h, &r, &c)?)
}

/// One-step MSE minimization over the transition history; returns the
/// parameters with the lowest holdout MSE.
pub fn pretrain(data: &[Transition], init: &ThetaParams, config: &PretrainConfig) -> Result<Pretrained, LearningError> {
    let nz = init.num_zones();
    if let Some(tr) = data
        .iter()
        .find(|tr| tr.tau.len() != nz || tr.p_h.len() != nz || tr.p_c.len() != nz || tr.tau_next.len() != nz)
    {
        return Err(LearningError::Shape(format!("transition at hour {} is not {nz}-zone", tr.hour)));
    }
    let (holdout, train): (Vec<&Transition>, Vec<&Transition>) = data.iter().partition(|tr| is_holdout(tr));
    let dt = config.dt;
    let train_mse0 = one_step_mse(init, &train, dt)?;
    let score = |theta: &ThetaParams| -> Result<(f64, f64), LearningError> {
        let tr = one_step_mse(theta, &train, dt)?;
        let ho = if holdout.is_empty() { tr } else { one_step_mse(theta, &holdout, dt)? };
        Ok((tr, ho))
    };

    let mut theta = init.clone();
    if config.least_squares_start && !train.is_empty() {
        let fit = least_squares_fit(init, &train, dt)?;
        if fit.is_finite() && one_step_mse(&fit, &train, dt)? < train_mse0 {
            theta = fit;
        }
    }
    let (tr0, ho0) = score(&theta)?;
    if !(tr0.is_finite() && ho0.is_finite()) {
        return Err(LearningError::Diverged(format!("initial MSE {tr0}")));
    }
    let mut log = vec![PretrainRecord {
        epoch: 0,
        train_mse: tr0,
        holdout_mse: ho0,
    }];
    let mut best = (ho0, 0, theta.clone());
    let mut params = theta.pack();
    let mut adam = Adam::new(params.len(), config.beta1, config.beta2, config.eps);
    for epoch in 1..=config.epochs {
        let grad = one_step_mse_gradient(&theta, &train, dt)?;
        adam.step(&mut params, &grad, config.lr);
        theta = ThetaParams::unpack(&theta.layout, &params)?;
        let (tr, ho) = score(&theta)?;
        if !(tr.is_finite() && ho.is_finite()) {
            return Err(LearningError::Diverged(format!("epoch {epoch}: train MSE {tr}, holdout {ho}")));
        }
        log.push(PretrainRecord {
            epoch,
            train_mse: tr,
            holdout_mse: ho,
        });
        if ho < best.0 {
            best = (ho, epoch, theta.clone());
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }
    Ok(Pretrained {
        theta: best.2,
        log,
        initial_mse: train_mse0,
        best_epoch: best.1,
    })
}

// ---------------------------------------------------------------------------
// decision-focused training

/// Everything that stays fixed while θ changes.
#[derive(Debug, Clone)]
pub struct Task {
    pub topology: ZoneTopology,
    pub tariff: Tariff,
    pub comfort: ComfortSchedule,
    pub capacities: Capacities,
    pub dt: f64,
    pub weights: LossWeights,
    pub solver: SolverSettings,
    pub plant_seed: u64,
}

impl Task {
    pub fn new(topology: ZoneTopology, tariff: Tariff, capacities: Capacities) -> Self {
        Self {
            weights: LossWeights::from_topology(&topology),
            topology,
            tariff,
            comfort: ComfortSchedule::default(),
            capacities,
            dt: 1.0,
            solver: SolverSettings::default(),
            plant_seed: 0,
        }
    }

    pub fn config_for(&self, scenario: &DayScenario) -> ScheduleConfig {
        ScheduleConfig::for_day(
            scenario.ambient.len(),
            self.dt,
            scenario.weekday,
            &self.comfort,
            &self.capacities,
        )
    }

    pub fn seed_for(&self, scenario: &DayScenario) -> u64 {
        self.plant_seed ^ (scenario.day as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// One scenario scheduled with θ and played on the plant.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub scheduled: Scheduled,
    pub trace: SimulationTrace,
    pub loss: LossBreakdown,
    pub expected_cost: f64,
    pub expost_cost: f64,
    pub weight: f64,
    pub day: usize,
    pub config: ScheduleConfig,
}

impl ScenarioOutcome {
    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.scheduled
            .result
            .p_hvac
            .iter()
            .zip(&self.trace.p_hvac_obs)
            .flat_map(|(e, o)| e.iter().zip(o).map(|(a, b)| a - b))
    }
}

pub fn evaluate_scenario(
    theta: &ThetaParams,
    scenario: &DayScenario,
    task: &Task,
    plant: &dyn Plant,
) -> Result<ScenarioOutcome, LearningError> {
    let config = task.config_for(scenario);
    let scheduled = solve_schedule_with(theta, scenario, &task.tariff, &config, &task.topology, &task.solver)?;
    let trace = plant.simulate_day(
        &scheduled.result.tau_in,
        &scenario.ambient,
        scenario.day,
        task.seed_for(scenario),
    )?;
    let prices = loss_prices(&trace.p_hvac_obs, &task.tariff);
    let loss = hierarchical_loss_with(
        &scheduled.result.p_hvac,
        &trace.p_hvac_obs,
        &prices,
        &task.topology,
        &task.weights,
    )?;
    Ok(ScenarioOutcome {
        expected_cost: scheduled.result.expected_cost,
        expost_cost: trace.expost_cost(&task.tariff, task.dt),
        scheduled,
        trace,
        loss,
        weight: scenario.weight,
        day: scenario.day,
        config,
    })
}

/// Loss of the schedule produced by θ against a fixed observed trace, and
/// its gradient in the flat θ vector.
pub fn schedule_loss_gradient(
    theta: &ThetaParams,
    scenario: &DayScenario,
    task: &Task,
    observed: &[Vec<f64>],
) -> Result<(f64, Vec<f64>, Scheduled), LearningError> {
    let config = task.config_for(scenario);
    let scheduled = solve_schedule_with(theta, scenario, &task.tariff, &config, &task.topology, &task.solver)?;
    let grad = gradient_for(theta, scenario, task, &scheduled, observed)?;
    let prices = loss_prices(observed, &task.tariff);
    let loss = hierarchical_loss_with(&scheduled.result.p_hvac, observed, &prices, &task.topology, &task.weights)?;
    Ok((loss.total, grad, scheduled))
}

fn gradient_for(
    theta: &ThetaParams,
    scenario: &DayScenario,
    task: &Task,
    scheduled: &Scheduled,
    observed: &[Vec<f64>],
) -> Result<Vec<f64>, LearningError> {
    let prices = loss_prices(observed, &task.tariff);
    let dl = loss_gradient_with(&scheduled.result.p_hvac, observed, &prices, &task.topology, &task.weights)?;
    let ix = &scheduled.assembled.index;
    let mut g = vec![0.0; ix.num_vars()];
    for (t, row) in dl.iter().enumerate() {
        for (z, v) in row.iter().enumerate() {
            g[ix.p_hvac(t, z)] = *v;
        }
    }
    let sens = qp::backward(&scheduled.assembled.problem, &scheduled.solution, &g)?;
    for w in &sens.warnings {
        log::debug!("day {}: {w:?}", scenario.day);
    }
    let map = parameter_map(theta, scenario, &scheduled.assembled, task.dt);
    Ok(qp::backward_through_map(&sens, &map)?)
}

/// Weighted summary of a set of scenario outcomes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub hier_loss: f64,
    pub mae: f64,
    pub mse: f64,
    pub err_mean: f64,
    pub err_std: f64,
    pub expected_cost: f64,
    pub expost_cost: f64,
}

/// Scenario weights are normalized; `uniform` ignores them.
pub fn aggregate(outcomes: &[ScenarioOutcome], uniform: bool) -> SplitMetrics {
    if outcomes.is_empty() {
        return SplitMetrics::default();
    }
    let raw: Vec<f64> = outcomes.iter().map(|o| if uniform { 1.0 } else { o.weight }).collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / outcomes.len() as f64; outcomes.len()]
    };
    let mut m = SplitMetrics::default();
    let mut second = 0.0;
    for (o, &wk) in outcomes.iter().zip(&w) {
        let errs: Vec<f64> = o.errors().collect();
        let n = errs.len().max(1) as f64;
        m.hier_loss += wk * o.loss.total;
        m.mae += wk * errs.iter().map(|e| e.abs()).sum::<f64>() / n;
        let sq = errs.iter().map(|e| e * e).sum::<f64>() / n;
        m.mse += wk * sq;
        second += wk * sq;
        m.err_mean += wk * errs.iter().sum::<f64>() / n;
        m.expected_cost += wk * o.expected_cost;
        m.expost_cost += wk * o.expost_cost;
    }
    m.err_std = (second - m.err_mean * m.err_mean).max(0.0).sqrt();
    m
}

/// Solves and simulates every scenario concurrently; results keep the input
/// order. Failed scenarios are logged and dropped.
pub fn evaluate_all(
    theta: &ThetaParams,
    scenarios: &[DayScenario],
    task: &Task,
    plant: &dyn Plant,
) -> (Vec<ScenarioOutcome>, usize) {
    let results: Vec<_> = scenarios
        .par_iter()
        .map(|s| evaluate_scenario(theta, s, task, plant))
        .collect();
    let mut failed = 0;
    let mut out = Vec::with_capacity(results.len());
    for (s, r) in scenarios.iter().zip(results) {
        match r {
            Ok(o) => out.push(o),
            Err(e) => {
                failed += 1;
                log::warn!("day {} skipped: {e}", s.day);
            }
        }
    }
    (out, failed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub lr: f64,
    #[serde(flatten)]
    pub metrics: SplitMetrics,
}

#[derive(Debug, Clone)]
pub struct DflOutcome {
    pub theta: ThetaParams,
    pub best_epoch: usize,
    pub best_validation: f64,
    pub log: Vec<EpochRecord>,
    pub skipped: usize,
    pub rejected_steps: usize,
}

/// Pure SGD over the ordered training scenarios, one Adam step per
/// scenario; epoch 0 in the log is the starting point.
pub fn dfl_train(
    theta_init: &ThetaParams,
    train: &[DayScenario],
    validation: &[DayScenario],
    task: &Task,
    plant: &dyn Plant,
    config: &TrainConfig,
) -> Result<DflOutcome, LearningError> {
    config.validate()?;
    if train.is_empty() {
        return Err(LearningError::Config("no training scenarios".into()));
    }
    let validation = if validation.is_empty() { train } else { validation };
    let mut log = Vec::new();
    let record = |log: &mut Vec<EpochRecord>, epoch: usize, split: &str, lr: f64, outcomes: &[ScenarioOutcome]| {
        log.push(EpochRecord {
            epoch,
            split: split.into(),
            lr,
            metrics: aggregate(outcomes, false),
        });
    };

    let (train0, _) = evaluate_all(theta_init, train, task, plant);
    let (val0, failed0) = evaluate_all(theta_init, validation, task, plant);
    if val0.is_empty() {
        return Err(LearningError::EmptyEpoch(0));
    }
    record(&mut log, 0, "train", 0.0, &train0);
    record(&mut log, 0, "validation", 0.0, &val0);
    let mut best_val = aggregate(&val0, false).hier_loss;
    let mut best = (theta_init.clone(), 0);
    let mut skipped = failed0;

    let mut theta = theta_init.clone();
    let mut params = theta.pack();
    let mut adam = Adam::new(params.len(), config.beta1, config.beta2, config.eps);
    let mut updates = 0;
    for epoch in 1..=config.max_epochs {
        let first_lr = config.lr_at(epoch - 1, updates);
        let mut seen = Vec::with_capacity(train.len());
        for scenario in train {
            let outcome = match evaluate_scenario(&theta, scenario, task, plant) {
                Ok(o) => o,
                Err(e) => {
                    skipped += 1;
                    log::warn!("epoch {epoch}, day {}: {e}", scenario.day);
                    continue;
                }
            };
            match gradient_for(&theta, scenario, task, &outcome.scheduled, &outcome.trace.p_hvac_obs) {
                Ok(grad) => {
                    let lr = config.lr_at(epoch - 1, updates);
                    updates += 1;
                    if adam.step(&mut params, &grad, lr) {
                        theta = ThetaParams::unpack(&theta.layout, &params)?;
                    }
                }
                Err(e) => {
                    skipped += 1;
                    log::warn!("epoch {epoch}, day {}: backward failed: {e}", scenario.day);
                }
            }
            seen.push(outcome);
        }
        if seen.is_empty() {
            return Err(LearningError::EmptyEpoch(epoch));
        }
        record(&mut log, epoch, "train", first_lr, &seen);
        let (val, failed) = evaluate_all(&theta, validation, task, plant);
        skipped += failed;
        if val.is_empty() {
            return Err(LearningError::EmptyEpoch(epoch));
        }
        record(&mut log, epoch, "validation", first_lr, &val);
        let v = aggregate(&val, false).hier_loss;
        log::info!("epoch {epoch}: validation loss {v:.4}");
        if v < best_val {
            best_val = v;
            best = (theta.clone(), epoch);
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }
    Ok(DflOutcome {
        theta: best.0,
        best_epoch: best.1,
        best_validation: best_val,
        log,
        skipped,
        rejected_steps: adam.skipped,
    })
}
