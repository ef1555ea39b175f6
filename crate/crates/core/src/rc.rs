//! Learnable multi-zone RC thermal model.
//!
//! One step reads
//!
//! ```text
//! τ' = Δt (α τ + (ηʰ pʰ − ηᶜ pᶜ) / C + (τᵃᵐᵇ − τ) / (R C))
//! ```
//!
//! evaluated as written: there is no separate carryover term, so the
//! persistence of each zone lives in the diagonal of α (α = I/Δt keeps τ).
//! The positive parameters (η, R, C) are stored as logarithms.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::qp::{DataEntry, SparseLinearMap};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RcError {
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("parameter {0} must be finite and positive")]
    NotPositive(&'static str),
    #[error("non-finite parameter at flat index {0}")]
    NonFinite(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneTopology {
    pub num_zones: usize,
    pub floors: Vec<Vec<usize>>,
    pub names: Vec<String>,
}

impl ZoneTopology {
    /// `floors` equal floors of `per_floor` zones, numbered floor by floor.
    pub fn uniform(floors: usize, per_floor: usize) -> Self {
        let num_zones = floors * per_floor;
        Self {
            num_zones,
            floors: (0..floors)
                .map(|f| (f * per_floor..(f + 1) * per_floor).collect())
                .collect(),
            names: (0..num_zones)
                .map(|z| format!("f{}z{}", z / per_floor, z % per_floor))
                .collect(),
        }
    }

    /// Three floors of five conditioned zones.
    pub fn case_study() -> Self {
        Self::uniform(3, 5)
    }

    pub fn num_floors(&self) -> usize {
        self.floors.len()
    }

    pub fn validate(&self) -> Result<(), RcError> {
        if self.num_zones == 0 {
            return Err(RcError::Topology("no zones".into()));
        }
        if self.names.len() != self.num_zones {
            return Err(RcError::Topology(format!(
                "{} names for {} zones",
                self.names.len(),
                self.num_zones
            )));
        }
        let mut seen = vec![false; self.num_zones];
        for (f, floor) in self.floors.iter().enumerate() {
            for &z in floor {
                if z >= self.num_zones {
                    return Err(RcError::Topology(format!("floor {f} lists zone {z}")));
                }
                if seen[z] {
                    return Err(RcError::Topology(format!("zone {z} is on two floors")));
                }
                seen[z] = true;
            }
        }
        if let Some(z) = seen.iter().position(|s| !s) {
            return Err(RcError::Topology(format!("zone {z} has no floor")));
        }
        Ok(())
    }

    pub fn floor_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_zones];
        for (f, floor) in self.floors.iter().enumerate() {
            for &z in floor {
                out[z] = f;
            }
        }
        out
    }

    /// α sparsity: zones on the same floor, plus zones stacked directly above
    /// or below (same position on an adjacent floor).
    pub fn adjacency_mask(&self) -> Vec<bool> {
        let z = self.num_zones;
        let floor = self.floor_of();
        let mut position = vec![0; z];
        for fl in &self.floors {
            for (k, &zone) in fl.iter().enumerate() {
                position[zone] = k;
            }
        }
        let mut mask = vec![false; z * z];
        for i in 0..z {
            for j in 0..z {
                let same = floor[i] == floor[j];
                let stacked = floor[i].abs_diff(floor[j]) == 1 && position[i] == position[j];
                mask[i * z + j] = same || stacked;
            }
        }
        mask
    }
}

/// Flat layout: α entries (row-major, masked), then log ηᶜ, log ηʰ, log R,
/// log C, each of length Z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub num_zones: usize,
    alpha_mask: Option<Vec<bool>>,
    /// flat index -> (row, col) of α
    alpha_slots: Vec<(usize, usize)>,
}

impl ParamLayout {
    pub fn dense(num_zones: usize) -> Self {
        let alpha_slots = (0..num_zones)
            .flat_map(|i| (0..num_zones).map(move |j| (i, j)))
            .collect();
        Self {
            num_zones,
            alpha_mask: None,
            alpha_slots,
        }
    }

    /// The diagonal is always learnable, whatever the mask says.
    pub fn masked(num_zones: usize, mask: &[bool]) -> Result<Self, RcError> {
        if mask.len() != num_zones * num_zones {
            return Err(RcError::Length {
                expected: num_zones * num_zones,
                got: mask.len(),
            });
        }
        let mut mask = mask.to_vec();
        for i in 0..num_zones {
            mask[i * num_zones + i] = true;
        }
        let alpha_slots = (0..num_zones)
            .flat_map(|i| (0..num_zones).map(move |j| (i, j)))
            .filter(|&(i, j)| mask[i * num_zones + j])
            .collect();
        Ok(Self {
            num_zones,
            alpha_mask: Some(mask),
            alpha_slots,
        })
    }

    pub fn alpha_mask(&self) -> Option<&[bool]> {
        self.alpha_mask.as_deref()
    }

    pub fn is_learnable(&self, i: usize, j: usize) -> bool {
        self.alpha_mask
            .as_ref()
            .is_none_or(|m| m[i * self.num_zones + j])
    }

    pub fn num_alpha(&self) -> usize {
        self.alpha_slots.len()
    }

    pub fn len(&self) -> usize {
        self.num_alpha() + 4 * self.num_zones
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn alpha_slots(&self) -> &[(usize, usize)] {
        &self.alpha_slots
    }

    pub fn alpha_index(&self, i: usize, j: usize) -> Option<usize> {
        self.alpha_slots.binary_search(&(i, j)).ok()
    }

    pub fn log_eta_c(&self, z: usize) -> usize {
        self.num_alpha() + z
    }

    pub fn log_eta_h(&self, z: usize) -> usize {
        self.num_alpha() + self.num_zones + z
    }

    pub fn log_r(&self, z: usize) -> usize {
        self.num_alpha() + 2 * self.num_zones + z
    }

    pub fn log_c(&self, z: usize) -> usize {
        self.num_alpha() + 3 * self.num_zones + z
    }
}

/// θ = (α, ηᶜ, ηʰ, R, C). α is Z×Z row-major; entries outside the layout's
/// mask are held at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaParams {
    pub layout: ParamLayout,
    pub alpha: Vec<f64>,
    pub log_eta_c: Vec<f64>,
    pub log_eta_h: Vec<f64>,
    pub log_r: Vec<f64>,
    pub log_c: Vec<f64>,
}

fn log_positive(v: &[f64], name: &'static str) -> Result<Vec<f64>, RcError> {
    v.iter()
        .map(|&x| {
            if x.is_finite() && x > 0.0 {
                Ok(x.ln())
            } else {
                Err(RcError::NotPositive(name))
            }
        })
        .collect()
}

impl ThetaParams {
    pub fn from_natural(
        layout: ParamLayout,
        alpha: Vec<f64>,
        eta_c: &[f64],
        eta_h: &[f64],
        r: &[f64],
        c: &[f64],
    ) -> Result<Self, RcError> {
        let z = layout.num_zones;
        if alpha.len() != z * z {
            return Err(RcError::Length {
                expected: z * z,
                got: alpha.len(),
            });
        }
        for v in [eta_c, eta_h, r, c] {
            if v.len() != z {
                return Err(RcError::Length {
                    expected: z,
                    got: v.len(),
                });
            }
        }
        let mut alpha = alpha;
        for i in 0..z {
            for j in 0..z {
                if !layout.is_learnable(i, j) {
                    alpha[i * z + j] = 0.0;
                }
            }
        }
        if let Some(k) = alpha.iter().position(|v| !v.is_finite()) {
            return Err(RcError::NonFinite(k));
        }
        Ok(Self {
            alpha,
            log_eta_c: log_positive(eta_c, "eta_c")?,
            log_eta_h: log_positive(eta_h, "eta_h")?,
            log_r: log_positive(r, "r")?,
            log_c: log_positive(c, "c")?,
            layout,
        })
    }

    /// Initializer used before pre-training: α = I/Δt plus uniform noise of
    /// half-width `noise/Δt` on learnable entries, η = 0.9, R = 5 °C/kW,
    /// C = 3 kWh/°C.
    pub fn initial<R: Rng>(layout: ParamLayout, dt: f64, noise: f64, rng: &mut R) -> Self {
        let z = layout.num_zones;
        let mut alpha = vec![0.0; z * z];
        for &(i, j) in layout.alpha_slots() {
            let base = if i == j { 1.0 / dt } else { 0.0 };
            let jitter = if noise > 0.0 {
                rng.random_range(-noise..noise) / dt
            } else {
                0.0
            };
            alpha[i * z + j] = base + jitter;
        }
        let fill = |v: f64| vec![v; z];
        Self::from_natural(layout, alpha, &fill(0.9), &fill(0.9), &fill(5.0), &fill(3.0))
            .expect("constant initializer is valid")
    }

    pub fn num_zones(&self) -> usize {
        self.layout.num_zones
    }

    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        self.alpha[i * self.num_zones() + j]
    }

    pub fn eta_c(&self) -> Vec<f64> {
        self.log_eta_c.iter().map(|v| v.exp()).collect()
    }

    pub fn eta_h(&self) -> Vec<f64> {
        self.log_eta_h.iter().map(|v| v.exp()).collect()
    }

    pub fn r(&self) -> Vec<f64> {
        self.log_r.iter().map(|v| v.exp()).collect()
    }

    pub fn c(&self) -> Vec<f64> {
        self.log_c.iter().map(|v| v.exp()).collect()
    }

    pub fn pack(&self) -> Vec<f64> {
        let z = self.num_zones();
        let mut out = Vec::with_capacity(self.layout.len());
        out.extend(self.layout.alpha_slots().iter().map(|&(i, j)| self.alpha[i * z + j]));
        out.extend_from_slice(&self.log_eta_c);
        out.extend_from_slice(&self.log_eta_h);
        out.extend_from_slice(&self.log_r);
        out.extend_from_slice(&self.log_c);
        out
    }

    pub fn unpack(layout: &ParamLayout, flat: &[f64]) -> Result<Self, RcError> {
        if flat.len() != layout.len() {
            return Err(RcError::Length {
                expected: layout.len(),
                got: flat.len(),
            });
        }
        if let Some(k) = flat.iter().position(|v| !v.is_finite()) {
            return Err(RcError::NonFinite(k));
        }
        let z = layout.num_zones;
        let na = layout.num_alpha();
        let mut alpha = vec![0.0; z * z];
        for (k, &(i, j)) in layout.alpha_slots().iter().enumerate() {
            alpha[i * z + j] = flat[k];
        }
        Ok(Self {
            layout: layout.clone(),
            alpha,
            log_eta_c: flat[na..na + z].to_vec(),
            log_eta_h: flat[na + z..na + 2 * z].to_vec(),
            log_r: flat[na + 2 * z..na + 3 * z].to_vec(),
            log_c: flat[na + 3 * z..na + 4 * z].to_vec(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.pack().iter().all(|v| v.is_finite())
    }

    pub fn coefficients(&self, dt: f64) -> RcCoefficients {
        let z = self.num_zones();
        let (eta_h, eta_c, r, c) = (self.eta_h(), self.eta_c(), self.r(), self.c());
        let k: Vec<f64> = (0..z).map(|i| dt / (r[i] * c[i])).collect();
        let mut a: Vec<f64> = self.alpha.iter().map(|v| dt * v).collect();
        for i in 0..z {
            a[i * z + i] -= k[i];
        }
        RcCoefficients {
            num_zones: z,
            a,
            g_h: (0..z).map(|i| dt * eta_h[i] / c[i]).collect(),
            g_c: (0..z).map(|i| dt * eta_c[i] / c[i]).collect(),
            k,
        }
    }
}

/// Step in affine form `τ' = A τ + g_h∘pʰ − g_c∘pᶜ + k τᵃᵐᵇ` with
/// `A = Δt α − diag(k)`, `g = Δt η / C` and `k = Δt / (R C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RcCoefficients {
    pub num_zones: usize,
    pub a: Vec<f64>,
    pub g_h: Vec<f64>,
    pub g_c: Vec<f64>,
    pub k: Vec<f64>,
}

fn check_len(v: &[f64], expected: usize) -> Result<(), RcError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(RcError::Length {
            expected,
            got: v.len(),
        })
    }
}

pub fn rc_step(
    theta: &ThetaParams,
    tau_in: &[f64],
    tau_amb: f64,
    p_h: &[f64],
    p_c: &[f64],
    dt: f64,
) -> Result<Vec<f64>, RcError> {
    let z = theta.num_zones();
    for v in [tau_in, p_h, p_c] {
        check_len(v, z)?;
    }
    let (eta_h, eta_c, r, c) = (theta.eta_h(), theta.eta_c(), theta.r(), theta.c());
    Ok((0..z)
        .map(|i| {
            let coupling: f64 = (0..z).map(|j| theta.alpha(i, j) * tau_in[j]).sum();
            let hvac = (eta_h[i] * p_h[i] - eta_c[i] * p_c[i]) / c[i];
            let envelope = (tau_amb - tau_in[i]) / (r[i] * c[i]);
            dt * (coupling + hvac + envelope)
        })
        .collect())
}

/// Applies [`rc_step`] T times; returns T + 1 states starting with `tau_0`.
pub fn rollout(
    theta: &ThetaParams,
    tau_0: &[f64],
    tau_amb: &[f64],
    p_h: &[Vec<f64>],
    p_c: &[Vec<f64>],
    dt: f64,
) -> Result<Vec<Vec<f64>>, RcError> {
    let t = tau_amb.len();
    if p_h.len() != t || p_c.len() != t {
        return Err(RcError::Length {
            expected: t,
            got: p_h.len().min(p_c.len()),
        });
    }
    let mut out = Vec::with_capacity(t + 1);
    out.push(tau_0.to_vec());
    for s in 0..t {
        let next = rc_step(theta, &out[s], tau_amb[s], &p_h[s], &p_c[s], dt)?;
        out.push(next);
    }
    Ok(out)
}

/// One scalar of [`RcCoefficients`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Coef {
    A(usize, usize),
    Gh(usize),
    Gc(usize),
    K(usize),
}

/// ∂ coefficient / ∂ flat parameter, one triplet per structural nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientJacobian {
    pub num_params: usize,
    pub entries: Vec<(Coef, usize, f64)>,
}

impl CoefficientJacobian {
    /// Lifts the coefficient Jacobian to QP data entries. `place` lists every
    /// QP data entry a coefficient appears in together with the sign it
    /// carries there.
    pub fn to_data_map<F>(&self, mut place: F) -> SparseLinearMap
    where
        F: FnMut(Coef, &mut dyn FnMut(DataEntry, f64)),
    {
        let mut map = SparseLinearMap::new(self.num_params);
        for &(coef, param, d) in &self.entries {
            place(coef, &mut |entry, sign| map.push(entry, param, sign * d));
        }
        map
    }
}

pub fn coefficient_jacobian(theta: &ThetaParams, dt: f64) -> CoefficientJacobian {
    let layout = &theta.layout;
    let z = theta.num_zones();
    let co = theta.coefficients(dt);
    let mut entries = Vec::new();
    for (k, &(i, j)) in layout.alpha_slots().iter().enumerate() {
        entries.push((Coef::A(i, j), k, dt));
    }
    for i in 0..z {
        entries.push((Coef::Gc(i), layout.log_eta_c(i), co.g_c[i]));
        entries.push((Coef::Gh(i), layout.log_eta_h(i), co.g_h[i]));
        entries.push((Coef::K(i), layout.log_r(i), -co.k[i]));
        entries.push((Coef::A(i, i), layout.log_r(i), co.k[i]));
        entries.push((Coef::Gh(i), layout.log_c(i), -co.g_h[i]));
        entries.push((Coef::Gc(i), layout.log_c(i), -co.g_c[i]));
        entries.push((Coef::K(i), layout.log_c(i), -co.k[i]));
        entries.push((Coef::A(i, i), layout.log_c(i), co.k[i]));
    }
    CoefficientJacobian {
        num_params: layout.len(),
        entries,
    }
}

impl RcCoefficients {
    pub fn get(&self, c: Coef) -> f64 {
        match c {
            Coef::A(i, j) => self.a[i * self.num_zones + j],
            Coef::Gh(i) => self.g_h[i],
            Coef::Gc(i) => self.g_c[i],
            Coef::K(i) => self.k[i],
        }
    }
}

// ---------------------------------------------------------------------------
// checkpoint format
//
//   rc-theta 1
//   log_space true
//   zones <Z>
//   floors <f0 zones comma-separated>;<f1 ...>;...
//   names <name> <name> ...
//   alpha_mask dense | <Z*Z of 0/1>
//   alpha <Z*Z values, row-major>
//   log_eta_c <Z values>
//   log_eta_h <Z values>
//   log_r <Z values>
//   log_c <Z values>
//
// Values use the shortest round-trip formatting, so load(save(θ)) == θ bit for
// bit. With `log_space false` the four positive vectors are stored as natural
// values under the keys eta_c, eta_h, r, c; such files are accepted on load
// but do not round-trip exactly.
// ---------------------------------------------------------------------------

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}

pub fn save_checkpoint(theta: &ThetaParams, topology: &ZoneTopology) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "rc-theta 1");
    let _ = writeln!(s, "log_space true");
    let _ = writeln!(s, "zones {}", theta.num_zones());
    let floors: Vec<String> = topology
        .floors
        .iter()
        .map(|f| f.iter().map(|z| z.to_string()).collect::<Vec<_>>().join(","))
        .collect();
    let _ = writeln!(s, "floors {}", floors.join(";"));
    let _ = writeln!(s, "names {}", topology.names.join(" "));
    match theta.layout.alpha_mask() {
        None => {
            let _ = writeln!(s, "alpha_mask dense");
        }
        Some(m) => {
            let bits: Vec<&str> = m.iter().map(|&b| if b { "1" } else { "0" }).collect();
            let _ = writeln!(s, "alpha_mask {}", bits.join(" "));
        }
    }
    let _ = writeln!(s, "alpha {}", join(&theta.alpha));
    let _ = writeln!(s, "log_eta_c {}", join(&theta.log_eta_c));
    let _ = writeln!(s, "log_eta_h {}", join(&theta.log_eta_h));
    let _ = writeln!(s, "log_r {}", join(&theta.log_r));
    let _ = writeln!(s, "log_c {}", join(&theta.log_c));
    s
}

pub fn load_checkpoint(text: &str) -> Result<(ThetaParams, ZoneTopology), RcError> {
    let bad = |m: String| RcError::Checkpoint(m);
    let mut kv = std::collections::BTreeMap::new();
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    if lines.next() != Some("rc-theta 1") {
        return Err(bad("missing `rc-theta 1` header".into()));
    }
    for line in lines {
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        if kv.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(bad(format!("duplicate key `{k}`")));
        }
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing key `{k}`")));
    let nums = |k: &str| -> Result<Vec<f64>, RcError> {
        get(k)?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad number `{t}` in `{k}`"))))
            .collect()
    };
    let log_space = match get("log_space")?.as_str() {
        "true" => true,
        "false" => false,
        o => return Err(bad(format!("log_space must be true or false, got `{o}`"))),
    };
    let z: usize = get("zones")?
        .parse()
        .map_err(|_| bad("zones must be an integer".into()))?;
    let floors: Vec<Vec<usize>> = get("floors")?
        .split(';')
        .map(|f| {
            f.split(',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse().map_err(|_| bad(format!("bad zone index `{t}`"))))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let names: Vec<String> = get("names")?.split_whitespace().map(String::from).collect();
    let topology = ZoneTopology {
        num_zones: z,
        floors,
        names,
    };
    topology.validate()?;
    let mask = get("alpha_mask")?;
    let layout = if mask == "dense" {
        ParamLayout::dense(z)
    } else {
        let bits: Vec<bool> = mask
            .split_whitespace()
            .map(|t| match t {
                "1" => Ok(true),
                "0" => Ok(false),
                o => Err(bad(format!("bad mask bit `{o}`"))),
            })
            .collect::<Result<_, _>>()?;
        ParamLayout::masked(z, &bits)?
    };
    let alpha = nums("alpha")?;
    check_len(&alpha, z * z)?;
    let theta = if log_space {
        let t = ThetaParams {
            layout,
            alpha,
            log_eta_c: nums("log_eta_c")?,
            log_eta_h: nums("log_eta_h")?,
            log_r: nums("log_r")?,
            log_c: nums("log_c")?,
        };
        for v in [&t.log_eta_c, &t.log_eta_h, &t.log_r, &t.log_c] {
            check_len(v, z)?;
        }
        if !t.is_finite() {
            return Err(bad("non-finite value".into()));
        }
        t
    } else {
        ThetaParams::from_natural(
            layout,
            alpha,
            &nums("eta_c")?,
            &nums("eta_h")?,
            &nums("r")?,
            &nums("c")?,
        )?
    };
    Ok((theta, topology))
}
