//! Digital precoding for fixed SIM phases: quadratic-transform objective with
//! successive convex approximation of the SINR and RF-chain terms.
//!
//! Inside the conic subproblem every channel is divided by its noise standard
//! deviation, so the noise term is 1 and `q` is scaled accordingly.

use serde::{Deserialize, Serialize};
use simee_conic::{AffineExpr, ComplexVars, ConvexProgram, Status, Tolerances, Var};

use crate::config::SystemConfig;
use crate::metrics::{sinrs, sum_rate_from_sinr, update_t};
use crate::power::{power_breakdown, Activation};
use crate::{CMatrix, CVector, Complex, Error, Result};

pub use crate::channel::effective_channels;

/// Column `k` is the precoder `p_k` of user `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecodingMatrix {
    p: CMatrix,
    pub iteration: usize,
}

impl PrecodingMatrix {
    pub fn new(p: CMatrix) -> Self {
        Self { p, iteration: 0 }
    }

    pub fn zeros(antennas: usize, users: usize) -> Self {
        Self::new(CMatrix::zeros(antennas, users))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.p
    }

    pub fn antennas(&self) -> usize {
        self.p.nrows()
    }

    pub fn users(&self) -> usize {
        self.p.ncols()
    }

    pub fn user(&self, k: usize) -> CVector {
        self.p.column(k).into_owned()
    }

    /// `Σ_k |e_lᵀ p_k|²` for every antenna `l`.
    pub fn antenna_powers(&self) -> Vec<f64> {
        self.p.row_iter().map(|r| r.iter().map(|z| z.norm_sqr()).sum()).collect()
    }

    pub fn total_power(&self) -> f64 {
        self.p.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            p: &self.p * Complex::new(a, 0.0),
            iteration: self.iteration,
        }
    }

    /// Rotates each `p_k` so that `h_kᴴ p_k` is real and nonnegative.
    /// Leaves every `|h_jᴴ p_k|` and all powers unchanged.
    pub fn aligned(&self, channels: &[CVector]) -> Self {
        let mut p = self.p.clone();
        for (k, h) in channels.iter().enumerate() {
            let s = h.dotc(&self.p.column(k));
            if s.norm() > 0.0 {
                let rot = (s / s.norm()).conj();
                for l in 0..p.nrows() {
                    p[(l, k)] *= rot;
                }
            }
        }
        Self {
            p,
            iteration: self.iteration,
        }
    }

    /// Checks total and per-antenna caps with an absolute slack.
    pub fn within_power(&self, p_max: f64, p_antenna_max: f64, slack: f64) -> bool {
        self.total_power() <= p_max + slack && self.antenna_powers().iter().all(|&x| x <= p_antenna_max + slack)
    }
}

/// Iteration state of the SCA loop.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaState {
    /// SINR of the previous iterate (expansion points of the QoS cones).
    pub gamma: Vec<f64>,
    pub q: Vec<f64>,
    /// Antenna powers at which the indicator is linearized.
    pub expansion: Vec<f64>,
    /// `R_sum / P_total` (smoothed) after every accepted iterate.
    pub trace: Vec<f64>,
    pub t: f64,
    pub iterations: usize,
}

/// `q_k = √γ_k / ‖[h_kᴴΔ_{−k}, σ_k]‖`.
pub fn update_q(gamma: &[f64], precoder: &PrecodingMatrix, channels: &[CVector], noise: &[f64]) -> Vec<f64> {
    channels
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let interference: f64 = (0..precoder.users())
                .filter(|&j| j != k)
                .map(|j| h.dotc(&precoder.user(j)).norm_sqr())
                .sum();
            gamma[k].max(0.0).sqrt() / (interference + noise[k]).sqrt()
        })
        .collect()
}

/// Smoothed-power quadratic-transform ratio `R_sum / P_total`.
pub fn smooth_ratio(channels: &[CVector], noise: &[f64], precoder: &PrecodingMatrix, config: &SystemConfig) -> (f64, f64) {
    let rate = sum_rate_from_sinr(&sinrs(channels, precoder, noise));
    let power = power_breakdown(precoder, &config.power, config.atoms, config.layers, Activation::Smooth).total;
    (rate, power)
}

/// Handles into a built subproblem.
#[derive(Clone, Debug)]
pub struct ScaSubproblem {
    pub program: ConvexProgram,
    pub p: Vec<ComplexVars>,
    pub gamma: Vec<Var>,
    pub rate: Vec<Var>,
    /// Epigraph of the linearized power (without `constant`).
    pub z: Var,
    /// Precoder-independent part of the linearized power.
    pub constant: f64,
    pub t: f64,
}

impl ScaSubproblem {
    pub fn precoder(&self, scalars: &[f64]) -> PrecodingMatrix {
        let l = self.p.first().map_or(0, ComplexVars::len);
        let mut m = CMatrix::zeros(l, self.p.len());
        for (k, v) in self.p.iter().enumerate() {
            for (i, z) in v.values(scalars).into_iter().enumerate() {
                m[(i, k)] = z;
            }
        }
        PrecodingMatrix::new(m)
    }

    /// Surrogate objective `2t·√(Σ s_k) − t²·(z + constant)` at a solution.
    pub fn objective(&self, solver_objective: f64) -> f64 {
        solver_objective - self.t * self.t * self.constant
    }
}

/// Linearized RF-chain weights `a_l` and the constant of the indicator tangent.
fn linearized_power(expansion: &[f64], config: &SystemConfig) -> (Vec<f64>, f64) {
    let pw = &config.power;
    let denom = pw.smoothing.recip().ln_1p();
    let a = expansion
        .iter()
        .map(|&x| 1.0 / pw.efficiency + pw.rf_active / ((x + pw.smoothing) * denom))
        .collect();
    let rf_const: f64 = expansion
        .iter()
        .map(|&x| ((x / pw.smoothing).ln_1p() - x / (x + pw.smoothing)) / denom)
        .sum();
    let constant = pw.fixed_power(config.atoms, config.layers, config.users) + pw.rf_active * rf_const;
    (a, constant)
}

/// QoS cone with unit noise: `‖[h̃ᴴp_j]_{j≠k}, 1‖² ≤ (2Re{h̃ᴴp_k} − γ_k/q)/q`.
fn add_qos_cone(prog: &mut ConvexProgram, p: &[ComplexVars], h: &CVector, k: usize, gamma: Var, q: f64) {
    let hs: Vec<Complex> = h.iter().cloned().collect();
    let (re_k, _) = p[k].inner_with(&hs);
    let bound = (re_k * 2.0 - AffineExpr::var(gamma) * (1.0 / q)) * (1.0 / q);
    let mut entries = Vec::with_capacity(2 * p.len() - 1);
    for (j, pj) in p.iter().enumerate() {
        if j == k {
            continue;
        }
        let (re, im) = pj.inner_with(&hs);
        entries.push(re);
        entries.push(im);
    }
    entries.push(AffineExpr::constant(1.0));
    prog.add_squared_norm_epigraph(bound, entries);
}

fn add_power_caps(prog: &mut ConvexProgram, p: &[ComplexVars], config: &SystemConfig) {
    let all: Vec<AffineExpr> = p.iter().flat_map(|v| v.components(1.0)).collect();
    prog.add_soc(AffineExpr::constant(config.p_max.sqrt()), all);
    let antennas = p.first().map_or(0, ComplexVars::len);
    for l in 0..antennas {
        let entries = p
            .iter()
            .flat_map(|v| [AffineExpr::var(v.re[l]), AffineExpr::var(v.im[l])])
            .collect();
        prog.add_soc(AffineExpr::constant(config.p_antenna_max.sqrt()), entries);
    }
}

/// Builds the convex subproblem around the previous iterate `previous`.
///
/// `channels` and `state.q` are in physical units; normalization by the
/// noise happens here.
pub fn build_sca_subproblem(
    channels: &[CVector],
    noise: &[f64],
    t: f64,
    state: &ScaState,
    previous: &PrecodingMatrix,
    config: &SystemConfig,
) -> Result<ScaSubproblem> {
    let users = channels.len();
    let antennas = previous.antennas();
    if users > antennas {
        return Err(Error::config("users", format!("{users} users exceed {antennas} antennas")));
    }
    let mut prog = ConvexProgram::new();
    let p: Vec<ComplexVars> = (0..users).map(|k| prog.complex_vector(&format!("p{k}"), antennas)).collect();
    let gamma: Vec<Var> = (0..users).map(|k| prog.var(format!("gamma{k}"))).collect();
    let rate: Vec<Var> = (0..users).map(|k| prog.var(format!("rate{k}"))).collect();
    let r = prog.var("sqrt_rate");
    let z = prog.var("power");

    for k in 0..users {
        // rate_k · ln 2 ≤ ln(1 + γ_k)
        prog.add_log1p_hypograph(AffineExpr::var(rate[k]) * std::f64::consts::LN_2, gamma[k].into());
        prog.add_nonneg(AffineExpr::var(gamma[k]).plus_constant(-config.gamma_min));
        prog.add_nonneg(rate[k].into());

        let sigma = noise[k].sqrt();
        let h = channels[k].map(|v| v / sigma);
        let hs: Vec<Complex> = h.iter().cloned().collect();
        let (re, im) = p[k].inner_with(&hs);
        prog.add_zero(im);
        prog.add_nonneg(re);
        add_qos_cone(&mut prog, &p, &h, k, gamma[k], state.q[k] * sigma);
    }
    let rate_sum = rate.iter().fold(AffineExpr::default(), |acc, &v| acc + v.into());
    prog.add_sqrt_hypograph(r.into(), rate_sum);

    let (a, constant) = linearized_power(&state.expansion, config);
    let entries = p
        .iter()
        .flat_map(|v| {
            (0..antennas).flat_map(|l| {
                let w = a[l].sqrt();
                [AffineExpr::var(v.re[l]) * w, AffineExpr::var(v.im[l]) * w]
            })
        })
        .collect();
    prog.add_squared_norm_epigraph(z.into(), entries);
    let z_cap = 2.0 * a.iter().cloned().fold(0.0, f64::max) * config.p_max + 1.0;
    prog.add_nonneg(AffineExpr::constant(z_cap) - z.into());
    prog.add_nonneg(r.into());
    add_power_caps(&mut prog, &p, config);

    // Keep at least K chains on: tangent lower bound of |p_l|² on the K
    // strongest antennas of the previous iterate.
    let mut order: Vec<usize> = (0..antennas).collect();
    let xbar = previous.antenna_powers();
    order.sort_by(|&i, &j| xbar[j].total_cmp(&xbar[i]));
    for &l in order.iter().take(users) {
        if xbar[l] <= config.power.threshold {
            continue;
        }
        let mut e = AffineExpr::constant(-xbar[l] - config.power.threshold);
        for (k, v) in p.iter().enumerate() {
            let pb = previous.matrix()[(l, k)];
            e = e.plus_var(v.re[l], 2.0 * pb.re).plus_var(v.im[l], 2.0 * pb.im);
        }
        prog.add_nonneg(e);
    }

    prog.maximize(AffineExpr::var(r) * (2.0 * t) - AffineExpr::var(z) * (t * t));
    Ok(ScaSubproblem {
        program: prog,
        p,
        gamma,
        rate,
        z,
        constant,
        t,
    })
}

fn qos_met(channels: &[CVector], noise: &[f64], p: &PrecodingMatrix, gamma_min: f64) -> bool {
    sinrs(channels, p, noise).iter().all(|&g| g >= gamma_min)
}

/// Feasible starting precoder: maximum-ratio transmission at half the power
/// budget, rescaled for QoS, with a power-minimization fallback.
pub fn initial_precoder(channels: &[CVector], noise: &[f64], config: &SystemConfig) -> Result<PrecodingMatrix> {
    let users = channels.len();
    let antennas = config.antennas;
    if users > antennas {
        return Err(Error::config("users", format!("{users} users exceed {antennas} antennas")));
    }
    let budget = config.p_max.min(antennas as f64 * config.p_antenna_max) / 2.0;
    let mut m = CMatrix::zeros(antennas, users);
    for (k, h) in channels.iter().enumerate() {
        let n = h.norm();
        for l in 0..antennas {
            m[(l, k)] = if n > 0.0 {
                h[l] / n
            } else if l == k {
                Complex::new(1.0, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
    }
    let unit = PrecodingMatrix::new(m).scaled((budget / users as f64).sqrt());
    let headroom = (config.p_max / unit.total_power()).min(
        unit.antenna_powers()
            .iter()
            .map(|&x| if x > 0.0 { config.p_antenna_max / x } else { f64::INFINITY })
            .fold(f64::INFINITY, f64::min),
    );
    // Largest amplitude scale that respects both caps.
    let amax = headroom.sqrt() * (1.0 - 1e-9);
    let start = if amax < 1.0 { unit.scaled(amax) } else { unit.clone() };
    if qos_met(channels, noise, &start, config.gamma_min) {
        return Ok(start.aligned(channels));
    }
    if amax > 1.0 && qos_met(channels, noise, &unit.scaled(amax), config.gamma_min) {
        let (mut lo, mut hi) = (1.0, amax);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if qos_met(channels, noise, &unit.scaled(mid), config.gamma_min) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        return Ok(unit.scaled(hi).aligned(channels));
    }
    power_minimizing_precoder(channels, noise, config, config.gamma_min * (1.0 + 1e-3))
}

/// Minimum-power precoder meeting `γ_k ≥ target` exactly (convex SOCP).
pub fn power_minimizing_precoder(
    channels: &[CVector],
    noise: &[f64],
    config: &SystemConfig,
    target: f64,
) -> Result<PrecodingMatrix> {
    let users = channels.len();
    let antennas = config.antennas;
    let mut prog = ConvexProgram::new();
    let p: Vec<ComplexVars> = (0..users).map(|k| prog.complex_vector(&format!("p{k}"), antennas)).collect();
    let z = prog.var("power");
    let root = target.sqrt();
    for k in 0..users {
        let sigma = noise[k].sqrt();
        let hs: Vec<Complex> = channels[k].iter().map(|v| v / sigma).collect();
        let (re, im) = p[k].inner_with(&hs);
        prog.add_zero(im);
        let mut entries = Vec::new();
        for (j, pj) in p.iter().enumerate() {
            if j != k {
                let (a, b) = pj.inner_with(&hs);
                entries.push(a * root);
                entries.push(b * root);
            }
        }
        entries.push(AffineExpr::constant(root));
        prog.add_soc(re, entries);
    }
    let all: Vec<AffineExpr> = p.iter().flat_map(|v| v.components(1.0)).collect();
    prog.add_squared_norm_epigraph(z.into(), all);
    add_power_caps(&mut prog, &p, config);
    prog.minimize(z.into());
    let sol = simee_conic::solve(&prog, &Tolerances::default()).map_err(|e| Error::Solver(e.to_string()))?;
    if sol.status == Status::Infeasible {
        return Err(Error::Infeasible(format!(
            "no precoder reaches SINR {target:.4} for every user within the power caps"
        )));
    }
    let mut m = CMatrix::zeros(antennas, users);
    for (k, v) in p.iter().enumerate() {
        for (l, zv) in v.values(&sol.scalars).into_iter().enumerate() {
            m[(l, k)] = zv;
        }
    }
    let pre = PrecodingMatrix::new(m).aligned(channels);
    if !qos_met(channels, noise, &pre, config.gamma_min) {
        return Err(Error::Infeasible(format!(
            "power minimization ended with status {:?} without meeting the QoS targets",
            sol.status
        )));
    }
    Ok(pre)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaStop {
    Converged,
    MaxIterations,
    /// The subproblem solution did not improve the true ratio and was discarded.
    NoImprovement,
    SolverFailure,
}

/// Alternates `t` updates with SCA subproblem solves until the smoothed
/// `R_sum / P_total` settles.
pub fn run_sca(
    channels: &[CVector],
    noise: &[f64],
    config: &SystemConfig,
    init: &PrecodingMatrix,
) -> Result<(PrecodingMatrix, ScaState, ScaStop)> {
    if channels.len() > config.antennas {
        return Err(Error::config("users", "more users than antennas"));
    }
    if !qos_met(channels, noise, init, config.gamma_min) {
        return Err(Error::Infeasible("initial precoder violates the QoS targets".into()));
    }
    let mut p = init.aligned(channels);
    let (rate, power) = smooth_ratio(channels, noise, &p, config);
    let mut state = ScaState {
        trace: vec![rate / power],
        t: update_t(rate, power),
        ..ScaState::default()
    };
    let mut stop = ScaStop::MaxIterations;
    for it in 1..=config.sca_max_iter {
        let (rate, power) = smooth_ratio(channels, noise, &p, config);
        state.gamma = sinrs(channels, &p, noise);
        state.q = update_q(&state.gamma, &p, channels, noise);
        state.expansion = p.antenna_powers();
        state.t = update_t(rate, power);
        let sub = build_sca_subproblem(channels, noise, state.t, &state, &p, config)?;
        let sol = match simee_conic::solve(&sub.program, &Tolerances::default()) {
            Ok(s) if s.status != Status::Infeasible => s,
            _ => {
                stop = ScaStop::SolverFailure;
                break;
            }
        };
        state.iterations = it;
        let mut candidate = sub.precoder(&sol.scalars).aligned(channels);
        candidate.iteration = it;
        let feasible = candidate.within_power(config.p_max, config.p_antenna_max, 1e-9)
            && qos_met(channels, noise, &candidate, config.gamma_min);
        let (new_rate, new_power) = smooth_ratio(channels, noise, &candidate, config);
        let previous = *state.trace.last().expect("trace starts non-empty");
        let value = new_rate / new_power;
        if !feasible || value < previous {
            stop = ScaStop::NoImprovement;
            break;
        }
        p = candidate;
        state.trace.push(value);
        if (value - previous).abs() <= config.sca_tol * value.abs() {
            stop = ScaStop::Converged;
            break;
        }
    }
    let (rate, power) = smooth_ratio(channels, noise, &p, config);
    state.t = update_t(rate, power);
    Ok((p, state, stop))
}
