//! Projected gradient ascent of the sum rate over all SIM phases.
//!
//! Rates and gradients are computed by propagating the `K` precoded signals
//! forward through the stack and the `K` user channels backward, which costs
//! `O(M·N²·K)` per evaluation instead of forming the cascade.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, PhaseState};
use crate::metrics::sum_rate_from_sinr;
use crate::sca_precoder::PrecodingMatrix;
use crate::scalar::wrap_phase;
use crate::{CMatrix, CVector, Complex, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgaConfig {
    pub step0: f64,
    pub decay: f64,
    pub min_step: f64,
    pub max_iter: usize,
    pub restarts: usize,
    /// Armijo sufficient-increase constant `c`.
    pub armijo: f64,
    /// Stop once the relative sum-rate gain of an iteration falls below this.
    pub rel_tol: f64,
}

impl Default for PgaConfig {
    fn default() -> Self {
        Self {
            step0: 0.1,
            decay: 0.5,
            min_step: 1e-8,
            max_iter: 100,
            restarts: 4,
            armijo: 1e-4,
            rel_tol: 1e-4,
        }
    }
}

impl PgaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step0 > 0.0) {
            return Err(Error::config("pga_step0", "must be positive"));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::config("pga_decay", "must lie in (0, 1)"));
        }
        if self.restarts == 0 {
            return Err(Error::config("pga_restarts", "must be at least 1"));
        }
        Ok(())
    }
}

fn unit(phases: &[f64]) -> Vec<Complex> {
    phases.iter().map(|&p| Complex::from_polar(1.0, p)).collect()
}

/// Signals arriving at each layer before its phase shift: `fwd[m][j]`.
fn forward(channel: &ChannelRealization, phases: &[Vec<f64>], precoder: &PrecodingMatrix) -> Vec<Vec<CVector>> {
    let layers = phases.len();
    let mut out = Vec::with_capacity(layers);
    let mut cur: Vec<CVector> = (0..precoder.users()).map(|j| &channel.w1 * precoder.user(j)).collect();
    for m in 0..layers {
        if m > 0 {
            let v = unit(&phases[m - 1]);
            cur = cur
                .iter()
                .map(|c| {
                    let shifted = CVector::from_iterator(c.len(), c.iter().zip(&v).map(|(a, b)| a * b));
                    &channel.inter[m - 1] * shifted
                })
                .collect();
        }
        out.push(cur.clone());
    }
    out
}

/// Row weights seen from each layer's output: `bwd[m][k][n]` with
/// `h_kᴴ p_j = Σ_n bwd[m][k][n]·e^{jφ_m^n}·fwd[m][j][n]`.
fn backward(channel: &ChannelRealization, phases: &[Vec<f64>]) -> Vec<Vec<CVector>> {
    let layers = phases.len();
    let mut out = vec![Vec::new(); layers];
    let mut cur: Vec<CVector> = channel.users.iter().map(|h| h.map(|z| z.conj())).collect();
    for m in (0..layers).rev() {
        out[m] = cur.clone();
        if m > 0 {
            let v = unit(&phases[m]);
            let w = &channel.inter[m - 1];
            cur = cur
                .iter()
                .map(|a| {
                    let av = CVector::from_iterator(a.len(), a.iter().zip(&v).map(|(x, y)| x * y));
                    w.transpose() * av
                })
                .collect();
        }
    }
    out
}

/// `y[k][j] = h_kᴴ p_j` of the full cascade.
fn received(channel: &ChannelRealization, phases: &[Vec<f64>], fwd: &[Vec<CVector>]) -> Vec<Vec<Complex>> {
    let last = phases.len() - 1;
    let v = unit(&phases[last]);
    channel
        .users
        .iter()
        .map(|h| {
            fwd[last]
                .iter()
                .map(|c| (0..c.len()).map(|n| h[n].conj() * v[n] * c[n]).sum())
                .collect()
        })
        .collect()
}

fn sinrs_from_received(y: &[Vec<Complex>], noise: &[f64]) -> Vec<f64> {
    y.iter()
        .enumerate()
        .map(|(k, row)| {
            let interference: f64 = row.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, z)| z.norm_sqr()).sum();
            row[k].norm_sqr() / (interference + noise[k])
        })
        .collect()
}

/// Per-user SINR for raw phases, without forming the cascade.
pub fn fast_sinrs(channel: &ChannelRealization, phases: &[Vec<f64>], precoder: &PrecodingMatrix) -> Vec<f64> {
    let fwd = forward(channel, phases, precoder);
    sinrs_from_received(&received(channel, phases, &fwd), &channel.noise)
}

pub fn fast_sum_rate(channel: &ChannelRealization, phases: &[Vec<f64>], precoder: &PrecodingMatrix) -> f64 {
    sum_rate_from_sinr(&fast_sinrs(channel, phases, precoder))
}

/// Phase-ascent objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Utility {
    SumRate,
    /// `Σ_k ln γ_k`, which favors balanced SINRs.
    LogSinr,
}

impl Utility {
    pub fn value(self, sinr: &[f64]) -> f64 {
        match self {
            Utility::SumRate => sum_rate_from_sinr(sinr),
            Utility::LogSinr => sinr.iter().map(|g| g.max(f64::MIN_POSITIVE).ln()).sum(),
        }
    }
}

pub fn utility_gradient(
    channel: &ChannelRealization,
    phases: &[Vec<f64>],
    precoder: &PrecodingMatrix,
    utility: Utility,
) -> Vec<Vec<f64>> {
    let fwd = forward(channel, phases, precoder);
    let bwd = backward(channel, phases);
    let y = received(channel, phases, &fwd);
    let users = y.len();
    let total: Vec<f64> = (0..users)
        .map(|k| y[k].iter().map(|z| z.norm_sqr()).sum::<f64>() + channel.noise[k])
        .collect();
    let gamma = sinrs_from_received(&y, &channel.noise);
    // ∂U/∂φ = Σ_k ws_k·∂|y_kk|² − wi_k·Σ_{j≠k} ∂|y_kj|²
    let (ws, wi): (Vec<f64>, Vec<f64>) = (0..users)
        .map(|k| match utility {
            Utility::SumRate => {
                let chi = std::f64::consts::LOG2_E / total[k];
                (chi, chi * gamma[k])
            }
            Utility::LogSinr => {
                let signal = y[k][k].norm_sqr();
                let rest = total[k] - signal;
                (if signal > 0.0 { 1.0 / signal } else { 0.0 }, 1.0 / rest)
            }
        })
        .unzip();
    phases
        .iter()
        .enumerate()
        .map(|(m, layer)| {
            let v = unit(layer);
            (0..layer.len())
                .map(|n| {
                    let mut acc = 0.0;
                    for k in 0..users {
                        let a = bwd[m][k][n] * v[n];
                        // d|y_kj|²/dφ = −2·Im(conj(y_kj)·a·c_j)
                        let d = |j: usize| -2.0 * (y[k][j].conj() * a * fwd[m][j][n]).im;
                        let interference: f64 = (0..users).filter(|&j| j != k).map(d).sum();
                        acc += ws[k] * d(k) - wi[k] * interference;
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// `∂R_sum/∂φ_m^n` for every layer `m` and atom `n`.
pub fn sum_rate_gradient(channel: &ChannelRealization, phases: &[Vec<f64>], precoder: &PrecodingMatrix) -> Vec<Vec<f64>> {
    utility_gradient(channel, phases, precoder, Utility::SumRate)
}

/// `B_m = Φ_M W_M ⋯ Φ_{m+1} W_{m+1}` and `Q_m = W_m Φ_{m−1} ⋯ W₂ Φ₁`, so that
/// `G = B_m Φ_m Q_m` (0-based `m`).
pub fn prefix_suffix(channel: &ChannelRealization, phases: &PhaseState, m: usize) -> (CMatrix, CMatrix) {
    let n = channel.atoms();
    let layers = phases.layers();
    let diag = |l: usize| CMatrix::from_diagonal(&CVector::from_vec(phases.coefficients(l)));
    let mut b = CMatrix::identity(n, n);
    for l in (m + 1)..layers {
        b = diag(l) * &channel.inter[l - 1] * b;
    }
    let mut q = CMatrix::identity(n, n);
    for l in 0..m {
        q = &channel.inter[l] * diag(l) * q;
    }
    (b, q)
}

/// `φ ← wrap(φ + ξ·∇)`.
pub fn pga_step(phases: &[Vec<f64>], gradient: &[Vec<f64>], step: f64) -> Vec<Vec<f64>> {
    phases
        .iter()
        .zip(gradient)
        .map(|(p, g)| p.iter().zip(g).map(|(a, b)| wrap_phase(a + step * b)).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgaOutcome {
    pub phases: PhaseState,
    pub sum_rate: f64,
    /// Accepted iterations summed over restarts.
    pub iterations: usize,
    /// Sum-rate trace of every restart.
    pub traces: Vec<Vec<f64>>,
    pub best_restart: usize,
}

fn qos_ok(channel: &ChannelRealization, phases: &[Vec<f64>], precoder: &PrecodingMatrix, gamma_min: Option<f64>) -> bool {
    gamma_min.is_none_or(|g| fast_sinrs(channel, phases, precoder).iter().all(|&s| s >= g))
}

/// Best-of-restarts sum-rate ascent with Armijo backtracking.
///
/// `warm`, when given, is used as the first start. With `gamma_min` set,
/// iterates meeting every user's SINR target are preferred; the overall best
/// is returned only if none does.
pub fn run_pga(
    channel: &ChannelRealization,
    precoder: &PrecodingMatrix,
    config: &PgaConfig,
    seed: u64,
    warm: Option<&PhaseState>,
    gamma_min: Option<f64>,
) -> PgaOutcome {
    ascend(channel, precoder, config, seed, warm, gamma_min, Utility::SumRate)
}

/// [`run_pga`] for an arbitrary [`Utility`]; `traces` then hold utility values.
pub fn ascend(
    channel: &ChannelRealization,
    precoder: &PrecodingMatrix,
    config: &PgaConfig,
    seed: u64,
    warm: Option<&PhaseState>,
    gamma_min: Option<f64>,
    utility: Utility,
) -> PgaOutcome {
    let score = |phi: &[Vec<f64>]| utility.value(&fast_sinrs(channel, phi, precoder));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (layers, atoms) = (channel.layers(), channel.atoms());
    // Best iterate meeting the QoS targets, and best iterate overall.
    let mut best: Option<(f64, Vec<Vec<f64>>, usize)> = None;
    let mut best_any: Option<(f64, Vec<Vec<f64>>, usize)> = None;
    let mut traces = Vec::with_capacity(config.restarts);
    let mut iterations = 0;
    for restart in 0..config.restarts {
        let mut phi: Vec<Vec<f64>> = match (restart, warm) {
            (0, Some(w)) => w.phases().to_vec(),
            _ => (0..layers)
                .map(|_| (0..atoms).map(|_| std::f64::consts::TAU * rng.random::<f64>()).collect())
                .collect(),
        };
        let mut rate = score(&phi);
        let mut trace = vec![rate];
        type Best = Option<(f64, Vec<Vec<f64>>, usize)>;
        let consider = |rate: f64, phi: &Vec<Vec<f64>>, best: &mut Best, best_any: &mut Best| {
            if best_any.as_ref().is_none_or(|b| rate > b.0) {
                *best_any = Some((rate, phi.clone(), restart));
            }
            if best.as_ref().is_none_or(|b| rate > b.0) && qos_ok(channel, phi, precoder, gamma_min) {
                *best = Some((rate, phi.clone(), restart));
            }
        };
        consider(rate, &phi, &mut best, &mut best_any);
        for _ in 0..config.max_iter {
            let grad = utility_gradient(channel, &phi, precoder, utility);
            let norm2: f64 = grad.iter().flatten().map(|g| g * g).sum();
            if norm2 == 0.0 || !norm2.is_finite() {
                break;
            }
            let mut step = config.step0;
            let mut accepted = None;
            while step >= config.min_step {
                let cand = pga_step(&phi, &grad, step);
                let r = score(&cand);
                if r >= rate + config.armijo * step * norm2 {
                    accepted = Some((cand, r));
                    break;
                }
                step *= config.decay;
            }
            let Some((cand, r)) = accepted else { break };
            let gain = (r - rate) / rate.abs().max(f64::MIN_POSITIVE);
            phi = cand;
            rate = r;
            trace.push(rate);
            iterations += 1;
            consider(rate, &phi, &mut best, &mut best_any);
            if gain < config.rel_tol {
                break;
            }
        }
        traces.push(trace);
    }
    let (_, phases, best_restart) = best.or(best_any).expect("at least one restart");
    PgaOutcome {
        sum_rate: fast_sum_rate(channel, &phases, precoder),
        phases: PhaseState::new(phases, channel).expect("shapes from channel"),
        iterations,
        traces,
        best_restart,
    }
}
