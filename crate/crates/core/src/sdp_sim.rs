//! Layer-by-layer semidefinite relaxation for the SIM phases.
//!
//! For layer `m` the received amplitude is linear in the lifted vector
//! `x = [e^{−jφ_m}; 1]`: `h_kᴴ p_j = xᴴ [H_{k,m}ᴴ p_j; 0]`, so every gain is
//! `Tr(V U_kj)` with `V = x xᴴ` and `U_kj` rank one.

use nalgebra::SymmetricEigen;
use simee_conic::{AffineExpr, Block, ConvexProgram, HermitianCoef, Status, Tolerances, Var};

use crate::channel::{ChannelRealization, PhaseState};
use crate::metrics::{sinrs_from_gains, sum_rate_from_sinr};
use crate::pga_sim::{fast_sinrs, prefix_suffix};
use crate::sca_precoder::PrecodingMatrix;
use crate::scalar::wrap_phase;
use crate::{CMatrix, CVector, Complex, Error, RMatrix, Result, SystemConfig};

/// `H_{k,m}ᴴ = diag(h_kᴴ B_m) · Q_m W₁` for every user (N×L each).
pub fn build_layer_channel(channel: &ChannelRealization, phases: &PhaseState, m: usize) -> Result<Vec<CMatrix>> {
    if m >= channel.layers() {
        return Err(Error::Shape(format!("layer {m} out of range 0..{}", channel.layers())));
    }
    let (b, q) = prefix_suffix(channel, phases, m);
    let qw = q * &channel.w1;
    Ok(channel
        .users
        .iter()
        .map(|h| {
            let row = h.adjoint() * &b;
            let mut out = qw.clone();
            for (n, mut r) in out.row_iter_mut().enumerate() {
                r *= row[n];
            }
            out
        })
        .collect())
}

/// `[e^{−jφ}; 1]`.
pub fn lifted_vector(layer: &[f64]) -> CVector {
    CVector::from_iterator(
        layer.len() + 1,
        layer.iter().map(|&p| Complex::from_polar(1.0, -p)).chain(std::iter::once(Complex::new(1.0, 0.0))),
    )
}

pub fn lift(layer: &[f64]) -> CMatrix {
    let x = lifted_vector(layer);
    &x * x.adjoint()
}

/// `u_kj = [H_{k,m}ᴴ p_j; 0]`, so that `U_kj = u_kj u_kjᴴ`.
pub fn lifting_vectors(layer_channels: &[CMatrix], precoder: &PrecodingMatrix) -> Vec<Vec<CVector>> {
    layer_channels
        .iter()
        .map(|h| {
            (0..precoder.users())
                .map(|j| {
                    let b = h * precoder.user(j);
                    CVector::from_iterator(b.len() + 1, b.iter().copied().chain(std::iter::once(Complex::new(0.0, 0.0))))
                })
                .collect()
        })
        .collect()
}

/// `Tr(V u uᴴ) = uᴴ V u`.
pub fn lifted_gain(v: &CMatrix, u: &CVector) -> f64 {
    u.dotc(&(v * u)).re
}

fn leading_eigenvector(v: &CMatrix) -> (CVector, Vec<f64>) {
    let eig = SymmetricEigen::new(v.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (eig.eigenvectors.column(order[0]).into_owned(), values)
}

/// Phases of the leading eigenvector of `V`, referenced to its last entry.
/// If that entry vanishes, the global phase is aligned with `previous`.
pub fn extract_phases(v: &CMatrix, previous: &[f64]) -> Vec<f64> {
    let (u, _) = leading_eigenvector(v);
    let n = u.len() - 1;
    let reference = u[n];
    if reference.norm() >= 1e-9 {
        return (0..n).map(|i| wrap_phase(-(u[i] / reference).arg())).collect();
    }
    let prev = lifted_vector(previous);
    let overlap: Complex = (0..n).map(|i| prev[i].conj() * u[i]).sum();
    let rot = if overlap.norm() > 0.0 { overlap.conj() / overlap.norm() } else { Complex::new(1.0, 0.0) };
    (0..n).map(|i| wrap_phase(-(u[i] * rot).arg())).collect()
}

/// `λ₂/λ₁` of a PSD matrix.
pub fn eigen_ratio(v: &CMatrix) -> f64 {
    let (_, values) = leading_eigenvector(v);
    if values.len() < 2 || values[0] <= 0.0 {
        return 0.0;
    }
    values[1].max(0.0) / values[0]
}

#[derive(Clone, Debug)]
pub struct SdpSubproblem {
    pub program: ConvexProgram,
    pub v: Block,
    pub mu: Vec<Var>,
    pub gamma: Vec<Var>,
    pub rate: Vec<Var>,
}

/// Relaxed layer problem around `(μ̄, γ̄)`.
///
/// `lifting[k][j]` must already be scaled by `1/σ_k`, making the noise term 1.
/// `cut` is `(ζ, ε)` for the eigen-cut `ζᴴVζ ≥ ε·Tr V`.
pub fn build_sdp_subproblem(
    lifting: &[Vec<CVector>],
    mu_bar: &[f64],
    gamma_bar: &[f64],
    gamma_min: f64,
    cut: Option<(&CVector, f64)>,
) -> SdpSubproblem {
    let users = lifting.len();
    let size = lifting[0][0].len();
    let mut prog = ConvexProgram::new();
    let v = prog.psd_block(size);
    for i in 0..size {
        prog.add_zero(AffineExpr::constant(-1.0).plus_block(v, HermitianCoef::diagonal_entry(size, i)));
    }
    let mut mu = Vec::with_capacity(users);
    let mut gamma = Vec::with_capacity(users);
    let mut rate = Vec::with_capacity(users);
    let mut objective = AffineExpr::constant(0.0);
    for k in 0..users {
        let (m, g, r) = (prog.var(format!("mu{k}")), prog.var(format!("gamma{k}")), prog.var(format!("rate{k}")));
        let gain = |u: &CVector| AffineExpr::constant(0.0).plus_block(v, HermitianCoef::rank_one(1.0, u.iter().copied().collect()));
        prog.add_squared_norm_epigraph(gain(&lifting[k][k]), vec![m.into()]);
        let mut lin = AffineExpr::var(m)
            .scaled(2.0 * mu_bar[k] / gamma_bar[k])
            .plus_var(g, -mu_bar[k] * mu_bar[k] / (gamma_bar[k] * gamma_bar[k]))
            .plus_constant(-1.0);
        for (j, u) in lifting[k].iter().enumerate() {
            if j != k {
                lin = lin.plus_block(v, HermitianCoef::rank_one(-1.0, u.iter().copied().collect()));
            }
        }
        prog.add_nonneg(lin);
        prog.add_nonneg(AffineExpr::var(g).plus_constant(-gamma_min));
        prog.add_nonneg(m.into());
        prog.add_nonneg(r.into());
        prog.add_log1p_hypograph(AffineExpr::var(r).scaled(std::f64::consts::LN_2), g.into());
        objective = objective.plus_var(r, 1.0);
        mu.push(m);
        gamma.push(g);
        rate.push(r);
    }
    if let Some((zeta, eps)) = cut {
        if eps > 0.0 {
            let mut coef = HermitianCoef::rank_one(1.0, zeta.iter().copied().collect());
            coef.merge(HermitianCoef::identity(-eps));
            prog.add_nonneg(AffineExpr::constant(0.0).plus_block(v, coef));
        }
    }
    prog.maximize(objective);
    SdpSubproblem { program: prog, v, mu, gamma, rate }
}

/// Relaxed solutions only seed the extraction, whose result is re-scored on
/// the true sum rate, so a looser gap suffices.
pub const SDP_TOLERANCES: Tolerances = Tolerances {
    gap: 5e-4,
    feasibility: 1e-7,
    max_newton_steps: 300,
};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerOutcome {
    pub phases: PhaseState,
    /// Relaxation rounds solved.
    pub rounds: usize,
    pub accepted: bool,
    pub sum_rate_before: f64,
    pub sum_rate_after: f64,
    /// `λ₂/λ₁` of the last relaxed solution.
    pub eigen_ratio: f64,
    /// Rounds whose solver status was not optimal.
    pub solver_events: usize,
}

/// ε schedule `0, step, 2·step, …` ending at 1, with 1 mapped to `1 − 1e−6`
/// so that the final cut keeps a strictly feasible interior.
pub fn eps_schedule(step: f64) -> Vec<f64> {
    let rounds = (1.0 / step).ceil() as usize;
    (0..=rounds).map(|i| (i as f64 * step).min(1.0 - 1e-6)).collect()
}

/// Optimizes layer `m` with the other layers and the precoder fixed.
/// The new phases are kept only if the true sum rate does not drop and
/// every user still meets `γ_min`.
pub fn optimize_layer(
    m: usize,
    channel: &ChannelRealization,
    phases: &PhaseState,
    precoder: &PrecodingMatrix,
    config: &SystemConfig,
) -> Result<LayerOutcome> {
    let hm = build_layer_channel(channel, phases, m)?;
    let mut lifting = lifting_vectors(&hm, precoder);
    for (k, row) in lifting.iter_mut().enumerate() {
        let s = 1.0 / channel.noise[k].sqrt();
        for u in row.iter_mut() {
            *u *= Complex::new(s, 0.0);
        }
    }
    let current = phases.layer(m).to_vec();
    let rate_of = |layer: &[f64]| {
        let mut all = phases.phases().to_vec();
        all[m] = layer.to_vec();
        let s = fast_sinrs(channel, &all, precoder);
        (sum_rate_from_sinr(&s), s.iter().all(|&g| g >= config.gamma_min))
    };
    let (r0, _) = rate_of(&current);
    let mut best = (r0, current.clone());
    let mut v = lift(&current);
    let expansion = |v: &CMatrix| {
        let g = RMatrix::from_fn(lifting.len(), lifting.len(), |k, j| lifted_gain(v, &lifting[k][j]).max(0.0));
        let gamma: Vec<f64> = sinrs_from_gains(&g, &vec![1.0; lifting.len()]).into_iter().map(|x| x.max(1e-12)).collect();
        let mu: Vec<f64> = (0..lifting.len()).map(|k| g[(k, k)].sqrt().max(1e-12)).collect();
        (mu, gamma)
    };
    let (mut mu_bar, mut gamma_bar) = expansion(&v);
    let mut rounds = 0;
    let mut solver_events = 0;
    let mut ratio = 0.0;
    for eps in eps_schedule(config.sdp_eps_step) {
        let (zeta, _) = leading_eigenvector(&v);
        let sub = build_sdp_subproblem(&lifting, &mu_bar, &gamma_bar, config.gamma_min, Some((&zeta, eps)));
        let sol = match simee_conic::solve(&sub.program, &SDP_TOLERANCES) {
            Ok(s) if s.status != Status::Infeasible => s,
            Ok(_) | Err(_) => {
                solver_events += 1;
                log::debug!("layer {m}: relaxation at eps {eps:.3} failed, keeping previous phases");
                break;
            }
        };
        if sol.status != Status::Optimal {
            solver_events += 1;
        }
        rounds += 1;
        v = sol.block(sub.v).clone();
        ratio = eigen_ratio(&v);
        mu_bar = sub.mu.iter().map(|&x| sol.value(x).max(1e-12)).collect();
        gamma_bar = sub.gamma.iter().map(|&x| sol.value(x).max(1e-12)).collect();
        let candidate = extract_phases(&v, &best.1);
        let (r, ok) = rate_of(&candidate);
        if ok && r > best.0 {
            best = (r, candidate);
        }
    }
    let accepted = best.0 > r0;
    let next = if accepted { phases.with_layer(m, best.1, channel)? } else { phases.clone() };
    Ok(LayerOutcome {
        phases: next,
        rounds,
        accepted,
        sum_rate_before: r0,
        sum_rate_after: best.0,
        eigen_ratio: ratio,
        solver_events,
    })
}
