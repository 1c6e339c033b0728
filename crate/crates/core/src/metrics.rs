//! SINR, rates, energy efficiency and the quadratic-transform objective.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::channel::{effective_channels, ChannelRealization, PhaseState};
use crate::power::PowerBreakdown;
use crate::sca_precoder::PrecodingMatrix;
use crate::{CVector, RMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    /// Per-user rates in bit/s/Hz.
    pub rates: Vec<f64>,
    pub sum_rate: f64,
    /// Bit per joule.
    pub ee: f64,
    pub bandwidth: f64,
}

/// `gains[(k, j)] = |h_kᴴ p_j|²`.
pub fn gains(channels: &[CVector], precoder: &PrecodingMatrix) -> RMatrix {
    let k = channels.len();
    RMatrix::from_fn(k, precoder.users(), |u, j| channels[u].dotc(&precoder.user(j)).norm_sqr())
}

pub fn sinrs_from_gains(gains: &RMatrix, noise: &[f64]) -> Vec<f64> {
    (0..gains.nrows())
        .map(|k| {
            let interference: f64 = (0..gains.ncols()).filter(|&j| j != k).map(|j| gains[(k, j)]).sum();
            gains[(k, k)] / (interference + noise[k])
        })
        .collect()
}

pub fn sinrs(channels: &[CVector], precoder: &PrecodingMatrix, noise: &[f64]) -> Vec<f64> {
    sinrs_from_gains(&gains(channels, precoder), noise)
}

pub fn sinr(channel: &ChannelRealization, phases: &PhaseState, precoder: &PrecodingMatrix, k: usize) -> f64 {
    sinrs(&effective_channels(channel, phases), precoder, &channel.noise)[k]
}

pub fn sum_rate_from_sinr(sinr: &[f64]) -> f64 {
    sinr.iter().map(|g| g.ln_1p()).sum::<f64>() / std::f64::consts::LN_2
}

pub fn sum_rate(channel: &ChannelRealization, phases: &PhaseState, precoder: &PrecodingMatrix) -> f64 {
    sum_rate_from_sinr(&sinrs(&effective_channels(channel, phases), precoder, &channel.noise))
}

pub fn energy_efficiency<T: Float>(sum_rate: T, total_power: T, bandwidth: T) -> T {
    bandwidth * sum_rate / total_power
}

pub fn rate_report(
    channel: &ChannelRealization,
    phases: &PhaseState,
    precoder: &PrecodingMatrix,
    power: &PowerBreakdown,
    bandwidth: f64,
) -> RateReport {
    let sinr = sinrs(&effective_channels(channel, phases), precoder, &channel.noise);
    let rates: Vec<f64> = sinr.iter().map(|g| g.ln_1p() / std::f64::consts::LN_2).collect();
    let sum_rate = rates.iter().sum();
    RateReport {
        ee: energy_efficiency(sum_rate, power.total, bandwidth),
        sinr,
        rates,
        sum_rate,
        bandwidth,
    }
}

/// `f = 2t·√R_sum − t²·P_total` (no bandwidth factor).
pub fn quadratic_objective<T: Float>(sum_rate: T, total_power: T, t: T) -> T {
    let two = T::one() + T::one();
    two * t * sum_rate.sqrt() - t * t * total_power
}

/// Maximizer of [`quadratic_objective`] over `t`.
pub fn update_t<T: Float>(sum_rate: T, total_power: T) -> T {
    sum_rate.sqrt() / total_power
}
