//! Total power consumption, the smoothed RF-chain indicator and its tangent.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::sca_precoder::PrecodingMatrix;
use crate::scalar::dbm_to_watts;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    /// Static BS circuit power `P_S`.
    pub static_w: f64,
    /// Power of one active RF chain.
    pub rf_active: f64,
    /// Power-amplifier efficiency `η`.
    pub efficiency: f64,
    /// Per-atom control power.
    pub meta: f64,
    pub controller: f64,
    /// Per-user terminal power.
    pub ue: f64,
    /// Transmit power from which a chain counts as active in reports.
    pub threshold: f64,
    /// Smoothing `ε` of the indicator surrogate.
    pub smoothing: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self {
            static_w: 4.5,
            rf_active: 0.4,
            efficiency: 0.5,
            meta: dbm_to_watts(10.0),
            controller: dbm_to_watts(25.0),
            ue: dbm_to_watts(20.0),
            threshold: 1e-4,
            smoothing: 1e-10,
        }
    }
}

impl PowerParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("static_w", self.static_w),
            ("rf_active", self.rf_active),
            ("meta", self.meta),
            ("controller", self.controller),
            ("ue", self.ue),
            ("threshold", self.threshold),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(name, format!("must be nonnegative, got {v}")));
            }
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::config("efficiency", "must lie in (0, 1]"));
        }
        if !(self.smoothing > 0.0 && self.smoothing < 1.0) {
            return Err(Error::config("smoothing", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// `N·M·P_meta + P_controller`.
    pub fn sim_power(&self, atoms: usize, layers: usize) -> f64 {
        (atoms * layers) as f64 * self.meta + self.controller
    }

    /// Everything that does not depend on the precoder.
    pub fn fixed_power(&self, atoms: usize, layers: usize, users: usize) -> f64 {
        self.static_w + self.sim_power(atoms, layers) + users as f64 * self.ue
    }
}

/// `g(x) = ln(1 + x/ε) / ln(1 + 1/ε)`.
pub fn smoothed_indicator<T: Float>(x: T, eps: T) -> Result<T> {
    if x < T::zero() {
        return Err(Error::Domain("indicator argument must be nonnegative".into()));
    }
    Ok((x / eps).ln_1p() / eps.recip().ln_1p())
}

/// Tangent of `g` at `x̄`, evaluated at `x`. Upper-bounds `g` by concavity.
pub fn indicator_taylor<T: Float>(x: T, xbar: T, eps: T) -> Result<T> {
    if x < T::zero() || xbar < T::zero() {
        return Err(Error::Domain("indicator arguments must be nonnegative".into()));
    }
    Ok(((xbar / eps).ln_1p() + (x - xbar) / (xbar + eps)) / eps.recip().ln_1p())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    /// Chain `l` is on iff its transmit power reaches the threshold.
    Hard,
    /// Chains are charged by the smoothed indicator.
    Smooth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerBreakdown {
    pub bs_static: f64,
    pub pa: f64,
    pub rf: f64,
    pub sim: f64,
    pub ue: f64,
    pub total: f64,
    pub antenna_powers: Vec<f64>,
    pub active: Vec<bool>,
}

impl PowerBreakdown {
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

pub fn power_breakdown(
    precoder: &PrecodingMatrix,
    params: &PowerParams,
    atoms: usize,
    layers: usize,
    activation: Activation,
) -> PowerBreakdown {
    let users = precoder.users();
    let antenna_powers = precoder.antenna_powers();
    let active: Vec<bool> = antenna_powers.iter().map(|&x| x >= params.threshold).collect();
    let pa = precoder.total_power() / params.efficiency;
    let chains = match activation {
        Activation::Hard => active.iter().filter(|&&a| a).count() as f64,
        Activation::Smooth => antenna_powers
            .iter()
            .map(|&x| smoothed_indicator(x.max(0.0), params.smoothing).expect("nonnegative power"))
            .sum(),
    };
    let rf = params.rf_active * chains;
    let sim = params.sim_power(atoms, layers);
    let ue = users as f64 * params.ue;
    let total = params.static_w + pa + rf + sim + ue;
    PowerBreakdown {
        bs_static: params.static_w,
        pa,
        rf,
        sim,
        ue,
        total,
        antenna_powers,
        active,
    }
}
