//! Scenario parameters in SI units.

use serde::{Deserialize, Serialize};

use crate::pga_sim::PgaConfig;
use crate::power::PowerParams;
use crate::scalar::{db_to_linear, dbm_to_watts, noise_power, wavelength};
use crate::{Error, Result};

/// Every scalar of a scenario. Powers are watts, SINR targets linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub users: usize,
    pub antennas: usize,
    pub layers: usize,
    pub atoms: usize,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_dbm_per_hz: f64,
    /// SIM thickness in wavelengths.
    pub thickness_wavelengths: f64,

    pub p_max: f64,
    pub p_antenna_max: f64,
    pub power: PowerParams,
    pub gamma_min: f64,

    pub bs_height: f64,
    pub ue_height: f64,
    pub ue_distance: f64,
    pub ue_jitter: f64,
    pub path_loss_exponent: f64,

    pub sca_tol: f64,
    pub sca_max_iter: usize,
    pub ao_tol: f64,
    pub ao_max_iter: usize,
    /// Increment of the eigen-cut parameter between SDP rounds.
    pub sdp_eps_step: f64,
    pub pga: PgaConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            users: 4,
            antennas: 4,
            layers: 4,
            atoms: 49,
            carrier_hz: 28e9,
            bandwidth_hz: 10e6,
            noise_dbm_per_hz: -174.0,
            thickness_wavelengths: 5.0,
            p_max: dbm_to_watts(35.0),
            p_antenna_max: dbm_to_watts(30.0),
            power: PowerParams::default(),
            gamma_min: db_to_linear(0.0),
            bs_height: 15.0,
            ue_height: 1.65,
            ue_distance: 100.0,
            ue_jitter: 5.0,
            path_loss_exponent: 3.5,
            sca_tol: 1e-3,
            sca_max_iter: 30,
            ao_tol: 1e-3,
            ao_max_iter: 20,
            sdp_eps_step: 0.2,
            pga: PgaConfig::default(),
        }
    }
}

impl SystemConfig {
    pub fn wavelength(&self) -> f64 {
        wavelength(self.carrier_hz)
    }

    /// Noise power per user in watts.
    pub fn noise_power(&self) -> f64 {
        noise_power(self.noise_dbm_per_hz, self.bandwidth_hz)
    }

    pub fn atoms_per_side(&self) -> Option<usize> {
        let s = (self.atoms as f64).sqrt().round() as usize;
        (s * s == self.atoms).then_some(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms_per_side().is_none() {
            return Err(Error::config("atoms", format!("{} is not a perfect square", self.atoms)));
        }
        self.validate_numerics()
    }

    /// Everything except the square atom layout, which only the geometry needs.
    pub fn validate_numerics(&self) -> Result<()> {
        let positive_counts = [
            ("users", self.users),
            ("antennas", self.antennas),
            ("layers", self.layers),
            ("atoms", self.atoms),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.antennas < self.users {
            return Err(Error::config(
                "antennas",
                format!("{} antennas cannot serve {} users", self.antennas, self.users),
            ));
        }
        let positive = [
            ("carrier_hz", self.carrier_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("thickness_wavelengths", self.thickness_wavelengths),
            ("p_max", self.p_max),
            ("p_antenna_max", self.p_antenna_max),
            ("bs_height", self.bs_height),
            ("ue_height", self.ue_height),
            ("ue_distance", self.ue_distance),
            ("path_loss_exponent", self.path_loss_exponent),
            ("sca_tol", self.sca_tol),
            ("ao_tol", self.ao_tol),
            ("sdp_eps_step", self.sdp_eps_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, format!("must be positive and finite, got {v}")));
            }
        }
        if !(self.gamma_min >= 0.0) {
            return Err(Error::config("gamma_min", "must be nonnegative"));
        }
        if !(self.ue_jitter >= 0.0) {
            return Err(Error::config("ue_jitter", "must be nonnegative"));
        }
        if self.sca_max_iter == 0 || self.ao_max_iter == 0 {
            return Err(Error::config("max_iter", "iteration caps must be at least 1"));
        }
        self.power.validate()?;
        self.pga.validate()?;
        Ok(())
    }
}
