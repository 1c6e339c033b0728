//! The `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Powers take `dBm`, `W` or a bare
//! number of watts, SINR targets `dB` or a bare linear ratio, frequencies
//! `Hz`/`kHz`/`MHz`/`GHz`. A `sweep` line such as `sweep = m: 1, 2, 3, 5, 8`
//! adds one sweep; several sweep lines give one output file each.

use std::fmt::Write as _;
use std::path::Path;

use simee_core::scalar::{db_to_linear, dbm_to_watts};
use simee_core::{Scheme, SystemConfig};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unit {
    Count,
    Watts,
    Ratio,
    Hertz,
    Plain,
}

/// Canonical key, short aliases, unit.
const KEYS: &[(&str, &[&str], Unit)] = &[
    ("users", &["k"], Unit::Count),
    ("antennas", &["l"], Unit::Count),
    ("layers", &["m"], Unit::Count),
    ("atoms", &["n"], Unit::Count),
    ("carrier_hz", &["carrier", "f"], Unit::Hertz),
    ("bandwidth_hz", &["bandwidth", "bw"], Unit::Hertz),
    ("noise_dbm_per_hz", &["noise_density"], Unit::Plain),
    ("thickness_wavelengths", &["thickness"], Unit::Plain),
    ("p_max", &[], Unit::Watts),
    ("p_antenna_max", &["p_l_max"], Unit::Watts),
    ("p_static", &["p_s"], Unit::Watts),
    ("p_rf", &["p_rf_active"], Unit::Watts),
    ("efficiency", &["eta"], Unit::Plain),
    ("p_meta", &[], Unit::Watts),
    ("p_controller", &[], Unit::Watts),
    ("p_ue", &[], Unit::Watts),
    ("activation_threshold", &["threshold"], Unit::Watts),
    ("smoothing", &["epsilon"], Unit::Plain),
    ("gamma_min", &["qos"], Unit::Ratio),
    ("bs_height", &[], Unit::Plain),
    ("ue_height", &[], Unit::Plain),
    ("ue_distance", &[], Unit::Plain),
    ("ue_jitter", &[], Unit::Plain),
    ("path_loss_exponent", &["alpha"], Unit::Plain),
    ("sca_tol", &[], Unit::Plain),
    ("sca_max_iter", &[], Unit::Count),
    ("ao_tol", &[], Unit::Plain),
    ("ao_max_iter", &[], Unit::Count),
    ("sdp_eps_step", &[], Unit::Plain),
    ("pga_step0", &[], Unit::Plain),
    ("pga_decay", &[], Unit::Plain),
    ("pga_min_step", &[], Unit::Plain),
    ("pga_max_iter", &[], Unit::Count),
    ("pga_restarts", &[], Unit::Count),
    ("pga_armijo", &[], Unit::Plain),
    ("pga_rel_tol", &[], Unit::Plain),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    /// Canonical key.
    pub key: String,
    /// Values in SI units.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub trials: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub sweeps: Vec<Sweep>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            trials: 10,
            seed: 1,
            schemes: Scheme::ALL.to_vec(),
            sweeps: Vec::new(),
        }
    }
}

fn lookup(key: &str) -> Option<(&'static str, Unit)> {
    let key = key.trim().to_ascii_lowercase();
    KEYS.iter()
        .find(|(name, aliases, _)| *name == key || aliases.contains(&key.as_str()))
        .map(|&(name, _, unit)| (name, unit))
}

fn parse_value(key: &str, text: &str, unit: Unit) -> Result<f64, CliError> {
    let text = text.trim();
    let split = text
        .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
        .unwrap_or(text.len());
    let (number, suffix) = text.split_at(split);
    let bad = |reason: String| CliError::Config { field: key.to_string(), reason };
    let x: f64 = number
        .trim()
        .parse()
        .map_err(|_| bad(format!("cannot read a number from '{text}'")))?;
    let suffix = suffix.trim().to_ascii_lowercase();
    let value = match (unit, suffix.as_str()) {
        (_, "") => x,
        (Unit::Watts, "dbm") => dbm_to_watts(x),
        (Unit::Watts, "w") => x,
        (Unit::Watts, "mw") => x * 1e-3,
        (Unit::Ratio, "db") => db_to_linear(x),
        (Unit::Hertz, "hz") => x,
        (Unit::Hertz, "khz") => x * 1e3,
        (Unit::Hertz, "mhz") => x * 1e6,
        (Unit::Hertz, "ghz") => x * 1e9,
        _ => return Err(bad(format!("unit '{suffix}' does not apply"))),
    };
    if unit == Unit::Count && (value < 0.0 || value.fract() != 0.0) {
        return Err(bad(format!("expected a nonnegative integer, got '{text}'")));
    }
    Ok(value)
}

/// Sets the canonical `key` to `value` (SI units).
pub fn apply(system: &mut SystemConfig, key: &str, value: f64) -> Result<(), CliError> {
    let count = value as usize;
    match key {
        "users" => system.users = count,
        "antennas" => system.antennas = count,
        "layers" => system.layers = count,
        "atoms" => system.atoms = count,
        "carrier_hz" => system.carrier_hz = value,
        "bandwidth_hz" => system.bandwidth_hz = value,
        "noise_dbm_per_hz" => system.noise_dbm_per_hz = value,
        "thickness_wavelengths" => system.thickness_wavelengths = value,
        "p_max" => system.p_max = value,
        "p_antenna_max" => system.p_antenna_max = value,
        "p_static" => system.power.static_w = value,
        "p_rf" => system.power.rf_active = value,
        "efficiency" => system.power.efficiency = value,
        "p_meta" => system.power.meta = value,
        "p_controller" => system.power.controller = value,
        "p_ue" => system.power.ue = value,
        "activation_threshold" => system.power.threshold = value,
        "smoothing" => system.power.smoothing = value,
        "gamma_min" => system.gamma_min = value,
        "bs_height" => system.bs_height = value,
        "ue_height" => system.ue_height = value,
        "ue_distance" => system.ue_distance = value,
        "ue_jitter" => system.ue_jitter = value,
        "path_loss_exponent" => system.path_loss_exponent = value,
        "sca_tol" => system.sca_tol = value,
        "sca_max_iter" => system.sca_max_iter = count,
        "ao_tol" => system.ao_tol = value,
        "ao_max_iter" => system.ao_max_iter = count,
        "sdp_eps_step" => system.sdp_eps_step = value,
        "pga_step0" => system.pga.step0 = value,
        "pga_decay" => system.pga.decay = value,
        "pga_min_step" => system.pga.min_step = value,
        "pga_max_iter" => system.pga.max_iter = count,
        "pga_restarts" => system.pga.restarts = count,
        "pga_armijo" => system.pga.armijo = value,
        "pga_rel_tol" => system.pga.rel_tol = value,
        _ => return Err(CliError::UnknownKeys(vec![key.to_string()])),
    }
    Ok(())
}

fn get(system: &SystemConfig, key: &str) -> f64 {
    match key {
        "users" => system.users as f64,
        "antennas" => system.antennas as f64,
        "layers" => system.layers as f64,
        "atoms" => system.atoms as f64,
        "carrier_hz" => system.carrier_hz,
        "bandwidth_hz" => system.bandwidth_hz,
        "noise_dbm_per_hz" => system.noise_dbm_per_hz,
        "thickness_wavelengths" => system.thickness_wavelengths,
        "p_max" => system.p_max,
        "p_antenna_max" => system.p_antenna_max,
        "p_static" => system.power.static_w,
        "p_rf" => system.power.rf_active,
        "efficiency" => system.power.efficiency,
        "p_meta" => system.power.meta,
        "p_controller" => system.power.controller,
        "p_ue" => system.power.ue,
        "activation_threshold" => system.power.threshold,
        "smoothing" => system.power.smoothing,
        "gamma_min" => system.gamma_min,
        "bs_height" => system.bs_height,
        "ue_height" => system.ue_height,
        "ue_distance" => system.ue_distance,
        "ue_jitter" => system.ue_jitter,
        "path_loss_exponent" => system.path_loss_exponent,
        "sca_tol" => system.sca_tol,
        "sca_max_iter" => system.sca_max_iter as f64,
        "ao_tol" => system.ao_tol,
        "ao_max_iter" => system.ao_max_iter as f64,
        "sdp_eps_step" => system.sdp_eps_step,
        "pga_step0" => system.pga.step0,
        "pga_decay" => system.pga.decay,
        "pga_min_step" => system.pga.min_step,
        "pga_max_iter" => system.pga.max_iter as f64,
        "pga_restarts" => system.pga.restarts as f64,
        "pga_armijo" => system.pga.armijo,
        "pga_rel_tol" => system.pga.rel_tol,
        _ => f64::NAN,
    }
}

pub fn parse_schemes(text: &str) -> Result<Vec<Scheme>, CliError> {
    let schemes = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Scheme>())
        .collect::<Result<Vec<_>, _>>()?;
    if schemes.is_empty() {
        return Err(CliError::Config {
            field: "schemes".into(),
            reason: "no scheme given".into(),
        });
    }
    Ok(schemes)
}

fn parse_sweep(text: &str) -> Result<Sweep, CliError> {
    let bad = |reason: &str| CliError::Config {
        field: "sweep".into(),
        reason: reason.into(),
    };
    let (key, values) = text.split_once(':').ok_or_else(|| bad("expected 'key: v1, v2, ...'"))?;
    let (name, unit) = lookup(key).ok_or_else(|| CliError::UnknownKeys(vec![key.trim().to_string()]))?;
    let values = values
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| parse_value(name, v, unit))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(bad("sweep has no values"));
    }
    Ok(Sweep { key: name.to_string(), values })
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut run = RunConfig::default();
    let mut unknown = Vec::new();
    for (number, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
            field: format!("line {}", number + 1),
            reason: format!("expected 'key = value', got '{line}'"),
        })?;
        let key = key.trim().to_ascii_lowercase();
        match key.as_str() {
            "trials" => run.trials = parse_value("trials", value, Unit::Count)? as usize,
            "seed" => {
                run.seed = value.trim().parse().map_err(|_| CliError::Config {
                    field: "seed".into(),
                    reason: format!("'{}' is not an unsigned integer", value.trim()),
                })?
            }
            "schemes" => run.schemes = parse_schemes(value)?,
            "sweep" => run.sweeps.push(parse_sweep(value)?),
            _ => match lookup(&key) {
                Some((name, unit)) => apply(&mut run.system, name, parse_value(name, value, unit)?)?,
                None => unknown.push(key),
            },
        }
    }
    if !unknown.is_empty() {
        return Err(CliError::UnknownKeys(unknown));
    }
    validate(&run)?;
    Ok(run)
}

/// Checks the base configuration and every sweep point.
pub fn validate(run: &RunConfig) -> Result<(), CliError> {
    if run.trials == 0 {
        return Err(CliError::Config {
            field: "trials".into(),
            reason: "must be at least 1".into(),
        });
    }
    run.system.validate()?;
    for sweep in &run.sweeps {
        for &v in &sweep.values {
            let mut system = run.system.clone();
            apply(&mut system, &sweep.key, v)?;
            system.validate()?;
        }
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// The fully resolved configuration in the input format, SI units.
pub fn render(run: &RunConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# simee {}", env!("CARGO_PKG_VERSION"));
    for (name, _, _) in KEYS {
        let _ = writeln!(out, "{name} = {}", get(&run.system, name));
    }
    let _ = writeln!(out, "trials = {}", run.trials);
    let _ = writeln!(out, "seed = {}", run.seed);
    let names: Vec<&str> = run.schemes.iter().map(|s| s.name()).collect();
    let _ = writeln!(out, "schemes = {}", names.join(","));
    for sweep in &run.sweeps {
        let values: Vec<String> = sweep.values.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "sweep = {}: {}", sweep.key, values.join(", "));
    }
    out
}
