//! Alternating optimization of precoder and SIM phases, plus the baselines.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{effective_channels, ChannelRealization, PhaseState};
use crate::metrics::{rate_report, update_t, RateReport};
use crate::pga_sim::{ascend, run_pga, PgaConfig, Utility};
use crate::power::{power_breakdown, Activation, PowerBreakdown};
use crate::sca_precoder::{initial_precoder, run_sca, PrecodingMatrix};
use crate::sdp_sim::optimize_layer;
use crate::{CMatrix, Complex, Error, Result, SystemConfig};

/// Relative slack below which an EE decrease counts as a monotonicity violation.
pub const MONOTONE_SLACK: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    HybridSdp,
    HybridPga,
    DigitalPre,
    WaveSim,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::HybridSdp, Scheme::HybridPga, Scheme::DigitalPre, Scheme::WaveSim];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::HybridSdp => "hybrid-sdp",
            Scheme::HybridPga => "hybrid-pga",
            Scheme::DigitalPre => "digital-pre",
            Scheme::WaveSim => "wave-sim",
        }
    }

    pub fn phase_method(self) -> &'static str {
        match self {
            Scheme::HybridSdp => "sdp",
            Scheme::HybridPga | Scheme::WaveSim => "pga",
            Scheme::DigitalPre => "none",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s.trim())
            .ok_or_else(|| Error::config("schemes", format!("unknown scheme '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Outer AO rounds.
    pub ao: usize,
    /// SCA subproblems solved.
    pub bs: usize,
    /// SDP rounds or PGA iterations.
    pub phase: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub scheme: Scheme,
    /// Hard-count EE after initialization and after every outer round.
    pub ee_trace: Vec<f64>,
    pub precoder: PrecodingMatrix,
    pub phases: PhaseState,
    pub rates: RateReport,
    pub power: PowerBreakdown,
    pub termination: Termination,
    pub wall_clock: f64,
    pub counters: Counters,
    /// Block updates discarded because they lowered the guarded metric.
    pub rejections: usize,
    /// Outer rounds whose EE fell by more than [`MONOTONE_SLACK`].
    pub violations: usize,
    pub t: f64,
}

/// SplitMix64 finalizer applied to `a` combined with `b`.
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn check_dimensions(channel: &ChannelRealization, config: &SystemConfig) -> Result<()> {
    config.validate_numerics()?;
    let got = (channel.users(), channel.antennas(), channel.layers(), channel.atoms());
    let want = (config.users, config.antennas, config.layers, config.atoms);
    if got != want {
        return Err(Error::Shape(format!(
            "channel has (K, L, M, N) = {got:?} but the configuration says {want:?}"
        )));
    }
    Ok(())
}

fn hard_power(p: &PrecodingMatrix, config: &SystemConfig) -> PowerBreakdown {
    power_breakdown(p, &config.power, config.atoms, config.layers, Activation::Hard)
}

fn evaluate(channel: &ChannelRealization, phases: &PhaseState, p: &PrecodingMatrix, config: &SystemConfig) -> (RateReport, PowerBreakdown) {
    let power = hard_power(p, config);
    (rate_report(channel, phases, p, &power, config.bandwidth_hz), power)
}

fn qos_met(report: &RateReport, gamma_min: f64) -> bool {
    report.sinr.iter().all(|&g| g >= gamma_min)
}

/// Initial phases shared by every scheme for a given seed.
pub fn initial_phases(channel: &ChannelRealization, seed: u64) -> PhaseState {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    PhaseState::random(channel, &mut rng)
}

fn one_stream_per_antenna(channel: &ChannelRealization, config: &SystemConfig) -> PrecodingMatrix {
    let users = channel.users();
    let amplitude = (config.p_max / users as f64).min(config.p_antenna_max).sqrt();
    let mut m = CMatrix::zeros(channel.antennas(), users);
    for k in 0..users {
        m[(k, k)] = Complex::new(amplitude, 0.0);
    }
    PrecodingMatrix::new(m)
}

/// Ascent chunks tried by [`feasible_start`] before giving up.
pub const RESTORATION_CHUNKS: usize = 10;

/// Random phases and a QoS-feasible precoder for them. When the random
/// phases admit no feasible precoder, the phases are steered by ascent on
/// `Σ ln γ_k` under a one-stream-per-antenna precoder, retrying the precoder
/// after every chunk of iterations.
pub fn feasible_start(channel: &ChannelRealization, config: &SystemConfig, seed: u64) -> Result<(PhaseState, PrecodingMatrix, usize)> {
    let mut phases = initial_phases(channel, seed);
    let mut err = match initial_precoder(&effective_channels(channel, &phases), &channel.noise, config) {
        Ok(p) => return Ok((phases, p, 0)),
        Err(e @ Error::Infeasible(_)) => e,
        Err(e) => return Err(e),
    };
    let fixed = one_stream_per_antenna(channel, config);
    let chunk = PgaConfig {
        max_iter: 200,
        restarts: 1,
        rel_tol: 0.0,
        ..config.pga
    };
    let mut iterations = 0;
    for round in 0..RESTORATION_CHUNKS {
        let out = ascend(channel, &fixed, &chunk, derive_seed(seed, round as u64), Some(&phases), None, Utility::LogSinr);
        iterations += out.iterations;
        let stalled = out.iterations == 0;
        phases = out.phases;
        match initial_precoder(&effective_channels(channel, &phases), &channel.noise, config) {
            Ok(p) => return Ok((phases, p, iterations)),
            Err(e @ Error::Infeasible(_)) => err = e,
            Err(e) => return Err(e),
        }
        if stalled {
            break;
        }
    }
    Err(err)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PhaseBlock {
    Sdp,
    Pga,
    Frozen,
}

fn alternate(
    scheme: Scheme,
    block: PhaseBlock,
    channel: &ChannelRealization,
    config: &SystemConfig,
    seed: u64,
) -> Result<SolveReport> {
    check_dimensions(channel, config)?;
    let start = Instant::now();
    let noise = &channel.noise;
    let (mut phases, mut p, restoration) = match block {
        PhaseBlock::Frozen => {
            let phases = initial_phases(channel, seed);
            let p = initial_precoder(&effective_channels(channel, &phases), noise, config)?;
            (phases, p, 0)
        }
        _ => feasible_start(channel, config, seed)?,
    };
    let (mut rates, _) = evaluate(channel, &phases, &p, config);
    let mut ee = rates.ee;
    let mut trace = vec![ee];
    let mut counters = Counters { phase: restoration, ..Counters::default() };
    let (mut rejections, mut violations) = (0, 0);
    let mut termination = Termination::MaxIterations;
    for round in 1..=config.ao_max_iter {
        counters.ao = round;
        let before = ee;

        let (candidate, state, _) = run_sca(&effective_channels(channel, &phases), noise, config, &p)?;
        counters.bs += state.iterations;
        let (r, _) = evaluate(channel, &phases, &candidate, config);
        if r.ee >= ee && qos_met(&r, config.gamma_min) {
            p = candidate;
            rates = r;
            ee = rates.ee;
        } else {
            rejections += 1;
        }

        let proposal = match block {
            PhaseBlock::Frozen => None,
            PhaseBlock::Sdp => {
                let mut next = phases.clone();
                for m in 0..channel.layers() {
                    let out = optimize_layer(m, channel, &next, &p, config)?;
                    counters.phase += out.rounds;
                    next = out.phases;
                }
                Some(next)
            }
            PhaseBlock::Pga => {
                let out = run_pga(channel, &p, &config.pga, derive_seed(seed, round as u64), Some(&phases), Some(config.gamma_min));
                counters.phase += out.iterations;
                Some(out.phases)
            }
        };
        if let Some(next) = proposal {
            let (r, _) = evaluate(channel, &next, &p, config);
            if r.sum_rate >= rates.sum_rate && qos_met(&r, config.gamma_min) {
                if r.sum_rate > rates.sum_rate {
                    phases = next;
                    rates = r;
                    ee = rates.ee;
                }
            } else {
                rejections += 1;
            }
        }

        if ee < before * (1.0 - MONOTONE_SLACK) {
            violations += 1;
        }
        trace.push(ee);
        if (ee - before).abs() <= config.ao_tol * ee.abs() {
            termination = Termination::Converged;
            break;
        }
    }
    let (rates, power) = evaluate(channel, &phases, &p, config);
    Ok(SolveReport {
        scheme,
        ee_trace: trace,
        t: update_t(rates.sum_rate, power.total),
        precoder: p,
        phases,
        rates,
        power,
        termination,
        wall_clock: start.elapsed().as_secs_f64(),
        counters,
        rejections,
        violations,
    })
}

/// Joint design with SCA precoding and SDP (`Scheme::HybridSdp`) or PGA
/// (`Scheme::HybridPga`) phase updates.
pub fn solve_hybrid(channel: &ChannelRealization, config: &SystemConfig, scheme: Scheme, seed: u64) -> Result<SolveReport> {
    let block = match scheme {
        Scheme::HybridSdp => PhaseBlock::Sdp,
        Scheme::HybridPga => PhaseBlock::Pga,
        _ => return Err(Error::config("schemes", format!("{scheme} is not a hybrid scheme"))),
    };
    alternate(scheme, block, channel, config, seed)
}

/// SCA precoding behind frozen random phases.
pub fn solve_digital_pre(channel: &ChannelRealization, config: &SystemConfig, seed: u64) -> Result<SolveReport> {
    alternate(Scheme::DigitalPre, PhaseBlock::Frozen, channel, config, seed)
}

/// One stream per antenna at equal clipped power; phases by PGA.
pub fn solve_wave_sim(channel: &ChannelRealization, config: &SystemConfig, seed: u64) -> Result<SolveReport> {
    check_dimensions(channel, config)?;
    let start = Instant::now();
    let p = one_stream_per_antenna(channel, config);
    let initial = initial_phases(channel, seed);
    let (r0, _) = evaluate(channel, &initial, &p, config);
    let out = run_pga(channel, &p, &config.pga, derive_seed(seed, 1), Some(&initial), Some(config.gamma_min));
    let phases = if out.sum_rate >= r0.sum_rate { out.phases } else { initial };
    let (rates, power) = evaluate(channel, &phases, &p, config);
    if !qos_met(&rates, config.gamma_min) {
        return Err(Error::Infeasible("wave-domain beamforming cannot meet the SINR targets".into()));
    }
    Ok(SolveReport {
        scheme: Scheme::WaveSim,
        ee_trace: vec![r0.ee, rates.ee],
        t: update_t(rates.sum_rate, power.total),
        precoder: p,
        phases,
        rates,
        power,
        termination: Termination::Converged,
        wall_clock: start.elapsed().as_secs_f64(),
        counters: Counters { ao: 1, bs: 0, phase: out.iterations },
        rejections: 0,
        violations: 0,
    })
}

pub fn solve(scheme: Scheme, channel: &ChannelRealization, config: &SystemConfig, seed: u64) -> Result<SolveReport> {
    match scheme {
        Scheme::HybridSdp | Scheme::HybridPga => solve_hybrid(channel, config, scheme, seed),
        Scheme::DigitalPre => solve_digital_pre(channel, config, seed),
        Scheme::WaveSim => solve_wave_sim(channel, config, seed),
    }
}
