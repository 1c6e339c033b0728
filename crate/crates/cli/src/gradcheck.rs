//! Analytic phase gradient of the sum rate against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simee_core::channel::complex_normal;
use simee_core::pga_sim::{fast_sum_rate, sum_rate_gradient};
use simee_core::{CMatrix, PhaseState, PrecodingMatrix, Scenario, SystemConfig};

use crate::CliError;

pub const STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub antennas: usize,
    pub users: usize,
    pub layers: usize,
    pub atoms: usize,
    /// Largest `|FD − analytic|` over entries, relative to the largest
    /// analytic entry.
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub instances: Vec<Instance>,
    pub max_error: f64,
}

/// Random instances with `L ∈ 2..=4`, `K ∈ 2..=min(3, L)`, `M ∈ 1..=3`,
/// `N ∈ {4, 9}`, random phases and a random precoder at the power budget.
pub fn gradcheck(instances: usize, seed: u64) -> Result<Report, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(instances);
    for _ in 0..instances {
        let antennas = rng.random_range(2..=4);
        let users = rng.random_range(2..=antennas.min(3));
        let layers = rng.random_range(1..=3);
        let atoms = if rng.random_bool(0.5) { 4 } else { 9 };
        let config = SystemConfig {
            antennas,
            users,
            layers,
            atoms,
            ..SystemConfig::default()
        };
        let channel = Scenario::new(&config)?.draw(&mut rng)?;
        let phases = PhaseState::random(&channel, &mut rng);
        let z = complex_normal(antennas * users, &mut rng);
        let p = PrecodingMatrix::new(CMatrix::from_column_slice(antennas, users, z.as_slice()));
        let p = p.scaled((config.p_max / p.total_power()).sqrt());

        let grad = sum_rate_gradient(&channel, phases.phases(), &p);
        let scale = grad.iter().flatten().fold(0.0f64, |a, g| a.max(g.abs())).max(f64::MIN_POSITIVE);
        let mut error = 0.0f64;
        for m in 0..layers {
            for n in 0..atoms {
                let mut up = phases.phases().to_vec();
                let mut down = up.clone();
                up[m][n] += STEP;
                down[m][n] -= STEP;
                let fd = (fast_sum_rate(&channel, &up, &p) - fast_sum_rate(&channel, &down, &p)) / (2.0 * STEP);
                error = error.max((fd - grad[m][n]).abs() / scale);
            }
        }
        out.push(Instance {
            antennas,
            users,
            layers,
            atoms,
            error,
        });
    }
    let max_error = out.iter().map(|i| i.error).fold(0.0, f64::max);
    Ok(Report { instances: out, max_error })
}
