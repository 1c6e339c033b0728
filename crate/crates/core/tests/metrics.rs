use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simee_core::channel::{complex_normal, effective_channels};
use simee_core::metrics::*;
use simee_core::{CMatrix, Complex, PhaseState, PrecodingMatrix, Scenario, SystemConfig};

fn scenario(atoms: usize, layers: usize, antennas: usize, users: usize) -> Scenario {
    Scenario::new(&SystemConfig {
        atoms,
        layers,
        antennas,
        users,
        ..SystemConfig::default()
    })
    .unwrap()
}

fn random_precoder(antennas: usize, users: usize, scale: f64, rng: &mut ChaCha8Rng) -> PrecodingMatrix {
    let v = complex_normal(antennas * users, rng);
    PrecodingMatrix::new(CMatrix::from_column_slice(antennas, users, v.as_slice()).map(|z| z * scale))
}

/// `h_kᴴ G W₁ p` summed path by path through every atom of every layer.
fn path_sum(ch: &simee_core::ChannelRealization, phases: &[Vec<f64>], k: usize, p: &[Complex]) -> Complex {
    let n = ch.atoms();
    let layers = phases.len();
    let mut total = Complex::new(0.0, 0.0);
    let mut stack = vec![0usize; layers];
    loop {
        for (l, &pl) in p.iter().enumerate() {
            let mut a = ch.users[k][stack[layers - 1]].conj();
            for m in (0..layers).rev() {
                a *= Complex::from_polar(1.0, phases[m][stack[m]]);
                if m > 0 {
                    a *= ch.inter[m - 1][(stack[m], stack[m - 1])];
                }
            }
            total += a * ch.w1[(stack[0], l)] * pl;
        }
        let mut i = 0;
        while i < layers {
            stack[i] += 1;
            if stack[i] < n {
                break;
            }
            stack[i] = 0;
            i += 1;
        }
        if i == layers {
            return total;
        }
    }
}

#[test]
fn sinr_matches_path_sum_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (atoms, layers) in [(4, 1), (4, 2), (9, 2), (9, 3)] {
        let sc = scenario(atoms, layers, 2, 2);
        let ch = sc.draw(&mut rng).unwrap();
        let phases = PhaseState::random(&ch, &mut rng);
        let p = random_precoder(2, 2, 1.0, &mut rng);
        let got: Vec<f64> = (0..2).map(|k| sinr(&ch, &phases, &p, k)).collect();
        for k in 0..2 {
            let g: Vec<f64> = (0..2)
                .map(|j| path_sum(&ch, phases.phases(), k, p.user(j).as_slice()).norm_sqr())
                .collect();
            let expect = g[k] / (g[1 - k] + ch.noise[k]);
            assert!((got[k] - expect).abs() <= 1e-10 * expect, "{atoms} {layers}: {} vs {expect}", got[k]);
        }
    }
}

#[test]
fn single_user_has_no_interference() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ch = scenario(9, 2, 2, 1).draw(&mut rng).unwrap();
    let phases = PhaseState::random(&ch, &mut rng);
    let p = random_precoder(2, 1, 1.0, &mut rng);
    let h = &effective_channels(&ch, &phases)[0];
    let expect = h.dotc(&p.user(0)).norm_sqr() / ch.noise[0];
    assert!((sinr(&ch, &phases, &p, 0) - expect).abs() <= 1e-12 * expect);
}

#[test]
fn zero_precoder_gives_zero_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ch = scenario(9, 2, 3, 3).draw(&mut rng).unwrap();
    let phases = PhaseState::random(&ch, &mut rng);
    let p = PrecodingMatrix::zeros(3, 3);
    assert_eq!(sum_rate(&ch, &phases, &p), 0.0);
    assert!((0..3).all(|k| sinr(&ch, &phases, &p, k) == 0.0));
}

#[test]
fn unit_sinr_gives_one_bit_per_user() {
    assert!((sum_rate_from_sinr(&[1.0; 4]) - 4.0).abs() < 1e-15);
}

#[test]
fn rate_saturates_when_interference_limited() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ch = scenario(9, 2, 2, 2).draw(&mut rng).unwrap();
    let phases = PhaseState::random(&ch, &mut rng);
    let h = effective_channels(&ch, &phases);
    let gains_at = |p: &PrecodingMatrix| gains(&h, p);
    let p = random_precoder(2, 2, 1.0, &mut rng);
    let g = gains_at(&p);
    let limit: f64 = (0..2).map(|k| (g[(k, k)] / g[(k, 1 - k)]).ln_1p()).sum::<f64>() / std::f64::consts::LN_2;
    let rates: Vec<f64> = [1e2, 1e6, 1e10, 1e14]
        .iter()
        .map(|&a| sum_rate(&ch, &phases, &p.scaled(a)))
        .collect();
    assert!(rates.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    assert!(rates.iter().all(|&r| r <= limit + 1e-9));
    assert!((rates[3] - limit).abs() < 1e-6 * limit);
}

#[test]
fn energy_efficiency_examples() {
    assert!((energy_efficiency(2.0_f64, 20.0, 10e6) - 1e6).abs() < 1e-9);
    assert!((energy_efficiency(2.0_f64, 40.0, 10e6) - 5e5).abs() < 1e-9);
    assert!((energy_efficiency(3.7_f64, 15.10, 10e6) - 10e6 * 3.7 / 15.10).abs() < 1e-6);
}

#[test]
fn auxiliary_update_examples() {
    assert_eq!(update_t(4.0_f64, 16.0), 0.125);
    assert_eq!(update_t(0.0_f64, 16.0), 0.0);
    assert_eq!(quadratic_objective(4.0_f64, 16.0, 0.0), 0.0);
    assert_eq!(quadratic_objective(4.0_f32, 16.0, 0.125), 0.25);
}

#[test]
fn quadratic_transform_identity_on_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let r: f64 = rng.random_range(0.0..20.0);
        let p: f64 = rng.random_range(1.0..50.0);
        let t = update_t(r, p);
        let f = quadratic_objective(r, p, t);
        assert!((f - r / p).abs() <= 1e-9 * (r / p).max(1e-12));
        for _ in 0..10 {
            let s = t + rng.random_range(-1.0..1.0);
            assert!(quadratic_objective(r, p, s) <= f + 1e-15);
        }
        // Exact for a quadratic in t; a wide step keeps cancellation small.
        let h = 1e-2;
        let d = (quadratic_objective(r, p, t + h) - quadratic_objective(r, p, t - h)) / (2.0 * h);
        assert!(d.abs() < 1e-9);
    }
}

#[test]
fn report_closure() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = SystemConfig::default();
    let sc = Scenario::new(&cfg).unwrap();
    let ch = sc.draw(&mut rng).unwrap();
    let phases = PhaseState::random(&ch, &mut rng);
    let p = random_precoder(4, 4, 0.3, &mut rng);
    let power = simee_core::power::power_breakdown(&p, &cfg.power, 49, 4, simee_core::power::Activation::Hard);
    let report = rate_report(&ch, &phases, &p, &power, cfg.bandwidth_hz);
    assert!((report.sum_rate - sum_rate(&ch, &phases, &p)).abs() < 1e-12);
    assert!((report.ee - cfg.bandwidth_hz * report.sum_rate / power.total).abs() <= 1e-12 * report.ee);
    for (g, r) in report.sinr.iter().zip(&report.rates) {
        assert!(*g >= 0.0 && (r - (1.0 + g).log2()).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn objective_peaks_at_update(r in 0.0..100.0f64, p in 0.1..100.0f64, t in -10.0..10.0f64) {
        let best = quadratic_objective(r, p, update_t(r, p));
        prop_assert!(quadratic_objective(r, p, t) <= best + 1e-12 * best.max(1.0));
    }
}
