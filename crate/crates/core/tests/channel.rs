use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simee_core::channel::*;
use simee_core::scalar::{noise_power, sinc, wavelength};
use simee_core::{CMatrix, CVector, Complex, SystemConfig};

fn small(atoms: usize, layers: usize, antennas: usize, users: usize) -> SystemConfig {
    SystemConfig {
        atoms,
        layers,
        antennas,
        users,
        ..SystemConfig::default()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn geometry_defaults() {
    let g = SimGeometry::new(&small(49, 5, 4, 4)).unwrap();
    let lambda = 3e8 / 28e9;
    assert!((g.wavelength - lambda).abs() < 1e-15);
    assert!((g.layer_spacing - lambda).abs() < 1e-15);
    assert_eq!(g.atoms_per_side, 7);
    let [x, y] = g.atom_grid[0];
    assert!((x + 3.0 * lambda / 2.0).abs() < 1e-15);
    assert!((y + 3.0 * lambda / 2.0).abs() < 1e-15);
    assert!(SimGeometry::new(&small(50, 4, 4, 4)).is_err());
}

#[test]
fn axial_coefficient_at_one_wavelength() {
    let g = SimGeometry::new(&small(49, 5, 4, 4)).unwrap();
    let l = g.wavelength;
    let w = diffraction_coefficient([0.0, 0.0, 0.0], [0.0, 0.0, l], &g).unwrap();
    let oracle = (l / 4.0) * (1.0 / (4.0 * std::f64::consts::PI.powi(2) * l * l) + 1.0 / (l * l)).sqrt();
    assert!((w.norm() - oracle).abs() < 1e-12);
    assert!((w.norm() - 0.2531).abs() < 5e-5);
}

#[test]
fn coefficient_decays_and_grazing_vanishes() {
    let g = SimGeometry::new(&small(49, 4, 4, 4)).unwrap();
    let l = g.wavelength;
    let near = diffraction_coefficient([0.0, 0.0, 0.0], [l, 0.0, l], &g).unwrap();
    let far = diffraction_coefficient([0.0, 0.0, 0.0], [2.0 * l, 0.0, 2.0 * l], &g).unwrap();
    assert!(far.norm() < near.norm());
    let grazing = diffraction_coefficient([0.0, 0.0, 0.0], [1e6 * l, 0.0, l], &g).unwrap();
    assert!(grazing.norm() < 1e-12);
    assert!(diffraction_coefficient([0.0, 0.0, 0.0], [l, 0.0, 0.0], &g).is_err());
}

#[test]
fn interlayer_matrices_are_shift_invariant() {
    let g = SimGeometry::new(&small(16, 3, 2, 2)).unwrap();
    let p = build_interlayer_matrices(&g).unwrap();
    assert_eq!(p.inter.len(), 2);
    let side = 4;
    let idx = |r: usize, c: usize| r * side + c;
    let w = &p.inter[0];
    for (a, b, c, d) in [(0, 0, 1, 1), (1, 2, 0, 3), (0, 3, 1, 2)] {
        // Same offset (c−a, d−b) from two different origins.
        let lhs = w[(idx(c, d), idx(a, b))];
        let rhs = w[(idx(c + 2, d), idx(a + 2, b))];
        assert!((lhs - rhs).norm() < 1e-15);
    }
    assert!((&p.inter[0] - &p.inter[1]).norm() < 1e-14);
}

#[test]
fn single_atom_single_antenna() {
    let cfg = small(1, 2, 1, 1);
    let g = SimGeometry::new(&cfg).unwrap();
    let p = build_interlayer_matrices(&g).unwrap();
    let d = g.layer_spacing;
    let l = g.wavelength;
    let expect = Complex::new(1.0 / (std::f64::consts::TAU * d), -1.0 / l)
        * (l * l / 4.0 / d)
        * Complex::from_polar(1.0, std::f64::consts::TAU * d / l);
    assert!((p.w1[(0, 0)] - expect).norm() < 1e-15);
}

#[test]
fn sinc_values() {
    assert_eq!(sinc(0.0), 1.0);
    assert!(sinc(1.0_f64).abs() < 1e-16);
    assert!((sinc(0.5_f64) - 2.0 / std::f64::consts::PI).abs() < 1e-15);
    assert!((sinc(0.5_f32) - std::f32::consts::FRAC_2_PI).abs() < 1e-6);
}

#[test]
fn correlation_root_reproduces_clamped_matrix() {
    let g = SimGeometry::new(&small(49, 4, 4, 4)).unwrap();
    let c = build_sinc_correlation(&g);
    for i in 0..49 {
        assert_eq!(c.r[(i, i)], 1.0);
    }
    // Horizontal neighbours sit λ/2 apart.
    assert!(c.r[(0, 1)].abs() < 1e-15);
    let clamped = c.clamped();
    let eig = nalgebra::SymmetricEigen::new(clamped.clone());
    assert!(eig.eigenvalues.min() > -1e-12);
    assert!((&c.root * c.root.transpose() - &clamped).norm() <= 1e-9 * 49.0);
}

#[test]
fn path_loss_values() {
    let l = wavelength(28e9);
    let c0 = (l / (4.0 * std::f64::consts::PI)).powi(2);
    assert!((c0 - 7.27e-7).abs() / 7.27e-7 < 1e-3);
    let near = path_loss(1.0 + 1e-9, l, 3.5).unwrap();
    assert!((near - c0).abs() / c0 < 1e-8);
    let far = path_loss(100.0, l, 3.5).unwrap();
    assert!((far - 7.27e-14).abs() / 7.27e-14 < 1e-3);
    let ratio = path_loss(200.0, l, 3.5).unwrap() / far;
    assert!((ratio - 2f64.powf(-3.5)).abs() < 1e-12);
    assert!(path_loss(1.0, l, 3.5).is_err());
    assert!(path_loss(0.5, l, 3.5).is_err());
    let grid: Vec<f64> = (1..200).map(|i| path_loss(1.0 + i as f64, l, 3.5).unwrap()).collect();
    assert!(grid.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn noise_at_ten_megahertz() {
    let n = noise_power(-174.0, 10e6);
    assert!((10.0 * (n * 1e3f64).log10() + 104.0).abs() < 1e-9);
}

#[test]
fn uncorrelated_covariance_matches_path_loss() {
    let cfg = small(4, 1, 1, 1);
    let g = SimGeometry::new(&cfg).unwrap();
    let prop = build_interlayer_matrices(&g).unwrap();
    let corr = CorrelationModel::identity(4);
    let pos = [[100.0, 0.0, 1.65]];
    let draws = 10_000;
    let mut r = rng(11);
    let mut cov = CMatrix::zeros(4, 4);
    let mut beta = 0.0;
    for _ in 0..draws {
        let ch = sample_user_channels(&prop, &corr, &pos, &cfg, &mut r).unwrap();
        let h = &ch.users[0];
        cov += h * h.adjoint();
        beta = ch.path_loss[0];
    }
    cov /= Complex::new(draws as f64, 0.0);
    for i in 0..4 {
        assert!((cov[(i, i)].re - beta).abs() / beta < 0.05, "diag {i}");
        for j in 0..4 {
            if i != j {
                assert!(cov[(i, j)].norm() / beta < 0.05, "offdiag {i},{j}");
            }
        }
    }
}

#[test]
fn correlated_energy_per_atom_matches_path_loss() {
    let cfg = small(9, 1, 1, 1);
    let scenario = Scenario::new(&cfg).unwrap();
    let pos = [[100.0, 0.0, 1.65]];
    let mut r = rng(5);
    let draws = 10_000;
    let mut energy = 0.0;
    let mut beta = 0.0;
    for _ in 0..draws {
        let ch = sample_user_channels(&scenario.propagation, &scenario.correlation, &pos, &cfg, &mut r).unwrap();
        energy += ch.users[0].norm_squared();
        beta = ch.path_loss[0];
    }
    let per_atom = energy / draws as f64 / 9.0;
    assert!((per_atom - beta).abs() / beta < 0.03);
}

#[test]
fn fixed_seed_reproduces_realization() {
    let cfg = small(9, 2, 2, 2);
    let s = Scenario::new(&cfg).unwrap();
    assert_eq!(s.draw(&mut rng(3)).unwrap(), s.draw(&mut rng(3)).unwrap());
    assert_ne!(s.draw(&mut rng(3)).unwrap(), s.draw(&mut rng(4)).unwrap());
}

#[test]
fn users_stay_within_jitter_disc() {
    let cfg = SystemConfig::default();
    let mut r = rng(1);
    for _ in 0..200 {
        for p in sample_user_positions(&cfg, &mut r) {
            assert!((p[0] - 100.0).hypot(p[1]) <= 5.0 + 1e-12);
            assert_eq!(p[2], 1.65);
        }
    }
}

#[test]
fn degenerate_cascades() {
    let cfg = small(4, 2, 2, 1);
    let s = Scenario::new(&cfg).unwrap();
    let ch = s.draw(&mut rng(0)).unwrap();
    let zeros = PhaseState::zeros(&ch);
    assert!((zeros.cascade() - &ch.inter[0]).norm() < 1e-15);
    let single = compose_cascade(&[vec![0.0; 4]], &[]).unwrap();
    assert_eq!(single, CMatrix::identity(4, 4));
    assert!(compose_cascade(&[vec![0.0; 4]], &ch.inter).is_err());
}

/// Sums the field over every atom path, one layer at a time.
fn forward_oracle(ch: &ChannelRealization, phases: &[Vec<f64>], k: usize, x: &CVector) -> Complex {
    let n = ch.atoms();
    let mut field: Vec<Complex> = (0..n)
        .map(|a| (0..ch.antennas()).map(|l| ch.w1[(a, l)] * x[l]).sum::<Complex>() * Complex::from_polar(1.0, phases[0][a]))
        .collect();
    for m in 1..ch.layers() {
        let mut next = vec![Complex::new(0.0, 0.0); n];
        for (dst, out) in next.iter_mut().enumerate() {
            for (src, f) in field.iter().enumerate() {
                *out += ch.inter[m - 1][(dst, src)] * f;
            }
            *out *= Complex::from_polar(1.0, phases[m][dst]);
        }
        field = next;
    }
    (0..n).map(|a| ch.users[k][a].conj() * field[a]).sum()
}

#[test]
fn effective_channel_matches_path_sum() {
    let cfg = small(9, 3, 3, 2);
    let s = Scenario::new(&cfg).unwrap();
    let mut r = rng(9);
    for _ in 0..5 {
        let ch = s.draw(&mut r).unwrap();
        let ph = PhaseState::random(&ch, &mut r);
        let h = effective_channels(&ch, &ph);
        let x = complex_normal(3, &mut r);
        for k in 0..2 {
            let direct = h[k].dotc(&x);
            let oracle = forward_oracle(&ch, ph.phases(), k, &x);
            assert!((direct - oracle).norm() <= 1e-10 * oracle.norm().max(1e-300), "{direct} vs {oracle}");
        }
    }
}

#[test]
fn cached_cascade_matches_fresh_product() {
    let cfg = small(9, 4, 2, 2);
    let s = Scenario::new(&cfg).unwrap();
    let ch = s.draw(&mut rng(2)).unwrap();
    let mut r = rng(8);
    for _ in 0..100 {
        let ph = PhaseState::random(&ch, &mut r);
        let mut fresh = CMatrix::identity(9, 9);
        for (m, layer) in ph.phases().iter().enumerate() {
            let d = CMatrix::from_diagonal(&CVector::from_iterator(9, layer.iter().map(|&p| Complex::from_polar(1.0, p))));
            fresh = if m == 0 { d * fresh } else { d * &ch.inter[m - 1] * fresh };
        }
        assert!((ph.cascade() - &fresh).norm() <= 1e-10 * fresh.norm());
        for m in 0..4 {
            assert!(ph.coefficients(m).iter().all(|c| (c.norm() - 1.0).abs() <= 1e-12));
        }
    }
}

#[test]
fn real_correlation_matrix_roundtrip() {
    let r = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let c = CorrelationModel::from_matrix(r.clone());
    assert!((c.clamped() - r).norm() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phases_stay_wrapped(seed in 0u64..1000) {
        let cfg = small(4, 2, 2, 1);
        let s = Scenario::new(&cfg).unwrap();
        let ch = s.draw(&mut rng(seed)).unwrap();
        let raw: Vec<Vec<f64>> = (0..2).map(|m| (0..4).map(|n| (seed as f64 - 500.0) * (m * 4 + n + 1) as f64).collect()).collect();
        let ph = PhaseState::new(raw, &ch).unwrap();
        for layer in ph.phases() {
            for &p in layer {
                prop_assert!((0.0..std::f64::consts::TAU).contains(&p));
            }
        }
    }
}
