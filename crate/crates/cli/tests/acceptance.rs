//! Every primary acceptance criterion, one PASS/FAIL line each.
//!
//! The sweep criteria write their CSVs and summaries to `results/acceptance/`
//! at the workspace root. Runtimes are printed, not enforced. Setting
//! `ACCEPTANCE_ONLY=lifting,power` runs a subset.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simee::config_file::parse_config;
use simee::experiment::run_experiment;
use simee::summary::{summarize, Summary};
use simee_core::ao::{derive_seed, solve, MONOTONE_SLACK};
use simee_core::channel::{bs_position, complex_normal, diffraction_coefficient, effective_channels, path_loss, sample_user_positions};
use simee_core::metrics::{quadratic_objective, sum_rate, update_t};
use simee_core::power::{power_breakdown, Activation, PowerParams};
use simee_core::scalar::dbm_to_watts;
use simee_core::sdp_sim::{build_layer_channel, lift, lifted_gain, lifting_vectors};
use simee_core::{CMatrix, ChannelRealization, Complex, PhaseState, PrecodingMatrix, Scenario, Scheme, SimGeometry, SystemConfig};

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn results_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../results/acceptance").join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn random_precoder(antennas: usize, users: usize, power: f64, rng: &mut ChaCha8Rng) -> PrecodingMatrix {
    let z = complex_normal(antennas * users, rng);
    let p = PrecodingMatrix::new(CMatrix::from_column_slice(antennas, users, z.as_slice()));
    p.scaled((power / p.total_power()).sqrt())
}

fn median_ee(summary: &Summary, coords: &[&str], scheme: Scheme) -> (f64, usize, usize) {
    let g = summary.group(coords, scheme.name()).expect("group present");
    (g.ee.median, g.feasible, g.trials)
}

fn gradient_oracle() -> Verdict {
    let output = Command::new(env!("CARGO_BIN_EXE_simee")).arg("gradcheck").output().unwrap();
    let text = String::from_utf8_lossy(&output.stdout);
    let error: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max relative error: "))
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(f64::INFINITY);
    let instances = text.contains("instances: 50");
    verdict(
        output.status.success() && instances && error <= 1e-5,
        format!("max relative error {error:.2e} over 50 instances (limit 1e-5)"),
    )
}

fn lifting_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for i in 0..20 {
        let antennas = rng.random_range(2..=4);
        let cfg = SystemConfig {
            atoms: [4, 9, 16, 25][i % 4],
            layers: rng.random_range(1..=4),
            antennas,
            users: rng.random_range(2..=antennas),
            ..SystemConfig::default()
        };
        let ch = Scenario::new(&cfg).unwrap().draw(&mut rng).unwrap();
        let phases = PhaseState::random(&ch, &mut rng);
        let p = random_precoder(cfg.antennas, cfg.users, cfg.p_max, &mut rng);
        let h = effective_channels(&ch, &phases);
        for m in 0..cfg.layers {
            let u = lifting_vectors(&build_layer_channel(&ch, &phases, m).unwrap(), &p);
            let v = lift(phases.layer(m));
            for k in 0..cfg.users {
                for j in 0..cfg.users {
                    let direct = h[k].dotc(&p.user(j)).norm_sqr();
                    worst = worst.max((lifted_gain(&v, &u[k][j]) - direct).abs() / direct);
                    checks += 1;
                }
            }
        }
    }
    verdict(worst <= 1e-9, format!("max relative error {worst:.2e} over {checks} gains on 20 instances (limit 1e-9)"))
}

/// Two atoms half a wavelength apart on a single layer, two feeds, one user.
fn two_atom_instance(cfg: &SystemConfig, rng: &mut ChaCha8Rng) -> ChannelRealization {
    let geometry = SimGeometry::new(&SystemConfig { atoms: 4, ..cfg.clone() }).unwrap();
    let q = geometry.wavelength / 4.0;
    let atoms = [[-q, 0.0, geometry.layer_spacing], [q, 0.0, geometry.layer_spacing]];
    let w1 = CMatrix::from_fn(2, cfg.antennas, |n, l| {
        diffraction_coefficient(geometry.antenna_positions[l], atoms[n], &geometry).unwrap()
    });
    let bs = bs_position(cfg);
    let ue = sample_user_positions(cfg, rng)[0];
    let d = ((ue[0] - bs[0]).powi(2) + (ue[1] - bs[1]).powi(2) + (ue[2] - bs[2]).powi(2)).sqrt();
    let beta = path_loss(d, geometry.wavelength, cfg.path_loss_exponent).unwrap();
    // sinc(2·(λ/2)/λ) = 0: the two atoms are uncorrelated.
    let h = complex_normal(2, rng).map(|z| z * beta.sqrt());
    ChannelRealization {
        w1,
        inter: vec![],
        users: vec![h],
        path_loss: vec![beta],
        noise: vec![cfg.noise_power()],
    }
}

fn brute_force() -> Verdict {
    // A two-atom surface cannot lift a user to 0 dB, so the target is dropped.
    let cfg = SystemConfig {
        users: 1,
        antennas: 2,
        layers: 1,
        atoms: 2,
        gamma_min: 0.0,
        ..SystemConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let step = std::f64::consts::TAU / 64.0;
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    for i in 0..10u64 {
        let ch = two_atom_instance(&cfg, &mut rng);
        for scheme in [Scheme::HybridPga, Scheme::HybridSdp] {
            let report = match solve(scheme, &ch, &cfg, i) {
                Ok(r) => r,
                Err(e) => {
                    failures.push(format!("{scheme} instance {i}: {e}"));
                    continue;
                }
            };
            let grid = (0..64 * 64)
                .map(|g| {
                    let phases = PhaseState::new(vec![vec![(g % 64) as f64 * step, (g / 64) as f64 * step]], &ch).unwrap();
                    sum_rate(&ch, &phases, &report.precoder)
                })
                .fold(0.0, f64::max);
            let ratio = report.rates.sum_rate / grid;
            worst = worst.min(ratio);
            if ratio < 0.98 {
                failures.push(format!("{scheme} instance {i}: {:.4} of grid", ratio));
            }
        }
    }
    verdict(
        failures.is_empty(),
        format!("worst R_sum / grid optimum {worst:.4} over 10 instances x 2 schemes (limit 0.98){}", list(&failures)),
    )
}

fn list(failures: &[String]) -> String {
    if failures.is_empty() {
        String::new()
    } else {
        format!("; {}", failures.join("; "))
    }
}

fn monotone_ao() -> Verdict {
    let cfg = SystemConfig {
        atoms: 25,
        ..SystemConfig::default()
    };
    let scenario = Scenario::new(&cfg).unwrap();
    let mut violations = 0;
    let mut failures = Vec::new();
    let mut rounds = 0;
    for i in 0..20u64 {
        let seed = derive_seed(2024, i);
        let ch = scenario.draw(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        match solve(Scheme::HybridPga, &ch, &cfg, seed) {
            Ok(r) => {
                violations += r.violations;
                rounds += r.counters.ao;
                if !r.ee_trace.windows(2).all(|w| w[1] >= w[0] * (1.0 - MONOTONE_SLACK)) {
                    failures.push(format!("instance {i}: trace decreases"));
                }
            }
            Err(e) => failures.push(format!("instance {i}: {e}")),
        }
    }
    verdict(
        violations == 0 && failures.is_empty(),
        format!("20 instances, {rounds} AO rounds, {violations} violations{}", list(&failures)),
    )
}

fn quadratic_transform() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let cfg = SystemConfig {
        atoms: 9,
        layers: 2,
        ..SystemConfig::default()
    };
    let scenario = Scenario::new(&cfg).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let ch = scenario.draw(&mut rng).unwrap();
        let phases = PhaseState::random(&ch, &mut rng);
        let power = rng.random_range(1e-3..cfg.p_max);
        let p = random_precoder(cfg.antennas, cfg.users, power, &mut rng);
        let rate = sum_rate(&ch, &phases, &p);
        let total = power_breakdown(&p, &cfg.power, cfg.atoms, cfg.layers, Activation::Smooth).total;
        let f = quadratic_objective(rate, total, update_t(rate, total));
        worst = worst.max((f - rate / total).abs() / (rate / total));
    }
    verdict(worst <= 1e-9, format!("max relative gap {worst:.2e} at 100 operating points (limit 1e-9)"))
}

fn scheme_ordering() -> Verdict {
    let run = parse_config(
        "n = 25\nm = 4\nk = 4\nl = 4\ntrials = 50\nseed = 3\nschemes = hybrid-sdp, hybrid-pga, digital-pre",
    )
    .unwrap();
    let out = run_experiment(&run, &results_dir("schemes"), false).unwrap();
    let summary = summarize(&out[0].csv).unwrap();
    summary.write(&out[0].csv.with_extension("summary.csv")).unwrap();
    let (sdp, sdp_ok, n) = median_ee(&summary, &[], Scheme::HybridSdp);
    let (pga, pga_ok, _) = median_ee(&summary, &[], Scheme::HybridPga);
    let (dig, dig_ok, _) = median_ee(&summary, &[], Scheme::DigitalPre);
    let ratio = pga / dig;
    verdict(
        sdp >= pga && pga >= dig && ratio >= 1.3,
        format!(
            "median EE hybrid-sdp {sdp:.4e} ({sdp_ok}/{n} feasible), hybrid-pga {pga:.4e} ({pga_ok}/{n}), \
             digital-pre {dig:.4e} ({dig_ok}/{n}); pga/digital-pre ratio {ratio:.3} (limit 1.3); \
             infeasible trials count as EE 0"
        ),
    )
}

fn layer_unimodality() -> Verdict {
    let run = parse_config("n = 49\nk = 4\nl = 4\ntrials = 30\nseed = 5\nschemes = hybrid-pga\nsweep = m: 1, 2, 3, 5, 8").unwrap();
    let out = run_experiment(&run, &results_dir("layers"), false).unwrap();
    let summary = summarize(&out[0].csv).unwrap();
    summary.write(&out[0].csv.with_extension("summary.csv")).unwrap();
    let layers = ["1", "2", "3", "5", "8"];
    let medians: Vec<(f64, usize)> = layers
        .iter()
        .map(|m| {
            let (ee, ok, _) = median_ee(&summary, &[m], Scheme::HybridPga);
            (ee, ok)
        })
        .collect();
    let best = (0..medians.len()).max_by(|&a, &b| medians[a].0.total_cmp(&medians[b].0)).unwrap();
    let passed = (1..=3).contains(&best) && medians[best].0 > medians[0].0 && medians[best].0 > medians[4].0;
    let table: Vec<String> = layers
        .iter()
        .zip(&medians)
        .map(|(m, (ee, ok))| format!("M={m}: {ee:.4e} ({ok}/30)"))
        .collect();
    verdict(passed, format!("median EE {}; peak at M={}", table.join(", "), layers[best]))
}

fn power_model() -> Verdict {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs();
    let with = |powers: &[f64], users: usize| {
        let mut m = CMatrix::zeros(powers.len(), users);
        for (l, &x) in powers.iter().enumerate() {
            m[(l, 0)] = Complex::new(x.sqrt(), 0.0);
        }
        PrecodingMatrix::new(m)
    };
    let d = PowerParams::default();
    let mut checks = Vec::new();

    let b = power_breakdown(&with(&[dbm_to_watts(35.0) / 4.0; 4], 4), &d, 49, 4, Activation::Hard);
    let table = 4.5 + 2.0 * dbm_to_watts(35.0) + 1.6 + 1.96 + dbm_to_watts(25.0) + 0.4;
    checks.push(("15.10 W composite", close(b.total, table) && (b.total - 15.10).abs() < 5e-3));

    let b = power_breakdown(&PrecodingMatrix::zeros(4, 4), &d, 49, 4, Activation::Hard);
    checks.push(("zero precoder", close(b.total, 4.5 + 1.96 + dbm_to_watts(25.0) + 0.4)));

    let custom = PowerParams {
        static_w: 1.0,
        rf_active: 0.25,
        efficiency: 0.8,
        meta: 0.002,
        controller: 0.05,
        ue: 0.1,
        ..d
    };
    let b = power_breakdown(&with(&[2.0], 1), &custom, 4, 2, Activation::Hard);
    checks.push(("single chain", close(b.total, 1.0 + 2.5 + 0.25 + 0.016 + 0.05 + 0.1)));

    let b = power_breakdown(&with(&[0.5, 5e-5, 1e-4, 0.0], 2), &d, 9, 1, Activation::Hard);
    let pa = (0.5 + 5e-5 + 1e-4) / 0.5;
    checks.push(("threshold", close(b.total, 4.5 + pa + 0.8 + 0.09 + dbm_to_watts(25.0) + 0.2)));

    let p = with(&[0.3, 0.7], 2);
    let a = power_breakdown(&p, &d, 16, 3, Activation::Hard);
    let h = power_breakdown(&p, &PowerParams { efficiency: 0.25, ..d }, 16, 3, Activation::Hard);
    checks.push(("half efficiency", close(h.pa, 2.0 * a.pa) && close(h.total - h.pa, a.total - a.pa)));

    let p = with(&[1.0, 1.0, 0.0], 1);
    let hard = power_breakdown(&p, &d, 4, 1, Activation::Hard);
    let smooth = power_breakdown(&p, &d, 4, 1, Activation::Smooth);
    checks.push(("smoothed unit chains", close(smooth.total, hard.total)));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    verdict(
        failed.is_empty(),
        format!("{} of {} cases exact to 1e-12{}", checks.len() - failed.len(), checks.len(), list(&failed.iter().map(|s| s.to_string()).collect::<Vec<_>>())),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.txt");
    std::fs::write(&config, "n = 9\nm = 2\nk = 2\nl = 2\ngamma_min = -10 dB\ntrials = 4\nseed = 9\nsweep = m: 1, 2\n").unwrap();
    let mut csvs = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "2")] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_simee"))
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .env("RAYON_NUM_THREADS", threads)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        csvs.push(std::fs::read(out.join("sweep_layers.csv")).unwrap());
    }
    let rows = csvs[0].iter().filter(|&&b| b == b'\n').count() - 1;
    verdict(
        csvs[0] == csvs[1],
        format!("two runs ({rows} rows, 1 and 2 worker threads) byte-identical: {}", csvs[0] == csvs[1]),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("power model", power_model),
        ("quadratic-transform identity", quadratic_transform),
        ("lifting exactness", lifting_exactness),
        ("gradient oracle", gradient_oracle),
        ("determinism", determinism),
        ("brute-force optimality", brute_force),
        ("monotone AO", monotone_ao),
        ("layer-count unimodality", layer_unimodality),
        ("scheme ordering", scheme_ordering),
    ];
    // Comma-separated name fragments restrict the run while iterating locally.
    let only: Vec<String> = std::env::var("ACCEPTANCE_ONLY")
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect())
        .unwrap_or_default();
    let mut failed = Vec::new();
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let tag = if v.passed { "PASS" } else { "FAIL" };
        // Direct handle writes are not swallowed by the test harness.
        let line = format!("[{tag}] {name}: {} ({:.1} s)\n", v.detail, start.elapsed().as_secs_f64());
        std::io::stderr().write_all(line.as_bytes()).unwrap();
        if !v.passed {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
