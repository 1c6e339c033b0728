use std::path::Path;
use std::process::Command;

use simee::config_file::{parse_config, render, RunConfig};
use simee::experiment::{run_experiment, SolutionDump};
use simee::summary::{nearest_rank, summarize, Stats};
use simee::CliError;
use simee_core::metrics::rate_report;
use simee_core::power::{power_breakdown, Activation};
use simee_core::{CMatrix, CVector, ChannelRealization, Complex, PhaseState, PrecodingMatrix, Scenario, Scheme};

const TINY: &str = "
n = 9
m = 2
k = 2
l = 2
gamma_min = -10 dB   # loose target
trials = 2
seed = 3
schemes = hybrid-pga, digital-pre
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simee"))
}

#[test]
fn empty_file_gives_defaults() {
    let run = parse_config("").unwrap();
    let s = &run.system;
    assert_eq!((s.users, s.antennas, s.layers, s.atoms), (4, 4, 4, 49));
    assert_eq!(s.noise_dbm_per_hz, -174.0);
    assert_eq!(s.bandwidth_hz, 10e6);
    assert_eq!(s.power.static_w, 4.5);
    assert_eq!(s.power.rf_active, 0.4);
    assert!((s.power.controller - 10f64.powf(-0.5)).abs() < 1e-15);
    assert!((s.power.ue - 0.1).abs() < 1e-15);
    assert!((s.power.meta - 0.01).abs() < 1e-15);
    assert!((s.p_antenna_max - 1.0).abs() < 1e-15);
    assert_eq!(run.schemes, Scheme::ALL.to_vec());
}

#[test]
fn units_and_aliases() {
    let run = parse_config("p_max = 35 dBm\nqos = 3 dB\nbw = 20 MHz\nF = 28 GHz\neta = 0.4\np_ue = 50 mW\nK = 3").unwrap();
    assert!((run.system.p_max - 3.1623).abs() < 1e-4);
    assert!((run.system.gamma_min - 10f64.powf(0.3)).abs() < 1e-12);
    assert_eq!(run.system.bandwidth_hz, 20e6);
    assert_eq!(run.system.carrier_hz, 28e9);
    assert_eq!(run.system.power.efficiency, 0.4);
    assert!((run.system.power.ue - 0.05).abs() < 1e-15);
    assert_eq!(run.system.users, 3);
    assert_eq!(parse_config("p_max = 2").unwrap().system.p_max, 2.0);
}

#[test]
fn invalid_files_name_the_problem() {
    let err = parse_config("n = 50").unwrap_err();
    assert!(matches!(&err, CliError::Core(e) if e.to_string().contains("atoms")), "{err}");
    match parse_config("foo = 1\nusers = 2\nbar = 3").unwrap_err() {
        CliError::UnknownKeys(k) => assert_eq!(k, vec!["foo", "bar"]),
        e => panic!("{e}"),
    }
    for bad in ["k = 2.5", "p_max = 3 dB", "users", "schemes = magic", "sweep = m 1, 2", "sweep = n: 9, 50", "trials = 0", "k = 5"] {
        assert!(parse_config(bad).is_err(), "{bad}");
    }
}

#[test]
fn resolved_config_round_trips() {
    let run = parse_config(&format!("{TINY}\nsweep = p_max: 20 dBm, 30 dBm\nsweep = m: 1, 3")).unwrap();
    assert_eq!(run.sweeps.len(), 2);
    assert!((run.sweeps[0].values[1] - 1.0).abs() < 1e-15);
    let again: RunConfig = parse_config(&render(&run)).unwrap();
    assert_eq!(again, run);
}

#[test]
fn statistics_conventions() {
    let one = Stats::of(&[4.2]);
    assert_eq!((one.median, one.mean, one.p10, one.p90), (4.2, 4.2, 4.2, 4.2));
    let three = Stats::of(&[5.0, 1.0, 3.0]);
    assert_eq!((three.median, three.mean), (3.0, 3.0));
    assert_eq!(Stats::of(&[4.0, 1.0, 3.0, 2.0]).median, 2.5);
    let ten: Vec<f64> = (1..=10).map(f64::from).collect();
    assert_eq!(nearest_rank(&ten, 10.0), 1.0);
    assert_eq!(nearest_rank(&ten, 90.0), 9.0);
    assert_eq!(nearest_rank(&ten, 91.0), 10.0);
    let twenty: Vec<f64> = (1..=20).map(f64::from).collect();
    assert_eq!(nearest_rank(&twenty, 10.0), 2.0);
    assert_eq!(nearest_rank(&twenty, 90.0), 18.0);
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn summary_of_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(
        dir.path(),
        "r.csv",
        "layers,scheme,trial,seed,status,ee,sum_rate\n\
         1,a,0,9,ok,3,1\n\
         1,a,1,9,ok,1,2\n\
         1,a,2,9,ok,2,3\n\
         1,b,0,9,infeasible,,\n\
         1,b,1,9,ok,6,6\n\
         2,a,0,9,ok,7,7\n",
    );
    let s = summarize(&csv).unwrap();
    assert_eq!(s.coord_names, vec!["layers"]);
    assert_eq!(s.groups.len(), 3);
    let a = s.group(&["1"], "a").unwrap();
    assert_eq!((a.trials, a.feasible, a.ee.median, a.ee.mean), (3, 3, 2.0, 2.0));
    let b = s.group(&["1"], "b").unwrap();
    assert_eq!((b.trials, b.feasible, b.ee.median, b.ee.p10, b.ee.p90), (2, 1, 3.0, 0.0, 6.0));
    assert_eq!(s.group(&["2"], "a").unwrap().sum_rate.mean, 7.0);

    let empty = write(dir.path(), "e.csv", "scheme,trial,seed,status,ee,sum_rate\n");
    assert!(matches!(summarize(&empty), Err(CliError::Empty(_))));
    let status = bin().arg("summarize").arg(&empty).output().unwrap().status;
    assert!(!status.success());
}

#[test]
fn run_writes_rows_sidecars_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let run = parse_config(&format!("{TINY}\nsweep = m: 1, 2")).unwrap();
    let out = run_experiment(&run, dir.path(), true).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].rows, 2 * 2 * 2);
    let mut reader = csv::Reader::from_path(&out[0].csv).unwrap();
    assert_eq!(&reader.headers().unwrap()[0], "layers");
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r[10].parse::<f64>().unwrap() == -104.0));
    let config = std::fs::read_to_string(&out[0].config).unwrap();
    assert!(config.starts_with("# simee ") && config.contains("sweep = layers: 1, 2"));
    assert!(out[0].timing.exists());

    let mut checked = 0;
    for row in rows.iter().filter(|r| &r[4] == "ok") {
        let layers: usize = row[0].parse().unwrap();
        let path = dir.path().join(format!("solutions/sweep_layers/p{}_t{}_{}.json", layers - 1, &row[2], &row[1]));
        let d: SolutionDump = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        let mut system = run.system.clone();
        system.layers = layers;
        let sc = Scenario::new(&system).unwrap();
        let c = |v: &[[f64; 2]]| CVector::from_iterator(v.len(), v.iter().map(|z| Complex::new(z[0], z[1])));
        let ch = ChannelRealization {
            w1: sc.propagation.w1.clone(),
            inter: sc.propagation.inter.clone(),
            users: d.users.iter().map(|u| c(u)).collect(),
            path_loss: vec![0.0; d.users.len()],
            noise: d.noise.clone(),
        };
        let cols: Vec<CVector> = d.precoder.iter().map(|p| c(p)).collect();
        let p = PrecodingMatrix::new(CMatrix::from_columns(&cols));
        let phases = PhaseState::new(d.phases.clone(), &ch).unwrap();
        let power = power_breakdown(&p, &system.power, system.atoms, system.layers, Activation::Hard);
        let ee = rate_report(&ch, &phases, &p, &power, system.bandwidth_hz).ee;
        let stored: f64 = row[5].parse().unwrap();
        assert!((ee - stored).abs() <= 1e-9 * stored);
        checked += 1;
    }
    assert!(checked >= 2);
}

#[test]
fn binary_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "c.txt", TINY);
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = bin()
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--trials", "3", "--seed", "11", "--schemes", "hybrid-pga,wave-sim"])
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        outputs.push(std::fs::read(out.join("run.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 2);

    let bad = write(dir.path(), "bad.txt", "n = 50\n");
    let output = bin().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("perfect square"));
}

#[test]
fn gradcheck_command_passes() {
    let output = bin().arg("gradcheck").output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("instances: 50"));
    let report = simee::gradcheck::gradcheck(50, 1).unwrap();
    assert!(report.max_error <= 1e-5);
    for i in &report.instances {
        assert!((2..=4).contains(&i.antennas) && (2..=3).contains(&i.users) && i.users <= i.antennas);
        assert!((1..=3).contains(&i.layers) && [4, 9].contains(&i.atoms));
    }
}
