//! Monte-Carlo sweeps: one CSV per sweep plus resolved-config and timing
//! sidecars.
//!
//! Trial `i` draws its channel and solver randomness from
//! `derive_seed(master, i)`, so every scheme and every sweep point sees the
//! same user drop and results do not depend on the thread count. Wall-clock
//! times go to the timing sidecar so that the main CSV is reproducible byte
//! for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use simee_core::ao::{derive_seed, solve, Termination};
use simee_core::scalar::watts_to_dbm;
use simee_core::{ChannelRealization, Error, Scenario, Scheme, SolveReport, SystemConfig};

use crate::config_file::{apply, render, RunConfig};
use crate::CliError;

pub const COLUMNS: &[&str] = &[
    "scheme",
    "trial",
    "seed",
    "status",
    "ee",
    "sum_rate",
    "rates",
    "active_antennas",
    "total_power",
    "noise_dbm",
    "ao_iterations",
    "bs_iterations",
    "phase_iterations",
    "rejections",
    "violations",
    "termination",
];

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub point: usize,
    pub trial: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub seconds: f64,
    pub outcome: Result<SolveReport, Error>,
}

/// Files written for one sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub csv: PathBuf,
    pub config: PathBuf,
    pub timing: PathBuf,
    pub rows: usize,
}

/// Solver output with the user channels needed to recompute every metric.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionDump {
    pub scheme: String,
    pub trial: usize,
    pub seed: u64,
    pub ee: f64,
    pub sum_rate: f64,
    /// `precoder[k][l] = [re, im]`.
    pub precoder: Vec<Vec<[f64; 2]>>,
    pub phases: Vec<Vec<f64>>,
    /// `users[k][n] = [re, im]` of `h_SIM,k`.
    pub users: Vec<Vec<[f64; 2]>>,
    pub noise: Vec<f64>,
}

pub fn status(outcome: &Result<SolveReport, Error>) -> &'static str {
    match outcome {
        Ok(_) => "ok",
        Err(Error::Infeasible(_)) => "infeasible",
        Err(Error::Solver(_)) => "solver-failure",
        Err(_) => "error",
    }
}

fn run_trial(
    scenario: &Scenario,
    (point, trial): (usize, usize),
    master: u64,
    schemes: &[Scheme],
    keep_channel: bool,
) -> Vec<(TrialResult, Option<ChannelRealization>)> {
    let seed = derive_seed(master, trial as u64);
    let channel = scenario.draw(&mut ChaCha8Rng::seed_from_u64(seed));
    schemes
        .iter()
        .map(|&scheme| {
            let start = Instant::now();
            let outcome = match &channel {
                Ok(ch) => solve(scheme, ch, &scenario.config, seed),
                Err(e) => Err(e.clone()),
            };
            let seconds = start.elapsed().as_secs_f64();
            match &outcome {
                Ok(r) => log::info!("point {point} trial {trial} {scheme}: EE {:.4e} bit/J in {seconds:.1} s", r.rates.ee),
                Err(e) => log::info!("point {point} trial {trial} {scheme}: {e}"),
            }
            let result = TrialResult {
                point,
                trial,
                seed,
                scheme,
                seconds,
                outcome,
            };
            (result, channel.as_ref().ok().filter(|_| keep_channel).cloned())
        })
        .collect()
}

fn csv_record(axis: Option<f64>, r: &TrialResult, system: &SystemConfig) -> Vec<String> {
    let mut row = Vec::with_capacity(COLUMNS.len() + 1);
    if let Some(v) = axis {
        row.push(v.to_string());
    }
    row.push(r.scheme.name().to_string());
    row.push(r.trial.to_string());
    row.push(r.seed.to_string());
    row.push(status(&r.outcome).to_string());
    match &r.outcome {
        Ok(rep) => {
            let rates: Vec<String> = rep.rates.rates.iter().map(|x| x.to_string()).collect();
            row.push(rep.rates.ee.to_string());
            row.push(rep.rates.sum_rate.to_string());
            row.push(rates.join(";"));
            row.push(rep.power.active_count().to_string());
            row.push(rep.power.total.to_string());
        }
        Err(_) => row.extend(std::iter::repeat_n(String::new(), 5)),
    }
    row.push(format!("{:.6}", watts_to_dbm(system.noise_power())));
    match &r.outcome {
        Ok(rep) => {
            row.push(rep.counters.ao.to_string());
            row.push(rep.counters.bs.to_string());
            row.push(rep.counters.phase.to_string());
            row.push(rep.rejections.to_string());
            row.push(rep.violations.to_string());
            row.push(
                match rep.termination {
                    Termination::Converged => "converged",
                    Termination::MaxIterations => "max-iterations",
                }
                .to_string(),
            );
        }
        Err(_) => row.extend(std::iter::repeat_n(String::new(), 6)),
    }
    row
}

fn dump(r: &TrialResult, ch: &ChannelRealization) -> Option<SolutionDump> {
    let rep = r.outcome.as_ref().ok()?;
    let pair = |z: &simee_core::Complex| [z.re, z.im];
    Some(SolutionDump {
        scheme: r.scheme.name().to_string(),
        trial: r.trial,
        seed: r.seed,
        ee: rep.rates.ee,
        sum_rate: rep.rates.sum_rate,
        precoder: (0..rep.precoder.users()).map(|k| rep.precoder.user(k).iter().map(pair).collect()).collect(),
        phases: rep.phases.phases().to_vec(),
        users: ch.users.iter().map(|h| h.iter().map(pair).collect()).collect(),
        noise: ch.noise.clone(),
    })
}

/// The system configuration at every point of a sweep (`key`, values) or the
/// single base point.
fn points(run: &RunConfig, sweep: Option<(&str, &[f64])>) -> Result<Vec<(Option<f64>, SystemConfig)>, CliError> {
    match sweep {
        None => Ok(vec![(None, run.system.clone())]),
        Some((key, values)) => values
            .iter()
            .map(|&v| {
                let mut system = run.system.clone();
                apply(&mut system, key, v)?;
                Ok((Some(v), system))
            })
            .collect(),
    }
}

fn run_one(run: &RunConfig, out_dir: &Path, stem: &str, sweep: Option<(&str, &[f64])>, dump_solutions: bool) -> Result<Output, CliError> {
    let points = points(run, sweep)?;
    let scenarios = points
        .iter()
        .map(|(_, system)| Scenario::new(system))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..run.trials).map(move |t| (p, t))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(p, t)| run_trial(&scenarios[p], (p, t), run.seed, &run.schemes, dump_solutions))
        .collect();

    let csv_path = out_dir.join(format!("{stem}.csv"));
    let mut writer = csv::Writer::from_path(&csv_path)?;
    let mut header: Vec<&str> = sweep.map(|(k, _)| k).into_iter().collect();
    header.extend_from_slice(COLUMNS);
    writer.write_record(&header)?;
    let mut timing = csv::Writer::from_path(out_dir.join(format!("{stem}.timing.csv")))?;
    timing.write_record(["point", "scheme", "trial", "seconds"])?;
    let solutions = out_dir.join("solutions").join(stem);
    if dump_solutions {
        fs::create_dir_all(&solutions)?;
    }
    let mut rows = 0;
    for (r, ch) in results.iter().flatten() {
        let (axis, system) = &points[r.point];
        writer.write_record(csv_record(*axis, r, system))?;
        timing.write_record([r.point.to_string(), r.scheme.name().to_string(), r.trial.to_string(), format!("{:.3}", r.seconds)])?;
        rows += 1;
        if let (true, Some(ch)) = (dump_solutions, ch) {
            if let Some(d) = dump(r, ch) {
                let path = solutions.join(format!("p{}_t{}_{}.json", r.point, r.trial, r.scheme.name()));
                let text = serde_json::to_string_pretty(&d).map_err(|e| CliError::Io(e.to_string()))?;
                fs::write(path, text)?;
            }
        }
    }
    writer.flush()?;
    timing.flush()?;

    let config_path = out_dir.join(format!("{stem}.config.txt"));
    let mut text = render(run);
    if let Some((key, _)) = sweep {
        text.push_str(&format!("# this file: sweep over {key}\n"));
    }
    fs::write(&config_path, text)?;
    Ok(Output {
        csv: csv_path,
        config: config_path,
        timing: out_dir.join(format!("{stem}.timing.csv")),
        rows,
    })
}

/// Runs every sweep of `run` (or the base point when there is none) into
/// `out_dir`.
pub fn run_experiment(run: &RunConfig, out_dir: &Path, dump_solutions: bool) -> Result<Vec<Output>, CliError> {
    crate::config_file::validate(run)?;
    fs::create_dir_all(out_dir)?;
    if run.sweeps.is_empty() {
        return Ok(vec![run_one(run, out_dir, "run", None, dump_solutions)?]);
    }
    run.sweeps
        .iter()
        .map(|s| run_one(run, out_dir, &format!("sweep_{}", s.key), Some((&s.key, &s.values)), dump_solutions))
        .collect()
}
