//! Aggregates of a result CSV per sweep point and scheme.
//!
//! Rows whose trial failed (QoS infeasible or solver error) enter every
//! statistic as zero, since such a trial delivers no admissible design. The
//! `feasible` column counts the successful ones. Percentiles use the
//! nearest-rank rule: the p-th percentile of n sorted values is the value at
//! rank `max(1, ⌈p·n/100⌉)`.

use std::path::Path;

use crate::CliError;

pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn nearest_rank(sorted: &[f64], percent: f64) -> f64 {
    let rank = ((percent / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stats {
    pub median: f64,
    pub mean: f64,
    pub p10: f64,
    pub p90: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            median: median(&sorted),
            mean: mean(&sorted),
            p10: nearest_rank(&sorted, 10.0),
            p90: nearest_rank(&sorted, 90.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    /// Sweep coordinates, as written in the input.
    pub coords: Vec<String>,
    pub scheme: String,
    pub trials: usize,
    pub feasible: usize,
    pub ee: Stats,
    pub sum_rate: Stats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub coord_names: Vec<String>,
    pub groups: Vec<Group>,
}

impl Summary {
    pub fn group(&self, coords: &[&str], scheme: &str) -> Option<&Group> {
        self.groups
            .iter()
            .find(|g| g.scheme == scheme && g.coords.iter().map(String::as_str).eq(coords.iter().copied()))
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.coord_names.clone();
        for h in ["scheme", "trials", "feasible"] {
            header.push(h.into());
        }
        for metric in ["ee", "sum_rate"] {
            for stat in ["median", "mean", "p10", "p90"] {
                header.push(format!("{metric}_{stat}"));
            }
        }
        w.write_record(&header)?;
        for g in &self.groups {
            let mut row = g.coords.clone();
            row.push(g.scheme.clone());
            row.push(g.trials.to_string());
            row.push(g.feasible.to_string());
            for s in [&g.ee, &g.sum_rate] {
                row.extend([s.median, s.mean, s.p10, s.p90].iter().map(|x| x.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Csv(format!("missing column '{name}'")))
}

/// Groups in order of first appearance. Columns before `scheme` are the
/// sweep coordinates.
pub fn summarize(path: &Path) -> Result<Summary, CliError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let scheme = column(&headers, "scheme")?;
    let (status, ee, rate) = (column(&headers, "status")?, column(&headers, "ee")?, column(&headers, "sum_rate")?);
    let mut keys: Vec<(Vec<String>, String)> = Vec::new();
    let mut samples: Vec<(Vec<f64>, Vec<f64>, usize)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let key = (record.iter().take(scheme).map(String::from).collect(), record[scheme].to_string());
        let i = keys.iter().position(|k| *k == key).unwrap_or_else(|| {
            keys.push(key);
            samples.push((Vec::new(), Vec::new(), 0));
            keys.len() - 1
        });
        let ok = &record[status] == "ok";
        let number = |j: usize| -> Result<f64, CliError> {
            if !ok {
                return Ok(0.0);
            }
            record[j]
                .parse()
                .map_err(|_| CliError::Csv(format!("'{}' in column '{}' is not a number", &record[j], &headers[j])))
        };
        samples[i].0.push(number(ee)?);
        samples[i].1.push(number(rate)?);
        samples[i].2 += usize::from(ok);
    }
    if keys.is_empty() {
        return Err(CliError::Empty(path.display().to_string()));
    }
    let groups = keys
        .into_iter()
        .zip(samples)
        .map(|((coords, scheme), (ee, rate, feasible))| Group {
            coords,
            scheme,
            trials: ee.len(),
            feasible,
            ee: Stats::of(&ee),
            sum_rate: Stats::of(&rate),
        })
        .collect();
    Ok(Summary {
        coord_names: headers.iter().take(scheme).map(String::from).collect(),
        groups,
    })
}
