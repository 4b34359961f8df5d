//! File formats.
//!
//! Line configuration and controller state use a flat `key = value` format;
//! `#` starts a comment and list values are comma separated:
//!
//! ```text
//! # line configuration
//! beta_s  = 10            # seconds between cabins
//! gamma   = 8             # seats per cabin
//! r0_mean = 0             # riders aboard cabins reaching station 1
//! sigma   = 0, 0.04, 0.46, 1
//! delay_s = 10, 10, 10    # optional, defaults to beta_s on every link
//! names   = a, b, c, d    # optional
//! r0_pmf  = 1, 0, 0, ...  # optional, gamma+1 probabilities
//! ```
//!
//! ```text
//! # controller state
//! queues = 0, 0, 0, 0
//! lambda = 0.5, 0.2, 0.3, 0
//! sigma  = 0, 0.04, 0.46, 1   # optional, defaults to the line's sigma
//! r0     = 0                  # optional, defaults to r0_mean
//! ```
//!
//! Rate profiles are CSV with header `time_s,station_1,...,station_M`; each
//! row's rates (passengers per second) hold until the next row.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::control::ObservedState;
use crate::model::{
    config_violations, profile_violations, LineConfig, OccupancyModel, RateProfile, StationConfig,
    ValidationReport,
};
use crate::sim::SimTrace;
use crate::stats::{Estimate, WaitingStats};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Invalid(#[from] ValidationReport),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl IoError {
    /// True for problems with the user's input rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(self, IoError::Parse { .. } | IoError::Invalid(_))
    }

    fn parse(line: usize, message: impl Into<String>) -> Self {
        IoError::Parse {
            line,
            message: message.into(),
        }
    }
}

pub fn read_file(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), IoError> {
    std::fs::write(path, contents).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    fn parse(text: &str, known: &[&str]) -> Result<Self, IoError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| IoError::parse(line, format!("expected `key = value`, got `{content}`")))?;
            let key = key.trim().to_string();
            if !known.contains(&key.as_str()) {
                return Err(IoError::parse(line, format!("unknown key `{key}`")));
            }
            if entries.insert(key.clone(), (line, value.trim().to_string())).is_some() {
                return Err(IoError::parse(line, format!("duplicate key `{key}`")));
            }
        }
        Ok(KeyValues { entries })
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.entries.get(key)
    }

    fn required(&self, key: &str) -> Result<&(usize, String), IoError> {
        self.raw(key)
            .ok_or_else(|| IoError::parse(0, format!("missing key `{key}`")))
    }

    fn number(&self, key: &str) -> Result<Option<f64>, IoError> {
        self.raw(key)
            .map(|(line, v)| parse_f64(v, *line, key))
            .transpose()
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, IoError> {
        self.raw(key)
            .map(|(line, v)| {
                v.split(',')
                    .map(|item| parse_f64(item.trim(), *line, key))
                    .collect()
            })
            .transpose()
    }
}

fn parse_f64(text: &str, line: usize, what: &str) -> Result<f64, IoError> {
    text.parse::<f64>()
        .map_err(|_| IoError::parse(line, format!("`{what}`: `{text}` is not a number")))
}

/// Parses and validates a line configuration.
pub fn parse_line_config(text: &str) -> Result<LineConfig, IoError> {
    let kv = KeyValues::parse(
        text,
        &["beta_s", "gamma", "r0_mean", "sigma", "delay_s", "names", "r0_pmf"],
    )?;
    let beta = kv.number("beta_s")?.ok_or_else(|| IoError::parse(0, "missing key `beta_s`"))?;
    let (gline, graw) = kv.required("gamma")?;
    let gamma: u32 = graw
        .parse()
        .map_err(|_| IoError::parse(*gline, format!("`gamma`: `{graw}` is not a positive integer")))?;
    let r0_mean = kv.number("r0_mean")?.unwrap_or(0.0);
    let sigmas = kv.list("sigma")?.ok_or_else(|| IoError::parse(0, "missing key `sigma`"))?;
    let links = sigmas.len().saturating_sub(1);
    let travel_delays = kv.list("delay_s")?.unwrap_or_else(|| vec![beta; links]);
    let names: Vec<String> = match kv.raw("names") {
        Some((line, v)) => {
            let names: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
            if names.len() != sigmas.len() {
                return Err(IoError::parse(*line, "`names` must have one entry per station"));
            }
            names
        }
        None => (1..=sigmas.len()).map(|i| format!("station_{i}")).collect(),
    };
    let occupancy = match kv.list("r0_pmf")? {
        Some(pmf) => OccupancyModel::Empirical { pmf },
        None => OccupancyModel::Deterministic,
    };
    let config = LineConfig {
        beta,
        gamma,
        stations: names
            .into_iter()
            .zip(sigmas)
            .map(|(name, sigma)| StationConfig { name, sigma })
            .collect(),
        r0_mean,
        travel_delays,
        occupancy,
    };
    let violations = config_violations(&config);
    if violations.is_empty() {
        Ok(config)
    } else {
        Err(ValidationReport { violations }.into())
    }
}

fn join(values: impl IntoIterator<Item = impl ToString>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

pub fn write_line_config(config: &LineConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "beta_s = {}", config.beta);
    let _ = writeln!(out, "gamma = {}", config.gamma);
    let _ = writeln!(out, "r0_mean = {}", config.r0_mean);
    let _ = writeln!(out, "sigma = {}", join(config.sigmas()));
    if !config.travel_delays.is_empty() {
        let _ = writeln!(out, "delay_s = {}", join(&config.travel_delays));
    }
    let _ = writeln!(out, "names = {}", join(config.stations.iter().map(|s| &s.name)));
    if let OccupancyModel::Empirical { pmf } = &config.occupancy {
        let _ = writeln!(out, "r0_pmf = {}", join(pmf));
    }
    out
}

/// Parses a controller state file against `config`.
pub fn parse_state(text: &str, config: &LineConfig) -> Result<ObservedState, IoError> {
    let kv = KeyValues::parse(text, &["queues", "lambda", "sigma", "r0"])?;
    let n = config.n_stations();
    let check_len = |key: &str, v: &[f64]| -> Result<(), IoError> {
        let line = kv.raw(key).map_or(0, |(l, _)| *l);
        if v.len() != n {
            return Err(IoError::parse(line, format!("`{key}` needs {n} values, got {}", v.len())));
        }
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(IoError::parse(line, format!("`{key}` values must be finite and >= 0")));
        }
        Ok(())
    };
    let queues = kv.list("queues")?.unwrap_or_else(|| vec![0.0; n]);
    check_len("queues", &queues)?;
    if queues.iter().any(|q| q.fract() != 0.0) {
        let line = kv.raw("queues").map_or(0, |(l, _)| *l);
        return Err(IoError::parse(line, "`queues` must be integers"));
    }
    let lambda_hat = kv.list("lambda")?.ok_or_else(|| IoError::parse(0, "missing key `lambda`"))?;
    check_len("lambda", &lambda_hat)?;
    let sigma_hat = kv.list("sigma")?.unwrap_or_else(|| config.sigmas());
    check_len("sigma", &sigma_hat)?;
    if sigma_hat.iter().any(|s| *s > 1.0) {
        let line = kv.raw("sigma").map_or(0, |(l, _)| *l);
        return Err(IoError::parse(line, "`sigma` values must lie in [0,1]"));
    }
    let r0_hat = kv.number("r0")?.unwrap_or(config.r0_mean);
    if !(r0_hat >= 0.0 && r0_hat <= f64::from(config.gamma)) {
        let line = kv.raw("r0").map_or(0, |(l, _)| *l);
        return Err(IoError::parse(line, "`r0` must lie in [0, gamma]"));
    }
    Ok(ObservedState {
        queues: queues.iter().map(|&q| q as u64).collect(),
        lambda_hat,
        sigma_hat,
        r0_hat,
    })
}

/// Parses and validates a rate profile CSV. Lines starting with `#` are
/// comments.
pub fn parse_rate_profile(text: &str) -> Result<RateProfile, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let header_line = text
        .lines()
        .position(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map_or(1, |i| i + 1);
    let columns = header.len().saturating_sub(1);
    let well_formed = header.get(0) == Some("time_s")
        && columns >= 1
        && header
            .iter()
            .skip(1)
            .enumerate()
            .all(|(i, h)| h == format!("station_{}", i + 1));
    if !well_formed {
        return Err(IoError::parse(
            header_line,
            "header must be `time_s,station_1,...,station_M`",
        ));
    }
    let mut breakpoints = Vec::new();
    let mut rates = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(IoError::parse(
                line,
                format!("expected {} fields, got {}", header.len(), record.len()),
            ));
        }
        let time = parse_f64(&record[0], line, "time_s")?;
        if let Some(&prev) = breakpoints.last() {
            if !(time > prev) {
                return Err(IoError::parse(line, format!("time_s {time} is not after {prev}")));
            }
        }
        if !(time >= 0.0 && time.is_finite()) {
            return Err(IoError::parse(line, "time_s must be finite and >= 0"));
        }
        let mut row = Vec::with_capacity(columns);
        for (i, cell) in record.iter().skip(1).enumerate() {
            let r = parse_f64(cell, line, &format!("station_{}", i + 1))?;
            if !(r >= 0.0 && r.is_finite()) {
                return Err(IoError::parse(line, format!("station_{}: negative or non-finite rate {r}", i + 1)));
            }
            row.push(r);
        }
        breakpoints.push(time);
        rates.push(row);
    }
    let profile = RateProfile { breakpoints, rates };
    let violations = profile_violations(&profile, None);
    if violations.is_empty() {
        Ok(profile)
    } else {
        Err(ValidationReport { violations }.into())
    }
}

pub fn write_rate_profile(profile: &RateProfile) -> String {
    let mut out = String::from("time_s");
    for m in 1..=profile.n_stations() {
        let _ = write!(out, ",station_{m}");
    }
    out.push('\n');
    for (t, row) in profile.breakpoints.iter().zip(&profile.rates) {
        let _ = write!(out, "{t}");
        for r in row {
            let _ = write!(out, ",{r}");
        }
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn estimate_cells(e: &Option<Estimate>) -> (String, String) {
    match e {
        Some(e) => (e.mean.to_string(), opt(e.half_width)),
        None => (String::new(), String::new()),
    }
}

pub const STATS_HEADER: &str = "station,bin_start_s,bin_end_s,mean_wait_s,wait_ci95_s,mean_queue,queue_ci95,mean_eta,eta_ci95,runs_with_wait,boarded";

/// One row per station and bin; empty cells mark absent values.
pub fn write_stats_csv(stats: &WaitingStats) -> String {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for st in &stats.stations {
        for b in &st.bins {
            let (w, wc) = estimate_cells(&b.wait);
            let (q, qc) = estimate_cells(&b.queue);
            let (e, ec) = estimate_cells(&b.eta);
            let n = b.wait.as_ref().map_or(0, |e| e.n);
            let _ = writeln!(
                out,
                "{},{},{},{w},{wc},{q},{qc},{e},{ec},{n},{}",
                st.station + 1,
                b.start,
                b.end,
                b.boarded
            );
        }
    }
    out
}

pub const SERVICES_HEADER: &str =
    "station,service,time_s,occupancy_before,leavers,eta,capacity,queue_before,boarded,queue_after";

pub fn write_services_csv(trace: &SimTrace) -> String {
    let mut out = String::from(SERVICES_HEADER);
    out.push('\n');
    for s in &trace.services {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            s.station + 1,
            s.service,
            s.time,
            s.occupancy_before,
            s.leavers,
            s.eta_applied,
            s.capacity,
            s.queue_before,
            s.boarded,
            s.queue_after
        );
    }
    out
}

pub const PASSENGERS_HEADER: &str = "station,arrival_time_s,board_time_s,wait_s";

pub fn write_passengers_csv(trace: &SimTrace) -> String {
    let mut out = String::from(PASSENGERS_HEADER);
    out.push('\n');
    for p in &trace.passengers {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.station + 1,
            p.arrival_time,
            opt(p.board_time),
            opt(p.wait())
        );
    }
    out
}

/// Controller decisions and estimator values, one row per service instant.
pub fn write_intervals_csv(trace: &SimTrace) -> String {
    let n = trace.n_stations;
    let mut out = String::from("service,time_s");
    for prefix in ["eta", "lambda_hat", "lambda_in", "sigma_hat"] {
        for m in 1..=n {
            let _ = write!(out, ",{prefix}_{m}");
        }
    }
    out.push('\n');
    for i in &trace.intervals {
        let _ = write!(out, "{},{}", i.service, i.time);
        for v in &i.eta {
            let _ = write!(out, ",{v}");
        }
        for list in [&i.lambda_hat, &i.lambda_in, &i.sigma_hat] {
            for v in list {
                let _ = write!(out, ",{v}");
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOUR_STATION: &str = "\
# four-station line
beta_s = 10
gamma = 8
r0_mean = 0
sigma = 0, 0.04, 0.46, 1
";

    #[test]
    fn parses_line_config_with_defaults() {
        let c = parse_line_config(FOUR_STATION).unwrap();
        assert_eq!(c, LineConfig::new(10.0, 8, &[0.0, 0.04, 0.46, 1.0], 0.0));
        assert_eq!(parse_line_config(&write_line_config(&c)).unwrap(), c);
    }

    #[test]
    fn config_errors_carry_line_numbers() {
        let err = parse_line_config("beta_s = 10\ngamma = eight\nsigma = 0\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
        let err = parse_line_config("beta_s = 10\ngamma = 8\nsigma = 0, 1.2\n").unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("sigma out of [0,1]"));
        let err = parse_line_config("beta = 10\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn parses_two_segment_profile() {
        let p = parse_rate_profile("time_s,station_1,station_2\n0,0.5,0.05\n3600,0.2,0.1\n").unwrap();
        assert_eq!(p.breakpoints, vec![0.0, 3600.0]);
        assert_eq!(p.rates, vec![vec![0.5, 0.05], vec![0.2, 0.1]]);
    }

    #[test]
    fn profile_errors_name_the_line() {
        let err = parse_rate_profile("time_s,station_1\n0,0.5\n60,-0.1\n").unwrap_err();
        assert_eq!(err.to_string(), "line 3: station_1: negative or non-finite rate -0.1");
        let err = parse_rate_profile("time_s,station_1\n0,0.5\n0,0.1\n").unwrap_err();
        assert!(err.to_string().starts_with("line 3:"), "{err}");
        let err = parse_rate_profile("time_s,station_1\n0,abc\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
        let err = parse_rate_profile("t,station_1\n0,1\n").unwrap_err();
        assert!(err.to_string().starts_with("line 1:"), "{err}");
        let err = parse_rate_profile("# c\ntime_s,station_2\n0,1\n").unwrap_err();
        assert!(err.to_string().contains("header"), "{err}");
    }

    #[test]
    fn state_file() {
        let c = parse_line_config(FOUR_STATION).unwrap();
        let s = parse_state("queues = 1, 0, 0, 2\nlambda = 0.5, 0.2, 0.3, 0\n", &c).unwrap();
        assert_eq!(s.queues, vec![1, 0, 0, 2]);
        assert_eq!(s.sigma_hat, c.sigmas());
        assert!(parse_state("lambda = 0.5\n", &c).is_err());
        assert!(parse_state("queues = 1.5, 0, 0, 0\nlambda = 0,0,0,0\n", &c).is_err());
    }
}
