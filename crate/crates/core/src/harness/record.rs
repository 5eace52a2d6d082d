use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentId;
use crate::error::{Result, SiviError};

pub const CSV_HEADER: [&str; 7] = [
    "experiment",
    "seed",
    "param_json",
    "metric",
    "value",
    "stderr",
    "seconds",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl From<usize> for ParamValue {
    fn from(v: usize) -> Self {
        Self::Int(v as i64)
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        Self::Float(v)
    }
}

impl From<&str> for ParamValue {
    fn from(v: &str) -> Self {
        Self::Text(v.to_string())
    }
}

/// Parameter tuple; keys are kept sorted so the JSON form is canonical.
pub type Params = BTreeMap<String, ParamValue>;

pub fn params<const N: usize>(pairs: [(&str, ParamValue); N]) -> Params {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn param_json(p: &Params) -> String {
    serde_json::to_string(p).expect("parameter maps always serialize")
}

/// One CSV row. Aggregates over seeds carry no seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub experiment: ExperimentId,
    pub seed: Option<u64>,
    pub params: Params,
    pub metric: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub seconds: Option<f64>,
}

impl ExperimentRecord {
    pub fn new(experiment: ExperimentId, seed: Option<u64>, params: Params, metric: &str, value: f64) -> Self {
        Self {
            experiment,
            seed,
            params,
            metric: metric.to_string(),
            value,
            stderr: None,
            seconds: None,
        }
    }

    pub fn with_stderr(mut self, stderr: f64) -> Self {
        self.stderr = Some(stderr);
        self
    }

    pub fn with_seconds(mut self, seconds: Option<f64>) -> Self {
        self.seconds = seconds;
        self
    }

    fn sort_key(&self) -> (ExperimentId, String, Option<u64>, &str) {
        (self.experiment, param_json(&self.params), self.seed, &self.metric)
    }

    pub fn param(&self, key: &str) -> Option<&ParamValue> {
        self.params.get(key)
    }

    pub fn param_f64(&self, key: &str) -> Option<f64> {
        match self.params.get(key)? {
            ParamValue::Int(i) => Some(*i as f64),
            ParamValue::Float(f) => Some(*f),
            ParamValue::Text(_) => None,
        }
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        match self.params.get(key)? {
            ParamValue::Text(s) => Some(s),
            _ => None,
        }
    }
}

/// Sorts by experiment, parameter tuple, seed and metric.
pub fn sort_records(records: &mut [ExperimentRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv<W: std::io::Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &sorted {
        w.write_record([
            r.experiment.as_str().to_string(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            param_json(&r.params),
            r.metric.clone(),
            r.value.to_string(),
            fmt_opt(r.stderr),
            fmt_opt(r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_csv(records, std::fs::File::create(path)?)
}

fn parse_opt_f64(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| SiviError::InvalidConfig(format!("bad number '{s}' in CSV")))
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(SiviError::InvalidConfig(format!("unexpected CSV header {header:?}")));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let seed = if row[1].is_empty() {
            None
        } else {
            Some(
                row[1]
                    .parse()
                    .map_err(|_| SiviError::InvalidConfig(format!("bad seed '{}'", &row[1])))?,
            )
        };
        out.push(ExperimentRecord {
            experiment: row[0].parse()?,
            seed,
            params: serde_json::from_str(&row[2])?,
            metric: row[3].to_string(),
            value: parse_opt_f64(&row[4])?.ok_or_else(|| SiviError::InvalidConfig("empty value in CSV".into()))?,
            stderr: parse_opt_f64(&row[5])?,
            seconds: parse_opt_f64(&row[6])?,
        });
    }
    Ok(out)
}

pub fn load_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    read_csv(std::fs::File::open(path)?)
}

/// Provenance of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub experiments: Vec<ExperimentId>,
    pub code_version: String,
    pub rng_algorithm: String,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub flagged_records: usize,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn start(config: serde_json::Value, experiments: Vec<ExperimentId>, threads: usize) -> Self {
        Self {
            config,
            experiments,
            code_version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            rng_algorithm: crate::ndcore::RNG_ALGORITHM.to_string(),
            threads,
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: None,
            flagged_records: 0,
            warnings: Vec::new(),
        }
    }

    pub fn finish(&mut self) {
        self.finished_at = Some(chrono::Utc::now().to_rfc3339());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
