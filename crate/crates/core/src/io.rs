//! Plain-text artifact formats.
//!
//! Numeric files are CSV-like with `#` header lines carrying metadata. Floats
//! are written in shortest round-trip form, so write → read is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gbi::{Method, PosteriorSamples};
use crate::targets::{Observation, SimDataset, TargetKind, TargetSet};
use crate::tasks::TaskId;

fn push_row(out: &mut String, prefix: Option<&str>, row: impl IntoIterator<Item = f64>) {
    let mut first = true;
    if let Some(p) = prefix {
        out.push_str(p);
        first = false;
    }
    for v in row {
        if !first {
            out.push(',');
        }
        let _ = write!(out, "{v}");
        first = false;
    }
    out.push('\n');
}

fn parse_row(line: &str, expected: usize, lineno: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(format!("line {lineno}: {e}")))?;
    if vals.len() != expected {
        return Err(Error::Format(format!(
            "line {lineno}: expected {expected} columns, found {}",
            vals.len()
        )));
    }
    Ok(vals)
}

/// Header `key=value` pairs and the remaining data lines with their numbers.
fn split_header<'a>(text: &'a str, magic: &str) -> Result<(BTreeMap<&'a str, &'a str>, Vec<(usize, &'a str)>)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == magic => {}
        _ => return Err(Error::Format(format!("missing '{magic}' header"))),
    }
    let mut meta = BTreeMap::new();
    let mut data = Vec::new();
    for (i, l) in lines {
        if let Some(h) = l.strip_prefix('#') {
            if let Some((k, v)) = h.trim().split_once('=') {
                meta.insert(k.trim(), v.trim());
            }
        } else if !l.trim().is_empty() {
            data.push((i + 1, l));
        }
    }
    Ok((meta, data))
}

fn meta_get<T: std::str::FromStr>(meta: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
    meta.get(key)
        .ok_or_else(|| Error::Format(format!("missing header field '{key}'")))?
        .parse()
        .map_err(|_| Error::Format(format!("bad header field '{key}'")))
}

const SIM_MAGIC: &str = "# ace sim-dataset v1";

/// Header then `n` parameter rows followed by `n` simulation rows.
pub fn sim_dataset_to_string(d: &SimDataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SIM_MAGIC}");
    let _ = writeln!(out, "# task={}", d.task);
    let _ = writeln!(out, "# seed={}", d.seed);
    let _ = writeln!(out, "# n={}", d.len());
    let _ = writeln!(out, "# theta_dim={}", d.theta.ncols());
    let _ = writeln!(out, "# x_width={}", d.x.ncols());
    for r in d.theta.rows() {
        push_row(&mut out, None, r.iter().copied());
    }
    for r in d.x.rows() {
        push_row(&mut out, None, r.iter().copied());
    }
    out
}

pub fn sim_dataset_from_str(text: &str) -> Result<SimDataset> {
    let (meta, data) = split_header(text, SIM_MAGIC)?;
    let task: TaskId = meta_get::<String>(&meta, "task")?.parse()?;
    let seed: u64 = meta_get(&meta, "seed")?;
    let n: usize = meta_get(&meta, "n")?;
    let td: usize = meta_get(&meta, "theta_dim")?;
    let xw: usize = meta_get(&meta, "x_width")?;
    if data.len() != 2 * n {
        return Err(Error::Format(format!("expected {} data rows, found {}", 2 * n, data.len())));
    }
    let mut theta = Vec::with_capacity(n * td);
    let mut x = Vec::with_capacity(n * xw);
    for (k, (lineno, l)) in data.iter().enumerate() {
        if k < n {
            theta.extend(parse_row(l, td, *lineno)?);
        } else {
            x.extend(parse_row(l, xw, *lineno)?);
        }
    }
    let shape_err = |_| Error::Format("inconsistent dataset shape".into());
    SimDataset::new(
        task,
        seed,
        Array2::from_shape_vec((n, td), theta).map_err(shape_err)?,
        Array2::from_shape_vec((n, xw), x).map_err(shape_err)?,
    )
}

const TARGET_MAGIC: &str = "# ace target-set v1";

fn kind_name(k: TargetKind) -> &'static str {
    match k {
        TargetKind::Raw => "raw",
        TargetKind::Augmented => "augmented",
        TargetKind::Observation => "observation",
    }
}

/// One row per target: `kind,source,x...`. `source` is empty except for
/// augmented rows.
pub fn target_set_to_string(t: &TargetSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TARGET_MAGIC}");
    let _ = writeln!(out, "# dataset={}", t.dataset);
    let _ = writeln!(out, "# rows={}", t.len());
    let _ = writeln!(out, "# width={}", t.rows.ncols());
    let sigma: Vec<String> = t.sigma.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "# sigma={}", sigma.join(";"));
    for ((r, k), s) in t.rows.rows().into_iter().zip(&t.kinds).zip(&t.sources) {
        let prefix = format!("{},{}", kind_name(*k), s.map(|v| v.to_string()).unwrap_or_default());
        push_row(&mut out, Some(&prefix), r.iter().copied());
    }
    out
}

pub fn target_set_from_str(text: &str) -> Result<TargetSet> {
    let (meta, data) = split_header(text, TARGET_MAGIC)?;
    let n: usize = meta_get(&meta, "rows")?;
    let w: usize = meta_get(&meta, "width")?;
    let dataset: String = meta_get(&meta, "dataset")?;
    let sigma_field: String = meta_get(&meta, "sigma")?;
    let sigma = if sigma_field.is_empty() {
        Vec::new()
    } else {
        sigma_field
            .split(';')
            .map(|s| s.parse::<f64>().map_err(|e| Error::Format(e.to_string())))
            .collect::<Result<_>>()?
    };
    if data.len() != n {
        return Err(Error::Format(format!("expected {n} target rows, found {}", data.len())));
    }
    let mut rows = Vec::with_capacity(n * w);
    let mut kinds = Vec::with_capacity(n);
    let mut sources = Vec::with_capacity(n);
    for (lineno, l) in data {
        let mut parts = l.splitn(3, ',');
        let kind = match parts.next() {
            Some("raw") => TargetKind::Raw,
            Some("augmented") => TargetKind::Augmented,
            Some("observation") => TargetKind::Observation,
            other => return Err(Error::Format(format!("line {lineno}: bad target kind {other:?}"))),
        };
        let source = match parts.next() {
            Some("") => None,
            Some(s) => Some(s.parse().map_err(|_| Error::Format(format!("line {lineno}: bad source")))?),
            None => return Err(Error::Format(format!("line {lineno}: truncated row"))),
        };
        rows.extend(parse_row(parts.next().unwrap_or(""), w, lineno)?);
        kinds.push(kind);
        sources.push(source);
    }
    Ok(TargetSet {
        rows: Array2::from_shape_vec((n, w), rows).map_err(|_| Error::Format("inconsistent target shape".into()))?,
        kinds,
        sources,
        sigma,
        dataset,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationFile {
    pub version: u32,
    pub task: TaskId,
    pub observations: Vec<Observation>,
}

impl ObservationFile {
    pub fn new(task: TaskId, observations: Vec<Observation>) -> Self {
        Self {
            version: 1,
            task,
            observations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Format(format!("unsupported observation file version {}", self.version)));
        }
        let w = self.task.spec().data_width();
        for o in &self.observations {
            if o.x.len() != w {
                return Err(Error::dims("observation", w, o.x.len()));
            }
        }
        Ok(())
    }
}

/// Samples CSV with a `theta_1..theta_D` header.
pub fn samples_to_csv(s: &Array2<f64>) -> String {
    let mut out = (1..=s.ncols()).map(|i| format!("theta_{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for r in s.rows() {
        push_row(&mut out, None, r.iter().copied());
    }
    out
}

pub fn samples_from_csv(text: &str) -> Result<Array2<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Empty("samples file"))?;
    let d = header.split(',').count();
    let mut vals = Vec::new();
    let mut n = 0;
    for (i, l) in lines {
        vals.extend(parse_row(l, d, i + 1)?);
        n += 1;
    }
    Array2::from_shape_vec((n, d), vals).map_err(|_| Error::Format("inconsistent sample shape".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMetadata {
    pub method: Method,
    pub beta: f64,
    pub observation: String,
    pub seed: u64,
    pub n_samples: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

impl SampleMetadata {
    pub fn from_samples(s: &PosteriorSamples, seed: u64) -> Self {
        Self {
            method: s.method,
            beta: s.beta,
            observation: s.observation.clone(),
            seed,
            n_samples: s.len(),
            diagnostics: s.diagnostics.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// File name → SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::targets::{build_target_set, make_well_specified_observations, NoiseConfig};

    #[test]
    fn dataset_round_trip_is_lossless() {
        let d = SimDataset::generate(TaskId::GaussianMixture, 30, 5).unwrap();
        let back = sim_dataset_from_str(&sim_dataset_to_string(&d)).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn truncated_dataset_is_rejected() {
        let d = SimDataset::generate(TaskId::Uniform1d, 10, 5).unwrap();
        let s = sim_dataset_to_string(&d);
        let cut: String = s.lines().take(12).map(|l| format!("{l}\n")).collect();
        assert!(matches!(sim_dataset_from_str(&cut), Err(Error::Format(_))));
        assert!(sim_dataset_from_str("garbage").is_err());
    }

    #[test]
    fn target_round_trip_is_lossless() {
        let d = SimDataset::generate(TaskId::TwoMoons, 40, 5).unwrap();
        let mut r = rng::seeded(1);
        let obs = make_well_specified_observations(TaskId::TwoMoons, 3, "o", true, &mut r).unwrap();
        let noise = NoiseConfig {
            n_augmented: 5,
            sigma_multiplier: 2.0,
        };
        let t = build_target_set(&d, &noise, &[0.1, 0.2], &obs, &mut r).unwrap();
        assert_eq!(t, target_set_from_str(&target_set_to_string(&t)).unwrap());
    }

    #[test]
    fn samples_round_trip() {
        let s = Array2::from_shape_fn((7, 3), |(i, j)| i as f64 * 0.1 - j as f64 / 3.0);
        let text = samples_to_csv(&s);
        assert!(text.starts_with("theta_1,theta_2,theta_3\n"));
        assert_eq!(samples_from_csv(&text).unwrap(), s);
    }
}
