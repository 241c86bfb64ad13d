use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ace_core::ace::{default_arch, CostNet};
use ace_core::distance::{median_heuristic_bandwidth, DistanceId};
use ace_core::gbi::{
    abc_kernel_sample, linear_gaussian_gt, rejection_sample_gt, sample_potential, CostFn, Method, OracleCost,
    Potential, PosteriorSamples, Proposal,
};
use ace_core::io::{self, ObservationFile, Provenance, SampleMetadata};
use ace_core::metrics::{run_benchmark, CellReport, GroupCache};
use ace_core::nn::FitConfig;
use ace_core::rng::{self, derive_seed};
use ace_core::targets::{
    build_target_set, make_misspecified_observations, make_well_specified_observations, MisspecConfig, SimDataset,
};
use ace_core::tasks::{prior_predictive_bounds, PriorBounds, TaskId};
use ace_core::Error;

use crate::config::RunConfig;
use crate::{Common, Outcome};

pub const SIMS_FILE: &str = "sims.csv";
pub const TARGETS_FILE: &str = "targets.csv";
pub const OBSERVATIONS_FILE: &str = "observations.json";
pub const DATASET_FILE: &str = "dataset.json";
pub const NET_FILE: &str = "net.json";
pub const TRAINING_LOG_FILE: &str = "training_log.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

/// Metadata shared by the data-generation outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetInfo {
    pub version: u32,
    pub task: TaskId,
    pub seed: u64,
    pub n_simulations: usize,
    pub n_targets: usize,
    pub distance: DistanceId,
    pub bounds: PriorBounds,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn config_hash(cfg: &RunConfig) -> String {
    io::sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

/// Collects outputs of one command and writes them write-once: an existing
/// file is accepted only if its content is identical.
struct Outputs {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        if path.exists() {
            let existing = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            if existing != contents {
                return Err(Error::InvalidConfig(format!(
                    "{} exists with different contents; choose another output directory",
                    path.display()
                ))
                .into());
            }
        } else {
            fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        }
        self.hashes.insert(name.to_string(), io::sha256_hex(contents));
        Ok(())
    }

    fn finish(mut self, command: &str, cfg: &RunConfig) -> Result<()> {
        let prov = Provenance {
            tool: "ace".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            outputs: std::mem::take(&mut self.hashes),
        };
        let text = serde_json::to_string_pretty(&prov)?;
        self.write(&format!("provenance-{command}.json"), text.as_bytes())
    }
}

fn resolve_distance(cfg: &RunConfig, sims: &SimDataset) -> Result<DistanceId> {
    if let Some(d) = &cfg.distance {
        return Ok(d.clone());
    }
    if cfg.task == TaskId::GaussianMixture {
        let flat = sims.x.as_slice().expect("standard layout");
        let mut r = rng::seeded(derive_seed(cfg.seed, "bandwidth"));
        let b = median_heuristic_bandwidth(&[flat], cfg.task.spec().x_dim, 1000, &mut r)?;
        return Ok(DistanceId::Mmd2 { bandwidth: b });
    }
    Ok(cfg.task.default_distance(None)?)
}

pub fn gen_data(common: &Common) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let task = cfg.task;
    let seed = cfg.seed;
    let bounds = prior_predictive_bounds(task, cfg.bounds_sims, &mut rng::seeded(derive_seed(seed, "bounds")))?;
    let sims = SimDataset::generate(task, cfg.n_simulations, derive_seed(seed, "sims"))?;

    let mut observations = Vec::new();
    for (seen, counts) in [(true, &cfg.observations), (false, &cfg.unseen_observations)] {
        let tag = if seen { "seen" } else { "unseen" };
        let mut r = rng::seeded(derive_seed(seed, &format!("observations-{tag}")));
        observations.extend(make_well_specified_observations(
            task,
            counts.well_specified,
            &format!("well_specified_{tag}-"),
            seen,
            &mut r,
        )?);
        let misspec = MisspecConfig {
            n_observations: counts.misspecified,
            ..cfg.misspec.clone()
        };
        observations.extend(make_misspecified_observations(
            task,
            &bounds,
            &misspec,
            &format!("misspecified_{tag}-"),
            seen,
            &mut r,
        )?);
    }
    let seen: Vec<_> = observations.iter().filter(|o| o.seen).cloned().collect();
    let sigma: Vec<f64> = bounds.std.iter().map(|s| s * cfg.noise.sigma_multiplier).collect();
    let targets = build_target_set(
        &sims,
        &cfg.noise,
        &sigma,
        &seen,
        &mut rng::seeded(derive_seed(seed, "targets")),
    )?;
    let info = DatasetInfo {
        version: 1,
        task,
        seed,
        n_simulations: sims.len(),
        n_targets: targets.len(),
        distance: resolve_distance(&cfg, &sims)?,
        bounds,
    };

    let mut out = Outputs::new(&cfg.output_dir)?;
    out.write(SIMS_FILE, io::sim_dataset_to_string(&sims).as_bytes())?;
    out.write(TARGETS_FILE, io::target_set_to_string(&targets).as_bytes())?;
    out.write(
        OBSERVATIONS_FILE,
        serde_json::to_string_pretty(&ObservationFile::new(task, observations))?.as_bytes(),
    )?;
    out.write(DATASET_FILE, serde_json::to_string_pretty(&info)?.as_bytes())?;
    out.finish("gen-data", &cfg)?;
    println!(
        "wrote {} simulations and {} targets to {}",
        sims.len(),
        targets.len(),
        cfg.output_dir.display()
    );
    Ok(Outcome::Success)
}

fn read_dataset(dir: &Path, task: TaskId) -> Result<(DatasetInfo, SimDataset)> {
    let info: DatasetInfo = serde_json::from_str(&io::read_to_string(&dir.join(DATASET_FILE))?)?;
    let sims = io::sim_dataset_from_str(&io::read_to_string(&dir.join(SIMS_FILE))?)?;
    if info.task != task || sims.task != task {
        return Err(Error::InvalidConfig(format!(
            "dataset in {} is for task {}, config says {task}",
            dir.display(),
            sims.task
        ))
        .into());
    }
    Ok((info, sims))
}

pub fn training_seed(cfg: &RunConfig) -> u64 {
    derive_seed(cfg.seed, &format!("fit-{}", cfg.fit.seed))
}

pub fn train(common: &Common, data: Option<PathBuf>) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let data = data.unwrap_or_else(|| cfg.output_dir.clone());
    let (info, sims) = read_dataset(&data, cfg.task)?;
    let targets = io::target_set_from_str(&io::read_to_string(&data.join(TARGETS_FILE))?)?;
    let arch = cfg.arch.clone().unwrap_or_else(|| default_arch(cfg.task));
    let fit = FitConfig {
        seed: training_seed(&cfg),
        ..cfg.fit.clone()
    };
    let (net, result) = CostNet::train(&sims, &targets, info.distance, arch, &fit)?;

    let mut log = String::from("epoch,train_loss,val_loss\n");
    for r in &result.history {
        log.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
    }
    let mut out = Outputs::new(&cfg.output_dir)?;
    out.write(NET_FILE, net.to_json()?.as_bytes())?;
    out.write(TRAINING_LOG_FILE, log.as_bytes())?;
    out.finish("train", &cfg)?;
    println!(
        "trained for {} epochs; best validation loss {} at epoch {}",
        result.history.len(),
        result.best_val_loss,
        result.best_epoch
    );
    if result.converged {
        Ok(Outcome::Success)
    } else {
        eprintln!("warning: validation loss still improving at max_epochs; best parameters saved");
        Ok(Outcome::Partial)
    }
}

pub struct SampleArgs {
    pub method: Method,
    pub betas: Vec<f64>,
    pub oracle: bool,
    pub net: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub obs_id: Option<String>,
    pub data: Option<PathBuf>,
}

pub fn sample_file_stem(method: Method, beta: f64, obs: &str) -> String {
    format!("samples/{}_beta{}_{}", method.name(), beta, obs)
}

pub fn sample(common: &Common, args: &SampleArgs) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let task = cfg.task;
    let data = args.data.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let betas = if !args.betas.is_empty() {
        args.betas.clone()
    } else {
        cfg.betas.clone().ok_or_else(|| Error::InvalidConfig("no --beta given and no betas configured".into()))?
    };
    if betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
        bail!(Error::InvalidConfig("beta must be positive".into()));
    }
    let method = match (args.method, args.oracle) {
        (Method::Ace, true) | (Method::OracleSlice, _) => Method::OracleSlice,
        (m, false) => m,
        (m, true) => bail!(Error::InvalidConfig(format!("--oracle only applies to method ace, not {}", m.name()))),
    };
    if method == Method::GtAnalytic && task != TaskId::LinearGaussian {
        bail!(Error::InvalidConfig(format!("gt-analytic is only available for linear_gaussian, not {task}")));
    }

    let obs_path = args.observations.clone().unwrap_or_else(|| data.join(OBSERVATIONS_FILE));
    let obs_file: ObservationFile = serde_json::from_str(&io::read_to_string(&obs_path)?)?;
    obs_file.validate()?;
    if obs_file.task != task {
        bail!(Error::InvalidConfig(format!("observations are for task {}, config says {task}", obs_file.task)));
    }
    let observations: Vec<_> = obs_file
        .observations
        .iter()
        .filter(|o| args.obs_id.as_ref().is_none_or(|id| &o.id == id))
        .collect();
    if observations.is_empty() {
        bail!(Error::InvalidConfig("no matching observations".into()));
    }

    let info: DatasetInfo = serde_json::from_str(&io::read_to_string(&data.join(DATASET_FILE))?)?;
    let distance = cfg.distance.clone().unwrap_or(info.distance);
    let net = match method {
        Method::Ace => {
            let path = args.net.clone().unwrap_or_else(|| data.join(NET_FILE));
            let net = CostNet::load(&path).with_context(|| format!("loading {}", path.display()))?;
            if net.task != task {
                bail!(Error::InvalidConfig(format!("network is for task {}, config says {task}", net.task)));
            }
            Some(net)
        }
        _ => None,
    };
    let sims = match method {
        Method::Abc => Some(read_dataset(&data, task)?.1),
        _ => None,
    };

    let mut out = Outputs::new(&cfg.output_dir)?;
    for &beta in &betas {
        for obs in &observations {
            let seed = derive_seed(cfg.seed, &format!("sample/{}/{beta}/{}", method.name(), obs.id));
            let mut r = rng::seeded(seed);
            let slice_cfg = ace_core::gbi::SliceConfig {
                seed: derive_seed(seed, &format!("slice-{}", cfg.slice.seed)),
                ..cfg.slice.clone()
            };
            let samples: PosteriorSamples = match method {
                Method::Ace | Method::OracleSlice => {
                    let oracle;
                    let conditioned;
                    let cost: &dyn CostFn = if let Some(net) = &net {
                        conditioned = net.at_observation(&obs.x)?;
                        &conditioned
                    } else {
                        oracle = OracleCost::new(task, &obs.x, distance.clone())?;
                        &oracle
                    };
                    let potential = Potential::new(cost, task.prior(), beta)?;
                    sample_potential(&potential, &slice_cfg, method, &obs.id)?
                }
                Method::GtAnalytic => linear_gaussian_gt(beta, &obs.x)?.samples(cfg.slice.n_samples, beta, &obs.id, &mut r),
                Method::GtRejection => {
                    let oracle = OracleCost::new(task, &obs.x, distance.clone())?;
                    let proposal = if task == TaskId::GaussianMixture {
                        Proposal::Gaussian {
                            mean: obs.theta.clone(),
                            variance: 50.0 / beta,
                        }
                    } else {
                        Proposal::Prior
                    };
                    rejection_sample_gt(task, beta, &oracle, &proposal, cfg.slice.n_samples, &obs.id, &cfg.rejection, &mut r)?
                }
                Method::Abc => {
                    let sims = sims.as_ref().expect("loaded for abc");
                    abc_kernel_sample(sims, &obs.x, &distance, beta, cfg.abc_min_accept, &obs.id, &mut r)?.samples
                }
            };
            let stem = sample_file_stem(method, beta, &obs.id);
            out.write(&format!("{stem}.csv"), io::samples_to_csv(&samples.samples).as_bytes())?;
            let meta = SampleMetadata::from_samples(&samples, seed);
            out.write(&format!("{stem}.json"), serde_json::to_string_pretty(&meta)?.as_bytes())?;
            println!("{stem}: {} samples", samples.len());
        }
    }
    out.finish(&format!("sample-{}", method.name()), &cfg)?;
    Ok(Outcome::Success)
}

/// Finished benchmark groups stored as JSON files named by group hash.
struct FileCache {
    dir: PathBuf,
    resume: bool,
}

impl GroupCache for FileCache {
    fn load(&self, hash: &str) -> Option<Vec<CellReport>> {
        if !self.resume {
            return None;
        }
        let text = fs::read_to_string(self.dir.join(format!("{hash}.json"))).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn store(&self, hash: &str, cells: &[CellReport]) -> ace_core::Result<()> {
        fs::create_dir_all(&self.dir)?;
        fs::write(self.dir.join(format!("{hash}.json")), serde_json::to_string(cells)?)?;
        Ok(())
    }
}

pub fn benchmark(common: &Common, jobs: Option<usize>, resume: bool) -> Result<Outcome> {
    let cfg = load_config(common)?;
    let bench = cfg.benchmark_config();
    bench.validate()?;
    let cache = FileCache {
        dir: cfg.output_dir.join("cells"),
        resume,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("building thread pool")?;
    let report = pool.install(|| run_benchmark(&bench, &cache))?;

    let mut out = Outputs::new(&cfg.output_dir)?;
    out.write(REPORT_JSON, serde_json::to_string_pretty(&report)?.as_bytes())?;
    out.write(REPORT_CSV, report.to_csv().as_bytes())?;
    out.finish("benchmark", &cfg)?;
    let failed = report.cells.iter().filter(|c| c.status != ace_core::metrics::CellStatus::Ok).count();
    println!("{} cells, {failed} failed", report.cells.len());
    Ok(if report.is_partial() { Outcome::Partial } else { Outcome::Success })
}
