//! End-to-end benchmark: simulate, build targets, train, sample with every
//! method at every temperature, and score against ground truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{c2st, cost_accuracy, predictive_distance, C2stConfig};
use crate::ace::{default_arch, CostNet};
use crate::distance::{median_heuristic_bandwidth, DistanceId};
use crate::error::{Error, Result};
use crate::gbi::{
    abc_kernel_sample, linear_gaussian_gt, rejection_sample_gt, sample_potential, Method, OracleCost, Potential,
    PosteriorSamples, Proposal, RejectionConfig, SliceConfig,
};
use crate::nn::{FitConfig, NetArch};
use crate::rng::{self, derive_seed};
use crate::stats;
use crate::targets::{
    build_target_set, make_misspecified_observations, make_well_specified_observations, MisspecConfig, NoiseConfig,
    Observation, SimDataset, Specification,
};
use crate::tasks::{prior_predictive_bounds, MoonQuadrature, TaskId};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    Ace,
    Abc,
    Gt,
}

impl BenchMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BenchMethod::Ace => "ace",
            BenchMethod::Abc => "abc",
            BenchMethod::Gt => "gt",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub tasks: Vec<TaskId>,
    pub budgets: Vec<usize>,
    /// Temperatures per task; tasks without an entry use [`default_betas`].
    pub betas: BTreeMap<TaskId, Vec<f64>>,
    pub methods: Vec<BenchMethod>,
    /// Observations in each of the four classes.
    pub observations_per_class: usize,
    /// Posterior samples at the largest budget.
    pub posterior_samples: usize,
    /// Posterior samples at smaller budgets.
    pub reduced_posterior_samples: usize,
    pub bounds_sims: usize,
    pub noise: NoiseConfig,
    pub misspec: MisspecConfig,
    pub fit: FitConfig,
    pub arch: Option<NetArch>,
    pub slice: SliceConfig,
    pub rejection: RejectionConfig,
    pub abc_min_accept: usize,
    /// Disabled when absent.
    pub c2st: Option<C2stConfig>,
    /// Posterior samples per observation used for cost accuracy.
    pub cost_accuracy_samples: usize,
    pub mmd_bandwidth: Option<f64>,
    pub moon_grid_bins: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            tasks: TaskId::ALL.to_vec(),
            budgets: vec![200, 1000, 10_000],
            betas: BTreeMap::new(),
            methods: vec![BenchMethod::Ace, BenchMethod::Abc, BenchMethod::Gt],
            observations_per_class: 5,
            posterior_samples: 5000,
            reduced_posterior_samples: 1000,
            bounds_sims: 100_000,
            noise: NoiseConfig::default(),
            misspec: MisspecConfig::default(),
            fit: FitConfig::default(),
            arch: None,
            slice: SliceConfig::default(),
            rejection: RejectionConfig::default(),
            abc_min_accept: 50,
            c2st: Some(C2stConfig::default()),
            cost_accuracy_samples: 100,
            mmd_bandwidth: None,
            moon_grid_bins: 500,
            seed: 0,
        }
    }
}

/// Log-spaced temperatures from prior-dominated to concentrated. These are
/// benchmark settings, not values tied to any published result.
pub fn default_betas(task: TaskId) -> Vec<f64> {
    match task {
        TaskId::Uniform1d | TaskId::TwoMoons | TaskId::GaussianMixture => vec![10.0, 100.0, 1000.0],
        TaskId::LinearGaussian => vec![10.0, 50.0, 250.0],
    }
}

impl BenchmarkConfig {
    pub fn betas_for(&self, task: TaskId) -> Vec<f64> {
        self.betas.get(&task).cloned().unwrap_or_else(|| default_betas(task))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.tasks.is_empty() || self.methods.is_empty() {
            return bad("benchmark needs at least one task and one method".into());
        }
        if self.budgets.iter().any(|b| *b == 0) {
            return bad("simulation budgets must be >= 1".into());
        }
        if self.methods.iter().any(|m| *m != BenchMethod::Gt) && self.budgets.is_empty() {
            return bad("ace and abc need at least one budget".into());
        }
        if self.observations_per_class == 0 || self.posterior_samples == 0 || self.reduced_posterior_samples == 0 {
            return bad("observation and sample counts must be >= 1".into());
        }
        for t in &self.tasks {
            let betas = self.betas_for(*t);
            if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
                return bad(format!("beta grid for {t} must be non-empty and positive"));
            }
        }
        if let Some(b) = self.mmd_bandwidth {
            if !(b > 0.0) {
                return bad("mmd_bandwidth must be positive".into());
            }
        }
        self.fit.validate()?;
        self.misspec.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(&serde_json::to_string(self).expect("config serializes"))
    }

    fn samples_for(&self, budget: usize) -> usize {
        if Some(&budget) == self.budgets.iter().max() {
            self.posterior_samples
        } else {
            self.reduced_posterior_samples
        }
    }
}

fn hash_json(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsClass {
    pub kind: Specification,
    pub seen: bool,
}

impl ObsClass {
    pub const ALL: [ObsClass; 4] = [
        ObsClass {
            kind: Specification::WellSpecified,
            seen: true,
        },
        ObsClass {
            kind: Specification::Misspecified,
            seen: true,
        },
        ObsClass {
            kind: Specification::WellSpecified,
            seen: false,
        },
        ObsClass {
            kind: Specification::Misspecified,
            seen: false,
        },
    ];

    pub fn name(&self) -> String {
        format!("{}_{}", self.kind.name(), if self.seen { "seen" } else { "unseen" })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case", deny_unknown_fields)]
pub enum CellStatus {
    Ok,
    Failed { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationResult {
    pub id: String,
    pub n_samples: usize,
    pub predictive_mean: Option<f64>,
    pub predictive_std: Option<f64>,
    pub c2st: Option<f64>,
    pub abc_final_beta: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellReport {
    pub task: TaskId,
    pub method: BenchMethod,
    /// Absent for ground truth, which does not depend on the budget.
    pub budget: Option<usize>,
    pub beta: f64,
    pub class: ObsClass,
    pub status: CellStatus,
    pub n_observations: usize,
    /// Mean over observations of the per-observation predictive distance.
    pub predictive_mean: Option<f64>,
    /// Std over observations of the per-observation predictive distance.
    pub predictive_std: Option<f64>,
    pub c2st_mean: Option<f64>,
    pub c2st_std: Option<f64>,
    pub cost_pearson: Option<f64>,
    pub cost_rmse: Option<f64>,
    pub observations: Vec<ObservationResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: BenchmarkConfig,
    pub cells: Vec<CellReport>,
}

impl BenchmarkReport {
    pub fn is_partial(&self) -> bool {
        self.cells.iter().any(|c| c.status != CellStatus::Ok)
    }

    pub fn cell(&self, task: TaskId, method: BenchMethod, budget: Option<usize>, beta: f64, class: ObsClass) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.task == task && c.method == method && c.budget == budget && c.beta == beta && c.class == class)
    }

    pub const CSV_HEADER: &'static str = "task,method,budget,beta,class,status,n_observations,predictive_mean,predictive_std,c2st_mean,c2st_std,cost_pearson,cost_rmse,reason";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let reason = match &c.status {
                CellStatus::Ok => String::new(),
                CellStatus::Failed { reason } => format!("\"{}\"", reason.replace('"', "'")),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.task,
                c.method.name(),
                c.budget.map(|b| b.to_string()).unwrap_or_default(),
                c.beta,
                c.class.name(),
                if c.status == CellStatus::Ok { "ok" } else { "failed" },
                c.n_observations,
                opt(c.predictive_mean),
                opt(c.predictive_std),
                opt(c.c2st_mean),
                opt(c.c2st_std),
                opt(c.cost_pearson),
                opt(c.cost_rmse),
                reason
            );
        }
        out
    }
}

/// Unit of resumable work: ground truth for a task (`budget = None`), or the
/// ACE/ABC cells of one task at one budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupKey {
    pub task: TaskId,
    pub budget: Option<usize>,
}

impl GroupKey {
    pub fn hash(&self, config_hash: &str) -> String {
        hash_json(&format!(
            "{{\"schema\":{REPORT_SCHEMA_VERSION},\"config\":\"{config_hash}\",\"key\":{}}}",
            serde_json::to_string(self).expect("key serializes")
        ))
    }
}

/// Storage for finished groups, consulted before and updated after each.
pub trait GroupCache: Sync {
    fn load(&self, hash: &str) -> Option<Vec<CellReport>>;
    fn store(&self, hash: &str, cells: &[CellReport]) -> Result<()>;
}

pub struct NoCache;

impl GroupCache for NoCache {
    fn load(&self, _: &str) -> Option<Vec<CellReport>> {
        None
    }
    fn store(&self, _: &str, _: &[CellReport]) -> Result<()> {
        Ok(())
    }
}

/// Everything derived for a task before any budget-specific work.
struct TaskContext {
    task: TaskId,
    seed: u64,
    distance: DistanceId,
    sigma: Vec<f64>,
    observations: Vec<Observation>,
    quadrature: MoonQuadrature,
}

impl TaskContext {
    fn build(task: TaskId, cfg: &BenchmarkConfig) -> Result<Self> {
        let seed = derive_seed(cfg.seed, task.name());
        let bounds = prior_predictive_bounds(task, cfg.bounds_sims, &mut rng::seeded(derive_seed(seed, "bounds")))?;
        let n = cfg.observations_per_class;
        let misspec = MisspecConfig {
            n_observations: n,
            ..cfg.misspec.clone()
        };
        let mut observations = Vec::with_capacity(4 * n);
        for class in ObsClass::ALL {
            let prefix = format!("{}-", class.name());
            let mut r = rng::seeded(derive_seed(seed, &prefix));
            observations.extend(match class.kind {
                Specification::WellSpecified => make_well_specified_observations(task, n, &prefix, class.seen, &mut r)?,
                Specification::Misspecified => {
                    make_misspecified_observations(task, &bounds, &misspec, &prefix, class.seen, &mut r)?
                }
            });
        }
        let distance = match (task, cfg.mmd_bandwidth) {
            (TaskId::GaussianMixture, Some(b)) => DistanceId::Mmd2 { bandwidth: b },
            (TaskId::GaussianMixture, None) => {
                let pilot = SimDataset::generate(task, 200, derive_seed(seed, "bandwidth"))?;
                let flat = pilot.x.as_slice().expect("standard layout");
                let b = median_heuristic_bandwidth(&[flat], task.spec().x_dim, 1000, &mut rng::seeded(seed))?;
                DistanceId::Mmd2 { bandwidth: b }
            }
            _ => task.default_distance(None)?,
        };
        Ok(Self {
            task,
            seed,
            distance,
            sigma: bounds.std.iter().map(|s| s * cfg.noise.sigma_multiplier).collect(),
            observations,
            quadrature: MoonQuadrature::with_bins(cfg.moon_grid_bins),
        })
    }

    fn oracle(&self, obs: &Observation) -> OracleCost {
        OracleCost {
            task: self.task,
            x_o: obs.x.clone(),
            distance: self.distance.clone(),
            quadrature: self.quadrature.clone(),
        }
    }

    fn of_class(&self, class: ObsClass) -> impl Iterator<Item = &Observation> {
        self.observations
            .iter()
            .filter(move |o| o.kind == class.kind && o.seen == class.seen)
    }

    fn stream(&self, parts: &[&str]) -> u64 {
        derive_seed(self.seed, &parts.join("/"))
    }

    fn ground_truth(&self, beta: f64, obs: &Observation, cfg: &BenchmarkConfig) -> Result<PosteriorSamples> {
        let mut r = rng::seeded(self.stream(&["gt", &beta.to_string(), &obs.id]));
        let n = cfg.posterior_samples;
        match self.task {
            TaskId::LinearGaussian => Ok(linear_gaussian_gt(beta, &obs.x)?.samples(n, beta, &obs.id, &mut r)),
            TaskId::GaussianMixture => {
                let proposal = Proposal::Gaussian {
                    mean: obs.theta.clone(),
                    variance: 50.0 / beta,
                };
                rejection_sample_gt(self.task, beta, &self.oracle(obs), &proposal, n, &obs.id, &cfg.rejection, &mut r)
            }
            _ => rejection_sample_gt(self.task, beta, &self.oracle(obs), &Proposal::Prior, n, &obs.id, &cfg.rejection, &mut r),
        }
    }
}

struct ObsOutcome {
    result: ObservationResult,
    cost_pairs: Vec<(f64, f64)>,
}

fn failed_obs(id: &str, e: &Error) -> ObsOutcome {
    ObsOutcome {
        result: ObservationResult {
            id: id.to_string(),
            n_samples: 0,
            predictive_mean: None,
            predictive_std: None,
            c2st: None,
            abc_final_beta: None,
            error: Some(e.to_string()),
        },
        cost_pairs: Vec::new(),
    }
}

fn assemble(
    task: TaskId,
    method: BenchMethod,
    budget: Option<usize>,
    beta: f64,
    class: ObsClass,
    outcomes: Vec<ObsOutcome>,
) -> CellReport {
    let observations: Vec<ObservationResult> = outcomes.iter().map(|o| o.result.clone()).collect();
    let reason = observations
        .iter()
        .find_map(|o| o.error.as_ref().map(|e| format!("{}: {e}", o.id)));
    let preds: Vec<f64> = observations.iter().filter_map(|o| o.predictive_mean).collect();
    let c2sts: Vec<f64> = observations.iter().filter_map(|o| o.c2st).collect();
    let spread = |v: &[f64]| if v.len() > 1 { Some(stats::std_dev(v)) } else if v.len() == 1 { Some(0.0) } else { None };
    let avg = |v: &[f64]| (!v.is_empty()).then(|| stats::mean(v));
    let pairs: Vec<(f64, f64)> = outcomes.iter().flat_map(|o| o.cost_pairs.iter().copied()).collect();
    let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let cost_pearson = if p.len() > 1 { stats::pearson(&p, &t).ok() } else { None };
    let cost_rmse = if p.is_empty() { None } else { stats::rmse(&p, &t).ok() };
    CellReport {
        task,
        method,
        budget,
        beta,
        class,
        status: match reason {
            None => CellStatus::Ok,
            Some(reason) => CellStatus::Failed { reason },
        },
        n_observations: observations.len(),
        predictive_mean: avg(&preds),
        predictive_std: spread(&preds),
        c2st_mean: avg(&c2sts),
        c2st_std: spread(&c2sts),
        cost_pearson,
        cost_rmse,
        observations,
    }
}

type GtTable = BTreeMap<(u64, String), std::result::Result<PosteriorSamples, String>>;

fn evaluate(
    ctx: &TaskContext,
    samples: &PosteriorSamples,
    obs: &Observation,
    gt: Option<&std::result::Result<PosteriorSamples, String>>,
    cfg: &BenchmarkConfig,
    label: &str,
) -> Result<ObservationResult> {
    let mut r = rng::seeded(ctx.stream(&["predictive", label, &obs.id]));
    let pred = predictive_distance(ctx.task, samples.samples.view(), &obs.x, &ctx.distance, &mut r)?;
    let c2st_acc = match (&cfg.c2st, gt) {
        (Some(c), Some(Ok(gt))) => Some(c2st(
            samples.samples.view(),
            gt.samples.view(),
            &C2stConfig {
                seed: ctx.stream(&["c2st", label, &obs.id]),
                ..c.clone()
            },
        )?),
        (Some(_), Some(Err(e))) => return Err(Error::Degenerate(format!("ground truth unavailable: {e}"))),
        _ => None,
    };
    Ok(ObservationResult {
        id: obs.id.clone(),
        n_samples: samples.len(),
        predictive_mean: Some(pred.mean),
        predictive_std: Some(pred.std),
        c2st: c2st_acc,
        abc_final_beta: samples.diagnostics.get("final_beta").copied(),
        error: None,
    })
}

fn run_gt_group(ctx: &TaskContext, cfg: &BenchmarkConfig, gts: &GtTable) -> Vec<CellReport> {
    let mut cells = Vec::new();
    for beta in cfg.betas_for(ctx.task) {
        for class in ObsClass::ALL {
            let outcomes = ctx
                .of_class(class)
                .map(|obs| match &gts[&(beta.to_bits(), obs.id.clone())] {
                    Ok(s) => match evaluate(ctx, s, obs, None, cfg, "gt") {
                        Ok(result) => ObsOutcome {
                            result,
                            cost_pairs: Vec::new(),
                        },
                        Err(e) => failed_obs(&obs.id, &e),
                    },
                    Err(e) => failed_obs(&obs.id, &Error::Degenerate(e.clone())),
                })
                .collect();
            cells.push(assemble(ctx.task, BenchMethod::Gt, None, beta, class, outcomes));
        }
    }
    cells
}

fn run_budget_group(ctx: &TaskContext, budget: usize, cfg: &BenchmarkConfig, gts: &GtTable) -> Vec<CellReport> {
    let betas = cfg.betas_for(ctx.task);
    let methods: Vec<BenchMethod> = cfg.methods.iter().copied().filter(|m| *m != BenchMethod::Gt).collect();
    let n_samples = cfg.samples_for(budget);
    let b = budget.to_string();

    let prepared = (|| -> Result<(SimDataset, Option<CostNet>)> {
        let sims = SimDataset::generate(ctx.task, budget, ctx.stream(&["sims"]))?;
        let net = if methods.contains(&BenchMethod::Ace) {
            let seen: Vec<Observation> = ctx.observations.iter().filter(|o| o.seen).cloned().collect();
            let mut r = rng::seeded(ctx.stream(&["targets", &b]));
            let targets = build_target_set(&sims, &cfg.noise, &ctx.sigma, &seen, &mut r)?;
            let arch = cfg.arch.clone().unwrap_or_else(|| default_arch(ctx.task));
            let fit = FitConfig {
                seed: ctx.stream(&["fit", &b]),
                ..cfg.fit.clone()
            };
            Some(CostNet::train(&sims, &targets, ctx.distance.clone(), arch, &fit)?.0)
        } else {
            None
        };
        Ok((sims, net))
    })();

    let mut cells = Vec::new();
    for method in methods {
        for &beta in &betas {
            let bs = beta.to_string();
            for class in ObsClass::ALL {
                let outcomes = ctx
                    .of_class(class)
                    .map(|obs| {
                        let gt = gts.get(&(beta.to_bits(), obs.id.clone()));
                        let label = format!("{}-{b}-{bs}", method.name());
                        let run = || -> Result<ObsOutcome> {
                            let (sims, net) = prepared.as_ref().map_err(|e| Error::Degenerate(format!("setup failed: {e}")))?;
                            match method {
                                BenchMethod::Ace => {
                                    let net = net.as_ref().expect("trained when ace is configured");
                                    let cost = net.at_observation(&obs.x)?;
                                    let potential = Potential::new(&cost, ctx.task.prior(), beta)?;
                                    let slice = SliceConfig {
                                        n_samples,
                                        seed: ctx.stream(&["slice", &label, &obs.id]),
                                        ..cfg.slice.clone()
                                    };
                                    let s = sample_potential(&potential, &slice, Method::Ace, &obs.id)?;
                                    let result = evaluate(ctx, &s, obs, gt, cfg, &label)?;
                                    let k = cfg.cost_accuracy_samples.min(s.len());
                                    let cost_pairs = if k > 0 {
                                        let acc = cost_accuracy(&cost, &ctx.oracle(obs), s.samples.slice(ndarray::s![..k, ..]))?;
                                        acc.predicted.into_iter().zip(acc.truth).collect()
                                    } else {
                                        Vec::new()
                                    };
                                    Ok(ObsOutcome { result, cost_pairs })
                                }
                                BenchMethod::Abc => {
                                    let mut r = rng::seeded(ctx.stream(&["abc", &label, &obs.id]));
                                    let out = abc_kernel_sample(sims, &obs.x, &ctx.distance, beta, cfg.abc_min_accept, &obs.id, &mut r)?;
                                    let result = evaluate(ctx, &out.samples, obs, gt, cfg, &label)?;
                                    Ok(ObsOutcome {
                                        result,
                                        cost_pairs: Vec::new(),
                                    })
                                }
                                BenchMethod::Gt => unreachable!("filtered above"),
                            }
                        };
                        run().unwrap_or_else(|e| failed_obs(&obs.id, &e))
                    })
                    .collect();
                cells.push(assemble(ctx.task, method, Some(budget), beta, class, outcomes));
            }
        }
    }
    cells
}

fn run_task(task: TaskId, cfg: &BenchmarkConfig, cache: &dyn GroupCache, config_hash: &str) -> Vec<CellReport> {
    let mut groups: Vec<GroupKey> = Vec::new();
    if cfg.methods.contains(&BenchMethod::Gt) {
        groups.push(GroupKey { task, budget: None });
    }
    if cfg.methods.iter().any(|m| *m != BenchMethod::Gt) {
        groups.extend(cfg.budgets.iter().map(|b| GroupKey { task, budget: Some(*b) }));
    }
    let mut done: BTreeMap<GroupKey, Vec<CellReport>> = BTreeMap::new();
    for g in &groups {
        if let Some(cells) = cache.load(&g.hash(config_hash)) {
            done.insert(*g, cells);
        }
    }
    if done.len() < groups.len() {
        let ctx = match TaskContext::build(task, cfg) {
            Ok(c) => c,
            Err(e) => return task_failure(task, cfg, &groups, &done, &e),
        };
        let need_gt = !done.contains_key(&GroupKey { task, budget: None }) && cfg.methods.contains(&BenchMethod::Gt)
            || cfg.c2st.is_some() && groups.iter().any(|g| g.budget.is_some() && !done.contains_key(g));
        let mut gts = GtTable::new();
        if need_gt {
            for beta in cfg.betas_for(task) {
                for obs in &ctx.observations {
                    let s = ctx.ground_truth(beta, obs, cfg).map_err(|e| e.to_string());
                    gts.insert((beta.to_bits(), obs.id.clone()), s);
                }
            }
        }
        for g in &groups {
            if done.contains_key(g) {
                continue;
            }
            let cells = match g.budget {
                None => run_gt_group(&ctx, cfg, &gts),
                Some(b) => run_budget_group(&ctx, b, cfg, &gts),
            };
            // a cache write failure only costs a recomputation on resume
            let _ = cache.store(&g.hash(config_hash), &cells);
            done.insert(*g, cells);
        }
    }
    groups.iter().flat_map(|g| done.remove(g).unwrap_or_default()).collect()
}

fn task_failure(
    task: TaskId,
    cfg: &BenchmarkConfig,
    groups: &[GroupKey],
    done: &BTreeMap<GroupKey, Vec<CellReport>>,
    e: &Error,
) -> Vec<CellReport> {
    let mut cells = Vec::new();
    for g in groups {
        if let Some(c) = done.get(g) {
            cells.extend(c.iter().cloned());
            continue;
        }
        let methods: Vec<BenchMethod> = match g.budget {
            None => vec![BenchMethod::Gt],
            Some(_) => cfg.methods.iter().copied().filter(|m| *m != BenchMethod::Gt).collect(),
        };
        for method in methods {
            for beta in cfg.betas_for(task) {
                for class in ObsClass::ALL {
                    cells.push(CellReport {
                        task,
                        method,
                        budget: g.budget,
                        beta,
                        class,
                        status: CellStatus::Failed {
                            reason: format!("task setup failed: {e}"),
                        },
                        n_observations: 0,
                        predictive_mean: None,
                        predictive_std: None,
                        c2st_mean: None,
                        c2st_std: None,
                        cost_pearson: None,
                        cost_rmse: None,
                        observations: Vec::new(),
                    });
                }
            }
        }
    }
    cells
}

/// Runs every configured cell. Stage failures are recorded in the affected
/// cells and the run continues. Tasks run concurrently on the current rayon
/// pool; the report does not depend on scheduling.
pub fn run_benchmark(cfg: &BenchmarkConfig, cache: &dyn GroupCache) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let config_hash = cfg.hash();
    let per_task: Vec<Vec<CellReport>> = cfg
        .tasks
        .par_iter()
        .map(|t| run_task(*t, cfg, cache, &config_hash))
        .collect();
    Ok(BenchmarkReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_hash,
        config: cfg.clone(),
        cells: per_task.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchmarkConfig {
        let mut betas = BTreeMap::new();
        betas.insert(TaskId::LinearGaussian, vec![20.0]);
        BenchmarkConfig {
            tasks: vec![TaskId::LinearGaussian],
            budgets: vec![200],
            betas,
            observations_per_class: 1,
            posterior_samples: 200,
            reduced_posterior_samples: 100,
            bounds_sims: 2000,
            noise: NoiseConfig {
                n_augmented: 10,
                sigma_multiplier: 2.0,
            },
            fit: FitConfig {
                max_epochs: 5,
                patience_epochs: 5,
                ..Default::default()
            },
            slice: SliceConfig {
                n_chains: 4,
                burn_in: 10,
                ..Default::default()
            },
            c2st: Some(C2stConfig {
                max_epochs: 5,
                patience_epochs: 2,
                ..Default::default()
            }),
            ..Default::default()
        }
    }

    #[test]
    fn every_cell_is_present_once() {
        let cfg = tiny();
        let r = run_benchmark(&cfg, &NoCache).unwrap();
        // gt: 1 beta × 4 classes; ace and abc: 1 budget × 1 beta × 4 classes
        assert_eq!(r.cells.len(), 12);
        for m in [BenchMethod::Ace, BenchMethod::Abc] {
            for class in ObsClass::ALL {
                assert!(r.cell(TaskId::LinearGaussian, m, Some(200), 20.0, class).is_some());
            }
        }
        assert!(!r.is_partial(), "{:?}", r.cells.iter().map(|c| &c.status).collect::<Vec<_>>());
        assert_eq!(r.to_csv().lines().count(), 13);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = tiny();
        cfg.budgets = vec![0];
        assert!(run_benchmark(&cfg, &NoCache).is_err());
        let mut cfg = tiny();
        cfg.betas.insert(TaskId::LinearGaussian, vec![-1.0]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn missing_ground_truth_marks_cells_failed() {
        let mut cfg = tiny();
        cfg.rejection.max_proposals = 1;
        cfg.rejection.batch = 1;
        cfg.rejection.pilot = 1;
        cfg.tasks = vec![TaskId::Uniform1d];
        cfg.betas = BTreeMap::from([(TaskId::Uniform1d, vec![1000.0])]);
        cfg.methods = vec![BenchMethod::Gt];
        cfg.rejection.grid_per_dim = Some(10);
        let r = run_benchmark(&cfg, &NoCache).unwrap();
        assert_eq!(r.cells.len(), 4);
        assert!(r.is_partial());
    }
}
