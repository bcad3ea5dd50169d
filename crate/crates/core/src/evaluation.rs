//! Monte-Carlo regret estimation and the end-to-end experiment runners.
//!
//! Regret of a subset `A` on instance `theta` is
//! `max_{a in A_full} mu_a(theta) - max_{a in A} mu_a(theta)`.
//!
//! Seeding: repetition `r` uses `seed + r`. Within a repetition, every
//! parameter value and every method draws from its own ChaCha stream of that
//! seed, so adding a method never perturbs the others. Evaluation instances
//! are fresh per repetition and shared by all methods of that repetition.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{
    build_kernel_model, make_grid_space, make_sphere_clusters, BanditFamily, KernelSpec,
    RewardModel,
};
use crate::montecarlo::{sharded, Moments};
use crate::policies::{
    enumerate_super_arms, encode_subset, run_cts, run_cucb, run_successive_halving,
    run_superarm_ts, run_superarm_ucb, sh_budget, DEFAULT_SUPER_ARM_CAP,
};
use crate::select::{epsilon_net_select, OracleSpec, StopRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretEstimate {
    pub mean: f64,
    pub std: f64,
    pub standard_error: f64,
    pub samples: usize,
    pub seed: u64,
}

fn check_subset(family: &BanditFamily, subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let n = family.num_actions();
    match subset.iter().find(|&&a| a >= n) {
        Some(&bad) => Err(Error::IndexOutOfRange { index: bad, len: n }),
        None => Ok(()),
    }
}

fn regret_of(rewards: &[f64], best: f64, subset: &[usize]) -> f64 {
    let kept = subset.iter().map(|&a| rewards[a]).fold(f64::NEG_INFINITY, f64::max);
    let r = best - kept;
    debug_assert!(r >= 0.0);
    r
}

/// Regret of `subset`, averaged over `samples` fresh instances drawn from
/// `seed`. Finite-support instance distributions are integrated exactly.
pub fn estimate_regret(
    family: &BanditFamily,
    subset: &[usize],
    samples: usize,
    seed: u64,
) -> Result<RegretEstimate> {
    Ok(estimate_regret_many(family, &[subset.to_vec()], samples, seed)?[0])
}

/// Regret of several subsets, all evaluated on the same instances.
pub fn estimate_regret_many(
    family: &BanditFamily,
    subsets: &[Vec<usize>],
    samples: usize,
    seed: u64,
) -> Result<Vec<RegretEstimate>> {
    if samples == 0 {
        return Err(invalid("regret estimation needs at least one sample"));
    }
    for s in subsets {
        check_subset(family, s)?;
    }
    if let Some((atoms, probs)) = family.instances.finite_support() {
        let mut means = vec![0.0; subsets.len()];
        let mut sq = vec![0.0; subsets.len()];
        for (atom, p) in atoms.iter().zip(probs) {
            let rewards = family.model.rewards(atom);
            let best = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (i, s) in subsets.iter().enumerate() {
                let r = regret_of(&rewards, best, s);
                means[i] += p * r;
                sq[i] += p * r * r;
            }
        }
        return Ok(means
            .into_iter()
            .zip(sq)
            .map(|(mean, sq)| RegretEstimate {
                mean,
                std: (sq - mean * mean).max(0.0).sqrt(),
                standard_error: 0.0,
                samples: atoms.len(),
                seed,
            })
            .collect());
    }
    let shards = sharded(samples, seed, |rng, count| {
        let mut acc = vec![Moments::default(); subsets.len()];
        let mut buf = Vec::new();
        for _ in 0..count {
            family.sample_rewards_into(rng, &mut buf);
            let best = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (m, s) in acc.iter_mut().zip(subsets) {
                m.push(regret_of(&buf, best, s));
            }
        }
        acc
    });
    let mut total = vec![Moments::default(); subsets.len()];
    for shard in &shards {
        total.iter_mut().zip(shard).for_each(|(t, s)| t.merge(s));
    }
    Ok(total
        .into_iter()
        .map(|m| RegretEstimate {
            mean: m.mean,
            std: m.std(),
            standard_error: m.standard_error(),
            samples,
            seed,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Superarm,
    Combinatorial,
    Sphere,
    Gibbs,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::Superarm,
        ExperimentKind::Combinatorial,
        ExperimentKind::Sphere,
        ExperimentKind::Gibbs,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Superarm => "superarm",
            ExperimentKind::Combinatorial => "combinatorial",
            ExperimentKind::Sphere => "sphere",
            ExperimentKind::Gibbs => "gibbs",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| invalid(format!("unknown experiment '{name}'")))
    }
}

/// Sizes, seeds and switches for one experiment.
///
/// `params` holds the swept values: kernel length scales (superarm,
/// combinatorial) or cluster spreads (sphere); it is ignored by gibbs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub repetitions: usize,
    pub eval_instances: usize,
    /// Divisor applied to `eval_instances`.
    pub scale: usize,
    pub params: Vec<f64>,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    /// Subset size: the distinct-count target (superarm, combinatorial) or
    /// the number of iterations (sphere, gibbs).
    pub k: usize,
    /// Rounds for super-arm TS/UCB and for CTS/CUCB.
    pub policy_rounds: usize,
    /// Rounds of the Thompson oracle inside the selection loop.
    pub oracle_rounds: usize,
    pub exploration_scale: f64,
    /// Count oracle calls that returned an already chosen action as pulls.
    pub duplicates_consume: bool,
    pub num_centers: usize,
    pub points_per_cluster: usize,
    pub sphere_dim: usize,
    /// Record wallclock times; off by default so outputs are reproducible.
    pub timing: bool,
}

impl ExperimentConfig {
    /// Full-scale defaults for each experiment.
    pub fn preset(experiment: ExperimentKind, seed: u64) -> Self {
        let base = Self {
            experiment,
            seed,
            repetitions: 50,
            eval_instances: 100_000,
            scale: 1,
            params: vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
            grid_lo: 0.0,
            grid_hi: 2.0,
            grid_points: 15,
            k: 5,
            policy_rounds: 3000,
            oracle_rounds: 300,
            exploration_scale: 1.0,
            duplicates_consume: true,
            num_centers: 5,
            points_per_cluster: 200,
            sphere_dim: 3,
            timing: false,
        };
        match experiment {
            ExperimentKind::Superarm => base,
            ExperimentKind::Combinatorial => Self {
                repetitions: 30,
                grid_lo: -5.0,
                grid_hi: 5.0,
                grid_points: 500,
                k: 10,
                ..base
            },
            ExperimentKind::Sphere => Self {
                repetitions: 30,
                eval_instances: 10_000,
                params: vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
                k: 10,
                ..base
            },
            ExperimentKind::Gibbs => Self {
                repetitions: 10,
                eval_instances: 1000,
                params: Vec::new(),
                grid_points: 1000,
                k: 5000,
                ..base
            },
        }
    }

    pub fn effective_eval_instances(&self) -> usize {
        (self.eval_instances / self.scale.max(1)).max(1)
    }

    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("repetitions", self.repetitions),
            ("eval_instances", self.eval_instances),
            ("scale", self.scale),
            ("k", self.k),
            ("policy_rounds", self.policy_rounds),
            ("oracle_rounds", self.oracle_rounds),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("{name} must be positive")));
        }
        let grid_kind = matches!(
            self.experiment,
            ExperimentKind::Superarm | ExperimentKind::Combinatorial | ExperimentKind::Gibbs
        );
        if grid_kind && (self.grid_points < 2 || !(self.grid_lo < self.grid_hi)) {
            return Err(invalid("grid needs at least two points and lo < hi"));
        }
        if self.experiment != ExperimentKind::Gibbs {
            if self.params.is_empty() {
                return Err(invalid("params must not be empty"));
            }
            if self.params.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
                return Err(invalid("params must be positive"));
            }
        }
        if self.experiment == ExperimentKind::Sphere
            && (self.num_centers == 0 || self.points_per_cluster == 0 || self.sphere_dim == 0)
        {
            return Err(invalid("sphere sizes must be positive"));
        }
        Ok(())
    }
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub param: f64,
    pub rep: usize,
    pub regret_mean: f64,
    pub regret_std: f64,
    /// Standard error of `regret_mean` over evaluation instances.
    pub regret_se: f64,
    pub pulls: u64,
    pub wallclock_ms: f64,
}

/// Mean over repetitions, one row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub param: f64,
    pub reps: usize,
    pub regret_mean: f64,
    pub regret_sd: f64,
    pub regret_se: f64,
    pub pulls_mean: f64,
}

/// Best survivor after each halving round, with its regret.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShTraceRow {
    pub param: f64,
    pub rep: usize,
    pub round: usize,
    pub cumulative_pulls: usize,
    pub best_subset: Vec<usize>,
    pub regret_mean: f64,
}

/// Per-action selection counts of every run on a fixed grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub x: Vec<f64>,
    pub runs: Vec<Vec<u64>>,
}

impl Histogram {
    pub fn totals(&self) -> Vec<u64> {
        let mut totals = vec![0; self.x.len()];
        for run in &self.runs {
            totals.iter_mut().zip(run).for_each(|(t, c)| *t += c);
        }
        totals
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub config: ExperimentConfig,
    pub rep_seeds: Vec<u64>,
    pub effective_eval_instances: usize,
    pub version: String,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub manifest: ExperimentManifest,
    pub rows: Vec<ResultRow>,
    pub sh_trace: Vec<ShTraceRow>,
    pub histogram: Option<Histogram>,
}

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SH_TRACE_FILE: &str = "sh_trace.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

impl ExperimentOutput {
    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.rows)
    }

    pub fn rows_for<'a>(&'a self, method: &'a str, param: f64) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.method == method && r.param == param)
    }

    /// Writes every output file into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut results = Vec::new();
        write_results_csv(&self.rows, &mut results)?;
        fs::write(dir.join(RESULTS_FILE), results)?;
        let mut summary = Vec::new();
        write_summary_csv(&self.summary(), &mut summary)?;
        fs::write(dir.join(SUMMARY_FILE), summary)?;
        if !self.sh_trace.is_empty() {
            let mut out = Vec::new();
            writeln!(out, "param,rep,round,cumulative_pulls,best_subset,regret_mean")?;
            for r in &self.sh_trace {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    r.param,
                    r.rep,
                    r.round,
                    r.cumulative_pulls,
                    encode_subset(&r.best_subset),
                    r.regret_mean
                )?;
            }
            fs::write(dir.join(SH_TRACE_FILE), out)?;
        }
        if let Some(h) = &self.histogram {
            let mut out = Vec::new();
            write_histogram_csv(h, &mut out)?;
            fs::write(dir.join(HISTOGRAM_FILE), out)?;
        }
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&self.manifest)? + "\n",
        )?;
        Ok(())
    }
}

/// `method,param,rep,regret_mean,regret_std,pulls,wallclock_ms`.
pub fn write_results_csv<W: Write>(rows: &[ResultRow], mut out: W) -> Result<()> {
    writeln!(out, "method,param,rep,regret_mean,regret_std,pulls,wallclock_ms")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method, r.param, r.rep, r.regret_mean, r.regret_std, r.pulls, r.wallclock_ms
        )?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut out: W) -> Result<()> {
    writeln!(out, "method,param,reps,regret_mean,regret_sd,regret_se,pulls_mean")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method, r.param, r.reps, r.regret_mean, r.regret_sd, r.regret_se, r.pulls_mean
        )?;
    }
    Ok(())
}

/// `idx,x,total_count,mean_frequency`, one row per grid action.
pub fn write_histogram_csv<W: Write>(h: &Histogram, mut out: W) -> Result<()> {
    writeln!(out, "idx,x,total_count,mean_frequency")?;
    let runs = h.runs.len().max(1) as f64;
    let per_run: Vec<u64> = h.runs.iter().map(|r| r.iter().sum()).collect();
    for (i, (x, total)) in h.x.iter().zip(h.totals()).enumerate() {
        let freq: f64 = h
            .runs
            .iter()
            .zip(&per_run)
            .map(|(r, &n)| r[i] as f64 / n.max(1) as f64)
            .sum::<f64>()
            / runs;
        writeln!(out, "{i},{x},{total},{freq}")?;
    }
    Ok(())
}

/// Groups rows by `(method, param)` in first-appearance order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(m, p)| *m == r.method && *p == r.param) {
            keys.push((r.method.clone(), r.param));
        }
    }
    keys.into_iter()
        .map(|(method, param)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.method == method && r.param == param)
                .collect();
            let m = Moments::from_slice(&group.iter().map(|r| r.regret_mean).collect::<Vec<_>>());
            let pulls = group.iter().map(|r| r.pulls as f64).sum::<f64>() / group.len() as f64;
            SummaryRow {
                method,
                param,
                reps: group.len(),
                regret_mean: m.mean,
                regret_sd: m.std(),
                regret_se: m.standard_error(),
                pulls_mean: pulls,
            }
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(invalid("spearman needs two equal-length series of length >= 2"));
    }
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &o in &order[i..=j] {
                r[o] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let mx = rx.iter().sum::<f64>() / rx.len() as f64;
    let my = ry.iter().sum::<f64>() / ry.len() as f64;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Fraction of repetitions at `param` in which `a`'s regret is at most
/// (`strict`: below) `b`'s.
pub fn paired_win_fraction(rows: &[ResultRow], a: &str, b: &str, param: f64, strict: bool) -> f64 {
    let pick = |m: &str| -> Vec<(usize, f64)> {
        rows.iter()
            .filter(|r| r.method == m && r.param == param)
            .map(|r| (r.rep, r.regret_mean))
            .collect()
    };
    let (ra, rb) = (pick(a), pick(b));
    let mut wins = 0;
    let mut total = 0;
    for (rep, va) in &ra {
        if let Some((_, vb)) = rb.iter().find(|(r, _)| r == rep) {
            total += 1;
            if (strict && va < vb) || (!strict && va <= vb) {
                wins += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        wins as f64 / total as f64
    }
}

// Stream layout within a repetition seed.
const STREAMS_PER_PARAM: u64 = 16;
const STREAM_MODEL: u64 = 0;
const STREAM_SELECT: u64 = 1;
const STREAM_TS: u64 = 2;
const STREAM_UCB: u64 = 3;
const STREAM_SH: u64 = 4;
const STREAM_CTS: u64 = 5;
const STREAM_CUCB: u64 = 6;
const STREAM_EVAL: u64 = 7;

fn stream(rep_seed: u64, param_idx: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    rng.set_stream(param_idx as u64 * STREAMS_PER_PARAM + purpose);
    rng
}

struct Timer {
    start: Option<Instant>,
}

impl Timer {
    fn start(enabled: bool) -> Self {
        Self {
            start: enabled.then(Instant::now),
        }
    }

    fn ms(&self) -> f64 {
        self.start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3)
    }
}

struct JobOutput {
    rows: Vec<ResultRow>,
    sh_trace: Vec<ShTraceRow>,
    counts: Option<Vec<u64>>,
}

fn row(method: &str, param: f64, rep: usize, est: &RegretEstimate, pulls: usize, ms: f64) -> ResultRow {
    ResultRow {
        method: method.to_string(),
        param,
        rep,
        regret_mean: est.mean,
        regret_std: est.std,
        regret_se: est.standard_error,
        pulls: pulls as u64,
        wallclock_ms: ms,
    }
}

fn kernel_family(config: &ExperimentConfig, kernel: KernelSpec) -> Result<BanditFamily> {
    let grid = make_grid_space(config.grid_lo, config.grid_hi, config.grid_points)?;
    Ok(BanditFamily::gaussian(RewardModel::KernelSampled(build_kernel_model(grid, kernel)?)))
}

/// Runs the configured experiment. Outputs are a pure function of the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let (rows, sh_trace, histogram) = match config.experiment {
        ExperimentKind::Superarm => run_superarm(config)?,
        ExperimentKind::Combinatorial => run_combinatorial(config)?,
        ExperimentKind::Sphere => run_sphere(config)?,
        ExperimentKind::Gibbs => run_gibbs(config)?,
    };
    Ok(ExperimentOutput {
        manifest: ExperimentManifest {
            config: config.clone(),
            rep_seeds: (0..config.repetitions).map(|r| config.rep_seed(r)).collect(),
            effective_eval_instances: config.effective_eval_instances(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        rows,
        sh_trace,
        histogram,
    })
}

type RunnerOutput = (Vec<ResultRow>, Vec<ShTraceRow>, Option<Histogram>);

/// Runs `job(param_idx, family, rep)` for every pair in parallel and
/// concatenates outputs in `(param, rep)` order.
fn run_grid<F>(config: &ExperimentConfig, families: &[BanditFamily], job: F) -> Result<Vec<JobOutput>>
where
    F: Fn(usize, &BanditFamily, usize) -> Result<JobOutput> + Sync,
{
    let jobs: Vec<(usize, usize)> = (0..families.len())
        .flat_map(|p| (0..config.repetitions).map(move |r| (p, r)))
        .collect();
    jobs.par_iter()
        .map(|&(p, r)| job(p, &families[p], r))
        .collect()
}

fn flatten(outputs: Vec<JobOutput>) -> RunnerOutput {
    let mut rows = Vec::new();
    let mut trace = Vec::new();
    for o in outputs {
        rows.extend(o.rows);
        trace.extend(o.sh_trace);
    }
    (rows, trace, None)
}

fn length_scale_families(config: &ExperimentConfig) -> Result<Vec<BanditFamily>> {
    config
        .params
        .par_iter()
        .map(|&l| kernel_family(config, KernelSpec::rbf(l)?))
        .collect()
}

fn run_superarm(config: &ExperimentConfig) -> Result<RunnerOutput> {
    let families = length_scale_families(config)?;
    let arms = enumerate_super_arms(config.grid_points, config.k, DEFAULT_SUPER_ARM_CAP)?;
    let budget = sh_budget(arms.len());
    let eval = config.effective_eval_instances();
    let outputs = run_grid(config, &families, |p, family, rep| {
        let param = config.params[p];
        let seed = config.rep_seed(rep);
        let n = family.num_actions();

        let t = Timer::start(config.timing);
        let sel = epsilon_net_select(
            family,
            OracleSpec::Exact,
            StopRule::distinct(config.k),
            &mut stream(seed, p, STREAM_SELECT),
        )?;
        let sel_ms = t.ms();
        let t = Timer::start(config.timing);
        let ts = run_superarm_ts(family, &arms, config.policy_rounds, &mut stream(seed, p, STREAM_TS))?;
        let ts_ms = t.ms();
        let t = Timer::start(config.timing);
        let ucb = run_superarm_ucb(
            family,
            &arms,
            config.policy_rounds,
            config.exploration_scale,
            &mut stream(seed, p, STREAM_UCB),
        )?;
        let ucb_ms = t.ms();
        let t = Timer::start(config.timing);
        let sh = run_successive_halving(family, &arms, budget, &mut stream(seed, p, STREAM_SH))?;
        let sh_ms = t.ms();

        let mut subsets = vec![
            sel.chosen.clone(),
            arms[ts.best].members().to_vec(),
            arms[ucb.best].members().to_vec(),
            arms[sh.best].members().to_vec(),
        ];
        subsets.extend(sh.rounds.iter().map(|r| arms[r.best_arm].members().to_vec()));
        let eval_seed = stream(seed, p, STREAM_EVAL).random();
        let est = estimate_regret_many(family, &subsets, eval, eval_seed)?;

        let rows = vec![
            // Exhaustive search evaluates every action of each sampled instance.
            row("EpsilonNet", param, rep, &est[0], sel.iterations_used * n, sel_ms),
            row("TS", param, rep, &est[1], config.policy_rounds, ts_ms),
            row("UCB", param, rep, &est[2], config.policy_rounds, ucb_ms),
            row("SH", param, rep, &est[3], sh.pulls, sh_ms),
        ];
        let sh_trace = sh
            .rounds
            .iter()
            .zip(&est[4..])
            .map(|(r, e)| ShTraceRow {
                param,
                rep,
                round: r.round,
                cumulative_pulls: r.cumulative_pulls,
                best_subset: arms[r.best_arm].members().to_vec(),
                regret_mean: e.mean,
            })
            .collect();
        Ok(JobOutput {
            rows,
            sh_trace,
            counts: None,
        })
    })?;
    Ok(flatten(outputs))
}

fn run_combinatorial(config: &ExperimentConfig) -> Result<RunnerOutput> {
    let families = length_scale_families(config)?;
    let eval = config.effective_eval_instances();
    let oracle = OracleSpec::ThompsonApprox {
        rounds: config.oracle_rounds,
    };
    let outputs = run_grid(config, &families, |p, family, rep| {
        let param = config.params[p];
        let seed = config.rep_seed(rep);

        let t = Timer::start(config.timing);
        let sel = epsilon_net_select(
            family,
            oracle,
            StopRule::distinct(config.k),
            &mut stream(seed, p, STREAM_SELECT),
        )?;
        let sel_ms = t.ms();
        let calls = if config.duplicates_consume {
            sel.iterations_used
        } else {
            sel.chosen.len()
        };
        let t = Timer::start(config.timing);
        let cts = run_cts(family, config.k, config.policy_rounds, &mut stream(seed, p, STREAM_CTS))?;
        let cts_ms = t.ms();
        let t = Timer::start(config.timing);
        let cucb = run_cucb(
            family,
            config.k,
            config.policy_rounds,
            config.exploration_scale,
            &mut stream(seed, p, STREAM_CUCB),
        )?;
        let cucb_ms = t.ms();

        let subsets = [sel.chosen.clone(), cts.subset.clone(), cucb.subset.clone()];
        let eval_seed = stream(seed, p, STREAM_EVAL).random();
        let est = estimate_regret_many(family, &subsets, eval, eval_seed)?;
        Ok(JobOutput {
            rows: vec![
                row("EpsilonNet+TS", param, rep, &est[0], calls * oracle.pulls_per_call(), sel_ms),
                row("CTS", param, rep, &est[1], cts.pulls, cts_ms),
                row("CUCB", param, rep, &est[2], cucb.pulls, cucb_ms),
            ],
            sh_trace: Vec::new(),
            counts: None,
        })
    })?;
    Ok(flatten(outputs))
}

fn run_sphere(config: &ExperimentConfig) -> Result<RunnerOutput> {
    let eval = config.effective_eval_instances();
    let jobs: Vec<(usize, usize)> = (0..config.params.len())
        .flat_map(|p| (0..config.repetitions).map(move |r| (p, r)))
        .collect();
    let outputs: Vec<JobOutput> = jobs
        .par_iter()
        .map(|&(p, rep)| {
            let spread = config.params[p];
            let seed = config.rep_seed(rep);
            let (space, _) = make_sphere_clusters(
                config.num_centers,
                config.points_per_cluster,
                spread,
                config.sphere_dim,
                &mut stream(seed, p, STREAM_MODEL),
            )?;
            let family = BanditFamily::gaussian(RewardModel::LinearCanonical(space));
            let t = Timer::start(config.timing);
            let sel = epsilon_net_select(
                &family,
                OracleSpec::Exact,
                StopRule::Iterations(config.k),
                &mut stream(seed, p, STREAM_SELECT),
            )?;
            let ms = t.ms();
            let eval_seed = stream(seed, p, STREAM_EVAL).random();
            let est = estimate_regret(&family, &sel.chosen, eval, eval_seed)?;
            let pulls = sel.iterations_used * family.num_actions();
            Ok(JobOutput {
                rows: vec![row("EpsilonNet", spread, rep, &est, pulls, ms)],
                sh_trace: Vec::new(),
                counts: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(flatten(outputs))
}

fn run_gibbs(config: &ExperimentConfig) -> Result<RunnerOutput> {
    let family = kernel_family(config, KernelSpec::Gibbs)?;
    let eval = config.effective_eval_instances();
    let n = family.num_actions();
    let outputs: Vec<JobOutput> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let seed = config.rep_seed(rep);
            let t = Timer::start(config.timing);
            let sel = epsilon_net_select(
                &family,
                OracleSpec::Exact,
                StopRule::Iterations(config.k),
                &mut stream(seed, 0, STREAM_SELECT),
            )?;
            let ms = t.ms();
            let eval_seed = stream(seed, 0, STREAM_EVAL).random();
            let est = estimate_regret(&family, &sel.chosen, eval, eval_seed)?;
            Ok(JobOutput {
                rows: vec![row("EpsilonNet", 0.0, rep, &est, sel.iterations_used * n, ms)],
                sh_trace: Vec::new(),
                counts: Some(sel.counts(n)),
            })
        })
        .collect::<Result<_>>()?;
    let x = family.model.space().actions().iter().map(|a| a[0]).collect();
    let runs = outputs.iter().filter_map(|o| o.counts.clone()).collect();
    let (rows, trace, _) = flatten(outputs);
    Ok((rows, trace, Some(Histogram { x, runs })))
}
