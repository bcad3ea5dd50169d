//! Numerical checks of the coverage lemma, the regret bounds and the
//! Gaussian-width facts, each on a fixed synthetic instance.
//!
//! A check passes when every Monte-Carlo comparison holds within
//! [`CHECK_SE`] standard errors. The attached [`BoundReport`]s carry their own
//! verdicts at the stricter report tolerance of two standard errors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::evaluation::estimate_regret;
use crate::geometry::{
    assumption1_violation_rate, check_measure_net, cluster_widths_mc, estimate_importance,
    expected_max_iid_bounds, gaussian_width_mc, iid_case_bounds, measure_net_probability_bound,
    miss_weighted_sum, sampling_correction, second_moment_mc, simplex_grid_max, theorem1_bounds,
    theorem2_upper_bound, theorem3_bound, theorem5_lower_bound, BoundKind, BoundReport, Partition,
    DEFAULT_C, DEFAULT_LOWER_C,
};
use crate::model::{
    build_kernel_model, make_grid_space, make_orthonormal_space, make_sphere_clusters,
    ActionSpace, BanditFamily, BanditInstance, DiscreteInstances, InstanceDistribution,
    KernelSpec, RewardModel,
};
use crate::montecarlo::{shard_rng, Moments};
use crate::select::{epsilon_net_select, OracleSpec, StopRule};

/// Standard errors of slack allowed when deciding whether a check passes.
pub const CHECK_SE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Lemma1,
    Thm1,
    Thm2,
    Thm3,
    Thm5,
    LemmaMaxq,
    IidBand,
    Widths,
}

impl Check {
    pub const ALL: [Check; 8] = [
        Check::Lemma1,
        Check::Thm1,
        Check::Thm2,
        Check::Thm3,
        Check::Thm5,
        Check::LemmaMaxq,
        Check::IidBand,
        Check::Widths,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Check::Lemma1 => "lemma1",
            Check::Thm1 => "thm1",
            Check::Thm2 => "thm2",
            Check::Thm3 => "thm3",
            Check::Thm5 => "thm5",
            Check::LemmaMaxq => "lemma_maxq",
            Check::IidBand => "iid_band",
            Check::Widths => "widths",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(Check::name).collect();
                invalid(format!("unknown check '{name}' (expected one of {})", names.join(", ")))
            })
    }
}

/// Inputs shared by all checks; each check reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub eps: f64,
    /// Algorithm iterations (lemma1, thm1/thm2, thm5) or the exponent (lemma_maxq).
    pub k: usize,
    /// Independent repetitions.
    pub runs: usize,
    /// Number of clusters for lemma_maxq.
    pub m: usize,
    pub c_upper: f64,
    pub c_lower: f64,
    pub spread: f64,
    /// Monte-Carlo samples per estimate.
    pub samples: usize,
    /// Action count for iid_band.
    pub n: usize,
    pub subset_size: usize,
    /// Orthonormal sizes for the widths check.
    pub sizes: Vec<usize>,
    /// Scales for thm3, visited in the given order.
    pub eps_list: Vec<f64>,
    pub length_scale: f64,
    pub grid_points: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            eps: 0.2,
            k: 30,
            runs: 2000,
            m: 4,
            c_upper: DEFAULT_C,
            c_lower: DEFAULT_LOWER_C,
            spread: 0.05,
            samples: 10_000,
            n: 16,
            subset_size: 4,
            sizes: vec![2, 8, 64],
            eps_list: vec![0.4, 0.2, 0.1, 0.05],
            length_scale: 1.0,
            grid_points: 500,
        }
    }
}

impl VerifyOptions {
    /// Defaults sized for the given check.
    pub fn for_check(check: Check) -> Self {
        let base = Self::default();
        match check {
            Check::Thm1 | Check::Thm2 => Self { k: 50, runs: 30, ..base },
            Check::Thm3 => Self { runs: 1, ..base },
            Check::Thm5 => Self { k: 1, runs: 200, samples: 20_000, ..base },
            Check::LemmaMaxq => Self { k: 3, ..base },
            Check::Widths => Self { samples: 100_000, ..base },
            Check::IidBand => Self { samples: 100_000, ..base },
            Check::Lemma1 => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub check: String,
    pub passed: bool,
    pub reports: Vec<BoundReport>,
    pub details: BTreeMap<String, f64>,
}

impl VerifyReport {
    fn new(check: Check) -> Self {
        Self {
            check: check.name().to_string(),
            passed: true,
            reports: Vec::new(),
            details: BTreeMap::new(),
        }
    }

    fn detail(&mut self, key: impl Into<String>, value: f64) {
        self.details.insert(key.into(), value);
    }

    fn require(&mut self, ok: bool) {
        self.passed &= ok;
    }
}

fn upper_holds(bound: f64, mean: f64, se: f64) -> bool {
    mean - CHECK_SE * se <= bound
}

fn lower_holds(bound: f64, mean: f64, se: f64) -> bool {
    mean + CHECK_SE * se >= bound
}

pub fn run_check(check: Check, opts: &VerifyOptions) -> Result<VerifyReport> {
    match check {
        Check::Lemma1 => verify_lemma1(opts),
        Check::Thm1 => verify_thm1(opts),
        Check::Thm2 => verify_thm2(opts),
        Check::Thm3 => verify_thm3(opts),
        Check::Thm5 => verify_thm5(opts),
        Check::LemmaMaxq => verify_lemma_maxq(opts.m, opts.k),
        Check::IidBand => verify_iid_band(opts),
        Check::Widths => verify_widths(opts),
    }
}

/// Four clusters of two actions each in `R^4`; instance `e_i` is drawn with
/// probability `q_i`, and its optimal action is `e_i` in cluster `i`.
pub fn lemma1_fixture(q: &[f64]) -> Result<(BanditFamily, Partition)> {
    let m = q.len();
    let mut actions = Vec::with_capacity(2 * m);
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        actions.push(e.clone());
        e[i] = 0.5;
        actions.push(e);
    }
    let atoms = (0..m)
        .map(|i| {
            let mut t = vec![0.0; m];
            t[i] = 1.0;
            BanditInstance::new(t)
        })
        .collect();
    let space = ActionSpace::explicit(actions)?;
    let family = BanditFamily::with_instances(
        RewardModel::LinearCanonical(space),
        InstanceDistribution::Discrete(DiscreteInstances::new(atoms, q.to_vec())?),
    )?;
    let clusters = (0..m).map(|i| vec![2 * i, 2 * i + 1]).collect();
    let partition = Partition::new(clusters, Some((0..m).map(|i| 2 * i).collect()), &family.model)?;
    Ok((family, partition))
}

pub const LEMMA1_Q: [f64; 4] = [0.21, 0.21, 0.21, 0.37];

pub fn verify_lemma1(opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.runs == 0 {
        return Err(invalid("lemma1 needs runs >= 1"));
    }
    let (family, partition) = lemma1_fixture(&LEMMA1_Q)?;
    let importance = estimate_importance(&family, &partition, 1, &mut ChaCha8Rng::seed_from_u64(0))?;
    let passes: usize = (0..opts.runs)
        .into_par_iter()
        .map(|run| -> Result<usize> {
            let mut rng = shard_rng(opts.seed, run as u64);
            let sel = epsilon_net_select(&family, OracleSpec::Exact, StopRule::Iterations(opts.k), &mut rng)?;
            Ok(check_measure_net(&sel.chosen, &partition, &importance, opts.eps)? as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    let rate = passes as f64 / opts.runs as f64;
    let bound = measure_net_probability_bound(opts.eps, opts.k);
    let se = (bound.clamp(0.0, 1.0) * (1.0 - bound.clamp(0.0, 1.0)) / opts.runs as f64).sqrt();
    let mut report = VerifyReport::new(Check::Lemma1);
    report.detail("pass_rate", rate);
    report.detail("bound", bound);
    report.detail("binomial_se", se);
    report.detail("runs", opts.runs as f64);
    report.require(lower_holds(bound, rate, se));
    report.reports.push(
        BoundReport::new("lemma1_coverage", BoundKind::Lower, bound)
            .component("epsilon", opts.eps)
            .component("k", opts.k as f64)
            .compare(rate, se),
    );
    Ok(report)
}

/// For `m >= K + 1` the uniform vector maximizes `sum q (1 - q)^K`.
pub fn verify_lemma_maxq(m: usize, k: usize) -> Result<VerifyReport> {
    if m < k + 1 {
        return Err(invalid(format!("lemma_maxq needs m >= K + 1, got m={m}, K={k}")));
    }
    let uniform = miss_weighted_sum(&vec![1.0 / m as f64; m], k as u32)?;
    let closed_form = (1.0 - 1.0 / m as f64).powi(k as i32);
    let grid = simplex_grid_max(m, k as u32, 100)?;
    let mut report = VerifyReport::new(Check::LemmaMaxq);
    report.detail("uniform_value", uniform);
    report.detail("closed_form", closed_form);
    report.detail("grid_max", grid);
    report.require((grid - uniform).abs() <= 1e-3 && grid <= uniform + 1e-12);
    report.require((uniform - closed_form).abs() <= 1e-12);
    Ok(report)
}

pub fn verify_iid_band(opts: &VerifyOptions) -> Result<VerifyReport> {
    let (lo, hi) = iid_case_bounds(opts.n, opts.subset_size)?;
    let family = BanditFamily::gaussian(RewardModel::LinearCanonical(make_orthonormal_space(opts.n)?));
    let subset: Vec<usize> = (0..opts.subset_size).collect();
    let est = estimate_regret(&family, &subset, opts.samples, opts.seed)?;
    let mut report = VerifyReport::new(Check::IidBand);
    report.detail("lower", lo);
    report.detail("upper", hi);
    report.detail("regret_mean", est.mean);
    report.detail("regret_se", est.standard_error);
    report.require(lower_holds(lo, est.mean, est.standard_error));
    report.require(upper_holds(hi, est.mean, est.standard_error));
    report.reports.push(
        BoundReport::new("iid_upper", BoundKind::Upper, hi).compare(est.mean, est.standard_error),
    );
    report.reports.push(
        BoundReport::new("iid_lower", BoundKind::Lower, lo).compare(est.mean, est.standard_error),
    );
    Ok(report)
}

pub fn verify_widths(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut report = VerifyReport::new(Check::Widths);
    for (i, &n) in opts.sizes.iter().enumerate() {
        if n < 2 {
            return Err(invalid("widths needs sizes >= 2"));
        }
        let family = BanditFamily::gaussian(RewardModel::LinearCanonical(make_orthonormal_space(n)?));
        let all: Vec<usize> = (0..n).collect();
        let mut rng = shard_rng(opts.seed, i as u64);
        let est = gaussian_width_mc(&family, &all, None, opts.samples, &mut rng)?;
        let (lo, hi) = expected_max_iid_bounds(n);
        report.detail(format!("n{n}_width"), est.mean);
        report.detail(format!("n{n}_se"), est.standard_error);
        report.require(lower_holds(lo, est.mean, est.standard_error));
        report.require(upper_holds(hi, est.mean, est.standard_error));
        if n == 2 {
            let exact = 1.0 / std::f64::consts::PI.sqrt();
            report.detail("n2_closed_form", exact);
            report.require((est.mean - exact).abs() <= 0.01);
        }
        report.reports.push(
            BoundReport::new(format!("width_upper_n{n}"), BoundKind::Upper, hi)
                .compare(est.mean, est.standard_error),
        );
        report.reports.push(
            BoundReport::new(format!("width_lower_n{n}"), BoundKind::Lower, lo)
                .compare(est.mean, est.standard_error),
        );
    }
    Ok(report)
}

/// Bounds and regrets on one sphere-cluster repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereRep {
    pub thm1_upper: BoundReport,
    pub thm1_lower: BoundReport,
    pub thm2_upper: BoundReport,
    pub reference_regret: (f64, f64),
    pub algorithm_regret: (f64, f64),
    pub violation_rate: f64,
}

/// One repetition of the sphere-cluster bound comparison with the true
/// five-cluster partition and its reference points.
pub fn sphere_bound_rep(opts: &VerifyOptions, rep: usize) -> Result<SphereRep> {
    let seed = opts.seed.wrapping_add(rep as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (space, truth) = make_sphere_clusters(5, 200, opts.spread, 3, &mut rng)?;
    let family = BanditFamily::gaussian(RewardModel::LinearCanonical(space));
    let m = truth.num_clusters();
    let eps = truth.epsilon();
    let widths: Vec<f64> = cluster_widths_mc(&family, &truth, opts.samples, &mut rng)?
        .iter()
        .map(|w| w.mean)
        .collect();
    let q = estimate_importance(&family, &truth, opts.samples, &mut rng)?;
    let correction = sampling_correction(&q.frequencies, opts.k)?;
    let second = second_moment_mc(&family, opts.samples, &mut rng)?;
    let violation_rate = assumption1_violation_rate(&family, &truth, opts.samples, &mut rng)?;

    let refs = truth.reference_points().expect("sphere partitions carry references").to_vec();
    let reference_regret = estimate_regret(&family, &refs, opts.samples, rng.random())?;
    let sel = epsilon_net_select(&family, OracleSpec::Exact, StopRule::Iterations(opts.k), &mut rng)?;
    let algorithm_regret = estimate_regret(&family, &sel.chosen, opts.samples, rng.random())?;

    let (upper, lower) = theorem1_bounds(&widths, m, eps, opts.c_upper)?;
    let thm2 = theorem2_upper_bound(&widths, m, eps, correction, second.mean, opts.c_upper)?;
    Ok(SphereRep {
        thm1_upper: upper.compare(reference_regret.mean, reference_regret.standard_error),
        thm1_lower: lower
            .component("assumption1_violation_rate", violation_rate)
            .compare(reference_regret.mean, reference_regret.standard_error),
        thm2_upper: thm2.compare(algorithm_regret.mean, algorithm_regret.standard_error),
        reference_regret: (reference_regret.mean, reference_regret.standard_error),
        algorithm_regret: (algorithm_regret.mean, algorithm_regret.standard_error),
        violation_rate,
    })
}

fn sphere_reps(opts: &VerifyOptions) -> Result<Vec<SphereRep>> {
    if opts.runs == 0 {
        return Err(invalid("need runs >= 1"));
    }
    (0..opts.runs)
        .into_par_iter()
        .map(|rep| sphere_bound_rep(opts, rep))
        .collect()
}

/// Reference-set bounds on sphere clusters. The lower bound is only
/// enforced when the empirical Assumption-1 violation rate is below 1%.
pub fn verify_thm1(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut report = VerifyReport::new(Check::Thm1);
    let mut enforced_lower = 0;
    for rep in sphere_reps(opts)? {
        let (mean, se) = rep.reference_regret;
        report.require(upper_holds(rep.thm1_upper.value, mean, se));
        if rep.violation_rate < 0.01 {
            enforced_lower += 1;
            report.require(lower_holds(rep.thm1_lower.value, mean, se));
        }
        report.reports.push(rep.thm1_upper);
        report.reports.push(rep.thm1_lower);
    }
    report.detail("lower_bounds_enforced", enforced_lower as f64);
    Ok(report)
}

pub fn verify_thm2(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut report = VerifyReport::new(Check::Thm2);
    for rep in sphere_reps(opts)? {
        let (mean, se) = rep.algorithm_regret;
        report.require(upper_holds(rep.thm2_upper.value, mean, se));
        report.reports.push(rep.thm2_upper);
    }
    Ok(report)
}

/// Covering-number bound on a kernel grid, with the algorithm run for the
/// threshold number of iterations at every scale.
pub fn verify_thm3(opts: &VerifyOptions) -> Result<VerifyReport> {
    let grid = make_grid_space(-5.0, 5.0, opts.grid_points)?;
    let model = build_kernel_model(grid, KernelSpec::rbf(opts.length_scale)?)?;
    let family = BanditFamily::gaussian(RewardModel::KernelSampled(model));
    let dim = family.model.latent_dim();
    let mut report = VerifyReport::new(Check::Thm3);
    let mut previous = f64::INFINITY;
    for (i, &eps) in opts.eps_list.iter().enumerate() {
        let probe = theorem3_bound(&family.model, dim, eps, 1, opts.c_upper)?;
        let k = probe.components["k_threshold"] as usize;
        let bound = theorem3_bound(&family.model, dim, eps, k, opts.c_upper)?;
        let mut rng = shard_rng(opts.seed, i as u64);
        let sel = epsilon_net_select(&family, OracleSpec::Exact, StopRule::Iterations(k), &mut rng)?;
        let est = estimate_regret(&family, &sel.chosen, opts.samples, rng.random())?;
        report.detail(format!("eps{eps}_bound"), bound.value);
        report.detail(format!("eps{eps}_k"), k as f64);
        report.detail(format!("eps{eps}_regret"), est.mean);
        report.require(bound.value < previous);
        report.require(upper_holds(bound.value, est.mean, est.standard_error));
        previous = bound.value;
        report
            .reports
            .push(bound.component("chosen", sel.chosen.len() as f64).compare(est.mean, est.standard_error));
    }
    Ok(report)
}

/// Two tight clusters at `+e1` and `-e1`, three actions each.
pub fn thm5_fixture(delta: f64) -> Result<(BanditFamily, Partition)> {
    let mut actions = Vec::new();
    for sign in [1.0, -1.0] {
        for j in 0..3 {
            actions.push(vec![sign, j as f64 * delta]);
        }
    }
    let space = ActionSpace::explicit(actions)?;
    let family = BanditFamily::gaussian(RewardModel::LinearCanonical(space));
    let partition = Partition::new(vec![vec![0, 1, 2], vec![3, 4, 5]], Some(vec![0, 3]), &family.model)?;
    Ok((family, partition))
}

/// Algorithm lower bound on a well-separated two-cluster instance. Expected
/// regret is taken over both the algorithm's draws and the evaluation
/// instances; its standard error comes from the spread across runs.
pub fn verify_thm5(opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.runs < 2 {
        return Err(invalid("thm5 needs runs >= 2"));
    }
    let (family, partition) = thm5_fixture(0.002)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let violation = assumption1_violation_rate(&family, &partition, opts.samples, &mut rng)?;
    let widths: Vec<f64> = cluster_widths_mc(&family, &partition, opts.samples, &mut rng)?
        .iter()
        .map(|w| w.mean)
        .collect();
    let min_width = widths.iter().copied().fold(f64::INFINITY, f64::min);
    let q = estimate_importance(&family, &partition, opts.samples, &mut rng)?;
    let correction = sampling_correction(&q.frequencies, opts.k)?;
    let per_run = (opts.samples / opts.runs).max(1);
    let base: u64 = rng.random();
    let means: Vec<f64> = (0..opts.runs)
        .into_par_iter()
        .map(|run| -> Result<f64> {
            let mut r = shard_rng(base, run as u64);
            let sel = epsilon_net_select(&family, OracleSpec::Exact, StopRule::Iterations(opts.k), &mut r)?;
            Ok(estimate_regret(&family, &sel.chosen, per_run, r.random())?.mean)
        })
        .collect::<Result<_>>()?;
    let regret = Moments::from_slice(&means);
    let m = partition.num_clusters();
    let eps = partition.epsilon();
    let mut report = VerifyReport::new(Check::Thm5);
    report.detail("assumption1_violation_rate", violation);
    report.detail("regret_mean", regret.mean);
    report.detail("regret_se", regret.standard_error());
    report.require(violation < 0.01);
    for c_upper in [opts.c_upper, 0.0] {
        let value = theorem5_lower_bound(min_width, m, eps, correction, c_upper, opts.c_lower);
        report.require(lower_holds(value, regret.mean, regret.standard_error()));
        report.reports.push(
            BoundReport::new(format!("thm5_lower_C{c_upper}"), BoundKind::Lower, value)
                .component("min_width", min_width)
                .component("sampling_correction", correction)
                .component("C", c_upper)
                .component("c", opts.c_lower)
                .component("epsilon", eps)
                .compare(regret.mean, regret.standard_error()),
        );
    }
    Ok(report)
}
