//! Metric machinery and regret-bound evaluators.
//!
//! Distances are the L2 distance induced by the reward process. For linear
//! models that is the Euclidean distance between action vectors; for kernel
//! models it is `sqrt(k(a,a) + k(b,b) - 2 k(a,b))`, independent of the raw
//! grid coordinates.
//!
//! Strictness: a geometric net covers with `d < eps`; reference balls are
//! closed, `d <= eps`.
//!
//! The absolute constants in the bounds are never instantiated by the theory,
//! so every evaluator takes them as parameters ([`DEFAULT_C`], [`DEFAULT_LOWER_C`]).

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{euclidean, BanditFamily, KernelSpec};
use crate::montecarlo::{argmax, sharded, Moments};

pub const DEFAULT_C: f64 = 3.0;
pub const DEFAULT_LOWER_C: f64 = 0.1;

/// Pairwise distances over indices `0..len()`.
pub trait Metric {
    fn len(&self) -> usize;
    fn distance(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Euclidean distance between two vectors.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(euclidean(a, b))
}

/// Process L2 distance between two kernel inputs.
pub fn process_distance(kernel: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    let v = kernel.value(a, a)? + kernel.value(b, b)? - 2.0 * kernel.value(a, b)?;
    Ok(v.max(0.0).sqrt())
}

pub fn diameter<M: Metric + ?Sized>(metric: &M) -> f64 {
    subset_diameter(metric, &(0..metric.len()).collect::<Vec<_>>())
}

pub fn subset_diameter<M: Metric + ?Sized>(metric: &M, members: &[usize]) -> f64 {
    let mut best: f64 = 0.0;
    for (k, &i) in members.iter().enumerate() {
        for &j in &members[k + 1..] {
            best = best.max(metric.distance(i, j));
        }
    }
    best
}

/// Disjoint clusters covering every action index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    clusters: Vec<Vec<usize>>,
    reference_points: Option<Vec<usize>>,
    diameters: Vec<f64>,
    epsilon: f64,
    assignment: Vec<usize>,
}

impl Partition {
    pub fn new<M: Metric + ?Sized>(
        clusters: Vec<Vec<usize>>,
        reference_points: Option<Vec<usize>>,
        metric: &M,
    ) -> Result<Self> {
        let n = metric.len();
        let mut assignment = vec![usize::MAX; n];
        for (c, cluster) in clusters.iter().enumerate() {
            if cluster.is_empty() {
                return Err(invalid(format!("cluster {c} is empty")));
            }
            for &i in cluster {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, len: n });
                }
                if assignment[i] != usize::MAX {
                    return Err(invalid(format!("action {i} appears in two clusters")));
                }
                assignment[i] = c;
            }
        }
        if let Some(missing) = assignment.iter().position(|&c| c == usize::MAX) {
            return Err(invalid(format!("action {missing} is not in any cluster")));
        }
        if let Some(refs) = &reference_points {
            if refs.len() != clusters.len() {
                return Err(invalid("one reference point per cluster is required"));
            }
            for (c, &r) in refs.iter().enumerate() {
                if r >= n || assignment[r] != c {
                    return Err(invalid(format!(
                        "reference {r} does not belong to cluster {c}"
                    )));
                }
            }
        }
        let diameters: Vec<f64> = clusters.iter().map(|c| subset_diameter(metric, c)).collect();
        let epsilon = diameters.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            clusters,
            reference_points,
            diameters,
            epsilon,
            assignment,
        })
    }

    /// Groups actions by label; clusters are ordered by first appearance of
    /// each label value, ascending.
    pub fn from_labels<M: Metric + ?Sized>(labels: &[usize], metric: &M) -> Result<Self> {
        if labels.len() != metric.len() {
            return Err(invalid("one label per action is required"));
        }
        let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_label.entry(l).or_default().push(i);
        }
        Self::new(by_label.into_values().collect(), None, metric)
    }

    pub fn single<M: Metric + ?Sized>(metric: &M) -> Result<Self> {
        Self::new(vec![(0..metric.len()).collect()], None, metric)
    }

    pub fn singletons<M: Metric + ?Sized>(metric: &M) -> Result<Self> {
        let n = metric.len();
        Self::new((0..n).map(|i| vec![i]).collect(), Some((0..n).collect()), metric)
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn reference_points(&self) -> Option<&[usize]> {
        self.reference_points.as_deref()
    }

    pub fn with_reference_points(mut self, refs: Vec<usize>) -> Result<Self> {
        if refs.len() != self.clusters.len() {
            return Err(invalid("one reference point per cluster is required"));
        }
        for (c, &r) in refs.iter().enumerate() {
            if self.assignment.get(r) != Some(&c) {
                return Err(invalid(format!("reference {r} does not belong to cluster {c}")));
            }
        }
        self.reference_points = Some(refs);
        Ok(self)
    }

    pub fn diameters(&self) -> &[f64] {
        &self.diameters
    }

    /// Largest cluster diameter.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn cluster_of(&self, action: usize) -> usize {
        self.assignment[action]
    }

    pub fn num_actions(&self) -> usize {
        self.assignment.len()
    }

    /// True when every cluster lies in the closed ball of radius `radius`
    /// around its reference point. False when no reference points are set.
    pub fn within_reference_balls<M: Metric + ?Sized>(&self, metric: &M, radius: f64) -> bool {
        let Some(refs) = &self.reference_points else {
            return false;
        };
        self.clusters
            .iter()
            .zip(refs)
            .all(|(cluster, &r)| cluster.iter().all(|&a| metric.distance(a, r) <= radius))
    }

    /// Writes `idx,cluster`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "idx,cluster")?;
        for (i, c) in self.assignment.iter().enumerate() {
            writeln!(out, "{i},{c}")?;
        }
        Ok(())
    }
}

/// Farthest-point greedy geometric net: starts at `start` and keeps adding
/// the point farthest from the net (lowest index on ties) until every point
/// is strictly within `eps` of a net point.
pub fn greedy_epsilon_net<M: Metric + ?Sized>(metric: &M, eps: f64, start: usize) -> Result<Vec<usize>> {
    if !(eps > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    let n = metric.len();
    if start >= n {
        return Err(Error::IndexOutOfRange { index: start, len: n });
    }
    let mut net = vec![start];
    let mut nearest: Vec<f64> = (0..n).map(|i| metric.distance(i, start)).collect();
    loop {
        let far = argmax(&nearest);
        if nearest[far] < eps {
            return Ok(net);
        }
        net.push(far);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(metric.distance(i, far));
        }
    }
}

/// Maximum number of points for [`exact_covering_number`].
pub const EXACT_COVERING_LIMIT: usize = 20;

/// Smallest strict-`eps` net centered at actions, by exhaustive search.
pub fn exact_covering_number<M: Metric + ?Sized>(metric: &M, eps: f64) -> Result<usize> {
    let n = metric.len();
    if n > EXACT_COVERING_LIMIT {
        return Err(invalid(format!(
            "exact covering limited to {EXACT_COVERING_LIMIT} points, got {n}"
        )));
    }
    if !(eps > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    let covers: Vec<u32> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| metric.distance(i, j) < eps)
                .fold(0u32, |m, j| m | (1 << j))
        })
        .collect();
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let mut best = n;
    for mask in 1u32..=full {
        let size = mask.count_ones() as usize;
        if size >= best {
            continue;
        }
        let covered = (0..n)
            .filter(|&i| mask & (1 << i) != 0)
            .fold(0u32, |acc, i| acc | covers[i]);
        if covered == full {
            best = size;
        }
    }
    Ok(best)
}

/// Assigns every action to its nearest net point (lowest net position on ties).
pub fn partition_from_net<M: Metric + ?Sized>(metric: &M, net: &[usize]) -> Result<Partition> {
    if net.is_empty() {
        return Err(invalid("net must not be empty"));
    }
    let n = metric.len();
    if let Some(&bad) = net.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    let mut clusters = vec![Vec::new(); net.len()];
    for a in 0..n {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, &p) in net.iter().enumerate() {
            let d = if a == p { 0.0 } else { metric.distance(a, p) };
            if d < best_d {
                best = k;
                best_d = d;
            }
        }
        clusters[best].push(a);
    }
    Partition::new(clusters, Some(net.to_vec()), metric)
}

/// Estimated importance measure `q(r) = P[a*(theta) in r]` per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEstimate {
    pub frequencies: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub samples: usize,
    /// True when `q` was integrated exactly over a finite instance support.
    pub exact: bool,
}

/// Frequency with which the exact argmax lands in each cluster.
///
/// Finite-support instance distributions are integrated exactly; otherwise
/// `samples` fresh instances are drawn.
pub fn estimate_importance<R: Rng + ?Sized>(
    family: &BanditFamily,
    partition: &Partition,
    samples: usize,
    rng: &mut R,
) -> Result<ImportanceEstimate> {
    if samples == 0 {
        return Err(invalid("importance estimation needs at least one sample"));
    }
    if partition.num_actions() != family.num_actions() {
        return Err(invalid("partition does not match the action space"));
    }
    let m = partition.num_clusters();
    if let Some((atoms, probs)) = family.instances.finite_support() {
        let mut q = vec![0.0; m];
        for (atom, p) in atoms.iter().zip(probs) {
            let rewards = family.model.rewards(atom);
            q[partition.cluster_of(argmax(&rewards))] += p;
        }
        return Ok(ImportanceEstimate {
            frequencies: q,
            standard_errors: vec![0.0; m],
            samples: atoms.len(),
            exact: true,
        });
    }
    let seed = rng.random();
    let counts = sharded(samples, seed, |rng, count| {
        let mut hits = vec![0u64; m];
        let mut buf = Vec::new();
        for _ in 0..count {
            family.sample_rewards_into(rng, &mut buf);
            hits[partition.cluster_of(argmax(&buf))] += 1;
        }
        hits
    })
    .into_iter()
    .fold(vec![0u64; m], |mut acc, h| {
        acc.iter_mut().zip(h).for_each(|(a, b)| *a += b);
        acc
    });
    let total = samples as f64;
    let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let standard_errors = frequencies
        .iter()
        .map(|p| (p * (1.0 - p) / total).sqrt())
        .collect();
    Ok(ImportanceEstimate {
        frequencies,
        standard_errors,
        samples,
        exact: false,
    })
}

/// True iff every cluster with `q(r) > eps` intersects `subset`.
pub fn check_measure_net(
    subset: &[usize],
    partition: &Partition,
    importance: &ImportanceEstimate,
    eps: f64,
) -> Result<bool> {
    if importance.frequencies.len() != partition.num_clusters() {
        return Err(invalid("importance estimate does not match the partition"));
    }
    let mut hit = vec![false; partition.num_clusters()];
    for &a in subset {
        if a >= partition.num_actions() {
            return Err(Error::IndexOutOfRange {
                index: a,
                len: partition.num_actions(),
            });
        }
        hit[partition.cluster_of(a)] = true;
    }
    Ok(importance
        .frequencies
        .iter()
        .zip(&hit)
        .all(|(&q, &h)| q <= eps || h))
}

/// Lower bound on the probability that `k` draws form a measure-theoretic
/// `eps`-net: `1 - exp(-k eps) / eps`.
pub fn measure_net_probability_bound(eps: f64, k: usize) -> f64 {
    1.0 - (-(k as f64) * eps).exp() / eps
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std: f64,
    pub standard_error: f64,
    pub samples: usize,
}

impl From<Moments> for McEstimate {
    fn from(m: Moments) -> Self {
        Self {
            mean: m.mean,
            std: m.std(),
            standard_error: m.standard_error(),
            samples: m.count as usize,
        }
    }
}

/// `E[max_{a in cluster} (mu_a - mu_ref)]`, or `E[max mu_a]` without a reference.
pub fn gaussian_width_mc<R: Rng + ?Sized>(
    family: &BanditFamily,
    cluster: &[usize],
    reference: Option<usize>,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if cluster.is_empty() || samples == 0 {
        return Err(invalid("width estimation needs a non-empty cluster and samples"));
    }
    let n = family.num_actions();
    if let Some(&bad) = cluster.iter().chain(reference.iter()).find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    let seed = rng.random();
    let moments: Moments = sharded(samples, seed, |rng, count| {
        let mut m = Moments::default();
        let mut buf = Vec::new();
        for _ in 0..count {
            family.sample_rewards_into(rng, &mut buf);
            let top = cluster.iter().map(|&a| buf[a]).fold(f64::NEG_INFINITY, f64::max);
            m.push(top - reference.map_or(0.0, |r| buf[r]));
        }
        m
    })
    .into_iter()
    .collect();
    Ok(moments.into())
}

/// Per-cluster widths, all estimated from the same instances. Uses the
/// partition's reference points when present.
pub fn cluster_widths_mc<R: Rng + ?Sized>(
    family: &BanditFamily,
    partition: &Partition,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<McEstimate>> {
    if samples == 0 {
        return Err(invalid("width estimation needs samples"));
    }
    let m = partition.num_clusters();
    let refs = partition.reference_points();
    let seed = rng.random();
    let shards = sharded(samples, seed, |rng, count| {
        let mut acc = vec![Moments::default(); m];
        let mut buf = Vec::new();
        for _ in 0..count {
            family.sample_rewards_into(rng, &mut buf);
            for (c, cluster) in partition.clusters().iter().enumerate() {
                let top = cluster.iter().map(|&a| buf[a]).fold(f64::NEG_INFINITY, f64::max);
                acc[c].push(top - refs.map_or(0.0, |r| buf[r[c]]));
            }
        }
        acc
    });
    let mut total = vec![Moments::default(); m];
    for shard in &shards {
        total.iter_mut().zip(shard).for_each(|(t, s)| t.merge(s));
    }
    Ok(total.into_iter().map(McEstimate::from).collect())
}

/// `E[(max_a mu_a)^2]` over the full action space.
pub fn second_moment_mc<R: Rng + ?Sized>(
    family: &BanditFamily,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if samples == 0 {
        return Err(invalid("second moment needs samples"));
    }
    let seed = rng.random();
    let moments: Moments = sharded(samples, seed, |rng, count| {
        let mut m = Moments::default();
        let mut buf = Vec::new();
        for _ in 0..count {
            family.sample_rewards_into(rng, &mut buf);
            let top = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m.push(top * top);
        }
        m
    })
    .into_iter()
    .collect();
    Ok(moments.into())
}

/// Fraction of instances for which the cluster holding the optimal action
/// does not dominate every action outside it.
pub fn assumption1_violation_rate<R: Rng + ?Sized>(
    family: &BanditFamily,
    partition: &Partition,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(invalid("violation rate needs samples"));
    }
    let seed = rng.random();
    let violations: u64 = sharded(samples, seed, |rng, count| {
        let mut bad = 0u64;
        let mut buf = Vec::new();
        for _ in 0..count {
            family.sample_rewards_into(rng, &mut buf);
            let c = partition.cluster_of(argmax(&buf));
            let inside = partition.clusters()[c]
                .iter()
                .map(|&a| buf[a])
                .fold(f64::INFINITY, f64::min);
            let outside = buf
                .iter()
                .enumerate()
                .filter(|&(a, _)| partition.cluster_of(a) != c)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if inside < outside {
                bad += 1;
            }
        }
        bad
    })
    .into_iter()
    .sum();
    Ok(violations as f64 / samples as f64)
}

fn check_probability_vector(q: &[f64]) -> Result<()> {
    if q.is_empty() || q.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(invalid("q must be a non-empty vector of probabilities"));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("q sums to {total}, not 1")));
    }
    Ok(())
}

/// `sum_r q(r) (1 - q(r))^power`.
pub fn miss_weighted_sum(q: &[f64], power: u32) -> Result<f64> {
    check_probability_vector(q)?;
    Ok(q.iter().map(|&p| p * (1.0 - p).powi(power as i32)).sum())
}

/// Sampling correction `E_q[(1 - q(r))^{2K}]`.
pub fn sampling_correction(q: &[f64], k: usize) -> Result<f64> {
    miss_weighted_sum(q, 2 * k as u32)
}

/// Largest `sum q (1 - q)^power` over simplex points with coordinates in
/// multiples of `1 / resolution`.
pub fn simplex_grid_max(m: usize, power: u32, resolution: usize) -> Result<f64> {
    if m == 0 || resolution == 0 {
        return Err(invalid("simplex grid needs m >= 1 and a positive resolution"));
    }
    fn recurse(remaining_parts: usize, remaining: usize, resolution: usize, power: u32, acc: f64, best: &mut f64) {
        let term = |c: usize| {
            let p = c as f64 / resolution as f64;
            p * (1.0 - p).powi(power as i32)
        };
        if remaining_parts == 1 {
            let v = acc + term(remaining);
            if v > *best {
                *best = v;
            }
            return;
        }
        for c in 0..=remaining {
            recurse(remaining_parts - 1, remaining - c, resolution, power, acc + term(c), best);
        }
    }
    let mut best = f64::NEG_INFINITY;
    recurse(m, resolution, resolution, power, 0.0, &mut best);
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Upper,
    Lower,
}

/// Monte-Carlo regret a bound is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub mean: f64,
    pub standard_error: f64,
}

/// A numerically evaluated bound, optionally checked against a regret estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub kind: BoundKind,
    pub value: f64,
    pub components: BTreeMap<String, f64>,
    pub regret: Option<RegretSummary>,
    pub verdict: Option<bool>,
}

impl BoundReport {
    pub const VERDICT_SE: f64 = 2.0;

    pub fn new(name: impl Into<String>, kind: BoundKind, value: f64) -> Self {
        Self {
            name: name.into(),
            kind,
            value,
            components: BTreeMap::new(),
            regret: None,
            verdict: None,
        }
    }

    pub fn component(mut self, key: &str, value: f64) -> Self {
        self.components.insert(key.to_string(), value);
        self
    }

    /// Upper bounds hold when `mean - 2 se <= value`; lower bounds when
    /// `mean + 2 se >= value`.
    pub fn compare(mut self, mean: f64, standard_error: f64) -> Self {
        let slack = Self::VERDICT_SE * standard_error;
        self.verdict = Some(match self.kind {
            BoundKind::Upper => mean - slack <= self.value,
            BoundKind::Lower => mean + slack >= self.value,
        });
        self.regret = Some(RegretSummary {
            mean,
            standard_error,
        });
        self
    }

    pub fn holds(&self) -> bool {
        self.verdict.unwrap_or(false)
    }
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

fn concentration(c: f64, eps: f64, m: usize) -> f64 {
    c * eps * (m.max(1) as f64).ln().sqrt()
}

/// Reference-set bounds: `max width + C eps sqrt(ln m)` and
/// `min width - C eps sqrt(ln m)` (the latter requires cluster separation).
pub fn theorem1_bounds(widths: &[f64], m: usize, eps: f64, c: f64) -> Result<(BoundReport, BoundReport)> {
    if widths.is_empty() || m == 0 {
        return Err(invalid("bounds need at least one cluster width"));
    }
    let conc = concentration(c, eps, m);
    let upper = BoundReport::new("thm1_upper", BoundKind::Upper, max_of(widths) + conc)
        .component("max_width", max_of(widths))
        .component("log_term", conc)
        .component("C", c)
        .component("epsilon", eps)
        .component("m", m as f64);
    let lower = BoundReport::new("thm1_lower", BoundKind::Lower, min_of(widths) - conc)
        .component("min_width", min_of(widths))
        .component("log_term", conc)
        .component("C", c)
        .component("epsilon", eps)
        .component("m", m as f64);
    Ok((upper, lower))
}

/// Algorithm bound: `max width + C eps sqrt(ln m) + sqrt(correction * E[(max mu)^2])`.
pub fn theorem2_upper_bound(
    widths: &[f64],
    m: usize,
    eps: f64,
    correction: f64,
    second_moment: f64,
    c: f64,
) -> Result<BoundReport> {
    if widths.is_empty() || m == 0 {
        return Err(invalid("bound needs at least one cluster width"));
    }
    let all = widths.iter().chain([&eps, &correction, &second_moment, &c]);
    if all.into_iter().any(|x| !x.is_finite()) {
        return Err(invalid("bound components must be finite"));
    }
    let width = max_of(widths);
    let conc = concentration(c, eps, m);
    let corr = (correction * second_moment).max(0.0).sqrt();
    Ok(BoundReport::new("thm2_upper", BoundKind::Upper, width + conc + corr)
        .component("max_width", width)
        .component("log_term", conc)
        .component("correction_term", corr)
        .component("sampling_correction", correction)
        .component("second_moment", second_moment)
        .component("C", c)
        .component("epsilon", eps)
        .component("m", m as f64))
}

/// Worst-case covering-number bound at scale `eps`.
///
/// Uses the greedy-net size `N` in place of the covering number, the metric
/// diameter `M`, the sample-size threshold `K >= (M^2 N / (eps^2 e) - 1) / 2`
/// and the value `2 eps min(sqrt(n), sqrt(ln|A| / 2) + 4) + C eps sqrt(ln N)`.
pub fn theorem3_bound<M: Metric + ?Sized>(
    metric: &M,
    ambient_dim: usize,
    eps: f64,
    k: usize,
    c: f64,
) -> Result<BoundReport> {
    let net = greedy_epsilon_net(metric, eps, 0)?;
    let covering = net.len();
    let diam = diameter(metric);
    let threshold = theorem3_k_threshold(diam, covering, eps);
    let size = metric.len() as f64;
    let dim_term = (ambient_dim as f64).sqrt().min((0.5 * size.ln()).sqrt() + 4.0);
    let conc = concentration(c, eps, covering);
    let value = 2.0 * eps * dim_term + conc;
    Ok(BoundReport::new("thm3_upper", BoundKind::Upper, value)
        .component("covering_number", covering as f64)
        .component("diameter", diam)
        .component("k_threshold", threshold as f64)
        .component("k", k as f64)
        .component("k_meets_threshold", if k >= threshold { 1.0 } else { 0.0 })
        .component("dimension_term", 2.0 * eps * dim_term)
        .component("log_term", conc)
        .component("C", c)
        .component("epsilon", eps))
}

/// Smallest integer `K >= (M^2 N / (eps^2 e) - 1) / 2`, at least 1.
pub fn theorem3_k_threshold(diameter: f64, covering: usize, eps: f64) -> usize {
    let raw = 0.5 * (diameter * diameter * covering as f64 / (eps * eps * std::f64::consts::E) - 1.0);
    raw.ceil().max(1.0) as usize
}

/// Algorithm lower bound `c sqrt(correction) (min width - C eps sqrt(ln m))`,
/// floored at zero.
pub fn theorem5_lower_bound(
    min_width: f64,
    m: usize,
    eps: f64,
    correction: f64,
    c_upper: f64,
    c_lower: f64,
) -> f64 {
    let gap = min_width - concentration(c_upper, eps, m);
    (c_lower * correction.max(0.0).sqrt() * gap).max(0.0)
}

/// Regret band for any `s`-subset of `n` i.i.d. standard normal actions
/// (natural logarithms throughout).
pub fn iid_case_bounds(n: usize, subset_size: usize) -> Result<(f64, f64)> {
    if n < 2 || subset_size == 0 || subset_size > n {
        return Err(invalid("need n >= 2 and 1 <= subset size <= n"));
    }
    let (lo_full, hi_full) = expected_max_iid_bounds(n);
    let (lo_sub, hi_sub) = expected_max_iid_bounds(subset_size);
    Ok((lo_full - hi_sub, hi_full - lo_sub))
}

/// `sqrt(ln N) / sqrt(pi ln 2) <= E max <= sqrt(2 ln N)` for `N` i.i.d. N(0,1).
pub fn expected_max_iid_bounds(n: usize) -> (f64, f64) {
    let ln = (n as f64).ln();
    let lower = ln.sqrt() / (std::f64::consts::PI * std::f64::consts::LN_2).sqrt();
    (lower, (2.0 * ln).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        build_kernel_model, example1_family, make_grid_space, make_orthonormal_space,
        make_sphere_clusters, ActionSpace, RewardModel,
    };
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(points: &[f64]) -> ActionSpace {
        ActionSpace::explicit(points.iter().map(|&x| vec![x]).collect()).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn distances() {
        assert_eq!(l2_distance(&[0.3, 1.0], &[0.3, 1.0]).unwrap(), 0.0);
        assert!((l2_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(l2_distance(&[1.0], &[1.0, 2.0]).is_err());
        let d = process_distance(&KernelSpec::Rbf { length_scale: 1.0 }, &[0.0], &[2.0]).unwrap();
        assert!((d - 1.3150397079657992).abs() < 1e-15);
    }

    #[test]
    fn kernel_metric_uses_process_distance() {
        let grid = make_grid_space(0.0, 2.0, 3).unwrap();
        let model =
            RewardModel::KernelSampled(build_kernel_model(grid, KernelSpec::Rbf { length_scale: 1.0 }).unwrap());
        assert!((model.distance(0, 2) - 1.3150397079657992).abs() < 1e-15);
        assert_eq!(model.distance(1, 1), 0.0);
    }

    /// Brute force over every subset: is there a strict-eps net of the given size?
    fn brute_force_net_exists(points: &[f64], eps: f64, size: usize) -> bool {
        let n = points.len();
        (0u32..(1 << n)).filter(|m| m.count_ones() as usize == size).any(|mask| {
            points.iter().all(|&x| {
                (0..n).any(|j| mask & (1 << j) != 0 && (x - points[j]).abs() < eps)
            })
        })
    }

    #[test]
    fn greedy_net_on_three_points() {
        let s = line(&[0.0, 1.0, 2.0]);
        assert_eq!(greedy_epsilon_net(&s, 1.1, 0).unwrap(), vec![0, 2]);
        assert!(brute_force_net_exists(&[0.0, 1.0, 2.0], 1.1, 2));
        // A single center would need the middle point, which is at distance
        // exactly 1 < 1.1 from both ends.
        assert!(brute_force_net_exists(&[0.0, 1.0, 2.0], 1.1, 1));
        assert_eq!(exact_covering_number(&s, 1.1).unwrap(), 1);
        assert_eq!(greedy_epsilon_net(&s, 2.5, 0).unwrap().len(), 1);
        assert_eq!(greedy_epsilon_net(&s, 1e-9, 0).unwrap().len(), 3);
        assert!(greedy_epsilon_net(&s, 0.0, 0).is_err());
    }

    #[test]
    fn partitions_from_nets() {
        let s = line(&[0.0, 1.0, 2.0]);
        let p = partition_from_net(&s, &[0, 2]).unwrap();
        assert_eq!(p.clusters(), &[vec![0, 1], vec![2]]);
        let all = partition_from_net(&s, &[0, 1, 2]).unwrap();
        assert!(all.diameters().iter().all(|&d| d == 0.0));
        assert!(partition_from_net(&s, &[]).is_err());
    }

    #[test]
    fn sphere_net_recovers_true_labels() {
        let (space, truth) = make_sphere_clusters(5, 200, 0.01, 3, &mut rng(8)).unwrap();
        let centers = match space.provenance() {
            crate::model::Provenance::SphereClusters { centers, .. } => centers.clone(),
            _ => unreachable!(),
        };
        let net: Vec<usize> = centers
            .iter()
            .map(|c| {
                (0..space.len())
                    .min_by(|&a, &b| {
                        euclidean(&space.actions()[a], c)
                            .total_cmp(&euclidean(&space.actions()[b], c))
                    })
                    .unwrap()
            })
            .collect();
        let p = partition_from_net(&space, &net).unwrap();
        assert_eq!(p.clusters(), truth.clusters());
    }

    #[test]
    fn partition_validation() {
        let s = line(&[0.0, 1.0, 2.0]);
        assert!(Partition::new(vec![vec![0, 1]], None, &s).is_err());
        assert!(Partition::new(vec![vec![0, 1], vec![1, 2]], None, &s).is_err());
        assert!(Partition::new(vec![vec![0, 1], vec![2]], Some(vec![2, 0]), &s).is_err());
        let p = Partition::from_labels(&[1, 1, 0], &s).unwrap();
        assert_eq!(p.clusters(), &[vec![2], vec![0, 1]]);
        let mut csv = Vec::new();
        p.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "idx,cluster\n0,1\n1,1\n2,0\n");
    }

    proptest! {
        #[test]
        fn net_partitions_are_valid(
            pts in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 1..40),
            eps in 0.05f64..3.0,
        ) {
            let space = ActionSpace::explicit(pts).unwrap();
            let net = greedy_epsilon_net(&space, eps, 0).unwrap();
            for i in 0..space.len() {
                prop_assert!(net.iter().any(|&p| space.distance(i, p) < eps));
            }
            let part = partition_from_net(&space, &net).unwrap();
            let mut seen = vec![0; space.len()];
            for c in part.clusters() { for &i in c { seen[i] += 1; } }
            prop_assert!(seen.iter().all(|&s| s == 1));
            for (c, d) in part.clusters().iter().zip(part.diameters()) {
                prop_assert!((subset_diameter(&space, c) - d).abs() <= 1e-12);
            }
            prop_assert!(part.within_reference_balls(&space, part.epsilon()));
            prop_assert!(part.within_reference_balls(&space, eps));
        }
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let mut r = rng(12);
        let grid = make_grid_space(0.0, 2.0, 40).unwrap();
        let kernel = RewardModel::KernelSampled(build_kernel_model(grid, KernelSpec::Gibbs).unwrap());
        for _ in 0..10_000 {
            let a: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            let c: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            let ab = l2_distance(&a, &b).unwrap();
            let bc = l2_distance(&b, &c).unwrap();
            let ac = l2_distance(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
            let (i, j, k) = (r.random_range(0..40), r.random_range(0..40), r.random_range(0..40));
            assert!(kernel.distance(i, k) <= kernel.distance(i, j) + kernel.distance(j, k) + 1e-9);
        }
    }

    #[test]
    fn importance_symmetric_and_degenerate_cases() {
        let fam = BanditFamily::gaussian(RewardModel::LinearCanonical(make_orthonormal_space(4).unwrap()));
        let part = Partition::singletons(&fam.model).unwrap();
        let est = estimate_importance(&fam, &part, 100_000, &mut rng(3)).unwrap();
        assert!((est.frequencies.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for &f in &est.frequencies {
            assert!((f - 0.25).abs() <= 0.01, "{f}");
        }
        let single = Partition::single(&fam.model).unwrap();
        let est = estimate_importance(&fam, &single, 100, &mut rng(3)).unwrap();
        assert_eq!(est.frequencies, vec![1.0]);
    }

    #[test]
    fn importance_of_example1_clusters() {
        let fam = example1_family();
        let part = Partition::new(vec![vec![0, 1], vec![2]], None, &fam.model).unwrap();
        let est = estimate_importance(&fam, &part, 1, &mut rng(0)).unwrap();
        assert!(est.exact);
        assert_eq!(est.frequencies, vec![0.5, 0.5]);
    }

    #[test]
    fn measure_net_checks() {
        let s = line(&[0.0, 1.0, 2.0, 3.0]);
        let part = Partition::new(vec![vec![0, 1], vec![2], vec![3]], None, &s).unwrap();
        let imp = ImportanceEstimate {
            frequencies: vec![0.6, 0.3, 0.1],
            standard_errors: vec![0.0; 3],
            samples: 1,
            exact: true,
        };
        assert!(check_measure_net(&[0, 1, 2, 3], &part, &imp, 0.0).unwrap());
        assert!(!check_measure_net(&[], &part, &imp, 0.2).unwrap());
        assert!(check_measure_net(&[1, 2], &part, &imp, 0.2).unwrap());
        assert!(!check_measure_net(&[1, 3], &part, &imp, 0.2).unwrap());
        assert!(check_measure_net(&[7], &part, &imp, 0.2).is_err());
        assert!((measure_net_probability_bound(0.2, 30) - (1.0 - 5.0 * (-6.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn width_of_two_iid_normals() {
        let fam = BanditFamily::gaussian(RewardModel::LinearCanonical(make_orthonormal_space(2).unwrap()));
        let est = gaussian_width_mc(&fam, &[0, 1], None, 100_000, &mut rng(6)).unwrap();
        let closed_form = 1.0 / std::f64::consts::PI.sqrt();
        assert!((est.mean - closed_form).abs() <= 0.01, "{}", est.mean);
        // Brute force: average of max over independent pairs drawn directly.
        let mut r = rng(7);
        let direct: f64 = (0..100_000)
            .map(|_| {
                let x: f64 = r.sample(rand_distr::StandardNormal);
                let y: f64 = r.sample(rand_distr::StandardNormal);
                x.max(y)
            })
            .sum::<f64>()
            / 100_000.0;
        assert!((direct - closed_form).abs() <= 0.01);
        let zero = gaussian_width_mc(&fam, &[1], Some(1), 100, &mut rng(6)).unwrap();
        assert_eq!(zero.mean, 0.0);
    }

    #[test]
    fn width_respects_diameter_bound_on_random_low_dim_clusters() {
        let mut r = rng(21);
        for trial in 0..100 {
            let size = r.random_range(1..30);
            let scale = r.random_range(0.05..2.0);
            let pts: Vec<Vec<f64>> = (0..size)
                .map(|_| (0..3).map(|_| scale * r.random_range(-1.0..1.0)).collect())
                .collect();
            let space = ActionSpace::explicit(pts).unwrap();
            let diam = diameter(&space);
            let fam = BanditFamily::gaussian(RewardModel::LinearCanonical(space));
            let cluster: Vec<usize> = (0..size).collect();
            let est = gaussian_width_mc(&fam, &cluster, None, 4096, &mut rng(trial)).unwrap();
            let bound = diam / 2.0 * (2.0 * (size as f64).ln()).sqrt();
            assert!(est.mean <= bound + 3.0 * est.standard_error, "trial {trial}: {} > {bound}", est.mean);
        }
    }

    #[test]
    fn correction_arithmetic() {
        assert!((sampling_correction(&[0.5, 0.5], 1).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(sampling_correction(&[0.5, 0.5], 0).unwrap(), 1.0);
        let q = [0.1, 0.2, 0.3, 0.4];
        for k in [10, 50, 200] {
            let v = sampling_correction(&q, k).unwrap();
            assert!(v <= (-2.0 * k as f64 * 0.1).exp());
        }
        assert_eq!(miss_weighted_sum(&[0.25; 4], 3).unwrap(), 0.421875);
        assert!(sampling_correction(&[0.5, 0.6], 1).is_err());
    }

    #[test]
    fn uniform_maximizes_lemma_sum_on_grid() {
        let grid = simplex_grid_max(4, 3, 100).unwrap();
        assert!((grid - 0.421875).abs() < 1e-12, "{grid}");
        // Independent check: random points of the simplex never beat uniform.
        let mut r = rng(2);
        for _ in 0..20_000 {
            let mut w: Vec<f64> = (0..4).map(|_| -r.random::<f64>().ln()).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            assert!(miss_weighted_sum(&w, 3).unwrap() <= 0.421875 + 1e-12);
        }
    }

    #[test]
    fn theorem1_examples() {
        let (upper, lower) = theorem1_bounds(&[0.0, 0.0, 0.0, 0.0], 4, 0.0, 3.0).unwrap();
        assert_eq!(upper.value, 0.0);
        assert_eq!(lower.value, 0.0);
        let (u, _) = theorem1_bounds(&[0.2, 0.5], 2, 0.1, 3.0).unwrap();
        assert!((u.value - (0.5 + 0.3 * 2f64.ln().sqrt())).abs() < 1e-15);
    }

    #[test]
    fn theorem2_reduces_for_single_cluster() {
        let b = theorem2_upper_bound(&[0.3], 1, 0.5, 0.04, 4.0, 3.0).unwrap();
        assert!((b.value - (0.3 + 0.4)).abs() < 1e-15);
        let k0 = theorem2_upper_bound(&[0.0], 1, 0.5, 1.0, 2.25, 3.0).unwrap();
        assert!((k0.value - 1.5).abs() < 1e-15);
        assert!(b.clone().compare(0.5, 0.01).holds());
        assert!(!b.compare(0.9, 0.01).holds());
        assert!(theorem2_upper_bound(&[f64::NAN], 1, 0.5, 0.0, 1.0, 3.0).is_err());
    }

    #[test]
    fn theorem3_large_eps_is_trivial() {
        let s = make_orthonormal_space(5).unwrap();
        let b = theorem3_bound(&s, 5, 2.0, 1, 3.0).unwrap();
        assert_eq!(b.components["covering_number"], 1.0);
        assert_eq!(b.components["k_threshold"], 1.0);
        assert_eq!(b.components["k_meets_threshold"], 1.0);
        assert_eq!(theorem3_k_threshold(2.0, 10, 0.2), 184);
    }

    #[test]
    fn theorem5_vanishes() {
        assert_eq!(theorem5_lower_bound(1.0, 2, 0.1, 0.0, 3.0, 0.1), 0.0);
        assert_eq!(theorem5_lower_bound(0.1, 2, 0.1, 0.25, 3.0, 0.1), 0.0);
        let v = theorem5_lower_bound(1.0, 2, 0.1, 0.25, 0.0, 0.1);
        assert!((v - 0.05).abs() < 1e-15);
    }

    #[test]
    fn iid_band_arithmetic() {
        let (lo, hi) = iid_case_bounds(10, 10).unwrap();
        assert!(lo <= 0.0 && 0.0 <= hi);
        let (lo, hi) = iid_case_bounds(2, 1).unwrap();
        let exact = 1.0 / std::f64::consts::PI.sqrt();
        assert!(lo <= exact && exact <= hi);
        assert!((lo - exact).abs() < 1e-15);
        assert!(iid_case_bounds(1, 1).is_err());
        assert!(iid_case_bounds(4, 5).is_err());
    }

    #[test]
    fn assumption1_holds_for_opposed_tight_clusters() {
        let space = ActionSpace::explicit(vec![
            vec![1.0, 0.0],
            vec![1.0, 0.001],
            vec![-1.0, 0.0],
            vec![-1.0, 0.001],
        ])
        .unwrap();
        let fam = BanditFamily::gaussian(RewardModel::LinearCanonical(space));
        let part = Partition::new(vec![vec![0, 1], vec![2, 3]], None, &fam.model).unwrap();
        let rate = assumption1_violation_rate(&fam, &part, 20_000, &mut rng(1)).unwrap();
        assert!(rate < 0.01, "{rate}");
        let mixed = Partition::new(vec![vec![0, 2], vec![1, 3]], None, &fam.model).unwrap();
        let rate = assumption1_violation_rate(&fam, &mixed, 20_000, &mut rng(1)).unwrap();
        assert!(rate > 0.4, "{rate}");
    }
}
