//! Baseline bandit policies.
//!
//! Every policy sees a fresh instance each round, so observed payoffs are
//! stochastic through the instance alone. Posteriors use a `N(0, 1)` prior and
//! assume unit observation variance. Ties break toward the lowest index.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{BanditFamily, BanditInstance, RewardModel};
use crate::montecarlo::argmax;

/// Gaussian posterior of one arm's mean under prior `N(0, 1)` and unit
/// observation variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianArmPosterior {
    sum: f64,
    pulls: u64,
}

impl GaussianArmPosterior {
    pub fn mean(&self) -> f64 {
        self.sum / (1 + self.pulls) as f64
    }

    pub fn variance(&self) -> f64 {
        1.0 / (1 + self.pulls) as f64
    }

    pub fn pulls(&self) -> u64 {
        self.pulls
    }

    pub fn update(&mut self, observation: f64) {
        self.sum += observation;
        self.pulls += 1;
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean() + self.variance().sqrt() * z
    }

    /// `mean + scale sqrt(2 ln t / (1 + pulls))`; untried arms are `+inf`.
    pub fn ucb_index(&self, t: u64, scale: f64) -> f64 {
        if self.pulls == 0 {
            return f64::INFINITY;
        }
        let log = (t.max(1) as f64).ln();
        self.mean() + scale * (2.0 * log / (1 + self.pulls) as f64).sqrt()
    }
}

/// A sorted tuple of distinct action indices whose payoff is the best member's reward.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SuperArm {
    members: Vec<usize>,
}

impl SuperArm {
    pub fn new(mut members: Vec<usize>, num_actions: usize) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::EmptySubset);
        }
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("super-arm members must be distinct"));
        }
        if let Some(&bad) = members.last().filter(|&&m| m >= num_actions) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: num_actions,
            });
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub const DEFAULT_SUPER_ARM_CAP: usize = 1_000_000;

/// `C(n, k)`, or `None` on overflow.
pub fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn enumerate_super_arms(n: usize, k: usize, cap: usize) -> Result<Vec<SuperArm>> {
    if k == 0 || k > n {
        return Err(invalid(format!("super-arm size {k} must be in 1..={n}")));
    }
    let count = binomial(n, k).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(Error::SuperArmCap { n, k, count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(SuperArm {
            members: current.clone(),
        });
        // Advance the rightmost position that still has room.
        let Some(pos) = (0..k).rev().find(|&i| current[i] < n - k + i) else {
            return Ok(out);
        };
        current[pos] += 1;
        for i in pos + 1..k {
            current[i] = current[i - 1] + 1;
        }
    }
}

/// Best expected reward among the arm's members.
pub fn superarm_payoff(model: &RewardModel, instance: &BanditInstance, arm: &SuperArm) -> Result<f64> {
    arm.members()
        .iter()
        .map(|&a| model.expected_reward(a, instance))
        .try_fold(f64::NEG_INFINITY, |best, r| Ok(best.max(r?)))
}

fn payoff_unchecked(model: &RewardModel, instance: &BanditInstance, members: &[usize]) -> f64 {
    members
        .iter()
        .map(|&a| model.reward_at(a, instance))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One round of a policy: what was played and the payoff observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStep {
    pub round: usize,
    pub selection: Vec<usize>,
    pub payoff: f64,
}

/// Writes `round,arm_or_subset,payoff`, with subsets encoded as `i|j|k`.
pub fn write_trace_csv<W: Write>(steps: &[PolicyStep], mut out: W) -> Result<()> {
    writeln!(out, "round,arm_or_subset,payoff")?;
    for s in steps {
        writeln!(out, "{},{},{}", s.round, encode_subset(&s.selection), s.payoff)?;
    }
    Ok(())
}

pub fn encode_subset(members: &[usize]) -> String {
    members
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("|")
}

/// Outcome of super-arm TS or UCB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperArmRun {
    /// Position in `arms` of the arm with the highest posterior mean.
    pub best: usize,
    pub posteriors: Vec<GaussianArmPosterior>,
    /// `selection` holds the position of the pulled arm in `arms`.
    pub trace: Vec<PolicyStep>,
}

fn check_arms(family: &BanditFamily, arms: &[SuperArm], rounds: usize) -> Result<()> {
    if arms.is_empty() {
        return Err(invalid("at least one super-arm is required"));
    }
    if rounds == 0 {
        return Err(invalid("at least one round is required"));
    }
    let n = family.num_actions();
    if let Some(&bad) = arms.iter().flat_map(|a| a.members()).find(|&&m| m >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    Ok(())
}

fn run_superarm<R, F>(
    family: &BanditFamily,
    arms: &[SuperArm],
    rounds: usize,
    rng: &mut R,
    mut choose: F,
) -> Result<SuperArmRun>
where
    R: Rng + ?Sized,
    F: FnMut(&[GaussianArmPosterior], u64, &mut R) -> usize,
{
    check_arms(family, arms, rounds)?;
    let mut posteriors = vec![GaussianArmPosterior::default(); arms.len()];
    let mut trace = Vec::with_capacity(rounds);
    for t in 1..=rounds {
        let instance = family.sample_instance(rng);
        let pick = choose(&posteriors, t as u64, rng);
        let payoff = payoff_unchecked(&family.model, &instance, arms[pick].members());
        posteriors[pick].update(payoff);
        trace.push(PolicyStep {
            round: t,
            selection: vec![pick],
            payoff,
        });
    }
    let means: Vec<f64> = posteriors.iter().map(GaussianArmPosterior::mean).collect();
    Ok(SuperArmRun {
        best: argmax(&means),
        posteriors,
        trace,
    })
}

/// Thompson sampling over super-arms with bandit feedback.
pub fn run_superarm_ts<R: Rng + ?Sized>(
    family: &BanditFamily,
    arms: &[SuperArm],
    rounds: usize,
    rng: &mut R,
) -> Result<SuperArmRun> {
    let mut draws = Vec::with_capacity(arms.len());
    run_superarm(family, arms, rounds, rng, |post, _, rng| {
        draws.clear();
        draws.extend(post.iter().map(|p| p.sample(rng)));
        argmax(&draws)
    })
}

/// UCB over super-arms; untried arms are pulled first, in index order.
pub fn run_superarm_ucb<R: Rng + ?Sized>(
    family: &BanditFamily,
    arms: &[SuperArm],
    rounds: usize,
    exploration_scale: f64,
    rng: &mut R,
) -> Result<SuperArmRun> {
    let mut index = Vec::with_capacity(arms.len());
    run_superarm(family, arms, rounds, rng, |post, t, _| {
        index.clear();
        index.extend(post.iter().map(|p| p.ucb_index(t, exploration_scale)));
        argmax(&index)
    })
}

/// `ceil(log2 n)`, zero for `n <= 1`.
pub fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

/// Fixed budget `N ceil(log2 N)` used for successive halving over `N` arms.
pub fn sh_budget(num_arms: usize) -> usize {
    num_arms * ceil_log2(num_arms)
}

/// State after one halving round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShRound {
    pub round: usize,
    pub cumulative_pulls: usize,
    /// Position in `arms` of the survivor with the best empirical mean.
    pub best_arm: usize,
    pub best_mean: f64,
    pub survivors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShRun {
    pub best: usize,
    pub complete: bool,
    pub pulls: usize,
    pub rounds: Vec<ShRound>,
}

/// Successive halving with `floor(budget / (|S| ceil(log2 N)))` pulls per
/// surviving arm per round, keeping the better half (by cumulative empirical
/// mean) each round. Remainder pulls are discarded.
pub fn run_successive_halving<R: Rng + ?Sized>(
    family: &BanditFamily,
    arms: &[SuperArm],
    budget: usize,
    rng: &mut R,
) -> Result<ShRun> {
    check_arms(family, arms, 1)?;
    let n = arms.len();
    if n == 1 {
        return Ok(ShRun {
            best: 0,
            complete: true,
            pulls: 0,
            rounds: Vec::new(),
        });
    }
    let log = ceil_log2(n);
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    let mut survivors: Vec<usize> = (0..n).collect();
    let mut rounds = Vec::new();
    let mut pulls = 0;
    let mean = |sums: &[f64], counts: &[usize], a: usize| {
        if counts[a] == 0 {
            f64::NEG_INFINITY
        } else {
            sums[a] / counts[a] as f64
        }
    };
    while survivors.len() > 1 {
        let per_arm = budget / (survivors.len() * log);
        if per_arm == 0 || pulls + per_arm * survivors.len() > budget {
            break;
        }
        for &a in &survivors {
            for _ in 0..per_arm {
                let instance = family.sample_instance(rng);
                sums[a] += payoff_unchecked(&family.model, &instance, arms[a].members());
            }
            counts[a] += per_arm;
        }
        pulls += per_arm * survivors.len();
        // Stable sort keeps lower positions first among equal means.
        survivors.sort_by(|&x, &y| mean(&sums, &counts, y).total_cmp(&mean(&sums, &counts, x)));
        survivors.truncate(survivors.len().div_ceil(2));
        survivors.sort_unstable();
        let best = best_of(&survivors, |a| mean(&sums, &counts, a));
        rounds.push(ShRound {
            round: rounds.len() + 1,
            cumulative_pulls: pulls,
            best_arm: best,
            best_mean: mean(&sums, &counts, best),
            survivors: survivors.len(),
        });
    }
    let best = best_of(&survivors, |a| mean(&sums, &counts, a));
    Ok(ShRun {
        best,
        complete: survivors.len() == 1,
        pulls,
        rounds,
    })
}

fn best_of(candidates: &[usize], value: impl Fn(usize) -> f64) -> usize {
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if value(c) > value(best) {
            best = c;
        }
    }
    best
}

/// Indices of the `k` largest values, returned in ascending index order.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Outcome of a semi-bandit policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiBanditRun {
    /// Subset played in the final round, ascending.
    pub subset: Vec<usize>,
    /// Total base-arm observations, initialization included.
    pub pulls: usize,
    pub posteriors: Vec<GaussianArmPosterior>,
    pub trace: Vec<PolicyStep>,
}

fn play_subset<R: Rng + ?Sized>(
    family: &BanditFamily,
    subset: Vec<usize>,
    round: usize,
    posteriors: &mut [GaussianArmPosterior],
    trace: &mut Vec<PolicyStep>,
    rng: &mut R,
) {
    let instance = family.sample_instance(rng);
    let mut payoff = f64::NEG_INFINITY;
    for &a in &subset {
        let r = family.model.reward_at(a, &instance);
        posteriors[a].update(r);
        payoff = payoff.max(r);
    }
    trace.push(PolicyStep {
        round,
        selection: subset,
        payoff,
    });
}

fn check_semi_bandit(family: &BanditFamily, k: usize, rounds: usize) -> Result<()> {
    if k == 0 || k > family.num_actions() {
        return Err(invalid(format!(
            "subset size {k} must be in 1..={}",
            family.num_actions()
        )));
    }
    if rounds == 0 {
        return Err(invalid("at least one round is required"));
    }
    Ok(())
}

/// Combinatorial Thompson sampling: play the top-`k` posterior samples and
/// observe every played base arm.
pub fn run_cts<R: Rng + ?Sized>(
    family: &BanditFamily,
    k: usize,
    rounds: usize,
    rng: &mut R,
) -> Result<SemiBanditRun> {
    check_semi_bandit(family, k, rounds)?;
    let n = family.num_actions();
    let mut posteriors = vec![GaussianArmPosterior::default(); n];
    let mut trace = Vec::with_capacity(rounds);
    let mut draws = Vec::with_capacity(n);
    for t in 1..=rounds {
        draws.clear();
        draws.extend(posteriors.iter().map(|p| p.sample(&mut *rng)));
        let subset = top_k(&draws, k);
        play_subset(family, subset, t, &mut posteriors, &mut trace, rng);
    }
    Ok(SemiBanditRun {
        subset: trace.last().expect("rounds >= 1").selection.clone(),
        pulls: rounds * k,
        posteriors,
        trace,
    })
}

/// Rounds CUCB spends pulling every base arm once.
pub fn cucb_init_rounds(n: usize, k: usize) -> usize {
    n.div_ceil(k)
}

/// Combinatorial UCB. The first `ceil(n / k)` rounds play consecutive blocks
/// of `k` arms (the last block padded with the lowest indices not in it);
/// afterwards the top-`k` UCB indices are played.
pub fn run_cucb<R: Rng + ?Sized>(
    family: &BanditFamily,
    k: usize,
    rounds: usize,
    exploration_scale: f64,
    rng: &mut R,
) -> Result<SemiBanditRun> {
    check_semi_bandit(family, k, rounds)?;
    let n = family.num_actions();
    let init = cucb_init_rounds(n, k);
    if rounds < init {
        return Err(Error::InsufficientRounds {
            rounds,
            needed: init,
        });
    }
    let mut posteriors = vec![GaussianArmPosterior::default(); n];
    let mut trace = Vec::with_capacity(rounds);
    for r in 0..init {
        let mut block: Vec<usize> = (r * k..((r + 1) * k).min(n)).collect();
        let mut pad = 0;
        while block.len() < k {
            if !block.contains(&pad) {
                block.push(pad);
            }
            pad += 1;
        }
        block.sort_unstable();
        play_subset(family, block, r + 1, &mut posteriors, &mut trace, rng);
    }
    let mut index = Vec::with_capacity(n);
    for t in init + 1..=rounds {
        index.clear();
        index.extend(posteriors.iter().map(|p| p.ucb_index(t as u64, exploration_scale)));
        let subset = top_k(&index, k);
        play_subset(family, subset, t, &mut posteriors, &mut trace, rng);
    }
    Ok(SemiBanditRun {
        subset: trace.last().expect("rounds >= 1").selection.clone(),
        pulls: rounds * k,
        posteriors,
        trace,
    })
}
