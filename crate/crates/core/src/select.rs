//! The epsilon-net selection loop: sample an instance, find its best action,
//! add it to the chosen set.
//!
//! Each iteration draws a `u64` seed from the caller's stream and runs the
//! iteration's instance draw and oracle on `ChaCha8Rng::seed_from_u64(seed)`.
//! The seed is stored in the trace, so any iteration can be replayed alone.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{BanditFamily, BanditInstance, RewardModel};
use crate::montecarlo::argmax;
use crate::policies::GaussianArmPosterior;

/// How the best action of a sampled instance is found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OracleSpec {
    /// Exhaustive search over all actions.
    Exact,
    /// Per-action Thompson sampling with prior `N(0, 1)` and assumed unit
    /// observation noise, observing the true (noiseless) rewards; the arm
    /// chosen in the final round is returned.
    ThompsonApprox { rounds: usize },
}

impl OracleSpec {
    /// Pulls one oracle call costs (zero for the exact oracle).
    pub fn pulls_per_call(&self) -> usize {
        match self {
            OracleSpec::Exact => 0,
            OracleSpec::ThompsonApprox { rounds } => *rounds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopRule {
    /// Exactly `k` instance draws.
    Iterations(usize),
    /// Draw until `k` distinct actions are chosen or `max_iterations` draws.
    DistinctCount { k: usize, max_iterations: usize },
}

impl StopRule {
    pub const DEFAULT_ITERATIONS_PER_TARGET: usize = 1000;

    /// Distinct-count rule with the default cap of `1000 k` draws.
    pub fn distinct(k: usize) -> Self {
        StopRule::DistinctCount {
            k,
            max_iterations: k.saturating_mul(Self::DEFAULT_ITERATIONS_PER_TARGET),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub seed: u64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Distinct chosen indices, ascending.
    pub chosen: Vec<usize>,
    pub iterations_used: usize,
    pub trace: Vec<TraceEntry>,
    /// False when a distinct-count target was not reached.
    pub complete: bool,
}

impl SelectionResult {
    /// Per-action selection counts over the trace.
    pub fn counts(&self, num_actions: usize) -> Vec<u64> {
        let mut counts = vec![0u64; num_actions];
        for t in &self.trace {
            counts[t.index] += 1;
        }
        counts
    }
}

/// Index of the largest expected reward, lowest index on ties.
pub fn exact_argmax(model: &RewardModel, instance: &BanditInstance) -> usize {
    argmax(&model.rewards(instance))
}

/// Approximate argmax by Thompson sampling within one instance.
pub fn thompson_argmax<R: Rng + ?Sized>(
    model: &RewardModel,
    instance: &BanditInstance,
    rounds: usize,
    rng: &mut R,
) -> Result<usize> {
    if rounds == 0 {
        return Err(invalid("Thompson oracle needs at least one round"));
    }
    let n = model.num_actions();
    if n == 1 {
        return Ok(0);
    }
    let mut posteriors = vec![GaussianArmPosterior::default(); n];
    let mut draws = Vec::with_capacity(n);
    let mut pick = 0;
    for _ in 0..rounds {
        draws.clear();
        draws.extend(posteriors.iter().map(|p| p.sample(&mut *rng)));
        pick = argmax(&draws);
        posteriors[pick].update(model.reward_at(pick, instance));
    }
    Ok(pick)
}

fn run_oracle<R: Rng + ?Sized>(
    model: &RewardModel,
    instance: &BanditInstance,
    oracle: OracleSpec,
    rng: &mut R,
) -> Result<usize> {
    match oracle {
        OracleSpec::Exact => Ok(exact_argmax(model, instance)),
        OracleSpec::ThompsonApprox { rounds } => thompson_argmax(model, instance, rounds, rng),
    }
}

/// Runs the selection loop until the stop rule is met.
pub fn epsilon_net_select<R: Rng + ?Sized>(
    family: &BanditFamily,
    oracle: OracleSpec,
    stop: StopRule,
    rng: &mut R,
) -> Result<SelectionResult> {
    let (target, max_iterations) = match stop {
        StopRule::Iterations(k) => (None, k),
        StopRule::DistinctCount { k, max_iterations } => (Some(k), max_iterations),
    };
    if max_iterations == 0 || target == Some(0) {
        return Err(invalid("selection needs K >= 1"));
    }
    if let OracleSpec::ThompsonApprox { rounds: 0 } = oracle {
        return Err(invalid("Thompson oracle needs at least one round"));
    }
    let mut chosen = BTreeSet::new();
    let mut trace = Vec::new();
    for iter in 0..max_iterations {
        if target.is_some_and(|k| chosen.len() >= k) {
            break;
        }
        let seed: u64 = rng.random();
        let mut local = ChaCha8Rng::seed_from_u64(seed);
        let instance = family.sample_instance(&mut local);
        let index = run_oracle(&family.model, &instance, oracle, &mut local)?;
        chosen.insert(index);
        trace.push(TraceEntry { iter, seed, index });
    }
    let complete = target.is_none_or(|k| chosen.len() >= k);
    Ok(SelectionResult {
        chosen: chosen.into_iter().collect(),
        iterations_used: trace.len(),
        trace,
        complete,
    })
}
