//! Scheduling policies as pure state machines.
//!
//! A policy owns per-link count statistics, and each slot maps
//! `(stats, t, randomness)` to a matching plus an explored flag. Feedback
//! is bandit-style: only the scheduled link of each queue reveals its
//! service outcome.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::Serialize;

use crate::instance::ProblemInstance;
use crate::matching::{exploration_assign_into, project_into, Matching};

/// Per-link sufficient statistics: assignment counts and observed
/// successes, both `U x K`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountStats {
    queues: usize,
    servers: usize,
    trials: Vec<u64>,
    successes: Vec<u64>,
}

impl CountStats {
    pub fn new(queues: usize, servers: usize) -> Self {
        Self {
            queues,
            servers,
            trials: vec![0; queues * servers],
            successes: vec![0; queues * servers],
        }
    }

    #[inline]
    fn idx(&self, queue: usize, server: usize) -> usize {
        queue * self.servers + server
    }

    pub fn trials(&self, queue: usize, server: usize) -> u64 {
        self.trials[self.idx(queue, server)]
    }

    pub fn successes(&self, queue: usize, server: usize) -> u64 {
        self.successes[self.idx(queue, server)]
    }

    pub fn total_trials(&self) -> u64 {
        self.trials.iter().sum()
    }

    /// Records one observation on a single link.
    pub fn record(&mut self, queue: usize, server: usize, success: bool) {
        let i = self.idx(queue, server);
        self.trials[i] += 1;
        self.successes[i] += success as u64;
    }
}

/// Which scheduler to run.
///
/// The gated variants explore with probability
/// `min(1, c*K*ln(t)^2/t)` and exploit otherwise; the plain variants never
/// use the gate. `Genie` plays each queue's best server and `UniformRandom`
/// plays a uniformly random exploration matching every slot.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum PolicyKind {
    #[serde(rename = "qths")]
    QThs { explore_const: f64 },
    Thompson,
    Ucb1,
    #[serde(rename = "qucb")]
    QUcb { explore_const: f64 },
    Genie,
    #[serde(rename = "uniform")]
    UniformRandom,
}

impl PolicyKind {
    /// Whether the policy's exploit branch divides by per-link trial
    /// counts and therefore needs one forced pull of every link first.
    pub fn needs_cold_start(&self) -> bool {
        matches!(self, PolicyKind::Ucb1 | PolicyKind::QUcb { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("link (queue {queue}, server {server}) has zero trials; UCB index undefined")]
    UnsampledArm { queue: usize, server: usize },
}

/// Exploration-gate probability `min(1, c*K*ln(t)^2/t)`.
///
/// Zero at `t = 1`; clips to one for small `t` (e.g. the whole range
/// `t <= ~650` at `c = 3`, `K = 5`).
pub fn explore_probability(t: u64, servers: usize, explore_const: f64) -> f64 {
    debug_assert!(t >= 1);
    let t = t as f64;
    let log_t = t.ln();
    (explore_const * servers as f64 * log_t * log_t / t).min(1.0)
}

/// One posterior draw from `Beta(successes + 1, failures + 1)`.
///
/// With zero trials this is a uniform draw. Sampling is exact and consumes
/// only the supplied generator, so a fixed stream reproduces the decision.
pub fn thompson_sample<R: Rng + ?Sized>(successes: u64, trials: u64, rng: &mut R) -> f64 {
    debug_assert!(successes <= trials);
    if trials == 0 {
        return rng.random();
    }
    let alpha = successes as f64 + 1.0;
    let beta = (trials - successes) as f64 + 1.0;
    Beta::new(alpha, beta)
        .expect("shape parameters are >= 1")
        .sample(rng)
}

/// The UCB-1 index `mean + sqrt(2 ln t / trials)`.
///
/// `t` may be fractional; only its logarithm enters.
pub fn ucb_index(successes: u64, trials: u64, t: f64) -> Result<f64, PolicyError> {
    if trials == 0 {
        return Err(PolicyError::UnsampledArm {
            queue: usize::MAX,
            server: usize::MAX,
        });
    }
    debug_assert!(successes <= trials && t >= 1.0);
    let n = trials as f64;
    Ok(successes as f64 / n + (2.0 * t.ln() / n).sqrt())
}

enum ExploitIndex {
    Thompson,
    Ucb,
}

/// Allocation-free decision core. `khat` (len `U`) and `taken` (len `K`)
/// are scratch; the chosen matching lands in `out` (len `U`). Returns the
/// explored flag.
pub(crate) fn decide_into<R: Rng + ?Sized>(
    kind: &PolicyKind,
    stats: &CountStats,
    inst: &ProblemInstance,
    t: u64,
    rng: &mut R,
    khat: &mut [usize],
    taken: &mut [bool],
    out: &mut [usize],
) -> Result<bool, PolicyError> {
    let queues = inst.queues();
    let servers = inst.servers();

    let exploit = match kind {
        PolicyKind::Genie => {
            out.copy_from_slice(&inst.derived().k_star);
            return Ok(false);
        }
        PolicyKind::UniformRandom => {
            exploration_assign_into(rng.random_range(0..servers), servers, out);
            return Ok(true);
        }
        PolicyKind::QThs { explore_const } | PolicyKind::QUcb { explore_const } => {
            let p = explore_probability(t, servers, *explore_const);
            // Skip the gate draw entirely at p = 0 so a never-firing gate
            // consumes the same stream as the ungated policy.
            if p > 0.0 && rng.random::<f64>() < p {
                exploration_assign_into(rng.random_range(0..servers), servers, out);
                return Ok(true);
            }
            match kind {
                PolicyKind::QThs { .. } => ExploitIndex::Thompson,
                _ => ExploitIndex::Ucb,
            }
        }
        PolicyKind::Thompson => ExploitIndex::Thompson,
        PolicyKind::Ucb1 => ExploitIndex::Ucb,
    };

    for u in 0..queues {
        let mut best_server = 0;
        let mut best_score = f64::NEG_INFINITY;
        for k in 0..servers {
            let score = match exploit {
                ExploitIndex::Thompson => {
                    thompson_sample(stats.successes(u, k), stats.trials(u, k), rng)
                }
                ExploitIndex::Ucb => ucb_index(stats.successes(u, k), stats.trials(u, k), t as f64)
                    .map_err(|_| PolicyError::UnsampledArm { queue: u, server: k })?,
            };
            // Strict comparison keeps the lowest server index on ties.
            if score > best_score {
                best_score = score;
                best_server = k;
            }
        }
        khat[u] = best_server;
    }
    project_into(khat, out, taken);
    Ok(false)
}

/// Chooses a matching for slot `t` and reports whether it was an
/// exploration slot.
///
/// Gated policies draw the gate first, then either a uniform member of the
/// exploration set or per-queue favorites projected onto a matching.
/// Favorite ties and projection ties both resolve toward the lowest index.
pub fn policy_decide<R: Rng + ?Sized>(
    kind: &PolicyKind,
    stats: &CountStats,
    inst: &ProblemInstance,
    t: u64,
    rng: &mut R,
) -> Result<(Matching, bool), PolicyError> {
    let mut khat = vec![0usize; inst.queues()];
    let mut taken = vec![false; inst.servers()];
    let mut out = vec![0usize; inst.queues()];
    let explored = decide_into(kind, stats, inst, t, rng, &mut khat, &mut taken, &mut out)?;
    Ok((Matching::from_assign_unchecked(out), explored))
}

/// Folds one slot of bandit feedback into the statistics: each queue's
/// scheduled link gains a trial and, on success, a success; nothing else
/// changes.
pub fn policy_update(stats: &mut CountStats, schedule: &Matching, observed: &[bool]) {
    update_slots(stats, schedule.assign(), observed);
}

pub(crate) fn update_slots(stats: &mut CountStats, schedule: &[usize], observed: &[bool]) {
    debug_assert_eq!(schedule.len(), observed.len());
    for (u, (&k, &hit)) in schedule.iter().zip(observed).enumerate() {
        stats.record(u, k, hit);
    }
}
