//! Coupled Monte Carlo engine.
//!
//! Each episode runs two systems on shared randomness: the bandit system
//! driven by the configured policy and a genie system that always plays
//! each queue's best server. Both start from the same stationary draw per
//! queue, see the same arrivals, and read their service outcomes from the
//! same underlying draws, so the pathwise difference `Q(t) - Q*(t)` is a
//! low-variance estimator of the regret series.
//!
//! # Randomness layout
//!
//! All draws come from ChaCha8 keyed by the master seed. Episode `e` uses
//! four streams selected by the 64-bit stream counter `e * 4 + tag`, with
//! tags 0 = initial queues, 1 = arrivals, 2 = services, 3 = policy. Episodes
//! are therefore independent of scheduling: any worker count, or a plain
//! sequential loop, produces identical output.
//!
//! # Initial state and burn-in
//!
//! [`sample_stationary_queue`] draws from the law with
//! `P[Q = 0] = 1 - lambda/mu*` and geometric tail ratio
//! `rho = lambda (1 - mu*) / ((1 - lambda) mu*)`. The queue recursion used
//! here serves same-slot arrivals, and its own equilibrium is the plain
//! geometric `P[Q = j] = (1 - rho) rho^j` with the same ratio; the genie
//! marginal relaxes from the first law to the second over a burn-in of a
//! few hundred slots at moderate loads. [`transient_genie_mean`] computes
//! the exact genie mean at any slot by iterating the transition kernel, so
//! checks against simulation do not depend on the burn-in having finished.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::instance::{lindley_step, ProblemInstance, TraceRecord};
use crate::matching::exploration_assign_into;
use crate::policies::{decide_into, update_slots, CountStats, PolicyError, PolicyKind};

/// How service draws are shared between the two systems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// One uniform per (queue, slot); link `(u, k)` succeeds iff the draw
    /// is below `mu[u][k]`. Within a queue, a better server's success set
    /// contains a worse server's, which makes the genie queue a pathwise
    /// lower bound in the single-queue case.
    CommonUniform,
    /// Every link gets its own Bernoulli draw each slot; the two systems
    /// still read the same realized matrix.
    IndependentServices,
}

/// Whether the two systems share one initial draw per queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    SharedDraw,
    IndependentDraws,
}

/// Which slots to record in the output series.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordGrid {
    /// Every `n`-th slot, plus the horizon.
    EveryN(u64),
    /// Approximately geometric grid with this many points per decade,
    /// plus the horizon.
    PerDecade(u32),
    /// Exactly these slots (sorted, deduplicated; all within the horizon).
    Explicit(Vec<u64>),
}

impl Default for RecordGrid {
    fn default() -> Self {
        RecordGrid::PerDecade(200)
    }
}

impl RecordGrid {
    /// Resolves the grid for a horizon. Always non-empty, sorted, within
    /// `[1, horizon]`, and ending at the horizon (Explicit grids excepted).
    pub fn slots(&self, horizon: u64) -> Vec<u64> {
        match self {
            RecordGrid::EveryN(n) => {
                let n = (*n).max(1);
                let mut slots: Vec<u64> = (1..=horizon / n).map(|i| i * n).collect();
                if slots.last() != Some(&horizon) {
                    slots.push(horizon);
                }
                slots
            }
            RecordGrid::PerDecade(per_decade) => {
                let per_decade = (*per_decade).max(1) as f64;
                let mut slots = Vec::new();
                let mut i = 0u64;
                loop {
                    let v = 10f64.powf(i as f64 / per_decade).round() as u64;
                    if v > horizon {
                        break;
                    }
                    if slots.last() != Some(&v.max(1)) {
                        slots.push(v.max(1));
                    }
                    i += 1;
                }
                if slots.last() != Some(&horizon) {
                    slots.push(horizon);
                }
                slots
            }
            RecordGrid::Explicit(raw) => {
                let mut slots: Vec<u64> =
                    raw.iter().copied().filter(|&t| t >= 1 && t <= horizon).collect();
                slots.sort_unstable();
                slots.dedup();
                slots
            }
        }
    }
}

/// Full description of a Monte Carlo run.
#[derive(Clone, Debug, Serialize)]
pub struct SimConfig {
    pub instance: ProblemInstance,
    #[serde(flatten)]
    pub policy: PolicyKind,
    pub horizon: u64,
    pub episodes: u64,
    pub coupling: CouplingMode,
    pub init: InitMode,
    pub master_seed: u64,
    pub record: RecordGrid,
}

impl SimConfig {
    /// A run with the default coupling (common uniforms), shared initial
    /// draw, and geometric recording grid.
    pub fn new(
        instance: ProblemInstance,
        policy: PolicyKind,
        horizon: u64,
        episodes: u64,
        master_seed: u64,
    ) -> Self {
        Self {
            instance,
            policy,
            horizon,
            episodes,
            coupling: CouplingMode::CommonUniform,
            init: InitMode::SharedDraw,
            master_seed,
            record: RecordGrid::default(),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.horizon == 0 {
            return Err(SimError::ZeroHorizon);
        }
        if self.episodes == 0 {
            return Err(SimError::ZeroEpisodes);
        }
        if self.record.slots(self.horizon).is_empty() {
            return Err(SimError::EmptyRecordGrid);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("lambda = {lambda} must be strictly below mu_star = {mu_star}")]
    UnstableRates { lambda: f64, mu_star: f64 },
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("episodes must be at least 1")]
    ZeroEpisodes,
    #[error("need at least 2 episodes to form confidence intervals")]
    TooFewEpisodes,
    #[error("record grid resolves to no slots")]
    EmptyRecordGrid,
    #[error("slot {t} is not on the recorded grid")]
    SlotNotRecorded { t: u64 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

const STREAM_TAGS: u64 = 4;
const TAG_INIT: u64 = 0;
const TAG_ARRIVALS: u64 = 1;
const TAG_SERVICES: u64 = 2;
const TAG_POLICY: u64 = 3;

fn episode_rng(master_seed: u64, episode: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(episode.wrapping_mul(STREAM_TAGS).wrapping_add(tag));
    rng
}

/// The geometric tail ratio `rho = lambda (1 - mu*) / ((1 - lambda) mu*)`.
pub fn stationary_rho(lambda: f64, mu_star: f64) -> f64 {
    lambda * (1.0 - mu_star) / ((1.0 - lambda) * mu_star)
}

/// First `len` probabilities of the initial-state law:
/// `P[0] = 1 - lambda/mu*`, `P[j] = (lambda/mu*)(1 - rho) rho^(j-1)`.
pub fn stationary_pmf(lambda: f64, mu_star: f64, len: usize) -> Vec<f64> {
    let atom = lambda / mu_star;
    let rho = stationary_rho(lambda, mu_star);
    let mut pmf = Vec::with_capacity(len);
    if len > 0 {
        pmf.push(1.0 - atom);
    }
    let mut tail = atom * (1.0 - rho);
    for _ in 1..len {
        pmf.push(tail);
        tail *= rho;
    }
    pmf
}

/// Mean of the initial-state law, `(lambda/mu*) / (1 - rho)`.
pub fn stationary_mean(lambda: f64, mu_star: f64) -> f64 {
    lambda / mu_star / (1.0 - stationary_rho(lambda, mu_star))
}

/// Mean of the queue recursion's own equilibrium, `rho / (1 - rho)`.
///
/// Differs from [`stationary_mean`] because the recursion serves same-slot
/// arrivals; the genie marginal converges to this value.
pub fn equilibrium_mean(lambda: f64, mu_star: f64) -> f64 {
    let rho = stationary_rho(lambda, mu_star);
    rho / (1.0 - rho)
}

/// One draw from the initial-state law by inverting its tail
/// `P[Q > w] = (lambda/mu*) rho^w`. Consumes exactly one uniform.
pub fn sample_stationary_queue<R: Rng + ?Sized>(
    lambda: f64,
    mu_star: f64,
    rng: &mut R,
) -> Result<u64, SimError> {
    if lambda >= mu_star {
        return Err(SimError::UnstableRates { lambda, mu_star });
    }
    let atom = lambda / mu_star;
    let mut u: f64 = rng.random();
    if u >= atom {
        return Ok(0);
    }
    if u == 0.0 {
        u = f64::MIN_POSITIVE;
    }
    let rho = stationary_rho(lambda, mu_star);
    Ok(((u / atom).ln() / rho.ln()).ceil() as u64)
}

/// Exact genie mean queue length at each requested slot, starting from the
/// initial-state law and iterating the one-slot transition kernel.
///
/// `checkpoints` must be sorted ascending. The state space is truncated
/// where the combined mass is below 1e-12 of machine resolution for the
/// loads used here; up-flow at the cap is folded into the top state.
pub fn transient_genie_mean(lambda: f64, mu_star: f64, checkpoints: &[u64]) -> Vec<f64> {
    debug_assert!(checkpoints.windows(2).all(|w| w[0] < w[1]));
    let up = lambda * (1.0 - mu_star);
    let down = (1.0 - lambda) * mu_star;
    let n = 512usize;
    let mut p = stationary_pmf(lambda, mu_star, n);
    let rest: f64 = 1.0 - p.iter().sum::<f64>();
    p[n - 1] += rest;
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut next = vec![0.0; n];
    let mut t = 0u64;
    let mean = |p: &[f64]| p.iter().enumerate().map(|(j, &m)| j as f64 * m).sum::<f64>();
    for &cp in checkpoints {
        while t < cp {
            next[0] = p[0] * (1.0 - up) + p[1] * down;
            for j in 1..n - 1 {
                next[j] = p[j - 1] * up + p[j] * (1.0 - up - down) + p[j + 1] * down;
            }
            next[n - 1] = p[n - 2] * up + p[n - 1] * (1.0 - down);
            std::mem::swap(&mut p, &mut next);
            t += 1;
        }
        out.push(mean(&p));
    }
    out
}

/// Single-episode state machine. Advances one slot at a time and exposes
/// the per-slot observations through its fields.
pub(crate) struct EpisodeRunner<'a> {
    cfg: &'a SimConfig,
    arrivals_rng: ChaCha8Rng,
    services_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    pub stats: CountStats,
    pub bandit_q: Vec<u64>,
    pub genie_q: Vec<u64>,
    /// Latest slot at which each bandit queue was empty (0 = not yet).
    pub last_zero: Vec<u64>,
    pub explore_cum: u64,
    /// Last completed slot; 0 before the first step.
    pub t: u64,
    pub schedule: Vec<usize>,
    pub explored: bool,
    pub arrivals: Vec<bool>,
    pub bandit_srv: Vec<bool>,
    pub genie_srv: Vec<bool>,
    khat: Vec<usize>,
    taken: Vec<bool>,
    rmatrix: Vec<bool>,
}

impl<'a> EpisodeRunner<'a> {
    pub fn new(cfg: &'a SimConfig, episode: u64) -> Result<Self, SimError> {
        let queues = cfg.instance.queues();
        let servers = cfg.instance.servers();
        let derived = cfg.instance.derived();
        let mut init_rng = episode_rng(cfg.master_seed, episode, TAG_INIT);
        let mut bandit_q = Vec::with_capacity(queues);
        let mut genie_q = Vec::with_capacity(queues);
        for u in 0..queues {
            let lambda = cfg.instance.lambda()[u];
            let mu_star = derived.mu_star[u];
            match cfg.init {
                InitMode::SharedDraw => {
                    let q0 = sample_stationary_queue(lambda, mu_star, &mut init_rng)?;
                    bandit_q.push(q0);
                    genie_q.push(q0);
                }
                InitMode::IndependentDraws => {
                    bandit_q.push(sample_stationary_queue(lambda, mu_star, &mut init_rng)?);
                    genie_q.push(sample_stationary_queue(lambda, mu_star, &mut init_rng)?);
                }
            }
        }
        Ok(Self {
            cfg,
            arrivals_rng: episode_rng(cfg.master_seed, episode, TAG_ARRIVALS),
            services_rng: episode_rng(cfg.master_seed, episode, TAG_SERVICES),
            policy_rng: episode_rng(cfg.master_seed, episode, TAG_POLICY),
            stats: CountStats::new(queues, servers),
            bandit_q,
            genie_q,
            last_zero: vec![0; queues],
            explore_cum: 0,
            t: 0,
            schedule: vec![0; queues],
            explored: false,
            arrivals: vec![false; queues],
            bandit_srv: vec![false; queues],
            genie_srv: vec![false; queues],
            khat: vec![0; queues],
            taken: vec![false; servers],
            rmatrix: vec![false; queues * servers],
        })
    }

    /// Advances one slot: arrivals, decision, services, queue updates, and
    /// the policy's bandit-feedback update.
    pub fn step(&mut self) -> Result<(), SimError> {
        let inst = &self.cfg.instance;
        let queues = inst.queues();
        let servers = inst.servers();
        let derived = inst.derived();
        let t = self.t + 1;

        for u in 0..queues {
            self.arrivals[u] = self.arrivals_rng.random::<f64>() < inst.lambda()[u];
        }

        // UCB-style indices are undefined on unsampled links, so those
        // policies spend their first K slots cycling through the
        // exploration set, which visits every link exactly once.
        if self.cfg.policy.needs_cold_start() && t <= servers as u64 {
            exploration_assign_into((t - 1) as usize, servers, &mut self.schedule);
            self.explored = true;
        } else {
            self.explored = decide_into(
                &self.cfg.policy,
                &self.stats,
                inst,
                t,
                &mut self.policy_rng,
                &mut self.khat,
                &mut self.taken,
                &mut self.schedule,
            )?;
        }

        match self.cfg.coupling {
            CouplingMode::CommonUniform => {
                for u in 0..queues {
                    let v: f64 = self.services_rng.random();
                    self.bandit_srv[u] = v < inst.mu(u, self.schedule[u]);
                    self.genie_srv[u] = v < derived.mu_star[u];
                }
            }
            CouplingMode::IndependentServices => {
                for u in 0..queues {
                    for k in 0..servers {
                        self.rmatrix[u * servers + k] =
                            self.services_rng.random::<f64>() < inst.mu(u, k);
                    }
                }
                for u in 0..queues {
                    self.bandit_srv[u] = self.rmatrix[u * servers + self.schedule[u]];
                    self.genie_srv[u] = self.rmatrix[u * servers + derived.k_star[u]];
                }
            }
        }

        for u in 0..queues {
            self.bandit_q[u] = lindley_step(self.bandit_q[u], self.arrivals[u], self.bandit_srv[u]);
            self.genie_q[u] = lindley_step(self.genie_q[u], self.arrivals[u], self.genie_srv[u]);
            if self.bandit_q[u] == 0 {
                self.last_zero[u] = t;
            }
        }

        update_slots(&mut self.stats, &self.schedule, &self.bandit_srv);
        self.explore_cum += self.explored as u64;
        self.t = t;
        Ok(())
    }

    /// Slots since the bandit queue was last empty (the whole history if it
    /// never was).
    pub fn regen_age(&self, queue: usize) -> u64 {
        self.t - self.last_zero[queue]
    }

    fn record(&self) -> TraceRecord {
        TraceRecord {
            t: self.t,
            schedule: self.schedule.clone(),
            explored: self.explored,
            arrivals: self.arrivals.clone(),
            services: self.bandit_srv.clone(),
            genie_services: self.genie_srv.clone(),
            bandit_q: self.bandit_q.clone(),
            genie_q: self.genie_q.clone(),
        }
    }
}

/// Runs one episode and returns its full per-slot trace.
pub fn run_episode(cfg: &SimConfig, episode: u64) -> Result<Vec<TraceRecord>, SimError> {
    cfg.validate()?;
    let mut runner = EpisodeRunner::new(cfg, episode)?;
    let mut trace = Vec::with_capacity(cfg.horizon as usize);
    for _ in 0..cfg.horizon {
        runner.step()?;
        trace.push(runner.record());
    }
    Ok(trace)
}

/// Mean and 95% normal-approximation half-width.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MeanHw {
    pub mean: f64,
    pub half_width: f64,
}

/// Across-episode estimates at the recorded slots.
#[derive(Clone, Debug, Serialize)]
pub struct RegretSeries {
    pub times: Vec<u64>,
    pub episodes: u64,
    pub queues: usize,
    pub servers: usize,
    /// Mean of `banditQ - genieQ`, indexed `[slot][queue]`.
    pub psi: Vec<Vec<f64>>,
    /// 95% half-widths for `psi`.
    pub half_width: Vec<Vec<f64>>,
    pub genie_mean: Vec<Vec<f64>>,
    pub genie_half_width: Vec<Vec<f64>>,
    /// Mean slots since the bandit queue was last empty.
    pub regen_age: Vec<Vec<f64>>,
    /// Mean cumulative exploration count up to each recorded slot.
    pub explore_cum: Vec<f64>,
    /// Mean per-link assignment counts, indexed `[slot][queue][server]`.
    pub mean_trials: Vec<Vec<Vec<f64>>>,
    /// Mean and half-width of `sum_k gap(u,k) * T_uk(t)` over suboptimal
    /// links, indexed `[slot][queue]`.
    pub subopt_weighted: Vec<Vec<MeanHw>>,
}

impl RegretSeries {
    pub fn slot_index(&self, t: u64) -> Option<usize> {
        self.times.binary_search(&t).ok()
    }

    /// Mean cumulative exploration count divided by t.
    pub fn explore_frac(&self, slot_index: usize) -> f64 {
        self.explore_cum[slot_index] / self.times[slot_index] as f64
    }
}

/// Flat accumulators over episodes; all queue-length derived sums are
/// integers, so accumulation order cannot change the result.
struct Aggregate {
    slots: usize,
    queues: usize,
    servers: usize,
    psi_sum: Vec<i64>,
    psi_sq: Vec<u64>,
    genie_sum: Vec<u64>,
    genie_sq: Vec<u64>,
    regen_sum: Vec<u64>,
    explore_sum: Vec<u64>,
    trials_sum: Vec<u64>,
    wsub_sum: Vec<f64>,
    wsub_sq: Vec<f64>,
}

impl Aggregate {
    fn new(slots: usize, queues: usize, servers: usize) -> Self {
        Self {
            slots,
            queues,
            servers,
            psi_sum: vec![0; slots * queues],
            psi_sq: vec![0; slots * queues],
            genie_sum: vec![0; slots * queues],
            genie_sq: vec![0; slots * queues],
            regen_sum: vec![0; slots * queues],
            explore_sum: vec![0; slots],
            trials_sum: vec![0; slots * queues * servers],
            wsub_sum: vec![0.0; slots * queues],
            wsub_sq: vec![0.0; slots * queues],
        }
    }

    fn absorb_checkpoint(&mut self, slot: usize, runner: &EpisodeRunner, gaps: &[f64]) {
        let queues = self.queues;
        let servers = self.servers;
        for u in 0..queues {
            let i = slot * queues + u;
            let diff = runner.bandit_q[u] as i64 - runner.genie_q[u] as i64;
            self.psi_sum[i] += diff;
            self.psi_sq[i] += (diff * diff) as u64;
            let g = runner.genie_q[u];
            self.genie_sum[i] += g;
            self.genie_sq[i] += g * g;
            self.regen_sum[i] += runner.regen_age(u);
            let mut weighted = 0.0;
            for k in 0..servers {
                let n = runner.stats.trials(u, k);
                self.trials_sum[(slot * queues + u) * servers + k] += n;
                weighted += gaps[u * servers + k] * n as f64;
            }
            self.wsub_sum[i] += weighted;
            self.wsub_sq[i] += weighted * weighted;
        }
        self.explore_sum[slot] += runner.explore_cum;
    }

    fn merge(&mut self, other: &Aggregate) {
        fn add_u(dst: &mut [u64], src: &[u64]) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        for (d, s) in self.psi_sum.iter_mut().zip(&other.psi_sum) {
            *d += s;
        }
        add_u(&mut self.psi_sq, &other.psi_sq);
        add_u(&mut self.genie_sum, &other.genie_sum);
        add_u(&mut self.genie_sq, &other.genie_sq);
        add_u(&mut self.regen_sum, &other.regen_sum);
        add_u(&mut self.explore_sum, &other.explore_sum);
        add_u(&mut self.trials_sum, &other.trials_sum);
        for (d, s) in self.wsub_sum.iter_mut().zip(&other.wsub_sum) {
            *d += s;
        }
        for (d, s) in self.wsub_sq.iter_mut().zip(&other.wsub_sq) {
            *d += s;
        }
    }
}

const Z_95: f64 = 1.96;

fn mean_hw(sum: f64, sq: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    let var = ((sq - sum * sum / n) / (n - 1.0)).max(0.0);
    (mean, Z_95 * (var / n).sqrt())
}

/// Episodes per parallel work unit. Fixed so the reduction tree, and hence
/// the floating-point sums, do not depend on the worker count.
const EPISODE_CHUNK: u64 = 64;

/// Runs all episodes and aggregates the regret series at the recorded
/// slots. Episodes are distributed over the current rayon pool; output is
/// identical for any pool size, including 1.
pub fn estimate_regret(cfg: &SimConfig) -> Result<RegretSeries, SimError> {
    cfg.validate()?;
    if cfg.episodes < 2 {
        return Err(SimError::TooFewEpisodes);
    }
    let slots = cfg.record.slots(cfg.horizon);
    let queues = cfg.instance.queues();
    let servers = cfg.instance.servers();
    let derived = cfg.instance.derived();
    // Per-link gap to the queue's best rate, zero on the best link.
    let gaps: Vec<f64> = (0..queues)
        .flat_map(|u| {
            (0..servers).map(move |k| derived.mu_star[u] - cfg.instance.mu(u, k))
        })
        .collect();

    let chunks = cfg.episodes.div_ceil(EPISODE_CHUNK);
    let partials: Result<Vec<Aggregate>, SimError> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut agg = Aggregate::new(slots.len(), queues, servers);
            let lo = chunk * EPISODE_CHUNK;
            let hi = ((chunk + 1) * EPISODE_CHUNK).min(cfg.episodes);
            for episode in lo..hi {
                let mut runner = EpisodeRunner::new(cfg, episode)?;
                let mut next = 0usize;
                for _ in 0..cfg.horizon {
                    runner.step()?;
                    if next < slots.len() && runner.t == slots[next] {
                        agg.absorb_checkpoint(next, &runner, &gaps);
                        next += 1;
                    }
                }
            }
            Ok(agg)
        })
        .collect();
    let partials = partials?;
    let mut total = Aggregate::new(slots.len(), queues, servers);
    for part in &partials {
        total.merge(part);
    }

    let n = cfg.episodes as f64;
    let mut psi = Vec::with_capacity(slots.len());
    let mut half_width = Vec::with_capacity(slots.len());
    let mut genie_mean = Vec::with_capacity(slots.len());
    let mut genie_half_width = Vec::with_capacity(slots.len());
    let mut regen_age = Vec::with_capacity(slots.len());
    let mut explore_cum = Vec::with_capacity(slots.len());
    let mut mean_trials = Vec::with_capacity(slots.len());
    let mut subopt_weighted = Vec::with_capacity(slots.len());
    for s in 0..slots.len() {
        let mut psi_row = Vec::with_capacity(queues);
        let mut hw_row = Vec::with_capacity(queues);
        let mut gmean_row = Vec::with_capacity(queues);
        let mut ghw_row = Vec::with_capacity(queues);
        let mut regen_row = Vec::with_capacity(queues);
        let mut trials_row = Vec::with_capacity(queues);
        let mut wsub_row = Vec::with_capacity(queues);
        for u in 0..queues {
            let i = s * queues + u;
            let (m, hw) = mean_hw(total.psi_sum[i] as f64, total.psi_sq[i] as f64, n);
            psi_row.push(m);
            hw_row.push(hw);
            let (gm, ghw) = mean_hw(total.genie_sum[i] as f64, total.genie_sq[i] as f64, n);
            gmean_row.push(gm);
            ghw_row.push(ghw);
            regen_row.push(total.regen_sum[i] as f64 / n);
            trials_row.push(
                (0..servers)
                    .map(|k| total.trials_sum[i * servers + k] as f64 / n)
                    .collect::<Vec<f64>>(),
            );
            let (wm, whw) = mean_hw(total.wsub_sum[i], total.wsub_sq[i], n);
            wsub_row.push(MeanHw {
                mean: wm,
                half_width: whw,
            });
        }
        psi.push(psi_row);
        half_width.push(hw_row);
        genie_mean.push(gmean_row);
        genie_half_width.push(ghw_row);
        regen_age.push(regen_row);
        explore_cum.push(total.explore_sum[s] as f64 / n);
        mean_trials.push(trials_row);
        subopt_weighted.push(wsub_row);
    }

    Ok(RegretSeries {
        times: slots,
        episodes: cfg.episodes,
        queues,
        servers,
        psi,
        half_width,
        genie_mean,
        genie_half_width,
        regen_age,
        explore_cum,
        mean_trials,
        subopt_weighted,
    })
}

/// Checks the regenerative-cycle inequality at `(queue, t)`: the pathwise
/// queue difference is at most the number of exploration slots plus
/// suboptimal exploit schedules since the bandit queue was last empty.
pub fn regen_cycle_check(
    trace: &[TraceRecord],
    inst: &ProblemInstance,
    queue: usize,
    t: u64,
) -> bool {
    debug_assert!(t >= 1 && (t as usize) <= trace.len());
    debug_assert!(trace.first().map(|r| r.t) == Some(1));
    let idx = (t - 1) as usize;
    let lhs = trace[idx].bandit_q[queue] as i64 - trace[idx].genie_q[queue] as i64;
    let last_zero = (1..=t).rev().find(|&l| trace[(l - 1) as usize].bandit_q[queue] == 0);
    let start = last_zero.unwrap_or(0);
    let k_star = inst.derived().k_star[queue];
    let rhs: i64 = ((start + 1)..=t)
        .map(|l| {
            let r = &trace[(l - 1) as usize];
            (r.explored || r.schedule[queue] != k_star) as i64
        })
        .sum();
    lhs <= rhs
}

/// Number of slots at which the regenerative-cycle inequality fails for
/// `queue`, over the whole trace in a single pass.
pub fn regen_violations(trace: &[TraceRecord], inst: &ProblemInstance, queue: usize) -> usize {
    let k_star = inst.derived().k_star[queue];
    let mut running: i64 = 0;
    let mut violations = 0;
    for r in trace {
        running += (r.explored || r.schedule[queue] != k_star) as i64;
        let lhs = r.bandit_q[queue] as i64 - r.genie_q[queue] as i64;
        if lhs > running {
            violations += 1;
        }
        if r.bandit_q[queue] == 0 {
            running = 0;
        }
    }
    violations
}

/// One queue's sides of the suboptimal-schedule regret inequality at a
/// checkpoint.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SuboptCheck {
    pub queue: usize,
    /// Estimated regret and its half-width.
    pub lhs: f64,
    pub lhs_half_width: f64,
    /// `sum_k gap(u,k) E[T_uk(t)] - eps_u t` and the half-width of its
    /// estimated part.
    pub rhs: f64,
    pub rhs_half_width: f64,
    /// `lhs >= rhs - 2 (lhs_hw + rhs_hw)`.
    pub holds: bool,
}

/// Evaluates the inequality `psi_u(t) >= sum_k gap E[T_uk] - eps_u t` for
/// every queue at a recorded slot, with a two-half-width allowance.
pub fn suboptimal_bound_check(
    series: &RegretSeries,
    inst: &ProblemInstance,
    t: u64,
) -> Result<Vec<SuboptCheck>, SimError> {
    let slot = series
        .slot_index(t)
        .ok_or(SimError::SlotNotRecorded { t })?;
    let derived = inst.derived();
    Ok((0..series.queues)
        .map(|u| {
            let lhs = series.psi[slot][u];
            let lhs_half_width = series.half_width[slot][u];
            let w = series.subopt_weighted[slot][u];
            let rhs = w.mean - derived.eps[u] * t as f64;
            let holds = lhs >= rhs - 2.0 * (lhs_half_width + w.half_width);
            SuboptCheck {
                queue: u,
                lhs,
                lhs_half_width,
                rhs,
                rhs_half_width: w.half_width,
                holds,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k5_instance() -> ProblemInstance {
        ProblemInstance::validate(1, 5, vec![0.55], vec![vec![0.65, 0.48, 0.40, 0.30, 0.20]])
            .unwrap()
    }

    fn small_cfg(policy: PolicyKind, horizon: u64, episodes: u64) -> SimConfig {
        SimConfig::new(k5_instance(), policy, horizon, episodes, 0xDECAFBAD)
    }

    #[test]
    fn stationary_pmf_values() {
        let pmf = stationary_pmf(0.55, 0.65, 4);
        assert_abs_diff_eq!(pmf[0], 0.153846, epsilon = 1e-6);
        assert_abs_diff_eq!(stationary_rho(0.55, 0.65), 0.658120, epsilon = 1e-6);
        assert_abs_diff_eq!(pmf[1], 0.289278, epsilon = 1e-6);
        // Light traffic empties the queue.
        assert_abs_diff_eq!(stationary_pmf(1e-9, 0.5, 1)[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn stationary_sampler_matches_pmf() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40_000usize;
        let mut counts = vec![0u64; 64];
        for _ in 0..n {
            let q = sample_stationary_queue(0.55, 0.65, &mut rng).unwrap() as usize;
            if q < counts.len() {
                counts[q] += 1;
            }
        }
        let pmf = stationary_pmf(0.55, 0.65, counts.len());
        let tv: f64 = counts
            .iter()
            .zip(&pmf)
            .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "total variation {tv}");
    }

    #[test]
    fn sampler_rejects_unstable_rates() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_stationary_queue(0.7, 0.6, &mut rng),
            Err(SimError::UnstableRates { .. })
        ));
    }

    #[test]
    fn record_grids() {
        assert_eq!(RecordGrid::EveryN(3).slots(10), vec![3, 6, 9, 10]);
        assert_eq!(RecordGrid::EveryN(5).slots(10), vec![5, 10]);
        let per_decade = RecordGrid::PerDecade(4).slots(1000);
        assert!(per_decade.first() == Some(&1) && per_decade.last() == Some(&1000));
        assert!(per_decade.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(
            RecordGrid::Explicit(vec![7, 3, 3, 900]).slots(100),
            vec![3, 7]
        );
    }

    #[test]
    fn genie_policy_has_identically_zero_regret() {
        let cfg = small_cfg(PolicyKind::Genie, 300, 40);
        let series = estimate_regret(&cfg).unwrap();
        for (row, hw_row) in series.psi.iter().zip(&series.half_width) {
            for (&m, &hw) in row.iter().zip(hw_row) {
                assert_eq!(m, 0.0);
                assert_eq!(hw, 0.0);
            }
        }
    }

    #[test]
    fn traces_satisfy_the_queue_recursion() {
        for policy in [
            PolicyKind::QThs { explore_const: 3.0 },
            PolicyKind::Thompson,
            PolicyKind::Ucb1,
            PolicyKind::QUcb { explore_const: 3.0 },
            PolicyKind::UniformRandom,
            PolicyKind::Genie,
        ] {
            for coupling in [CouplingMode::CommonUniform, CouplingMode::IndependentServices] {
                let mut cfg = small_cfg(policy.clone(), 300, 1);
                cfg.coupling = coupling;
                let trace = run_episode(&cfg, 0).unwrap();
                assert_eq!(trace.len(), 300);
                for w in trace.windows(2) {
                    let (prev, cur) = (&w[0], &w[1]);
                    assert_eq!(cur.t, prev.t + 1);
                    for u in 0..1 {
                        assert_eq!(
                            cur.bandit_q[u],
                            lindley_step(prev.bandit_q[u], cur.arrivals[u], cur.services[u])
                        );
                        assert_eq!(
                            cur.genie_q[u],
                            lindley_step(prev.genie_q[u], cur.arrivals[u], cur.genie_services[u])
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn common_uniform_coupling_dominates_single_queue() {
        let cfg = small_cfg(PolicyKind::QThs { explore_const: 3.0 }, 2000, 20);
        for episode in 0..20 {
            let trace = run_episode(&cfg, episode).unwrap();
            for r in &trace {
                assert!(r.genie_q[0] <= r.bandit_q[0], "violation at t={}", r.t);
            }
        }
    }

    #[test]
    fn ucb_cold_start_covers_all_links() {
        let cfg = small_cfg(PolicyKind::Ucb1, 40, 1);
        let trace = run_episode(&cfg, 0).unwrap();
        // First K slots are forced exploration covering each server once.
        let first: Vec<usize> = trace[..5].iter().map(|r| r.schedule[0]).collect();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        assert!(trace[..5].iter().all(|r| r.explored));
    }

    #[test]
    fn estimates_are_reproducible_across_pool_sizes() {
        let cfg = small_cfg(PolicyKind::QThs { explore_const: 3.0 }, 400, 130);
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| estimate_regret(&cfg).unwrap());
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| estimate_regret(&cfg).unwrap());
        assert_eq!(one.times, four.times);
        assert_eq!(one.psi, four.psi);
        assert_eq!(one.half_width, four.half_width);
        assert_eq!(one.mean_trials, four.mean_trials);
        assert_eq!(one.explore_cum, four.explore_cum);
        // And a second identical run reproduces byte-for-byte.
        let again = estimate_regret(&cfg).unwrap();
        assert_eq!(one.psi, again.psi);
    }

    #[test]
    fn transient_mean_converges_to_equilibrium() {
        let means = transient_genie_mean(0.55, 0.65, &[1, 100, 2000, 4000]);
        assert_abs_diff_eq!(means[0], stationary_mean(0.55, 0.65), epsilon = 0.05);
        let eq = equilibrium_mean(0.55, 0.65);
        assert_abs_diff_eq!(means[2], eq, epsilon = 1e-6);
        assert_abs_diff_eq!(means[3], eq, epsilon = 1e-9);
    }

    #[test]
    fn regen_inequality_on_genie_and_small_traces() {
        let genie_cfg = small_cfg(PolicyKind::Genie, 200, 1);
        let trace = run_episode(&genie_cfg, 0).unwrap();
        let inst = k5_instance();
        for t in 1..=200 {
            assert!(regen_cycle_check(&trace, &inst, 0, t));
        }
        assert_eq!(regen_violations(&trace, &inst, 0), 0);

        let cfg = small_cfg(PolicyKind::QThs { explore_const: 3.0 }, 1000, 10);
        for episode in 0..10 {
            let trace = run_episode(&cfg, episode).unwrap();
            assert_eq!(regen_violations(&trace, &inst, 0), 0);
            // Spot-check the pointwise form against the streaming form.
            for t in [1, 2, 17, 500, 1000] {
                assert!(regen_cycle_check(&trace, &inst, 0, t));
            }
        }
    }

    #[test]
    fn subopt_check_on_genie_series() {
        let mut cfg = small_cfg(PolicyKind::Genie, 100, 30);
        cfg.record = RecordGrid::Explicit(vec![50, 100]);
        let series = estimate_regret(&cfg).unwrap();
        let inst = k5_instance();
        for &t in &[50u64, 100] {
            let checks = suboptimal_bound_check(&series, &inst, t).unwrap();
            assert_eq!(checks.len(), 1);
            let c = &checks[0];
            assert_eq!(c.lhs, 0.0);
            assert_abs_diff_eq!(c.rhs, -0.1 * t as f64, epsilon = 1e-9);
            assert!(c.holds);
        }
        assert!(matches!(
            suboptimal_bound_check(&series, &inst, 77),
            Err(SimError::SlotNotRecorded { t: 77 })
        ));
    }

    #[test]
    fn config_validation_errors() {
        let mut cfg = small_cfg(PolicyKind::Genie, 0, 2);
        assert!(matches!(estimate_regret(&cfg), Err(SimError::ZeroHorizon)));
        cfg.horizon = 10;
        cfg.episodes = 1;
        assert!(matches!(
            estimate_regret(&cfg),
            Err(SimError::TooFewEpisodes)
        ));
        assert!(run_episode(&cfg, 0).is_ok());
    }
}
