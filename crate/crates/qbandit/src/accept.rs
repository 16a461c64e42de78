//! Runnable acceptance checks.
//!
//! Each criterion is a self-contained function with pinned sizes, seeds,
//! and tolerances, returning a [`CriterionReport`]. The `acceptance`
//! integration test asserts every report and the CLI `verify` subcommand
//! prints them; both share the heavy Monte Carlo runs through process-wide
//! caches.

use std::fmt;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bounds::{self, BoundForm};
use crate::instance::ProblemInstance;
use crate::matching::{min_hamming_bruteforce, project_to_matching};
use crate::policies::PolicyKind;
use crate::sim::{
    estimate_regret, sample_stationary_queue, stationary_pmf, stationary_rho, suboptimal_bound_check,
    transient_genie_mean, EpisodeRunner, RecordGrid, RegretSeries, SimConfig, SimError,
};

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug)]
pub struct CriterionReport {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{:2}] {} ({:.1}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

pub const CRITERION_COUNT: usize = 11;

/// Stable names for the criteria, in id order.
pub const CRITERION_NAMES: [&str; CRITERION_COUNT] = [
    "stationary-initializer",
    "genie-stationarity",
    "coupling-dominance",
    "regenerative-cycle-inequality",
    "phase-transition",
    "late-stage-decay-slope",
    "peak-shift-with-load",
    "projection-oracle",
    "exploration-accounting",
    "bound-golden-values",
    "suboptimal-schedule-inequality",
];

/// Runs one criterion by id (1-based).
pub fn run_criterion(id: usize) -> CriterionReport {
    let f: fn() -> (bool, String) = match id {
        1 => c1_stationary_initializer,
        2 => c2_genie_stationarity,
        3 => c3_coupling_dominance,
        4 => c4_regen_inequality,
        5 => c5_phase_transition,
        6 => c6_decay_slope,
        7 => c7_peak_shift,
        8 => c8_projection_oracle,
        9 => c9_exploration_accounting,
        10 => c10_bound_golden_values,
        11 => c11_subopt_inequality,
        other => panic!("criterion id {other} out of range 1..=11"),
    };
    let start = Instant::now();
    let (passed, detail) = f();
    CriterionReport {
        id,
        name: CRITERION_NAMES[id - 1],
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every criterion in order.
pub fn run_all() -> Vec<CriterionReport> {
    (1..=CRITERION_COUNT).map(run_criterion).collect()
}

/// The five-server single-queue instance used throughout the demo configs:
/// `lambda = 0.55`, `mu = [0.65, 0.48, 0.40, 0.30, 0.20]` (load margin
/// 0.10, best-to-second gap 0.17).
pub fn reference_instance() -> ProblemInstance {
    ProblemInstance::validate(1, 5, vec![0.55], vec![vec![0.65, 0.48, 0.40, 0.30, 0.20]])
        .expect("reference instance is valid")
}

/// Same servers as the reference instance with the arrival rate set to
/// leave a margin of `eps` below the best service rate.
pub fn loaded_instance(eps: f64) -> ProblemInstance {
    ProblemInstance::validate(1, 5, vec![0.65 - eps], vec![vec![0.65, 0.48, 0.40, 0.30, 0.20]])
        .expect("loaded instance is valid")
}

const SEED_STATIONARY: u64 = 0xACC_0001;
const SEED_GENIE: u64 = 0xACC_0002;
const SEED_DOMINANCE: u64 = 0xACC_0003;
const SEED_REGEN: u64 = 0xACC_0004;
const SEED_PHASE: u64 = 0xACC_0005;
const SEED_SWEEP: u64 = 0xACC_0007;
const SEED_PROJECTION: u64 = 0xACC_0008;
const SEED_EXPLORE: u64 = 0xACC_0009;
const SEED_SUBOPT: u64 = 0xACC_000B;

fn qths3() -> PolicyKind {
    PolicyKind::QThs { explore_const: 3.0 }
}

/// Centered moving average with a symmetric window of `half` points on
/// each side, shrunk at the edges.
fn moving_average(xs: &[f64], half: usize) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(xs.len() - 1);
            xs[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

fn ols_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

fn per_episode<T, F>(cfg: &SimConfig, f: F) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(&mut EpisodeRunner) -> Result<T, SimError> + Sync,
{
    (0..cfg.episodes)
        .into_par_iter()
        .map(|episode| {
            let mut runner = EpisodeRunner::new(cfg, episode)?;
            f(&mut runner)
        })
        .collect()
}

// --- criterion 1 ---------------------------------------------------------

fn c1_stationary_initializer() -> (bool, String) {
    let (lambda, mu_star) = (0.55, 0.65);
    let pmf = stationary_pmf(lambda, mu_star, 256);
    let rho = stationary_rho(lambda, mu_star);
    let golden = (pmf[0] - 0.153846).abs() < 1e-6
        && (rho - 0.658120).abs() < 1e-6
        && (pmf[1] - 0.289278).abs() < 1e-6;

    let mut rng = ChaCha8Rng::seed_from_u64(SEED_STATIONARY);
    let n = 100_000usize;
    let mut counts = vec![0u64; pmf.len()];
    let mut overflow = 0u64;
    for _ in 0..n {
        let q = sample_stationary_queue(lambda, mu_star, &mut rng).unwrap() as usize;
        if q < counts.len() {
            counts[q] += 1;
        } else {
            overflow += 1;
        }
    }
    let mut tv: f64 = counts
        .iter()
        .zip(&pmf)
        .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
        .sum::<f64>();
    let analytic_tail = 1.0 - pmf.iter().sum::<f64>();
    tv = (tv + (overflow as f64 / n as f64 - analytic_tail).abs()) / 2.0;
    (
        golden && tv < 0.01,
        format!(
            "TV(empirical, analytic) = {tv:.5} over {n} draws (need < 0.01); \
             P[0] = {:.6}, rho = {rho:.6}, P[1] = {:.6}",
            pmf[0], pmf[1]
        ),
    )
}

// --- criterion 2 ---------------------------------------------------------

fn c2_genie_stationarity() -> (bool, String) {
    let checkpoints: Vec<u64> = (1..=20).map(|i| i * 500).collect();
    let mut cfg = SimConfig::new(
        reference_instance(),
        PolicyKind::Genie,
        10_000,
        2_000,
        SEED_GENIE,
    );
    cfg.record = RecordGrid::Explicit(checkpoints.clone());
    let series = estimate_regret(&cfg).unwrap();
    let oracle = transient_genie_mean(0.55, 0.65, &checkpoints);
    let mut worst = 0.0f64;
    let mut ok = true;
    for (s, want) in oracle.iter().enumerate() {
        let got = series.genie_mean[s][0];
        let hw = series.genie_half_width[s][0];
        let z = (got - want).abs() / hw;
        worst = worst.max(z);
        ok &= z < 3.0;
    }
    (
        ok,
        format!(
            "20 checkpoints over horizon 10^4, 2000 episodes; max |mean - kernel oracle| = \
             {worst:.2} half-widths (need < 3)"
        ),
    )
}

// --- criteria 3 and 4 ----------------------------------------------------

fn c3_coupling_dominance() -> (bool, String) {
    let cfg = SimConfig::new(reference_instance(), qths3(), 10_000, 1_000, SEED_DOMINANCE);
    let violations: u64 = per_episode(&cfg, |runner| {
        let mut bad = 0u64;
        for _ in 0..10_000 {
            runner.step()?;
            bad += (runner.genie_q[0] > runner.bandit_q[0]) as u64;
        }
        Ok(bad)
    })
    .unwrap()
    .into_iter()
    .sum();
    (
        violations == 0,
        format!("{violations} slots with genie queue above bandit queue across 10^3 x 10^4 (need 0)"),
    )
}

fn c4_regen_inequality() -> (bool, String) {
    let cfg = SimConfig::new(reference_instance(), qths3(), 10_000, 1_000, SEED_REGEN);
    let k_star = cfg.instance.derived().k_star[0];
    let violations: u64 = per_episode(&cfg, |runner| {
        let mut running: i64 = 0;
        let mut bad = 0u64;
        for _ in 0..10_000 {
            runner.step()?;
            running += (runner.explored || runner.schedule[0] != k_star) as i64;
            let lhs = runner.bandit_q[0] as i64 - runner.genie_q[0] as i64;
            bad += (lhs > running) as u64;
            if runner.bandit_q[0] == 0 {
                running = 0;
            }
        }
        Ok(bad)
    })
    .unwrap()
    .into_iter()
    .sum();
    (
        violations == 0,
        format!("{violations} slots violating the cycle inequality across 10^3 x 10^4 (need 0)"),
    )
}

// --- criteria 5 and 6 (shared run) ---------------------------------------

struct PhaseData {
    times: Vec<u64>,
    smoothed: Vec<f64>,
    t_star: u64,
    psi_star: f64,
    tail: f64,
}

const SMOOTH_HALF_WINDOW: usize = 7;

fn phase_data() -> &'static PhaseData {
    static DATA: OnceLock<PhaseData> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = SimConfig::new(reference_instance(), qths3(), 200_000, 2_000, SEED_PHASE);
        let series = estimate_regret(&cfg).unwrap();
        let psi: Vec<f64> = series.psi.iter().map(|row| row[0]).collect();
        let smoothed = moving_average(&psi, SMOOTH_HALF_WINDOW);
        let (best, _) = smoothed
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        PhaseData {
            t_star: series.times[best],
            psi_star: smoothed[best],
            tail: *smoothed.last().unwrap(),
            times: series.times,
            smoothed,
        }
    })
}

fn c5_phase_transition() -> (bool, String) {
    let d = phase_data();
    let peak_in_window = (100..=50_000).contains(&d.t_star);
    let decayed = d.tail < 0.3 * d.psi_star;
    (
        peak_in_window && decayed,
        format!(
            "smoothed peak {:.2} at t* = {} (need t* in [1e2, 5e4]); \
             psi(2e5) = {:.3} = {:.3} * peak (need < 0.3)",
            d.psi_star,
            d.t_star,
            d.tail,
            d.tail / d.psi_star
        ),
    )
}

fn c6_decay_slope() -> (bool, String) {
    let d = phase_data();
    let from = 4 * d.t_star;
    let points: Vec<(f64, f64)> = d
        .times
        .iter()
        .zip(&d.smoothed)
        .filter(|(&t, &psi)| t >= from && psi > 0.0)
        .map(|(&t, &psi)| ((t as f64).ln(), psi.ln()))
        .collect();
    if points.len() < 10 {
        return (
            false,
            format!("only {} positive points in [4 t*, 2e5]", points.len()),
        );
    }
    let slope = ols_slope(&points);
    (
        (-1.7..=-0.3).contains(&slope),
        format!(
            "ln psi vs ln t slope = {slope:.3} over t in [{from}, 2e5], {} points \
             (need within [-1.7, -0.3])",
            points.len()
        ),
    )
}

// --- criterion 7 ----------------------------------------------------------

fn c7_peak_shift() -> (bool, String) {
    let mut peaks = Vec::new();
    for (i, eps) in [0.05f64, 0.10, 0.15].into_iter().enumerate() {
        let cfg = SimConfig::new(
            loaded_instance(eps),
            qths3(),
            40_000,
            1_000,
            SEED_SWEEP + i as u64,
        );
        let series = estimate_regret(&cfg).unwrap();
        let psi: Vec<f64> = series.psi.iter().map(|row| row[0]).collect();
        let smoothed = moving_average(&psi, SMOOTH_HALF_WINDOW);
        let (best, _) = smoothed
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        peaks.push((eps, series.times[best]));
    }
    let ordered = peaks.windows(2).all(|w| w[0].1 > w[1].1);
    (
        ordered,
        format!(
            "smoothed peak slots by load margin: {} (need strictly decreasing in eps)",
            peaks
                .iter()
                .map(|(e, t)| format!("eps={e:.2} -> t*={t}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

// --- criterion 8 ----------------------------------------------------------

fn c8_projection_oracle() -> (bool, String) {
    let mut mismatches = 0u64;
    let mut cases = 0u64;
    for servers in 1..=4usize {
        for queues in 1..=servers {
            for code in 0..servers.pow(queues as u32) {
                let mut khat = Vec::with_capacity(queues);
                let mut rest = code;
                for _ in 0..queues {
                    khat.push(rest % servers);
                    rest /= servers;
                }
                let got = project_to_matching(&khat, queues, servers).hamming_distance(&khat);
                let want = min_hamming_bruteforce(&khat, queues, servers).unwrap();
                cases += 1;
                mismatches += (got != want) as u64;
            }
        }
    }
    let exhaustive = cases;

    let mut rng = ChaCha8Rng::seed_from_u64(SEED_PROJECTION);
    for _ in 0..10_000 {
        let servers = rng.random_range(2..=8usize);
        let queues = rng.random_range(1..=servers);
        let khat: Vec<usize> = (0..queues).map(|_| rng.random_range(0..servers)).collect();
        let got = project_to_matching(&khat, queues, servers).hamming_distance(&khat);
        let want = min_hamming_bruteforce(&khat, queues, servers).unwrap();
        cases += 1;
        mismatches += (got != want) as u64;
    }
    (
        mismatches == 0,
        format!(
            "{mismatches} mismatches over {exhaustive} exhaustive (U,K <= 4) plus 10^4 random \
             (K <= 8) cases (need 0)"
        ),
    )
}

// --- criterion 9 ----------------------------------------------------------

fn c9_exploration_accounting() -> (bool, String) {
    // Mean bound over the window (10^3, 10^4].
    let cfg = SimConfig::new(reference_instance(), qths3(), 10_000, 1_000, SEED_EXPLORE);
    let counts: Vec<u64> = per_episode(&cfg, |runner| {
        let mut in_window = 0u64;
        for t in 1..=10_000u64 {
            runner.step()?;
            if t > 1_000 {
                in_window += runner.explored as u64;
            }
        }
        Ok(in_window)
    })
    .unwrap();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<u64>() as f64 / n;
    let var = counts
        .iter()
        .map(|&c| (c as f64 - mean) * (c as f64 - mean))
        .sum::<f64>()
        / (n - 1.0);
    let hw = 1.96 * (var / n).sqrt();
    let mean_bound = bounds::explore_mean_bound(1_000, 10_000, 5);
    let mean_ok = mean <= mean_bound + 3.0 * hw;

    // Tail bound at t = 10^3 over the window (1, 10^3].
    let tail_cfg = SimConfig::new(reference_instance(), qths3(), 1_000, 10_000, SEED_EXPLORE + 1);
    let threshold = bounds::explore_count_bound(1, 1_000, 5, 1_000);
    let exceedances: u64 = per_episode(&tail_cfg, |runner| {
        let mut total = 0u64;
        for t in 1..=1_000u64 {
            runner.step()?;
            if t > 1 {
                total += runner.explored as u64;
            }
        }
        Ok((total as f64 >= threshold) as u64)
    })
    .unwrap()
    .into_iter()
    .sum();
    (
        mean_ok && exceedances == 0,
        format!(
            "window mean {mean:.1} vs bound {mean_bound:.1} + 3hw ({hw:.1}); \
             tail threshold {threshold:.1} exceeded {exceedances} times in 10^4 trials (need 0)"
        ),
    )
}

// --- criterion 10 ---------------------------------------------------------

fn c10_bound_golden_values() -> (bool, String) {
    let inst = reference_instance();
    let kl = bounds::bernoulli_kl(0.25, 0.75).unwrap();
    let d = bounds::d_mu(&inst);
    let window = bounds::early_stage_lb(&inst, BoundForm::PerQueue(0), 0.5, 3.0, 3.0)
        .unwrap()
        .window_right;
    let ok_kl = (kl - 0.549306).abs() <= 1e-6;
    let ok_d = (d - 0.182315).abs() <= 1e-6;
    let ok_window = (window - 3.6463).abs() <= 1e-4;
    (
        ok_kl && ok_d && ok_window,
        format!(
            "KL(0.25, 0.75) = {kl:.6} (want 0.549306 +- 1e-6); D = {d:.6} \
             (want 0.182315 +- 1e-6); early window right endpoint = {window:.4} \
             (want 3.6463 +- 1e-4)"
        ),
    )
}

// --- criterion 11 ---------------------------------------------------------

fn c11_subopt_inequality() -> (bool, String) {
    let checkpoints = vec![100u64, 1_000, 10_000];
    let inst = reference_instance();
    let mut detail = Vec::new();
    let mut ok = true;
    for (i, policy) in [qths3(), PolicyKind::UniformRandom].into_iter().enumerate() {
        let mut cfg = SimConfig::new(inst.clone(), policy.clone(), 10_000, 2_000, SEED_SUBOPT + i as u64);
        cfg.record = RecordGrid::Explicit(checkpoints.clone());
        let series = estimate_regret(&cfg).unwrap();
        for &t in &checkpoints {
            let checks = suboptimal_bound_check(&series, &inst, t).unwrap();
            let c = &checks[0];
            ok &= c.holds;
            detail.push(format!(
                "{:?} t={t}: lhs {:.2} >= rhs {:.2} - 2hw {:.2} [{}]",
                policy_name(&policy),
                c.lhs,
                c.rhs,
                2.0 * (c.lhs_half_width + c.rhs_half_width),
                if c.holds { "ok" } else { "violated" }
            ));
        }
    }
    (ok, detail.join("; "))
}

fn policy_name(kind: &PolicyKind) -> &'static str {
    match kind {
        PolicyKind::QThs { .. } => "gated-thompson",
        PolicyKind::Thompson => "thompson",
        PolicyKind::Ucb1 => "ucb1",
        PolicyKind::QUcb { .. } => "gated-ucb",
        PolicyKind::Genie => "genie",
        PolicyKind::UniformRandom => "uniform",
    }
}

/// Extra diagnostic used by the CLI verify suite `series`: the raw
/// smoothed series behind criteria 5-7, for plotting or inspection.
pub fn phase_summary() -> (Vec<u64>, Vec<f64>) {
    let d = phase_data();
    (d.times.clone(), d.smoothed.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_handles_edges() {
        let xs = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = moving_average(&xs, 1);
        assert_eq!(ys, vec![1.5, 2.0, 3.0, 4.0, 4.5]);
        assert_eq!(moving_average(&xs, 0), xs);
    }

    #[test]
    fn ols_slope_recovers_line() {
        let pts: Vec<(f64, f64)> = (1..=10)
            .map(|i| (i as f64, 3.0 - 1.25 * i as f64))
            .collect();
        assert!((ols_slope(&pts) + 1.25).abs() < 1e-12);
    }

    #[test]
    fn golden_values_criterion_is_fast_and_passes() {
        let r = run_criterion(10);
        assert!(r.passed, "{r}");
        assert!(r.seconds < 1.0);
    }
}
