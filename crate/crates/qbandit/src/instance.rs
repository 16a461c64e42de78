//! Problem instances, queue dynamics, and the per-slot trace record.
//!
//! An instance is `U` queues fed by Bernoulli arrivals and `K >= U` servers
//! with Bernoulli service, described by an arrival vector `lambda` and a
//! `U x K` service-rate matrix `mu`. Validation enforces the structural
//! assumptions every other module relies on: each queue has a unique best
//! server, the best servers form a matching, and the best matching
//! stabilizes every queue.
//!
//! Queues and servers are indexed from 0 throughout the crate.

use serde::{Deserialize, Serialize};

/// Quantities derived from a validated instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivedParams {
    /// Best server per queue (unique argmax of each `mu` row).
    pub k_star: Vec<usize>,
    /// Best service rate per queue.
    pub mu_star: Vec<f64>,
    /// Stability margin per queue: `mu_star[u] - lambda[u]`.
    pub eps: Vec<f64>,
    /// Smallest gap between a queue's best and second-best server.
    pub delta: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    pub lambda_min: f64,
    /// Mean of `eps` across queues.
    pub eps_bar: f64,
}

/// A validated queueing-bandit instance.
///
/// Construct with [`ProblemInstance::validate`]; deserialization runs the
/// same checks, so an in-memory instance always satisfies the invariants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct ProblemInstance {
    queues: usize,
    servers: usize,
    lambda: Vec<f64>,
    mu: Vec<Vec<f64>>,
    derived: DerivedParams,
}

/// Wire form of an instance: `{"U": .., "K": .., "lambda": [..], "mu": [[..]]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawInstance {
    #[serde(rename = "U")]
    pub queues: usize,
    #[serde(rename = "K")]
    pub servers: usize,
    pub lambda: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum InstanceError {
    #[error("need 1 <= U <= K and K >= 2, got U={queues}, K={servers}")]
    BadShape { queues: usize, servers: usize },
    #[error("lambda has {got} entries, expected U={expected}")]
    LambdaLength { got: usize, expected: usize },
    #[error("mu has {got} rows, expected U={expected}")]
    MuRows { got: usize, expected: usize },
    #[error("mu row {queue} has {got} entries, expected K={expected}")]
    MuRowLength {
        queue: usize,
        got: usize,
        expected: usize,
    },
    #[error("rate out of range at {location}: {value} is not strictly inside (0,1)")]
    RateOutOfRange { location: String, value: f64 },
    #[error("queue {queue} has no unique best server: mu[{queue}][{first}] == mu[{queue}][{second}]")]
    NonUniqueOptimum {
        queue: usize,
        first: usize,
        second: usize,
    },
    #[error("queues {queue_a} and {queue_b} share best server {server}")]
    OptimaNotMatching {
        queue_a: usize,
        queue_b: usize,
        server: usize,
    },
    #[error("queue {queue} is unstable: mu_star - lambda = {eps}")]
    Unstable { queue: usize, eps: f64 },
}

impl ProblemInstance {
    /// Validates raw dimensions and rates and computes the derived
    /// parameters.
    ///
    /// Exactly one outcome is produced for every input: either a valid
    /// instance or the first error in the order dimensions, rate range,
    /// unique optimum, optimal matching, stability.
    pub fn validate(
        queues: usize,
        servers: usize,
        lambda: Vec<f64>,
        mu: Vec<Vec<f64>>,
    ) -> Result<Self, InstanceError> {
        if queues == 0 || servers < 2 || queues > servers {
            return Err(InstanceError::BadShape { queues, servers });
        }
        if lambda.len() != queues {
            return Err(InstanceError::LambdaLength {
                got: lambda.len(),
                expected: queues,
            });
        }
        if mu.len() != queues {
            return Err(InstanceError::MuRows {
                got: mu.len(),
                expected: queues,
            });
        }
        for (u, row) in mu.iter().enumerate() {
            if row.len() != servers {
                return Err(InstanceError::MuRowLength {
                    queue: u,
                    got: row.len(),
                    expected: servers,
                });
            }
        }
        for (u, &rate) in lambda.iter().enumerate() {
            if !(rate > 0.0 && rate < 1.0) {
                return Err(InstanceError::RateOutOfRange {
                    location: format!("lambda[{u}]"),
                    value: rate,
                });
            }
        }
        for (u, row) in mu.iter().enumerate() {
            for (k, &rate) in row.iter().enumerate() {
                if !(rate > 0.0 && rate < 1.0) {
                    return Err(InstanceError::RateOutOfRange {
                        location: format!("mu[{u}][{k}]"),
                        value: rate,
                    });
                }
            }
        }

        let mut k_star = Vec::with_capacity(queues);
        for (u, row) in mu.iter().enumerate() {
            let mut best = 0;
            for k in 1..servers {
                if row[k] > row[best] {
                    best = k;
                }
            }
            if let Some(tie) = (0..servers).find(|&k| k != best && row[k] == row[best]) {
                let (first, second) = (best.min(tie), best.max(tie));
                return Err(InstanceError::NonUniqueOptimum {
                    queue: u,
                    first,
                    second,
                });
            }
            k_star.push(best);
        }
        for a in 0..queues {
            for b in (a + 1)..queues {
                if k_star[a] == k_star[b] {
                    return Err(InstanceError::OptimaNotMatching {
                        queue_a: a,
                        queue_b: b,
                        server: k_star[a],
                    });
                }
            }
        }

        let mu_star: Vec<f64> = (0..queues).map(|u| mu[u][k_star[u]]).collect();
        let eps: Vec<f64> = (0..queues).map(|u| mu_star[u] - lambda[u]).collect();
        for (u, &e) in eps.iter().enumerate() {
            if e <= 0.0 {
                return Err(InstanceError::Unstable { queue: u, eps: e });
            }
        }

        let delta = (0..queues)
            .flat_map(|u| (0..servers).filter(move |&k| k != k_star[u]).map(move |k| (u, k)))
            .map(|(u, k)| mu_star[u] - mu[u][k])
            .fold(f64::INFINITY, f64::min);
        let mu_min = mu.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let mu_max = mu.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let lambda_min = lambda.iter().copied().fold(f64::INFINITY, f64::min);
        let eps_bar = eps.iter().sum::<f64>() / queues as f64;

        Ok(Self {
            queues,
            servers,
            lambda,
            mu,
            derived: DerivedParams {
                k_star,
                mu_star,
                eps,
                delta,
                mu_min,
                mu_max,
                lambda_min,
                eps_bar,
            },
        })
    }

    pub fn queues(&self) -> usize {
        self.queues
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self, queue: usize, server: usize) -> f64 {
        self.mu[queue][server]
    }

    pub fn mu_row(&self, queue: usize) -> &[f64] {
        &self.mu[queue]
    }

    pub fn derived(&self) -> &DerivedParams {
        &self.derived
    }
}

impl TryFrom<RawInstance> for ProblemInstance {
    type Error = InstanceError;

    fn try_from(raw: RawInstance) -> Result<Self, Self::Error> {
        ProblemInstance::validate(raw.queues, raw.servers, raw.lambda, raw.mu)
    }
}

impl From<ProblemInstance> for RawInstance {
    fn from(inst: ProblemInstance) -> Self {
        RawInstance {
            queues: inst.queues,
            servers: inst.servers,
            lambda: inst.lambda,
            mu: inst.mu,
        }
    }
}

/// One step of the queue recursion: `max(q + a - s, 0)`.
///
/// A job arriving into an empty queue can be served in the same slot, so
/// `(0, arrival, service)` stays at zero.
#[inline]
pub fn lindley_step(q: u64, arrival: bool, service: bool) -> u64 {
    (q + arrival as u64).saturating_sub(service as u64)
}

/// Everything observed in one simulated slot of a coupled episode.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    /// Slot index, starting at 1.
    pub t: u64,
    /// Server assigned to each queue by the bandit policy.
    pub schedule: Vec<usize>,
    /// Whether the slot was an exploration slot.
    pub explored: bool,
    pub arrivals: Vec<bool>,
    /// Service realized on each queue's scheduled link.
    pub services: Vec<bool>,
    /// Service realized on each queue's best link (the genie's schedule).
    pub genie_services: Vec<bool>,
    /// Queue lengths after this slot, bandit system.
    pub bandit_q: Vec<u64>,
    /// Queue lengths after this slot, genie system.
    pub genie_q: Vec<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k5_instance() -> ProblemInstance {
        ProblemInstance::validate(1, 5, vec![0.55], vec![vec![0.65, 0.48, 0.40, 0.30, 0.20]])
            .unwrap()
    }

    #[test]
    fn k5_instance_derived_values() {
        let inst = k5_instance();
        let d = inst.derived();
        assert_eq!(d.k_star, vec![0]);
        assert_abs_diff_eq!(d.eps[0], 0.10, epsilon = 1e-12);
        assert_abs_diff_eq!(d.delta, 0.17, epsilon = 1e-12);
        assert_abs_diff_eq!(d.mu_min, 0.20, epsilon = 1e-12);
        assert_abs_diff_eq!(d.mu_max, 0.65, epsilon = 1e-12);
        assert_abs_diff_eq!(d.eps_bar, 0.10, epsilon = 1e-12);
    }

    #[test]
    fn shared_best_server_is_rejected() {
        let err = ProblemInstance::validate(
            2,
            2,
            vec![0.1, 0.1],
            vec![vec![0.6, 0.3], vec![0.7, 0.2]],
        )
        .unwrap_err();
        assert_eq!(
            err,
            InstanceError::OptimaNotMatching {
                queue_a: 0,
                queue_b: 1,
                server: 0
            }
        );
    }

    #[test]
    fn unstable_queue_is_rejected() {
        let err = ProblemInstance::validate(1, 2, vec![0.7], vec![vec![0.6, 0.5]]).unwrap_err();
        match err {
            InstanceError::Unstable { queue: 0, eps } => {
                assert_abs_diff_eq!(eps, -0.1, epsilon = 1e-12)
            }
            other => panic!("expected Unstable, got {other:?}"),
        }
    }

    #[test]
    fn tied_row_is_rejected() {
        let err = ProblemInstance::validate(1, 3, vec![0.1], vec![vec![0.5, 0.5, 0.2]])
            .unwrap_err();
        assert_eq!(
            err,
            InstanceError::NonUniqueOptimum {
                queue: 0,
                first: 0,
                second: 1
            }
        );
    }

    #[test]
    fn out_of_range_rates_are_rejected_with_index() {
        let err =
            ProblemInstance::validate(1, 2, vec![1.0], vec![vec![0.6, 0.5]]).unwrap_err();
        assert_eq!(
            err,
            InstanceError::RateOutOfRange {
                location: "lambda[0]".into(),
                value: 1.0
            }
        );
        let err = ProblemInstance::validate(1, 2, vec![0.3], vec![vec![0.6, 0.0]]).unwrap_err();
        assert_eq!(
            err,
            InstanceError::RateOutOfRange {
                location: "mu[0][1]".into(),
                value: 0.0
            }
        );
    }

    #[test]
    fn bad_shapes_are_rejected() {
        assert!(matches!(
            ProblemInstance::validate(2, 1, vec![0.1, 0.1], vec![vec![0.5], vec![0.5]]),
            Err(InstanceError::BadShape { .. })
        ));
        assert!(matches!(
            ProblemInstance::validate(1, 2, vec![0.1, 0.2], vec![vec![0.5, 0.4]]),
            Err(InstanceError::LambdaLength { .. })
        ));
        assert!(matches!(
            ProblemInstance::validate(1, 2, vec![0.1], vec![vec![0.5, 0.4, 0.3]]),
            Err(InstanceError::MuRowLength { .. })
        ));
    }

    #[test]
    fn lindley_step_examples() {
        assert_eq!(lindley_step(3, true, true), 3);
        assert_eq!(lindley_step(0, false, true), 0);
        assert_eq!(lindley_step(0, true, true), 0);
        assert_eq!(lindley_step(0, true, false), 1);
        assert_eq!(lindley_step(5, false, true), 4);
    }

    #[test]
    fn json_round_trip_revalidates() {
        let inst = k5_instance();
        let json = serde_json::to_string(&inst).unwrap();
        assert!(json.contains("\"U\":1"));
        assert!(json.contains("\"K\":5"));
        let back: ProblemInstance = serde_json::from_str(&json).unwrap();
        assert_eq!(back, inst);

        let bad = r#"{"U":1,"K":2,"lambda":[0.7],"mu":[[0.6,0.5]]}"#;
        assert!(serde_json::from_str::<ProblemInstance>(bad).is_err());

        let unknown = r#"{"U":1,"K":2,"lambda":[0.1],"mu":[[0.6,0.5]],"extra":1}"#;
        assert!(serde_json::from_str::<ProblemInstance>(unknown).is_err());
    }
}
