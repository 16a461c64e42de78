//! Bipartite matching utilities: the exploration matching set and the
//! Hamming projection of a per-queue favorite vector onto matchings.

use thiserror::Error;

/// An injective assignment of servers to queues: `assign[u]` is the server
/// scheduled for queue `u`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matching {
    assign: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum MatchingError {
    #[error("server {server} out of range for K={servers}")]
    ServerOutOfRange { server: usize, servers: usize },
    #[error("server {server} assigned to more than one queue")]
    DuplicateServer { server: usize },
    #[error("brute-force enumeration limited to K <= {max}, got K={servers}")]
    SizeTooLarge { servers: usize, max: usize },
}

impl Matching {
    pub fn new(assign: Vec<usize>, servers: usize) -> Result<Self, MatchingError> {
        let mut used = vec![false; servers];
        for &k in &assign {
            if k >= servers {
                return Err(MatchingError::ServerOutOfRange { server: k, servers });
            }
            if used[k] {
                return Err(MatchingError::DuplicateServer { server: k });
            }
            used[k] = true;
        }
        Ok(Self { assign })
    }

    /// Wraps an assignment the caller has already made injective.
    pub(crate) fn from_assign_unchecked(assign: Vec<usize>) -> Self {
        #[cfg(debug_assertions)]
        {
            let mut sorted = assign.clone();
            sorted.sort_unstable();
            sorted.dedup();
            debug_assert_eq!(sorted.len(), assign.len(), "assignment not injective");
        }
        Self { assign }
    }

    pub fn assign(&self) -> &[usize] {
        &self.assign
    }

    pub fn server_for(&self, queue: usize) -> usize {
        self.assign[queue]
    }

    /// Number of queues whose assignment differs from `khat`.
    pub fn hamming_distance(&self, khat: &[usize]) -> usize {
        self.assign
            .iter()
            .zip(khat)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// The `j`-th member of the exploration set: queue `u` gets server
/// `(u + j) mod K`.
///
/// The `K` cyclic shifts jointly cover every (queue, server) link exactly
/// once, so sampling a member uniformly explores each link at the same
/// rate.
pub fn exploration_matching(shift: usize, queues: usize, servers: usize) -> Matching {
    debug_assert!(queues >= 1 && queues <= servers && shift < servers);
    Matching {
        assign: (0..queues).map(|u| (u + shift) % servers).collect(),
    }
}

/// The full exploration set: all `K` cyclic shifts.
pub fn exploration_matchings(queues: usize, servers: usize) -> Vec<Matching> {
    (0..servers)
        .map(|j| exploration_matching(j, queues, servers))
        .collect()
}

/// Writes the `shift`-th exploration matching into `out` (one entry per
/// queue) without allocating.
pub(crate) fn exploration_assign_into(shift: usize, servers: usize, out: &mut [usize]) {
    for (u, slot) in out.iter_mut().enumerate() {
        *slot = (u + shift) % servers;
    }
}

/// Projects a favorite-server vector onto the nearest matching in Hamming
/// distance.
///
/// Scan queues in order and let each keep its favorite if that server is
/// still free; then hand the remaining queues the free servers in
/// ascending (queue, server) order. A matching can agree with `khat` on at
/// most one queue per distinct favorite, and the greedy pass realizes one
/// agreement per distinct favorite, so the result attains the minimum
/// distance `U - #distinct(khat)`; that identity is asserted in debug
/// builds.
pub fn project_to_matching(khat: &[usize], queues: usize, servers: usize) -> Matching {
    debug_assert_eq!(khat.len(), queues);
    let mut assign = vec![usize::MAX; queues];
    let mut taken = vec![false; servers];
    project_into(khat, &mut assign, &mut taken);

    #[cfg(debug_assertions)]
    {
        let mut seen = vec![false; servers];
        let distinct = khat
            .iter()
            .filter(|&&k| !std::mem::replace(&mut seen[k], true))
            .count();
        let m = Matching {
            assign: assign.clone(),
        };
        debug_assert_eq!(m.hamming_distance(khat), queues - distinct);
    }

    Matching { assign }
}

/// Allocation-free core of [`project_to_matching`]; `assign` and `taken`
/// are caller-provided scratch of lengths `U` and `K`.
pub(crate) fn project_into(khat: &[usize], assign: &mut [usize], taken: &mut [bool]) {
    taken.fill(false);
    assign.fill(usize::MAX);
    for (u, &want) in khat.iter().enumerate() {
        if !taken[want] {
            assign[u] = want;
            taken[want] = true;
        }
    }
    let mut next_free = 0;
    for slot in assign.iter_mut() {
        if *slot == usize::MAX {
            while taken[next_free] {
                next_free += 1;
            }
            *slot = next_free;
            taken[next_free] = true;
        }
    }
}

const BRUTE_FORCE_MAX_SERVERS: usize = 8;

/// Exact minimum Hamming distance from `khat` to any matching, by
/// enumerating all `K!/(K-U)!` injective assignments. Test oracle; refuses
/// `K > 8`.
pub fn min_hamming_bruteforce(
    khat: &[usize],
    queues: usize,
    servers: usize,
) -> Result<usize, MatchingError> {
    if servers > BRUTE_FORCE_MAX_SERVERS {
        return Err(MatchingError::SizeTooLarge {
            servers,
            max: BRUTE_FORCE_MAX_SERVERS,
        });
    }
    assert_eq!(khat.len(), queues);
    let mut best = queues;
    let mut used = vec![false; servers];
    fn descend(
        khat: &[usize],
        queue: usize,
        so_far: usize,
        used: &mut [bool],
        best: &mut usize,
    ) {
        if so_far >= *best {
            return;
        }
        if queue == khat.len() {
            *best = so_far;
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                descend(khat, queue + 1, so_far + (k != khat[queue]) as usize, used, best);
                used[k] = false;
            }
        }
    }
    descend(khat, 0, 0, &mut used, &mut best);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exploration_single_queue_covers_each_server() {
        let ms = exploration_matchings(1, 3);
        let assigns: Vec<_> = ms.iter().map(|m| m.assign().to_vec()).collect();
        assert_eq!(assigns, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn exploration_two_by_three() {
        let ms = exploration_matchings(2, 3);
        let assigns: Vec<_> = ms.iter().map(|m| m.assign().to_vec()).collect();
        assert_eq!(assigns, vec![vec![0, 1], vec![1, 2], vec![2, 0]]);
    }

    #[test]
    fn exploration_square_two() {
        let ms = exploration_matchings(2, 2);
        let assigns: Vec<_> = ms.iter().map(|m| m.assign().to_vec()).collect();
        assert_eq!(assigns, vec![vec![0, 1], vec![1, 0]]);
    }

    fn link_coverage_is_exact(queues: usize, servers: usize) {
        let mut count = vec![vec![0u32; servers]; queues];
        for m in exploration_matchings(queues, servers) {
            for (u, &k) in m.assign().iter().enumerate() {
                count[u][k] += 1;
            }
        }
        for row in count {
            assert!(row.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn exploration_covers_every_link_once() {
        for servers in 1..=10 {
            for queues in 1..=servers {
                link_coverage_is_exact(queues, servers);
            }
        }
    }

    #[test]
    fn projection_keeps_injective_input() {
        let khat = vec![2, 0, 3];
        let m = project_to_matching(&khat, 3, 4);
        assert_eq!(m.assign(), &khat[..]);
        assert_eq!(m.hamming_distance(&khat), 0);
    }

    #[test]
    fn projection_breaks_tie_toward_first_queue() {
        let m = project_to_matching(&[0, 0], 2, 2);
        assert_eq!(m.assign(), &[0, 1]);
        assert_eq!(m.hamming_distance(&[0, 0]), 1);
    }

    #[test]
    fn projection_three_by_three_example() {
        // favorites (1,1,2): queue 0 keeps 1, queue 2 keeps 2, queue 1
        // takes the free server 0.
        let m = project_to_matching(&[1, 1, 2], 3, 3);
        assert_eq!(m.assign(), &[1, 0, 2]);
        assert_eq!(m.hamming_distance(&[1, 1, 2]), 1);
    }

    #[test]
    fn bruteforce_examples() {
        assert_eq!(min_hamming_bruteforce(&[2, 0, 3], 3, 4).unwrap(), 0);
        assert_eq!(min_hamming_bruteforce(&[1, 1, 1], 3, 3).unwrap(), 2);
        assert_eq!(min_hamming_bruteforce(&[1, 1, 2], 3, 3).unwrap(), 1);
        assert_eq!(
            min_hamming_bruteforce(&[0; 9], 9, 9),
            Err(MatchingError::SizeTooLarge {
                servers: 9,
                max: 8
            })
        );
    }

    #[test]
    fn projection_matches_bruteforce_exhaustively_small() {
        for servers in 1..=4usize {
            for queues in 1..=servers {
                let total = servers.pow(queues as u32);
                for code in 0..total {
                    let mut khat = Vec::with_capacity(queues);
                    let mut rest = code;
                    for _ in 0..queues {
                        khat.push(rest % servers);
                        rest /= servers;
                    }
                    let projected = project_to_matching(&khat, queues, servers);
                    let exact = min_hamming_bruteforce(&khat, queues, servers).unwrap();
                    assert_eq!(projected.hamming_distance(&khat), exact, "khat={khat:?}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn projection_is_optimal_and_valid(
            (queues, servers, khat) in (1usize..=8).prop_flat_map(|servers| {
                (1..=servers).prop_flat_map(move |queues| {
                    (
                        Just(queues),
                        Just(servers),
                        prop::collection::vec(0..servers, queues),
                    )
                })
            })
        ) {
            let m = project_to_matching(&khat, queues, servers);
            prop_assert!(Matching::new(m.assign().to_vec(), servers).is_ok());
            let exact = min_hamming_bruteforce(&khat, queues, servers).unwrap();
            prop_assert_eq!(m.hamming_distance(&khat), exact);
        }
    }
}
