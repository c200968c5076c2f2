//! Exhaustive coarsest-partition search, the independent oracle for the
//! refinement algorithms. Feasible only for small state spaces: the number
//! of set partitions is the Bell number (4140 at 8 states).

use crate::error::{OpeError, Result};
use crate::mdp::{MdpModel, PolicyTable};
use crate::scalar::Scalar;
use crate::solver::{backward_kernel, is_ratio};

use super::checks::{check_backward_model_with, check_model_irrelevance, check_pi_irrelevance};
use super::partition::Partition;

/// Default cap on the state count accepted by [`brute_force_coarsest`].
pub const BRUTE_FORCE_LIMIT: usize = 8;

/// Which family of conditions the enumeration checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BruteCondition {
    /// Target policy, rewards, and block-aggregated transitions.
    Forward,
    /// Importance ratios and the block-aggregated backward kernel.
    Backward,
}

/// Every restricted growth string over `n` items, i.e. every set partition
/// in canonical labeling, in lexicographic order.
fn partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut labels = vec![0usize; n];
    fn rec(labels: &mut Vec<usize>, pos: usize, max_used: usize, out: &mut Vec<Vec<usize>>) {
        if pos == labels.len() {
            out.push(labels.clone());
            return;
        }
        for l in 0..=max_used + 1 {
            labels[pos] = l;
            rec(labels, pos + 1, max_used.max(l), out);
        }
    }
    if n == 0 {
        out.push(Vec::new());
    } else {
        // position 0 is always label 0 in canonical form
        rec(&mut labels, 1, 0, &mut out);
    }
    out
}

/// Fewest-blocks partition satisfying `condition` at `tol`, found by
/// checking every set partition of the state space. Lexicographic
/// enumeration of canonical labelings makes the tie-break deterministic:
/// among minimal partitions the lexicographically smallest `block_of` wins.
pub fn brute_force_coarsest<T: Scalar>(
    mdp: &MdpModel<T>,
    pi: &PolicyTable<T>,
    b: &PolicyTable<T>,
    condition: BruteCondition,
    tol: f64,
    limit: usize,
) -> Result<Partition> {
    let n = mdp.n_states;
    if n > limit {
        return Err(OpeError::InvalidArgument(format!(
            "brute force over {n} states exceeds the limit of {limit}"
        )));
    }
    // shared across candidates; computed once
    let backward = match condition {
        BruteCondition::Forward => None,
        BruteCondition::Backward => {
            let rho = is_ratio(pi, b)?;
            let (kernel, _) = backward_kernel(mdp, b)?;
            Some((rho, kernel))
        }
    };

    let mut best: Option<Partition> = None;
    for labels in partitions(n) {
        let part = Partition::from_block_of(&labels);
        if let Some(ref cur) = best {
            if part.n_blocks() >= cur.n_blocks() {
                continue;
            }
        }
        let ok = match (condition, &backward) {
            (BruteCondition::Forward, _) => {
                check_model_irrelevance(&part, mdp, tol).holds
                    && check_pi_irrelevance(&part, pi, tol).holds
            }
            (BruteCondition::Backward, Some((rho, kernel))) => {
                check_backward_model_with(&part, rho, kernel, tol).holds
            }
            (BruteCondition::Backward, None) => unreachable!(),
        };
        if ok {
            best = Some(part);
        }
    }
    // the identity partition satisfies everything, so a winner always exists
    Ok(best.unwrap_or_else(|| Partition::identity(n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    #[test]
    fn partition_counts_match_bell_numbers() {
        for (n, bell) in [(1usize, 1usize), (2, 2), (3, 5), (4, 15), (5, 52), (6, 203)] {
            assert_eq!(partitions(n).len(), bell, "n = {n}");
        }
    }

    #[test]
    fn enumeration_is_lexicographic_and_canonical() {
        let all = partitions(3);
        assert_eq!(all[0], vec![0, 0, 0]);
        assert_eq!(all[1], vec![0, 0, 1]);
        assert_eq!(all.last().unwrap(), &vec![0, 1, 2]);
        for w in all.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn symmetric_two_state_mdp_collapses_to_one_block() {
        let t = Array3::from_elem((2, 1, 2), 0.5);
        let mdp = MdpModel {
            n_states: 2,
            n_actions: 1,
            gamma: 0.5,
            transition: t,
            reward: array![[1.0, 1.0]],
            reward_noise_std: 0.0,
            initial: array![0.5, 0.5],
        };
        let pol = PolicyTable::uniform(2, 1);
        let f = brute_force_coarsest(&mdp, &pol, &pol, BruteCondition::Forward, 0.0, BRUTE_FORCE_LIMIT).unwrap();
        assert_eq!(f.n_blocks(), 1);
        let bwd = brute_force_coarsest(&mdp, &pol, &pol, BruteCondition::Backward, 0.0, BRUTE_FORCE_LIMIT).unwrap();
        assert_eq!(bwd.n_blocks(), 1);
    }

    #[test]
    fn distinct_rewards_force_the_identity() {
        let t = Array3::from_elem((3, 1, 3), 1.0 / 3.0);
        let mdp = MdpModel {
            n_states: 3,
            n_actions: 1,
            gamma: 0.5,
            transition: t,
            reward: array![[0.0, 1.0, 2.0]],
            reward_noise_std: 0.0,
            initial: array![0.25, 0.5, 0.25],
        };
        let pol = PolicyTable::uniform(3, 1);
        let f = brute_force_coarsest(&mdp, &pol, &pol, BruteCondition::Forward, 1e-9, BRUTE_FORCE_LIMIT).unwrap();
        assert!(f.is_identity());
    }

    #[test]
    fn state_count_above_limit_is_rejected() {
        let t = Array3::from_elem((3, 1, 3), 1.0 / 3.0);
        let mdp = MdpModel {
            n_states: 3,
            n_actions: 1,
            gamma: 0.5,
            transition: t,
            reward: array![[0.0, 0.0, 0.0]],
            reward_noise_std: 0.0,
            initial: array![0.4, 0.3, 0.3],
        };
        let pol = PolicyTable::uniform(3, 1);
        assert!(brute_force_coarsest(&mdp, &pol, &pol, BruteCondition::Forward, 0.0, 2).is_err());
    }
}
