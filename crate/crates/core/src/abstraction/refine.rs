//! Coarsest-partition search by signature refinement.
//!
//! States start grouped by their pointwise tables (rewards and target
//! policy for the forward direction, importance ratios for the backward
//! direction) and blocks are split whenever members disagree on the
//! block-aggregated kernel. Splitting is monotone, so the loop reaches a
//! fixpoint in at most `n_states` rounds, and the fixpoint is the coarsest
//! partition satisfying the condition at the grid resolution.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::Result;
use crate::mdp::{MdpModel, PolicyTable};
use crate::scalar::Scalar;
use crate::solver::{backward_kernel, is_ratio};

use super::checks::{
    check_backward_model_with, check_pi_irrelevance, check_reward_irrelevance,
    check_transition_irrelevance, IrrelevanceReport,
};
use super::partition::{compose, Partition};
use super::quotient::{quotient_mdp, QuotientModel};

/// Maps a value to a discrete key: grid cell `round(x/tol)` for a positive
/// tolerance, raw bit pattern for `tol <= 0` (exact matching). Two values
/// in the same cell differ by at most `tol`, so blocks built from equal
/// keys pass the pairwise checkers at `tol`.
pub fn quantize(x: f64, tol: f64) -> i64 {
    if tol > 0.0 {
        (x / tol).round() as i64
    } else {
        // normalize -0.0 so it matches +0.0
        let canon = if x == 0.0 { 0.0 } else { x };
        canon.to_bits() as i64
    }
}

/// One splitting round; the final round always confirms the fixpoint.
#[derive(Debug, Clone, Serialize)]
pub struct RoundAudit {
    pub round: usize,
    pub blocks_before: usize,
    pub blocks_after: usize,
}

/// Trace of a refinement run plus a pairwise re-verification of the result.
#[derive(Debug, Clone, Serialize)]
pub struct RefinementAudit {
    pub mode: &'static str,
    pub tol: f64,
    pub initial_blocks: usize,
    pub rounds: Vec<RoundAudit>,
    pub final_blocks: usize,
    pub verified: bool,
    pub verify_worst: f64,
}

impl RefinementAudit {
    fn new(mode: &'static str, tol: f64, initial_blocks: usize, rounds: Vec<RoundAudit>, part: &Partition, reports: &[&IrrelevanceReport]) -> Self {
        Self {
            mode,
            tol,
            initial_blocks,
            rounds,
            final_blocks: part.n_blocks(),
            verified: reports.iter().all(|r| r.holds),
            verify_worst: reports.iter().map(|r| r.worst).fold(0.0, f64::max),
        }
    }
}

fn group_by_signature(sigs: &[Vec<i64>]) -> Partition {
    let mut seen: HashMap<&[i64], usize> = HashMap::new();
    let mut labels = vec![0usize; sigs.len()];
    for (s, sig) in sigs.iter().enumerate() {
        let next = seen.len();
        labels[s] = *seen.entry(sig.as_slice()).or_insert(next);
    }
    Partition::from_block_of(&labels)
}

/// Splits until stable. `round_sigs` returns, per state, the aggregated
/// signature under the current partition; the current block label is
/// prepended so rounds can only split, never merge.
fn refine_loop(
    initial: Partition,
    mut round_sigs: impl FnMut(&Partition) -> Vec<Vec<i64>>,
) -> (Partition, Vec<RoundAudit>) {
    let mut part = initial;
    let mut rounds = Vec::new();
    for round in 1usize.. {
        let before = part.n_blocks();
        let sigs: Vec<Vec<i64>> = round_sigs(&part)
            .into_iter()
            .enumerate()
            .map(|(s, mut tail)| {
                let mut sig = Vec::with_capacity(tail.len() + 1);
                sig.push(part.block(s) as i64);
                sig.append(&mut tail);
                sig
            })
            .collect();
        let next = group_by_signature(&sigs);
        let after = next.n_blocks();
        rounds.push(RoundAudit { round, blocks_before: before, blocks_after: after });
        part = next;
        if after == before {
            break;
        }
    }
    (part, rounds)
}

/// Coarsest partition on which the target policy, mean rewards, and
/// block-aggregated transitions are all constant within blocks.
pub fn refine_forward<T: Scalar>(mdp: &MdpModel<T>, pi: &PolicyTable<T>, tol: f64) -> (Partition, RefinementAudit) {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut sigs = Vec::with_capacity(ns);
    for s in 0..ns {
        let mut sig = Vec::with_capacity(2 * na);
        for a in 0..na {
            sig.push(quantize(mdp.reward[[a, s]].to_f64().unwrap_or(f64::NAN), tol));
        }
        for a in 0..na {
            sig.push(quantize(pi.probs[[s, a]].to_f64().unwrap_or(f64::NAN), tol));
        }
        sigs.push(sig);
    }
    let initial = group_by_signature(&sigs);
    let initial_blocks = initial.n_blocks();

    let (part, rounds) = refine_loop(initial, |part| {
        let nb = part.n_blocks();
        (0..ns)
            .map(|s| {
                let mut sig = Vec::with_capacity(na * nb);
                for a in 0..na {
                    let mut mass = vec![0.0f64; nb];
                    for sp in 0..ns {
                        let t = mdp.transition[[s, a, sp]];
                        if t != T::zero() {
                            mass[part.block(sp)] += t.to_f64().unwrap_or(f64::NAN);
                        }
                    }
                    sig.extend(mass.into_iter().map(|m| quantize(m, tol)));
                }
                sig
            })
            .collect()
    });

    let reports = [
        check_reward_irrelevance(&part, mdp, tol),
        check_transition_irrelevance(&part, mdp, tol),
        check_pi_irrelevance(&part, pi, tol),
    ];
    let audit = RefinementAudit::new("forward", tol, initial_blocks, rounds, &part, &[&reports[0], &reports[1], &reports[2]]);
    (part, audit)
}

pub fn coarsest_forward<T: Scalar>(mdp: &MdpModel<T>, pi: &PolicyTable<T>, tol: f64) -> Partition {
    refine_forward(mdp, pi, tol).0
}

/// Coarsest partition on which the importance ratios and the
/// source-block-aggregated backward kernel are constant within blocks.
///
/// Needs full coverage and a unichain behavior process with positive
/// stationary mass everywhere, like the backward kernel itself.
pub fn refine_backward<T: Scalar>(
    mdp: &MdpModel<T>,
    pi: &PolicyTable<T>,
    b: &PolicyTable<T>,
    tol: f64,
) -> Result<(Partition, RefinementAudit)> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let rho = is_ratio(pi, b)?;
    let (kernel, _) = backward_kernel(mdp, b)?;

    let mut sigs = Vec::with_capacity(ns);
    for s in 0..ns {
        let sig = (0..na).map(|a| quantize(rho[[a, s]].to_f64().unwrap_or(f64::NAN), tol)).collect();
        sigs.push(sig);
    }
    let initial = group_by_signature(&sigs);
    let initial_blocks = initial.n_blocks();

    let (part, rounds) = refine_loop(initial, |part| {
        let nb = part.n_blocks();
        (0..ns)
            .map(|sp| {
                let mut sig = Vec::with_capacity(na * nb);
                for a in 0..na {
                    let mut mass = vec![0.0f64; nb];
                    for s in 0..ns {
                        let k = kernel[[sp, a, s]];
                        if k != T::zero() {
                            mass[part.block(s)] += k.to_f64().unwrap_or(f64::NAN);
                        }
                    }
                    sig.extend(mass.into_iter().map(|m| quantize(m, tol)));
                }
                sig
            })
            .collect()
    });

    let report = check_backward_model_with(&part, &rho, &kernel, tol);
    let audit = RefinementAudit::new("backward", tol, initial_blocks, rounds, &part, &[&report]);
    Ok((part, audit))
}

pub fn coarsest_backward<T: Scalar>(
    mdp: &MdpModel<T>,
    pi: &PolicyTable<T>,
    b: &PolicyTable<T>,
    tol: f64,
) -> Result<Partition> {
    Ok(refine_backward(mdp, pi, b, tol)?.0)
}

/// Output of the forward-then-backward reduction.
#[derive(Debug, Clone)]
pub struct TwoStepResult<T: Scalar> {
    /// Forward partition over ground states.
    pub forward: Partition,
    /// Quotient of the ground model by `forward`.
    pub intermediate: QuotientModel<T>,
    /// Backward partition over the intermediate blocks.
    pub backward: Partition,
    /// Both steps combined, over ground states.
    pub composed: Partition,
    /// Quotient of the intermediate model by `backward`.
    pub quotient: QuotientModel<T>,
    pub forward_audit: RefinementAudit,
    pub backward_audit: RefinementAudit,
}

/// Forward reduction, quotient, then backward reduction of the quotient.
pub fn two_step<T: Scalar>(
    mdp: &MdpModel<T>,
    pi: &PolicyTable<T>,
    b: &PolicyTable<T>,
    tol: f64,
) -> Result<TwoStepResult<T>> {
    let (forward, forward_audit) = refine_forward(mdp, pi, tol);
    let intermediate = quotient_mdp(mdp, &forward, pi, b)?;
    let (backward, backward_audit) =
        refine_backward(&intermediate.mdp, &intermediate.pi, &intermediate.b, tol)?;
    let composed = compose(&backward, &forward)?;
    let quotient = quotient_mdp(&intermediate.mdp, &backward, &intermediate.pi, &intermediate.b)?;
    Ok(TwoStepResult { forward, intermediate, backward, composed, quotient, forward_audit, backward_audit })
}

/// Experimental: reapplies the two-step reduction to its own quotient until
/// the block count stops shrinking (at most `max_passes` times). Returns
/// the accumulated ground partition and the block count after each pass.
pub fn iterate_two_step<T: Scalar>(
    mdp: &MdpModel<T>,
    pi: &PolicyTable<T>,
    b: &PolicyTable<T>,
    tol: f64,
    max_passes: usize,
) -> Result<(Partition, Vec<usize>)> {
    let mut total = Partition::identity(mdp.n_states);
    let mut counts = Vec::new();
    let mut current = two_step(mdp, pi, b, tol)?;
    loop {
        total = compose(&current.composed, &total)?;
        counts.push(total.n_blocks());
        let reduced = current.composed.n_blocks() < current.composed.n_states();
        if !reduced || counts.len() >= max_passes {
            break;
        }
        let q = current.quotient;
        current = two_step(&q.mdp, &q.pi, &q.b, tol)?;
    }
    Ok((total, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    #[test]
    fn quantize_grid_and_exact_modes() {
        assert_eq!(quantize(0.1 + 1e-9, 1e-6), quantize(0.1, 1e-6));
        assert_ne!(quantize(0.1 + 1e-3, 1e-6), quantize(0.1, 1e-6));
        assert_ne!(quantize(0.1 + 1e-12, 0.0), quantize(0.1, 0.0));
        assert_eq!(quantize(-0.0, 0.0), quantize(0.0, 0.0));
    }

    fn twin_model() -> (MdpModel<f64>, PolicyTable<f64>) {
        let t = Array3::from_shape_vec(
            (3, 1, 3),
            vec![
                0.25, 0.25, 0.5, //
                0.25, 0.25, 0.5, //
                0.5, 0.0, 0.5,
            ],
        )
        .unwrap();
        let mdp = MdpModel {
            n_states: 3,
            n_actions: 1,
            gamma: 0.9,
            transition: t,
            reward: array![[1.0, 1.0, -1.0]],
            reward_noise_std: 0.0,
            initial: array![0.4, 0.4, 0.2],
        };
        (mdp, PolicyTable::uniform(3, 1))
    }

    #[test]
    fn forward_merges_twins_and_keeps_the_odd_state_out() {
        let (mdp, pi) = twin_model();
        let (part, audit) = refine_forward(&mdp, &pi, 0.0);
        assert_eq!(part.block_of(), &[0, 0, 1]);
        assert!(audit.verified);
        assert_eq!(audit.verify_worst, 0.0);
        assert_eq!(audit.initial_blocks, 2);
        assert_eq!(audit.final_blocks, 2);
    }

    #[test]
    fn forward_split_propagates_through_transitions() {
        // states 0 and 1 share rewards but reach reward-distinct states
        let t = Array3::from_shape_vec(
            (4, 1, 4),
            vec![
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            ],
        )
        .unwrap();
        let mdp = MdpModel {
            n_states: 4,
            n_actions: 1,
            gamma: 0.5,
            transition: t,
            reward: array![[0.0, 0.0, 1.0, 2.0]],
            reward_noise_std: 0.0,
            initial: array![0.25, 0.25, 0.25, 0.25],
        };
        let pi = PolicyTable::uniform(4, 1);
        let (part, audit) = refine_forward(&mdp, &pi, 0.0);
        assert!(part.is_identity());
        assert_eq!(audit.initial_blocks, 3);
        assert_eq!(audit.rounds.len(), 2);
        assert_eq!(audit.rounds[0].blocks_after, 4);
        assert!(audit.verified);
    }

    #[test]
    fn backward_initial_split_comes_from_ratios() {
        // pi differs from b in both states, with distinct ratio rows
        let t = Array3::from_elem((2, 2, 2), 0.5);
        let mdp = MdpModel {
            n_states: 2,
            n_actions: 2,
            gamma: 0.5,
            transition: t,
            reward: array![[1.0, 1.0], [1.0, 1.0]],
            reward_noise_std: 0.0,
            initial: array![0.5, 0.5],
        };
        let pi = PolicyTable::new(array![[1.0, 0.0], [0.0, 1.0]]);
        let b = PolicyTable::uniform(2, 2);
        let (part, audit) = refine_backward(&mdp, &pi, &b, 0.0).unwrap();
        assert!(part.is_identity());
        assert_eq!(audit.initial_blocks, 2);
        assert!(audit.verified);
    }

    #[test]
    fn backward_splits_on_action_posterior() {
        // ratios are uniform, but P(A | S') distinguishes the two states
        let t = Array3::from_shape_vec(
            (2, 2, 2),
            vec![
                1.0, 0.0, /* s0 a0 */
                0.0, 1.0, /* s0 a1 */
                0.5, 0.5, /* s1 a0 */
                0.5, 0.5, /* s1 a1 */
            ],
        )
        .unwrap();
        let mdp = MdpModel {
            n_states: 2,
            n_actions: 2,
            gamma: 0.5,
            transition: t,
            reward: array![[0.0, 0.0], [0.0, 0.0]],
            reward_noise_std: 0.0,
            initial: array![0.5, 0.5],
        };
        let pi = PolicyTable::uniform(2, 2);
        let b = PolicyTable::uniform(2, 2);
        let (part, audit) = refine_backward(&mdp, &pi, &b, 0.0).unwrap();
        assert_eq!(audit.initial_blocks, 1);
        assert!(part.is_identity());
        assert_eq!(audit.rounds[0].blocks_after, 2);
        assert!(audit.verified);
    }

    #[test]
    fn two_step_collapses_twin_model_fully_under_equal_policies() {
        // with pi = b the ratio table is constant, so the backward pass
        // merges whatever the forward pass kept apart
        let (mdp, pi) = twin_model();
        let ts = two_step(&mdp, &pi, &pi, 0.0).unwrap();
        assert_eq!(ts.forward.n_blocks(), 2);
        assert_eq!(ts.intermediate.mdp.n_states, 2);
        assert_eq!(ts.backward.n_blocks(), 1);
        assert_eq!(ts.composed.n_blocks(), 1);
        assert_eq!(ts.composed.n_states(), 3);
        assert_eq!(ts.quotient.mdp.n_states, 1);
        assert!(ts.forward_audit.verified && ts.backward_audit.verified);
    }

    #[test]
    fn iterate_two_step_stops_at_a_fixpoint() {
        let (mdp, pi) = twin_model();
        let (total, counts) = iterate_two_step(&mdp, &pi, &pi, 0.0, 10).unwrap();
        assert_eq!(total.n_blocks(), 1);
        assert_eq!(total.n_states(), 3);
        assert_eq!(*counts.last().unwrap(), 1);
        assert!(counts.len() <= 2);
    }
}
