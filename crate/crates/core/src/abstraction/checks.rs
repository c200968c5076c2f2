//! Irrelevance condition checkers.
//!
//! Every check compares block members against the block's lowest-indexed
//! state (transitive equality), reports the worst deviation found, and
//! carries a witness for the maximizer when the condition fails.

use ndarray::{Array2, Array3};

use crate::error::Result;
use crate::mdp::{MdpModel, PolicyTable};
use crate::scalar::Scalar;
use crate::solver::{backward_kernel, is_ratio};

use super::partition::Partition;

/// Which condition a report refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Pi,
    Q,
    Rho,
    W,
    Reward,
    Transition,
    Model,
    BackwardKernel,
    BackwardModel,
}

/// States and action attaining the worst violation. `s1` is the block
/// representative; `target_block` is set for aggregated-transition checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Witness {
    pub s1: usize,
    pub s2: usize,
    pub action: usize,
    pub block: usize,
    pub target_block: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct IrrelevanceReport {
    pub condition: Condition,
    pub tol: f64,
    /// Largest deviation over same-block comparisons; 0 for vacuous checks.
    pub worst: f64,
    pub holds: bool,
    pub witness: Option<Witness>,
}

impl IrrelevanceReport {
    fn vacuous(condition: Condition, tol: f64) -> Self {
        Self { condition, tol, worst: 0.0, holds: true, witness: None }
    }

    fn from_scan(condition: Condition, tol: f64, worst: f64, witness: Option<Witness>) -> Self {
        let holds = worst <= tol;
        Self { condition, tol, worst, holds, witness }
    }

    /// Merges sub-condition reports into one, keeping the worst witness.
    fn merge(condition: Condition, parts: &[&IrrelevanceReport]) -> Self {
        let mut out = IrrelevanceReport::vacuous(condition, parts[0].tol);
        for p in parts {
            if p.worst > out.worst {
                out.worst = p.worst;
                out.witness = p.witness;
            }
            out.holds &= p.holds;
        }
        out
    }
}

/// Generic block-constancy scan of a `[a][s]` table.
fn scan_table<T: Scalar>(part: &Partition, table: &Array2<T>, condition: Condition, tol: f64) -> IrrelevanceReport {
    let (na, _) = table.dim();
    let mut worst = 0.0f64;
    let mut witness = None;
    for (x, members) in part.blocks().iter().enumerate() {
        let rep = members[0];
        for &s in &members[1..] {
            for a in 0..na {
                let diff = (table[[a, s]] - table[[a, rep]]).abs().to_f64().unwrap_or(f64::INFINITY);
                if diff > worst {
                    worst = diff;
                    witness = Some(Witness { s1: rep, s2: s, action: a, block: x, target_block: None });
                }
            }
        }
    }
    IrrelevanceReport::from_scan(condition, tol, worst, witness)
}

/// Same-block states must take every action with equal probability.
pub fn check_pi_irrelevance<T: Scalar>(part: &Partition, pi: &PolicyTable<T>, tol: f64) -> IrrelevanceReport {
    // policy tables are [s][a]; reuse the scan via a transposed view
    let t = pi.probs.t().to_owned();
    scan_table(part, &t, Condition::Pi, tol)
}

/// Same-block states must have equal Q rows.
pub fn check_q_irrelevance<T: Scalar>(part: &Partition, q: &Array2<T>, tol: f64) -> IrrelevanceReport {
    scan_table(part, q, Condition::Q, tol)
}

/// Same-block states must have equal importance-ratio rows.
pub fn check_rho_irrelevance<T: Scalar>(part: &Partition, rho: &Array2<T>, tol: f64) -> IrrelevanceReport {
    scan_table(part, rho, Condition::Rho, tol)
}

/// Same-block states must have equal marginalized-ratio rows.
pub fn check_w_irrelevance<T: Scalar>(part: &Partition, w: &Array2<T>, tol: f64) -> IrrelevanceReport {
    scan_table(part, w, Condition::W, tol)
}

/// Reward half of model-irrelevance.
pub fn check_reward_irrelevance<T: Scalar>(part: &Partition, mdp: &MdpModel<T>, tol: f64) -> IrrelevanceReport {
    scan_table(part, &mdp.reward, Condition::Reward, tol)
}

/// Block-aggregated transition mass `[s][a][x']` for every state.
pub(crate) fn aggregated_transitions<T: Scalar>(part: &Partition, mdp: &MdpModel<T>) -> Array3<T> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut agg = Array3::zeros((ns, na, part.n_blocks()));
    for s in 0..ns {
        for a in 0..na {
            for sp in 0..ns {
                let t = mdp.transition[[s, a, sp]];
                if t != T::zero() {
                    agg[[s, a, part.block(sp)]] += t;
                }
            }
        }
    }
    agg
}

/// Transition half of model-irrelevance: same-block states must put equal
/// mass on every target block, for every action.
pub fn check_transition_irrelevance<T: Scalar>(part: &Partition, mdp: &MdpModel<T>, tol: f64) -> IrrelevanceReport {
    let agg = aggregated_transitions(part, mdp);
    scan_aggregated(part, &agg, mdp.n_actions, Condition::Transition, tol)
}

fn scan_aggregated<T: Scalar>(
    part: &Partition,
    agg: &Array3<T>,
    n_actions: usize,
    condition: Condition,
    tol: f64,
) -> IrrelevanceReport {
    let mut worst = 0.0f64;
    let mut witness = None;
    for (x, members) in part.blocks().iter().enumerate() {
        let rep = members[0];
        for &s in &members[1..] {
            for a in 0..n_actions {
                for xp in 0..part.n_blocks() {
                    let diff = (agg[[s, a, xp]] - agg[[rep, a, xp]]).abs().to_f64().unwrap_or(f64::INFINITY);
                    if diff > worst {
                        worst = diff;
                        witness = Some(Witness { s1: rep, s2: s, action: a, block: x, target_block: Some(xp) });
                    }
                }
            }
        }
    }
    IrrelevanceReport::from_scan(condition, tol, worst, witness)
}

/// Model-irrelevance: reward- and transition-irrelevance combined.
pub fn check_model_irrelevance<T: Scalar>(part: &Partition, mdp: &MdpModel<T>, tol: f64) -> IrrelevanceReport {
    let reward = check_reward_irrelevance(part, mdp, tol);
    let transition = check_transition_irrelevance(part, mdp, tol);
    IrrelevanceReport::merge(Condition::Model, &[&reward, &transition])
}

/// Backward-kernel half of backward-model-irrelevance, for a precomputed
/// kernel `[s'][a][s]`: same-block conditioning states must see equal
/// aggregated backward mass from every source block.
pub fn check_backward_aggregation<T: Scalar>(
    part: &Partition,
    kernel: &Array3<T>,
    tol: f64,
) -> IrrelevanceReport {
    let (ns, na, _) = kernel.dim();
    let mut agg: Array3<T> = Array3::zeros((ns, na, part.n_blocks()));
    for sp in 0..ns {
        for a in 0..na {
            for s in 0..ns {
                let k = kernel[[sp, a, s]];
                if k != T::zero() {
                    agg[[sp, a, part.block(s)]] += k;
                }
            }
        }
    }
    scan_aggregated(part, &agg, na, Condition::BackwardKernel, tol)
}

/// Backward-model-irrelevance with precomputed ratio table and kernel.
pub fn check_backward_model_with<T: Scalar>(
    part: &Partition,
    rho: &Array2<T>,
    kernel: &Array3<T>,
    tol: f64,
) -> IrrelevanceReport {
    let rho_report = check_rho_irrelevance(part, rho, tol);
    let kernel_report = check_backward_aggregation(part, kernel, tol);
    IrrelevanceReport::merge(Condition::BackwardModel, &[&rho_report, &kernel_report])
}

/// Backward-model-irrelevance: importance-ratio constancy plus equality of
/// block-aggregated backward kernels over conditioning states.
pub fn check_backward_model_irrelevance<T: Scalar>(
    part: &Partition,
    mdp: &MdpModel<T>,
    b: &PolicyTable<T>,
    pi: &PolicyTable<T>,
    tol: f64,
) -> Result<IrrelevanceReport> {
    let rho = is_ratio(pi, b)?;
    let (kernel, _) = backward_kernel(mdp, b)?;
    Ok(check_backward_model_with(part, &rho, &kernel, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    fn model() -> MdpModel<f64> {
        // states 0/1 are twins, state 2 differs in reward
        let t = Array3::from_shape_vec(
            (3, 1, 3),
            vec![
                0.25, 0.25, 0.5, //
                0.25, 0.25, 0.5, //
                0.5, 0.0, 0.5,
            ],
        )
        .unwrap();
        MdpModel {
            n_states: 3,
            n_actions: 1,
            gamma: 0.9,
            transition: t,
            reward: array![[1.0, 1.0, -1.0]],
            reward_noise_std: 0.0,
            initial: array![0.4, 0.4, 0.2],
        }
    }

    #[test]
    fn identity_partition_holds_vacuously() {
        let m = model();
        let id = Partition::identity(3);
        let r = check_model_irrelevance(&id, &m, 0.0);
        assert!(r.holds);
        assert_eq!(r.worst, 0.0);
        assert!(r.witness.is_none());
    }

    #[test]
    fn twin_states_are_model_irrelevant() {
        let m = model();
        let p = Partition::from_block_of(&[0, 0, 1]);
        let r = check_model_irrelevance(&p, &m, 1e-12);
        assert!(r.holds, "report: {r:?}");
    }

    #[test]
    fn merging_states_with_different_rewards_is_reported() {
        let m = model();
        let p = Partition::from_block_of(&[0, 1, 0]);
        let r = check_reward_irrelevance(&p, &m, 1e-9);
        assert!(!r.holds);
        assert!((r.worst - 2.0).abs() < 1e-12);
        let w = r.witness.unwrap();
        assert_eq!((w.s1, w.s2, w.action, w.block), (0, 2, 0, 0));
    }

    #[test]
    fn transition_check_carries_target_block() {
        // states 0 and 2 disagree by 0.25 on both target blocks; the scan
        // keeps the first maximizer
        let m = model();
        let p = Partition::from_block_of(&[0, 1, 0]);
        let r = check_transition_irrelevance(&p, &m, 1e-9);
        assert!(!r.holds);
        assert!((r.worst - 0.25).abs() < 1e-12);
        let w = r.witness.unwrap();
        assert_eq!((w.s1, w.s2, w.target_block), (0, 2, Some(0)));
    }

    #[test]
    fn single_block_with_state_dependent_pi_is_violated() {
        let pi = PolicyTable::new(array![[0.9, 0.1], [0.2, 0.8]]);
        let p = Partition::single_block(2);
        let r = check_pi_irrelevance(&p, &pi, 1e-9);
        assert!(!r.holds);
        assert!((r.worst - 0.7).abs() < 1e-12);
        assert_eq!(r.witness.unwrap().s2, 1);
    }

    #[test]
    fn rho_holds_for_every_partition_when_pi_equals_b() {
        let pi = PolicyTable::new(array![[0.3, 0.7], [0.6, 0.4]]);
        let rho = is_ratio(&pi, &pi).unwrap();
        for labels in [[0usize, 0], [0, 1]] {
            let p = Partition::from_block_of(&labels);
            assert!(check_rho_irrelevance(&p, &rho, 0.0).holds);
        }
    }

    #[test]
    fn report_holds_flag_matches_tolerance() {
        let m = model();
        let p = Partition::from_block_of(&[0, 1, 0]);
        let strict = check_reward_irrelevance(&p, &m, 1.0);
        assert!(!strict.holds);
        let loose = check_reward_irrelevance(&p, &m, 2.5);
        assert!(loose.holds);
        assert_eq!(loose.worst, strict.worst);
    }

    #[test]
    fn backward_check_on_identity_holds() {
        let m = model();
        let b = PolicyTable::uniform(3, 1);
        let pi = PolicyTable::uniform(3, 1);
        let r = check_backward_model_irrelevance(&Partition::identity(3), &m, &b, &pi, 1e-12).unwrap();
        assert!(r.holds);
    }
}
