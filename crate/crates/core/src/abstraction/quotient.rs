//! Quotient construction: collapse a partitioned MDP into a block-level MDP
//! whose dynamics, rewards, and policies are stationary-weighted averages of
//! their ground counterparts.

use ndarray::{Array1, Array2, Array3};

use crate::error::{OpeError, Result};
use crate::mdp::{chain_under_policy, Dataset, MdpModel, PolicyTable, Step, Trajectory};
use crate::scalar::{fl, Scalar};
use crate::solver::stationary_distribution;

use super::partition::Partition;

/// Block-level model induced by a partition. `weights[x][s]` is the
/// behavior-stationary mass of ground state `s` conditional on its block
/// `x`; it is zero off-block and each row sums to one.
#[derive(Debug, Clone)]
pub struct QuotientModel<T: Scalar> {
    pub mdp: MdpModel<T>,
    pub pi: PolicyTable<T>,
    pub b: PolicyTable<T>,
    pub weights: Array2<T>,
    pub part: Partition,
}

impl<T: Scalar> QuotientModel<T> {
    /// Lifts a block-level `[a][x]` table back to ground states.
    pub fn lift_table(&self, abs: &Array2<T>) -> Array2<T> {
        let na = abs.nrows();
        let ns = self.part.n_states();
        let mut out = Array2::zeros((na, ns));
        for a in 0..na {
            for s in 0..ns {
                out[[a, s]] = abs[[a, self.part.block(s)]];
            }
        }
        out
    }
}

/// Builds the quotient of `mdp` under `part`, averaging within blocks by
/// the stationary distribution of the behavior chain.
///
/// Fails if a block is empty or carries no stationary mass, since the
/// conditional weights are then undefined.
pub fn quotient_mdp<T: Scalar>(
    mdp: &MdpModel<T>,
    part: &Partition,
    pi: &PolicyTable<T>,
    b: &PolicyTable<T>,
) -> Result<QuotientModel<T>> {
    if part.n_states() != mdp.n_states {
        return Err(OpeError::InvalidArgument(format!(
            "partition covers {} states but the model has {}",
            part.n_states(),
            mdp.n_states
        )));
    }
    let (ns, na, nb) = (mdp.n_states, mdp.n_actions, part.n_blocks());
    let p_inf = stationary_distribution(&chain_under_policy(mdp, b))?;
    let blocks = part.blocks();

    let mut weights = Array2::zeros((nb, ns));
    for (x, members) in blocks.iter().enumerate() {
        if members.is_empty() {
            return Err(OpeError::EmptyBlock { block: x });
        }
        let mass: T = members.iter().map(|&s| p_inf[s]).sum();
        if mass <= fl(1e-12) {
            return Err(OpeError::ZeroMassBlock { block: x });
        }
        for &s in members {
            weights[[x, s]] = p_inf[s] / mass;
        }
    }

    let mut transition = Array3::zeros((nb, na, nb));
    let mut reward = Array2::zeros((na, nb));
    let mut pi_probs = Array2::zeros((nb, na));
    let mut b_probs = Array2::zeros((nb, na));
    let mut initial = Array1::zeros(nb);
    for (x, members) in blocks.iter().enumerate() {
        for &s in members {
            let wgt = weights[[x, s]];
            initial[x] += mdp.initial[s];
            for a in 0..na {
                reward[[a, x]] += wgt * mdp.reward[[a, s]];
                pi_probs[[x, a]] += wgt * pi.probs[[s, a]];
                b_probs[[x, a]] += wgt * b.probs[[s, a]];
                for sp in 0..ns {
                    let t = mdp.transition[[s, a, sp]];
                    if t != T::zero() {
                        transition[[x, a, part.block(sp)]] += wgt * t;
                    }
                }
            }
        }
    }

    Ok(QuotientModel {
        mdp: MdpModel {
            n_states: nb,
            n_actions: na,
            gamma: mdp.gamma,
            transition,
            reward,
            reward_noise_std: mdp.reward_noise_std,
            initial,
        },
        pi: PolicyTable::new(pi_probs),
        b: PolicyTable::new(b_probs),
        weights,
        part: part.clone(),
    })
}

/// Rewrites every visited state of a dataset to its block label.
pub fn map_dataset<T: Scalar>(data: &Dataset<T>, part: &Partition) -> Result<Dataset<T>> {
    let n = part.n_states();
    let trajectories = data
        .trajectories
        .iter()
        .map(|traj| {
            let steps = traj
                .steps
                .iter()
                .map(|step| {
                    if step.state >= n {
                        return Err(OpeError::InvalidArgument(format!(
                            "dataset visits state {} outside the {n}-state partition",
                            step.state
                        )));
                    }
                    Ok(Step { state: part.block(step.state), ..*step })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Trajectory { steps })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { trajectories, horizon: data.horizon, seed: data.seed })
}
