//! Trajectory sampling under a behavior policy, and Monte Carlo value
//! oracles for cross-checking the exact solver.
//!
//! Randomness comes from one ChaCha stream per trajectory, keyed by
//! `(seed, trajectory index)`, so outputs are identical across runs and
//! platforms and independent of any scheduling of the trajectory loop.

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{OpeError, Result};
use crate::mdp::{chain_under_policy, Dataset, MdpModel, PolicyTable, Step, Trajectory};
use crate::solver::stationary_distribution;

/// Where trajectories start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// The model's initial state distribution.
    Rho0,
    /// The stationary distribution of the behavior chain.
    Stationary,
}

/// Inverse-CDF draw from a probability row. Assumes the row is normalized;
/// rounding deficits fall to the last positive entry.
fn draw_categorical(rng: &mut ChaCha8Rng, probs: &Array1<f64>) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last_positive
}

/// Samples `n` trajectories of length `horizon` under `b`: the state enters
/// each record before the action, the reward is the mean reward plus
/// Gaussian noise scaled by the model's noise level, and the successor is
/// drawn last (skipped on the final step, whose successor is never used).
pub fn sample_trajectories(
    mdp: &MdpModel<f64>,
    b: &PolicyTable<f64>,
    n: usize,
    horizon: usize,
    seed: u64,
    init_mode: InitMode,
) -> Result<Dataset<f64>> {
    if n == 0 || horizon == 0 {
        return Err(OpeError::InvalidArgument(format!(
            "need at least one trajectory and one step, got n = {n}, horizon = {horizon}"
        )));
    }
    let init = match init_mode {
        InitMode::Rho0 => mdp.initial.clone(),
        InitMode::Stationary => stationary_distribution(&chain_under_policy(mdp, b))?,
    };
    let sigma = mdp.reward_noise_std;
    let trajectories = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut steps = Vec::with_capacity(horizon);
            let mut state = draw_categorical(&mut rng, &init);
            for t in 0..horizon {
                let action = draw_categorical(&mut rng, &b.probs.row(state).to_owned());
                let mut reward = mdp.reward[[action, state]];
                if sigma > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    reward += sigma * z;
                }
                steps.push(Step { state, action, reward });
                if t + 1 < horizon {
                    let row = mdp
                        .transition
                        .slice(ndarray::s![state, action, ..])
                        .to_owned();
                    state = draw_categorical(&mut rng, &row);
                }
            }
            Trajectory { steps }
        })
        .collect();
    Ok(Dataset::new(trajectories, Some(seed)))
}

/// Discounted return of one trajectory.
pub fn discounted_return(traj: &Trajectory<f64>, gamma: f64) -> f64 {
    traj.steps
        .iter()
        .enumerate()
        .map(|(k, st)| gamma.powi(k as i32) * st.reward)
        .sum()
}

/// Monte Carlo estimate of the truncated value of `pi` from the initial
/// distribution: mean and standard error over `n` rollouts. The truncation
/// bias is bounded by [`crate::solver::sis_truncation_bound`].
pub fn monte_carlo_value(
    mdp: &MdpModel<f64>,
    pi: &PolicyTable<f64>,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let data = sample_trajectories(mdp, pi, n, horizon, seed, InitMode::Rho0)?;
    let returns: Vec<f64> = data
        .trajectories
        .iter()
        .map(|t| discounted_return(t, mdp.gamma))
        .collect();
    let nf = n as f64;
    let mean = returns.iter().sum::<f64>() / nf;
    let var = if n > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (nf - 1.0)
    } else {
        0.0
    };
    Ok((mean, (var / nf).sqrt()))
}
