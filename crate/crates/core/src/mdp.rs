//! Finite MDP model, policies, trajectories, and validation.
//!
//! Index conventions used throughout the crate:
//! - `transition[s][a][s']` is the probability of moving to `s'` after
//!   taking action `a` in state `s`;
//! - `reward[a][s]` is the mean reward for action `a` in state `s`;
//! - policy tables are `probs[s][a]`;
//! - time indices in trajectories are 1-based.

use ndarray::{Array1, Array2, Array3};

use crate::error::{OpeError, Result};
use crate::scalar::{fl, prob_tol, Scalar};

/// Finite MDP `(S, A, T, R, rho0, gamma)` with tabular entries.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel<T: Scalar> {
    pub n_states: usize,
    pub n_actions: usize,
    /// Discount factor, strictly inside (0, 1).
    pub gamma: T,
    /// Transition probabilities, `[s][a][s']`.
    pub transition: Array3<T>,
    /// Mean rewards, `[a][s]`.
    pub reward: Array2<T>,
    /// Std deviation of additive Gaussian reward noise used in simulation.
    pub reward_noise_std: T,
    /// Initial state distribution.
    pub initial: Array1<T>,
}

/// Stochastic policy table, `probs[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable<T: Scalar> {
    pub probs: Array2<T>,
}

impl<T: Scalar> PolicyTable<T> {
    pub fn new(probs: Array2<T>) -> Self {
        Self { probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Uniform policy over `n_actions` in every state.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = T::one() / fl(n_actions as f64);
        Self { probs: Array2::from_elem((n_states, n_actions), p) }
    }
}

/// One observed step; `t` is implicit in the position within a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step<T> {
    pub state: usize,
    pub action: usize,
    pub reward: T,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory<T> {
    pub steps: Vec<Step<T>>,
}

impl<T> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Offline dataset: trajectories collected under a behavior policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub trajectories: Vec<Trajectory<T>>,
    /// Longest trajectory length.
    pub horizon: usize,
    /// Generator seed when produced by the simulator; `None` for loaded data.
    pub seed: Option<u64>,
}

impl<T> Dataset<T> {
    pub fn new(trajectories: Vec<Trajectory<T>>, seed: Option<u64>) -> Self {
        let horizon = trajectories.iter().map(|t| t.len()).max().unwrap_or(0);
        Self { trajectories, horizon, seed }
    }

    pub fn n_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// Largest state index appearing in the data, or `None` when empty.
    pub fn max_state(&self) -> Option<usize> {
        self.trajectories
            .iter()
            .flat_map(|t| t.steps.iter().map(|st| st.state))
            .max()
    }
}

/// Outcome of structural validation: empty means valid.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(OpeError::Validation(self.violations.join("\n")))
        }
    }
}

fn check_distribution<T: Scalar>(row: &[T], tol: T, label: &str, out: &mut Vec<String>) {
    let mut sum = T::zero();
    for (i, &p) in row.iter().enumerate() {
        if !p.is_finite() {
            out.push(format!("{label}: entry {i} is not finite"));
            return;
        }
        if p < -tol {
            out.push(format!("{label}: entry {i} is negative ({p})"));
        }
        sum += p;
    }
    let deficit = (sum - T::one()).abs();
    if deficit > tol {
        let d = deficit.to_f64().unwrap_or(f64::NAN);
        out.push(format!("{label}: probabilities sum to {sum}, deficit {d:e}"));
    }
}

/// Checks every structural invariant of the model; all violations are
/// listed, none is fatal on its own.
pub fn validate_mdp<T: Scalar>(mdp: &MdpModel<T>) -> ValidationReport {
    let mut v = Vec::new();
    let tol = prob_tol::<T>();
    let (s, a) = (mdp.n_states, mdp.n_actions);

    if s == 0 {
        v.push("n_states must be at least 1".into());
    }
    if a == 0 {
        v.push("n_actions must be at least 1".into());
    }
    if !(mdp.gamma > T::zero() && mdp.gamma < T::one()) {
        v.push(format!("gamma must lie strictly inside (0, 1), got {}", mdp.gamma));
    }
    if mdp.transition.dim() != (s, a, s) {
        v.push(format!(
            "transition shape {:?} does not match (n_states, n_actions, n_states) = ({s}, {a}, {s})",
            mdp.transition.dim()
        ));
    }
    if mdp.reward.dim() != (a, s) {
        v.push(format!("reward shape {:?} does not match (n_actions, n_states) = ({a}, {s})", mdp.reward.dim()));
    }
    if mdp.initial.len() != s {
        v.push(format!("initial length {} does not match n_states {s}", mdp.initial.len()));
    }
    if !(mdp.reward_noise_std >= T::zero()) {
        v.push(format!("reward_noise_std must be nonnegative, got {}", mdp.reward_noise_std));
    }
    if !v.is_empty() {
        // shape errors make the per-row checks below meaningless
        return ValidationReport { violations: v };
    }

    for st in 0..s {
        for ac in 0..a {
            let row: Vec<T> = (0..s).map(|sp| mdp.transition[[st, ac, sp]]).collect();
            check_distribution(&row, tol, &format!("transition[s={st}][a={ac}]"), &mut v);
        }
    }
    for ac in 0..a {
        for st in 0..s {
            if !mdp.reward[[ac, st]].is_finite() {
                v.push(format!("reward[a={ac}][s={st}] is not finite"));
            }
        }
    }
    let init: Vec<T> = mdp.initial.iter().cloned().collect();
    check_distribution(&init, tol, "initial", &mut v);

    ValidationReport { violations: v }
}

/// Checks that a policy table is row-stochastic and matches the state and
/// action counts.
pub fn validate_policy<T: Scalar>(policy: &PolicyTable<T>, n_states: usize, n_actions: usize) -> ValidationReport {
    let mut v = Vec::new();
    let tol = prob_tol::<T>();
    if policy.probs.dim() != (n_states, n_actions) {
        v.push(format!(
            "policy shape {:?} does not match (n_states, n_actions) = ({n_states}, {n_actions})",
            policy.probs.dim()
        ));
        return ValidationReport { violations: v };
    }
    for s in 0..n_states {
        let row: Vec<T> = (0..n_actions).map(|a| policy.probs[[s, a]]).collect();
        check_distribution(&row, tol, &format!("policy[s={s}]"), &mut v);
    }
    ValidationReport { violations: v }
}

/// `(1 - eps) * pi + eps * uniform`, the epsilon-greedy relaxation of `pi`.
pub fn epsilon_greedy<T: Scalar>(pi: &PolicyTable<T>, eps: T) -> Result<PolicyTable<T>> {
    if !(eps >= T::zero() && eps <= T::one()) {
        return Err(OpeError::InvalidArgument(format!("epsilon must lie in [0, 1], got {eps}")));
    }
    let n_actions = pi.n_actions();
    let u = eps / fl(n_actions as f64);
    let probs = pi.probs.mapv(|p| (T::one() - eps) * p + u);
    Ok(PolicyTable { probs })
}

/// State-to-state chain `P[s][s'] = sum_a policy(a|s) T(s'|a,s)` induced by
/// running `policy` in `mdp`.
pub fn chain_under_policy<T: Scalar>(mdp: &MdpModel<T>, policy: &PolicyTable<T>) -> Array2<T> {
    let n = mdp.n_states;
    let mut chain = Array2::zeros((n, n));
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let p = policy.probs[[s, a]];
            if p == T::zero() {
                continue;
            }
            for sp in 0..n {
                chain[[s, sp]] += p * mdp.transition[[s, a, sp]];
            }
        }
    }
    chain
}
