//! Sample-based value estimators, each runnable on the ground state space
//! (identity partition) or through any coarser partition.
//!
//! All estimators are pure functions of `(dataset, target policy, partition,
//! gamma)`: behavior quantities are estimated from the data, never read from
//! the generating model.

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::abstraction::Partition;
use crate::error::{OpeError, Result};
use crate::mdp::{chain_under_policy, Dataset, MdpModel, PolicyTable};
use crate::scalar::{fl, Scalar};
use crate::solver::{discounted_visitation, mis_ratio, stationary_distribution};

/// Add-lambda count smoothing used when none is specified.
pub const DEFAULT_SMOOTHING: f64 = 0.5;
/// Iteration cap for fitted-Q convergence.
pub const FQE_MAX_ITERS: usize = 100_000;
/// Sup-norm convergence threshold for fitted-Q iteration.
pub const FQE_TOL: f64 = 1e-10;

/// Point estimate plus method-specific diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateResult {
    pub method: &'static str,
    /// Human-readable partition descriptor.
    pub abstraction: String,
    pub estimate: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    /// `(sum w)^2 / sum w^2` of the importance weights, for IS methods.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective_sample_size: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fqe_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fqe_residual: Option<f64>,
    /// Abstract state-action pairs with no observed transition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unvisited_pairs: Option<usize>,
    /// Blocks never visited at all.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unvisited_blocks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_fit_folds: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn describe(part: &Partition) -> String {
    if part.is_identity() {
        format!("ground({})", part.n_states())
    } else {
        format!("{}->{}", part.n_states(), part.n_blocks())
    }
}

/// Rejects datasets the estimators cannot index: empty data, empty
/// trajectories, or states/actions outside the partition and policy.
fn check_data<T: Scalar>(data: &Dataset<T>, pi: &PolicyTable<T>, part: &Partition) -> Result<()> {
    if data.n_trajectories() == 0 || data.n_steps() == 0 {
        return Err(OpeError::EmptyDataset);
    }
    if part.n_states() != pi.n_states() {
        return Err(OpeError::InvalidArgument(format!(
            "partition covers {} states but the policy has {}",
            part.n_states(),
            pi.n_states()
        )));
    }
    for (i, traj) in data.trajectories.iter().enumerate() {
        if traj.is_empty() {
            return Err(OpeError::InvalidArgument(format!("trajectory {i} is empty")));
        }
        for st in &traj.steps {
            if st.state >= part.n_states() || st.action >= pi.n_actions() {
                return Err(OpeError::InvalidArgument(format!(
                    "step ({}, {}) outside the {}x{} state-action space",
                    st.state,
                    st.action,
                    part.n_states(),
                    pi.n_actions()
                )));
            }
        }
    }
    Ok(())
}

fn ess<T: Scalar>(weights: impl Iterator<Item = T>) -> f64 {
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for w in weights {
        let w = w.to_f64().unwrap_or(f64::NAN);
        s1 += w;
        s2 += w * w;
    }
    if s2 > 0.0 {
        s1 * s1 / s2
    } else {
        0.0
    }
}

/// Behavior policy over blocks: add-lambda smoothed action frequencies.
/// Blocks never visited get a uniform row and are reported back.
pub fn estimate_behavior<T: Scalar>(
    data: &Dataset<T>,
    part: &Partition,
    n_actions: usize,
    smoothing: f64,
) -> Result<(PolicyTable<T>, Vec<usize>)> {
    if data.n_steps() == 0 {
        return Err(OpeError::EmptyDataset);
    }
    let nb = part.n_blocks();
    let mut counts = vec![0usize; nb * n_actions];
    for traj in &data.trajectories {
        for st in &traj.steps {
            counts[part.block(st.state) * n_actions + st.action] += 1;
        }
    }
    let mut probs = Array2::zeros((nb, n_actions));
    let mut unvisited = Vec::new();
    for x in 0..nb {
        let row = &counts[x * n_actions..(x + 1) * n_actions];
        let total: usize = row.iter().sum();
        if total == 0 {
            unvisited.push(x);
            let u = T::one() / fl(n_actions as f64);
            for a in 0..n_actions {
                probs[[x, a]] = u;
            }
            continue;
        }
        let den = fl::<T>(total as f64) + fl::<T>(smoothing) * fl(n_actions as f64);
        for a in 0..n_actions {
            probs[[x, a]] = (fl::<T>(row[a] as f64) + fl(smoothing)) / den;
        }
    }
    Ok((PolicyTable::new(probs), unvisited))
}

/// Per-time-index behavior estimates, one table per `t`, for diagnosing
/// non-stationarity. The pooled estimate is the default everywhere else.
pub fn estimate_behavior_per_t<T: Scalar>(
    data: &Dataset<T>,
    part: &Partition,
    n_actions: usize,
    smoothing: f64,
) -> Result<Vec<(PolicyTable<T>, Vec<usize>)>> {
    if data.n_steps() == 0 {
        return Err(OpeError::EmptyDataset);
    }
    (0..data.horizon)
        .map(|t| {
            let slice = Dataset::new(
                data.trajectories
                    .iter()
                    .filter_map(|traj| traj.steps.get(t))
                    .map(|st| crate::mdp::Trajectory { steps: vec![*st] })
                    .collect(),
                None,
            );
            estimate_behavior(&slice, part, n_actions, smoothing)
        })
        .collect()
}

/// Mean over trajectories of `sum_a pi(a | s_1) q(a, block(s_1))`: the
/// plug-in initial-state value of a block-level Q table.
fn initial_plugin<T: Scalar>(
    data: &Dataset<T>,
    pi: &PolicyTable<T>,
    part: &Partition,
    q: &Array2<T>,
) -> T {
    let mut acc = T::zero();
    for traj in &data.trajectories {
        let s1 = traj.steps[0].state;
        let x1 = part.block(s1);
        for a in 0..pi.n_actions() {
            acc += pi.probs[[s1, a]] * q[[a, x1]];
        }
    }
    acc / fl(data.n_trajectories() as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct FqeInfo {
    pub iterations: usize,
    pub residual: f64,
    pub unvisited_pairs: usize,
}

/// Fitted-Q iteration over blocks, returning the Q table `[a][x]`.
///
/// Transitions are the steps with an observed successor (the final step of
/// each trajectory only contributes as a successor). Targets weight the
/// next action by the ground policy at the observed next state. Cells with
/// no transitions keep the zero initial iterate and are counted in the
/// info; everything is reduced to per-cell sufficient statistics first, so
/// iteration cost is independent of the dataset size.
pub fn fqe_table<T: Scalar>(
    data: &Dataset<T>,
    pi: &PolicyTable<T>,
    part: &Partition,
    gamma: T,
    max_iters: usize,
    tol: f64,
) -> Result<(Array2<T>, FqeInfo)> {
    check_data(data, pi, part)?;
    let (nb, na) = (part.n_blocks(), pi.n_actions());
    let ncells = nb * na;
    let cell = |a: usize, x: usize| a * nb + x;

    let mut counts = vec![0usize; ncells];
    let mut rbar: Array1<T> = Array1::zeros(ncells);
    let mut weights: Array2<T> = Array2::zeros((ncells, ncells));
    for traj in &data.trajectories {
        for pair in traj.steps.windows(2) {
            let (st, next) = (&pair[0], &pair[1]);
            let c = cell(st.action, part.block(st.state));
            counts[c] += 1;
            rbar[c] += st.reward;
            let xp = part.block(next.state);
            for ap in 0..na {
                weights[[c, cell(ap, xp)]] += pi.probs[[next.state, ap]];
            }
        }
    }
    let mut unvisited_pairs = 0;
    for c in 0..ncells {
        if counts[c] == 0 {
            unvisited_pairs += 1;
            continue;
        }
        let inv = T::one() / fl(counts[c] as f64);
        rbar[c] *= inv;
        weights.row_mut(c).mapv_inplace(|v| v * inv);
    }

    // visited rows of `weights` are stochastic, so this contracts at gamma
    let mut q: Array1<T> = Array1::zeros(ncells);
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let next = &rbar + &weights.dot(&q).mapv(|v| v * gamma);
        residual = q
            .iter()
            .zip(next.iter())
            .map(|(&a, &b)| (a - b).abs().to_f64().unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max);
        q = next;
        if residual <= tol {
            let table = Array2::from_shape_fn((na, nb), |(a, x)| q[cell(a, x)]);
            return Ok((table, FqeInfo { iterations: it, residual, unvisited_pairs }));
        }
    }
    Err(OpeError::NoConvergence {
        what: "fitted-Q iteration",
        iterations: max_iters,
        residual,
    })
}

/// Fitted-Q evaluation: block-level Q table, then the initial-state plug-in
/// at the empirical initial distribution.
pub fn fqe<T: Scalar>(
    data: &Dataset<T>,
    pi: &PolicyTable<T>,
    part: &Partition,
    gamma: T,
    max_iters: usize,
    tol: f64,
) -> Result<EstimateResult> {
    let (q, info) = fqe_table(data, pi, part, gamma, max_iters, tol)?;
    let estimate = initial_plugin(data, pi, part, &q);
    Ok(EstimateResult {
        method: "fqe",
        abstraction: describe(part),
        estimate: estimate.to_f64().unwrap_or(f64::NAN),
        diagnostics: Diagnostics {
            fqe_iterations: Some(info.iterations),
            fqe_residual: Some(info.residual),
            unvisited_pairs: Some(info.unvisited_pairs),
            ..Diagnostics::default()
        },
    })
}

/// Options for [`sis_with`].
#[derive(Debug, Clone)]
pub struct SisOptions<T: Scalar> {
    pub smoothing: f64,
    /// Known ground behavior policy. When present the ratio denominator is
    /// `b(a|s)` on ground states and the partition plays no role; when
    /// absent the denominator is the block-level estimate.
    pub behavior: Option<PolicyTable<T>>,
}

impl<T: Scalar> Default for SisOptions<T> {
    fn default() -> Self {
        Self { smoothing: DEFAULT_SMOOTHING, behavior: None }
    }
}

/// Cumulative importance sampling with the default estimated behavior.
pub fn sis<T: Scalar>(
    data: &Dataset<T>,
    pi: &PolicyTable<T>,
    part: &Partition,
    gamma: T,
) -> Result<EstimateResult> {
    sis_with(data, pi, part, gamma, &SisOptions::default())
}

/// Cumulative importance sampling: per trajectory, the running product of
/// `pi(a|s) / b_hat(a|block(s))` weights each discounted reward. A zero
/// denominator under a realized action with positive target probability is
/// a hard error; `0/0` contributes a zero ratio.
pub fn sis_with<T: Scalar>(
    data: &Dataset<T>,
    pi: &PolicyTable<T>,
    part: &Partition,
    gamma: T,
    opts: &SisOptions<T>,
) -> Result<EstimateResult> {
    check_data(data, pi, part)?;
    let estimated = match &opts.behavior {
        Some(_) => None,
        None => Some(estimate_behavior(data, part, pi.n_actions(), opts.smoothing)?),
    };

    let mut total = T::zero();
    let mut final_weights = Vec::with_capacity(data.n_trajectories());
    for traj in &data.trajectories {
        let mut cum = T::one();
        let mut discount = T::one();
        let mut contrib = T::zero();
        for st in &traj.steps {
            let num = pi.probs[[st.state, st.action]];
            let den = match (&opts.behavior, &estimated) {
                (Some(b), _) => b.probs[[st.state, st.action]],
                (None, Some((bhat, _))) => bhat.probs[[part.block(st.state), st.action]],
                _ => unreachable!(),
            };
            if den == T::zero() {
                if num > T::zero() {
                    return Err(OpeError::ZeroBehaviorProb {
                        block: part.block(st.state),
                        action: st.action,
                    });
                }
                cum = T::zero();
            } else {
                cum *= num / den;
            }
            contrib += discount * cum * st.reward;
            discount *= gamma;
        }
        total += contrib;
        final_weights.push(cum);
    }
    let estimate = total / fl(data.n_trajectories() as f64);
    Ok(EstimateResult {
        method: "sis",
        abstraction: describe(part),
        estimate: estimate.to_f64().unwrap_or(f64::NAN),
        diagnostics: Diagnostics {
            effective_sample_size: Some(ess(final_weights.into_iter())),
            unvisited_blocks: estimated.as_ref().map(|(_, u)| u.len()),
            ..Diagnostics::default()
        },
    })
}

/// Maximum-likelihood block-level model with add-lambda smoothing on
/// transition rows. Rewards are per-cell means over every observed triplet
/// (zero where never observed); the initial distribution is the empirical
/// first-state distribution. Returns the count of cells with no observed
/// transition.
pub fn empirical_mdp<T: Scalar>(
    data: &Dataset<T>,
    part: &Partition,
    n_actions: usize,
    gamma: T,
    smoothing: f64,
) -> Result<(MdpModel<T>, usize)> {
    if data.n_trajectories() == 0 || data.n_steps() == 0 {
        return Err(OpeError::EmptyDataset);
    }
    let nb = part.n_blocks();
    let mut trans = vec![0usize; nb * n_actions * nb];
    let mut visits = vec![0usize; nb * n_actions];
    let mut reward_sum: Array2<T> = Array2::zeros((n_actions, nb));
    let mut reward_count = vec![0usize; nb * n_actions];
    let mut initial: Array1<T> = Array1::zeros(nb);

    for traj in &data.trajectories {
        if let Some(first) = traj.steps.first() {
            initial[part.block(first.state)] += T::one();
        }
        for st in &traj.steps {
            let (x, a) = (part.block(st.state), st.action);
            reward_sum[[a, x]] += st.reward;
            reward_count[x * n_actions + a] += 1;
        }
        for pair in traj.steps.windows(2) {
            let (x, a, xp) = (part.block(pair[0].state), pair[0].action, part.block(pair[1].state));
            trans[(x * n_actions + a) * nb + xp] += 1;
            visits[x * n_actions + a] += 1;
        }
    }

    let mut transition = ndarray::Array3::zeros((nb, n_actions, nb));
    let mut unvisited = 0;
    for x in 0..nb {
        for a in 0..n_actions {
            let m = visits[x * n_actions + a];
            if m == 0 {
                unvisited += 1;
            }
            if m == 0 && smoothing == 0.0 {
                let u = T::one() / fl(nb as f64);
                for xp in 0..nb {
                    transition[[x, a, xp]] = u;
                }
                continue;
            }
            let den = fl::<T>(m as f64) + fl::<T>(smoothing) * fl(nb as f64);
            for xp in 0..nb {
                let c = trans[(x * n_actions + a) * nb + xp];
                transition[[x, a, xp]] = (fl::<T>(c as f64) + fl(smoothing)) / den;
            }
        }
    }
    let mut reward = Array2::zeros((n_actions, nb));
    for x in 0..nb {
        for a in 0..n_actions {
            let m = reward_count[x * n_actions + a];
            if m > 0 {
                reward[[a, x]] = reward_sum[[a, x]] / fl(m as f64);
            }
        }
    }
    initial.mapv_inplace(|v| v / fl(data.n_trajectories() as f64));
    let mdp = MdpModel {
        n_states: nb,
        n_actions,
        gamma,
        transition,
        reward,
        reward_noise_std: T::zero(),
        initial,
    };
    Ok((mdp, unvisited))
}

#[derive(Debug, Clone, Copy)]
pub struct MisInfo {
    pub unvisited_pairs: usize,
    pub unvisited_blocks: usize,
}

/// Visit-weighted block-level target policy: the empirical analog of the
/// stationary-conditional average of `pi` within each block. Unvisited
/// blocks fall back to the unweighted member average.
fn block_policy<T: Scalar>(
    data: &Dataset<T>,
    pi: &PolicyTable<T>,
    part: &Partition,
) -> PolicyTable<T> {
    let (nb, na) = (part.n_blocks(), pi.n_actions());
    let mut visits = vec![0usize; part.n_states()];
    for traj in &data.trajectories {
        for st in &traj.steps {
            visits[st.state] += 1;
        }
    }
    let mut probs = Array2::zeros((nb, na));
    for (x, members) in part.blocks().iter().enumerate() {
        let total: usize = members.iter().map(|&s| visits[s]).sum();
        if total == 0 {
            let inv = T::one() / fl(members.len() as f64);
            for &s in members {
                for a in 0..na {
                    probs[[x, a]] += pi.probs[[s, a]] * inv;
                }
            }
        } else {
            let inv = T::one() / fl(total as f64);
            for &s in members {
                let wgt = fl::<T>(visits[s] as f64) * inv;
                for a in 0..na {
                    probs[[x, a]] += pi.probs[[s, a]] * wgt;
                }
            }
        }
    }
    PolicyTable::new(probs)
}

/// Marginalized importance weights `[a][x]` from the empirical block-level
/// model: discounted visitation under the block target policy over the
/// empirical stationary distribution times the estimated behavior.
pub fn mis_weights<T: Scalar>(
    data: &Dataset<T>,
    pi: &PolicyTable<T>,
    part: &Partition,
    gamma: T,
    smoothing: f64,
) -> Result<(Array2<T>, MisInfo)> {
    check_data(data, pi, part)?;
    let na = pi.n_actions();
    let (model, unvisited_pairs) = empirical_mdp(data, part, na, gamma, smoothing)?;
    let (bhat, unvisited_blocks) = estimate_behavior(data, part, na, smoothing)?;
    let pihat = block_policy(data, pi, part);
    let p_inf = stationary_distribution(&chain_under_policy(&model, &bhat))?;
    let (_, d_pi) = discounted_visitation(&model, &pihat)?;
    let w = mis_ratio(&d_pi, &p_inf, &bhat)?;
    Ok((w, MisInfo { unvisited_pairs, unvisited_blocks: unvisited_blocks.len() }))
}

/// Marginalized importance sampling with the default smoothing.
pub fn mis<T: Scalar>(
    data: &Dataset<T>,
    pi: &PolicyTable<T>,
    part: &Partition,
    gamma: T,
) -> Result<EstimateResult> {
    mis_with(data, pi, part, gamma, DEFAULT_SMOOTHING)
}

/// Marginalized importance sampling: model-based plug-in weights, then the
/// stationary-average functional over every observed triplet.
pub fn mis_with<T: Scalar>(
    data: &Dataset<T>,
    pi: &PolicyTable<T>,
    part: &Partition,
    gamma: T,
    smoothing: f64,
) -> Result<EstimateResult> {
    let (w, info) = mis_weights(data, pi, part, gamma, smoothing)?;
    let mut acc = T::zero();
    let mut used = Vec::with_capacity(data.n_steps());
    for traj in &data.trajectories {
        for st in &traj.steps {
            let wv = w[[st.action, part.block(st.state)]];
            acc += wv * st.reward;
            used.push(wv);
        }
    }
    let estimate = acc / fl(data.n_steps() as f64) / (T::one() - gamma);
    Ok(EstimateResult {
        method: "mis",
        abstraction: describe(part),
        estimate: estimate.to_f64().unwrap_or(f64::NAN),
        diagnostics: Diagnostics {
            effective_sample_size: Some(ess(used.into_iter())),
            unvisited_pairs: Some(info.unvisited_pairs),
            unvisited_blocks: Some(info.unvisited_blocks),
            ..Diagnostics::default()
        },
    })
}

/// The doubly robust functional evaluated with given block-level nuisance
/// tables: initial plug-in of `q` plus the stationary-average correction
/// over observed transitions (steps with a successor).
fn eval_f4<T: Scalar>(
    data: &Dataset<T>,
    pi: &PolicyTable<T>,
    part: &Partition,
    gamma: T,
    q: &Array2<T>,
    w: &Array2<T>,
) -> T {
    let na = pi.n_actions();
    let init_term = initial_plugin(data, pi, part, q);
    let mut corr = T::zero();
    let mut m = 0usize;
    for traj in &data.trajectories {
        for pair in traj.steps.windows(2) {
            let (st, next) = (&pair[0], &pair[1]);
            let x = part.block(st.state);
            let xp = part.block(next.state);
            let mut future = T::zero();
            for ap in 0..na {
                future += pi.probs[[next.state, ap]] * q[[ap, xp]];
            }
            corr += w[[st.action, x]] * (st.reward + gamma * future - q[[st.action, x]]);
            m += 1;
        }
    }
    if m == 0 {
        return init_term;
    }
    init_term + corr / fl(m as f64) / (T::one() - gamma)
}

/// Doubly robust estimate with externally supplied nuisances (no
/// cross-fitting). `q` and `w` are block-level `[a][x]` tables.
pub fn drl_plugin<T: Scalar>(
    data: &Dataset<T>,
    pi: &PolicyTable<T>,
    part: &Partition,
    gamma: T,
    q: &Array2<T>,
    w: &Array2<T>,
) -> Result<EstimateResult> {
    check_data(data, pi, part)?;
    let want = (pi.n_actions(), part.n_blocks());
    if q.dim() != want || w.dim() != want {
        return Err(OpeError::InvalidArgument(format!(
            "nuisance tables must be {want:?}, got {:?} and {:?}",
            q.dim(),
            w.dim()
        )));
    }
    let estimate = eval_f4(data, pi, part, gamma, q, w);
    Ok(EstimateResult {
        method: "drl",
        abstraction: describe(part),
        estimate: estimate.to_f64().unwrap_or(f64::NAN),
        diagnostics: Diagnostics {
            notes: vec!["externally supplied nuisances, no cross-fitting".into()],
            ..Diagnostics::default()
        },
    })
}

/// Options for [`drl_with`].
#[derive(Debug, Clone, Copy)]
pub struct DrlOptions {
    pub smoothing: f64,
    pub fqe_max_iters: usize,
    pub fqe_tol: f64,
}

impl Default for DrlOptions {
    fn default() -> Self {
        Self { smoothing: DEFAULT_SMOOTHING, fqe_max_iters: FQE_MAX_ITERS, fqe_tol: FQE_TOL }
    }
}

/// Doubly robust estimation with defaults.
pub fn drl<T: Scalar>(
    data: &Dataset<T>,
    pi: &PolicyTable<T>,
    part: &Partition,
    gamma: T,
) -> Result<EstimateResult> {
    drl_with(data, pi, part, gamma, DrlOptions::default())
}

/// Doubly robust estimation: fitted-Q and MIS weights as nuisances,
/// cross-fitted over two folds split by trajectory parity, fold estimates
/// combined in proportion to fold size. With a single trajectory per fold
/// unavailable, falls back to fitting and evaluating on the full data.
pub fn drl_with<T: Scalar>(
    data: &Dataset<T>,
    pi: &PolicyTable<T>,
    part: &Partition,
    gamma: T,
    opts: DrlOptions,
) -> Result<EstimateResult> {
    check_data(data, pi, part)?;
    let fit = |fit_on: &Dataset<T>| -> Result<(Array2<T>, Array2<T>, FqeInfo, MisInfo)> {
        let (q, fqe_info) = fqe_table(fit_on, pi, part, gamma, opts.fqe_max_iters, opts.fqe_tol)?;
        let (w, mis_info) = mis_weights(fit_on, pi, part, gamma, opts.smoothing)?;
        Ok((q, w, fqe_info, mis_info))
    };

    let folds: Vec<Dataset<T>> = (0..2)
        .map(|k| {
            Dataset::new(
                data.trajectories
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % 2 == k)
                    .map(|(_, t)| t.clone())
                    .collect(),
                data.seed,
            )
        })
        .collect();

    if folds.iter().any(|f| f.n_trajectories() == 0) {
        let (q, w, fqe_info, mis_info) = fit(data)?;
        let estimate = eval_f4(data, pi, part, gamma, &q, &w);
        return Ok(EstimateResult {
            method: "drl",
            abstraction: describe(part),
            estimate: estimate.to_f64().unwrap_or(f64::NAN),
            diagnostics: Diagnostics {
                fqe_iterations: Some(fqe_info.iterations),
                fqe_residual: Some(fqe_info.residual),
                unvisited_pairs: Some(fqe_info.unvisited_pairs.max(mis_info.unvisited_pairs)),
                unvisited_blocks: Some(mis_info.unvisited_blocks),
                cross_fit_folds: Some(1),
                notes: vec!["too few trajectories to cross-fit; single fold".into()],
                ..Diagnostics::default()
            },
        });
    }

    let mut estimate = T::zero();
    let mut iterations = 0usize;
    let mut residual = 0.0f64;
    let mut unvisited_pairs = 0usize;
    let mut unvisited_blocks = 0usize;
    for k in 0..2 {
        let (q, w, fqe_info, mis_info) = fit(&folds[1 - k])?;
        let j_k = eval_f4(&folds[k], pi, part, gamma, &q, &w);
        let share = fl::<T>(folds[k].n_trajectories() as f64) / fl(data.n_trajectories() as f64);
        estimate += share * j_k;
        iterations = iterations.max(fqe_info.iterations);
        residual = residual.max(fqe_info.residual);
        unvisited_pairs = unvisited_pairs.max(fqe_info.unvisited_pairs.max(mis_info.unvisited_pairs));
        unvisited_blocks = unvisited_blocks.max(mis_info.unvisited_blocks);
    }
    Ok(EstimateResult {
        method: "drl",
        abstraction: describe(part),
        estimate: estimate.to_f64().unwrap_or(f64::NAN),
        diagnostics: Diagnostics {
            fqe_iterations: Some(iterations),
            fqe_residual: Some(residual),
            unvisited_pairs: Some(unvisited_pairs),
            unvisited_blocks: Some(unvisited_blocks),
            cross_fit_folds: Some(2),
            ..Diagnostics::default()
        },
    })
}
