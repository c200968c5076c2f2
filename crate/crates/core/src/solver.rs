//! Exact evaluation quantities for finite MDPs: Q/V functions, policy
//! values, importance ratios, stationary and discounted occupancy
//! distributions, and the time-reversed (backward) kernel.
//!
//! Linear systems with at most [`DIRECT_SOLVE_LIMIT`] unknowns are solved
//! directly; larger ones fall back to fixed-point iteration. Both paths are
//! cross-checked against each other in tests.

use ndarray::{Array1, Array2, Array3};
use petgraph::graph::DiGraph;

use crate::error::{OpeError, Result};
use crate::linalg::{scaled_eye, solve_dense};
use crate::mdp::{chain_under_policy, MdpModel, PolicyTable};
use crate::scalar::{fl, Scalar};

/// Threshold (in unknowns) between direct linear solves and iteration.
pub const DIRECT_SOLVE_LIMIT: usize = 4096;

fn iteration_tol<T: Scalar>() -> T {
    fl::<T>(1e-13).max(T::epsilon() * fl(50.0))
}

/// Q-function of `pi`, `[a][s]`, via the Bellman evaluation equation
/// `Q(a,s) = R(a,s) + gamma * sum_s' T(s'|a,s) sum_a' pi(a'|s') Q(a',s')`.
///
/// Dispatches on problem size between the direct solve and value iteration.
pub fn q_function<T: Scalar>(mdp: &MdpModel<T>, pi: &PolicyTable<T>) -> Result<Array2<T>> {
    if mdp.n_states * mdp.n_actions <= DIRECT_SOLVE_LIMIT {
        q_function_direct(mdp, pi)
    } else {
        q_function_value_iteration(mdp, pi, iteration_tol(), 5_000_000)
    }
}

/// Direct linear solve of the Bellman evaluation system.
pub fn q_function_direct<T: Scalar>(mdp: &MdpModel<T>, pi: &PolicyTable<T>) -> Result<Array2<T>> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let n = ns * na;
    let idx = |a: usize, s: usize| a * ns + s;

    // A = I - gamma * M with M[(a,s),(a',s')] = T(s'|a,s) pi(a'|s')
    let mut a_mat = scaled_eye(n, T::one());
    for a in 0..na {
        for s in 0..ns {
            let row = idx(a, s);
            for sp in 0..ns {
                let t = mdp.transition[[s, a, sp]];
                if t == T::zero() {
                    continue;
                }
                for ap in 0..na {
                    let coef = mdp.gamma * t * pi.probs[[sp, ap]];
                    a_mat[[row, idx(ap, sp)]] -= coef;
                }
            }
        }
    }
    let mut rhs = Array1::zeros(n);
    for a in 0..na {
        for s in 0..ns {
            rhs[idx(a, s)] = mdp.reward[[a, s]];
        }
    }
    let x = solve_dense(a_mat, rhs, "Bellman evaluation system")?;
    let mut q = Array2::zeros((na, ns));
    for a in 0..na {
        for s in 0..ns {
            q[[a, s]] = x[idx(a, s)];
        }
    }
    Ok(q)
}

/// Value-iteration path for the same fixed point.
pub fn q_function_value_iteration<T: Scalar>(
    mdp: &MdpModel<T>,
    pi: &PolicyTable<T>,
    tol: T,
    max_iters: usize,
) -> Result<Array2<T>> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q: Array2<T> = Array2::zeros((na, ns));
    let mut residual = T::infinity();
    for _ in 0..max_iters {
        let v = v_from_q(&q, pi);
        let mut next = mdp.reward.clone();
        for a in 0..na {
            for s in 0..ns {
                let mut acc = T::zero();
                for sp in 0..ns {
                    acc += mdp.transition[[s, a, sp]] * v[sp];
                }
                next[[a, s]] += mdp.gamma * acc;
            }
        }
        residual = next
            .iter()
            .zip(q.iter())
            .map(|(&x, &y)| (x - y).abs())
            .fold(T::zero(), T::max);
        q = next;
        if residual <= tol {
            return Ok(q);
        }
    }
    Err(OpeError::NoConvergence {
        what: "value iteration",
        iterations: max_iters,
        residual: residual.to_f64().unwrap_or(f64::NAN),
    })
}

/// `V(s) = sum_a pi(a|s) Q(a,s)`.
pub fn v_from_q<T: Scalar>(q: &Array2<T>, pi: &PolicyTable<T>) -> Array1<T> {
    let (na, ns) = q.dim();
    let mut v = Array1::zeros(ns);
    for s in 0..ns {
        let mut acc = T::zero();
        for a in 0..na {
            acc += pi.probs[[s, a]] * q[[a, s]];
        }
        v[s] = acc;
    }
    v
}

/// `J(pi) = sum_s rho0(s) V(s)`, the discounted value of `pi`.
pub fn policy_value<T: Scalar>(mdp: &MdpModel<T>, pi: &PolicyTable<T>) -> Result<T> {
    let q = q_function(mdp, pi)?;
    let v = v_from_q(&q, pi);
    Ok(mdp.initial.iter().zip(v.iter()).map(|(&r, &x)| r * x).sum())
}

/// Per-step importance ratio `rho(a,s) = pi(a|s)/b(a|s)`, `[a][s]`.
///
/// `0/0` is defined as 0; a positive numerator over a zero denominator is a
/// coverage violation and a hard error.
pub fn is_ratio<T: Scalar>(pi: &PolicyTable<T>, b: &PolicyTable<T>) -> Result<Array2<T>> {
    let (ns, na) = pi.probs.dim();
    let mut rho = Array2::zeros((na, ns));
    for s in 0..ns {
        for a in 0..na {
            let p = pi.probs[[s, a]];
            let q = b.probs[[s, a]];
            if p == T::zero() {
                continue;
            }
            if q == T::zero() {
                return Err(OpeError::Coverage { state: s, action: a });
            }
            rho[[a, s]] = p / q;
        }
    }
    Ok(rho)
}

/// Strongly connected components of the chain's support graph that have no
/// outgoing edges, i.e. its recurrent classes. Each class is sorted.
pub fn recurrent_classes<T: Scalar>(chain: &Array2<T>) -> Vec<Vec<usize>> {
    let n = chain.nrows();
    let mut g = DiGraph::<(), ()>::with_capacity(n, n);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for s in 0..n {
        for sp in 0..n {
            if chain[[s, sp]] > T::zero() {
                g.add_edge(nodes[s], nodes[sp], ());
            }
        }
    }
    let sccs = petgraph::algo::tarjan_scc(&g);
    let mut scc_of = vec![0usize; n];
    for (k, scc) in sccs.iter().enumerate() {
        for node in scc {
            scc_of[node.index()] = k;
        }
    }
    let mut out = Vec::new();
    for (k, scc) in sccs.iter().enumerate() {
        let escapes = scc.iter().any(|node| {
            let s = node.index();
            (0..n).any(|sp| chain[[s, sp]] > T::zero() && scc_of[sp] != k)
        });
        if !escapes {
            let mut class: Vec<usize> = scc.iter().map(|node| node.index()).collect();
            class.sort_unstable();
            out.push(class);
        }
    }
    out.sort();
    out
}

/// Stationary distribution of a row-stochastic chain.
///
/// Requires a unique recurrent class; transient states receive zero mass.
/// Solved directly for chains up to [`DIRECT_SOLVE_LIMIT`] states, by lazy
/// power iteration beyond that.
pub fn stationary_distribution<T: Scalar>(chain: &Array2<T>) -> Result<Array1<T>> {
    let n = chain.nrows();
    let classes = recurrent_classes(chain);
    if classes.len() != 1 {
        return Err(OpeError::ReducibleChain { classes });
    }

    let mut p = if n <= DIRECT_SOLVE_LIMIT {
        // (P^T - I) p = 0 with the first equation replaced by sum(p) = 1
        let mut a_mat = scaled_eye(n, -T::one());
        for s in 0..n {
            for sp in 0..n {
                a_mat[[sp, s]] += chain[[s, sp]];
            }
        }
        for k in 0..n {
            a_mat[[0, k]] = T::one();
        }
        let mut rhs = Array1::zeros(n);
        rhs[0] = T::one();
        solve_dense(a_mat, rhs, "stationary distribution system")?
    } else {
        // lazy chain (P + I)/2 shares the stationary distribution and is
        // aperiodic, so power iteration converges
        let mut p: Array1<T> = Array1::from_elem(n, T::one() / fl(n as f64));
        let tol = iteration_tol::<T>();
        let half = fl::<T>(0.5);
        let max_iters = 10_000_000usize;
        for it in 0..max_iters {
            let mut next: Array1<T> = Array1::zeros(n);
            for s in 0..n {
                let ps = p[s];
                if ps == T::zero() {
                    continue;
                }
                next[s] += half * ps;
                for sp in 0..n {
                    next[sp] += half * ps * chain[[s, sp]];
                }
            }
            let total: T = next.iter().cloned().sum();
            next.mapv_inplace(|x| x / total);
            let change: T = p.iter().zip(next.iter()).map(|(&x, &y)| (x - y).abs()).sum();
            p = next;
            if change <= tol {
                break;
            }
            if it + 1 == max_iters {
                return Err(OpeError::NoConvergence {
                    what: "stationary power iteration",
                    iterations: max_iters,
                    residual: change.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        p
    };

    // numerical dust from the solve
    let clamp = fl::<T>(1e-9).max(T::epsilon() * fl(1e4));
    for x in p.iter_mut() {
        if *x < T::zero() {
            if *x < -clamp {
                return Err(OpeError::NoConvergence {
                    what: "stationary distribution nonnegativity",
                    iterations: 0,
                    residual: x.to_f64().unwrap_or(f64::NAN),
                });
            }
            *x = T::zero();
        }
    }
    let total: T = p.iter().cloned().sum();
    p.mapv_inplace(|x| x / total);

    let mut residual = T::zero();
    for sp in 0..n {
        let mut acc = -p[sp];
        for s in 0..n {
            acc += p[s] * chain[[s, sp]];
        }
        residual = residual.max(acc.abs());
    }
    let res_tol = fl::<T>(1e-8).max(T::epsilon() * fl(1e6));
    if residual > res_tol {
        return Err(OpeError::NoConvergence {
            what: "stationary distribution residual",
            iterations: 1,
            residual: residual.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(p)
}

/// Normalized discounted state visitation under `pi`:
/// `d(s) = (1-gamma) rho0(s) + gamma sum_{s~} d(s~) P_pi(s~ -> s)`,
/// together with `d_pi(a,s) = d(s) pi(a|s)` as `[a][s]`.
pub fn discounted_visitation<T: Scalar>(
    mdp: &MdpModel<T>,
    pi: &PolicyTable<T>,
) -> Result<(Array1<T>, Array2<T>)> {
    let n = mdp.n_states;
    let chain = chain_under_policy(mdp, pi);
    let one_minus = T::one() - mdp.gamma;

    let mut d = if n <= DIRECT_SOLVE_LIMIT {
        let mut a_mat = scaled_eye(n, T::one());
        for s in 0..n {
            for sp in 0..n {
                a_mat[[sp, s]] -= mdp.gamma * chain[[s, sp]];
            }
        }
        let rhs = mdp.initial.mapv(|x| x * one_minus);
        solve_dense(a_mat, rhs, "discounted visitation system")?
    } else {
        // Richardson iteration; contraction factor gamma
        let mut d: Array1<T> = mdp.initial.mapv(|x| x * one_minus);
        let tol = iteration_tol::<T>();
        let max_iters = 5_000_000usize;
        for it in 0..max_iters {
            let mut next = mdp.initial.mapv(|x| x * one_minus);
            for s in 0..n {
                let ds = d[s];
                if ds == T::zero() {
                    continue;
                }
                for sp in 0..n {
                    next[sp] += mdp.gamma * ds * chain[[s, sp]];
                }
            }
            let change = d.iter().zip(next.iter()).map(|(&x, &y)| (x - y).abs()).fold(T::zero(), T::max);
            d = next;
            if change <= tol {
                break;
            }
            if it + 1 == max_iters {
                return Err(OpeError::NoConvergence {
                    what: "discounted visitation iteration",
                    iterations: max_iters,
                    residual: change.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        d
    };

    let clamp = fl::<T>(1e-9).max(T::epsilon() * fl(1e4));
    for x in d.iter_mut() {
        if *x < T::zero() {
            if *x < -clamp {
                return Err(OpeError::NoConvergence {
                    what: "discounted visitation nonnegativity",
                    iterations: 0,
                    residual: x.to_f64().unwrap_or(f64::NAN),
                });
            }
            *x = T::zero();
        }
    }

    let mut d_pi = Array2::zeros((mdp.n_actions, n));
    for s in 0..n {
        for a in 0..mdp.n_actions {
            d_pi[[a, s]] = d[s] * pi.probs[[s, a]];
        }
    }
    Ok((d, d_pi))
}

/// Marginalized importance ratio
/// `w(a,s) = d_pi(a,s) / (p_inf(s) b(a|s))`, `[a][s]`.
///
/// Same support convention as [`is_ratio`].
pub fn mis_ratio<T: Scalar>(d_pi: &Array2<T>, p_inf: &Array1<T>, b: &PolicyTable<T>) -> Result<Array2<T>> {
    let (na, ns) = d_pi.dim();
    let mut w = Array2::zeros((na, ns));
    for s in 0..ns {
        for a in 0..na {
            let num = d_pi[[a, s]];
            let den = p_inf[s] * b.probs[[s, a]];
            if num == T::zero() {
                continue;
            }
            if den == T::zero() {
                return Err(OpeError::Support { state: s, action: a });
            }
            w[[a, s]] = num / den;
        }
    }
    Ok(w)
}

/// Time-reversed kernel of the stationary behavior process:
/// `B[s'][a][s] = p_inf(s) b(a|s) T(s'|a,s) / p_inf(s')`, the probability
/// of `(A_t = a, S_t = s)` given `S_{t+1} = s'`.
///
/// Every state must carry positive stationary mass; otherwise the
/// conditioning is undefined and the offending states are reported.
pub fn backward_kernel<T: Scalar>(mdp: &MdpModel<T>, b: &PolicyTable<T>) -> Result<(Array3<T>, Array1<T>)> {
    let chain = chain_under_policy(mdp, b);
    let p_inf = stationary_distribution(&chain)?;
    let zero_tol = fl::<T>(1e-12).max(T::epsilon() * fl(10.0));
    let dead: Vec<usize> = (0..mdp.n_states).filter(|&s| p_inf[s] <= zero_tol).collect();
    if !dead.is_empty() {
        return Err(OpeError::ZeroStationaryMass { states: dead, context: "the backward kernel" });
    }
    let n = mdp.n_states;
    let mut kernel = Array3::zeros((n, mdp.n_actions, n));
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let mass = p_inf[s] * b.probs[[s, a]];
            if mass == T::zero() {
                continue;
            }
            for sp in 0..n {
                kernel[[sp, a, s]] = mass * mdp.transition[[s, a, sp]] / p_inf[sp];
            }
        }
    }
    Ok((kernel, p_inf))
}

/// Upper bound `gamma^T max|R| / (1-gamma)` on the truncation error of the
/// cumulative-IS estimator at horizon `T`.
pub fn sis_truncation_bound<T: Scalar>(mdp: &MdpModel<T>, horizon: usize) -> T {
    let max_r = mdp.reward.iter().map(|r| r.abs()).fold(T::zero(), T::max);
    mdp.gamma.powi(horizon as i32) * max_r / (T::one() - mdp.gamma)
}

/// Exact expectation of the cumulative-IS functional
/// `f2 = sum_{t<=T} gamma^{t-1} (prod_{j<=t} ratio(A_j,S_j)) R_t`
/// over the behavior process started from `init`, for an arbitrary
/// per-pair ratio table `[a][s]`.
///
/// With `ratio = rho` this reduces to the truncated discounted value of
/// `pi` by a change of measure; abstract ratio tables plug in unchanged.
pub fn exact_f2<T: Scalar>(
    mdp: &MdpModel<T>,
    b: &PolicyTable<T>,
    ratio: &Array2<T>,
    horizon: usize,
    init: &Array1<T>,
) -> T {
    let n = mdp.n_states;
    let mut mu = init.clone();
    let mut total = T::zero();
    let mut discount = T::one();
    for _t in 1..=horizon {
        let mut step_reward = T::zero();
        let mut next: Array1<T> = Array1::zeros(n);
        for s in 0..n {
            let m = mu[s];
            if m == T::zero() {
                continue;
            }
            for a in 0..mdp.n_actions {
                let weight = m * b.probs[[s, a]] * ratio[[a, s]];
                if weight == T::zero() {
                    continue;
                }
                step_reward += weight * mdp.reward[[a, s]];
                for sp in 0..n {
                    next[sp] += weight * mdp.transition[[s, a, sp]];
                }
            }
        }
        total += discount * step_reward;
        discount *= mdp.gamma;
        mu = next;
    }
    total
}

/// Population value of the stationary-weighted functional
/// `f3 = (1-gamma)^{-1} w(A,S) R`: the exact expectation over
/// `(S,A) ~ p_inf x b` with mean rewards.
pub fn population_f3<T: Scalar>(
    mdp: &MdpModel<T>,
    b: &PolicyTable<T>,
    p_inf: &Array1<T>,
    w: &Array2<T>,
) -> T {
    let mut acc = T::zero();
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            acc += p_inf[s] * b.probs[[s, a]] * w[[a, s]] * mdp.reward[[a, s]];
        }
    }
    acc / (T::one() - mdp.gamma)
}

/// Population value of the doubly robust functional `f4` for arbitrary
/// plug-in tables `q` and `w` over ground states:
/// `E f1(q) + (1-gamma)^{-1} E_{p_inf x b}[ w (R + gamma E V_q(S') - q) ]`.
pub fn population_f4<T: Scalar>(
    mdp: &MdpModel<T>,
    pi: &PolicyTable<T>,
    b: &PolicyTable<T>,
    p_inf: &Array1<T>,
    q: &Array2<T>,
    w: &Array2<T>,
) -> T {
    let n = mdp.n_states;
    let v_q = v_from_q(q, pi);
    let mut f1 = T::zero();
    for s in 0..n {
        f1 += mdp.initial[s] * v_q[s];
    }
    let mut corr = T::zero();
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let mass = p_inf[s] * b.probs[[s, a]] * w[[a, s]];
            if mass == T::zero() {
                continue;
            }
            let mut future = T::zero();
            for sp in 0..n {
                future += mdp.transition[[s, a, sp]] * v_q[sp];
            }
            corr += mass * (mdp.reward[[a, s]] + mdp.gamma * future - q[[a, s]]);
        }
    }
    f1 + corr / (T::one() - mdp.gamma)
}

/// Bundle of every exact quantity needed by the abstraction machinery and
/// the estimator oracles.
#[derive(Debug, Clone)]
pub struct SolveCache<T: Scalar> {
    /// Q-function of the target policy, `[a][s]`.
    pub q: Array2<T>,
    /// State values under the target policy.
    pub v: Array1<T>,
    /// `J(pi)`.
    pub j_pi: T,
    /// Importance ratios, `[a][s]`.
    pub rho: Array2<T>,
    /// Stationary distribution of the behavior chain.
    pub p_inf: Array1<T>,
    /// Discounted state visitation under the target policy.
    pub d_state: Array1<T>,
    /// Discounted state-action visitation, `[a][s]`.
    pub d_pi: Array2<T>,
    /// Marginalized importance ratios, `[a][s]`.
    pub w: Array2<T>,
    /// Backward kernel, `[s'][a][s]`.
    pub backward: Array3<T>,
}

impl<T: Scalar> SolveCache<T> {
    pub fn compute(mdp: &MdpModel<T>, pi: &PolicyTable<T>, b: &PolicyTable<T>) -> Result<Self> {
        let q = q_function(mdp, pi)?;
        let v = v_from_q(&q, pi);
        let j_pi = mdp.initial.iter().zip(v.iter()).map(|(&r, &x)| r * x).sum();
        let rho = is_ratio(pi, b)?;
        let (backward, p_inf) = backward_kernel(mdp, b)?;
        let (d_state, d_pi) = discounted_visitation(mdp, pi)?;
        let w = mis_ratio(&d_pi, &p_inf, b)?;
        Ok(Self { q, v, j_pi, rho, p_inf, d_state, d_pi, w, backward })
    }
}
