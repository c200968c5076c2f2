//! Constructors for MDPs with known ground-truth abstraction structure:
//! random instances, noise lifts that are model- or backward-irrelevant by
//! construction, and the three-group toy example.
//!
//! Everything here is f64-concrete and deterministic in the seed.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::abstraction::Partition;
use crate::error::{OpeError, Result};
use crate::mdp::{chain_under_policy, validate_mdp, MdpModel, PolicyTable};
use crate::solver::stationary_distribution;

fn dirichlet_row(rng: &mut ChaCha8Rng, n: usize, concentration: f64) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    let mut row: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = row.iter().sum();
    if sum <= 0.0 {
        // astronomically unlikely underflow; keep the row a distribution
        return vec![1.0 / n as f64; n];
    }
    for v in &mut row {
        *v /= sum;
    }
    row
}

fn check_sizes(n_states: usize, n_actions: usize, concentration: f64) -> Result<()> {
    if n_states == 0 || n_actions == 0 {
        return Err(OpeError::InvalidArgument("sizes must be at least 1".into()));
    }
    if !(concentration > 0.0) {
        return Err(OpeError::InvalidArgument(format!(
            "concentration must be positive, got {concentration}"
        )));
    }
    Ok(())
}

/// Random MDP: Dirichlet transition rows and initial distribution, rewards
/// uniform in `[-reward_scale, reward_scale]`, no reward noise.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    seed: u64,
    transition_concentration: f64,
    reward_scale: f64,
    gamma: f64,
) -> Result<MdpModel<f64>> {
    check_sizes(n_states, n_actions, transition_concentration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Array3::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            let row = dirichlet_row(&mut rng, n_states, transition_concentration);
            for sp in 0..n_states {
                transition[[s, a, sp]] = row[sp];
            }
        }
    }
    let reward =
        Array2::from_shape_fn((n_actions, n_states), |_| (rng.random::<f64>() * 2.0 - 1.0) * reward_scale);
    let initial = Array1::from_vec(dirichlet_row(&mut rng, n_states, transition_concentration));
    let mdp = MdpModel {
        n_states,
        n_actions,
        gamma,
        transition,
        reward,
        reward_noise_std: 0.0,
        initial,
    };
    validate_mdp(&mdp).into_result()?;
    Ok(mdp)
}

/// Random policy with Dirichlet rows; strictly positive, so it has full
/// support as a behavior policy.
pub fn random_policy(
    n_states: usize,
    n_actions: usize,
    seed: u64,
    concentration: f64,
) -> Result<PolicyTable<f64>> {
    check_sizes(n_states, n_actions, concentration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        let row = dirichlet_row(&mut rng, n_actions, concentration);
        for a in 0..n_actions {
            probs[[s, a]] = row[a];
        }
    }
    Ok(PolicyTable::new(probs))
}

/// Copies each base policy row to the `n_noise` lifted copies of its state.
pub fn lift_policy(base: &PolicyTable<f64>, n_noise: usize) -> PolicyTable<f64> {
    let (nx, na) = (base.n_states(), base.n_actions());
    let probs = Array2::from_shape_fn((nx * n_noise, na), |(s, a)| base.probs[[s / n_noise, a]]);
    PolicyTable::new(probs)
}

/// Replaces the initial distribution with the stationary distribution of
/// the behavior chain, putting the model in the stationary regime.
pub fn with_stationary_initial(mdp: &MdpModel<f64>, b: &PolicyTable<f64>) -> Result<MdpModel<f64>> {
    let p_inf = stationary_distribution(&chain_under_policy(mdp, b))?;
    let mut out = mdp.clone();
    out.initial = p_inf;
    Ok(out)
}

/// Noise lift that is model-irrelevant and pi-irrelevant at the projection
/// partition by construction. Lifted state `(x, u)` is indexed `x * n_noise
/// + u`; the noise coordinate evolves by a random conditional table keyed
/// on the next base state, the current noise, and the action, so it carries
/// no information about rewards or base dynamics.
pub fn lift_model_irrelevant(
    base: &MdpModel<f64>,
    base_pi: &PolicyTable<f64>,
    n_noise: usize,
    seed: u64,
) -> Result<(MdpModel<f64>, PolicyTable<f64>, Partition)> {
    if n_noise == 0 {
        return Err(OpeError::InvalidArgument("n_noise must be at least 1".into()));
    }
    let (nx, na) = (base.n_states, base.n_actions);
    let n = nx * n_noise;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // g[(xp, u, a)] is a distribution over the next noise coordinate
    let mut g = vec![0.0f64; nx * n_noise * na * n_noise];
    for idx in 0..nx * n_noise * na {
        let row = dirichlet_row(&mut rng, n_noise, 1.0);
        g[idx * n_noise..(idx + 1) * n_noise].copy_from_slice(&row);
    }
    let g_at = |xp: usize, u: usize, a: usize, up: usize| g[((xp * n_noise + u) * na + a) * n_noise + up];

    let mut transition = Array3::zeros((n, na, n));
    for x in 0..nx {
        for u in 0..n_noise {
            for a in 0..na {
                for xp in 0..nx {
                    let p = base.transition[[x, a, xp]];
                    for up in 0..n_noise {
                        transition[[x * n_noise + u, a, xp * n_noise + up]] = p * g_at(xp, u, a, up);
                    }
                }
            }
        }
    }
    let reward = Array2::from_shape_fn((na, n), |(a, s)| base.reward[[a, s / n_noise]]);
    let mut initial = Array1::zeros(n);
    for x in 0..nx {
        let row = dirichlet_row(&mut rng, n_noise, 1.0);
        for u in 0..n_noise {
            initial[x * n_noise + u] = base.initial[x] * row[u];
        }
    }
    let mdp = MdpModel {
        n_states: n,
        n_actions: na,
        gamma: base.gamma,
        transition,
        reward,
        reward_noise_std: base.reward_noise_std,
        initial,
    };
    validate_mdp(&mdp).into_result()?;
    let part = Partition::from_block_of(&(0..n).map(|s| s / n_noise).collect::<Vec<_>>());
    Ok((mdp, lift_policy(base_pi, n_noise), part))
}

/// Noise lift that is backward-model-irrelevant at the projection
/// partition. The noise coordinate is an emission of the next base state
/// only, and the initial distribution uses the same emission, so both the
/// density-ratio and the aggregated backward kernel conditions hold exactly
/// (the emission factor cancels by Bayes' rule).
pub fn lift_backward_irrelevant(
    base: &MdpModel<f64>,
    pi: &PolicyTable<f64>,
    b: &PolicyTable<f64>,
    n_noise: usize,
    seed: u64,
) -> Result<(MdpModel<f64>, PolicyTable<f64>, PolicyTable<f64>, Partition)> {
    if n_noise == 0 {
        return Err(OpeError::InvalidArgument("n_noise must be at least 1".into()));
    }
    let (nx, na) = (base.n_states, base.n_actions);
    let n = nx * n_noise;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // emission h[xp] over the noise coordinate attached to xp
    let h: Vec<Vec<f64>> = (0..nx).map(|_| dirichlet_row(&mut rng, n_noise, 1.0)).collect();

    let mut transition = Array3::zeros((n, na, n));
    for x in 0..nx {
        for u in 0..n_noise {
            for a in 0..na {
                for xp in 0..nx {
                    let p = base.transition[[x, a, xp]];
                    for up in 0..n_noise {
                        transition[[x * n_noise + u, a, xp * n_noise + up]] = p * h[xp][up];
                    }
                }
            }
        }
    }
    let reward = Array2::from_shape_fn((na, n), |(a, s)| base.reward[[a, s / n_noise]]);
    let mut initial = Array1::zeros(n);
    for x in 0..nx {
        for u in 0..n_noise {
            initial[x * n_noise + u] = base.initial[x] * h[x][u];
        }
    }
    let mdp = MdpModel {
        n_states: n,
        n_actions: na,
        gamma: base.gamma,
        transition,
        reward,
        reward_noise_std: base.reward_noise_std,
        initial,
    };
    validate_mdp(&mdp).into_result()?;

    let lifted_b = lift_policy(b, n_noise);
    // backward quantities need positive stationary mass everywhere
    let p_inf = stationary_distribution(&chain_under_policy(&mdp, &lifted_b))?;
    let starved: Vec<usize> =
        (0..n).filter(|&s| p_inf[s] <= 1e-12).collect();
    if !starved.is_empty() {
        return Err(OpeError::ZeroStationaryMass {
            states: starved,
            context: "backward lift requires an ergodic behavior chain",
        });
    }
    let part = Partition::from_block_of(&(0..n).map(|s| s / n_noise).collect::<Vec<_>>());
    Ok((mdp, lift_policy(pi, n_noise), lifted_b, part))
}

/// Three-group toy example with its expected coarsest partitions.
#[derive(Debug, Clone)]
pub struct ToyExample {
    pub mdp: MdpModel<f64>,
    pub pi: PolicyTable<f64>,
    pub b: PolicyTable<f64>,
    /// Groups states by (first, second) coordinates.
    pub forward: Partition,
    /// Groups states by (second, third) coordinates.
    pub backward: Partition,
    /// Groups states by the second coordinate alone.
    pub two_step: Partition,
    pub sizes: (usize, usize, usize),
}

pub const TOY_ACTIONS: usize = 2;

/// State factored into three coordinates `(v1, v2, v3)`, indexed
/// `(v1 * g2 + v2) * g3 + v3`, with two actions:
///
/// * rewards depend on `(a, v1)` only;
/// * per step, `v2` evolves from `(v2, a)`, the new `v1` is an emission of
///   the new `v2`, and `v3` evolves from `v3` alone;
/// * the behavior policy depends on `(v2, v3)`; the target policy is
///   state-agnostic;
/// * the initial distribution draws `(v2, v3)` from a random distribution
///   and emits `v1` from the same kernel the dynamics use.
///
/// The coarsest forward partition is then the `(v1, v2)` grouping, the
/// coarsest backward partition the `(v2, v3)` grouping, and the two-step
/// composition keeps `v2` alone.
pub fn three_group_toy(sizes: (usize, usize, usize), seed: u64) -> Result<ToyExample> {
    let (g1, g2, g3) = sizes;
    if g1 < 2 || g2 < 2 || g3 < 2 {
        return Err(OpeError::InvalidArgument(format!(
            "every group needs at least 2 values, got {sizes:?}"
        )));
    }
    let n = g1 * g2 * g3;
    let na = TOY_ACTIONS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k2[v2][a] over v2', k1[v2'] over v1', k3[v3] over v3'
    let k2: Vec<Vec<Vec<f64>>> = (0..g2)
        .map(|_| (0..na).map(|_| dirichlet_row(&mut rng, g2, 1.0)).collect())
        .collect();
    let k1: Vec<Vec<f64>> = (0..g2).map(|_| dirichlet_row(&mut rng, g1, 1.0)).collect();
    let k3: Vec<Vec<f64>> = (0..g3).map(|_| dirichlet_row(&mut rng, g3, 1.0)).collect();
    let r1: Vec<Vec<f64>> = (0..na)
        .map(|_| (0..g1).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
        .collect();
    let beta: Vec<Vec<f64>> = (0..g2 * g3).map(|_| dirichlet_row(&mut rng, na, 1.0)).collect();
    let pi_row = dirichlet_row(&mut rng, na, 1.0);
    let init23 = dirichlet_row(&mut rng, g2 * g3, 1.0);

    let idx = |v1: usize, v2: usize, v3: usize| (v1 * g2 + v2) * g3 + v3;
    let mut transition = Array3::zeros((n, na, n));
    let mut reward = Array2::zeros((na, n));
    let mut initial = Array1::zeros(n);
    let mut b_probs = Array2::zeros((n, na));
    let mut pi_probs = Array2::zeros((n, na));
    for v1 in 0..g1 {
        for v2 in 0..g2 {
            for v3 in 0..g3 {
                let s = idx(v1, v2, v3);
                initial[s] = init23[v2 * g3 + v3] * k1[v2][v1];
                for a in 0..na {
                    reward[[a, s]] = r1[a][v1];
                    b_probs[[s, a]] = beta[v2 * g3 + v3][a];
                    pi_probs[[s, a]] = pi_row[a];
                    for v1p in 0..g1 {
                        for v2p in 0..g2 {
                            for v3p in 0..g3 {
                                transition[[s, a, idx(v1p, v2p, v3p)]] =
                                    k2[v2][a][v2p] * k1[v2p][v1p] * k3[v3][v3p];
                            }
                        }
                    }
                }
            }
        }
    }
    let mdp = MdpModel {
        n_states: n,
        n_actions: na,
        gamma: 0.9,
        transition,
        reward,
        reward_noise_std: 0.0,
        initial,
    };
    validate_mdp(&mdp).into_result()?;

    let mut fwd = vec![0usize; n];
    let mut bwd = vec![0usize; n];
    let mut two = vec![0usize; n];
    for v1 in 0..g1 {
        for v2 in 0..g2 {
            for v3 in 0..g3 {
                let s = idx(v1, v2, v3);
                fwd[s] = v1 * g2 + v2;
                bwd[s] = v2 * g3 + v3;
                two[s] = v2;
            }
        }
    }
    Ok(ToyExample {
        mdp,
        pi: PolicyTable::new(pi_probs),
        b: PolicyTable::new(b_probs),
        forward: Partition::from_block_of(&fwd),
        backward: Partition::from_block_of(&bwd),
        two_step: Partition::from_block_of(&two),
        sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{
        check_backward_model_irrelevance, check_model_irrelevance, check_pi_irrelevance,
        check_w_irrelevance, coarsest_backward, coarsest_forward, two_step,
    };
    use crate::solver::{q_function, SolveCache};

    #[test]
    fn random_mdp_is_seed_deterministic_and_valid() {
        let a = random_mdp(5, 3, 42, 1.0, 2.0, 0.9).unwrap();
        let b = random_mdp(5, 3, 42, 1.0, 2.0, 0.9).unwrap();
        assert_eq!(a.transition, b.transition);
        assert_eq!(a.reward, b.reward);
        assert_eq!(a.initial, b.initial);
        let c = random_mdp(5, 3, 43, 1.0, 2.0, 0.9).unwrap();
        assert_ne!(a.transition, c.transition);
        for seed in 0..100 {
            assert!(random_mdp(4, 2, seed, 0.7, 1.0, 0.85).is_ok());
        }
    }

    #[test]
    fn huge_concentration_gives_near_uniform_rows() {
        let m = random_mdp(4, 2, 7, 1e6, 1.0, 0.9).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                for sp in 0..4 {
                    assert!((m.transition[[s, a, sp]] - 0.25).abs() < 0.01);
                }
            }
        }
    }

    #[test]
    fn zero_sizes_are_rejected() {
        assert!(random_mdp(0, 2, 1, 1.0, 1.0, 0.9).is_err());
        assert!(random_policy(3, 0, 1, 1.0).is_err());
        assert!(three_group_toy((1, 2, 2), 1).is_err());
    }

    #[test]
    fn forward_lift_passes_checkers_exactly() {
        let base = random_mdp(4, 2, 11, 1.0, 1.0, 0.9).unwrap();
        let pi = random_policy(4, 2, 12, 1.0).unwrap();
        let (lifted, lifted_pi, part) = lift_model_irrelevant(&base, &pi, 3, 13).unwrap();
        assert_eq!(lifted.n_states, 12);
        assert_eq!(part.n_blocks(), 4);
        assert!(check_model_irrelevance(&part, &lifted, 1e-12).holds);
        assert!(check_pi_irrelevance(&part, &lifted_pi, 1e-12).holds);
    }

    #[test]
    fn forward_lift_preserves_q_values() {
        let base = random_mdp(3, 2, 21, 1.0, 1.0, 0.9).unwrap();
        let pi = random_policy(3, 2, 22, 1.0).unwrap();
        let (lifted, lifted_pi, _) = lift_model_irrelevant(&base, &pi, 4, 23).unwrap();
        let q_base = q_function(&base, &pi).unwrap();
        let q_lift = q_function(&lifted, &lifted_pi).unwrap();
        for a in 0..2 {
            for s in 0..12 {
                assert!(
                    (q_lift[[a, s]] - q_base[[a, s / 4]]).abs() < 1e-8,
                    "({a},{s}): {} vs {}",
                    q_lift[[a, s]],
                    q_base[[a, s / 4]]
                );
            }
        }
    }

    #[test]
    fn single_noise_lift_is_the_base_model() {
        let base = random_mdp(4, 2, 31, 1.0, 1.0, 0.9).unwrap();
        let pi = random_policy(4, 2, 32, 1.0).unwrap();
        let (lifted, _, part) = lift_model_irrelevant(&base, &pi, 1, 33).unwrap();
        assert!(part.is_identity());
        assert!(lifted
            .transition
            .iter()
            .zip(base.transition.iter())
            .all(|(a, b)| (a - b).abs() < 1e-15));
        let b = random_policy(4, 2, 34, 1.0).unwrap();
        let (lifted2, _, _, _) = lift_backward_irrelevant(&base, &pi, &b, 1, 35).unwrap();
        assert!(lifted2
            .transition
            .iter()
            .zip(base.transition.iter())
            .all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn backward_lift_passes_checkers() {
        let base = random_mdp(3, 2, 41, 1.0, 1.0, 0.9).unwrap();
        let pi = random_policy(3, 2, 42, 1.0).unwrap();
        let b = random_policy(3, 2, 43, 1.0).unwrap();
        let (lifted, lpi, lb, part) = lift_backward_irrelevant(&base, &pi, &b, 3, 44).unwrap();
        assert_eq!(part.n_blocks(), 3);
        let rep = check_backward_model_irrelevance(&part, &lifted, &lb, &lpi, 1e-9).unwrap();
        assert!(rep.holds, "worst {}", rep.worst);
        let cache = SolveCache::compute(&lifted, &lpi, &lb).unwrap();
        let wrep = check_w_irrelevance(&part, &cache.w, 1e-8);
        assert!(wrep.holds, "worst {}", wrep.worst);
    }

    #[test]
    fn toy_refines_to_the_announced_partitions() {
        let toy = three_group_toy((2, 2, 2), 17).unwrap();
        assert_eq!(toy.mdp.n_states, 8);
        let fwd = coarsest_forward(&toy.mdp, &toy.pi, 1e-9);
        assert_eq!(fwd, toy.forward, "forward should group (v1, v2)");
        assert_eq!(fwd.n_blocks(), 4);
        let bwd = coarsest_backward(&toy.mdp, &toy.pi, &toy.b, 1e-9).unwrap();
        assert_eq!(bwd, toy.backward, "backward should group (v2, v3)");
        assert_eq!(bwd.n_blocks(), 4);
        let ts = two_step(&toy.mdp, &toy.pi, &toy.b, 1e-9).unwrap();
        assert_eq!(ts.composed, toy.two_step, "two-step should keep v2 alone");
        assert_eq!(ts.composed.n_blocks(), 2);
    }

    #[test]
    fn toy_scales_to_larger_groups() {
        let toy = three_group_toy((3, 2, 3), 5).unwrap();
        assert_eq!(toy.mdp.n_states, 18);
        assert_eq!(toy.forward.n_blocks(), 6);
        assert_eq!(toy.backward.n_blocks(), 6);
        assert_eq!(toy.two_step.n_blocks(), 2);
        let fwd = coarsest_forward(&toy.mdp, &toy.pi, 1e-9);
        assert_eq!(fwd, toy.forward);
    }

    #[test]
    fn stationary_initial_swap() {
        let mdp = random_mdp(4, 2, 51, 1.0, 1.0, 0.9).unwrap();
        let b = random_policy(4, 2, 52, 1.0).unwrap();
        let swapped = with_stationary_initial(&mdp, &b).unwrap();
        let p_inf = stationary_distribution(&chain_under_policy(&mdp, &b)).unwrap();
        assert!(swapped.initial.iter().zip(p_inf.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(validate_mdp(&swapped).is_ok());
    }
}
