//! State abstractions as set partitions: irrelevance checkers, coarsest
//! partitions by signature refinement, stationary-weighted quotient models,
//! and a brute-force enumeration oracle.

pub mod brute;
pub mod checks;
pub mod partition;
pub mod quotient;
pub mod refine;

pub use brute::{brute_force_coarsest, BruteCondition, BRUTE_FORCE_LIMIT};
pub use checks::{
    check_backward_model_irrelevance, check_backward_model_with, check_model_irrelevance,
    check_pi_irrelevance, check_q_irrelevance, check_reward_irrelevance, check_rho_irrelevance,
    check_transition_irrelevance, check_w_irrelevance, Condition, IrrelevanceReport, Witness,
};
pub use partition::{compose, Partition};
pub use quotient::{map_dataset, quotient_mdp, QuotientModel};
pub use refine::{
    coarsest_backward, coarsest_forward, iterate_two_step, quantize, refine_backward,
    refine_forward, two_step, RefinementAudit, RoundAudit, TwoStepResult,
};
