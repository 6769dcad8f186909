#pragma once

#include <cstdint>
#include <vector>

#include "stepconf/env.hpp"
#include "stepconf/policy.hpp"
#include "stepconf/trajectory.hpp"

namespace stepconf {

/// Monte Carlo budget for one step-reward estimate. max_rollout_steps < 0
/// means "whatever the horizon still allows".
struct RolloutBudget {
    int n_rollouts = 8;
    int max_rollout_steps = -1;
    std::uint64_t seed = 0;
};

struct RewardEstimate {
    int t = 0;
    double r_t = 0.0;
    int n_samples = 0;
    double std_err = 0.0;
    bool is_final_step = false;
};

/// Step-wise reward of the prefix's last step. Non-final prefixes are
/// replayed from reset (task seed parsed from the task id) and continued by
/// n_rollouts fresh policy rollouts to termination; r_t is their mean final
/// reward and std_err the sample standard deviation / sqrt(N). A finalized
/// prefix is its own final step: r_t equals final_reward exactly. The final
/// step is read as the index of the last executed step.
///
/// Rollout i draws its stream from (budget.seed, t, i), so estimates are
/// schedule-independent and reproducible.
RewardEstimate estimate_step_reward(const Trajectory& prefix, const PolicyProfile& policy,
                                    const EnvConfig& env, const RolloutBudget& budget);

/// One estimate per step index in [start_step, last]; deterministic given
/// budget.seed.
std::vector<RewardEstimate> estimate_trajectory_rewards(const Trajectory& traj,
                                                        const PolicyProfile& policy,
                                                        const EnvConfig& env,
                                                        const RolloutBudget& budget,
                                                        int start_step = 0);

}  // namespace stepconf
