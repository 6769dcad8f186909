#include "stepconf/reward.hpp"

#include <cmath>

#include "stepconf/errors.hpp"
#include "stepconf/rng.hpp"

namespace stepconf {

namespace {

double truncated_reward(const EnvState& state, const EnvConfig& env) {
    // A rollout cut off before termination scores like the environment's own
    // horizon cutoff: dense keeps its sub-goal fraction, sparse gets nothing.
    if (env.kind == EnvKind::Dense) {
        return static_cast<double>(state.subgoals_done) /
               static_cast<double>(std::max(1, env.n_subgoals));
    }
    return 0.0;
}

EnvState replay_prefix(const Trajectory& prefix, const EnvConfig& env) {
    const auto task_seed = task_seed_from_id(prefix.task.id);
    if (!task_seed) {
        throw ReplayMismatch("task id '" + prefix.task.id + "' carries no task seed");
    }
    auto [state, task, obs0] = reset(env, *task_seed);
    (void)task;
    (void)obs0;
    for (const auto& step : prefix.steps) {
        if (step.t == 0) continue;  // instruction acknowledgment
        if (state.terminated) {
            throw ReplayMismatch("prefix continues past episode termination (task " +
                                 prefix.task.id + ", t=" + std::to_string(step.t) + ")");
        }
        state = env_step(state, step.action).state;
    }
    return state;
}

}  // namespace

RewardEstimate estimate_step_reward(const Trajectory& prefix, const PolicyProfile& policy,
                                    const EnvConfig& env, const RolloutBudget& budget) {
    if (budget.n_rollouts < 1) throw BudgetZero("n_rollouts must be >= 1");
    if (prefix.steps.empty()) throw ReplayMismatch("cannot estimate an empty prefix");
    const int t = prefix.steps.back().t;

    if (prefix.finalized && prefix.final_reward) {
        return {t, *prefix.final_reward, 1, 0.0, true};
    }

    EnvState start = replay_prefix(prefix, env);
    if (start.terminated) {
        // The prefix's last action ended the episode; this is the final step.
        return {t, final_reward(start, env), 1, 0.0, true};
    }

    const int cap = budget.max_rollout_steps < 0 ? env.horizon : budget.max_rollout_steps;
    const Rng step_root = Rng(budget.seed).derive("t").derive(static_cast<std::uint64_t>(t));

    double sum = 0.0;
    std::vector<double> rewards(static_cast<std::size_t>(budget.n_rollouts));
    for (int i = 0; i < budget.n_rollouts; ++i) {
        const Rng rollout_stream = step_root.derive("rollout").derive(static_cast<std::uint64_t>(i));
        EnvState state = start;
        Trajectory traj = prefix;
        int steps_taken = 0;
        while (!state.terminated && steps_taken < cap) {
            ActionSample sample = sample_action(policy, traj, state, rollout_stream);
            StepResult result = env_step(state, sample.action);
            state = std::move(result.state);
            StepRecord step;
            step.t = traj.steps.back().t + 1;
            step.thought = std::move(sample.thought);
            step.action = std::move(sample.action);
            step.observation = std::move(result.observation);
            traj = append_step(std::move(traj), std::move(step));
            ++steps_taken;
        }
        rewards[static_cast<std::size_t>(i)] =
            state.terminated ? final_reward(state, env) : truncated_reward(state, env);
        sum += rewards[static_cast<std::size_t>(i)];
    }

    const int n = budget.n_rollouts;
    const double mean = sum / n;
    double var = 0.0;
    if (n > 1) {
        for (double r : rewards) var += (r - mean) * (r - mean);
        var /= (n - 1);
    }
    return {t, mean, n, std::sqrt(var / n), false};
}

std::vector<RewardEstimate> estimate_trajectory_rewards(const Trajectory& traj,
                                                        const PolicyProfile& policy,
                                                        const EnvConfig& env,
                                                        const RolloutBudget& budget,
                                                        int start_step) {
    if (!traj.finalized || !traj.final_reward) {
        throw UnfinalizedTrajectory("estimate_trajectory_rewards requires a finalized trajectory");
    }
    if (start_step < 0) throw IndexOutOfRange("start_step must be >= 0");
    const int last = static_cast<int>(traj.steps.size()) - 1;

    std::vector<RewardEstimate> out;
    for (int t = start_step; t <= last; ++t) {
        if (t == last) {
            out.push_back({t, *traj.final_reward, 1, 0.0, true});
        } else {
            out.push_back(estimate_step_reward(prefix(traj, t + 1), policy, env, budget));
        }
    }
    return out;
}

}  // namespace stepconf
