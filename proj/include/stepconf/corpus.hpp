#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stepconf/env.hpp"
#include "stepconf/policy.hpp"
#include "stepconf/representation.hpp"
#include "stepconf/trajectory.hpp"

namespace stepconf {

struct WeightedProfile {
    PolicyProfile profile;
    double weight = 1.0;
};

/// Deterministic split assignment with exact largest-remainder counts:
/// episode i gets the split owning index i in the cumulative count ranges.
struct SplitPlan {
    std::vector<std::pair<Split, double>> fractions;

    void validate() const;
    std::vector<int> counts(int n_episodes) const;
    std::vector<Split> assign(int n_episodes) const;
};

/// Runs n_episodes full episodes and returns finalized trajectories with
/// activations at every (layer, t >= 1), per-step oracle_success, and splits
/// assigned per plan. The whole corpus is a pure function of the arguments;
/// episode_base offsets the per-episode streams so disjoint corpora (e.g.
/// test sets) use unseen task seeds.
std::vector<Trajectory> generate_corpus(const EnvConfig& env,
                                        const std::vector<WeightedProfile>& profiles,
                                        const RepresentationConfig& rep, int n_episodes,
                                        const SplitPlan& plan, std::uint64_t master_seed,
                                        std::uint64_t episode_base = 0);

/// Profile used for episode `index` under the given mixture and seed; the
/// reward stage uses this to replay each trajectory with its behavior policy.
const PolicyProfile& episode_profile(const std::vector<WeightedProfile>& profiles,
                                     std::uint64_t master_seed, std::uint64_t episode_index);

/// Episode index encoded in a generated task id ("...-ep<k>-s<hex>").
std::optional<std::uint64_t> episode_index_from_id(const std::string& task_id);

}  // namespace stepconf
