#pragma once

#include <cstdint>
#include <string>

#include "stepconf/env.hpp"
#include "stepconf/rng.hpp"
#include "stepconf/trajectory.hpp"

namespace stepconf {

enum class PolicyKind { Expert, Noisy, Drifting };

std::string to_string(PolicyKind kind);
PolicyKind policy_kind_from_string(const std::string& s);

/// Scripted policy behaviors. Expert always plays the oracle action. Noisy
/// plays the oracle action with probability 1 - error_rate and otherwise a
/// plausible distractor that is never the oracle action. Drifting plays
/// expert until a per-stream onset, then issues hallucinated actions forever;
/// a prefix that already deviates from the expert replay keeps it drifting,
/// so Monte Carlo continuations of drifted prefixes never recover.
struct PolicyProfile {
    PolicyKind kind = PolicyKind::Expert;
    double error_rate = 0.0;  // noisy only
    int drift_onset_min = 2;  // drifting only, inclusive bounds
    int drift_onset_max = 6;
    std::uint64_t seed = 0;

    void validate(int horizon) const;
};

struct ActionSample {
    std::string thought;
    std::string action;
};

/// Samples (thought, action) for the next step. Pure function of
/// (profile, traj, state, stream root): per-step draws come from substreams
/// keyed by the step index, so results are schedule-independent.
ActionSample sample_action(const PolicyProfile& profile, const Trajectory& traj,
                           const EnvState& state, const Rng& episode_stream);

/// Drift onset for the given episode stream (drifting profiles only).
int drift_onset(const PolicyProfile& profile, const Rng& episode_stream);

/// True iff any recorded action differs from what the expert would have
/// played at that point. Used by drifting continuations.
bool prefix_deviates(const Trajectory& traj, std::shared_ptr<const World> world);

/// Hallucinated (always invalid) action for a drifted step.
ActionSample drift_action(Rng step_stream);

}  // namespace stepconf
