#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace stepconf {

enum class Split { Train, Calibration, ProbeTrain, TestId, TestOod };

std::string to_string(Split split);
Split split_from_string(const std::string& s);

/// Natural-language task assignment handed to the agent at reset.
struct TaskInstruction {
    std::string id;
    std::string text;
    std::string domain_tag;
    Split split = Split::Train;
};

struct ActivationVector {
    std::vector<double> values;

    int dim() const { return static_cast<int>(values.size()); }
};

/// Grid coordinate for probes and steering: which layer, which timestep.
struct ActivationKey {
    int layer = 0;
    int timestep = 0;

    auto operator<=>(const ActivationKey&) const = default;
};

/// One agent step: reasoning text, the executed action, the environment's
/// response, and the internal activations captured for this prefix.
/// Activations are keyed by layer; the timestep is the record's own t.
struct StepRecord {
    int t = 0;
    std::string thought;
    std::string action;
    std::string observation;
    std::map<int, ActivationVector> activations;
    std::optional<bool> oracle_success;  // ground truth, synthetic envs only
    std::optional<double> r_t;           // attached by the reward stage
};

/// Episode history. Index 0 is the instruction-acknowledgment step; indices
/// 1..horizon are environment actions, so a trajectory holds at most
/// horizon + 1 steps.
struct Trajectory {
    TaskInstruction task;
    std::vector<StepRecord> steps;
    std::optional<double> final_reward;  // present iff finalized
    bool finalized = false;
};

struct EpisodeOutcome {
    bool success = false;
    double final_reward = 0.0;
};

/// Returns a copy with the step appended. The step's t must continue the
/// sequence (0 for the first step).
Trajectory append_step(const Trajectory& traj, StepRecord step);

/// Steps with index < t, same task, finalization cleared. The original is
/// untouched.
Trajectory prefix(const Trajectory& traj, int t);

/// Marks the trajectory finalized with the given reward in [0,1].
Trajectory finalize(Trajectory traj, double final_reward);

EpisodeOutcome outcome_of(const Trajectory& traj, double success_threshold);

}  // namespace stepconf
