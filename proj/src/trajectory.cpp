#include "stepconf/trajectory.hpp"

#include "stepconf/errors.hpp"

namespace stepconf {

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Calibration: return "calibration";
        case Split::ProbeTrain: return "probe-train";
        case Split::TestId: return "test-id";
        case Split::TestOod: return "test-ood";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "calibration") return Split::Calibration;
    if (s == "probe-train") return Split::ProbeTrain;
    if (s == "test-id") return Split::TestId;
    if (s == "test-ood") return Split::TestOod;
    throw ValidationError("unknown split: " + s);
}

Trajectory append_step(const Trajectory& traj, StepRecord step) {
    if (traj.finalized) throw AlreadyFinalized("cannot append to a finalized trajectory");
    const int expected = traj.steps.empty() ? 0 : traj.steps.back().t + 1;
    if (step.t != expected) {
        throw NonMonotonicTimestep("expected t=" + std::to_string(expected) + ", got t=" +
                                   std::to_string(step.t));
    }
    Trajectory out = traj;
    out.steps.push_back(std::move(step));
    return out;
}

Trajectory prefix(const Trajectory& traj, int t) {
    if (t < 0 || t > static_cast<int>(traj.steps.size())) {
        throw IndexOutOfRange("prefix length " + std::to_string(t) + " out of range [0, " +
                              std::to_string(traj.steps.size()) + "]");
    }
    Trajectory out;
    out.task = traj.task;
    out.steps.assign(traj.steps.begin(), traj.steps.begin() + t);
    out.finalized = false;
    return out;
}

Trajectory finalize(Trajectory traj, double final_reward) {
    if (traj.finalized) throw AlreadyFinalized("trajectory already finalized");
    if (traj.steps.empty()) throw UnfinalizedTrajectory("cannot finalize an empty trajectory");
    traj.final_reward = final_reward;
    traj.finalized = true;
    return traj;
}

EpisodeOutcome outcome_of(const Trajectory& traj, double success_threshold) {
    if (!traj.finalized || !traj.final_reward) {
        throw UnfinalizedTrajectory("outcome requires a finalized trajectory");
    }
    return {*traj.final_reward >= success_threshold, *traj.final_reward};
}

}  // namespace stepconf
