#include "stepconf/policy.hpp"

#include <algorithm>
#include <vector>

#include "stepconf/errors.hpp"

namespace stepconf {

namespace {

const std::vector<std::string> kHallucinatedThings = {
    "hidden drawer", "secret hatch", "mysterious lever", "locked compartment",
    "invisible switch", "trapdoor", "false panel", "concealed shelf"};

// Plausible-looking actions that are never the oracle action: wandering,
// poking at scenery, re-reading the room.
std::vector<std::string> distractor_actions(const EnvState& state) {
    const World& w = *state.world;
    std::vector<std::string> out;
    for (const auto& room : w.rooms) {
        if (room != state.room) out.push_back("go to the " + room);
    }
    out.push_back("look around");
    for (std::size_t i = 0; i < w.objects.size() && i < 4; ++i) {
        out.push_back("examine the " + w.objects[i]);
        out.push_back("open the " + w.objects[i]);
    }
    return out;
}

}  // namespace

std::string to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::Expert: return "expert";
        case PolicyKind::Noisy: return "noisy";
        case PolicyKind::Drifting: return "drifting";
    }
    return "expert";
}

PolicyKind policy_kind_from_string(const std::string& s) {
    if (s == "expert") return PolicyKind::Expert;
    if (s == "noisy") return PolicyKind::Noisy;
    if (s == "drifting") return PolicyKind::Drifting;
    throw ValidationError("unknown policy kind: " + s);
}

void PolicyProfile::validate(int horizon) const {
    if (kind == PolicyKind::Noisy && (error_rate < 0.0 || error_rate > 1.0)) {
        throw ValidationError("noisy error_rate must be in [0,1]");
    }
    if (kind == PolicyKind::Drifting) {
        if (drift_onset_min < 1 || drift_onset_max < drift_onset_min) {
            throw ValidationError("drift onset bounds must satisfy 1 <= min <= max");
        }
        if (drift_onset_max > horizon) {
            throw ValidationError("drift onset must lie within the horizon");
        }
    }
}

int drift_onset(const PolicyProfile& profile, const Rng& episode_stream) {
    const int span = profile.drift_onset_max - profile.drift_onset_min + 1;
    Rng onset_stream = episode_stream.derive("onset").derive(profile.seed);
    return profile.drift_onset_min + static_cast<int>(onset_stream.below(span));
}

bool prefix_deviates(const Trajectory& traj, std::shared_ptr<const World> world) {
    EnvState sim = initial_state(std::move(world));
    for (const auto& step : traj.steps) {
        if (step.t == 0) continue;  // instruction acknowledgment, not an env action
        if (sim.terminated) return true;
        if (step.action != expert_action(sim)) return true;
        sim = env_step(sim, step.action).state;
    }
    return false;
}

ActionSample drift_action(Rng step_stream) {
    const std::string& thing =
        kHallucinatedThings[step_stream.below(kHallucinatedThings.size())];
    ActionSample out;
    out.thought = "The " + thing + " must hold what I need.";
    out.action = "open the " + thing;
    return out;
}

ActionSample sample_action(const PolicyProfile& profile, const Trajectory& traj,
                           const EnvState& state, const Rng& episode_stream) {
    const int t = static_cast<int>(traj.steps.size());  // index this action will get
    Rng step_stream = episode_stream.derive("t").derive(static_cast<std::uint64_t>(t));
    const std::string oracle = expert_action(state);

    switch (profile.kind) {
        case PolicyKind::Expert:
            return {"I should " + oracle + " next.", oracle};
        case PolicyKind::Noisy: {
            if (step_stream.uniform01() >= profile.error_rate) {
                return {"I should " + oracle + " next.", oracle};
            }
            std::vector<std::string> candidates = distractor_actions(state);
            candidates.erase(std::remove(candidates.begin(), candidates.end(), oracle),
                             candidates.end());
            if (candidates.empty()) return {"I should " + oracle + " next.", oracle};
            const std::string& pick = candidates[step_stream.below(candidates.size())];
            return {"Maybe I should " + pick + ".", pick};
        }
        case PolicyKind::Drifting: {
            const int onset = drift_onset(profile, episode_stream);
            if (t >= onset || prefix_deviates(traj, state.world)) {
                return drift_action(step_stream);
            }
            return {"I should " + oracle + " next.", oracle};
        }
    }
    return {"I should " + oracle + " next.", oracle};
}

}  // namespace stepconf
